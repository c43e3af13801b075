"""Command-line experiment runner.

    fedot --config exp.json [--mode M] [--n N] [--c C] [--alpha A] [--seed S]
          [--backend sim|tcp] [--out PREFIX] [--repetitions R]
    fedot generate --n N [--N N] [--s S] [--cond-class C] [--c-hint C]
          [--seed S] [--epsilon E] --out FILE

Each run appends one JSON line to ``PREFIX.jsonl`` and one row to
``PREFIX.csv``. Exit codes: 0 every run converged, 2 some run did not
converge (diverged, timed out or hit its budget), 3 bad configuration,
4 fabric or backend failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import re
import sys
from importlib.resources import files
from pathlib import Path

import jsonschema

from . import kernels
from .core import gibbs_kernel, solve_centralized
from .errors import ConfigError, FabricError, ProblemError
from .fed import FedParams, RunReport, Topology, run
from .finrisk import RiskSpec, solve_worst_case
from .netsim import CostModel, DelaySchedule
from .stop import StopPolicy, Verdict
from .study import TOY_EPSILONS, epsilon_study
from .synth import DEFAULT_EPSILON, GenSpec, generate, read_instance, write_instance

logger = logging.getLogger("fedot")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_BACKEND = 0, 2, 3, 4

CSV_COLUMNS = (
    "mode", "n", "N", "s", "cond_class", "c", "w", "alpha", "threshold", "timeout", "verdict",
    "iterations", "total_s", "compute_s", "comm_s", "tau_max", "tau_mean", "tau_std",
    "err_a_final", "objective_final",
)
STUDY_COLUMNS = ("epsilon", "i_min", "objective", "iterations", "verdict", "err_a", "precision", "note")

MODE_TOPOLOGY = {
    "sync_a2a": Topology.ALL_TO_ALL_SYNC,
    "async_a2a": Topology.ALL_TO_ALL_ASYNC,
    "star": Topology.STAR_SYNC,
}
RUN_MODES = ("centralized", *MODE_TOPOLOGY)
SWEEP_AXES = ("n", "s", "cond_class", "c", "w", "alpha")


class ConfigDiagnostic(Exception):
    """Bad configuration, with the config line it points at."""

    def __init__(self, source, line, message):
        super().__init__(f"{source}:{line}: {message}")


def _schema():
    return json.loads(files("fedot").joinpath("data/config.schema.json").read_text())


def _line_of(text, keys):
    """Line (1-based) of the last of ``keys`` found in order in ``text``."""
    pos, line = 0, 1
    for key in keys:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m:
            pos = m.start()
            line = text.count("\n", 0, pos) + 1
    return line


def _guess_line(text, message):
    """Best-effort line for a semantic error: the first key the message names."""
    for word in re.findall(r"[A-Za-z_]+", message):
        if re.search(r'"%s"\s*:' % re.escape(word), text):
            return _line_of(text, [word])
    return 1


def load_config(path):
    """Parse and schema-check a config file; errors carry a line number."""
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigDiagnostic(path, 1, "config file is empty")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigDiagnostic(path, exc.lineno, f"invalid JSON: {exc.msg} (column {exc.colno})") from None
    check_config(cfg, text, path)
    return cfg, text


def check_config(cfg, text="", source="<config>"):
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        keys = list(exc.absolute_path)
        where = ".".join(str(p) for p in keys) or "(top level)"
        if exc.validator == "additionalProperties" and isinstance(exc.instance, dict):
            # point at the offending key rather than its parent object
            allowed = exc.schema.get("properties", {})
            keys += [k for k in exc.instance if k not in allowed][:1]
        raise ConfigDiagnostic(source, _line_of(text, keys), f"{where}: {exc.message}") from None


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _stop(cfg):
    return StopPolicy(**cfg.get("stop", {}))


def _delay(fed):
    d = dict(fed.get("delay", {"model": "zero"}))
    return DelaySchedule.from_dict(d)


def _gen_spec(inst, c, seed):
    return GenSpec(
        n=inst.get("n", 100),
        N=inst.get("N", 1),
        sparsity_s=inst.get("s", 0.0),
        cond_class=inst.get("cond_class", "well"),
        c_hint=inst.get("c_hint", c),
        seed=seed,
        epsilon=inst.get("epsilon", DEFAULT_EPSILON),
    )


def _centralized_report(problem, stop, backend):
    K = gibbs_kernel(problem.C, problem.epsilon)
    res = solve_centralized(problem, stop, kernel=K)
    if backend == "sim":
        # same virtual time model as the simulated fabric: two n x n x N products per iteration
        secs = res.iterations * 4.0 * problem.n * problem.n * problem.N / CostModel().flop_rate
        clock = "virtual"
    else:
        secs, clock = res.elapsed, "wall"
    return RunReport(
        topology="centralized", verdict=res.verdict, iterations=[res.iterations], err_a=res.err_a,
        err_b=res.err_b, err_a_signed=res.err_a_signed, objective=res.objective,
        history_iterations=list(range(1, res.iterations + 1)), err_history=res.err_history,
        objective_history=res.objective_history, compute_s=[secs], comm_s=[0.0], total_s=secs,
        clock=clock, config={"stop": stop.to_dict()}, backend="local", u=res.state.u, v=res.state.v,
    )


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _csv_row(mode, spec_info, params_info, stop, report: RunReport):
    tau = report.tau_overall
    return {
        "mode": mode,
        "n": spec_info["n"],
        "N": spec_info["N"],
        "s": spec_info["s"],
        "cond_class": spec_info["cond_class"],
        "c": params_info["c"],
        "w": params_info["w"],
        "alpha": params_info["alpha"],
        "threshold": stop.threshold,
        "timeout": stop.timeout,
        "verdict": Verdict(report.verdict).value,
        "iterations": max(report.iterations) if report.iterations else 0,
        "total_s": report.total_s,
        "compute_s": max(report.compute_s) if report.compute_s else 0.0,
        "comm_s": max(report.comm_s) if report.comm_s else 0.0,
        "tau_max": tau["max"],
        "tau_mean": tau["mean"],
        "tau_std": tau["std"],
        "err_a_final": report.err_a,
        "objective_final": report.objective,
    }


class Outputs:
    def __init__(self, prefix, columns=CSV_COLUMNS):
        prefix = str(prefix)
        for ext in (".jsonl", ".csv"):
            if prefix.endswith(ext):
                prefix = prefix[: -len(ext)]
        self.jsonl = Path(prefix + ".jsonl")
        self.csv = Path(prefix + ".csv")
        self.jsonl.parent.mkdir(parents=True, exist_ok=True)
        self._jf = open(self.jsonl, "w")
        self._cf = open(self.csv, "w", newline="")
        self._writer = csv.DictWriter(self._cf, fieldnames=list(columns), lineterminator="\n")
        self._writer.writeheader()

    def write(self, record, row=None):
        self._jf.write(json.dumps(_clean(record), sort_keys=True) + "\n")
        if row is not None:
            self._writer.writerow({k: ("" if v is None else v) for k, v in _clean(row).items()})

    def close(self):
        self._jf.close()
        self._cf.close()


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _one_run(mode, cfg, inst, fed, seed, rep, backend, out):
    stop = _stop(cfg)
    c = fed.get("c", 2)
    if "path" in inst:
        problem, header = read_instance(inst["path"])
        spec_info = {"n": problem.n, "N": problem.N, "s": header.get("s"),
                     "cond_class": header.get("cond_class"), "seed": header.get("seed")}
    else:
        spec = _gen_spec(inst, c if mode != "centralized" else 1, seed)
        problem = generate(spec)
        spec_info = {"n": spec.n, "N": spec.N, "s": spec.sparsity_s, "cond_class": spec.cond_class,
                     "seed": spec.seed, "c_hint": spec.c_hint, "epsilon": spec.epsilon}
    if mode == "centralized":
        report = _centralized_report(problem, stop, backend)
        params_info = {"c": 1, "w": 1, "alpha": 1.0}
    else:
        params = FedParams(
            topology=MODE_TOPOLOGY[mode], c=c, w=fed.get("w", 1), alpha=fed.get("alpha", 0.5),
            stop=stop, delay=_delay(fed), seed=seed, allow_undamped=fed.get("allow_undamped", False),
        )
        report = run(problem, params, backend, addresses=cfg.get("tcp_peers"),
                     tcp_timeout=cfg.get("tcp_timeout", 30.0))
        params_info = {"c": params.c, "w": params.w, "alpha": params.alpha}
    record = {"run": rep, "mode": mode, "instance": spec_info, "kernels": kernels.NAME, **report.to_dict()}
    out.write(record, _csv_row(mode, spec_info, params_info, stop, report))
    return report.verdict


def _run_modes(cfg, out):
    mode = cfg["mode"]
    base_seed = cfg.get("seed", 0)
    reps = cfg.get("repetitions", 1)
    backend = cfg.get("backend", "sim")
    inst = dict(cfg.get("instance", {}))
    fed = dict(cfg.get("fed", {}))
    verdicts = []
    if mode == "sweep":
        sweep = dict(cfg.get("sweep", {}))
        run_mode = sweep.pop("mode", "async_a2a")
        axes = [(k, sweep[k]) for k in SWEEP_AXES if k in sweep]
        grid = itertools.product(*[vals for _, vals in axes]) if axes else [()]
        for combo in grid:
            i2, f2 = dict(inst), dict(fed)
            for (key, _), val in zip(axes, combo):
                if key in ("n", "cond_class"):
                    i2[key] = val
                elif key == "s":
                    i2["s"] = val
                else:
                    f2[key] = val
            for rep in range(reps):
                verdicts.append(_one_run(run_mode, cfg, i2, f2, base_seed + rep, rep, backend, out))
        return verdicts
    for rep in range(reps):
        verdicts.append(_one_run(mode, cfg, inst, fed, base_seed + rep, rep, backend, out))
    return verdicts


def _run_finrisk(cfg, out):
    fr = cfg.get("finrisk", {})
    if "spec" in fr:
        spec = RiskSpec.from_json(json.dumps(fr["spec"]))
    elif "spec_path" in fr:
        spec = RiskSpec.load(fr["spec_path"])
    else:
        spec = RiskSpec.from_json(files("fedot").joinpath("data/finance_example.json").read_text())
    mode = fr.get("mode", "paper_example")
    solver = fr.get("solver", "centralized")
    fed_params = None
    if solver != "centralized" and mode != "paper_example":
        fed = cfg.get("fed", {})
        fed_params = FedParams(topology=MODE_TOPOLOGY[solver], c=fed.get("c", 1), seed=cfg.get("seed", 0))
    result = solve_worst_case(spec, fed_params, mode=mode, backend=cfg.get("backend", "sim"))
    from .finrisk import dual_check

    record = {"mode": "finrisk", "spec": spec.to_dict(), "solver": solver, **result.to_dict(),
              "dual_residual": dual_check(result, spec)}
    out.write(record)
    return list(result.inner_verdicts)


def _run_study(cfg, out):
    st = cfg.get("epsilon_study", {})
    rows = epsilon_study(st.get("epsilons", TOY_EPSILONS), precision=st.get("precision", "extended"),
                         digits=st.get("digits", 50))
    for row in rows:
        d = row.to_dict()
        out.write({"mode": "epsilon_study", **d}, d)
    return [Verdict(r.verdict) for r in rows]


def execute(cfg) -> int:
    """Run a validated config dict; returns the exit code."""
    mode = cfg["mode"]
    prefix = cfg.get("output", "fedot_run")
    out = Outputs(prefix, STUDY_COLUMNS if mode == "epsilon_study" else CSV_COLUMNS)
    try:
        if mode == "finrisk":
            verdicts = _run_finrisk(cfg, out)
        elif mode == "epsilon_study":
            verdicts = _run_study(cfg, out)
        else:
            verdicts = _run_modes(cfg, out)
    finally:
        out.close()
    verdicts = [Verdict(v) for v in verdicts]
    if any(v is Verdict.PEER_LOST for v in verdicts):
        return EXIT_BACKEND
    if all(v is Verdict.CONVERGED for v in verdicts):
        return EXIT_OK
    return EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _run_parser():
    p = argparse.ArgumentParser(prog="fedot", description="Federated Sinkhorn experiment runner.")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--mode", choices=[*RUN_MODES, "finrisk", "sweep", "epsilon_study"])
    p.add_argument("--n", type=int, help="instance dimension")
    p.add_argument("--c", type=int, help="client count")
    p.add_argument("--alpha", type=float, help="damping step size")
    p.add_argument("--seed", type=int, help="base seed; repetition i uses seed + i")
    p.add_argument("--backend", choices=["sim", "tcp"])
    p.add_argument("--out", help="output prefix for .jsonl and .csv")
    p.add_argument("--repetitions", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _gen_parser():
    p = argparse.ArgumentParser(prog="fedot generate", description="Write a synthetic instance container.")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--cond-class", default="well")
    p.add_argument("--c-hint", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--out", required=True)
    return p


def _apply_flags(cfg, args):
    cfg = json.loads(json.dumps(cfg))
    if args.mode:
        cfg["mode"] = args.mode
    if args.n is not None:
        cfg.setdefault("instance", {})["n"] = args.n
    if args.c is not None:
        cfg.setdefault("fed", {})["c"] = args.c
    if args.alpha is not None:
        cfg.setdefault("fed", {})["alpha"] = args.alpha
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.backend:
        cfg["backend"] = args.backend
    if args.out:
        cfg["output"] = args.out
    if args.repetitions is not None:
        cfg["repetitions"] = args.repetitions
    return cfg


def _generate(argv):
    args = _gen_parser().parse_args(argv)
    try:
        spec = GenSpec(args.n, args.N, args.s, args.cond_class, args.c_hint, args.seed, args.epsilon)
    except ConfigError as exc:
        print(f"fedot generate: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_instance(args.out, generate(spec), spec)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv[:1] == ["generate"]:
        return _generate(argv[1:])
    args = _run_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    text, source = "", "<flags>"
    try:
        if args.config:
            source = args.config
            cfg, text = load_config(args.config)
        else:
            cfg = {}
        cfg = _apply_flags(cfg, args)
        if "mode" not in cfg:
            raise ConfigDiagnostic(source, 1, "no mode given (config 'mode' or --mode)")
        check_config(cfg, text, source)
    except ConfigDiagnostic as exc:
        print(f"fedot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fedot: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return execute(cfg)
    except (ConfigError, ProblemError, ValueError) as exc:
        line = _guess_line(text, str(exc))
        print(f"fedot: config error: {source}:{line}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FabricError, OSError) as exc:
        print(f"fedot: backend failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
