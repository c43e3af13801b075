"""Worst-case expected portfolio loss over a Wasserstein ball, via Sinkhorn.

Pipeline: shift and normalize the return vectors, build the combined cost
``C = lam * c - l / n``, solve the entropic transport problem, and adjust
``lam`` until the plan's ground transport cost ``<P, c>`` equals the budget
``delta``. Costs are shifted to a zero minimum before solving; Sinkhorn plans
do not change under constant offsets.

Two cost conventions exist:

* ``general``: ``C_ij = lam (x~_i - x~'_j)^2 - w_j x~'_j / n``, source
  marginal uniform, target marginal ``x~'``.
* ``paper_example``: the symmetrized quadratic cost plus the constant
  ``w . x~ / n``, source ``x~``, target ``x~'``, Gibbs temperature
  ``lam * epsilon``, stopped when the objective stops moving. This reproduces
  the published 3-asset numbers.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Problem, gibbs_kernel, half_step_u, half_step_v, objective_terms, solve_centralized
from .errors import BracketNotFound, ConfigError, DegenerateSum
from .stop import StopPolicy, Verdict

LAMBDA_MAX = 1e3
OUTER_CAP = 100
REL_TOL = 1e-6
STAGNATION_RTOL = 1e-12
SPEC_FIELDS = ("x", "x_prime", "w", "lambda0", "delta", "epsilon", "shift_eps")


@dataclass(frozen=True)
class RiskSpec:
    x: tuple
    x_prime: tuple
    w: tuple
    lambda0: float = 0.1
    delta: float = 0.01
    epsilon: float = 0.01
    shift_eps: float = 0.01

    def __post_init__(self):
        for name in ("x", "x_prime", "w"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name} has non-finite entries")
            object.__setattr__(self, name, tuple(float(v) for v in arr))
        n = len(self.x)
        if n == 0 or len(self.x_prime) != n or len(self.w) != n:
            raise ConfigError(f"x, x_prime and w must share one nonzero length, got "
                              f"{len(self.x)}, {len(self.x_prime)}, {len(self.w)}")
        if abs(math.fsum(self.w) - 1.0) > 1e-12:
            raise ConfigError(f"portfolio weights must sum to 1, got {math.fsum(self.w)!r}")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.lambda0 >= 0:
            raise ConfigError("lambda0 must be nonnegative")
        if not self.shift_eps > 0:
            raise ConfigError("shift_eps must be positive")

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def from_json(cls, text: str) -> "RiskSpec":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ConfigError("a risk spec must be a JSON object")
        unknown = set(doc) - set(SPEC_FIELDS)
        if unknown:
            raise ConfigError(f"unknown risk spec fields {sorted(unknown)}")
        missing = {"x", "x_prime", "w"} - set(doc)
        if missing:
            raise ConfigError(f"risk spec lacks {sorted(missing)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RiskSpec":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        d = asdict(self)
        for k in ("x", "x_prime", "w"):
            d[k] = list(d[k])
        return d


@dataclass
class RiskResult:
    lambda_star: float
    P_star: np.ndarray
    rho_worst: float
    rho_raw: float
    transport_cost: float
    dual_value: float
    iterations_outer: int
    k: float
    x_tilde: np.ndarray
    x_tilde_prime: np.ndarray
    C: np.ndarray
    mode: str
    inner_iterations: list = field(default_factory=list)
    inner_verdicts: list = field(default_factory=list)
    err_a: float = float("nan")
    diagnostics: list = field(default_factory=list)

    def to_dict(self, include_plan: bool = True):
        out = {
            "mode": self.mode,
            "lambda_star": self.lambda_star,
            "rho_worst": self.rho_worst,
            "rho_raw": self.rho_raw,
            "transport_cost": self.transport_cost,
            "dual_value": self.dual_value,
            "iterations_outer": self.iterations_outer,
            "k": self.k,
            "x_tilde": self.x_tilde.tolist(),
            "x_tilde_prime": self.x_tilde_prime.tolist(),
            "C": self.C.tolist(),
            "err_a": self.err_a,
            "inner_iterations": list(self.inner_iterations),
            "inner_verdicts": [Verdict(v).value for v in self.inner_verdicts],
            "diagnostics": list(self.diagnostics),
        }
        if include_plan:
            out["P_star"] = self.P_star.tolist()
        return out


def shift_normalize(x, x_prime, shift_eps: float = 0.01):
    """Shift both vectors by ``k = max(|min x|, |min x'|) + shift_eps``, then normalize.

    Returns ``(x_tilde, x_tilde_prime, k)``.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(x_prime, dtype=np.float64)
    if not (np.isfinite(x).all() and np.isfinite(xp).all()):
        raise ConfigError("return vectors must be finite")
    k = max(abs(x.min()), abs(xp.min())) + shift_eps
    out = []
    for name, vec in (("x", x + k), ("x_prime", xp + k)):
        total = vec.sum()
        if not total > 0:
            raise DegenerateSum(f"shifted {name} sums to {total!r}")
        out.append(vec / total)
    return out[0], out[1], float(k)


def ground_cost(x_tilde, x_tilde_prime) -> np.ndarray:
    """Squared distance ``c_ij = (x~_i - x~'_j)^2``."""
    xt = np.asarray(x_tilde, dtype=np.float64)
    xpt = np.asarray(x_tilde_prime, dtype=np.float64)
    return (xt[:, None] - xpt[None, :]) ** 2


def loss_vector(w, x_tilde_prime) -> np.ndarray:
    """Per-outcome loss ``l_j = w_j x~'_j``."""
    return np.asarray(w, dtype=np.float64) * np.asarray(x_tilde_prime, dtype=np.float64)


def combined_cost(lam: float, x_tilde, x_tilde_prime, w, convention: str = "general") -> np.ndarray:
    """Combined cost matrix; see the module docstring for the two conventions."""
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    c = ground_cost(x_tilde, x_tilde_prime)
    n = c.shape[0]
    if convention == "general":
        return lam * c - loss_vector(w, x_tilde_prime)[None, :] / n
    if convention == "paper_example":
        sym = 0.5 * (c + c.T)
        return lam * sym + float(np.dot(w, x_tilde)) / n
    raise ConfigError(f"unknown cost convention {convention!r}")


def _shifted(C):
    return C - C.min()


def _solve_inner(C, a, b, epsilon, stop, fed_params, backend):
    """Plan for cost ``C``; returns ``(P, iterations, verdict, err_a)``."""
    problem = Problem(_shifted(C), a, b, epsilon)
    K = gibbs_kernel(problem.C, epsilon)
    if fed_params is None:
        res = solve_centralized(problem, stop, kernel=K, record=False)
        return res.plan(K), res.iterations, res.verdict, res.err_a
    from .fed import run

    params = _with_stop(fed_params, stop)
    rep = run(problem, params, backend, kernel=K)
    return rep.plan(K), max(rep.iterations), rep.verdict, rep.err_a


def _with_stop(params, stop):
    from dataclasses import replace

    return replace(params, stop=stop)


def default_inner_stop() -> StopPolicy:
    return StopPolicy(threshold=1e-13, max_iterations=200_000, divergence_iterations=None)


def dual_value(lam, delta, P, c, loss) -> float:
    """``lam delta + sum P l - lam <P, c>``."""
    return lam * delta + float((P * loss[None, :]).sum()) - lam * float((P * c).sum())


def dual_check(result: RiskResult, spec: RiskSpec) -> float:
    """``|rho_primal - dual|`` with ``rho_primal = sum P l``.

    Algebraically this equals ``lam* |<P*, c> - delta|``.
    """
    c = ground_cost(result.x_tilde, result.x_tilde_prime)
    loss = loss_vector(spec.w, result.x_tilde_prime)
    P = result.P_star
    primal = float((P * loss[None, :]).sum())
    return abs(primal - dual_value(result.lambda_star, spec.delta, P, c, loss))


def solve_worst_case(spec: RiskSpec, fed_params=None, *, mode: str = "bisection", backend: str = "sim",
                     inner_stop: StopPolicy | None = None, lambda_max: float = LAMBDA_MAX,
                     rel_tol: float = REL_TOL, max_outer: int = OUTER_CAP) -> RiskResult:
    """Worst-case expected loss for ``spec``.

    Args:
        fed_params: a :class:`~fedot.fed.FedParams` to solve each inner
            problem federated; ``None`` solves centrally.
        mode: ``bisection`` searches ``lam`` on ``[0, lambda_max]`` so that
            ``|<P, c> - delta| <= rel_tol * delta``; ``fixed`` solves once at
            ``spec.lambda0``; ``paper_example`` reproduces the published
            3-asset computation (see :func:`solve_paper_example`).
    """
    if mode == "paper_example":
        return solve_paper_example(spec)
    if mode not in ("bisection", "fixed"):
        raise ConfigError(f"unknown finrisk mode {mode!r}")
    stop = inner_stop or default_inner_stop()
    xt, xpt, k = shift_normalize(spec.x, spec.x_prime, spec.shift_eps)
    n = spec.n
    a = np.full(n, 1.0 / n)
    b = xpt * (a.sum() / xpt.sum())
    c = ground_cost(xt, xpt)
    loss = loss_vector(spec.w, xpt)
    tol = rel_tol * spec.delta
    its, verdicts = [], []
    cache = {}

    def T(lam):
        if lam not in cache:
            C = combined_cost(lam, xt, xpt, spec.w)
            P, it, verdict, err = _solve_inner(C, a, b, spec.epsilon, stop, fed_params, backend)
            its.append(it)
            verdicts.append(verdict)
            cache[lam] = (float((P * c).sum()), P, C, err)
        return cache[lam][0]

    def result(lam, outer, diags=()):
        Tl, P, C, err = cache[lam]
        raw = float((P * loss[None, :]).sum())
        return RiskResult(
            lambda_star=lam, P_star=P, rho_worst=-raw, rho_raw=raw, transport_cost=Tl,
            dual_value=dual_value(lam, spec.delta, P, c, loss), iterations_outer=outer,
            k=k, x_tilde=xt, x_tilde_prime=xpt, C=C, mode=mode, inner_iterations=its,
            inner_verdicts=verdicts, err_a=err, diagnostics=list(diags),
        )

    lam0 = float(spec.lambda0)
    T0 = T(lam0)
    if mode == "fixed" or abs(T0 - spec.delta) <= tol:
        return result(lam0, 1)

    # bracket: T decreases in lam
    if T0 > spec.delta:
        lo, hi = lam0, max(2.0 * lam0, 1e-3)
        while T(hi) > spec.delta:
            if hi >= lambda_max:
                raise BracketNotFound(
                    f"<P, c> = {T(hi):.6g} still exceeds delta = {spec.delta} at lambda_max = {lambda_max}")
            lo, hi = hi, min(2.0 * hi, lambda_max)
    else:
        lo, hi = lam0 / 2.0, lam0
        while T(lo) < spec.delta:
            if lo == 0.0:
                raise BracketNotFound(
                    f"<P, c> = {T(0.0):.6g} is below delta = {spec.delta} even at lambda = 0")
            hi = lo
            lo = lo / 2.0 if lo > 1e-6 else 0.0
    for lam in (lo, hi):
        if abs(T(lam) - spec.delta) <= tol:
            return result(lam, len(cache))

    while len(cache) < max_outer:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        Tm = T(mid)
        if abs(Tm - spec.delta) <= tol:
            return result(mid, len(cache))
        if Tm > spec.delta:
            lo = mid
        else:
            hi = mid
    best = min(cache, key=lambda lam: abs(cache[lam][0] - spec.delta))
    return result(best, len(cache), [
        f"bisection stopped after {len(cache)} outer iterations with |<P, c> - delta| = "
        f"{abs(cache[best][0] - spec.delta):.3e} > {tol:.3e}"])


def solve_paper_example(spec: RiskSpec, max_iterations: int = 10_000,
                        rtol: float = STAGNATION_RTOL) -> RiskResult:
    """The published 3-asset computation at ``lam = spec.lambda0``.

    Source marginal ``x~``, target ``x~'``, symmetrized cost plus the
    constant loss term, Gibbs temperature ``lambda0 * epsilon``. Iterates
    until the objective changes by at most ``rtol`` relative between two
    iterations. With the published inputs the L1 marginal error is still
    large at that point: the plan sits on a long plateau of the iteration,
    which is what the published numbers show.
    """
    xt, xpt, k = shift_normalize(spec.x, spec.x_prime, spec.shift_eps)
    lam = float(spec.lambda0)
    C = combined_cost(lam, xt, xpt, spec.w, "paper_example")
    temp = lam * spec.epsilon
    K = gibbs_kernel(_shifted(C), temp).K
    v = np.ones(xt.size)
    prev = None
    verdict = Verdict.MAX_ITERATIONS
    for it in range(1, max_iterations + 1):
        q, u = half_step_u(K, v, xt)
        r, v = half_step_v(K, u, xpt)
        q = K @ v
        obj = float(objective_terms(u[:, None], (u * q)[:, None], v[:, None], (v * r)[:, None])[0])
        if prev is not None and abs(obj - prev) <= rtol * abs(obj):
            verdict = Verdict.CONVERGED
            break
        prev = obj
    P = u[:, None] * K * v[None, :]
    c = ground_cost(xt, xpt)
    scalar_loss = float(np.dot(spec.w, xt))
    loss = np.full(xt.size, scalar_loss)
    raw = scalar_loss * float(P.sum())
    return RiskResult(
        lambda_star=lam, P_star=P, rho_worst=-raw, rho_raw=raw, transport_cost=float((P * c).sum()),
        dual_value=dual_value(lam, spec.delta, P, c, loss), iterations_outer=1, k=k,
        x_tilde=xt, x_tilde_prime=xpt, C=C, mode="paper_example", inner_iterations=[it],
        inner_verdicts=[verdict], err_a=float(np.abs(P.sum(axis=1) - xt).sum()),
        diagnostics=[f"stopped on objective stagnation (rtol {rtol:g}) at iteration {it}"],
    )
