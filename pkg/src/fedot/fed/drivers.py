"""Federated Sinkhorn drivers.

Each driver builds one generator program per participant and hands them to a
fabric (simulated or TCP). Clients hold a :class:`~fedot.partition.BlockView`;
the arithmetic inside a block is the same as in
:func:`fedot.core.solve_centralized`, so synchronous runs reproduce the
centralized iterates.

Stop checks need the global source-marginal error, which no client can see
alone. Every client therefore reports its block's share (L1 residual, signed
residual, column residual, objective terms) in a ``Kind.E`` envelope and the
arbiter's rule is applied to the sums.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from ..core import Problem, damped_combine, gibbs_kernel, objective_terms, scale
from ..errors import ConfigError, FabricError, PeerLost
from ..netsim import DelaySchedule, make_fabric
from ..netsim.envelope import Envelope, Kind
from ..netsim.ops import AllGather, Drain, Post, Recv, Scatter, Send
from ..partition import BlockView, block_slice, slice_problem
from ..stop import Verdict, evaluate_stop
from .params import FedParams, RunReport, Topology

VERDICTS = list(Verdict)
# stands in for "unknown" while some peer has not reported a block error yet
_UNKNOWN_ERR = sys.float_info.max
_VERDICTS = list(Verdict)


def _settle(stop, err_a, verdicts):
    """Run verdict after a consistent exchange, or ``None`` to keep iterating.

    ``verdicts`` holds each client's local verdict in rank order.
    """
    if err_a <= stop.threshold:
        return Verdict.CONVERGED
    if not np.isfinite(err_a):
        return Verdict.DIVERGED
    failed = [vd for vd in verdicts if vd is not Verdict.CONVERGED]
    if not failed:
        return None
    return verdicts[0] if verdicts[0] is not Verdict.CONVERGED else failed[0]


@dataclass(frozen=True)
class ServerView:
    """The star server: all of K, no marginals."""

    K: np.ndarray
    c: int
    epsilon: float

    @property
    def n(self):
        return self.K.shape[0]


def _block_terms(u_blk, q_blk, A, v_blk, r_blk, B):
    """One block's share of the stop statistics, flat ``[l1, signed, l1_b, terms]``."""
    la, sa = kernels.residual(u_blk, q_blk, A)
    lb, _ = kernels.residual(v_blk, r_blk, B)
    terms = objective_terms(u_blk, u_blk * q_blk, v_blk, v_blk * r_blk)
    return np.concatenate([la, sa, lb, np.atleast_1d(terms)])


def _combine(rows, N, eps):
    """Sum per-block statistics (rows in rank order) into global values."""
    tot = np.zeros(4 * N)
    for row in rows:
        tot = tot + row[: 4 * N]
    la, sa, lb, terms = tot[:N], tot[N : 2 * N], tot[2 * N : 3 * N], tot[3 * N :]
    j = int(np.argmax(la))
    return float(la[j]), float(sa[j]), float(lb.max()), eps * float(np.sum(terms))


def _lost(result, rank, exc, t):
    result.update(verdict=Verdict.PEER_LOST, iterations=t, diagnostic=f"rank {rank}: {exc}")
    return result


def _new_result():
    return {"hist_it": [], "errs": [], "objs": [], "diagnostic": None}


# ---------------------------------------------------------------------------
# synchronous all-to-all
# ---------------------------------------------------------------------------

def _sync_program(view: BlockView, params: FedParams, trace=None):
    stop, w = params.stop, params.w
    m, n = view.m, view.n
    N = view.b_j.shape[1]
    A = np.ascontiguousarray(np.broadcast_to(view.a_j[:, None], (m, N)))
    B = view.b_j
    sl = view.block
    eps = view.epsilon
    gemm_flops = 2.0 * m * n * N

    def program(ep):
        res = _new_result()
        u, v = view.u.copy(), view.v.copy()
        q = kernels.gemm_rows(view.K_rows, v)
        ep.work(gemm_flops)
        t, verdict = 0, None
        try:
            while verdict is None:
                t += 1
                comm = t % w == 0
                u_blk = scale(A, q)
                u[sl] = u_blk
                if comm:
                    u = yield AllGather(Kind.U, u_blk, t)
                r = kernels.gemm_cols(view.K_cols, u)
                v_blk = scale(B, r)
                v[sl] = v_blk
                if comm:
                    v = yield AllGather(Kind.V, v_blk, t)
                q = kernels.gemm_rows(view.K_rows, v)
                ep.work(2 * gemm_flops + 4.0 * m * N)
                if trace is not None:
                    trace(ep.rank, t, u, v)
                if not comm:
                    continue
                mine = np.append(_block_terms(u_blk, q, A, v_blk, r, B), ep.clock())
                rows = (yield AllGather(Kind.E, mine, t)).reshape(view.c, -1)
                err_a, signed, err_b, obj = _combine(rows, N, eps)
                # every client applies client 0's rule to the same numbers
                verdict = evaluate_stop(stop, err_a, t, float(rows[0, -1]))
                if ep.rank == 0:
                    res["hist_it"].append(t)
                    res["errs"].append(err_a)
                    res["objs"].append(obj)
            res.update(verdict=verdict, iterations=t, err_a=err_a, err_b=err_b, signed=signed,
                       objective=obj, u=u, v=v)
        except PeerLost as exc:
            _lost(res, ep.rank, exc, t)
        return res

    return program


def run_sync_all_to_all(views, fabric, params: FedParams, trace=None) -> RunReport:
    """Lockstep all-to-all: gathers of u and v every ``w`` iterations."""
    if params.topology is not Topology.ALL_TO_ALL_SYNC:
        raise ConfigError(f"run_sync_all_to_all got topology {params.topology.value}")
    _check_fabric(fabric, len(views))
    results = fabric.run([_sync_program(v, params, trace) for v in views])
    return _report(params, fabric, results, arbiter=0)


# ---------------------------------------------------------------------------
# asynchronous all-to-all
# ---------------------------------------------------------------------------

def _async_program(view: BlockView, params: FedParams, trace=None):
    stop, w, alpha = params.stop, params.w, params.alpha
    m, n, c = view.m, view.n, view.c
    N = view.b_j.shape[1]
    A = np.ascontiguousarray(np.broadcast_to(view.a_j[:, None], (m, N)))
    B = view.b_j
    sl = view.block
    eps = view.epsilon
    gemm_flops = 2.0 * m * n * N

    def absorb(target, envs):
        for env in envs:
            target[block_slice(env.sender, m)] = env.payload.reshape(m, N)

    def program(ep):
        res = _new_result()
        rank = ep.rank
        u, v = view.u.copy(), view.v.copy()
        u_blk, v_blk = u[sl].copy(), v[sl].copy()
        r = kernels.gemm_cols(view.K_cols, u)
        ep.work(gemm_flops)
        peer_stats = {}
        t, verdict, resumed = 0, None, 0
        try:
            while True:
                verdict = None
                while verdict is None:
                    t += 1
                    comm = t % w == 0
                    if comm:
                        yield Post(Envelope(rank, Kind.V, t, rank, v_blk))
                        absorb(v, (yield Drain((Kind.V,), t)))
                    q = kernels.gemm_rows(view.K_rows, v)
                    # block share of the plan (u, v) as this client currently sees it
                    mine = _block_terms(u_blk, q, A, v_blk, r, B)
                    if comm:
                        yield Post(Envelope(rank, Kind.E, t, rank, mine))
                        for env in (yield Drain((Kind.E,), t)):
                            peer_stats[env.sender] = env.payload
                    u_blk = damped_combine(scale(A, q), u_blk, alpha)
                    u[sl] = u_blk
                    if comm:
                        yield Post(Envelope(rank, Kind.U, t, rank, u_blk))
                        absorb(u, (yield Drain((Kind.U,), t)))
                    r = kernels.gemm_cols(view.K_cols, u)
                    v_blk = damped_combine(scale(B, r), v_blk, alpha)
                    v[sl] = v_blk
                    ep.work(2 * gemm_flops + 8.0 * m * N)
                    if trace is not None:
                        trace(rank, t, u, v)
                    rows = [peer_stats.get(j, mine) if j != rank else mine for j in range(c)]
                    err_a, _, _, obj = _combine(rows, N, eps)
                    if len(peer_stats) < c - 1:
                        err_a = _UNKNOWN_ERR
                    verdict = evaluate_stop(stop, err_a, t, ep.clock())
                    if rank == 0:
                        res["hist_it"].append(t)
                        res["errs"].append(err_a)
                        res["objs"].append(obj)
                # consistent exchange: every client ends with the same u, v and checks the true error
                u = yield AllGather(Kind.U, u_blk, t)
                v = yield AllGather(Kind.V, v_blk, t)
                q = kernels.gemm_rows(view.K_rows, v)
                r = kernels.gemm_cols(view.K_cols, u)
                ep.work(2 * gemm_flops)
                mine = np.append(_block_terms(u[sl], q, A, v[sl], r, B), _VERDICTS.index(verdict))
                rows = (yield AllGather(Kind.E, mine, t)).reshape(c, -1)
                err_a, signed, err_b, obj = _combine(rows, N, eps)
                final = _settle(stop, err_a, [_VERDICTS[int(x)] for x in rows[:, -1]])
                if final is not None:
                    verdict = final
                    break
                # the estimates passed but the reconciled plan did not: resume from it
                resumed += 1
                u_blk, v_blk = u[sl].copy(), v[sl].copy()
                peer_stats = {}
            res.update(verdict=verdict, iterations=t, err_a=err_a, err_b=err_b, signed=signed,
                       objective=obj, u=u, v=v)
            if resumed and rank == 0:
                res["diagnostic"] = f"stop estimate rejected {resumed} time(s) by the reconciled check"
        except PeerLost as exc:
            _lost(res, rank, exc, t)
        return res

    return program


def run_async_all_to_all(views, fabric, params: FedParams, trace=None) -> RunReport:
    """All-to-all without lockstep: posted slices, damped updates.

    A client leaves the loop on its own estimate of the global error (its
    fresh block share plus the latest share each peer posted) and then joins
    a consistent gather of u and v. Convergence is declared only if the
    gathered plan meets the threshold; otherwise all clients resume from it.
    A budget verdict (timeout, divergence, max iterations) ends the run,
    client 0's taking precedence. Reported errors are the gathered plan's.
    """
    if params.topology is not Topology.ALL_TO_ALL_ASYNC:
        raise ConfigError(f"run_async_all_to_all got topology {params.topology.value}")
    _check_fabric(fabric, len(views))
    results = fabric.run([_async_program(v, params, trace) for v in views])
    report = _report(params, fabric, results, arbiter=0)
    if report.verdict is Verdict.CONVERGED and not report.err_a <= params.stop.threshold:
        report.diagnostics.append(
            f"client 0 stopped on its estimate but the reconciled plan has err_a = {report.err_a:.3e}")
    return report


# ---------------------------------------------------------------------------
# synchronous star
# ---------------------------------------------------------------------------

def _star_client(view: BlockView, params: FedParams, trace=None):
    m = view.m
    N = view.b_j.shape[1]
    A = np.ascontiguousarray(np.broadcast_to(view.a_j[:, None], (m, N)))
    B = view.b_j
    server = view.c

    def program(ep):
        res = _new_result()
        u_blk, v_blk = np.ones((m, N)), np.ones((m, N))
        t = 0
        try:
            yield Send(server, Kind.V, v_blk, 0)
            q = (yield Recv(server, Kind.Q)).payload.reshape(m, N)
            while True:
                t += 1
                u_blk = scale(A, q)
                yield Send(server, Kind.U, u_blk, t)
                r = (yield Recv(server, Kind.R)).payload.reshape(m, N)
                v_blk = scale(B, r)
                yield Send(server, Kind.V, v_blk, t)
                q = (yield Recv(server, Kind.Q)).payload.reshape(m, N)
                ep.work(6.0 * m * N)
                if trace is not None:
                    trace(ep.rank, t, u_blk, v_blk)
                yield Send(server, Kind.E, _block_terms(u_blk, q, A, v_blk, r, B), t)
                code = int((yield Recv(server, Kind.E)).payload[0])
                if code >= 0:
                    res.update(verdict=VERDICTS[code], iterations=t)
                    break
        except PeerLost as exc:
            _lost(res, ep.rank, exc, t)
        return res

    return program


def _star_server(sv: ServerView, params: FedParams, N: int):
    c, n = sv.c, sv.n
    m = n // c
    clients = tuple(range(c))
    gemm_flops = 2.0 * n * n * N

    def gather(kind, out):
        for j in clients:
            env = yield Recv(j, kind)
            out[block_slice(j, m)] = env.payload.reshape(m, N)
        return out

    def program(ep):
        res = _new_result()
        u, v = np.ones((n, N)), np.ones((n, N))
        t, verdict = 0, None
        try:
            yield from gather(Kind.V, v)
            q = kernels.gemm_rows(sv.K, v)
            ep.work(gemm_flops)
            yield Scatter(Kind.Q, q, clients, 0)
            while verdict is None:
                t += 1
                yield from gather(Kind.U, u)
                r = kernels.gemm_cols(sv.K, u)
                ep.work(gemm_flops)
                yield Scatter(Kind.R, r, clients, t)
                yield from gather(Kind.V, v)
                q = kernels.gemm_rows(sv.K, v)
                ep.work(gemm_flops)
                yield Scatter(Kind.Q, q, clients, t)
                rows = []
                for j in clients:
                    rows.append((yield Recv(j, Kind.E)).payload)
                err_a, signed, err_b, obj = _combine(rows, N, sv.epsilon)
                verdict = evaluate_stop(params.stop, err_a, t, ep.clock())
                res["hist_it"].append(t)
                res["errs"].append(err_a)
                res["objs"].append(obj)
                code = -1 if verdict is None else VERDICTS.index(verdict)
                for j in clients:
                    yield Send(j, Kind.E, [float(code)], t)
            res.update(verdict=verdict, iterations=t, err_a=err_a, err_b=err_b, signed=signed,
                       objective=obj, u=u, v=v)
        except PeerLost as exc:
            _lost(res, ep.rank, exc, t)
        return res

    return program


def run_sync_star(server_view: ServerView, client_views, fabric, params: FedParams, trace=None) -> RunReport:
    """Star network: the server (rank ``c``) holds K and does both products."""
    if params.topology is not Topology.STAR_SYNC:
        raise ConfigError(f"run_sync_star got topology {params.topology.value}")
    c = len(client_views)
    if server_view.c != c:
        raise ConfigError(f"server expects {server_view.c} clients, got {c}")
    _check_fabric(fabric, c + 1)
    N = client_views[0].b_j.shape[1]
    programs = [_star_client(v, params, trace) for v in client_views]
    programs.append(_star_server(server_view, params, N))
    results = fabric.run(programs)
    return _report(params, fabric, results, arbiter=c)


def run_local_iterations(views, fabric, params: FedParams, trace=None) -> RunReport:
    """All-to-all with ``params.w`` local iterations per communication round."""
    if params.topology is Topology.ALL_TO_ALL_SYNC:
        return run_sync_all_to_all(views, fabric, params, trace)
    if params.topology is Topology.ALL_TO_ALL_ASYNC:
        return run_async_all_to_all(views, fabric, params, trace)
    raise ConfigError("local iterations are defined for the all-to-all topologies only")


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _check_fabric(fabric, size):
    if fabric.size != size:
        raise ConfigError(f"fabric has {fabric.size} participants, the topology needs {size}")


def _report(params: FedParams, fabric, results, arbiter: int) -> RunReport:
    diags = []
    failure_verdict = None
    for rank, exc in sorted(fabric.failures.items()):
        diags.append(f"rank {rank} failed: {type(exc).__name__}: {exc}")
        if isinstance(exc, ArithmeticError):
            failure_verdict = Verdict.DIVERGED
        elif isinstance(exc, FabricError):
            failure_verdict = failure_verdict or Verdict.PEER_LOST
        else:
            raise exc
    for rank, res in enumerate(results):
        if res and res.get("diagnostic"):
            diags.append(res["diagnostic"])
    main = results[arbiter] or {}
    verdict = failure_verdict or main.get("verdict") or Verdict.PEER_LOST
    stats = fabric.stats
    nan = float("nan")
    return RunReport(
        topology=params.topology.value,
        verdict=Verdict(verdict),
        iterations=[(res or {}).get("iterations", 0) for res in results],
        err_a=main.get("err_a", nan),
        err_b=main.get("err_b", nan),
        err_a_signed=main.get("signed", nan),
        objective=main.get("objective", nan),
        history_iterations=main.get("hist_it", []),
        err_history=main.get("errs", []),
        objective_history=main.get("objs", []),
        compute_s=[p.compute_s for p in stats.participants],
        comm_s=[p.comm_s for p in stats.participants],
        total_s=fabric.elapsed,
        clock=fabric.clock_kind,
        tau=stats.tau_table(),
        tau_samples=stats.all_tau(),
        delivered=stats.delivered,
        config=params.to_dict(),
        seed=params.seed,
        backend=fabric.name,
        diagnostics=diags,
        u=main.get("u"),
        v=main.get("v"),
    )


def run(problem: Problem, params: FedParams, backend: str = "sim", *, kernel=None, fabric=None,
        addresses=None, tcp_timeout: float = 30.0, trace=None) -> RunReport:
    """Slice ``problem`` for ``params.c`` clients and run the chosen topology."""
    K = kernel or gibbs_kernel(problem.C, problem.epsilon)
    views = slice_problem(problem, params.c, K)
    # the run seed drives the delay draws
    params = replace(params, delay=params.delay.with_seed(params.seed))
    delay = params.delay
    if params.topology is Topology.STAR_SYNC:
        fabric = fabric or make_fabric(backend, params.c + 1, delay=delay, addresses=addresses, timeout=tcp_timeout)
        return run_sync_star(ServerView(K.K, params.c, problem.epsilon), views, fabric, params, trace)
    fabric = fabric or make_fabric(backend, params.c, delay=delay, addresses=addresses, timeout=tcp_timeout)
    if params.topology is Topology.ALL_TO_ALL_SYNC:
        return run_sync_all_to_all(views, fabric, params, trace)
    return run_async_all_to_all(views, fabric, params, trace)
