"""Centralized entropic optimal transport by Sinkhorn-Knopp scaling.

All arrays are float64. Scalings are stored as ``n x N`` matrices so that N
target histograms are solved together; 1-D inputs are accepted by the
half-step helpers and come back 1-D.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonFiniteCost, NonPositiveEpsilon, ProblemError, UnderflowDivide
from .stop import StopPolicy, Verdict, evaluate_stop

FLOOR = 1e-300
MASS_RTOL = 1e-12


@dataclass(frozen=True)
class Problem:
    """An entropic OT instance: cost ``C``, source ``a``, targets ``B`` (n x N)."""

    C: np.ndarray
    a: np.ndarray
    B: np.ndarray
    epsilon: float

    def __post_init__(self):
        C = np.ascontiguousarray(self.C, dtype=np.float64)
        a = np.ascontiguousarray(self.a, dtype=np.float64).reshape(-1)
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim == 1:
            B = B[:, None]
        B = np.ascontiguousarray(B)
        n = a.shape[0]
        if C.shape != (n, n):
            raise ProblemError(f"cost matrix must be {n}x{n}, got {C.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise ProblemError(f"targets must be {n}xN, got {B.shape}")
        _check_cost(C)
        if not self.epsilon > 0:
            raise NonPositiveEpsilon(f"epsilon must be positive, got {self.epsilon}")
        if (a < 0).any() or (B < 0).any() or not (np.isfinite(a).all() and np.isfinite(B).all()):
            raise ProblemError("marginals must be finite and nonnegative")
        mass = a.sum()
        if not mass > 0:
            raise ProblemError("source marginal has no mass")
        col = B.sum(axis=0)
        bad = np.abs(col - mass) > MASS_RTOL * mass
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise ProblemError(f"target column {j} has mass {col[j]!r}, source has {mass!r}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def N(self) -> int:
        return self.B.shape[1]

    def source_matrix(self) -> np.ndarray:
        """``a`` repeated across the N target columns."""
        return np.ascontiguousarray(np.repeat(self.a[:, None], self.N, axis=1))

    def column(self, j: int) -> "Problem":
        return Problem(self.C, self.a, self.B[:, j : j + 1], self.epsilon)


@dataclass(frozen=True)
class GibbsKernel:
    K: np.ndarray
    epsilon: float
    cost_ref: str

    @property
    def n(self) -> int:
        return self.K.shape[0]


@dataclass
class ScalingState:
    u: np.ndarray
    v: np.ndarray
    iteration: int = 0

    @classmethod
    def ones(cls, n: int, N: int = 1) -> "ScalingState":
        return cls(np.ones((n, N)), np.ones((n, N)), 0)


@dataclass
class SolveResult:
    state: ScalingState
    err_a: float
    err_b: float
    objective: float
    verdict: Verdict
    iterations: int
    err_a_signed: float = 0.0
    elapsed: float = 0.0
    err_history: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)

    def plan(self, kernel: GibbsKernel, target_index: int = 0) -> np.ndarray:
        return transport_plan(self.state, kernel, target_index)


def _check_cost(C):
    if not np.isfinite(C).all():
        raise NonFiniteCost("cost matrix has NaN or infinite entries")
    if (C < 0).any():
        raise ProblemError("cost matrix has negative entries")


def cost_digest(C: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(C, dtype=np.float64).tobytes()).hexdigest()[:16]


def gibbs_kernel(C, epsilon: float) -> GibbsKernel:
    """``K = exp(-C / epsilon)`` with underflowed entries raised to ``FLOOR``."""
    C = np.ascontiguousarray(C, dtype=np.float64)
    _check_cost(C)
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    K = np.exp(-C / epsilon)
    np.maximum(K, FLOOR, out=K)
    return GibbsKernel(K, float(epsilon), cost_digest(C))


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.ascontiguousarray(x[:, None]), True
    return np.ascontiguousarray(x), False


def _kmat(K):
    K = K.K if isinstance(K, GibbsKernel) else K
    return np.ascontiguousarray(K, dtype=np.float64)


def scale(marg, den):
    """``marg / den`` with the underflow guard shared by both half-steps."""
    out, bad = kernels.ratio(marg, den, FLOOR)
    if bad >= 0:
        i, j = divmod(bad, den.shape[1])
        raise UnderflowDivide(
            f"denominator {den[i, j]!r} at row {i}, column {j} is at or below the "
            f"kernel floor {FLOOR}; epsilon is too small for float64 on this instance",
            index=(i, j),
        )
    return out


def half_step_u(K_rows, v, a):
    """Row update: ``q = K_rows @ v`` and ``u = a / q``. Returns ``(q, u)``."""
    v2, flat = _as_matrix(v)
    a2, _ = _as_matrix(a)
    q = kernels.gemm_rows(_kmat(K_rows), v2)
    if a2.shape != q.shape:
        a2 = np.ascontiguousarray(np.broadcast_to(a2, q.shape))
    u = scale(a2, q)
    return (q[:, 0], u[:, 0]) if flat else (q, u)


def half_step_v(K_cols, u, b):
    """Column update: ``r = K_cols.T @ u`` and ``v = b / r``. Returns ``(r, v)``.

    ``K_cols`` is the ``n x m`` column block of K (all of K when centralized).
    """
    u2, flat = _as_matrix(u)
    b2, _ = _as_matrix(b)
    r = kernels.gemm_cols(_kmat(K_cols), u2)
    if b2.shape != r.shape:
        b2 = np.ascontiguousarray(np.broadcast_to(b2, r.shape))
    v = scale(b2, r)
    return (r[:, 0], v[:, 0]) if flat else (r, v)


def damped_combine(new, old, alpha: float):
    """``alpha * new + (1 - alpha) * old``; exact at the endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return np.array(new, dtype=np.float64, copy=True)
    if alpha == 0.0:
        return np.array(old, dtype=np.float64, copy=True)
    return alpha * np.asarray(new, dtype=np.float64) + (1.0 - alpha) * np.asarray(old, dtype=np.float64)


def transport_plan(state: ScalingState, K, target_index: int = 0) -> np.ndarray:
    """``diag(u) K diag(v)`` for one target column."""
    u, _ = _as_matrix(state.u)
    v, _ = _as_matrix(state.v)
    return u[:, target_index, None] * _kmat(K) * v[None, :, target_index]


def marginal_residuals(state: ScalingState, K, a, B):
    """L1 and signed residuals of both marginals, worst column each.

    Returns ``(err_a, err_b, signed_a, signed_b)``; the signed values belong
    to the column with the largest L1 residual.
    """
    Km = _kmat(K)
    u, _ = _as_matrix(state.u)
    v, _ = _as_matrix(state.v)
    A, _ = _as_matrix(a)
    Bm, _ = _as_matrix(B)
    A = np.broadcast_to(A, u.shape)
    Bm = np.broadcast_to(Bm, v.shape)
    q = kernels.gemm_rows(Km, v)
    r = kernels.gemm_cols(Km, u)
    la, sa = kernels.residual(u, q, np.ascontiguousarray(A))
    lb, sb = kernels.residual(v, r, np.ascontiguousarray(Bm))
    ia, ib = int(np.argmax(la)), int(np.argmax(lb))
    return float(la[ia]), float(lb[ib]), float(sa[ia]), float(sb[ib])


def marginal_errors(state: ScalingState, K, a, B):
    """``(err_a, err_b)``: L1 marginal residuals, maximized over target columns."""
    ea, eb, _, _ = marginal_residuals(state, K, a, B)
    return ea, eb


def objective(P, C, epsilon: float) -> float:
    """Entropic objective ``<P, C> + eps * sum P (log P - 1)`` with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    pos = P > 0
    ent = np.zeros_like(P)
    ent[pos] = P[pos] * (np.log(P[pos]) - 1.0)
    return float((P * C).sum() + epsilon * ent.sum())


def _xlogx_dot(w, x):
    # sum w * log x, skipping entries where w == 0 (0 log 0 convention)
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    mask = w != 0
    if not mask.any():
        return np.zeros(w.shape[1:]) if w.ndim > 1 else 0.0
    lx = np.zeros_like(x)
    lx[mask] = np.log(x[mask])
    return (w * lx).sum(axis=0)


def objective_terms(u, row_sums, v, col_sums):
    """Per-column pieces of the objective from the scalings alone.

    With ``P = diag(u) K diag(v)`` and ``K = exp(-C / eps)`` we have
    ``C + eps (log P - 1) = eps (log u_i + log v_j - 1)``, so the objective is
    ``eps * (sum_i row_i log u_i + sum_j col_j log v_j - sum P)``. Returns the
    bracketed sum without the ``eps`` factor, split so that row and column
    blocks held by different clients can be added up later.
    """
    return _xlogx_dot(row_sums, u) + _xlogx_dot(col_sums, v) - np.asarray(row_sums).sum(axis=0)


def solve_centralized(problem: Problem, stop: StopPolicy | None = None, *, kernel: GibbsKernel | None = None,
                      record: bool = True, clock=time.monotonic) -> SolveResult:
    """Alternate full u and v half-steps on all N targets until ``stop`` fires.

    One iteration is a u half-step followed by a v half-step; the stopping
    rule sees the source-marginal L1 error of the plan after the v update.
    """
    stop = stop or StopPolicy()
    K = kernel or gibbs_kernel(problem.C, problem.epsilon)
    Km = K.K
    A = problem.source_matrix()
    B = problem.B
    n, N = problem.n, problem.N
    eps = problem.epsilon

    start = clock()
    v = np.ones((n, N))
    q = kernels.gemm_rows(Km, v)
    errs, objs = [], []
    t = 0
    verdict = None
    while verdict is None:
        t += 1
        u = scale(A, q)
        r = kernels.gemm_cols(Km, u)
        v = scale(B, r)
        q = kernels.gemm_rows(Km, v)
        la, sa = kernels.residual(u, q, A)
        j = int(np.argmax(la))
        err_a = float(la[j])
        terms = objective_terms(u, u * q, v, v * r)
        obj = eps * float(np.sum(terms))
        if record:
            errs.append(err_a)
            objs.append(obj)
        verdict = evaluate_stop(stop, err_a, t, clock() - start)

    lb, _ = kernels.residual(v, r, B)
    return SolveResult(
        state=ScalingState(u, v, t),
        err_a=err_a,
        err_b=float(lb.max()),
        objective=obj,
        verdict=verdict,
        iterations=t,
        err_a_signed=float(sa[j]),
        elapsed=clock() - start,
        err_history=errs,
        objective_history=objs,
    )


def i_min(objectives, rel: float = 1e-3) -> int:
    """First iteration (1-based) whose objective is within ``rel`` of the final one."""
    if len(objectives) == 0:
        raise ValueError("empty objective history")
    final = objectives[-1]
    tol = rel * abs(final)
    for i, f in enumerate(objectives, start=1):
        if abs(f - final) <= tol:
            return i
    return len(objectives)


def linear_rate(errors, tail: float = 0.5) -> float:
    """Least-squares slope of ``log(err)`` over the last ``tail`` fraction of a run."""
    e = np.asarray(errors, dtype=np.float64)
    e = e[np.isfinite(e) & (e > 0)]
    if e.size < 4:
        return math.nan
    k = max(3, int(e.size * tail))
    y = np.log(e[-k:])
    x = np.arange(y.size, dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])
