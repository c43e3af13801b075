"""Arbitrary-precision centralized Sinkhorn for small instances.

float64 cannot represent the Gibbs kernel once ``C / eps`` exceeds about 745
(``exp(-1000)`` is 0.0), which happens on the 4x4 toy problem already at
``eps = 1e-3``. MPFR numbers carry a wide exponent range, so the regularization
study runs here with 50 significant decimal digits. Only meant for tiny n: every
operation is a Python-level scalar op.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpfr

from .stop import Verdict


def _bits(digits: int) -> int:
    return int(math.ceil(digits * math.log2(10))) + 4


@dataclass
class ExtendedResult:
    objective: float
    err_a: float
    iterations: int
    verdict: Verdict
    objective_history: list = field(default_factory=list)
    err_history: list = field(default_factory=list)
    plan: list = field(default_factory=list)


def _entropic_objective(P, C, eps):
    total = mpfr(0)
    for Pi, Ci in zip(P, C):
        for p, c in zip(Pi, Ci):
            if p > 0:
                total += p * (c + eps * (gmpy2.log(p) - 1))
    return total


def solve_extended(C, a, b, epsilon, *, digits: int = 50, max_iterations: int = 200_000,
                   threshold: float | str = "1e-40") -> ExtendedResult:
    """Sinkhorn on one target with ``digits`` significant decimal digits.

    Marginals and costs given as strings keep their exact decimal values.
    Stops when the L1 source-marginal error is at most ``threshold`` or after
    ``max_iterations``; histories are returned as floats.
    """
    with gmpy2.context(precision=_bits(digits), emin=-(1 << 40), emax=1 << 40):
        eps = mpfr(str(epsilon))
        Cm = [[mpfr(str(c)) for c in row] for row in C]
        am = [mpfr(str(x)) for x in a]
        bm = [mpfr(str(x)) for x in b]
        tol = mpfr(str(threshold))
        n = len(am)
        rng = range(n)
        K = [[gmpy2.exp(-c / eps) for c in row] for row in Cm]
        Kt = [[K[i][j] for i in rng] for j in rng]
        u = [mpfr(1)] * n
        v = [mpfr(1)] * n
        objs, errs = [], []
        verdict = Verdict.MAX_ITERATIONS
        t = 0
        while t < max_iterations:
            t += 1
            u = [am[i] / gmpy2.fsum([K[i][j] * v[j] for j in rng]) for i in rng]
            v = [bm[j] / gmpy2.fsum([Kt[j][i] * u[i] for i in rng]) for j in rng]
            P = [[u[i] * K[i][j] * v[j] for j in rng] for i in rng]
            err = gmpy2.fsum([abs(gmpy2.fsum(P[i]) - am[i]) for i in rng])
            objs.append(float(_entropic_objective(P, Cm, eps)))
            errs.append(float(err))
            if err <= tol:
                verdict = Verdict.CONVERGED
                break
        return ExtendedResult(
            objective=objs[-1],
            err_a=errs[-1],
            iterations=t,
            verdict=verdict,
            objective_history=objs,
            err_history=errs,
            plan=[[float(p) for p in row] for row in P],
        )
