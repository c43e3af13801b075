"""Regularization study: iterations needed for the objective to settle, per epsilon."""
from __future__ import annotations

from dataclasses import dataclass

from .core import Problem, i_min, solve_centralized
from .errors import UnderflowDivide
from .extended import solve_extended
from .stop import StopPolicy

# 4x4 toy instance; marginals kept as strings so extended precision sees exact decimals
TOY_A = ("0.3", "0.2", "0.1", "0.4")
TOY_B = ("0.2", "0.3", "0.3", "0.2")
TOY_C = ((0, 1, 2, 3), (1, 0, 3, 2), (2, 3, 0, 1), (3, 2, 1, 0))
TOY_EPSILONS = (5e-3, 1e-3, 1e-4)
I_MIN_RTOL = 1e-3


def toy_problem(epsilon: float) -> Problem:
    return Problem([list(r) for r in TOY_C], [float(x) for x in TOY_A], [float(x) for x in TOY_B], epsilon)


@dataclass
class StudyRow:
    epsilon: float
    i_min: int
    objective: float
    iterations: int
    verdict: str
    err_a: float
    precision: str
    note: str = ""

    def to_dict(self):
        return dict(vars(self))


def epsilon_study(epsilons=TOY_EPSILONS, *, precision: str = "extended", digits: int = 50,
                  C=TOY_C, a=TOY_A, b=TOY_B, max_iterations: int = 200_000) -> list[StudyRow]:
    """Run the toy (or given) instance at each epsilon and record ``I_min``.

    ``I_min`` is the first iteration whose objective is within 1e-3 relative
    of the final objective. ``precision='float64'`` uses the regular solver;
    below roughly ``eps = 1e-3`` its kernel underflows on the toy instance and
    the numbers are wrong, which the row's note says.
    """
    rows = []
    for eps in epsilons:
        if precision == "extended":
            res = solve_extended(C, a, b, eps, digits=digits, max_iterations=max_iterations)
            rows.append(StudyRow(float(eps), i_min(res.objective_history, I_MIN_RTOL), res.objective,
                                 res.iterations, res.verdict.value, res.err_a, f"mpfr{digits}"))
            continue
        if precision != "float64":
            raise ValueError(f"unknown precision {precision!r}")
        problem = Problem([list(r) for r in C], [float(x) for x in a], [float(x) for x in b], eps)
        stop = StopPolicy(threshold=1e-15, max_iterations=max_iterations, divergence_iterations=None)
        try:
            res = solve_centralized(problem, stop)
        except UnderflowDivide as exc:
            rows.append(StudyRow(float(eps), 0, float("nan"), 0, "diverged", float("nan"), "float64", str(exc)))
            continue
        note = "" if (problem.C / eps).max() < 700 else "kernel entries at the underflow floor"
        rows.append(StudyRow(float(eps), i_min(res.objective_history, I_MIN_RTOL), res.objective,
                             res.iterations, res.verdict.value, res.err_a, "float64", note))
    return rows
