"""Stopping rules shared by the centralized solver and the federated drivers."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

LOOSE_THRESHOLD = 1e-5
TIGHT_THRESHOLD = 1e-12
FAST_TIMEOUT = 10.0
SLOW_TIMEOUT = 1200.0
DIVERGENCE_ITERATIONS = 3000


class Verdict(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    TIMEOUT = "timeout"
    DIVERGED = "diverged"
    PEER_LOST = "peer_lost"


@dataclass(frozen=True)
class StopPolicy:
    """When to stop iterating.

    ``divergence_iterations`` classifies a run that has not converged after
    that many iterations as diverged; ``None`` disables the rule so the run
    ends with ``max_iterations`` instead.
    """

    threshold: float = LOOSE_THRESHOLD
    max_iterations: int = 10_000
    timeout: float = SLOW_TIMEOUT
    divergence_iterations: int | None = DIVERGENCE_ITERATIONS

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.divergence_iterations is not None and self.divergence_iterations < 1:
            raise ValueError("divergence_iterations must be at least 1 or None")

    @classmethod
    def loose(cls, fast=False, **kw):
        return cls(threshold=LOOSE_THRESHOLD, timeout=FAST_TIMEOUT if fast else SLOW_TIMEOUT, **kw)

    @classmethod
    def tight(cls, fast=False, **kw):
        return cls(threshold=TIGHT_THRESHOLD, timeout=FAST_TIMEOUT if fast else SLOW_TIMEOUT, **kw)

    def to_dict(self):
        return asdict(self)


def evaluate_stop(policy: StopPolicy, err_a: float, iteration: int, elapsed: float) -> Verdict | None:
    """Return the verdict that ends the run, or ``None`` to keep going.

    Precedence: converged, timeout, diverged, max_iterations. A non-finite
    error counts as divergence immediately.
    """
    if err_a <= policy.threshold:
        return Verdict.CONVERGED
    if elapsed > policy.timeout:
        return Verdict.TIMEOUT
    if not math.isfinite(err_a):
        return Verdict.DIVERGED
    if policy.divergence_iterations is not None and iteration >= policy.divergence_iterations:
        return Verdict.DIVERGED
    if iteration >= policy.max_iterations:
        return Verdict.MAX_ITERATIONS
    return None
