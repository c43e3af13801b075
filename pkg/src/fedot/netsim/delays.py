"""Message delay schedules for the simulator, in receiver-local iterations.

A delay of ``d`` means an envelope becomes readable during the receiver
iteration ``s + d - 1``, where ``s`` is the receiver's iteration when the
envelope was posted. ``d = 1`` is the freshest possible (same iteration).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PRNG_NAME = "numpy.random.Philox"

MODELS = ("zero", "fixed", "uniform", "table")


@dataclass(frozen=True)
class DelaySchedule:
    model: str = "zero"
    d: int = 1
    lo: int = 1
    hi: int = 1
    table: tuple = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown delay model {self.model!r}; expected one of {MODELS}")
        if self.model == "fixed" and self.d < 1:
            raise ValueError("fixed delay must be at least 1 iteration")
        if self.model == "uniform" and not 1 <= self.lo <= self.hi:
            raise ValueError(f"uniform delay needs 1 <= lo <= hi, got ({self.lo}, {self.hi})")
        if self.model == "table":
            object.__setattr__(self, "table", tuple(tuple(int(x) for x in row) for row in self.table))
            if any(x < 1 for row in self.table for x in row):
                raise ValueError("table delays must be at least 1")

    @classmethod
    def zero(cls, seed=0):
        return cls("zero", seed=seed)

    @classmethod
    def fixed(cls, d, seed=0):
        return cls("fixed", d=int(d), seed=seed)

    @classmethod
    def uniform(cls, lo, hi, seed=0):
        return cls("uniform", lo=int(lo), hi=int(hi), seed=seed)

    @classmethod
    def per_link(cls, table, seed=0):
        return cls("table", table=table, seed=seed)

    def with_seed(self, seed):
        return DelaySchedule(self.model, self.d, self.lo, self.hi, self.table, seed)

    def to_dict(self):
        out = {"model": self.model, "seed": self.seed}
        if self.model == "fixed":
            out["d"] = self.d
        elif self.model == "uniform":
            out.update(lo=self.lo, hi=self.hi)
        elif self.model == "table":
            out["table"] = [list(r) for r in self.table]
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "table" in d:
            d["table"] = tuple(tuple(r) for r in d["table"])
        return cls(**d)

    def sampler(self) -> "DelaySampler":
        return DelaySampler(self)


class DelaySampler:
    """Draws per-message delays; one Philox stream per directed link."""

    def __init__(self, schedule: DelaySchedule):
        self.schedule = schedule
        self._streams = {}

    def _rng(self, sender, receiver):
        key = (sender, receiver)
        rng = self._streams.get(key)
        if rng is None:
            ss = np.random.SeedSequence([self.schedule.seed, sender, receiver])
            rng = np.random.Generator(np.random.Philox(ss))
            self._streams[key] = rng
        return rng

    def draw(self, sender: int, receiver: int) -> int:
        s = self.schedule
        if s.model == "zero":
            return 1
        if s.model == "fixed":
            return s.d
        if s.model == "uniform":
            return int(self._rng(sender, receiver).integers(s.lo, s.hi, endpoint=True))
        return s.table[sender][receiver]
