"""Per-run fabric accounting: time split, message counts, message ages."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field


def tau_summary(samples):
    if not samples:
        return {"count": 0, "max": None, "min": None, "mean": None, "std": None}
    n = len(samples)
    mean = math.fsum(samples) / n
    var = math.fsum((s - mean) ** 2 for s in samples) / n
    return {"count": n, "max": max(samples), "min": min(samples), "mean": mean, "std": math.sqrt(var)}


@dataclass
class ParticipantStats:
    compute_s: float = 0.0
    comm_s: float = 0.0
    sent: int = 0
    received: int = 0
    # envelopes handed out by drain (the ones that carry a τ sample)
    drained: int = 0
    superseded: int = 0
    bytes_sent: int = 0


@dataclass
class FabricStats:
    size: int
    participants: list = field(default_factory=list)
    # (receiver, sender, kind name) -> list of ages in receiver iterations
    tau: dict = field(default_factory=lambda: defaultdict(list))

    def __post_init__(self):
        if not self.participants:
            self.participants = [ParticipantStats() for _ in range(self.size)]

    def record_tau(self, receiver, sender, kind, age):
        self.tau[(receiver, sender, kind.name)].append(int(age))

    def all_tau(self):
        out = []
        for key in sorted(self.tau):
            out.extend(self.tau[key])
        return out

    @property
    def delivered(self) -> int:
        return sum(p.drained for p in self.participants)

    def tau_table(self):
        """τ statistics per (receiver, sender) pair, both kinds pooled."""
        pooled = defaultdict(list)
        for (r, s, _k), v in sorted(self.tau.items()):
            pooled[(r, s)].extend(v)
        return {f"{r}<-{s}": tau_summary(v) for (r, s), v in sorted(pooled.items())}

    def to_dict(self):
        return {
            "participants": [vars(p).copy() for p in self.participants],
            "tau_overall": tau_summary(self.all_tau()),
            "tau_pairs": self.tau_table(),
        }
