"""Fabric operations.

Participant programs are generators. They ``yield`` one of these requests
and receive its result back from the backend::

    full_u = yield AllGather(Kind.U, my_block, iteration=t)

The same program runs unchanged on the simulator and on TCP.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import FrameError
from .envelope import Envelope, Kind


@dataclass
class AllGather:
    """Blocking collective over every participant; returns the assembled array."""

    kind: Kind
    block: np.ndarray
    iteration: int = 0


@dataclass
class Scatter:
    """Root sends ``full[j*m:(j+1)*m]`` to each receiver ``j``; returns ``None``.

    Receivers pick their slice up with ``Recv(root, kind)``.
    """

    kind: Kind
    full: np.ndarray
    receivers: tuple
    iteration: int = 0


@dataclass
class Send:
    dest: int
    kind: Kind
    payload: np.ndarray
    iteration: int = 0
    block_index: int | None = None


@dataclass
class Recv:
    """Blocks until the next envelope of ``kind`` from ``src``; returns it.

    The payload comes back flat; the receiver reshapes it.
    """

    src: int
    kind: Kind
    iteration: int | None = None


@dataclass
class Post:
    """Non-blocking broadcast of ``envelope`` to every other participant."""

    envelope: Envelope
    iteration: int | None = None

    def __post_init__(self):
        if self.iteration is None:
            self.iteration = self.envelope.iteration


@dataclass
class Drain:
    """Returns the deliverable envelopes of ``kinds``, newest per stream."""

    kinds: tuple
    iteration: int = 0


def all_gather(kind, block, iteration=0) -> AllGather:
    return AllGather(Kind(kind), np.asarray(block, dtype=np.float64), iteration)


def scatter(kind, full, receivers, iteration=0) -> Scatter:
    return Scatter(Kind(kind), np.asarray(full, dtype=np.float64), tuple(receivers), iteration)


def receive_scatter(root, kind, iteration=None) -> Recv:
    return Recv(root, Kind(kind), iteration)


def post_broadcast(envelope: Envelope) -> Post:
    return Post(envelope)


def drain_mailbox(kinds, iteration) -> Drain:
    if isinstance(kinds, (int, Kind)):
        kinds = (kinds,)
    return Drain(tuple(Kind(k) for k in kinds), iteration)


def scatter_slices(full: np.ndarray, count: int):
    """Split ``full`` into ``count`` equal leading-axis slices."""
    n = full.shape[0]
    if count < 1 or n % count:
        raise FrameError(f"cannot scatter a length-{n} vector into {count} equal slices")
    m = n // count
    return [full[j * m : (j + 1) * m] for j in range(count)]


def flat_shape(block: np.ndarray):
    """Trailing shape used to rebuild a flattened payload."""
    return block.shape[1:]


def unflatten(payload: np.ndarray, trailing) -> np.ndarray:
    if not trailing:
        return payload
    return payload.reshape((-1,) + tuple(trailing))


@dataclass
class Endpoint:
    """What a participant program can see of the fabric outside of ``yield``.

    ``work`` books floating-point work done since the last fabric call (the
    simulator turns it into virtual compute time; TCP measures real time).
    ``clock`` is seconds since the run started, virtual or wall.
    """

    rank: int
    size: int
    pending_flops: float = 0.0
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def work(self, flops: float):
        self.pending_flops += flops

    def clock(self) -> float:
        return time.monotonic() - self._t0
