"""Envelopes and their fixed binary frame.

Frame layout, all little-endian::

    magic    4 bytes  b"FSK1"
    version  u8       1
    kind     u8       0=U 1=V 2=Q 3=R 4=E
    sender   u16
    block    u32      index of the m-block the payload covers
    iter     u64      sender's iteration when the envelope was made
    count    u32      number of float64 values that follow
    payload  count * 8 bytes, IEEE-754 binary64
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FrameError

MAGIC = b"FSK1"
VERSION = 1
HEADER = struct.Struct("<4sBBHIQI")
HEADER_SIZE = HEADER.size
MAX_COUNT = 2**32 - 1


class Kind(enum.IntEnum):
    U = 0
    V = 1
    Q = 2
    R = 3
    # per-block residual and objective report used for stop consensus
    E = 4


@dataclass(frozen=True, eq=False)
class Envelope:
    sender: int
    kind: Kind
    iteration: int
    block_index: int
    payload: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        p = np.ascontiguousarray(self.payload, dtype="<f8").reshape(-1)
        object.__setattr__(self, "payload", p)

    def __eq__(self, other):
        if not isinstance(other, Envelope):
            return NotImplemented
        return (
            (self.sender, self.kind, self.iteration, self.block_index)
            == (other.sender, other.kind, other.iteration, other.block_index)
            and self.payload.tobytes() == other.payload.tobytes()
        )

    __hash__ = None

    @property
    def stream(self):
        return (self.sender, self.kind)

    @property
    def nbytes(self) -> int:
        return HEADER_SIZE + 8 * self.payload.size


def encode_frame(env: Envelope) -> bytes:
    count = env.payload.size
    if count > MAX_COUNT:
        raise FrameError(f"payload of {count} values does not fit a u32 length")
    if not 0 <= env.sender < 2**16:
        raise FrameError(f"sender id {env.sender} does not fit u16")
    if not 0 <= env.block_index < 2**32:
        raise FrameError(f"block index {env.block_index} does not fit u32")
    if not 0 <= env.iteration < 2**64:
        raise FrameError(f"iteration {env.iteration} does not fit u64")
    head = HEADER.pack(MAGIC, VERSION, int(env.kind), env.sender, env.block_index, env.iteration, count)
    return head + env.payload.astype("<f8", copy=False).tobytes()


def decode_header(head: bytes):
    """Validate a header; returns ``(kind, sender, block, iteration, count)``."""
    if len(head) != HEADER_SIZE:
        raise FrameError(f"header must be {HEADER_SIZE} bytes, got {len(head)}")
    magic, version, kind, sender, block, iteration, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise FrameError(f"unknown kind byte {kind}") from None
    return kind, sender, block, iteration, count


def decode_frame(frame: bytes) -> Envelope:
    frame = bytes(frame)
    kind, sender, block, iteration, count = decode_header(frame[:HEADER_SIZE])
    if len(frame) != HEADER_SIZE + 8 * count:
        raise FrameError(
            f"frame declares {count} values ({8 * count} bytes) but carries "
            f"{len(frame) - HEADER_SIZE} payload bytes"
        )
    payload = np.frombuffer(frame, dtype="<f8", offset=HEADER_SIZE, count=count).copy()
    return Envelope(sender, kind, iteration, block, payload)
