"""Seeded synthetic instances along the benchmark axes n, N, s and condition class.

Draw order from one Philox stream keyed by the seed: ``a`` (n), ``B`` (n x N,
row-major), base ``C`` (n x n), sparsity coins (n x n). Uniforms come from
``Generator.random`` so ``1 - U`` lies in ``(0, 1]`` and marginals stay
strictly positive.

"Sparsity" raises off-diagonal-block costs to ``10 * max(C)`` instead of
zeroing the kernel, so K stays strictly positive. Condition classes scale
row bands of C geometrically between ``1 / span`` and 1; they are our own
construction, not a standard definition.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .core import Problem
from .errors import ConfigError, ProblemError
from .netsim.delays import PRNG_NAME

COND_SPANS = {"well": 1.0, "medium": 1e3, "ill": 1e6}
ROW_BANDS = 8
HIGH_COST_FACTOR = 10.0
DEFAULT_EPSILON = 0.05

CONTAINER_MAGIC = b"FOTI"
CONTAINER_VERSION = 1


@dataclass(frozen=True)
class GenSpec:
    n: int
    N: int = 1
    sparsity_s: float = 0.0
    cond_class: str = "well"
    c_hint: int = 1
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.n < 1 or self.N < 1:
            raise ConfigError(f"n and N must be positive, got n={self.n}, N={self.N}")
        if not 0.0 <= self.sparsity_s <= 1.0:
            raise ConfigError(f"sparsity s must lie in [0, 1], got {self.sparsity_s}")
        if self.cond_class not in COND_SPANS:
            raise ConfigError(f"unknown condition class {self.cond_class!r}; expected one of {sorted(COND_SPANS)}")
        if self.c_hint < 1 or self.n % self.c_hint:
            raise ConfigError(f"c_hint = {self.c_hint} must be positive and divide n = {self.n}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def to_dict(self):
        return asdict(self)


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 keyed directly by ``seed`` with a zero counter."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def band_factors(n: int, span: float, bands: int = ROW_BANDS) -> np.ndarray:
    """Per-row multipliers, geometric from ``1/span`` (first band) to 1 (last)."""
    bands = max(1, min(bands, n))
    band = np.arange(n) * bands // n
    if bands == 1 or span == 1.0:
        return np.ones(n)
    return span ** (band / (bands - 1) - 1.0)


def generate(spec: GenSpec) -> Problem:
    rng = make_rng(spec.seed)
    n, N = spec.n, spec.N
    a = 1.0 - rng.random(n)
    B = 1.0 - rng.random((n, N))
    C = rng.random((n, n))
    coins = rng.random((n, n))
    a /= a.sum()
    B /= B.sum(axis=0, keepdims=True)

    if spec.sparsity_s > 0 and spec.c_hint > 1:
        m = n // spec.c_hint
        blk = np.arange(n) // m
        off = blk[:, None] != blk[None, :]
        high = HIGH_COST_FACTOR * C.max()
        C = np.where(off & (coins < spec.sparsity_s), high, C)

    C = C * band_factors(n, COND_SPANS[spec.cond_class])[:, None]
    return Problem(C, a, B, spec.epsilon)


def write_instance(path, problem: Problem, spec: GenSpec | None = None):
    """Header JSON then little-endian f64 ``a``, ``B`` (row-major), ``C``."""
    header = {
        "n": problem.n,
        "N": problem.N,
        "epsilon": problem.epsilon,
        "prng": PRNG_NAME,
        "arrays": ["a", "B", "C"],
        "byte_order": "little",
    }
    if spec is not None:
        header.update(s=spec.sparsity_s, cond_class=spec.cond_class, c_hint=spec.c_hint, seed=spec.seed)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<BI", CONTAINER_VERSION, len(head)))
        fh.write(head)
        for arr in (problem.a, problem.B, problem.C):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_instance(path):
    """Inverse of :func:`write_instance`; returns ``(problem, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CONTAINER_MAGIC:
        raise ProblemError(f"{path}: not an instance container")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != CONTAINER_VERSION:
        raise ProblemError(f"{path}: unsupported container version {version}")
    off = 9
    header = json.loads(data[off : off + hlen])
    off += hlen
    n, N = header["n"], header["N"]
    sizes = [n, n * N, n * n]
    if len(data) - off != 8 * sum(sizes):
        raise ProblemError(f"{path}: payload size does not match n={n}, N={N}")
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64))
        off += 8 * size
    a, B, C = arrays
    return Problem(C.reshape(n, n), a, B.reshape(n, N), header["epsilon"]), header
