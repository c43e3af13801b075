"""Equal-size block partitioning of a problem across clients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GibbsKernel, Problem, gibbs_kernel
from .errors import DuplicateBlock, IndivisibleDimension, MissingBlock, ProblemError


@dataclass(frozen=True)
class BlockView:
    """What client ``client_id`` holds locally.

    ``K_rows`` is rows ``[j*m, (j+1)*m)`` of K (m x n) and ``K_cols`` the same
    range of columns (n x m). ``u`` and ``v`` are the client's full-length
    working copies, initialized to ones.
    """

    client_id: int
    c: int
    m: int
    a_j: np.ndarray
    b_j: np.ndarray
    K_rows: np.ndarray
    K_cols: np.ndarray
    epsilon: float
    u: np.ndarray = field(repr=False, default=None)
    v: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.c * self.m

    @property
    def block(self) -> slice:
        return block_slice(self.client_id, self.m)


def block_slice(j: int, m: int) -> slice:
    return slice(j * m, (j + 1) * m)


def block_size(n: int, c: int) -> int:
    if c < 1:
        raise ProblemError(f"client count must be positive, got {c}")
    if n % c:
        raise IndivisibleDimension(f"{c} clients do not divide n = {n}")
    return n // c


def slice_problem(problem: Problem, c: int, kernel: GibbsKernel | None = None) -> list[BlockView]:
    """Cut ``problem`` into ``c`` client views ordered by client id."""
    m = block_size(problem.n, c)
    K = (kernel or gibbs_kernel(problem.C, problem.epsilon)).K
    N = problem.N
    views = []
    for j in range(c):
        sl = block_slice(j, m)
        views.append(
            BlockView(
                client_id=j,
                c=c,
                m=m,
                a_j=problem.a[sl].copy(),
                b_j=np.ascontiguousarray(problem.B[sl]),
                K_rows=np.ascontiguousarray(K[sl, :]),
                K_cols=np.ascontiguousarray(K[:, sl]),
                epsilon=problem.epsilon,
                u=np.ones((problem.n, N)),
                v=np.ones((problem.n, N)),
            )
        )
    return views


def assemble(slices, c: int | None = None) -> np.ndarray:
    """Concatenate ``(client_id, block)`` pairs in client-id order.

    Arrival order is irrelevant. Every id in ``0..c-1`` must appear exactly
    once (``c`` defaults to one past the largest id seen) and all blocks must
    share one length.
    """
    by_id = {}
    for cid, block in slices:
        cid = int(cid)
        if cid in by_id:
            raise DuplicateBlock(f"client {cid} contributed more than one block")
        by_id[cid] = np.asarray(block, dtype=np.float64)
    if not by_id:
        raise MissingBlock("no blocks to assemble")
    if c is None:
        c = max(by_id) + 1
    missing = [j for j in range(c) if j not in by_id]
    extra = [j for j in by_id if not 0 <= j < c]
    if missing or extra:
        raise MissingBlock(f"missing blocks for clients {missing}, unexpected ids {extra}")
    lengths = {b.shape[0] for b in by_id.values()}
    if len(lengths) != 1:
        raise ProblemError(f"blocks have unequal lengths {sorted(lengths)}")
    return np.concatenate([by_id[j] for j in range(c)], axis=0)
