"""Deterministic in-process fabric.

All participants run on the calling thread. Execution proceeds in rounds:
every participant that is not finished has exactly one outstanding request;
requests are served in ascending rank order, then every participant whose
request completed is resumed, again in rank order. Nothing depends on wall
time or thread scheduling, so a run is a pure function of its inputs.

Time is virtual. ``Endpoint.work`` flops are charged at ``CostModel.flop_rate``
and messages cost ``latency + bytes / bandwidth``.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..errors import Deadlock, FabricError, FrameError, PeerLost
from ..partition import assemble
from .delays import DelaySchedule
from .envelope import Envelope, Kind
from .ops import AllGather, Drain, Endpoint, Post, Recv, Scatter, Send, flat_shape, scatter_slices
from .stats import FabricStats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostModel:
    flop_rate: float = 1e9
    latency: float = 5e-6
    bandwidth: float = 1e9
    post_overhead: float = 1e-6

    def transfer(self, nbytes: int) -> float:
        return self.latency + nbytes / self.bandwidth


@dataclass
class SimEndpoint(Endpoint):
    now: float = 0.0

    def clock(self) -> float:
        return self.now + self.pending_flops / self._fabric.cost.flop_rate

    _fabric: "SimFabric" = field(default=None, repr=False)


@dataclass
class _InFlight:
    env: Envelope
    stamp: int
    delay: int
    seq: int


@dataclass
class _Slot:
    blocks: dict = field(default_factory=dict)
    arrivals: dict = field(default_factory=dict)
    nbytes: int = 0


class SimFabric:
    """Simulated fabric for ``size`` participants.

    Args:
        size: number of participants (ranks ``0..size-1``).
        delay: schedule for posted (non-blocking) envelopes.
        cost: virtual time model.
        kill: ``{rank: k}`` terminates ``rank`` silently right before its
            ``k``-th fabric request, to exercise lost-peer handling.
    """

    name = "sim"
    clock_kind = "virtual"

    def __init__(self, size: int, delay: DelaySchedule | None = None, cost: CostModel | None = None,
                 kill: dict | None = None):
        if size < 1:
            raise ValueError("fabric needs at least one participant")
        self.size = size
        self.delay = delay or DelaySchedule.zero()
        self.cost = cost or CostModel()
        self.kill = dict(kill or {})
        self.stats = FabricStats(size)
        self.log: list = []
        self.failures: dict = {}
        self.endpoints = [SimEndpoint(r, size, _fabric=self) for r in range(size)]
        self._sampler = self.delay.sampler()
        self._inflight = defaultdict(list)
        self._inbox = defaultdict(list)
        self._consumed = {}
        self._gather = {}
        self._cur_iter = [0] * size
        self._seq = 0
        self._done = [False] * size
        self._ops_issued = [0] * size
        self.rounds = 0

    # ---- accounting -------------------------------------------------
    def _charge_compute(self, r):
        ep = self.endpoints[r]
        if ep.pending_flops:
            dt = ep.pending_flops / self.cost.flop_rate
            ep.now += dt
            self.stats.participants[r].compute_s += dt
            ep.pending_flops = 0.0

    def _advance(self, r, until):
        ep = self.endpoints[r]
        if until > ep.now:
            self.stats.participants[r].comm_s += until - ep.now
            ep.now = until

    def _note_sent(self, r, env):
        p = self.stats.participants[r]
        p.sent += 1
        p.bytes_sent += env.nbytes

    # ---- request handlers: return (completed, result) ---------------
    def _all_gather(self, r, op: AllGather):
        slot = self._gather.setdefault(op.kind, _Slot())
        if r not in slot.blocks:
            env = Envelope(r, op.kind, max(op.iteration, 0), r, op.block)
            slot.blocks[r] = op.block
            slot.arrivals[r] = self.endpoints[r].now
            slot.nbytes += env.nbytes
            self._note_sent(r, env)
        if len(slot.blocks) < self.size:
            return False, None
        # last arrival completes the collective for everybody
        trailing = {flat_shape(np.asarray(b)) for b in slot.blocks.values()}
        if len(trailing) != 1:
            raise FrameError(f"all_gather blocks disagree on trailing shape: {sorted(trailing)}")
        full = assemble(sorted(slot.blocks.items()), self.size)
        t_done = max(slot.arrivals.values()) + self.cost.transfer(slot.nbytes)
        del self._gather[op.kind]
        results = {}
        for member in range(self.size):
            self._advance(member, t_done)
            self.stats.participants[member].received += self.size - 1
            results[member] = full.copy()
        return True, results

    def _send(self, r, dest, kind, payload, iteration, block_index):
        if not 0 <= dest < self.size:
            raise FabricError(f"rank {r} sent to unknown rank {dest}")
        env = Envelope(r, kind, max(iteration, 0), r if block_index is None else block_index, payload)
        ep = self.endpoints[r]
        t_avail = ep.now + self.cost.transfer(env.nbytes)
        self._advance(r, ep.now + self.cost.latency)
        self._inbox[dest].append((t_avail, env))
        self._note_sent(r, env)

    def _recv(self, r, op: Recv):
        box = self._inbox[r]
        for i, (t_avail, env) in enumerate(box):
            if env.sender == op.src and env.kind == op.kind:
                del box[i]
                self._advance(r, t_avail)
                self.stats.participants[r].received += 1
                self.log.append((self.rounds, "recv", r, env.sender, env.kind.name, env.iteration))
                return True, env
        return False, None

    def _post(self, r, op: Post):
        env = op.envelope
        if env.sender != r:
            raise FabricError(f"rank {r} posted an envelope stamped with sender {env.sender}")
        self._advance(r, self.endpoints[r].now + self.cost.post_overhead)
        for dest in range(self.size):
            if dest == r or self._done[dest]:
                continue
            d = self._sampler.draw(r, dest)
            self._seq += 1
            self._inflight[dest].append(_InFlight(env, self._cur_iter[dest], d, self._seq))
            self._note_sent(r, env)
        return True, None

    def _drain(self, r, op: Drain):
        I = op.iteration
        keep, ready = [], defaultdict(list)
        for item in self._inflight[r]:
            if item.env.kind in op.kinds and I - item.stamp + 1 >= item.delay:
                ready[item.env.stream].append(item)
            else:
                keep.append(item)
        self._inflight[r] = keep
        out = []
        pstats = self.stats.participants[r]
        for stream in sorted(ready, key=lambda s: (s[0], int(s[1]))):
            items = ready[stream]
            newest = max(items, key=lambda it: (it.env.iteration, it.seq))
            pstats.superseded += len(items) - 1
            last = self._consumed.get((r, stream))
            if last is not None and newest.env.iteration < last:
                pstats.superseded += 1
                continue
            self._consumed[(r, stream)] = newest.env.iteration
            tau = I - newest.stamp + 1
            self.stats.record_tau(r, newest.env.sender, newest.env.kind, tau)
            pstats.received += 1
            pstats.drained += 1
            self.log.append((self.rounds, "drain", r, newest.env.sender, newest.env.kind.name,
                             newest.env.iteration, tau))
            out.append(newest.env)
        self._advance(r, self.endpoints[r].now + self.cost.post_overhead)
        return True, out

    def _execute(self, r, op):
        if isinstance(op, AllGather):
            return self._all_gather(r, op)
        if isinstance(op, Send):
            self._send(r, op.dest, op.kind, op.payload, op.iteration, op.block_index)
            return True, None
        if isinstance(op, Scatter):
            parts = scatter_slices(op.full, len(op.receivers))
            for j, (dest, part) in enumerate(zip(op.receivers, parts)):
                self._send(r, dest, op.kind, part, op.iteration, j)
            return True, None
        if isinstance(op, Recv):
            return self._recv(r, op)
        if isinstance(op, Post):
            return self._post(r, op)
        if isinstance(op, Drain):
            return self._drain(r, op)
        raise FabricError(f"rank {r} yielded an unknown request {op!r}")

    def _lost_dependency(self, r, op):
        """Name the finished peer ``op`` is waiting on, or ``None``."""
        if isinstance(op, Recv) and self._done[op.src]:
            return op.src
        if isinstance(op, AllGather):
            slot = self._gather.get(op.kind)
            for peer in range(self.size):
                if self._done[peer] and (slot is None or peer not in slot.blocks):
                    return peer
        return None

    # ---- driver ------------------------------------------------------
    def run(self, programs):
        """Run one program per rank; returns their return values in rank order.

        ``programs[r]`` is a callable taking the rank's endpoint and returning
        a generator. A program that raises is recorded in ``self.failures``
        and its result is ``None``; peers blocked on it get ``PeerLost``.
        """
        if len(programs) != self.size:
            raise ValueError(f"expected {self.size} programs, got {len(programs)}")
        gens = [programs[r](self.endpoints[r]) for r in range(self.size)]
        results = [None] * self.size
        pending = [None] * self.size

        def finish(r):
            self._charge_compute(r)
            self._done[r] = True
            pending[r] = None

        def step(r, fn, arg):
            """Advance rank ``r`` by ``fn(arg)``; store its next request."""
            try:
                op = fn(arg)
            except StopIteration as stop:
                results[r] = stop.value
                finish(r)
                return
            except Exception as exc:  # recorded for the caller, peers see PeerLost
                logger.debug("rank %d failed: %r", r, exc)
                self.failures[r] = exc
                finish(r)
                return
            self._ops_issued[r] += 1
            if self.kill.get(r) is not None and self._ops_issued[r] >= self.kill[r]:
                gens[r].close()
                self.failures[r] = PeerLost(f"rank {r} was killed by the harness")
                finish(r)
                return
            pending[r] = op

        for r in range(self.size):
            step(r, gens[r].send, None)

        while any(op is not None for op in pending):
            self.rounds += 1
            for r, op in enumerate(pending):
                if op is not None and getattr(op, "iteration", None) is not None:
                    self._cur_iter[r] = op.iteration
            completed = {}
            for r in range(self.size):
                op = pending[r]
                if op is None or r in completed:
                    continue
                self._charge_compute(r)
                try:
                    ok, res = self._execute(r, op)
                except FabricError as exc:
                    completed[r] = ("throw", exc)
                    continue
                if not ok:
                    continue
                if isinstance(op, AllGather):
                    for member, full in res.items():
                        completed[member] = ("send", full)
                else:
                    completed[r] = ("send", res)
            blocked = [r for r in range(self.size) if pending[r] is not None and r not in completed]
            for r in blocked:
                peer = self._lost_dependency(r, pending[r])
                if peer is not None:
                    completed[r] = ("throw", PeerLost(
                        f"rank {r} waits on {type(pending[r]).__name__} but rank {peer} has exited"))
            if not completed:
                for r in blocked:
                    completed[r] = ("throw", Deadlock(
                        f"rank {r} blocked in {type(pending[r]).__name__}; every live rank is waiting"))
            for r in sorted(completed):
                how, val = completed[r]
                if how == "send":
                    step(r, gens[r].send, val)
                else:
                    step(r, gens[r].throw, val)
        return results

    @property
    def elapsed(self) -> float:
        return max(ep.now for ep in self.endpoints)
