import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedot.errors import Deadlock, FrameError, PeerLost
from fedot.netsim import (AllGather, DelaySchedule, Drain, Envelope, Kind, Post, Recv, Send, SimFabric,
                          TcpFabric, all_gather, drain_mailbox, post_broadcast, receive_scatter, scatter,
                          tau_summary, tcp_frame_decode, tcp_frame_encode)
from fedot.netsim.envelope import HEADER_SIZE


def env(sender=0, kind=Kind.V, it=0, block=0, payload=(1.0,)):
    return Envelope(sender, kind, it, block, np.asarray(payload, dtype=float))


# ---- frames ---------------------------------------------------------------

def test_frame_trailing_bytes_of_one():
    frame = tcp_frame_encode(env(payload=[1.0]))
    assert frame[-8:] == bytes([0, 0, 0, 0, 0, 0, 0xF0, 0x3F])
    assert len(frame) == HEADER_SIZE + 8


def test_frame_header_layout():
    frame = tcp_frame_encode(env(sender=3, kind=Kind.Q, it=7, block=2, payload=[0.5, 2.0]))
    assert struct.unpack("<4sBBHIQI", frame[:HEADER_SIZE]) == (b"FSK1", 1, 2, 3, 2, 7, 2)


def test_frame_rejects_bad_kind_magic_and_length():
    frame = bytearray(tcp_frame_encode(env()))
    bad_kind = bytes(frame[:5]) + bytes([7]) + bytes(frame[6:])
    with pytest.raises(FrameError):
        tcp_frame_decode(bad_kind)
    with pytest.raises(FrameError):
        tcp_frame_decode(b"XXXX" + bytes(frame[4:]))
    with pytest.raises(FrameError):
        tcp_frame_decode(bytes(frame[:-1]))


@settings(max_examples=300)
@given(
    st.integers(0, 2**16 - 1), st.sampled_from(list(Kind)), st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1),
    st.lists(st.floats(allow_nan=True, allow_infinity=True), max_size=20),
)
def test_frame_round_trip(sender, kind, it, block, values):
    e = Envelope(sender, kind, it, block, np.array(values, dtype=float))
    back = tcp_frame_decode(tcp_frame_encode(e))
    assert back == e
    assert back.payload.tobytes() == e.payload.tobytes()


def test_frame_range_checks():
    with pytest.raises(FrameError):
        tcp_frame_encode(env(sender=2**16))


# ---- simulated collectives -------------------------------------------------

def test_all_gather_two_ranks():
    def prog(block):
        def p(ep):
            full = yield all_gather(Kind.U, np.array(block, float))
            return full.tolist()
        return p

    assert SimFabric(2).run([prog([1, 2]), prog([3, 4])]) == [[1, 2, 3, 4], [1, 2, 3, 4]]


def test_all_gather_single_rank():
    def p(ep):
        return (yield all_gather(Kind.U, np.array([5.0, 6.0]))).tolist()

    assert SimFabric(1).run([p]) == [[5.0, 6.0]]


def test_all_gather_killed_peer_raises_peer_lost():
    def p(ep):
        try:
            yield all_gather(Kind.U, np.ones(2))
        except PeerLost:
            return "lost"
        return "ok"

    fab = SimFabric(2, kill={1: 1})
    assert fab.run([p, p])[0] == "lost"
    assert isinstance(fab.failures[1], PeerLost)


def test_scatter_to_clients():
    def server(ep):
        yield scatter(Kind.Q, np.array([5.0, 6.0, 7.0, 8.0]), receivers=(0, 1))

    def client(ep):
        e = yield receive_scatter(2, Kind.Q)
        return e.payload.tolist()

    assert SimFabric(3).run([client, client, server])[:2] == [[5.0, 6.0], [7.0, 8.0]]


def test_scatter_single_receiver_gets_everything():
    def server(ep):
        yield scatter(Kind.Q, np.array([1.0, 2.0, 3.0]), receivers=(0,))

    def client(ep):
        return (yield receive_scatter(1, Kind.Q)).payload.tolist()

    assert SimFabric(2).run([client, server])[0] == [1.0, 2.0, 3.0]


def test_scatter_length_mismatch():
    def server(ep):
        try:
            yield scatter(Kind.Q, np.arange(5.0), receivers=(0, 1))
        except FrameError:
            return "frame"

    def idle(ep):
        return None
        yield

    assert SimFabric(3).run([idle, idle, server])[2] == "frame"


def test_recv_from_nobody_deadlocks():
    def p(ep):
        try:
            yield Recv(1 - ep.rank, Kind.U)
        except Deadlock:
            return "deadlock"

    assert SimFabric(2).run([p, p]) == ["deadlock", "deadlock"]


def test_post_single_rank_is_noop_and_empty_drain():
    def p(ep):
        yield post_broadcast(env(sender=0))
        return (yield drain_mailbox(Kind.V, 1))

    assert SimFabric(1).run([p]) == [[]]


def test_coalescing_keeps_newest():
    def sender(ep):
        for i in range(10):
            yield post_broadcast(env(sender=0, it=i, payload=[float(i)]))
        yield Send(1, Kind.E, np.zeros(1))

    def receiver(ep):
        yield Recv(0, Kind.E)
        got = yield drain_mailbox(Kind.V, 0)
        return [(e.iteration, e.payload.tolist()) for e in got]

    fab = SimFabric(2)
    out = fab.run([sender, receiver])
    assert out[1] == [(9, [9.0])]
    assert fab.stats.participants[1].superseded == 9
    assert fab.stats.delivered == 1


def _exchange(size, iters, delay):
    """Each rank posts V then drains, for ``iters`` iterations."""

    def prog(ep):
        got = []
        for t in range(1, iters + 1):
            yield Post(Envelope(ep.rank, Kind.V, t, ep.rank, np.full(1, t, float)), iteration=t)
            for e in (yield Drain((Kind.V,), t)):
                got.append((e.sender, e.iteration))
        return got

    fab = SimFabric(size, delay=delay)
    return fab, fab.run([prog] * size)


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_fixed_delay_tau_is_exact(d):
    fab, _ = _exchange(3, 40, DelaySchedule.fixed(d))
    taus = fab.stats.all_tau()
    assert taus and set(taus) == {d}
    assert len(taus) == fab.stats.delivered


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.integers(1, 4), st.integers(0, 3), st.integers(0, 1000))
def test_tau_accounting_uniform(size, lo, extra, seed):
    fab, _ = _exchange(size, 25, DelaySchedule.uniform(lo, lo + extra, seed=seed))
    taus = fab.stats.all_tau()
    assert len(taus) == fab.stats.delivered
    assert all(lo <= t for t in taus) and min(taus, default=1) >= 1


def test_sim_determinism():
    a = _exchange(3, 30, DelaySchedule.uniform(1, 4, seed=11))
    b = _exchange(3, 30, DelaySchedule.uniform(1, 4, seed=11))
    assert a[1] == b[1]
    assert a[0].log == b[0].log
    assert a[0].stats.all_tau() == b[0].stats.all_tau()
    c = _exchange(3, 30, DelaySchedule.uniform(1, 4, seed=12))
    assert c[0].stats.all_tau() != a[0].stats.all_tau()


def test_delay_schedule_round_trip():
    for s in (DelaySchedule.zero(), DelaySchedule.fixed(3, seed=2), DelaySchedule.uniform(1, 3, seed=4),
              DelaySchedule.per_link([[1, 2], [3, 1]])):
        assert DelaySchedule.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        DelaySchedule.uniform(3, 1)


def test_tau_summary():
    assert tau_summary([1, 2, 3]) == {"count": 3, "max": 3, "min": 1, "mean": 2.0, "std": pytest.approx(0.8164965809)}
    assert tau_summary([])["mean"] is None


def test_virtual_clock_split():
    def p(ep):
        ep.work(1e6)
        yield all_gather(Kind.U, np.ones(4))

    fab = SimFabric(2)
    fab.run([p, p])
    for s in fab.stats.participants:
        assert s.compute_s == pytest.approx(1e-3)
        assert s.comm_s > 0
        assert s.compute_s + s.comm_s <= fab.elapsed + 1e-15


# ---- TCP --------------------------------------------------------------------

def test_tcp_primitives_loopback():
    def client(ep):
        full = yield AllGather(Kind.U, np.array([float(ep.rank)]))
        part = yield Recv(2, Kind.Q)
        return full.tolist(), part.payload.tolist()

    def server(ep):
        full = yield AllGather(Kind.U, np.array([2.0]))
        yield scatter(Kind.Q, np.array([10.0, 20.0]), receivers=(0, 1))
        return full.tolist()

    fab = TcpFabric(3, timeout=10)
    out = fab.run([client, client, server])
    assert out[0] == ([0.0, 1.0, 2.0], [10.0])
    assert out[1] == ([0.0, 1.0, 2.0], [20.0])
    assert out[2] == [0.0, 1.0, 2.0]
    assert not fab.failures


def test_tcp_post_and_drain():
    def p(ep):
        yield Post(Envelope(ep.rank, Kind.V, 1, ep.rank, np.array([float(ep.rank)])))
        yield AllGather(Kind.E, np.zeros(1))  # barrier so the post has landed
        return [(e.sender, e.payload.tolist()) for e in (yield Drain((Kind.V,), 1))]

    out = TcpFabric(2, timeout=10).run([p, p])
    assert out == [[(1, [1.0])], [(0, [0.0])]]


def test_tcp_silent_peer_times_out():
    def waiting(ep):
        try:
            yield Recv(1, Kind.U)
        except PeerLost:
            return "lost"

    def silent(ep):
        return None
        yield

    assert TcpFabric(2, timeout=1.0).run([waiting, silent])[0] == "lost"
