"""Message fabric: envelopes, wire frames, simulated and TCP backends."""
from .delays import PRNG_NAME, DelaySchedule
from .envelope import Envelope, Kind, decode_frame, encode_frame
from .ops import (AllGather, Drain, Endpoint, Post, Recv, Scatter, Send, all_gather, drain_mailbox,
                  post_broadcast, receive_scatter, scatter)
from .sim import CostModel, SimFabric
from .stats import FabricStats, tau_summary
from .tcp import TcpFabric

tcp_frame_encode = encode_frame
tcp_frame_decode = decode_frame

BACKENDS = ("sim", "tcp")


def make_fabric(backend, size, *, delay=None, cost=None, addresses=None, timeout=30.0, kill=None):
    """Build a fabric by backend name ('sim' or 'tcp')."""
    if backend == "sim":
        return SimFabric(size, delay=delay, cost=cost, kill=kill)
    if backend == "tcp":
        return TcpFabric(size, addresses=addresses, timeout=timeout)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
