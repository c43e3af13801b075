"""TCP fabric: one thread per participant, frames over real sockets.

Every directed pair of participants gets two connections, one for the
blocking traffic (collectives, send/recv, scatter) and one for posted
envelopes. A reader thread per incoming connection decodes frames; blocking
frames queue up FIFO per sender, posted frames overwrite a one-slot mailbox
per ``(sender, kind)`` stream. The first frame on each connection is a
handshake: kind E, payload ``[channel]``.

Message age on this backend is counted from the receiver iteration in
progress when a posted frame was decoded to the one in which it is drained.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import BackpressureDropped, FabricError, FrameError, PeerLost
from ..partition import assemble
from .envelope import HEADER_SIZE, Envelope, Kind, decode_frame, decode_header, encode_frame
from .ops import AllGather, Drain, Endpoint, Post, Recv, Scatter, Send, flat_shape, scatter_slices, unflatten
from .stats import FabricStats

logger = logging.getLogger(__name__)

SYNC, ASYNC = 0, 1
_EOF = object()


def _read_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock):
    """Read one frame from ``sock``; ``None`` on clean EOF."""
    head = _read_exact(sock, HEADER_SIZE)
    if head is None:
        return None
    *_, count = decode_header(head)
    body = _read_exact(sock, 8 * count)
    if body is None:
        raise FrameError("connection closed inside a frame")
    return decode_frame(head + body)


def parse_address(addr):
    host, _, port = str(addr).rpartition(":")
    return host or "127.0.0.1", int(port)


@dataclass
class TcpEndpoint(Endpoint):
    """One participant's sockets, queues and mailbox."""

    timeout: float = 30.0
    iteration: int = 0
    stats: FabricStats = None
    _out: dict = field(default_factory=dict, repr=False)
    _queues: dict = field(default_factory=dict, repr=False)
    _mailbox: dict = field(default_factory=dict, repr=False)
    _consumed: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _readers: list = field(default_factory=list, repr=False)
    _socks: list = field(default_factory=list, repr=False)
    # stashed blocking frames that arrived before they were asked for
    _stash: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for peer in range(self.size):
            if peer != self.rank:
                self._queues[peer] = queue.Queue()
                self._stash[peer] = []

    @property
    def pstats(self):
        return self.stats.participants[self.rank]

    # ---- wiring ------------------------------------------------------
    def connect(self, addresses):
        for peer in range(self.size):
            if peer == self.rank:
                continue
            for channel in (SYNC, ASYNC):
                s = socket.create_connection(parse_address(addresses[peer]), timeout=self.timeout)
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                s.settimeout(None)
                s.sendall(encode_frame(Envelope(self.rank, Kind.E, 0, 0, [float(channel)])))
                self._out[(peer, channel)] = s
                self._socks.append(s)

    def attach(self, sock):
        """Start a reader for an accepted connection."""
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        hello = read_frame(sock)
        if hello is None or hello.kind != Kind.E or hello.payload.size != 1:
            raise FrameError("bad handshake frame")
        channel = int(hello.payload[0])
        t = threading.Thread(target=self._reader, args=(sock, hello.sender, channel), daemon=True)
        self._socks.append(sock)
        self._readers.append(t)
        t.start()

    def _reader(self, sock, peer, channel):
        try:
            while True:
                env = read_frame(sock)
                if env is None:
                    break
                if channel == SYNC:
                    self._queues[peer].put(env)
                else:
                    with self._lock:
                        key = (peer, env.kind)
                        if key in self._mailbox:
                            self.pstats.superseded += 1
                        self._mailbox[key] = (env, self.iteration)
        except (OSError, FrameError) as exc:
            logger.debug("reader %d<-%d stopped: %r", self.rank, peer, exc)
        finally:
            if channel == SYNC:
                self._queues[peer].put(_EOF)

    def close(self):
        for s in self._socks:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()

    # ---- primitives --------------------------------------------------
    def _send_env(self, dest, env, channel=SYNC):
        frame = encode_frame(env)
        try:
            self._out[(dest, channel)].sendall(frame)
        except OSError as exc:
            if channel == ASYNC:
                # peer already gone; posted data is best effort
                raise BackpressureDropped(f"post to rank {dest} dropped: {exc}") from exc
            raise PeerLost(f"rank {self.rank} lost rank {dest} while sending: {exc}") from exc
        self.pstats.sent += 1
        self.pstats.bytes_sent += len(frame)

    def _recv_env(self, src, kind):
        stash = self._stash[src]
        for i, env in enumerate(stash):
            if env.kind == kind:
                return stash.pop(i)
        deadline = time.monotonic() + self.timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise PeerLost(f"rank {self.rank} timed out after {self.timeout}s waiting for {kind.name} from {src}")
            try:
                env = self._queues[src].get(timeout=left)
            except queue.Empty:
                continue
            if env is _EOF:
                self._queues[src].put(_EOF)
                raise PeerLost(f"rank {src} closed its connection to rank {self.rank}")
            self.pstats.received += 1
            if env.kind == kind:
                return env
            stash.append(env)

    def execute(self, op):
        if getattr(op, "iteration", None) is not None:
            self.iteration = op.iteration
        if isinstance(op, AllGather):
            block = np.asarray(op.block, dtype=np.float64)
            env = Envelope(self.rank, op.kind, max(op.iteration, 0), self.rank, block)
            for peer in range(self.size):
                if peer != self.rank:
                    self._send_env(peer, env)
            trailing = flat_shape(block)
            parts = [(self.rank, block)]
            for peer in range(self.size):
                if peer != self.rank:
                    got = self._recv_env(peer, op.kind)
                    parts.append((peer, unflatten(got.payload, trailing)))
            return assemble(parts, self.size)
        if isinstance(op, Send):
            bi = self.rank if op.block_index is None else op.block_index
            self._send_env(op.dest, Envelope(self.rank, op.kind, max(op.iteration, 0), bi, op.payload))
            return None
        if isinstance(op, Scatter):
            parts = scatter_slices(op.full, len(op.receivers))
            for j, (dest, part) in enumerate(zip(op.receivers, parts)):
                self._send_env(dest, Envelope(self.rank, op.kind, max(op.iteration, 0), j, part))
            return None
        if isinstance(op, Recv):
            return self._recv_env(op.src, op.kind)
        if isinstance(op, Post):
            for peer in range(self.size):
                if peer != self.rank:
                    try:
                        self._send_env(peer, op.envelope, ASYNC)
                    except BackpressureDropped as exc:
                        logger.debug("%s", exc)
            return None
        if isinstance(op, Drain):
            out = []
            with self._lock:
                for key in sorted(self._mailbox, key=lambda k: (k[0], int(k[1]))):
                    if key[1] not in op.kinds:
                        continue
                    env, stamp = self._mailbox.pop(key)
                    last = self._consumed.get(key)
                    if last is not None and env.iteration < last:
                        self.pstats.superseded += 1
                        continue
                    self._consumed[key] = env.iteration
                    tau = max(op.iteration - stamp + 1, 1)
                    self.stats.record_tau(self.rank, env.sender, env.kind, tau)
                    self.pstats.received += 1
                    self.pstats.drained += 1
                    out.append(env)
            return out
        raise FabricError(f"rank {self.rank} yielded an unknown request {op!r}")


class TcpFabric:
    """Runs one program per rank on loopback (or given local addresses).

    Args:
        size: participant count.
        addresses: optional ``host:port`` per rank to bind; ephemeral
            loopback ports when omitted.
        timeout: seconds a blocking receive waits before ``PeerLost``.
    """

    name = "tcp"
    clock_kind = "wall"

    def __init__(self, size: int, addresses=None, timeout: float = 30.0):
        if size < 1:
            raise ValueError("fabric needs at least one participant")
        if addresses is not None and len(addresses) != size:
            raise ValueError(f"need {size} addresses, got {len(addresses)}")
        self.size = size
        self.addresses = list(addresses) if addresses else None
        self.timeout = timeout
        self.stats = FabricStats(size)
        self.failures: dict = {}
        self.endpoints = []
        self.elapsed = 0.0

    def _listen(self):
        listeners, addrs = [], []
        for r in range(self.size):
            host, port = parse_address(self.addresses[r]) if self.addresses else ("127.0.0.1", 0)
            ls = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            ls.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            ls.bind((host, port))
            ls.listen(2 * self.size)
            listeners.append(ls)
            addrs.append("%s:%d" % ls.getsockname()[:2])
        return listeners, addrs

    def run(self, programs):
        if len(programs) != self.size:
            raise ValueError(f"expected {self.size} programs, got {len(programs)}")
        listeners, addrs = self._listen()
        self.endpoints = [TcpEndpoint(r, self.size, timeout=self.timeout, stats=self.stats) for r in range(self.size)]

        def accept_all(r):
            ls = listeners[r]
            ls.settimeout(self.timeout)
            for _ in range(2 * (self.size - 1)):
                sock, _ = ls.accept()
                sock.settimeout(None)
                self.endpoints[r].attach(sock)

        acceptors = [threading.Thread(target=accept_all, args=(r,), daemon=True) for r in range(self.size)]
        for t in acceptors:
            t.start()
        for ep in self.endpoints:
            ep.connect(addrs)
        for t in acceptors:
            t.join()
        for ls in listeners:
            ls.close()

        results = [None] * self.size
        t0 = time.monotonic()
        for ep in self.endpoints:
            ep._t0 = t0

        def worker(r):
            ep = self.endpoints[r]
            p = self.stats.participants[r]
            gen = programs[r](ep)
            send_val, throw = None, None
            mark = time.monotonic()
            try:
                while True:
                    try:
                        op = gen.throw(throw) if throw is not None else gen.send(send_val)
                    except StopIteration as stop:
                        results[r] = stop.value
                        break
                    now = time.monotonic()
                    p.compute_s += now - mark
                    throw = None
                    try:
                        send_val = ep.execute(op)
                    except (PeerLost, FrameError) as exc:
                        send_val, throw = None, exc
                    mark = time.monotonic()
                    p.comm_s += mark - now
            except Exception as exc:
                self.failures[r] = exc
                ep.close()
            finally:
                p.compute_s += max(time.monotonic() - mark, 0.0)

        threads = [threading.Thread(target=worker, args=(r,), name=f"fedot-rank{r}") for r in range(self.size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.elapsed = time.monotonic() - t0
        for ep in self.endpoints:
            ep.close()
        return results
