"""Transports moving encoded packets between endpoints.

Endpoints are ranks ``0..n_ranks-1`` followed by one broker per node when
broker routing is on.  All endpoints run as threads of one process and work
in lockstep rounds (one round per step in flat mode, three with brokers):

* ``send(src, dst, data)`` - reliable, in order per ``(src, dst)``;
* ``sync(ep)`` - barrier closing the endpoint's current round;
* ``receive_all(ep, step)`` - every ``(src, data)`` sent to ``ep`` during
  the round just closed, sorted by source.  Any packet stamped with another
  step is a protocol violation (:class:`StepSkew`).
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from collections import defaultdict

from .codec import peek_step


class TransportError(RuntimeError):
    pass


class StepSkew(TransportError):
    pass


class Transport:
    n_endpoints: int

    def send(self, src: int, dst: int, data: bytes) -> None:
        raise NotImplementedError

    def sync(self, ep: int) -> None:
        raise NotImplementedError

    def receive_all(self, ep: int, step: int) -> list[tuple[int, bytes]]:
        raise NotImplementedError

    def abort(self) -> None:
        pass

    def close(self) -> None:
        pass


def _check_steps(ep: int, step: int, got: list[tuple[int, bytes]]) -> None:
    for src, data in got:
        if peek_step(data) != step:
            raise StepSkew(f"endpoint {ep} at step {step} got a packet for step {peek_step(data)} from {src}")


class LoopbackTransport(Transport):
    """In-memory mailboxes keyed by (destination, round)."""

    def __init__(self, n_endpoints: int, timeout: float | None = 600.0):
        self.n_endpoints = n_endpoints
        self._lock = threading.Lock()
        self._boxes: dict[tuple[int, int], list[tuple[int, bytes]]] = defaultdict(list)
        self._round = [0] * n_endpoints
        self._barrier = threading.Barrier(n_endpoints, timeout=timeout)

    def send(self, src: int, dst: int, data: bytes) -> None:
        if not 0 <= dst < self.n_endpoints:
            raise TransportError(f"no endpoint {dst}")
        if src == dst:
            raise TransportError("self-delivery never goes through the transport")
        with self._lock:
            self._boxes[(dst, self._round[src])].append((src, data))

    def sync(self, ep: int) -> None:
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError as exc:
            raise TransportError("barrier broken, a peer failed") from exc
        self._round[ep] += 1

    def receive_all(self, ep: int, step: int) -> list[tuple[int, bytes]]:
        with self._lock:
            got = self._boxes.pop((ep, self._round[ep] - 1), [])
        got.sort(key=lambda item: item[0])  # stable: keeps per-source order
        _check_steps(ep, step, got)
        return got

    def abort(self) -> None:
        self._barrier.abort()


_FRAME = struct.Struct("<I")


class SocketTransport(Transport):
    """TCP loopback backend: one connection per endpoint pair.

    Each frame is a 4-byte little-endian length followed by one packet; a
    zero-length frame marks the end of a sender's round.  Rounds an endpoint
    closed without receiving are skipped on the next ``receive_all``.
    """

    def __init__(self, n_endpoints: int, host: str = "127.0.0.1", timeout: float | None = 600.0):
        self.n_endpoints = n_endpoints
        self.timeout = timeout
        self._barrier = threading.Barrier(n_endpoints, timeout=timeout)
        self._socks: dict[tuple[int, int], socket.socket] = {}
        self._inbox: dict[tuple[int, int], queue.Queue] = {}
        self._readers: list[threading.Thread] = []
        self._send_locks: dict[tuple[int, int], threading.Lock] = {}
        self._round = [0] * n_endpoints
        self._consumed: dict[tuple[int, int], int] = defaultdict(int)
        self._connect_mesh(host)

    def _connect_mesh(self, host: str) -> None:
        n = self.n_endpoints
        for a in range(n):
            for b in range(a + 1, n):
                srv = socket.socket()
                srv.bind((host, 0))
                srv.listen(1)
                cli = socket.create_connection(srv.getsockname())
                acc, _ = srv.accept()
                srv.close()
                for s in (cli, acc):
                    s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                # a writes on cli, b reads on acc and vice versa
                self._socks[(a, b)] = cli
                self._socks[(b, a)] = acc
        for (src, dst), sock in self._socks.items():
            self._send_locks[(src, dst)] = threading.Lock()
            q: queue.Queue = queue.Queue()
            # frames written by src on sock arrive on the peer socket owned by dst
            self._inbox[(dst, src)] = q
        for (src, dst), sock in self._socks.items():
            peer = self._socks[(dst, src)]
            t = threading.Thread(target=self._reader, args=(peer, self._inbox[(dst, src)]), daemon=True)
            t.start()
            self._readers.append(t)

    @staticmethod
    def _read_exact(sock: socket.socket, n: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return bytes(buf)

    def _reader(self, sock: socket.socket, q: queue.Queue) -> None:
        try:
            while True:
                head = self._read_exact(sock, _FRAME.size)
                if head is None:
                    break
                (length,) = _FRAME.unpack(head)
                body = self._read_exact(sock, length) if length else b""
                if body is None:
                    break
                q.put(body)
        except OSError:
            pass
        q.put(None)

    def _write(self, src: int, dst: int, data: bytes) -> None:
        with self._send_locks[(src, dst)]:
            self._socks[(src, dst)].sendall(_FRAME.pack(len(data)) + data)

    def send(self, src: int, dst: int, data: bytes) -> None:
        if src == dst:
            raise TransportError("self-delivery never goes through the transport")
        self._write(src, dst, data)

    def sync(self, ep: int) -> None:
        for dst in range(self.n_endpoints):
            if dst != ep:
                self._write(ep, dst, b"")
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError as exc:
            raise TransportError("barrier broken, a peer failed") from exc
        self._round[ep] += 1

    def _next_frame(self, ep: int, src: int) -> bytes:
        try:
            data = self._inbox[(ep, src)].get(timeout=self.timeout)
        except queue.Empty as exc:
            raise TransportError(f"timed out waiting for endpoint {src}") from exc
        if data is None:
            raise TransportError(f"connection from endpoint {src} closed")
        return data

    def receive_all(self, ep: int, step: int) -> list[tuple[int, bytes]]:
        want = self._round[ep] - 1
        got = []
        for src in range(self.n_endpoints):
            if src == ep:
                continue
            key = (ep, src)
            while self._consumed[key] <= want:
                data = self._next_frame(ep, src)
                if data == b"":
                    self._consumed[key] += 1
                elif self._consumed[key] == want:
                    got.append((src, data))
                else:
                    raise StepSkew(f"endpoint {ep} skipped round {self._consumed[key]} holding data from {src}")
        _check_steps(ep, step, got)
        return got

    def abort(self) -> None:
        self._barrier.abort()

    def close(self) -> None:
        for s in self._socks.values():
            try:
                s.close()
            except OSError:
                pass


def make_transport(backend: str, n_endpoints: int) -> Transport:
    if backend == "loopback":
        return LoopbackTransport(n_endpoints)
    if backend == "socket":
        return SocketTransport(n_endpoints)
    raise ValueError(f"unknown transport backend {backend!r}")
