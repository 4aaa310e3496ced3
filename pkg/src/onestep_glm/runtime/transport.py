"""In-process and TCP transports carrying encoded frames.

Both transports move the same bytes: the in-process one hands the request
frame straight to :meth:`Worker.handle`, the TCP one writes it to a socket.
Results are therefore bitwise identical across transports.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from ..errors import IncompleteFrame, ProtocolError
from . import wire
from .worker import Worker

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class InProcessTransport:
    concurrent = False

    def __init__(self, worker: Worker):
        self.worker = worker

    def exchange(self, frame: bytes) -> bytes:
        return self.worker.handle(frame)

    def close(self):
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, wire.HEADER_SIZE)
    _, length = wire.parse_header(header)
    return header + _recv_exact(sock, length)


class TcpTransport:
    """One persistent connection to a worker; requests are serialized on it."""

    concurrent = True

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.address = (host, int(port))
        self.timeout = timeout
        self._sock = socket.create_connection(self.address, timeout=timeout)
        self._sock.settimeout(timeout)
        self._lock = threading.Lock()

    @classmethod
    def parse(cls, address: str, timeout: float = DEFAULT_TIMEOUT) -> "TcpTransport":
        host, _, port = address.rpartition(":")
        return cls(host or "127.0.0.1", int(port), timeout)

    def exchange(self, frame: bytes) -> bytes:
        with self._lock:
            self._sock.sendall(frame)
            return recv_frame(self._sock)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        worker: Worker = self.server.worker
        sock = self.request
        while True:
            try:
                header = _recv_exact(sock, wire.HEADER_SIZE)
            except (ConnectionError, OSError):
                return
            try:
                _, length = wire.parse_header(header)
            except (ProtocolError, IncompleteFrame) as exc:
                # framing is lost; answer once and drop the connection
                log.info("protocol error from %s: %s", self.client_address, exc)
                reply = wire.encode_frame(wire.ErrorResponse(wire.ERR_MALFORMED, str(exc)))
                try:
                    sock.sendall(reply)
                except OSError:
                    pass
                return
            try:
                frame = header + _recv_exact(sock, length)
            except (ConnectionError, OSError):
                return
            log.info("request type 0x%02x (%d bytes)", header[5], len(frame))
            try:
                sock.sendall(worker.handle(frame))
            except OSError:
                return


class WorkerServer(socketserver.ThreadingTCPServer):
    """TCP front end for a :class:`Worker`; one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, worker: Worker, host: str = "127.0.0.1", port: int = 0):
        self.worker = worker
        super().__init__((host, port), _FrameHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self, poll_interval: float = 0.05) -> threading.Thread:
        # short poll so stop() returns quickly
        thread = threading.Thread(target=self.serve_forever, args=(poll_interval,), daemon=True)
        thread.start()
        return thread

    def stop(self):
        self.shutdown()
        self.server_close()
