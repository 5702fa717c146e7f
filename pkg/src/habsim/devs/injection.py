"""External event injection for hybrid runs.

Events arrive as newline-delimited text on a local TCP socket or a stream
(stdin). Each line is parsed with the supplied ``parse`` callable and queued
for the paced coordinator, which wakes up as soon as something is queued.
"""

from __future__ import annotations

import logging
import queue
import socketserver
import threading
from typing import Any, Callable, TextIO

log = logging.getLogger(__name__)

_CLOSE = object()


class Injector:
    def __init__(self, parse: Callable[[str], Any] | None = None):
        self.parse = parse
        self.closed = False
        self.errors: list[tuple[str, str]] = []
        self._q: queue.Queue = queue.Queue()
        self._server: socketserver.TCPServer | None = None

    def put(self, item: Any) -> None:
        if isinstance(item, str):
            line = item.strip()
            if not line or line.startswith("#"):
                return
            try:
                item = self.parse(line) if self.parse else line
            except Exception as exc:
                log.warning("unparsable injected line %r: %s", line, exc)
                self.errors.append((line, str(exc)))
                return
        self._q.put(item)

    def close(self) -> None:
        self._q.put(_CLOSE)

    def get(self, timeout: float | None) -> Any | None:
        """Next injected item, or None when ``timeout`` elapses or the injector closes."""
        if self.closed:
            return None
        try:
            item = self._q.get(timeout=timeout) if timeout is None or timeout > 0 else self._q.get_nowait()
        except queue.Empty:
            return None
        if item is _CLOSE:
            self.closed = True
            self.shutdown()
            return None
        return item

    def read_stream(self, stream: TextIO, close_at_eof: bool = True) -> threading.Thread:
        def pump():
            for line in stream:
                self.put(line)
            if close_at_eof:
                self.close()

        th = threading.Thread(target=pump, name="inject-stream", daemon=True)
        th.start()
        return th

    def serve_tcp(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Listen for event lines on ``host:port``; returns the bound address."""
        injector = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    injector.put(raw.decode("utf-8", errors="replace"))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        threading.Thread(target=self._server.serve_forever, name="inject-tcp", daemon=True).start()
        return self._server.server_address[:2]

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None


def send_lines(lines, host: str = "127.0.0.1", port: int = 7777, timeout: float = 5.0) -> int:
    """Client side of the TCP transport; returns the number of lines sent."""
    import socket

    n = 0
    with socket.create_connection((host, port), timeout=timeout) as sock:
        for line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            sock.sendall(line.encode("utf-8") + b"\n")
            n += 1
    return n
