"""Upstream clients used by ``get`` and ``post``."""

from __future__ import annotations

import http.client
import threading
from typing import Callable
from urllib.parse import urlsplit


def _path_of(url: str) -> str:
    parts = urlsplit(url)
    if parts.scheme and parts.netloc:
        path = parts.path or "/"
        return path + (f"?{parts.query}" if parts.query else "")
    return url if url.startswith("/") else "/" + url


class HttpUpstream:
    """Sends requests over HTTP with one keep-alive connection per thread.

    Relative URLs are resolved against ``base_url``; absolute URLs to other
    hosts get a fresh connection per request.
    """

    def __init__(self, base_url: str, timeout: float = 5.0):
        base = urlsplit(base_url if "//" in base_url else "http://" + base_url)
        self.scheme = base.scheme or "http"
        self.netloc = base.netloc
        self.prefix = base.path.rstrip("/")
        self.timeout = timeout
        self._local = threading.local()

    def _connect(self, scheme: str, netloc: str) -> http.client.HTTPConnection:
        cls = http.client.HTTPSConnection if scheme == "https" else http.client.HTTPConnection
        return cls(netloc, timeout=self.timeout)

    def _conn(self) -> http.client.HTTPConnection:
        c = getattr(self._local, "conn", None)
        if c is None:
            c = self._local.conn = self._connect(self.scheme, self.netloc)
        return c

    def request(self, method: str, url: str, body: bytes | None) -> tuple[int, bytes]:
        parts = urlsplit(url)
        if parts.scheme and parts.netloc != self.netloc:
            conn = self._connect(parts.scheme, parts.netloc)
            try:
                return self._send(conn, method, _path_of(url), body)
            finally:
                conn.close()
        path = self.prefix + _path_of(url)
        try:
            return self._send(self._conn(), method, path, body)
        except (http.client.HTTPException, ConnectionError):
            # the server may have closed an idle keep-alive connection
            self.close()
            return self._send(self._conn(), method, path, body)

    @staticmethod
    def _send(conn, method, path, body) -> tuple[int, bytes]:
        conn.request(method, path, body=body)
        r = conn.getresponse()
        return r.status, r.read()

    def close(self) -> None:
        c = getattr(self._local, "conn", None)
        if c is not None:
            c.close()
            self._local.conn = None


class LocalUpstream:
    """Calls an in-process handler ``(method, path, body) -> (status, bytes)``."""

    def __init__(self, handler: Callable[[str, str, bytes | None], tuple[int, bytes]]):
        self.handler = handler

    def request(self, method: str, url: str, body: bytes | None) -> tuple[int, bytes]:
        return self.handler(method, _path_of(url), body)
