"""Requests, responses and the asynchronous operations behind the builtins.

The interpreter and the trace executor both go through :func:`perform` and
:func:`response_for`, so an event means the same thing in either sandbox.
"""

from __future__ import annotations

import http.client
import json
from dataclasses import dataclass, field
from typing import Protocol

from .errors import DynTypeError
from .syntax import UNDEFINED
from .values import (
    Heap, JSObject, decode_body, encode_response, json_stringify, to_string, type_tag,
)


@dataclass
class Request:
    method: str = "POST"
    path: str = "/"
    body: bytes = b""

    @classmethod
    def json(cls, doc, path: str = "/", method: str = "POST") -> "Request":
        return cls(method, path, json.dumps(doc).encode())


@dataclass
class Response:
    status: int
    body: bytes
    content_type: str = "application/json"
    headers: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        return self.body.decode()


class Upstream(Protocol):
    """Where ``get`` and ``post`` send their requests."""

    def request(self, method: str, url: str, body: bytes | None) -> tuple[int, bytes]:
        ...


class NoUpstream:
    """Every upstream request fails; callbacks receive ``undefined``."""

    def request(self, method, url, body):
        raise ConnectionError("no upstream configured")


EVENTS = ("get", "post", "listen")


def request_value(req: Request, heap: Heap) -> JSObject:
    """The guest value handed to the ``listen`` callback."""
    return heap.new_object({
        "method": req.method,
        "path": req.path,
        "body": decode_body(req.body, heap),
    })


def _fetch(upstream: Upstream, method: str, url: str, body: bytes | None, heap: Heap):
    try:
        status, raw = upstream.request(method, url, body)
    except (OSError, http.client.HTTPException):
        return UNDEFINED
    if status >= 400:
        return UNDEFINED
    return decode_body(raw, heap)


def perform(ev: str, arg, heap: Heap, upstream: Upstream, req: Request):
    """Carry out event ``ev`` now and return the payload for its callback."""
    if ev == "listen":
        return request_value(req, heap)
    if ev == "get":
        return _fetch(upstream, "GET", to_string(arg), None, heap)
    if ev == "post":
        if not isinstance(arg, JSObject):
            raise DynTypeError(f"post expects an object with url and body, got {type_tag(arg)}")
        url = to_string(arg.props.get("url", UNDEFINED))
        body = arg.props.get("body", UNDEFINED)
        if isinstance(body, str):
            raw = body.encode()
        else:
            raw = (json_stringify(body) or "").encode()
        return _fetch(upstream, "POST", url, raw, heap)
    raise DynTypeError(f"unknown event {ev!r}")


def response_for(value) -> Response:
    body, ctype = encode_response(value)
    return Response(200, body, ctype)
