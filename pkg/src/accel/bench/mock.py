"""Mock upstream services for the benchmarks.

:class:`MockService` holds the routes and the mutable stores; it can be
called in-process (through :class:`~accel.upstream.LocalUpstream`) or served
over HTTP with :func:`create_mock_app`.
"""

from __future__ import annotations

import json
import threading
import time
import zlib
from importlib import resources
from urllib.parse import parse_qs, urlsplit

USERS = {"alice": "secret", "bob": "hunter2"}
USERS.update({f"user{i}": f"pw{i * 7919 % 10007}" for i in range(48)})


def fixture(name: str):
    return json.loads(resources.files("accel.bench").joinpath("programs", name).read_text())


def _ok(doc) -> tuple[int, bytes]:
    return 200, json.dumps(doc).encode()


NOT_FOUND = (404, b'{"error":"not found"}')


class MockService:
    """Canned documents plus two small stores (uploads, commit statuses) and a
    version-checked account table."""

    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self.lock = threading.Lock()
        self.words = fixture("words.json")
        self.maze = fixture("maze.json")
        self.uploads: dict[str, str] = {}
        self.statuses: dict[tuple, dict] = {}
        self.accounts: dict[str, dict] = {}
        self.applied: dict[str, dict] = {}  # txid -> answer for a replayed request
        self.commits: dict[str, dict] = {}  # txid -> result of the first commit
        self.log: list = []

    # ------------------------------------------------------------ dispatch

    def __call__(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        if self.delay:
            time.sleep(self.delay)
        parts = urlsplit(path)
        segs = [s for s in parts.path.split("/") if s]
        query = {k: v[0] for k, v in parse_qs(parts.query).items()}
        with self.lock:
            return self.route(method, segs, query, body or b"")

    def route(self, method, segs, query, body) -> tuple[int, bytes]:
        if method == "GET" and segs == ["passwords.json"]:
            return _ok(USERS)
        if method == "GET" and segs == ["words.json"]:
            return _ok(self.words)
        if method == "GET" and segs == ["maze.json"]:
            return _ok(self.maze)
        if method == "POST" and len(segs) == 2 and segs[0] == "upload":
            return self.upload(segs[1], body)
        if method == "POST" and len(segs) == 5 and segs[0] == "repos" and segs[3] == "statuses":
            return self.status(f"{segs[1]}/{segs[2]}", segs[4], body)
        if method == "GET" and len(segs) == 3 and segs[:2] == ["bank", "accounts"]:
            return self.account(segs[2], query.get("txid"))
        if method == "POST" and segs == ["bank", "commit"]:
            return self.commit(body)
        return NOT_FOUND

    # -------------------------------------------------------------- routes

    def upload(self, name: str, body: bytes):
        text = body.decode(errors="replace")
        self.uploads[name] = text
        return _ok({"name": name, "length": len(text)})

    def status(self, repo: str, sha: str, body: bytes):
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            return 422, b'{"error":"invalid JSON"}'
        if not isinstance(doc, dict) or doc.get("state") not in ("success", "failure", "pending"):
            return 422, b'{"error":"invalid state"}'
        context = doc.get("context", "default")
        key = (repo, sha, context)
        ident = zlib.crc32(json.dumps([repo, sha, context, doc["state"]]).encode())
        rec = {"id": ident, "state": doc["state"], "context": context,
               "target_url": doc.get("target_url"), "description": doc.get("description")}
        self.statuses[key] = rec
        return _ok(rec)

    def account(self, name: str, txid: str | None):
        acct = self.accounts.get(name, {"balance": 0, "version": 0})
        applied = self.applied.get(txid) if txid is not None else None
        return _ok({"balance": acct["balance"], "version": acct["version"], "applied": applied})

    def commit(self, body: bytes):
        try:
            doc = json.loads(body)
            name, txid = doc["account"], doc["txid"]
            expected, balance = doc["expectedVersion"], doc["balance"]
        except (json.JSONDecodeError, KeyError, TypeError):
            return 422, b'{"error":"invalid commit"}'
        if txid in self.applied:
            # replay of an applied transaction: report the original outcome
            return _ok(self.commits[txid])
        acct = self.accounts.get(name, {"balance": 0, "version": 0})
        if acct["version"] != expected:
            return _ok({"ok": False, "conflict": True, "version": acct["version"]})
        if doc.get("refused") is True:
            # the refusal is final for this txid; the account is untouched
            result = {"ok": False, "refused": True, "balance": acct["balance"]}
            self.commits[txid] = result
            self.applied[txid] = {"ok": False, "error": "insufficient funds", "balance": acct["balance"]}
            self.log.append((txid, name, None))
            return _ok(result)
        new = {"balance": balance, "version": acct["version"] + 1}
        self.accounts[name] = new
        result = {"ok": True, "balance": balance, "version": new["version"]}
        # what a replayed request should answer
        self.commits[txid] = result
        self.applied[txid] = {"ok": True, "account": name, "balance": balance,
                              "version": new["version"]}
        self.log.append((txid, name, balance))
        return _ok(result)

    def snapshot(self) -> str:
        """Canonical dump of every mutable store (used by idempotency checks)."""
        return json.dumps({
            "uploads": self.uploads,
            "statuses": {"|".join(k): v for k, v in sorted(self.statuses.items())},
            "accounts": self.accounts,
            "applied": self.applied,
        }, sort_keys=True)


def create_mock_app(service: MockService | None = None):
    from starlette.applications import Starlette
    from starlette.concurrency import run_in_threadpool
    from starlette.requests import Request
    from starlette.responses import Response
    from starlette.routing import Route

    service = service or MockService(delay=0.001)

    async def handle(request: Request):
        body = await request.body()
        path = request.url.path
        if request.url.query:
            path += "?" + request.url.query
        status, raw = await run_in_threadpool(service, request.method, path, body)
        return Response(raw, status_code=status, media_type="application/json")

    return Starlette(routes=[Route("/{path:path}", handle, methods=["GET", "POST"])])
