"""The six benchmark functions with their request generators and oracles.

Each generator draws from a fixed distribution chosen so that the warm-up
requests visit every path the generator can produce later. The adversarial
bodies each reach a validation branch the generator never produces, so they
are the inputs that make a compiled trace bounce.
"""

from __future__ import annotations

import json
import random
import string
from collections import deque
from dataclasses import dataclass
from functools import cache
from importlib import resources
from typing import Callable, Iterator

from ..events import Request
from .mock import USERS, fixture


def program_source(name: str) -> str:
    return resources.files("accel.bench").joinpath("programs", f"{name}.js").read_text()


@dataclass
class BenchmarkDef:
    name: str
    source: str
    generator: Callable[[random.Random, list], dict]
    adversarial: list
    oracle: Callable | None = None  # list of bodies -> list of expected response documents
    description: str = ""
    text_response: bool = False

    def bodies(self, seed: int, n: int) -> list:
        rng = random.Random(seed)
        history: list = []
        out = []
        for _ in range(n):
            body = self.generator(rng, history)
            history.append(body)
            out.append(body)
        return out

    def requests(self, seed: int, n: int) -> list[Request]:
        return [Request.json(b) for b in self.bodies(seed, n)]

    def stream(self, seed: int) -> Iterator[Request]:
        rng = random.Random(seed)
        history: list = []
        while True:
            body = self.generator(rng, history)
            history.append(body)
            if len(history) > 1000:
                del history[:500]
            yield Request.json(body)


def _word(rng: random.Random, lo=3, hi=10) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


# ---------------------------------------------------------------- authorize

def _authorize(rng, history):
    user = rng.choice(sorted(USERS))
    if rng.random() < 0.8:
        return {"username": user, "password": USERS[user]}
    if rng.random() < 0.5:
        return {"username": user, "password": _word(rng)}
    return {"username": _word(rng), "password": _word(rng)}


def _authorize_oracle(bodies):
    return ["ok" if USERS.get(b["username"]) == b["password"] else "error" for b in bodies]


AUTHORIZE_ADVERSARIAL = [
    [1, 2, 3],
    {"password": "secret"},
    {"username": "alice"},
    {"username": "x" * 65, "password": "secret"},
    "alice:secret",
]


# ------------------------------------------------------------------- upload

def _upload(rng, history):
    name = _word(rng) + rng.choice([".txt", ".csv", ".json", ""])
    size = rng.choice([0, rng.randint(1, 64), rng.randint(64, 4096)])
    content = "".join(rng.choice(string.printable[:62] + " \n") for _ in range(size))
    return {"name": name, "content": content}


def _upload_oracle(bodies):
    return [{"ok": True, "name": b["name"], "bytes": len(b["content"])} for b in bodies]


UPLOAD_ADVERSARIAL = [
    None,
    {"content": "hello"},
    {"name": "a.txt"},
    {"name": "big.txt", "content": "x" * 5000},
    {"name": "dir/a.txt", "content": "hello"},
]


# ------------------------------------------------------------------- status

def _status(rng, history):
    body = {
        "repo": f"{_word(rng, 3, 8)}/{_word(rng, 3, 8)}",
        "sha": "".join(rng.choice("0123456789abcdef") for _ in range(40)),
        "state": rng.choice(["success", "failure", "pending"]),
    }
    if rng.random() < 0.5:
        body["url"] = f"https://ci.example.com/build/{rng.randint(1, 10**6)}"
    return body


STATUS_ADVERSARIAL = [
    "status",
    {"repo": "noslash", "sha": "0123456789", "state": "success"},
    {"repo": "a/b", "sha": "012", "state": "success"},
    {"repo": "a/b", "sha": "0123456789", "state": "error"},
    {"repo": "a/b", "sha": "0123456789", "state": "success", "url": 17},
]


# ------------------------------------------------------------------ banking

BANK_ACCOUNTS = [f"acct{i}" for i in range(8)]


def _banking(rng, history):
    if history and rng.random() < 0.1:
        return dict(rng.choice(history))  # replay of an earlier transaction
    op = rng.choices(["deposit", "withdraw", "balance"], weights=[5, 4, 1])[0]
    body = {"account": rng.choice(BANK_ACCOUNTS), "op": op, "txid": f"tx{rng.getrandbits(48):012x}"}
    if op != "balance":
        body["amount"] = rng.choice([rng.randint(1, 200), rng.randint(1, 400) / 4])
    return body


class BankModel:
    """Sequential reference for the banking function and its commit store."""

    def __init__(self):
        self.accounts: dict[str, tuple] = {}
        self.applied: dict[str, dict] = {}

    def apply(self, body: dict) -> dict:
        name, op, txid = body["account"], body["op"], body["txid"]
        if txid in self.applied:
            return self.applied[txid]
        balance, version = self.accounts.get(name, (0, 0))
        if op == "balance":
            return {"ok": True, "account": name, "balance": balance}
        amount = body["amount"]
        if op == "deposit":
            balance = balance + amount
        elif amount > balance:
            out = {"ok": False, "error": "insufficient funds", "balance": balance}
            self.applied[txid] = out
            return out
        else:
            balance = balance - amount
        self.accounts[name] = (balance, version + 1)
        out = {"ok": True, "account": name, "balance": balance, "version": version + 1}
        self.applied[txid] = out
        return out


def _banking_oracle(bodies):
    model = BankModel()
    return [model.apply(b) for b in bodies]


BANKING_ADVERSARIAL = [
    42,
    {"op": "deposit", "amount": 5, "txid": "adv1"},
    {"account": "acct0", "op": "transfer", "amount": 5, "txid": "adv2"},
    {"account": "acct0", "op": "deposit", "amount": -5, "txid": "adv3"},
    {"account": "acct0", "op": "deposit", "amount": 5},
]


# ------------------------------------------------------------- autocomplete

@cache
def _words() -> list:
    return fixture("words.json")


def _autocomplete(rng, history):
    words = _words()
    r = rng.random()
    if r < 0.7:
        w = rng.choice(words)
        prefix = w[: rng.randint(1, min(4, len(w)))]
    elif r < 0.85:
        prefix = _word(rng, 1, 5)
    else:
        prefix = rng.choice(words)[:2].upper()
    body = {"prefix": prefix}
    if rng.random() < 0.6:
        body["limit"] = rng.randint(1, 50)
    return body


def _autocomplete_oracle(bodies):
    words = _words()
    out = []
    for b in bodies:
        prefix = b["prefix"].lower()
        limit = b.get("limit", 10)
        out.append({"prefix": prefix, "completions": [w for w in words if w.startswith(prefix)][:limit]})
    return out


AUTOCOMPLETE_ADVERSARIAL = [
    "ba",
    {"limit": 3},
    {"prefix": ""},
    {"prefix": "ba", "limit": 500},
    {"prefix": "ba", "limit": "3"},
]


# --------------------------------------------------------------------- maze

@cache
def maze_cells() -> list:
    maze = fixture("maze.json")
    w, h, grid = maze["width"], maze["height"], maze["grid"]
    return [(r, c) for r in range(h) for c in range(w) if grid[r * w + c] != "#"]


def bfs_distance(maze: dict, start, goal) -> int:
    """Shortest path length over open cells, or -1."""
    w, h, grid = maze["width"], maze["height"], maze["grid"]
    rows = [grid[r * w:(r + 1) * w] for r in range(h)]
    seen = {tuple(start): 0}
    todo = deque([tuple(start)])
    while todo:
        r, c = todo.popleft()
        if (r, c) == tuple(goal):
            return seen[(r, c)]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and rows[nr][nc] != "#" and (nr, nc) not in seen:
                seen[(nr, nc)] = seen[(r, c)] + 1
                todo.append((nr, nc))
    return -1


def _maze(rng, history):
    cells = maze_cells()
    start = list(rng.choice(cells))
    goal = list(start if rng.random() < 0.05 else rng.choice(cells))
    return {"start": start, "goal": goal}


def _maze_oracle(bodies):
    maze = fixture("maze.json")
    return [{"start": b["start"], "goal": b["goal"], "distance": bfs_distance(maze, b["start"], b["goal"])}
            for b in bodies]


MAZE_ADVERSARIAL = [
    {"start": [1, 1]},
    {"start": [-1, 1], "goal": [1, 1]},
    {"start": [1, 1], "goal": [1, 40]},
    {"start": [0, 0], "goal": [1, 1]},
    {"start": [1, 1], "goal": [0, 0]},
]


BENCHMARKS: dict[str, BenchmarkDef] = {}


def _register(name, gen, adversarial, oracle, description, text=False):
    BENCHMARKS[name] = BenchmarkDef(name, program_source(name), gen, adversarial, oracle, description, text)


_register("authorize", _authorize, AUTHORIZE_ADVERSARIAL, _authorize_oracle, text=True, description=
          "password check against a fetched password table; 80% valid logins")
_register("upload", _upload, UPLOAD_ADVERSARIAL, _upload_oracle,
          "stores the request body in the upload store")
_register("status", _status, STATUS_ADVERSARIAL, None,
          "posts a commit status; each state equally likely, half with an explicit url")
_register("banking", _banking, BANKING_ADVERSARIAL, _banking_oracle,
          "deposits/withdrawals over 8 accounts with version-checked commits; 10% replays")
_register("autocomplete", _autocomplete, AUTOCOMPLETE_ADVERSARIAL, _autocomplete_oracle,
          "prefix completion over a 600-word dictionary")
_register("maze", _maze, MAZE_ADVERSARIAL, _maze_oracle,
          "breadth-first search over a 32x32 maze between random open cells")


def get(name: str) -> BenchmarkDef:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}") from None


def decode(resp_body: bytes, text: bool):
    return resp_body.decode() if text else json.loads(resp_body)
