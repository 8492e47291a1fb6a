"""The trace language: trace trees, handlers, handler tables, JSON form.

Trace nodes are immutable. Structural equality (``==``) is the notion of
"same trace" used throughout: by the builder to detect divergence, by the
golden tests, and by the re-trace idempotence check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

from .errors import AccelError
from .syntax import UNDEFINED


class TraceFormatError(AccelError):
    pass


# ------------------------------------------------------------------- nodes


def _const_key(v):
    # type-strict identity: 1, 1.5, True and "1" are different constants and
    # NaN equals itself so re-tracing a NaN literal is not a divergence
    if isinstance(v, float):
        return ("float", "nan" if math.isnan(v) else repr(v))
    return (type(v).__name__, v)


@dataclass(frozen=True, eq=False)
class Const:
    value: Any

    def __eq__(self, other):
        return isinstance(other, Const) and _const_key(self.value) == _const_key(other.value)

    def __hash__(self):
        return hash(_const_key(self.value))


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class UnOp:
    op: str
    operand: Any


@dataclass(frozen=True)
class Cond:
    test: Any
    then: Any
    orelse: Any


@dataclass(frozen=True)
class Index:
    obj: Any
    key: Any


@dataclass(frozen=True)
class ObjectLit:
    fields: tuple  # ((name, trace), ...)


@dataclass(frozen=True)
class ArrayLit:
    items: tuple


@dataclass(frozen=True)
class Method:
    obj: Any
    method: str
    args: tuple


@dataclass(frozen=True)
class Prim:
    name: str
    args: tuple


@dataclass(frozen=True)
class Block:
    body: tuple


@dataclass(frozen=True)
class If:
    test: Any
    then: Any
    orelse: Any


@dataclass(frozen=True)
class While:
    test: Any
    body: Any


@dataclass(frozen=True)
class Let:
    name: str
    value: Any


@dataclass(frozen=True)
class Set:
    target: Any  # Var | Index | EnvRead
    value: Any


@dataclass(frozen=True)
class Label:
    label: str
    body: Any


@dataclass(frozen=True)
class Break:
    label: str
    value: Any


class _Unknown:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNKNOWN"

    def __reduce__(self):
        return (_Unknown, ())


UNKNOWN = _Unknown()


@dataclass(frozen=True)
class Event:
    ev: str
    arg: Any
    env: Any
    handler: int


@dataclass(frozen=True)
class Respond:
    value: Any


@dataclass(frozen=True)
class Env:
    """Environment object: ``entries`` maps names to address traces.

    ``fn`` names the function the environment belongs to; it is only set for
    functions that escape into positions where the callee is not statically
    known, and is checked by ``CheckFn``.
    """

    entries: tuple  # ((name, addr), ...)
    fn: str | None = None


@dataclass(frozen=True)
class EnvRead:
    """``*t.x``: the value stored at the address held in environment field x."""

    env: Any
    name: str


@dataclass(frozen=True)
class EnvAddr:
    """``t.x``: the address held in environment field x."""

    env: Any
    name: str


@dataclass(frozen=True)
class VarAddr:
    """``&x``: the address of variable x."""

    name: str


@dataclass(frozen=True)
class CheckFn:
    """Evaluates ``env`` and aborts unless it is the environment of function ``fn``."""

    env: Any
    fn: str


@dataclass(frozen=True)
class Handler:
    arg_id: str
    env_id: str
    body: Any


UNDEF = Const(UNDEFINED)

# ------------------------------------------------------------------ helpers


def is_well_formed(t) -> bool:
    """True when ``t`` is a tree built only from trace nodes with sane fields."""
    try:
        _check(t)
    except TraceFormatError:
        return False
    return True


_EXPR_LEAVES = (Const, Var, VarAddr)


def _check(t):
    if t is UNKNOWN or isinstance(t, _EXPR_LEAVES):
        return
    if isinstance(t, (BinOp,)):
        _check(t.left)
        _check(t.right)
    elif isinstance(t, UnOp):
        _check(t.operand)
    elif isinstance(t, (Cond, If)):
        _check(t.test)
        _check(t.then)
        _check(t.orelse)
    elif isinstance(t, Index):
        _check(t.obj)
        _check(t.key)
    elif isinstance(t, ObjectLit):
        for _, v in t.fields:
            _check(v)
    elif isinstance(t, (ArrayLit,)):
        for v in t.items:
            _check(v)
    elif isinstance(t, (Method,)):
        _check(t.obj)
        for v in t.args:
            _check(v)
    elif isinstance(t, Prim):
        for v in t.args:
            _check(v)
    elif isinstance(t, Block):
        if not isinstance(t.body, tuple):
            raise TraceFormatError("block body must be a tuple")
        for v in t.body:
            _check(v)
    elif isinstance(t, While):
        _check(t.test)
        _check(t.body)
    elif isinstance(t, (Let, Respond)):
        _check(t.value)
    elif isinstance(t, Set):
        if not isinstance(t.target, (Var, Index, EnvRead)):
            raise TraceFormatError("bad assignment target")
        _check(t.target)
        _check(t.value)
    elif isinstance(t, (Label, Break)):
        _check(t.body if isinstance(t, Label) else t.value)
    elif isinstance(t, Event):
        _check(t.arg)
        _check(t.env)
    elif isinstance(t, Env):
        names = [n for n, _ in t.entries]
        if len(set(names)) != len(names):
            raise TraceFormatError("duplicate env entry")
        for _, a in t.entries:
            _check(a)
    elif isinstance(t, (EnvRead, EnvAddr, CheckFn)):
        _check(t.env)
    else:
        raise TraceFormatError(f"not a trace node: {t!r}")


def contains_unknown(t) -> bool:
    return any(n is UNKNOWN for n in iter_nodes(t))


def iter_nodes(t):
    stack = [t]
    while stack:
        n = stack.pop()
        yield n
        for f in getattr(n, "__dataclass_fields__", {}):
            v = getattr(n, f)
            if isinstance(v, tuple):
                for x in v:
                    if isinstance(x, tuple):
                        stack.extend(y for y in x if _is_node(y))
                    elif _is_node(x):
                        stack.append(x)
            elif _is_node(v):
                stack.append(v)


def _is_node(x) -> bool:
    return x is UNKNOWN or hasattr(x, "__dataclass_fields__")


# ----------------------------------------------------------- pretty printing


def _num(v) -> str:
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def show(t) -> str:
    """Compact debug rendering close to the usual trace notation."""
    if t is UNKNOWN:
        return "UNKNOWN"
    if isinstance(t, Const):
        v = t.value
        if v is UNDEFINED:
            return "undefined"
        if v is None:
            return "null"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        return _num(v)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, BinOp):
        return f"({show(t.left)} {t.op} {show(t.right)})"
    if isinstance(t, UnOp):
        sep = " " if t.op.isalpha() else ""
        return f"{t.op}{sep}{show(t.operand)}"
    if isinstance(t, Cond):
        return f"({show(t.test)} ? {show(t.then)} : {show(t.orelse)})"
    if isinstance(t, Index):
        return f"{show(t.obj)}[{show(t.key)}]"
    if isinstance(t, ObjectLit):
        return "{" + ", ".join(f"{json.dumps(k)}: {show(v)}" for k, v in t.fields) + "}"
    if isinstance(t, ArrayLit):
        return "[" + ", ".join(show(v) for v in t.items) + "]"
    if isinstance(t, Method):
        return f"{show(t.obj)}.{t.method}(" + ", ".join(show(a) for a in t.args) + ")"
    if isinstance(t, Prim):
        return f"{t.name}(" + ", ".join(show(a) for a in t.args) + ")"
    if isinstance(t, Block):
        return "{ " + " ".join(show(s) for s in t.body) + (" }" if t.body else "}")
    if isinstance(t, If):
        return f"if ({show(t.test)}) {show(t.then)} else {show(t.orelse)}"
    if isinstance(t, While):
        return f"while ({show(t.test)}) {show(t.body)}"
    if isinstance(t, Let):
        return f"let {t.name} = {show(t.value)};"
    if isinstance(t, Set):
        return f"{show(t.target)} = {show(t.value)};"
    if isinstance(t, Label):
        return f"{t.label}: {show(t.body)}"
    if isinstance(t, Break):
        return f"break {t.label} {show(t.value)};"
    if isinstance(t, Event):
        return f"event({t.ev}, {show(t.arg)}, {show(t.env)}, {t.handler})"
    if isinstance(t, Respond):
        return f"respond({show(t.value)})"
    if isinstance(t, Env):
        inner = ", ".join(f"{n}: {show(a)}" for n, a in t.entries)
        return f"env({inner})"
    if isinstance(t, EnvRead):
        return f"*{show(t.env)}.{t.name}"
    if isinstance(t, EnvAddr):
        return f"{show(t.env)}.{t.name}"
    if isinstance(t, VarAddr):
        return f"&{t.name}"
    if isinstance(t, CheckFn):
        return f"checkFn({show(t.env)}, {t.fn})"
    return repr(t)


# ---------------------------------------------------------------- JSON form


def _const_to_json(v) -> dict:
    if v is UNDEFINED:
        return {"kind": "constant", "type": "undefined"}
    if v is None:
        return {"kind": "constant", "type": "null"}
    if isinstance(v, bool):
        return {"kind": "constant", "type": "boolean", "value": v}
    if isinstance(v, str):
        return {"kind": "constant", "type": "string", "value": v}
    if isinstance(v, (int, float)):
        if isinstance(v, float) and not math.isfinite(v):
            return {"kind": "constant", "type": "number", "value": repr(v)}
        return {"kind": "constant", "type": "number", "value": v}
    raise TraceFormatError(f"constant of unsupported type: {v!r}")


def to_json(t) -> dict:
    """Trace node to a JSON-compatible dict with a fixed field order."""
    if t is UNKNOWN:
        return {"kind": "unknown"}
    if isinstance(t, Const):
        return _const_to_json(t.value)
    if isinstance(t, Var):
        return {"kind": "var", "name": t.name}
    if isinstance(t, BinOp):
        return {"kind": "binop", "op": t.op, "left": to_json(t.left), "right": to_json(t.right)}
    if isinstance(t, UnOp):
        return {"kind": "unop", "op": t.op, "operand": to_json(t.operand)}
    if isinstance(t, Cond):
        return {"kind": "cond", "test": to_json(t.test), "then": to_json(t.then),
                "else": to_json(t.orelse)}
    if isinstance(t, Index):
        return {"kind": "index", "object": to_json(t.obj), "key": to_json(t.key)}
    if isinstance(t, ObjectLit):
        return {"kind": "object", "fields": [[k, to_json(v)] for k, v in t.fields]}
    if isinstance(t, ArrayLit):
        return {"kind": "array", "items": [to_json(v) for v in t.items]}
    if isinstance(t, Method):
        return {"kind": "method", "object": to_json(t.obj), "method": t.method,
                "args": [to_json(a) for a in t.args]}
    if isinstance(t, Prim):
        return {"kind": "prim", "name": t.name, "args": [to_json(a) for a in t.args]}
    if isinstance(t, Block):
        return {"kind": "block", "body": [to_json(s) for s in t.body]}
    if isinstance(t, If):
        return {"kind": "if", "test": to_json(t.test), "then": to_json(t.then),
                "else": to_json(t.orelse)}
    if isinstance(t, While):
        return {"kind": "while", "test": to_json(t.test), "body": to_json(t.body)}
    if isinstance(t, Let):
        return {"kind": "let", "name": t.name, "value": to_json(t.value)}
    if isinstance(t, Set):
        return {"kind": "set", "target": to_json(t.target), "value": to_json(t.value)}
    if isinstance(t, Label):
        return {"kind": "label", "label": t.label, "body": to_json(t.body)}
    if isinstance(t, Break):
        return {"kind": "break", "label": t.label, "value": to_json(t.value)}
    if isinstance(t, Event):
        return {"kind": "event", "event": t.ev, "arg": to_json(t.arg), "env": to_json(t.env),
                "handler": t.handler}
    if isinstance(t, Respond):
        return {"kind": "respond", "value": to_json(t.value)}
    if isinstance(t, Env):
        d = {"kind": "env", "entries": [[n, to_json(a)] for n, a in t.entries]}
        if t.fn is not None:
            d["fn"] = t.fn
        return d
    if isinstance(t, EnvRead):
        return {"kind": "envRead", "env": to_json(t.env), "name": t.name}
    if isinstance(t, EnvAddr):
        return {"kind": "envAddr", "env": to_json(t.env), "name": t.name}
    if isinstance(t, VarAddr):
        return {"kind": "varAddr", "name": t.name}
    if isinstance(t, CheckFn):
        return {"kind": "checkFn", "env": to_json(t.env), "fn": t.fn}
    raise TraceFormatError(f"not a trace node: {t!r}")


def _const_from_json(d):
    ty = d.get("type")
    if ty == "undefined":
        return Const(UNDEFINED)
    if ty == "null":
        return Const(None)
    v = d.get("value")
    if ty == "boolean" and isinstance(v, bool):
        return Const(v)
    if ty == "string" and isinstance(v, str):
        return Const(v)
    if ty == "number":
        if isinstance(v, str):
            return Const(float(v))
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return Const(v)
    raise TraceFormatError(f"malformed constant: {d!r}")


def from_json(d) -> Any:
    if not isinstance(d, dict) or "kind" not in d:
        raise TraceFormatError(f"malformed trace node: {d!r}")
    k = d["kind"]
    try:
        if k == "unknown":
            return UNKNOWN
        if k == "constant":
            return _const_from_json(d)
        if k == "var":
            return Var(d["name"])
        if k == "binop":
            return BinOp(d["op"], from_json(d["left"]), from_json(d["right"]))
        if k == "unop":
            return UnOp(d["op"], from_json(d["operand"]))
        if k == "cond":
            return Cond(from_json(d["test"]), from_json(d["then"]), from_json(d["else"]))
        if k == "index":
            return Index(from_json(d["object"]), from_json(d["key"]))
        if k == "object":
            return ObjectLit(tuple((f, from_json(v)) for f, v in d["fields"]))
        if k == "array":
            return ArrayLit(tuple(from_json(v) for v in d["items"]))
        if k == "method":
            return Method(from_json(d["object"]), d["method"],
                          tuple(from_json(a) for a in d["args"]))
        if k == "prim":
            return Prim(d["name"], tuple(from_json(a) for a in d["args"]))
        if k == "block":
            return Block(tuple(from_json(s) for s in d["body"]))
        if k == "if":
            return If(from_json(d["test"]), from_json(d["then"]), from_json(d["else"]))
        if k == "while":
            return While(from_json(d["test"]), from_json(d["body"]))
        if k == "let":
            return Let(d["name"], from_json(d["value"]))
        if k == "set":
            return Set(from_json(d["target"]), from_json(d["value"]))
        if k == "label":
            return Label(d["label"], from_json(d["body"]))
        if k == "break":
            return Break(d["label"], from_json(d["value"]))
        if k == "event":
            return Event(d["event"], from_json(d["arg"]), from_json(d["env"]), int(d["handler"]))
        if k == "respond":
            return Respond(from_json(d["value"]))
        if k == "env":
            return Env(tuple((n, from_json(a)) for n, a in d["entries"]), d.get("fn"))
        if k == "envRead":
            return EnvRead(from_json(d["env"]), d["name"])
        if k == "envAddr":
            return EnvAddr(from_json(d["env"]), d["name"])
        if k == "varAddr":
            return VarAddr(d["name"])
        if k == "checkFn":
            return CheckFn(from_json(d["env"]), d["fn"])
    except (KeyError, TypeError, ValueError) as e:
        raise TraceFormatError(f"malformed {k} node: {e}") from e
    raise TraceFormatError(f"unknown node kind: {k!r}")


def table_to_json(table: dict) -> dict:
    return {
        "handlers": [
            {"id": n, "argId": h.arg_id, "envId": h.env_id, "body": to_json(h.body)}
            for n, h in sorted(table.items())
        ]
    }


def table_from_json(d) -> dict:
    if not isinstance(d, dict) or not isinstance(d.get("handlers"), list):
        raise TraceFormatError("handler table must have a 'handlers' list")
    out = {}
    for h in d["handlers"]:
        try:
            n = int(h["id"])
            out[n] = Handler(h["argId"], h["envId"], from_json(h["body"]))
        except (KeyError, TypeError, ValueError) as e:
            raise TraceFormatError(f"malformed handler: {e}") from e
    if 0 not in out:
        raise TraceFormatError("handler table lacks handler 0")
    return out


def serialize(table: dict) -> bytes:
    return json.dumps(table_to_json(table), separators=(",", ":")).encode()


def deserialize(data: bytes | str) -> dict:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"malformed JSON: {e}") from e
    return table_from_json(doc)
