"""Guest-language abstract syntax.

Nodes are frozen dataclasses holding tuples, so programs are hashable and
compare structurally. Surface-only forms (``ExprStmt``, ``For``, ``Switch``,
``Continue``) exist only between parsing and desugaring. ``RtCall`` and
``Group`` only appear in instrumented programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Union


class _Undefined:
    """The JavaScript ``undefined`` value (a singleton)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "undefined"

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Const:
    value: Any  # int | float | bool | str | None (null) | UNDEFINED


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class UnOp:
    op: str  # '-', '+', '!', 'typeof'
    operand: "Expr"


@dataclass(frozen=True)
class Cond:
    test: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Index:
    """``obj[key]``; ``obj.f`` is ``Index(obj, Const('f'))``."""

    obj: "Expr"
    key: "Expr"


@dataclass(frozen=True)
class ObjectLit:
    fields: tuple  # tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class ArrayLit:
    items: tuple


@dataclass(frozen=True)
class MethodCall:
    """Call of a builtin method on a string or array value, e.g. ``a.push(x)``."""

    obj: "Expr"
    method: str
    args: tuple


@dataclass(frozen=True)
class PrimCall:
    """Call of a global primitive such as ``Math.floor`` or ``JSON.stringify``."""

    name: str
    args: tuple


# ------------------------------------------------------------- binding forms


@dataclass(frozen=True)
class Function:
    params: tuple  # tuple[str, ...]
    body: "Block"


@dataclass(frozen=True)
class Call:
    callee: str
    args: tuple


# ---------------------------------------------------------------- statements


@dataclass(frozen=True)
class Let:
    name: str
    value: Any  # Expr | Function | Call


@dataclass(frozen=True)
class Assign:
    target: Any  # Name | Index
    value: Any  # Expr (core); Call/Function only before desugaring


@dataclass(frozen=True)
class Block:
    body: tuple


@dataclass(frozen=True)
class If:
    test: "Expr"
    then: "Stmt"
    orelse: "Stmt"


@dataclass(frozen=True)
class While:
    test: "Expr"
    body: "Stmt"


@dataclass(frozen=True)
class Labeled:
    label: str
    body: "Stmt"


@dataclass(frozen=True)
class Break:
    label: str | None = None


@dataclass(frozen=True)
class Return:
    value: "Expr"


# surface-only


@dataclass(frozen=True)
class ExprStmt:
    expr: Any


@dataclass(frozen=True)
class For:
    init: Any  # Stmt | None
    test: Any  # Expr | None
    update: Any  # Stmt | None
    body: "Stmt"


@dataclass(frozen=True)
class Switch:
    disc: "Expr"
    cases: tuple  # tuple[tuple[Expr | None, tuple[Stmt, ...]], ...]


@dataclass(frozen=True)
class Continue:
    label: str | None = None


# instrumented-only


@dataclass(frozen=True)
class RtCall:
    """A call into the tracing runtime. ``args`` hold trace nodes, names,
    integers, or the ``POP`` marker (meaning "the result of popArg()")."""

    op: str
    args: tuple = ()


@dataclass(frozen=True)
class Group:
    """A scope-less statement sequence. Erasure splices it into its parent."""

    body: tuple


class _PopMarker:
    def __repr__(self) -> str:
        return "popArg()"

    def __reduce__(self):
        return (_pop_marker, ())


def _pop_marker():
    return POP


POP = _PopMarker()


@dataclass(frozen=True)
class Program:
    body: Block
    builtins: frozenset = field(default_factory=lambda: frozenset(BUILTINS))


BUILTINS = ("get", "post", "respond", "listen")

Expr = Union[Const, Name, BinOp, UnOp, Cond, Index, ObjectLit, ArrayLit, MethodCall, PrimCall]
Stmt = Union[Let, Assign, Block, If, While, Labeled, Break, Return, RtCall, Group]

EXPR_TYPES = (Const, Name, BinOp, UnOp, Cond, Index, ObjectLit, ArrayLit, MethodCall, PrimCall)


def children(node) -> list:
    """Direct sub-nodes of an AST node (used by generic scans)."""
    out = []
    for f in getattr(node, "__dataclass_fields__", {}):
        v = getattr(node, f)
        _collect(v, out)
    return out


def _collect(v, out):
    if isinstance(v, tuple):
        for x in v:
            _collect(x, out)
    elif hasattr(v, "__dataclass_fields__"):
        out.append(v)


def walk(node):
    """Pre-order iteration over every AST node below (and including) ``node``."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def erase(node):
    """Remove every ``RtCall`` and splice every ``Group`` from an instrumented AST."""
    if isinstance(node, Program):
        return Program(erase(node.body), node.builtins)
    if isinstance(node, Block):
        return Block(_erase_seq(node.body))
    if isinstance(node, Let):
        v = node.value
        if isinstance(v, Function):
            v = Function(v.params, _erase_fn_body(v.body))
        return Let(node.name, v)
    if isinstance(node, If):
        return If(node.test, _erase_one(node.then), _erase_one(node.orelse))
    if isinstance(node, While):
        return While(node.test, _erase_one(node.body))
    if isinstance(node, Labeled):
        return Labeled(node.label, _erase_one(node.body))
    return node


def _erase_fn_body(body):
    # instrumented function bodies are Block([Group([label, Block(...), pop])])
    stmts = _erase_seq(body.body)
    if len(stmts) == 1 and isinstance(stmts[0], Block):
        return stmts[0]
    return Block(stmts)


def _erase_seq(stmts) -> tuple:
    out = []
    for s in stmts:
        if isinstance(s, RtCall):
            continue
        if isinstance(s, Group):
            out.extend(_erase_seq(s.body))
        else:
            out.append(erase(s))
    return tuple(out)


def _erase_one(s):
    if isinstance(s, Group):
        parts = _erase_seq(s.body)
        if len(parts) == 1:
            return parts[0]
        return Block(parts)
    return erase(s)
