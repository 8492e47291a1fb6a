"""The language-based sandbox: runs a handler table directly.

Every guest variable lives in a cell of a per-request :class:`Arena`; an
address is a cell index, so environments are plain maps from names to cell
indices and closures alias the same cells as the code that created them.
The arena counts instructions (one per loop iteration and per handler entry)
and bytes, and is cleared wholesale when the request ends.

Two backends share the same runtime and produce the same outcomes:

``direct``
    walks the trace tree node by node;
``compiled`` (default)
    turns each handler body into nested Python closures once, resolving
    every variable to a frame slot ahead of time.
"""

from __future__ import annotations

import itertools
import json
import time
from collections import deque
from dataclasses import dataclass

from . import trace as T
from .errors import DynTypeError, GuestError, InstructionLimit, MemoryLimit
from .events import NoUpstream, Request, Response, Upstream, perform, response_for
from .syntax import BUILTINS, UNDEFINED
from .values import (
    CELL_BYTES, Builtin, FunctionValue, Heap, binop, call_method, call_primitive, get_index,
    set_index, strict_equals, truthy, type_tag, unop,
)

DEFAULT_INSTRUCTIONS = 10_000_000
DEFAULT_MEMORY = 128 * 1024 * 1024

ABORT_REASONS = ("unknown", "divergence", "type-error", "guest-error", "instruction-limit",
                 "memory-limit", "no-response")


@dataclass(frozen=True)
class Limits:
    instructions: int = DEFAULT_INSTRUCTIONS
    memory: int = DEFAULT_MEMORY


class EnvValue(FunctionValue):
    """Runtime form of a function: the addresses of its free variables."""

    __slots__ = ("addrs", "fn")

    def __init__(self, addrs: dict, fn: str | None = None):
        self.addrs = addrs
        self.fn = fn

    def __repr__(self) -> str:
        return f"<env {self.fn or ''} {sorted(self.addrs)}>"


class Arena:
    """Cells, byte accounting and the instruction counter of one request."""

    def __init__(self, limits: Limits = Limits()):
        self.limits = limits
        self.cells: list = []
        self.heap = Heap(limits.memory)
        self.instructions = 0

    def alloc(self, value) -> int:
        self.heap.charge(CELL_BYTES)
        cells = self.cells
        cells.append(value)
        return len(cells) - 1

    def check_budget(self) -> None:
        self.instructions += 1
        if self.instructions > self.limits.instructions:
            raise InstructionLimit(f"instruction limit of {self.limits.instructions} exceeded")

    @property
    def live_cells(self) -> int:
        return len(self.cells)

    def end_request(self) -> "ArenaStats":
        stats = ArenaStats(self.heap.peak, self.instructions, len(self.cells))
        self.cells.clear()
        self.heap = Heap(self.limits.memory)
        self.instructions = 0
        return stats


@dataclass(frozen=True)
class ArenaStats:
    peak_bytes: int
    instructions: int
    cells_used: int
    live_cells: int = 0


@dataclass
class Outcome:
    kind: str  # "responded" | "pending" | "aborted"
    response: Response | None = None
    reason: str | None = None
    detail: str = ""
    stats: ArenaStats | None = None
    latency_us: int = 0

    @property
    def responded(self) -> bool:
        return self.kind == "responded"

    @property
    def bounces(self) -> bool:
        """Whether the abort means the trace does not cover this request."""
        return self.kind == "aborted" and self.reason in ("unknown", "divergence")


class Abort(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


class _Break(Exception):
    __slots__ = ("label", "value")

    def __init__(self, label, value):
        self.label = label
        self.value = value


@dataclass
class _Pending:
    handler: int
    env: object
    payload: object


class _Ctx:
    """Per-request state shared by every handler invocation."""

    __slots__ = ("arena", "cells", "heap", "upstream", "req", "queue", "response", "responded",
                 "builtins", "globals")

    def __init__(self, arena: Arena, upstream, req):
        self.arena = arena
        self.cells = arena.cells
        self.heap = arena.heap
        self.upstream = upstream
        self.req = req
        self.queue: deque = deque()
        self.response = None
        self.responded = False
        self.builtins = {}
        self.globals = {}

    def issue(self, ev, arg, env, n):
        payload = perform(ev, arg, self.heap, self.upstream, self.req)
        self.queue.append(_Pending(n, env, payload))
        return UNDEFINED

    def respond(self, v):
        if self.responded:
            raise GuestError("respond called twice")
        self.response = v
        self.responded = True
        return UNDEFINED


def _check_fn(v, fn: str):
    if type(v) is EnvValue:
        if v.fn == fn:
            return v
    elif type(v) is Builtin and v.name == fn:
        return v
    raise Abort("divergence", f"expected function {fn}")


def _env_of(v) -> EnvValue:
    if type(v) is not EnvValue:
        raise DynTypeError(f"{type_tag(v)} has no environment")
    return v


# ====================================================================== direct


class _Scope:
    __slots__ = ("vars", "parent")

    def __init__(self, parent=None):
        self.vars = {}
        self.parent = parent

    def addr(self, name):
        s = self
        while s is not None:
            if name in s.vars:
                return s.vars[name]
            s = s.parent
        raise DynTypeError(f"{name} is not defined")


class DirectBackend:
    """Interprets trace nodes as they are."""

    name = "direct"

    def __init__(self, table: dict):
        self.table = table

    def run_handler(self, ctx: _Ctx, n: int, arg, env, root: _Scope):
        h = self.table[n]
        scope = _Scope(root)
        scope.vars[h.arg_id] = ctx.arena.alloc(arg)
        scope.vars[h.env_id] = ctx.arena.alloc(env)
        self.stmt(h.body, scope, ctx)

    def stmt(self, t, sc: _Scope, ctx: _Ctx):
        ty = type(t)
        if ty is T.Block:
            inner = _Scope(sc)
            for s in t.body:
                self.stmt(s, inner, ctx)
        elif ty is T.Let:
            v = self.expr(t.value, sc, ctx)
            sc.vars[t.name] = ctx.arena.alloc(v)
        elif ty is T.Set:
            self.assign(t.target, t.value, sc, ctx)
        elif ty is T.If:
            if truthy(self.expr(t.test, sc, ctx)):
                self.stmt(t.then, sc, ctx)
            else:
                self.stmt(t.orelse, sc, ctx)
        elif ty is T.While:
            arena = ctx.arena
            while True:
                arena.check_budget()
                if not truthy(self.expr(t.test, sc, ctx)):
                    break
                self.stmt(t.body, sc, ctx)
        elif ty is T.Break:
            raise _Break(t.label, self.expr(t.value, sc, ctx))
        else:
            self.expr(t, sc, ctx)

    def assign(self, target, value, sc, ctx):
        # operands of the target are evaluated before the assigned value
        ty = type(target)
        if ty is T.Var:
            v = self.expr(value, sc, ctx)
            ctx.cells[sc.addr(target.name)] = v
        elif ty is T.EnvRead:
            env = _env_of(self.expr(target.env, sc, ctx))
            ctx.cells[env.addrs[target.name]] = self.expr(value, sc, ctx)
        elif ty is T.Index:
            obj = self.expr(target.obj, sc, ctx)
            key = self.expr(target.key, sc, ctx)
            set_index(obj, key, self.expr(value, sc, ctx), ctx.heap)
        else:
            raise DynTypeError(f"cannot assign to {T.show(target)}")

    def expr(self, t, sc: _Scope, ctx: _Ctx):
        ty = type(t)
        if ty is T.Const:
            return t.value
        if ty is T.Var:
            return ctx.cells[sc.addr(t.name)]
        if ty is T.BinOp:
            op = t.op
            if op == "&&":
                left = self.expr(t.left, sc, ctx)
                return self.expr(t.right, sc, ctx) if truthy(left) else left
            if op == "||":
                left = self.expr(t.left, sc, ctx)
                return left if truthy(left) else self.expr(t.right, sc, ctx)
            return binop(op, self.expr(t.left, sc, ctx), self.expr(t.right, sc, ctx), ctx.heap)
        if ty is T.Index:
            return get_index(self.expr(t.obj, sc, ctx), self.expr(t.key, sc, ctx))
        if ty is T.EnvRead:
            env = _env_of(self.expr(t.env, sc, ctx))
            return ctx.cells[env.addrs[t.name]]
        if ty is T.UnOp:
            return unop(t.op, self.expr(t.operand, sc, ctx))
        if ty is T.Cond:
            if truthy(self.expr(t.test, sc, ctx)):
                return self.expr(t.then, sc, ctx)
            return self.expr(t.orelse, sc, ctx)
        if ty is T.ObjectLit:
            return ctx.heap.new_object({k: self.expr(v, sc, ctx) for k, v in t.fields})
        if ty is T.ArrayLit:
            return ctx.heap.new_array([self.expr(v, sc, ctx) for v in t.items])
        if ty is T.Method:
            obj = self.expr(t.obj, sc, ctx)
            args = [self.expr(a, sc, ctx) for a in t.args]
            return call_method(obj, t.method, args, ctx.heap)
        if ty is T.Prim:
            return call_primitive(t.name, [self.expr(a, sc, ctx) for a in t.args], ctx.heap)
        if ty is T.Label:
            try:
                self.stmt(t.body, sc, ctx)
            except _Break as b:
                if b.label != t.label:
                    raise
                return b.value
            return UNDEFINED
        if ty is T.Env:
            addrs = {}
            for name, a in t.entries:
                addrs[name] = self.address(a, sc, ctx)
            ctx.heap.charge(CELL_BYTES * (len(addrs) + 1))
            return EnvValue(addrs, t.fn)
        if ty is T.CheckFn:
            return _check_fn(self.expr(t.env, sc, ctx), t.fn)
        if ty is T.Event:
            arg = self.expr(t.arg, sc, ctx)
            env = self.expr(t.env, sc, ctx)
            return ctx.issue(t.ev, arg, env, t.handler)
        if ty is T.Respond:
            return ctx.respond(self.expr(t.value, sc, ctx))
        if t is T.UNKNOWN:
            raise Abort("unknown", "reached an untraced path")
        if ty in (T.Block, T.Let, T.Set, T.If, T.While, T.Break):
            self.stmt(t, sc, ctx)
            return UNDEFINED
        raise DynTypeError(f"cannot evaluate {type(t).__name__}")

    def address(self, a, sc, ctx) -> int:
        if type(a) is T.VarAddr:
            return sc.addr(a.name)
        if type(a) is T.EnvAddr:
            return _env_of(self.expr(a.env, sc, ctx)).addrs[a.name]
        raise DynTypeError(f"not an address: {T.show(a)}")


# ==================================================================== compiled


class _Frame:
    __slots__ = ("slots", "ctx", "cells")

    def __init__(self, nslots: int, ctx: _Ctx):
        self.slots = [0] * nslots
        self.ctx = ctx
        self.cells = ctx.cells


class _CScope:
    """Compile-time scope: names to frame slots."""

    def __init__(self, parent=None):
        self.names: dict = {}
        self.parent = parent

    def slot(self, name):
        s = self
        while s is not None:
            if name in s.names:
                return s.names[name]
            s = s.parent
        return None


def _raise_unknown(fr):
    raise Abort("unknown", "reached an untraced path")


def _noop(fr):
    return None


class _HandlerCode:
    __slots__ = ("nslots", "arg_slot", "env_slot", "root_slots", "run")

    def __init__(self, nslots, arg_slot, env_slot, root_slots, run):
        self.nslots = nslots
        self.arg_slot = arg_slot
        self.env_slot = env_slot
        self.root_slots = root_slots
        self.run = run


class _Compiler:
    def __init__(self, roots: tuple):
        self.roots = roots
        self.nslots = 0

    def new_slot(self) -> int:
        self.nslots += 1
        return self.nslots - 1

    def handler(self, h: T.Handler) -> _HandlerCode:
        root = _CScope()
        root_slots = []
        for name in self.roots:
            s = self.new_slot()
            root.names[name] = s
            root_slots.append((name, s))
        sc = _CScope(root)
        arg_slot = self.new_slot()
        sc.names[h.arg_id] = arg_slot
        env_slot = self.new_slot()
        sc.names[h.env_id] = env_slot
        run = self.stmt(h.body, sc)
        return _HandlerCode(self.nslots, arg_slot, env_slot, tuple(root_slots), run)

    # ---------------------------------------------------------- statements

    def stmt(self, t, sc: _CScope):
        ty = type(t)
        if ty is T.Block:
            inner = _CScope(sc)
            parts = [self.stmt(s, inner) for s in t.body]
            if not parts:
                return _noop
            if len(parts) == 1:
                return parts[0]
            if len(parts) == 2:
                p0, p1 = parts

                def block2(fr):
                    p0(fr)
                    p1(fr)
                return block2
            parts = tuple(parts)

            def block(fr):
                for p in parts:
                    p(fr)
            return block
        if ty is T.Let:
            value = self.expr(t.value, sc)
            slot = self.new_slot()
            sc.names[t.name] = slot

            def let(fr):
                v = value(fr)
                ctx = fr.ctx
                ctx.heap.charge(CELL_BYTES)
                cells = fr.cells
                cells.append(v)
                fr.slots[slot] = len(cells) - 1
            return let
        if ty is T.Set:
            return self.assign(t.target, self.expr(t.value, sc), sc)
        if ty is T.If:
            test = self.expr(t.test, sc)
            then = self.stmt(t.then, sc)
            orelse = self.stmt(t.orelse, sc)

            def if_(fr):
                if truthy(test(fr)):
                    then(fr)
                else:
                    orelse(fr)
            return if_
        if ty is T.While:
            test = self.expr(t.test, sc)
            body = self.stmt(t.body, sc)

            def while_(fr):
                arena = fr.ctx.arena
                limit = arena.limits.instructions
                while True:
                    arena.instructions += 1
                    if arena.instructions > limit:
                        raise InstructionLimit(f"instruction limit of {limit} exceeded")
                    if not truthy(test(fr)):
                        break
                    body(fr)
            return while_
        if ty is T.Break:
            label = t.label
            value = self.expr(t.value, sc)

            def brk(fr):
                raise _Break(label, value(fr))
            return brk
        if t is T.UNKNOWN:
            return _raise_unknown
        return self.expr(t, sc)

    def assign(self, target, value, sc):
        ty = type(target)
        if ty is T.Var:
            slot = self._slot(target.name, sc)

            def set_var(fr):
                fr.cells[fr.slots[slot]] = value(fr)
            return set_var
        if ty is T.EnvRead:
            env = self.expr(target.env, sc)
            name = target.name

            def set_env(fr):
                e = _env_of(env(fr))
                fr.cells[e.addrs[name]] = value(fr)
            return set_env
        if ty is T.Index:
            obj = self.expr(target.obj, sc)
            key = self.expr(target.key, sc)

            def set_index_(fr):
                o = obj(fr)
                k = key(fr)
                set_index(o, k, value(fr), fr.ctx.heap)
            return set_index_
        raise DynTypeError(f"cannot assign to {T.show(target)}")

    def _slot(self, name, sc):
        slot = sc.slot(name)
        if slot is None:
            raise DynTypeError(f"{name} is not defined")
        return slot

    # --------------------------------------------------------- expressions

    def expr(self, t, sc: _CScope):
        ty = type(t)
        if ty is T.Const:
            v = t.value
            return lambda fr: v
        if ty is T.Var:
            slot = sc.slot(t.name)
            if slot is None:
                name = t.name

                def unbound(fr):
                    raise DynTypeError(f"{name} is not defined")
                return unbound
            return lambda fr: fr.cells[fr.slots[slot]]
        if ty is T.BinOp:
            op = t.op
            left = self.expr(t.left, sc)
            right = self.expr(t.right, sc)
            if op == "&&":
                def and_(fr):
                    a = left(fr)
                    return right(fr) if truthy(a) else a
                return and_
            if op == "||":
                def or_(fr):
                    a = left(fr)
                    return a if truthy(a) else right(fr)
                return or_
            if op == "===":
                return lambda fr: strict_equals(left(fr), right(fr))
            return lambda fr: binop(op, left(fr), right(fr), fr.ctx.heap)
        if ty is T.Index:
            obj = self.expr(t.obj, sc)
            if type(t.key) is T.Const:
                k = t.key.value
                return lambda fr: get_index(obj(fr), k)
            key = self.expr(t.key, sc)
            return lambda fr: get_index(obj(fr), key(fr))
        if ty is T.EnvRead:
            env = self.expr(t.env, sc)
            name = t.name

            def env_read(fr):
                e = env(fr)
                if type(e) is not EnvValue:
                    _env_of(e)
                return fr.cells[e.addrs[name]]
            return env_read
        if ty is T.UnOp:
            op = t.op
            operand = self.expr(t.operand, sc)
            return lambda fr: unop(op, operand(fr))
        if ty is T.Cond:
            test = self.expr(t.test, sc)
            then = self.expr(t.then, sc)
            orelse = self.expr(t.orelse, sc)
            return lambda fr: then(fr) if truthy(test(fr)) else orelse(fr)
        if ty is T.ObjectLit:
            fields = tuple((k, self.expr(v, sc)) for k, v in t.fields)

            def obj_lit(fr):
                return fr.ctx.heap.new_object({k: f(fr) for k, f in fields})
            return obj_lit
        if ty is T.ArrayLit:
            items = tuple(self.expr(v, sc) for v in t.items)
            return lambda fr: fr.ctx.heap.new_array([f(fr) for f in items])
        if ty is T.Method:
            obj = self.expr(t.obj, sc)
            args = tuple(self.expr(a, sc) for a in t.args)
            method = t.method

            def method_call(fr):
                o = obj(fr)
                return call_method(o, method, [a(fr) for a in args], fr.ctx.heap)
            return method_call
        if ty is T.Prim:
            args = tuple(self.expr(a, sc) for a in t.args)
            name = t.name
            return lambda fr: call_primitive(name, [a(fr) for a in args], fr.ctx.heap)
        if ty is T.Label:
            label = t.label
            body = self.stmt(t.body, sc)

            def labeled(fr):
                try:
                    body(fr)
                except _Break as b:
                    if b.label != label:
                        raise
                    return b.value
                return UNDEFINED
            return labeled
        if ty is T.Env:
            entries = tuple((name, self.address(a, sc)) for name, a in t.entries)
            fn = t.fn
            size = CELL_BYTES * (len(entries) + 1)

            def env_(fr):
                fr.ctx.heap.charge(size)
                return EnvValue({name: a(fr) for name, a in entries}, fn)
            return env_
        if ty is T.CheckFn:
            env = self.expr(t.env, sc)
            fn = t.fn
            return lambda fr: _check_fn(env(fr), fn)
        if ty is T.Event:
            arg = self.expr(t.arg, sc)
            env = self.expr(t.env, sc)
            ev, n = t.ev, t.handler

            def event(fr):
                a = arg(fr)
                e = env(fr)
                return fr.ctx.issue(ev, a, e, n)
            return event
        if ty is T.Respond:
            value = self.expr(t.value, sc)
            return lambda fr: fr.ctx.respond(value(fr))
        if t is T.UNKNOWN:
            return _raise_unknown
        if ty in (T.Block, T.Let, T.Set, T.If, T.While, T.Break):
            run = self.stmt(t, sc)

            def as_expr(fr):
                run(fr)
                return UNDEFINED
            return as_expr
        raise DynTypeError(f"cannot compile {type(t).__name__}")

    def address(self, a, sc):
        if type(a) is T.VarAddr:
            slot = self._slot(a.name, sc)
            return lambda fr: fr.slots[slot]
        if type(a) is T.EnvAddr:
            env = self.expr(a.env, sc)
            name = a.name
            return lambda fr: _env_of(env(fr)).addrs[name]
        raise DynTypeError(f"not an address: {T.show(a)}")


class CompiledBackend:
    name = "compiled"

    def __init__(self, table: dict, roots: tuple):
        self.table = table
        self.code = {n: _Compiler(roots).handler(h) for n, h in table.items()}

    def run_handler(self, ctx: _Ctx, n: int, arg, env, root=None):
        code = self.code[n]
        fr = _Frame(code.nslots, ctx)
        slots = fr.slots
        g = ctx.globals
        for name, s in code.root_slots:
            slots[s] = g[name]
        arena = ctx.arena
        slots[code.arg_slot] = arena.alloc(arg)
        slots[code.env_slot] = arena.alloc(env)
        code.run(fr)


# ===================================================================== program

_request_ids = itertools.count(1)


class CompiledProgram:
    """An immutable handler table ready to serve requests.

    Safe to share between threads: all per-request state lives in the
    :class:`Arena` and the request context.
    """

    def __init__(self, table: dict, backend: str = "compiled", globals_: tuple = (),
                 builtins: tuple = BUILTINS, limits: Limits = Limits()):
        if 0 not in table:
            raise ValueError("handler table has no main handler")
        self.table = dict(table)
        self.globals_ = tuple(globals_)
        self.builtins = tuple(builtins)
        self.limits = limits
        roots = self.builtins + tuple(g for g in self.globals_ if g not in self.builtins)
        self.roots = roots
        if backend == "compiled":
            self.backend = CompiledBackend(self.table, roots)
        elif backend == "direct":
            self.backend = DirectBackend(self.table)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def _setup(self, arena: Arena, upstream, req):
        ctx = _Ctx(arena, upstream, req)
        root = _Scope()
        for name in self.builtins:
            b = Builtin(name)
            ctx.builtins[name] = b
            a = arena.alloc(b)
            ctx.globals[name] = a
            root.vars[name] = a
        for name in self.globals_:
            if name not in ctx.globals:
                a = arena.alloc(UNDEFINED)
                ctx.globals[name] = a
                root.vars[name] = a
        return ctx, root

    def execute_event(self, ctx: _Ctx, root, n: int, arg, env) -> None:
        """Run handler ``n``'s body once (raises on abort)."""
        if n not in self.table:
            raise Abort("divergence", f"no handler {n}")
        ctx.arena.check_budget()
        self.backend.run_handler(ctx, n, arg, env, root)

    def run(self, req: Request, upstream: Upstream | None = None,
            arena: Arena | None = None) -> Outcome:
        """Serve one request: main handler, then queued events in FIFO order."""
        arena = arena or Arena(self.limits)
        t0 = time.perf_counter()
        try:
            outcome = self._run(req, upstream or NoUpstream(), arena)
        finally:
            stats = arena.end_request()
        outcome.stats = stats
        outcome.latency_us = int((time.perf_counter() - t0) * 1e6)
        return outcome

    def _run(self, req, upstream, arena) -> Outcome:
        try:
            ctx, root = self._setup(arena, upstream, req)
            self.execute_event(ctx, root, 0, UNDEFINED, EnvValue({}))
            queue = ctx.queue
            while queue and not ctx.responded:
                p = queue.popleft()
                self.execute_event(ctx, root, p.handler, p.payload, p.env)
        except Abort as a:
            return Outcome("aborted", reason=a.reason, detail=a.detail)
        except _Break as b:
            return Outcome("aborted", reason="divergence", detail=f"stray break {b.label}")
        except InstructionLimit as e:
            return Outcome("aborted", reason="instruction-limit", detail=str(e))
        except MemoryLimit as e:
            return Outcome("aborted", reason="memory-limit", detail=str(e))
        except DynTypeError as e:
            return Outcome("aborted", reason="type-error", detail=str(e))
        except GuestError as e:
            return Outcome("aborted", reason="guest-error", detail=str(e))
        except (KeyError, RecursionError) as e:
            return Outcome("aborted", reason="type-error", detail=repr(e))
        if not ctx.responded:
            return Outcome("aborted", reason="no-response")
        return Outcome("responded", response=response_for(ctx.response))


def load_table(data: bytes | str, **kwargs) -> CompiledProgram:
    return CompiledProgram(T.deserialize(data), **kwargs)


def stats_line(outcome: Outcome, request_id: int | None = None) -> str:
    """One JSON-lines record describing a finished request."""
    s = outcome.stats
    rec = {
        "requestId": request_id if request_id is not None else next(_request_ids),
        "outcome": outcome.kind if outcome.kind != "aborted" else f"aborted:{outcome.reason}",
        "instructions": s.instructions if s else 0,
        "peakBytes": s.peak_bytes if s else 0,
        "latencyUs": outcome.latency_us,
    }
    return json.dumps(rec)
