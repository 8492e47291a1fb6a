"""Tree-walking interpreter for guest programs: the slow, general sandbox.

It runs either a plain desugared program or an instrumented one. In the
second case every :class:`~accel.syntax.RtCall` drives a
:class:`~accel.builder.BuilderState`, so serving a request also grows the
trace tree. The builtins follow one protocol in both modes: they register an
event, perform it, and queue the callback; a FIFO event loop then runs the
queued callbacks to completion one at a time.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from . import syntax as S
from . import trace as T
from .builder import BuilderState
from .errors import (
    DynTypeError, GuestError, GuestTimeout, InstructionLimit, ParseError, TraceCorruption,
)
from .events import NoUpstream, Request, Response, Upstream, perform, response_for
from .syntax import POP, UNDEFINED
from .values import (
    CELL_BYTES, Builtin, FunctionValue, Heap, binop, call_method, call_primitive, get_index,
    set_index, to_string, truthy, type_tag, unop,
)

DEFAULT_DEADLINE = 5.0
DEFAULT_INSTRUCTIONS = 10_000_000
DEFAULT_MEMORY = 128 * 1024 * 1024


class Scope:
    __slots__ = ("vars", "parent")

    def __init__(self, parent: "Scope | None" = None):
        self.vars: dict = {}
        self.parent = parent

    def lookup(self, name: str):
        s = self
        while s is not None:
            v = s.vars
            if name in v:
                return v[name]
            s = s.parent
        raise DynTypeError(f"{name} is not defined")

    def assign(self, name: str, value) -> None:
        s = self
        while s is not None:
            if name in s.vars:
                s.vars[name] = value
                return
            s = s.parent
        raise DynTypeError(f"{name} is not defined")


class Closure(FunctionValue):
    __slots__ = ("fn_id", "params", "body", "scope")

    def __init__(self, fn_id: str, params: tuple, body: S.Block, scope: Scope):
        self.fn_id = fn_id
        self.params = params
        self.body = body
        self.scope = scope

    def __repr__(self) -> str:
        return f"<function {self.fn_id}>"


class _Break(Exception):
    def __init__(self, label):
        self.label = label


class _Return(Exception):
    def __init__(self, value):
        self.value = value


@dataclass
class RunStats:
    instructions: int = 0
    peak_bytes: int = 0
    events: int = 0
    wall: float = 0.0


@dataclass
class _Pending:
    handler: int | None
    callback: object
    payload: object


@dataclass
class Interpreter:
    """One sandbox instance. ``run`` serves a single request.

    ``program`` is the desugared program, or an instrumented one when a
    ``builder`` is passed to :meth:`run`.
    """

    program: S.Program
    upstream: Upstream = field(default_factory=NoUpstream)
    deadline: float = DEFAULT_DEADLINE
    instruction_limit: int | None = DEFAULT_INSTRUCTIONS
    memory_limit: int | None = DEFAULT_MEMORY
    globals_: tuple = ()
    permissive: bool = False
    global_values: dict = field(default_factory=dict)  # initial values for globals_

    def run(self, req: Request, builder: BuilderState | None = None) -> Response:
        run = _Run(self, req, builder)
        return run.go()

    def run_with_stats(self, req: Request, builder: BuilderState | None = None):
        run = _Run(self, req, builder)
        resp = run.go()
        return resp, run.stats


def error_response(e: Exception) -> Response:
    if isinstance(e, GuestTimeout):
        return Response(504, f"timeout: {e}".encode(), "text/plain; charset=utf-8")
    return Response(500, f"error: {e}".encode(), "text/plain; charset=utf-8")


class _Run:
    """State of one request: scopes, heap, event queue, response slot."""

    def __init__(self, interp: Interpreter, req: Request, builder: BuilderState | None):
        self.interp = interp
        self.req = req
        self.b = builder
        self.heap = Heap(interp.memory_limit)
        self.queue: deque = deque()
        self.response = None
        self.responded = False
        self.stats = RunStats()
        self.steps = 0
        self.limit = interp.instruction_limit
        self.t_end = time.monotonic() + interp.deadline
        self.builtins = {name: Builtin(name) for name in interp.program.builtins}
        self.shims = {"get": self._get, "post": self._post, "respond": self._respond,
                      "listen": self._listen}

    # -------------------------------------------------------------- driver

    def go(self) -> Response:
        t0 = time.perf_counter()
        try:
            self._main()
        finally:
            self.stats.peak_bytes = self.heap.peak
            self.stats.instructions = self.steps
            self.stats.wall = time.perf_counter() - t0
        if not self.responded:
            raise GuestTimeout("the function finished without responding")
        return response_for(self.response)

    def _main(self):
        root = Scope()
        root.vars.update(self.builtins)
        for g in self.interp.globals_:
            root.vars[g] = self.interp.global_values.get(g, UNDEFINED)
        self.root = root
        b = self.b
        if b is not None:
            b.begin_main()
        self.exec_block_body(self.interp.program.body.body, Scope(root))
        while self.queue and not self.responded:
            self.tick()
            p = self.queue.popleft()
            self.stats.events += 1
            if b is not None:
                b.load_handler(p.handler)
            self.invoke(p.callback, [p.payload], traced_args=1 if b is not None else None)
            if b is not None:
                b.save_handler(p.handler)
        if b is not None and (b.kappa or b.alpha):
            raise TraceCorruption("request ended with a non-empty context or argument stack")

    def tick(self):
        self.steps += 1
        if self.limit is not None and self.steps > self.limit:
            raise InstructionLimit(f"instruction limit of {self.limit} exceeded")
        if self.steps & 1023 == 0 and time.monotonic() > self.t_end:
            raise GuestTimeout(f"request exceeded {self.interp.deadline} s")

    # ---------------------------------------------------------- statements

    def exec_block_body(self, stmts, scope: Scope):
        for s in stmts:
            self.exec(s, scope)

    def exec(self, s, scope: Scope):
        ty = type(s)
        if ty is S.RtCall:
            self.rt(s, scope)
        elif ty is S.Let:
            v = s.value
            tv = type(v)
            if tv is S.Function:
                self.heap.charge(CELL_BYTES)
                scope.vars[s.name] = Closure(s.name, v.params, v.body, scope)
            elif tv is S.Call:
                scope.vars[s.name] = self.call(v, scope)
            else:
                scope.vars[s.name] = self.eval(v, scope)
            self.heap.charge(CELL_BYTES)
        elif ty is S.Assign:
            t = s.target
            if type(t) is S.Name:
                scope.assign(t.id, self.eval(s.value, scope))
            else:
                obj = self.eval(t.obj, scope)
                key = self.eval(t.key, scope)
                set_index(obj, key, self.eval(s.value, scope), self.heap)
        elif ty is S.Block:
            inner = Scope(scope)
            for x in s.body:
                self.exec(x, inner)
        elif ty is S.Group:
            for x in s.body:
                self.exec(x, scope)
        elif ty is S.If:
            if truthy(self.eval(s.test, scope)):
                self.exec(s.then, scope)
            else:
                self.exec(s.orelse, scope)
        elif ty is S.While:
            test, body = s.test, s.body
            while True:
                self.tick()
                if not truthy(self.eval(test, scope)):
                    break
                self.exec(body, scope)
        elif ty is S.Labeled:
            try:
                self.exec(s.body, scope)
            except _Break as e:
                if e.label != s.label:
                    raise
        elif ty is S.Break:
            raise _Break(s.label)
        elif ty is S.Return:
            raise _Return(self.eval(s.value, scope))
        else:
            raise GuestError(f"cannot execute {type(s).__name__}")

    # --------------------------------------------------------- expressions

    def eval(self, e, scope: Scope):
        ty = type(e)
        if ty is S.Const:
            return e.value
        if ty is S.Name:
            return scope.lookup(e.id)
        if ty is S.BinOp:
            op = e.op
            if op == "&&":
                left = self.eval(e.left, scope)
                return self.eval(e.right, scope) if truthy(left) else left
            if op == "||":
                left = self.eval(e.left, scope)
                return left if truthy(left) else self.eval(e.right, scope)
            return binop(op, self.eval(e.left, scope), self.eval(e.right, scope), self.heap)
        if ty is S.Index:
            return get_index(self.eval(e.obj, scope), self.eval(e.key, scope))
        if ty is S.UnOp:
            return unop(e.op, self.eval(e.operand, scope))
        if ty is S.Cond:
            if truthy(self.eval(e.test, scope)):
                return self.eval(e.then, scope)
            return self.eval(e.orelse, scope)
        if ty is S.ObjectLit:
            props = {}
            for k, v in e.fields:
                props[k] = self.eval(v, scope)
            return self.heap.new_object(props)
        if ty is S.ArrayLit:
            return self.heap.new_array([self.eval(v, scope) for v in e.items])
        if ty is S.MethodCall:
            obj = self.eval(e.obj, scope)
            args = [self.eval(a, scope) for a in e.args]
            return call_method(obj, e.method, args, self.heap)
        if ty is S.PrimCall:
            args = [self.eval(a, scope) for a in e.args]
            if e.name == "eval":
                return self._eval_string(args, scope)
            return call_primitive(e.name, args, self.heap)
        raise GuestError(f"cannot evaluate {type(e).__name__}")

    def _eval_string(self, args, scope):
        if not self.interp.permissive or self.b is not None:
            raise DynTypeError("eval is not available")
        from .frontend import parse

        src = to_string(args[0]) if args else "undefined"
        try:
            p = parse(f"let __eval = ({src});", permissive=False)
        except ParseError as e:
            raise DynTypeError(f"eval: {e}") from None
        (stmt,) = p.body.body
        if not isinstance(stmt, S.Let) or isinstance(stmt.value, (S.Call, S.Function)):
            raise DynTypeError("eval: only expressions are supported")
        return self.eval(stmt.value, scope)

    # -------------------------------------------------------- applications

    def call(self, c: S.Call, scope: Scope):
        f = scope.lookup(c.callee)
        args = [self.eval(a, scope) for a in c.args]
        return self.invoke(f, args, traced_args=len(args) if self.b is not None else None)

    def invoke(self, f, args: list, traced_args: int | None = None):
        """Apply ``f``. When tracing, ``traced_args`` argument traces sit on the
        argument stack below the callee's environment trace."""
        if type(f) is Closure:
            params = f.params
            if traced_args is not None:
                self.b.adjust_args(traced_args, len(params))
            scope = Scope(f.scope)
            for i, p in enumerate(params):
                scope.vars[p] = args[i] if i < len(args) else UNDEFINED
            self.heap.charge(CELL_BYTES * (len(params) + 1))
            try:
                self.exec(f.body, scope)
            except _Return as r:
                return r.value
            return UNDEFINED
        if type(f) is Builtin:
            return self.shims[f.name](args, traced_args)
        raise DynTypeError(f"{type_tag(f)} is not a function")

    # ------------------------------------------------------------ builtins

    def _traces(self, n: int | None) -> list:
        """Pop the builtin's own environment and then its ``n`` argument traces."""
        if n is None:
            return []
        b = self.b
        b.pop_arg()
        return [b.pop_arg() for _ in range(n)]

    def _register(self, ev: str, args: list, traces: list, cb_index: int, arg):
        cb = args[cb_index] if cb_index < len(args) else UNDEFINED
        if not isinstance(cb, FunctionValue):
            raise DynTypeError(f"{ev}: callback is {type_tag(cb)}, not a function")
        n = None
        if self.b is not None:
            t_arg = traces[0] if cb_index > 0 and traces else T.UNDEF
            t_cb = traces[cb_index] if cb_index < len(traces) else T.UNDEF
            n = self.b.new_handler(ev, t_arg, t_cb)
        payload = perform(ev, arg, self.heap, self.interp.upstream, self.req)
        self.queue.append(_Pending(n, cb, payload))
        return UNDEFINED

    def _get(self, args, n):
        traces = self._traces(n)
        url = args[0] if args else UNDEFINED
        return self._register("get", args, traces, 1, url)

    def _post(self, args, n):
        traces = self._traces(n)
        arg = args[0] if args else UNDEFINED
        return self._register("post", args, traces, 1, arg)

    def _listen(self, args, n):
        traces = self._traces(n)
        return self._register("listen", args, traces, 0, UNDEFINED)

    def _respond(self, args, n):
        traces = self._traces(n)
        if self.responded:
            raise GuestError("respond called twice")
        v = args[0] if args else UNDEFINED
        if self.b is not None:
            self.b.record_leaf(T.Respond(traces[0] if traces else T.UNDEF))
        self.response = v
        self.responded = True
        return UNDEFINED

    # ------------------------------------------------------ runtime calls

    def rt(self, s: S.RtCall, scope: Scope):
        b = self.b
        if b is None:
            return  # instrumented code run without a tracer: calls are no-ops
        op, a = s.op, s.args
        if op == "let":
            t = a[1]
            b.let(a[0], b.pop_arg() if t is POP else t)
        elif op == "set":
            b.set(a[0], a[1])
        elif op == "enterSeq":
            b.enter_seq(a[0])
        elif op == "seqNext":
            b.seq_next()
        elif op == "pop":
            b.pop()
        elif op == "pushArg":
            b.push_arg(a[0])
        elif op == "named":
            b.named(a[0])
        elif op == "ifTrue":
            b.if_true(a[0])
        elif op == "ifFalse":
            b.if_false(a[0])
        elif op == "while":
            b.while_(a[0])
        elif op == "label":
            b.label(a[0])
        elif op == "break":
            b.brk(a[0], a[1])
        elif op == "popTo":
            b.pop_to(a[0])
        elif op == "pushFn":
            b.push_arg(self._fn_guard(a[0], scope.lookup(a[1].id)))
        elif op == "leaf":
            b.record_leaf(a[0])
        elif op == "saveHandler":
            b.save_handler(a[0])
        else:
            raise TraceCorruption(f"unknown runtime call {op}")

    @staticmethod
    def _fn_guard(t, value):
        if type(value) is Closure:
            return T.CheckFn(t, value.fn_id)
        if type(value) is Builtin:
            return T.CheckFn(t, value.name)
        return t


def run_plain(program: S.Program, req: Request, upstream: Upstream | None = None,
              **kwargs) -> Response:
    """Serve ``req`` with the plain interpreter; guest failures become 500/504."""
    interp = Interpreter(program, upstream or NoUpstream(), **kwargs)
    try:
        return interp.run(req)
    except GuestError as e:
        return error_response(e)
