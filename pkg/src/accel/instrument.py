"""The tracing compiler.

Rewrites a desugared program so that running it also drives the tracing
runtime (:class:`accel.builder.BuilderState`). The original statements are
kept verbatim; the compiler only interleaves :class:`RtCall` statements,
threading a compile-time environment ``rho`` that maps each guest variable
to the trace expression that denotes it at that point.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import syntax as S
from . import trace as T
from .errors import CompileError, UnsupportedFeature
from .frontend import RETURN_LABEL
from .syntax import POP, Group, RtCall

# callback argument position of each builtin that takes one
CALLBACK_ARG = {"get": 1, "post": 1, "listen": 0}


def rt(op: str, *args) -> RtCall:
    return RtCall(op, tuple(args))


@dataclass
class _Analysis:
    static_funs: set  # names bound to a function and never reassigned
    tagged: set  # functions whose environments carry an identity tag


def _analyse(p: S.Program) -> _Analysis:
    funs, assigned = set(), set()
    for n in S.walk(p):
        if isinstance(n, S.Let) and isinstance(n.value, S.Function):
            funs.add(n.name)
        elif isinstance(n, S.Assign) and isinstance(n.target, S.Name):
            assigned.add(n.target.id)
    # a function escapes when its name is used as a value anywhere other than
    # the callback slot of a builtin
    escaping = {n.id for n in _value_uses(p) if n.id in funs}
    return _Analysis(funs - assigned, escaping | (funs & assigned))


def _value_uses(p):
    """Names used as values, excluding the callback argument of builtin calls."""
    out = []

    def expr(e):
        for n in S.walk(e):
            if isinstance(n, S.Name):
                out.append(n)

    def stmt(s):
        if isinstance(s, S.Block):
            for x in s.body:
                stmt(x)
        elif isinstance(s, S.Let):
            v = s.value
            if isinstance(v, S.Function):
                stmt(v.body)
            elif isinstance(v, S.Call):
                i = CALLBACK_ARG.get(v.callee, -1)
                for j, a in enumerate(v.args):
                    if j == i and isinstance(a, S.Name):
                        continue
                    expr(a)
            else:
                expr(v)
        elif isinstance(s, S.Assign):
            expr(s.target)
            expr(s.value)
        elif isinstance(s, S.If):
            expr(s.test)
            stmt(s.then)
            stmt(s.orelse)
        elif isinstance(s, S.While):
            expr(s.test)
            stmt(s.body)
        elif isinstance(s, S.Labeled):
            stmt(s.body)
        elif isinstance(s, S.Return):
            expr(s.value)

    stmt(p.body)
    return out


def _addr(t):
    if isinstance(t, T.Var):
        return T.VarAddr(t.name)
    if isinstance(t, T.EnvRead):
        return T.EnvAddr(t.env, t.name)
    raise CompileError(f"cannot take the address of {T.show(t)}")


class Instrumenter:
    def __init__(self, program: S.Program | None = None, globals_: tuple = ()):
        self.builtins = set(S.BUILTINS) if program is None else set(program.builtins)
        self.noncapture = self.builtins | set(globals_)
        names = set()
        if program is not None:
            for n in S.walk(program):
                if isinstance(n, S.Name):
                    names.add(n.id)
                elif isinstance(n, S.Let):
                    names.add(n.name)
                elif isinstance(n, S.Function):
                    names.update(n.params)
        self.envid = "envid"
        k = 0
        while self.envid in names:
            k += 1
            self.envid = f"envid${k}"
        self.analysis = _analyse(program) if program is not None else _Analysis(set(), set())

    def initial_env(self) -> dict:
        return {x: T.Var(x) for x in sorted(self.noncapture)}

    # ------------------------------------------------------------ expressions

    def expr(self, e, rho: dict):
        if isinstance(e, S.Const):
            return T.Const(e.value)
        if isinstance(e, S.Name):
            try:
                return rho[e.id]
            except KeyError:
                raise CompileError(f"unbound variable {e.id!r}") from None
        if isinstance(e, S.BinOp):
            return T.BinOp(e.op, self.expr(e.left, rho), self.expr(e.right, rho))
        if isinstance(e, S.UnOp):
            return T.UnOp(e.op, self.expr(e.operand, rho))
        if isinstance(e, S.Cond):
            return T.Cond(self.expr(e.test, rho), self.expr(e.then, rho), self.expr(e.orelse, rho))
        if isinstance(e, S.Index):
            return T.Index(self.expr(e.obj, rho), self.expr(e.key, rho))
        if isinstance(e, S.ObjectLit):
            return T.ObjectLit(tuple((k, self.expr(v, rho)) for k, v in e.fields))
        if isinstance(e, S.ArrayLit):
            return T.ArrayLit(tuple(self.expr(v, rho) for v in e.items))
        if isinstance(e, S.MethodCall):
            return T.Method(self.expr(e.obj, rho), e.method,
                            tuple(self.expr(a, rho) for a in e.args))
        if isinstance(e, S.PrimCall):
            if e.name == "eval":
                raise UnsupportedFeature("eval")
            return T.Prim(e.name, tuple(self.expr(a, rho) for a in e.args))
        raise CompileError(f"not a core expression: {e!r}")

    def lval(self, e, rho):
        if isinstance(e, S.Name):
            t = self.expr(e, rho)
            if e.id in self.builtins:
                raise CompileError(f"cannot assign to builtin {e.id!r}")
            return t
        if isinstance(e, S.Index):
            return T.Index(self.expr(e.obj, rho), self.expr(e.key, rho))
        raise CompileError(f"not an l-value: {e!r}")

    # ------------------------------------------------------------- statements

    def stmt(self, s, rho: dict, labels: frozenset) -> tuple[list, dict]:
        if isinstance(s, RtCall):
            return [s], rho
        if isinstance(s, S.Let):
            v = s.value
            if isinstance(v, S.Function):
                return self.function(s.name, v, rho)
            if isinstance(v, S.Call):
                return self.application(s.name, v, rho)
            out = [rt("let", s.name, self.expr(v, rho)), s]
            return out, {**rho, s.name: T.Var(s.name)}
        if isinstance(s, S.Assign):
            return [rt("set", self.lval(s.target, rho), self.expr(s.value, rho)), s], rho
        if isinstance(s, S.Block):
            return [self.block(s.body, rho, labels)], rho
        if isinstance(s, S.If):
            cond = self.expr(s.test, rho)
            then, _ = self.stmt(s.then, rho, labels)
            orelse, _ = self.stmt(s.orelse, rho, labels)
            node = S.If(s.test, Group((rt("ifTrue", cond),) + tuple(then)),
                        Group((rt("ifFalse", cond),) + tuple(orelse)))
            return [node, rt("pop")], rho
        if isinstance(s, S.While):
            cond = self.expr(s.test, rho)
            body, _ = self.stmt(s.body, rho, labels)
            return [rt("while", cond), S.While(s.test, Group(tuple(body))), rt("pop")], rho
        if isinstance(s, S.Labeled):
            body, _ = self.stmt(s.body, rho, labels | {s.label})
            node = S.Labeled(s.label, Group(tuple(body) + (rt("pop"),)))
            return [rt("label", s.label), node], rho
        if isinstance(s, S.Break):
            if s.label not in labels:
                raise CompileError(f"break to unknown label {s.label!r}")
            return [rt("break", s.label, T.UNDEF), rt("popTo", s.label), s], rho
        if isinstance(s, S.Return):
            if RETURN_LABEL not in labels:
                raise CompileError("return outside of a function")
            t = self.expr(s.value, rho)
            return [rt("break", RETURN_LABEL, t), rt("popTo", RETURN_LABEL), s], rho
        raise CompileError(f"not a core statement: {s!r}")

    def block(self, stmts, rho, labels) -> S.Block:
        if not stmts:
            return S.Block((rt("leaf", T.Block(())),))
        if len(stmts) == 1 and not isinstance(stmts[0], (S.Let, RtCall)):
            # a lone statement that binds nothing is its own trace
            part, _ = self.stmt(stmts[0], rho, labels)
            return S.Block(tuple(part))
        out: list = [rt("enterSeq", len(stmts))]
        for i, s in enumerate(stmts):
            if i:
                out.append(rt("seqNext"))
            part, rho = self.stmt(s, rho, labels)
            out.extend(part)
        out.append(rt("pop"))
        return S.Block(tuple(out))

    def function(self, name: str, f: S.Function, rho: dict):
        for n in S.walk(f.body):
            if (isinstance(n, S.Name) and n.id == name) or (
                    isinstance(n, S.Call) and n.callee == name):
                raise UnsupportedFeature(f"recursion ({name})")
        captured = [y for y in rho if y not in self.noncapture]
        env = T.Env(tuple((y, _addr(rho[y])) for y in captured),
                    name if name in self.analysis.tagged else None)
        inner = {y: rho[y] for y in rho if y in self.noncapture}
        for y in captured:
            inner[y] = T.EnvRead(T.Var(self.envid), y)
        for p in f.params:
            inner[p] = T.Var(p)
        prologue = [rt("let", self.envid, POP)] + [rt("let", p, POP) for p in f.params]
        body = self.block(tuple(prologue) + f.body.body, inner, frozenset({RETURN_LABEL}))
        new_body = S.Block((rt("label", RETURN_LABEL), body, rt("pop")))
        out = [rt("let", name, env), S.Let(name, S.Function(f.params, new_body))]
        return out, {**rho, name: T.Var(name)}

    def application(self, r: str, call: S.Call, rho: dict):
        out = [rt("pushArg", self.expr(a, rho)) for a in reversed(call.args)]
        cb = CALLBACK_ARG.get(call.callee)
        if cb is not None and cb < len(call.args):
            # the callback slot is checked by identity when it is not a known function
            a = call.args[cb]
            if not (isinstance(a, S.Name) and a.id in self.analysis.static_funs):
                i = len(call.args) - 1 - cb
                out[i] = rt("pushFn", self.expr(a, rho), a)
        if call.callee not in rho:
            raise CompileError(f"unbound function {call.callee!r}")
        f_trace = rho[call.callee]
        if call.callee in self.builtins or call.callee in self.analysis.static_funs:
            out.append(rt("pushArg", f_trace))
        else:
            out.append(rt("pushFn", f_trace, S.Name(call.callee)))
        out += [rt("named", r), S.Let(r, call), rt("pop")]
        return out, {**rho, r: T.Var(r)}

    # ---------------------------------------------------------------- program

    def program(self, p: S.Program) -> S.Program:
        rho = self.initial_env()
        if p.body.body:
            top = self.block(p.body.body, rho, frozenset())
            body = top.body
        else:
            body = (rt("leaf", T.Block(())),)
        return S.Program(S.Block(body + (rt("saveHandler", 0),)), p.builtins)


def instrument(p: S.Program, globals_: tuple = ()) -> S.Program:
    """Instrument a whole desugared program; ends with ``saveHandler(0)``."""
    return Instrumenter(p, globals_).program(p)


def compile_stmt(s, rho: dict | None = None, globals_: tuple = (), program=None):
    """Compile one statement; returns ``(statements, rho')``."""
    if program is None:
        program = S.Program(S.Block((s,)))
    ins = Instrumenter(program, globals_)
    if rho is None:
        rho = ins.initial_env()
    return ins.stmt(s, rho, frozenset())


def erase_program(p: S.Program) -> S.Program:
    """Strip the runtime calls from an instrumented program."""
    body = S._erase_seq(p.body.body)
    return S.Program(S.Block(body), p.builtins)


def dump(node, indent: int = 0) -> str:
    """Readable listing of an instrumented program; runtime calls are marked ``|``."""
    from .frontend import show_expr

    pad = "  " * indent
    lines = []

    def arg(a):
        if a is POP:
            return "popArg()"
        if isinstance(a, S.Name):
            return a.id
        if isinstance(a, (str, int)):
            return str(a)
        return "[" + T.show(a) + "]"

    def go(s, ind):
        p = "  " * ind
        if isinstance(s, RtCall):
            lines.append(f"|{p}{s.op}(" + ", ".join(arg(a) for a in s.args) + ");")
        elif isinstance(s, (S.Block, Group)):
            lines.append(f" {p}{{")
            for x in s.body:
                go(x, ind + 1)
            lines.append(f" {p}}}")
        elif isinstance(s, S.Let) and isinstance(s.value, S.Function):
            lines.append(f" {p}let {s.name} = function({', '.join(s.value.params)})")
            go(s.value.body, ind + 1)
        elif isinstance(s, S.Let) and isinstance(s.value, S.Call):
            c = s.value
            lines.append(f" {p}let {s.name} = {c.callee}(" + ", ".join(show_expr(a) for a in c.args)
                         + ");")
        elif isinstance(s, S.Let):
            lines.append(f" {p}let {s.name} = {show_expr(s.value)};")
        elif isinstance(s, S.Assign):
            lines.append(f" {p}{show_expr(s.target)} = {show_expr(s.value)};")
        elif isinstance(s, S.If):
            lines.append(f" {p}if ({show_expr(s.test)})")
            go(s.then, ind + 1)
            lines.append(f" {p}else")
            go(s.orelse, ind + 1)
        elif isinstance(s, S.While):
            lines.append(f" {p}while ({show_expr(s.test)})")
            go(s.body, ind + 1)
        elif isinstance(s, S.Labeled):
            lines.append(f" {p}{s.label}:")
            go(s.body, ind + 1)
        elif isinstance(s, S.Break):
            lines.append(f" {p}break {s.label};")
        elif isinstance(s, S.Return):
            lines.append(f" {p}return {show_expr(s.value)};")
        else:
            lines.append(f" {p}{s!r}")

    if isinstance(node, S.Program):
        for s in node.body.body:
            go(s, indent)
    else:
        go(node, indent)
    del pad
    return "\n".join(lines)
