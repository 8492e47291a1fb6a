"""The stateful tracing runtime: current trace, context, argument stack and
handler table, with the zipper operations that grow a trace tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import trace as T
from .errors import TraceCorruption, TraceDivergence
from .trace import UNKNOWN, Handler

# ---------------------------------------------------------------- frames


@dataclass(frozen=True)
class SeqFrame:
    done: tuple
    todo: tuple


@dataclass(frozen=True)
class IfTrueFrame:
    cond: object
    orelse: object


@dataclass(frozen=True)
class IfFalseFrame:
    cond: object
    then: object


@dataclass(frozen=True)
class WhileFrame:
    cond: object


@dataclass(frozen=True)
class LabelFrame:
    label: str


@dataclass(frozen=True)
class NamedFrame:
    name: str


def fold(frame, c):
    """Combine one context frame with the trace in its hole."""
    if isinstance(frame, SeqFrame):
        return T.Block(frame.done + (c,) + frame.todo)
    if isinstance(frame, IfTrueFrame):
        return T.If(frame.cond, c, frame.orelse)
    if isinstance(frame, IfFalseFrame):
        return T.If(frame.cond, frame.then, c)
    if isinstance(frame, WhileFrame):
        return T.While(frame.cond, c)
    if isinstance(frame, LabelFrame):
        return T.Label(frame.label, c)
    if isinstance(frame, NamedFrame):
        return T.Let(frame.name, c)
    raise TraceCorruption(f"not a context frame: {frame!r}")


def plug(c, kappa) -> object:
    """Fill the hole of context ``kappa`` (innermost frame last) with ``c``."""
    for frame in reversed(kappa):
        c = fold(frame, c)
    return c


def initial_table() -> dict:
    return {0: Handler("$arg0", "$env0", UNKNOWN)}


# trace expressions whose evaluation can neither fail nor have effects
_INERT = (T.Const, T.Var, T.Env, T.VarAddr)

# ----------------------------------------------------------------- state


@dataclass
class BuilderState:
    c: object = UNKNOWN
    kappa: list = field(default_factory=list)
    alpha: list = field(default_factory=list)  # top of stack is the last element
    table: dict = field(default_factory=initial_table)
    next_handler: int = 1
    observer: Callable | None = None

    # ------------------------------------------------------------ helpers

    def _notify(self, op: str, *args):
        if self.observer is not None:
            self.observer(self, op, args)

    def snapshot(self) -> "BuilderState":
        """A copy that shares the (immutable) trace nodes."""
        return BuilderState(self.c, list(self.kappa), list(self.alpha), dict(self.table),
                            self.next_handler)

    def restore(self, snap: "BuilderState") -> None:
        self.c = snap.c
        self.kappa = list(snap.kappa)
        self.alpha = list(snap.alpha)
        self.table = dict(snap.table)
        self.next_handler = snap.next_handler

    def whole(self):
        return plug(self.c, self.kappa)

    # ------------------------------------------------------ leaf operations

    def record_leaf(self, leaf) -> None:
        """Replace the focus with ``leaf``.

        An already-traced focus must agree with ``leaf``; anything else means
        this program point produced two different traces.
        """
        if self.c is not UNKNOWN and self.c != leaf:
            raise TraceDivergence(f"expected {T.show(self.c)}, got {T.show(leaf)}")
        self.c = leaf
        self._notify("leaf", leaf)

    def let(self, name: str, t) -> None:
        self.record_leaf(T.Let(name, t))

    def set(self, lval, t) -> None:
        self.record_leaf(T.Set(lval, t))

    def brk(self, label: str, t) -> None:
        self.record_leaf(T.Break(label, t))

    # ------------------------------------------------- interior operations

    def enter_seq(self, n: int) -> None:
        c = self.c
        if c is UNKNOWN:
            if n == 0:
                raise TraceCorruption("enterSeq(0)")
            self.kappa.append(SeqFrame((), (UNKNOWN,) * (n - 1)))
            self.c = UNKNOWN
        elif isinstance(c, T.Block) and len(c.body) == n and n > 0:
            self.kappa.append(SeqFrame((), c.body[1:]))
            self.c = c.body[0]
        else:
            raise TraceDivergence(f"enterSeq({n}) at {T.show(c)}")
        self._notify("enterSeq", n)

    def seq_next(self) -> None:
        if not self.kappa or not isinstance(self.kappa[-1], SeqFrame):
            raise TraceCorruption("seqNext outside a block")
        top = self.kappa[-1]
        if not top.todo:
            raise TraceCorruption("seqNext past the end of a block")
        self.kappa[-1] = SeqFrame(top.done + (self.c,), top.todo[1:])
        self.c = top.todo[0]
        self._notify("seqNext")

    def if_true(self, cond) -> None:
        c = self.c
        if c is UNKNOWN:
            self.kappa.append(IfTrueFrame(cond, UNKNOWN))
        elif isinstance(c, T.If) and c.test == cond:
            self.kappa.append(IfTrueFrame(cond, c.orelse))
            self.c = c.then
        else:
            raise TraceDivergence(f"ifTrue({T.show(cond)}) at {T.show(c)}")
        self._notify("ifTrue", cond)

    def if_false(self, cond) -> None:
        c = self.c
        if c is UNKNOWN:
            self.kappa.append(IfFalseFrame(cond, UNKNOWN))
        elif isinstance(c, T.If) and c.test == cond:
            self.kappa.append(IfFalseFrame(cond, c.then))
            self.c = c.orelse
        else:
            raise TraceDivergence(f"ifFalse({T.show(cond)}) at {T.show(c)}")
        self._notify("ifFalse", cond)

    def while_(self, cond) -> None:
        c = self.c
        if c is UNKNOWN:
            self.kappa.append(WhileFrame(cond))
        elif isinstance(c, T.While) and c.test == cond:
            self.kappa.append(WhileFrame(cond))
            self.c = c.body
        else:
            raise TraceDivergence(f"while({T.show(cond)}) at {T.show(c)}")
        self._notify("while", cond)

    def label(self, name: str) -> None:
        c = self.c
        if c is UNKNOWN:
            self.kappa.append(LabelFrame(name))
        elif isinstance(c, T.Label) and c.label == name:
            self.kappa.append(LabelFrame(name))
            self.c = c.body
        else:
            raise TraceDivergence(f"label({name}) at {T.show(c)}")
        self._notify("label", name)

    def named(self, name: str) -> None:
        c = self.c
        if c is UNKNOWN:
            self.kappa.append(NamedFrame(name))
        elif isinstance(c, T.Let) and c.name == name:
            self.kappa.append(NamedFrame(name))
            self.c = c.value
        else:
            raise TraceDivergence(f"named({name}) at {T.show(c)}")
        self._notify("named", name)

    # ----------------------------------------------------------- ascending

    def pop(self) -> None:
        if not self.kappa:
            raise TraceCorruption("pop with an empty context")
        self.c = fold(self.kappa.pop(), self.c)
        self._notify("pop")

    def pop_to(self, label: str) -> None:
        if not any(isinstance(f, LabelFrame) and f.label == label for f in self.kappa):
            raise TraceCorruption(f"popTo({label}) with no enclosing label")
        while True:
            frame = self.kappa.pop()
            self.c = fold(frame, self.c)
            if isinstance(frame, LabelFrame) and frame.label == label:
                break
        self._notify("popTo", label)

    # ------------------------------------------------------ argument stack

    def push_arg(self, t) -> None:
        self.alpha.append(t)
        self._notify("pushArg", t)

    def pop_arg(self):
        if not self.alpha:
            raise TraceCorruption("popArg on an empty argument stack")
        t = self.alpha.pop()
        self._notify("popArg")
        return t

    def adjust_args(self, given: int, wanted: int) -> None:
        """Reconcile an application that pushed ``given`` argument traces (below
        the callee environment) with a callee that pops ``wanted`` of them.

        Missing arguments become ``undefined``. Surplus ones are dropped when
        evaluating them cannot have an effect; otherwise the call cannot be
        traced faithfully.
        """
        if given == wanted:
            return
        if len(self.alpha) < given + 1:
            raise TraceCorruption("argument stack shorter than the application")
        cut = len(self.alpha) - 1 - given
        if given < wanted:
            self.alpha[cut:cut] = [T.UNDEF] * (wanted - given)
        else:
            extra = self.alpha[cut:cut + given - wanted]
            if not all(isinstance(t, _INERT) for t in extra):
                raise TraceCorruption("surplus argument with possible effects")
            del self.alpha[cut:cut + given - wanted]
        self._notify("adjustArgs", given, wanted)

    # ---------------------------------------------------- event handlers

    def new_handler(self, ev: str, t_arg, t_env) -> int:
        c = self.c
        if c is UNKNOWN:
            n = self.next_handler
            self.next_handler += 1
            self.c = T.Event(ev, t_arg, t_env, n)
            self.table[n] = Handler(f"$arg{n}", f"$env{n}", UNKNOWN)
            self._notify("newHandler", n)
            return n
        if (isinstance(c, T.Event) and c.ev == ev and c.arg == t_arg and c.env == t_env
                and c.handler in self.table):
            self._notify("newHandler", c.handler)
            return c.handler
        raise TraceDivergence(f"newHandler({ev}) at {T.show(c)}")

    def load_handler(self, n: int) -> None:
        if n not in self.table:
            raise TraceCorruption(f"no handler {n}")
        if self.kappa:
            raise TraceCorruption("loadHandler with a non-empty context")
        h = self.table[n]
        # the callee pops its environment first, then its parameter
        self.alpha.append(T.Var(h.arg_id))
        self.alpha.append(T.Var(h.env_id))
        self.c = h.body
        self._notify("loadHandler", n)

    def save_handler(self, n: int) -> None:
        if self.kappa:
            raise TraceCorruption("saveHandler with a non-empty context")
        if n not in self.table:
            raise TraceCorruption(f"no handler {n}")
        h = self.table[n]
        self.table[n] = Handler(h.arg_id, h.env_id, self.c)
        self._notify("saveHandler", n)

    def begin_main(self) -> None:
        """Start tracing the main body (handler 0) of a fresh request."""
        if self.kappa or self.alpha:
            raise TraceCorruption("request started with a non-empty context")
        self.c = self.table[0].body
