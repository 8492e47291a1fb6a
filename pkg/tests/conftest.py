from __future__ import annotations

import sys
from dataclasses import dataclass

import pytest

from accel import trace as T
from accel.builder import BuilderState, plug
from accel.errors import GuestError
from accel.events import NoUpstream, Request
from accel.frontend import compile_source
from accel.instrument import instrument
from accel.interpreter import Interpreter


@dataclass
class State:
    op: str
    c: object
    kappa: tuple
    alpha: tuple
    table: dict


class Recorder:
    """Observer that keeps a copy of the builder state after every operation."""

    def __init__(self):
        self.states: list[State] = []

    def __call__(self, b: BuilderState, op: str, args):
        self.states.append(State(op, b.c, tuple(b.kappa), tuple(b.alpha), dict(b.table)))

    def after(self, op: str) -> list[State]:
        return [s for s in self.states if s.op == op]


def trace_program(source: str, runs, globals_=(), upstream=None, builder=None):
    """Trace ``source`` once per entry of ``runs`` (each a dict of global values).

    Returns the builder and a recorder holding every intermediate state.
    Programs without ``respond`` end in a GuestError, which is expected here.
    """
    ip = instrument(compile_source(source), tuple(globals_))
    b = builder or BuilderState()
    rec = Recorder()
    prev = b.observer
    if prev is None:
        b.observer = rec
    else:
        def both(state, op, args):
            prev(state, op, args)
            rec(state, op, args)
        b.observer = both
    for values in runs:
        rec.states.append(State("begin", b.table[0].body, (), (), dict(b.table)))
        interp = Interpreter(ip, upstream or NoUpstream(), globals_=tuple(globals_),
                             global_values=dict(values))
        try:
            interp.run(Request(), b)
        except GuestError:
            pass
    return b, rec


def check_zipper(b: BuilderState) -> None:
    """The whole tree is well formed and equals the result of popping every frame."""
    whole = plug(b.c, b.kappa)
    assert T.is_well_formed(whole)
    copy = b.snapshot()
    while copy.kappa:
        copy.pop()
    assert copy.c == whole


@pytest.fixture
def recorder():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for title, (ok, note) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {title}  ({note})")
