"""Step-by-step tracing states of three small programs, compared with
hand-derived expectations."""

from __future__ import annotations

import time

from accel import trace as T
from accel.builder import IfFalseFrame, IfTrueFrame, LabelFrame, NamedFrame, SeqFrame
from accel.trace import UNKNOWN, Block, Break, Const, Env, EnvRead, Event, If, Label, Let, Set, Var
from accel.upstream import LocalUpstream

from conftest import check_zipper, trace_program

ABS_SOURCE = """
if (x < 0) {
  y = x * -1;
} else {
  y = x;
}
"""

COND = T.BinOp("<", Var("x"), Const(0))
NEG = Set(Var("y"), T.BinOp("*", Var("x"), Const(-1)))
COPY = Set(Var("y"), Var("x"))


def _rows(rec, ops):
    rows = [s for s in rec.states if s.op in ops]
    return [(s.c, s.kappa) for s in rows]


def _abs_rows():
    t0 = time.perf_counter()
    b, rec = trace_program(ABS_SOURCE, [{"x": -3}, {"x": 5}], globals_=("x", "y"))
    elapsed = time.perf_counter() - t0
    rows = _rows(rec, {"begin", "ifTrue", "ifFalse", "leaf", "pop"})
    return b, rows, elapsed


ABS_FIRST = [
    (UNKNOWN, ()),
    (UNKNOWN, (IfTrueFrame(COND, UNKNOWN),)),
    (NEG, (IfTrueFrame(COND, UNKNOWN),)),
    (If(COND, NEG, UNKNOWN), ()),
]
ABS_SECOND = [
    (If(COND, NEG, UNKNOWN), ()),
    (UNKNOWN, (IfFalseFrame(COND, NEG),)),
    (COPY, (IfFalseFrame(COND, NEG),)),
    (If(COND, NEG, COPY), ()),
]


def test_conditional_first_run_rows():
    _, rows, _ = _abs_rows()
    assert rows[:4] == ABS_FIRST


def test_conditional_second_run_rows():
    b, rows, elapsed = _abs_rows()
    assert rows[4:] == ABS_SECOND
    assert not T.contains_unknown(b.table[0].body)
    assert elapsed < 1.0


def test_conditional_same_branch_twice_is_stable():
    b, _ = trace_program(ABS_SOURCE, [{"x": -1}, {"x": -7}], globals_=("x", "y"))
    assert b.table[0].body == If(COND, NEG, UNKNOWN)


# ------------------------------------------------------ function application

FUN_SOURCE = """
let x = 10;
let F = function(y) { return x + y; };
let foo = F(3);
"""

LET_X = Let("x", Const(10))
LET_F = Let("F", Env((("x", T.VarAddr("x")),)))
LET_ENV = Let("envid", Var("F"))
LET_Y = Let("y", Const(3))
BRK = Break("$return", T.BinOp("+", EnvRead(Var("envid"), "x"), Var("y")))
RET_BLOCK = Label("$return", Block((LET_ENV, LET_Y, BRK)))
OUTER_SEQ = SeqFrame((LET_X, LET_F), ())
CALL = (OUTER_SEQ, NamedFrame("foo"), LabelFrame("$return"))

# (c, alpha from bottom to top, kappa from outermost to innermost)
FUN_ROWS = [
    (UNKNOWN, (), ()),
    (LET_X, (), (SeqFrame((), (UNKNOWN, UNKNOWN)),)),
    (LET_F, (), (SeqFrame((LET_X,), (UNKNOWN,)),)),
    (UNKNOWN, (Const(3), Var("F")), (OUTER_SEQ,)),
    (UNKNOWN, (Const(3), Var("F")), CALL),
    (LET_ENV, (Const(3),), CALL + (SeqFrame((), (UNKNOWN, UNKNOWN)),)),
    (LET_Y, (), CALL + (SeqFrame((LET_ENV,), (UNKNOWN,)),)),
    (BRK, (), CALL + (SeqFrame((LET_ENV, LET_Y), ()),)),
    (RET_BLOCK, (), (OUTER_SEQ, NamedFrame("foo"))),
    (Let("foo", RET_BLOCK), (), (OUTER_SEQ,)),
    (Block((LET_X, LET_F, Let("foo", RET_BLOCK))), (), ()),
]


def _fun_rows():
    _, rec = trace_program(FUN_SOURCE, [{}])
    s = rec.states
    pick = []
    pick.append(s[0])  # before the program runs
    leaves = [x for x in s if x.op == "leaf"]
    pick += leaves[:2]  # let x, let F
    pushes = [x for x in s if x.op == "pushArg"]
    pick.append(pushes[1])  # after pushing the callee
    pick.append(next(x for x in s if x.op == "label"))
    pick += leaves[2:5]  # let envid, let y, break
    pick.append(next(x for x in s if x.op == "popTo"))
    pops = [x for x in s if x.op == "pop"]
    pick += pops[-2:]
    return [(x.c, x.alpha, x.kappa) for x in pick]


def test_function_application_eleven_rows():
    rows = _fun_rows()
    assert len(rows) == 11
    for i, (got, want) in enumerate(zip(rows, FUN_ROWS)):
        assert got == want, f"row {i + 1}"


# ------------------------------------------------------------ event handler

GET_SOURCE = """
let F = function(resp) { out = resp; };
let r = get('example.com', F);
"""

MAIN_SEQ = SeqFrame((Let("F", Env(())),), ())
EVENT = Event("get", Const("example.com"), Var("F"), 1)
MAIN_BODY = Block((Let("F", Env(())), Let("r", EVENT)))
CB_BODY = Label("$return", Block((Let("envid", Var("$env1")), Let("resp", Var("$arg1")),
                                  Set(Var("out"), Var("resp")))))


def _get_rows():
    up = LocalUpstream(lambda method, path, body: (200, b'"x"'))
    b, rec = trace_program(GET_SOURCE, [{}], globals_=("out",), upstream=up)
    s = rec.states
    named = next(x for x in s if x.op == "named")
    new = next(x for x in s if x.op == "newHandler")
    saves = [x for x in s if x.op == "saveHandler"]
    load = next(x for x in s if x.op == "loadHandler")
    cb_done = [x for x in s if x.op == "pop"][-1]
    return b, [named, new, saves[0], load, cb_done, saves[1]]


def test_event_handler_six_states():
    b, rows = _get_rows()
    named, new, save0, load, done, save1 = rows

    assert (named.c, named.alpha, named.kappa) == (
        UNKNOWN, (Var("F"), Const("example.com"), Var("get")), (MAIN_SEQ, NamedFrame("r")))
    assert set(named.table) == {0} and named.table[0].body is UNKNOWN

    assert (new.c, new.alpha, new.kappa) == (EVENT, (), (MAIN_SEQ, NamedFrame("r")))
    assert new.table[1] == T.Handler("$arg1", "$env1", UNKNOWN)

    assert (save0.c, save0.alpha, save0.kappa) == (MAIN_BODY, (), ())
    assert save0.table[0].body == MAIN_BODY

    assert (load.c, load.alpha, load.kappa) == (UNKNOWN, (Var("$arg1"), Var("$env1")), ())

    assert (done.c, done.alpha, done.kappa) == (CB_BODY, (), ())
    assert done.table[1].body is UNKNOWN

    assert (save1.c, save1.kappa) == (CB_BODY, ())
    assert save1.table[1] == T.Handler("$arg1", "$env1", CB_BODY)
    assert b.table[1].body == CB_BODY


def test_golden_states_satisfy_zipper_invariant():
    from accel.builder import BuilderState

    for source, runs, glob in [(ABS_SOURCE, [{"x": -1}, {"x": 1}], ("x", "y")),
                               (FUN_SOURCE, [{}], ())]:
        b = BuilderState()
        b.observer = lambda state, op, args: check_zipper(state)
        trace_program(source, runs, glob, builder=b)
