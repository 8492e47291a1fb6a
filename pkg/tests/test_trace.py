"""Trace-core operations outside the random walks: handlers, argument stack,
error cases and the JSON form."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from accel import trace as T
from accel.builder import BuilderState, IfTrueFrame, plug
from accel.errors import TraceCorruption, TraceDivergence
from accel.trace import UNKNOWN, TraceFormatError

import test_golden as golden

FIXTURES = Path(__file__).parent / "fixtures"


def test_initial_state():
    b = BuilderState()
    assert (b.c, b.kappa, b.alpha) == (UNKNOWN, [], [])
    assert set(b.table) == {0} and b.table[0].body is UNKNOWN


def test_new_handler_cases():
    b = BuilderState()
    n = b.new_handler("get", T.Const("example.com"), T.Var("F"))
    assert n == 1 and b.c == T.Event("get", T.Const("example.com"), T.Var("F"), 1)
    assert b.table[1].body is UNKNOWN
    # replaying the same call finds the existing handler
    before = (b.c, dict(b.table))
    assert b.new_handler("get", T.Const("example.com"), T.Var("F")) == 1
    assert (b.c, dict(b.table)) == before
    with pytest.raises(TraceDivergence):
        b.new_handler("post", T.Const("example.com"), T.Var("F"))
    b.c = T.Let("x", T.Const(10))
    with pytest.raises(TraceDivergence):
        b.new_handler("get", T.Const("example.com"), T.Var("F"))


def test_handlers_are_numbered_from_one():
    b = BuilderState()
    assert b.new_handler("get", T.Const("a"), T.Var("F")) == 1
    b.c = UNKNOWN
    assert b.new_handler("get", T.Const("b"), T.Var("G")) == 2


def test_load_and_save_round_trip():
    b = BuilderState()
    n = b.new_handler("get", T.Const("u"), T.Var("F"))
    b.c = UNKNOWN
    b.load_handler(n)
    h = b.table[n]
    assert b.alpha == [T.Var(h.arg_id), T.Var(h.env_id)]
    assert b.c is UNKNOWN
    b.alpha.clear()
    body = T.Let("resp", T.Var(h.arg_id))
    b.record_leaf(body)
    b.save_handler(n)
    assert b.table[n].body == body
    b.c = UNKNOWN
    b.load_handler(n)
    assert b.c == body  # growth resumes from the saved body


def test_handler_errors():
    b = BuilderState()
    with pytest.raises(TraceCorruption):
        b.load_handler(5)
    b.if_true(T.Var("x"))
    with pytest.raises(TraceCorruption):
        b.save_handler(0)
    with pytest.raises(TraceCorruption):
        b.load_handler(0)


def test_argument_stack():
    b = BuilderState()
    b.push_arg(T.Const(3))
    b.push_arg(T.Var("F"))
    assert b.pop_arg() == T.Var("F")
    assert b.pop_arg() == T.Const(3)
    with pytest.raises(TraceCorruption):
        b.pop_arg()


def test_pop_errors():
    b = BuilderState()
    with pytest.raises(TraceCorruption):
        b.pop()
    b.label("l")
    with pytest.raises(TraceCorruption):
        b.pop_to("other")
    b.pop_to("l")
    assert b.c == T.Label("l", UNKNOWN)


def test_plug():
    leaf = T.Set(T.Var("y"), T.BinOp("*", T.Var("x"), T.Const(-1)))
    cond = T.BinOp("<", T.Var("x"), T.Const(0))
    assert plug(leaf, []) == leaf
    assert plug(leaf, [IfTrueFrame(cond, UNKNOWN)]) == T.If(cond, leaf, UNKNOWN)


def test_leaf_divergence():
    b = BuilderState()
    b.record_leaf(T.Let("x", T.Const(1)))
    with pytest.raises(TraceDivergence):
        b.record_leaf(T.Let("x", T.Const(2)))


def test_json_schema_basics():
    assert T.to_json(UNKNOWN) == {"kind": "unknown"}
    for t in [T.Const(1), T.Const(1.5), T.Const("s"), T.Const(True), T.Const(None), T.UNDEF,
              T.Env((("x", T.VarAddr("x")),)), T.EnvRead(T.Var("e"), "x")]:
        assert T.from_json(json.loads(json.dumps(T.to_json(t)))) == t


def test_get_example_table_matches_frozen_json():
    b, _ = golden._get_rows()
    frozen = json.loads((FIXTURES / "get_example_table.json").read_text())
    assert T.table_to_json(b.table) == frozen
    assert T.table_from_json(frozen) == b.table


def test_golden_tables_round_trip():
    for source, runs, glob in [(golden.ABS_SOURCE, [{"x": -1}, {"x": 1}], ("x", "y")),
                               (golden.FUN_SOURCE, [{}], ())]:
        b, _ = golden.trace_program(source, runs, glob)
        assert T.deserialize(T.serialize(b.table)) == b.table


@pytest.mark.parametrize("data", [
    b"not json", b"{}", b'{"handlers": [{"id": 1, "argId": "a", "envId": "e", "body": {"kind": "unknown"}}]}',
    b'{"handlers": [{"id": 0, "argId": "a", "envId": "e", "body": {"kind": "teleport"}}]}',
    b'{"handlers": [{"id": 0, "argId": "a", "envId": "e", "body": {"kind": "let"}}]}',
])
def test_malformed_tables_are_rejected(data):
    with pytest.raises(TraceFormatError):
        T.deserialize(data)
