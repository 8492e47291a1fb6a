from __future__ import annotations

import json

import pytest

from accel.errors import DynTypeError, GuestTimeout, InstructionLimit, MemoryLimit
from accel.events import Request
from accel.frontend import compile_source
from accel.interpreter import Interpreter, error_response, run_plain

HEAD = "let c = require('containerless');\n"


def run(body: str, doc=None, **kwargs):
    program = compile_source(HEAD + body)
    return Interpreter(program, **kwargs).run(Request.json(doc or {}))


def body_of(resp):
    if resp.content_type.startswith("text/"):
        return resp.text
    return json.loads(resp.body)


@pytest.mark.parametrize("src, want", [
    ("c.respond(1 + true);", 2),
    ("c.respond('a' + 1);", "a1"),
    ("let o = {a: 1}; o.b = [1, 2]; c.respond(o);", {"a": 1, "b": [1, 2]}),
    ("let f = function(x) { return x * 2; }; c.respond(f(4));", 8),
    ("let i = 0; let s = 0; while (i < 5) { s = s + i; i = i + 1; } c.respond(s);", 10),
    ("let a = []; for (let i = 0; i < 3; i = i + 1) { a.push(i); } c.respond(a);", [0, 1, 2]),
    ("let k = function() { let n = 0; return function() { n = n + 1; return n; }; };"
     " let g = k(); g(); c.respond(g());", 2),
    ("outer: { if (true) { break outer; } c.respond(1); } c.respond(2);", 2),
    ("c.respond(typeof undefined === 'undefined' && !null);", True),
])
def test_semantics(src, want):
    assert body_of(run(src)) == want


def test_request_body_and_path():
    resp = run("function main(req) { c.respond([req.body.x, req.path]); }", {"x": 3})
    assert body_of(resp) == [3, "/"]


def test_while_true_hits_instruction_limit():
    with pytest.raises(InstructionLimit):
        run("while (true) { }", instruction_limit=10_000)


def test_allocation_bomb_hits_memory_limit():
    src = "let a = []; while (true) { a.push({x: [1, 2, 3]}); }"
    with pytest.raises(MemoryLimit):
        run(src, memory_limit=1 << 20, instruction_limit=None)


def test_string_doubling_hits_memory_limit():
    with pytest.raises(MemoryLimit):
        run("let s = 'x'; while (true) { s = s + s; }", memory_limit=1 << 20)


def test_type_errors():
    with pytest.raises(DynTypeError):
        run("let o = undefined; c.respond(o.x);")
    with pytest.raises(DynTypeError):
        run("let n = 1; n();")


def test_no_response():
    with pytest.raises(GuestTimeout):
        run("let x = 1;")


def test_error_responses():
    assert error_response(GuestTimeout("slow")).status == 504
    assert error_response(InstructionLimit("x")).status == 500
    resp = run_plain(compile_source(HEAD + "while (true) { }"), Request(), instruction_limit=100)
    assert resp.status == 500 and b"instruction limit" in resp.body


SHARED_COUNTER = """
let c = require('containerless');
function main(req) {
  let n = 0;
  let done = 0;
  let bump = function(resp) {
    n = n + 1;
    done = done + 1;
    if (done === 2) { c.respond(n); }
  };
  let peek = function(resp) {
    n = n + 10;
    done = done + 1;
    if (done === 2) { c.respond(n); }
  };
  c.get('a', bump);
  c.get('b', peek);
}
"""


def test_callbacks_share_captured_variables():
    from accel.upstream import LocalUpstream

    up = LocalUpstream(lambda method, path, body: (200, b"1"))
    resp = Interpreter(compile_source(SHARED_COUNTER), up).run(Request())
    assert resp.body == b"11"


def test_upstream_failure_gives_undefined():
    from accel.upstream import LocalUpstream

    src = HEAD + "c.get('nowhere', function(r) { c.respond(r === undefined); });"
    up = LocalUpstream(lambda method, path, body: (404, b"{}"))
    assert Interpreter(compile_source(src), up).run(Request()).body == b"true"


def test_respond_twice_is_an_error():
    from accel.errors import GuestError

    with pytest.raises(GuestError):
        run("c.respond(1); c.respond(2);")
