from __future__ import annotations

import json

import pytest

from accel import Invoker, InvokerConfig, Mode, Request
from accel.bench.benchmarks import BENCHMARKS
from accel.bench.fuzz import make_pair
from accel.bench.mock import MockService
from accel.builder import plug
from accel.invoker import create_app
from accel.upstream import LocalUpstream

ECHO = """
let c = require('containerless');
function main(req) {
  if (req.body.x > 0) { c.respond({ sign: 'pos', x: req.body.x }); }
  else { c.respond({ sign: 'neg', x: req.body.x }); }
}
"""


def test_switches_after_trace_after_requests():
    inv = Invoker(InvokerConfig(trace_after=3))
    inv.register("echo", ECHO)
    served = [inv.dispatch("echo", Request.json({"x": i + 1})) for i in range(5)]
    assert [s.by for s in served] == ["tracer"] * 3 + ["executor"] * 2
    assert inv.get("echo").mode is Mode.CONTAINERLESS
    assert json.loads(served[4].response.body) == {"sign": "pos", "x": 5}


def test_fallback_on_untraced_inputs_ends_container_only():
    bench = BENCHMARKS["authorize"]
    config = InvokerConfig(trace_after=20, max_bounces=3)
    normal, reference, _, _ = make_pair(bench, config)
    for req in bench.requests(1, 20):
        normal.dispatch(bench.name, req)
        reference.dispatch(bench.name, req)
    fr = normal.get(bench.name)
    assert fr.mode is Mode.CONTAINERLESS
    seen = []
    for body in bench.adversarial:
        req = Request.json(body)
        got = normal.dispatch(bench.name, req)
        want = reference.dispatch(bench.name, req)
        assert (got.response.status, got.response.body) == (want.response.status, want.response.body)
        if got.bounced:
            assert got.outcome.reason == "unknown"
            # re-traced, unless that bounce used up the budget
            assert got.by == ("interpreter" if fr.mode is Mode.CONTAINER_ONLY else "tracer")
        seen.append((got.bounced, fr.bounce_count, fr.mode))
    # the first two inputs share a branch: the second one is already traced
    assert seen == [
        (True, 1, Mode.CONTAINERLESS),
        (False, 1, Mode.CONTAINERLESS),
        (True, 2, Mode.CONTAINERLESS),
        (True, 3, Mode.CONTAINERLESS),
        (True, 4, Mode.CONTAINER_ONLY),
    ]
    for req in bench.requests(2, 10):
        assert normal.dispatch(bench.name, req).by == "interpreter"
    assert fr.mode is Mode.CONTAINER_ONLY
    assert fr.compiled is None and fr.builder is None


def test_no_bounce_for_resource_aborts():
    src = """
    let c = require('containerless');
    function main(req) { let i = 0; while (i < req.body.n) { i = i + 1; } c.respond(i); }
    """
    inv = Invoker(InvokerConfig(trace_after=1, instruction_limit=1000))
    inv.register("loop", src)
    inv.dispatch("loop", Request.json({"n": 2}))
    served = inv.dispatch("loop", Request.json({"n": 5000}))
    assert served.outcome.reason == "instruction-limit"
    assert served.response.status == 500 and not served.bounced
    fr = inv.get("loop")
    assert fr.mode is Mode.CONTAINERLESS and fr.bounce_count == 0


class FreshMock:
    """Every call sees a pristine mock, so repeated requests repeat exactly."""

    def __call__(self, method, path, body):
        return MockService()(method, path, body)


def test_retracing_the_same_request_changes_nothing():
    for name in sorted(BENCHMARKS):
        bench = BENCHMARKS[name]
        inv = Invoker(InvokerConfig(trace_after=1000), LocalUpstream(FreshMock()))
        inv.register(name, bench.source)
        fr = inv.get(name)
        for req in bench.requests(5, 4):
            inv.dispatch(name, req)
            before = (plug(fr.builder.c, fr.builder.kappa), dict(fr.builder.table))
            inv.dispatch(name, req)
            after = (plug(fr.builder.c, fr.builder.kappa), dict(fr.builder.table))
            assert after == before, name


def test_eval_is_container_only():
    src = "let c = require('containerless'); function main(req) { c.respond(eval('1 + 1')); }"
    inv = Invoker()
    fr = inv.register("ev", src)
    assert fr.mode is Mode.CONTAINER_ONLY and "eval" in fr.reason
    served = inv.dispatch("ev", Request.json({}))
    assert served.by == "interpreter" and served.response.body == b"2"
    assert inv.trace_table("ev") is None


def test_guest_errors_are_served_as_500():
    src = "let c = require('containerless'); function main(req) { c.respond(req.body.a.b); }"
    inv = Invoker(InvokerConfig(trace_after=2))
    inv.register("f", src)
    assert inv.invoke("f", Request.json({})).status == 500
    assert inv.get("f").traced_count == 0


def test_config_validation():
    with pytest.raises(ValueError):
        InvokerConfig(trace_after=0)
    with pytest.raises(ValueError):
        InvokerConfig(max_bounces=-1)


def test_http_front_end():
    from starlette.testclient import TestClient

    inv = Invoker(InvokerConfig(trace_after=2))
    client = TestClient(create_app(inv))
    assert client.put("/function/echo", content=ECHO).status_code == 201
    assert client.put("/function/bad", content="let x = ;").status_code == 400
    by = []
    for x in (1, 2, 3):
        r = client.post("/function/echo", json={"x": x})
        assert r.status_code == 200 and r.json()["x"] == x
        by.append(r.headers["x-accel-served-by"])
    assert by == ["tracer", "tracer", "executor"]
    status = client.get("/function/echo/status").json()
    assert status["mode"] == "containerless" and status["tracedEventCount"] == 2
    table = client.get("/function/echo/trace").json()
    assert 0 in [h["id"] for h in table["handlers"]]
    assert client.post("/function/nope", json={}).status_code == 404
    assert client.get("/").json() == {"functions": ["echo"]}
