from __future__ import annotations

import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from accel import Invoker, InvokerConfig, Request
from accel.bench.benchmarks import BENCHMARKS, bfs_distance, decode, get, maze_cells
from accel.bench.load import LatencyReport, Sample, request_sequence
from accel.bench.mock import NOT_FOUND, USERS, MockService, fixture
from accel.cli import main
from accel.upstream import LocalUpstream


def test_mock_routes():
    m = MockService()
    status, raw = m("GET", "/passwords.json", None)
    assert status == 200 and json.loads(raw) == USERS
    assert m("GET", "/nothing", None) == NOT_FOUND
    assert m("DELETE", "/passwords.json", None) == NOT_FOUND
    status, raw = m("POST", "/upload/a.txt", b"hello")
    assert status == 200 and json.loads(raw) == {"name": "a.txt", "length": 5}
    assert m("POST", "/repos/a/b/statuses/abc", b'{"state": "nope"}')[0] == 422


def test_mock_commit_is_version_checked_and_idempotent():
    m = MockService()
    commit = lambda **d: json.loads(m("POST", "/bank/commit", json.dumps(d).encode())[1])
    assert commit(account="a", txid="t1", expectedVersion=0, balance=10)["ok"]
    assert commit(account="a", txid="t2", expectedVersion=0, balance=99) == {
        "ok": False, "conflict": True, "version": 1}
    snap = m.snapshot()
    assert commit(account="a", txid="t1", expectedVersion=0, balance=10)["ok"]
    assert m.snapshot() == snap
    acct = json.loads(m("GET", "/bank/accounts/a?txid=t1", None)[1])
    assert acct["balance"] == 10 and acct["applied"]["version"] == 1


def test_banking_replays_leave_the_store_unchanged():
    bench = BENCHMARKS["banking"]
    mock = MockService()
    inv = Invoker(InvokerConfig(trace_after=30), LocalUpstream(mock))
    inv.register("banking", bench.source)
    bodies = bench.bodies(11, 80)
    for b in bodies:
        inv.invoke("banking", Request.json(b))
    snap = mock.snapshot()
    for b in bodies:
        assert inv.invoke("banking", Request.json(b)).status == 200
    assert mock.snapshot() == snap


def _relaxed_distance(maze, start, goal) -> int:
    """Distances by repeated relaxation; slow but shares nothing with BFS."""
    w, h, grid = maze["width"], maze["height"], maze["grid"]
    inf = w * h + 1
    dist = {(r, c): inf for r in range(h) for c in range(w) if grid[r * w + c] != "#"}
    if tuple(start) not in dist:
        return -1
    dist[tuple(start)] = 0
    changed = True
    while changed:
        changed = False
        for (r, c), d in dist.items():
            best = min([dist.get(n, inf) + 1 for n in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))] + [d])
            if best < d:
                dist[(r, c)] = best
                changed = True
    d = dist.get(tuple(goal), inf)
    return -1 if d >= inf else d


def test_maze_oracle_matches_relaxation():
    maze = fixture("maze.json")
    cells = maze_cells()
    for start, goal in [(cells[0], cells[-1]), (cells[5], cells[5]), (cells[17], cells[200])]:
        assert bfs_distance(maze, start, goal) == _relaxed_distance(maze, start, goal)


def test_small_maze():
    maze = {"width": 3, "height": 3, "grid": ".#." ".#." "..."}
    assert bfs_distance(maze, (0, 0), (0, 2)) == 6
    blocked = {"width": 3, "height": 1, "grid": ".#."}
    assert bfs_distance(blocked, (0, 0), (0, 2)) == -1


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_request_sequences_are_deterministic(name):
    bench = BENCHMARKS[name]
    a = request_sequence(bench, 3, 4, 25)
    assert a == request_sequence(bench, 3, 4, 25)
    assert a != request_sequence(bench, 4, 4, 25)
    assert len({tuple(s) for s in a}) == 4  # streams differ from each other


def test_oracles_agree_with_a_container_only_invoker():
    for name, bench in BENCHMARKS.items():
        if bench.oracle is None:
            continue
        inv = Invoker(InvokerConfig(trace_after=10_000), LocalUpstream(MockService()))
        inv.register(name, bench.source)
        bodies = bench.bodies(21, 30)
        got = [decode(inv.invoke(name, Request.json(b)).body, bench.text_response) for b in bodies]
        assert got == bench.oracle(bodies), name


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        get("nope")
    result = CliRunner().invoke(main, ["fuzz", "nope"])
    assert result.exit_code != 0 and "authorize" in result.output


def test_report_phases():
    samples = [Sample(0, 0.1, 0.020, 200, "tracer"), Sample(1, 0.2, 0.030, 200, "tracer"),
               Sample(0, 1.1, 0.010, 200, "executor"), Sample(1, 1.2, 0.012, 200, "executor"),
               Sample(0, 1.5, 0.5, 0, "error")]
    rep = LatencyReport("authorize", 2, 2.0, 0, samples)
    doc = rep.to_json()
    assert doc["requests"] == 5 and doc["errors"] == 1
    assert doc["phases"] == pytest.approx({"cold": 0.1, "warm": 0.12, "switch": 1.1})
    assert (doc["preSwitchMedianMs"], doc["postSwitchMedianMs"]) == (25.0, 11.0)
    assert [b["count"] for b in doc["buckets"]] == [2, 3]
    assert "switch at: 1.1" in rep.render()


def test_cli_fuzz():
    result = CliRunner().invoke(main, ["fuzz", "upload", "-n", "40", "--trace-after", "10"])
    assert result.exit_code == 0, result.output
    assert "equal" in result.output


def test_bench_command_end_to_end(tmp_path):
    out, csv_path = tmp_path / "report.json", tmp_path / "samples.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "accel", "bench", "authorize", "--streams", "2", "--duration", "3",
         "--trace-after", "20", "--out", str(out), "--csv", str(csv_path)],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(out.read_text())
    assert doc["requests"] > 20 and doc["errors"] == 0
    assert doc["served"].get("executor", 0) > 0
    assert csv_path.read_text().startswith("stream,start,latency,status,served_by")


def test_load_smoke_one_stream_trivial_function():
    import socket

    from accel.bench.benchmarks import BenchmarkDef
    from accel.bench.load import register, run_load
    from accel.cli import _wait_ready

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen([sys.executable, "-m", "accel", "serve", "--port", str(port),
                             "--trace-after", "5"])
    try:
        target = f"http://127.0.0.1:{port}"
        _wait_ready(target + "/")
        trivial = BenchmarkDef("trivial", "let c = require('containerless'); c.respond('hi');",
                               lambda rng, history: {}, [], None, "responds with a constant", True)
        register(target, trivial)
        rep = run_load(target, trivial, streams=1, duration=1.0, seed=0)
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    doc = rep.to_json()
    assert doc["throughput"] > 0 and doc["errors"] == 0
    assert doc["served"].get("executor", 0) > 0
