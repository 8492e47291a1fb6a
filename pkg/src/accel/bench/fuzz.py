"""Differential testing of the full invoker against a container-only invoker."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..events import Request
from ..invoker import Invoker, InvokerConfig, Mode
from ..upstream import LocalUpstream
from .benchmarks import BenchmarkDef, decode
from .mock import MockService


@dataclass
class Verdict:
    benchmark: str
    seed: int
    n: int
    ok: bool = True
    divergence: dict | None = None  # first mismatch, with the request index
    oracle_mismatch: dict | None = None
    served: dict = field(default_factory=dict)
    bounces: int = 0
    mode: str = ""
    seconds: float = 0.0
    max_live_cells: int = 0

    def summary(self) -> str:
        status = "equal" if self.ok else "DIVERGED"
        return (f"{self.benchmark}: {self.n} requests seed={self.seed} {status}; "
                f"served={self.served} bounces={self.bounces} mode={self.mode} "
                f"in {self.seconds:.1f}s")


def make_pair(bench: BenchmarkDef, config: InvokerConfig | None = None):
    """A normal invoker and a container-only one, each with its own mock."""
    config = config or InvokerConfig()
    normal_mock, reference_mock = MockService(), MockService()
    normal = Invoker(config, LocalUpstream(normal_mock))
    reference = Invoker(config, LocalUpstream(reference_mock))
    normal.register(bench.name, bench.source)
    reference.register(bench.name, bench.source).set_mode(Mode.CONTAINER_ONLY)
    return normal, reference, normal_mock, reference_mock


def equivalence_fuzz(bench: BenchmarkDef, n: int = 500, seed: int = 0,
                     config: InvokerConfig | None = None, check_oracle: bool = True) -> Verdict:
    t0 = time.perf_counter()
    normal, reference, _, _ = make_pair(bench, config)
    bodies = bench.bodies(seed, n)
    expected = bench.oracle(bodies) if (check_oracle and bench.oracle) else None
    verdict = Verdict(bench.name, seed, n)
    for i, body in enumerate(bodies):
        req = Request.json(body)
        got = normal.dispatch(bench.name, req)
        want = reference.dispatch(bench.name, req)
        if got.outcome is not None and got.outcome.stats is not None:
            verdict.max_live_cells = max(verdict.max_live_cells, got.outcome.stats.live_cells)
        if (got.response.status, got.response.body) != (want.response.status, want.response.body):
            verdict.ok = False
            verdict.divergence = {
                "index": i, "request": body, "served_by": got.by,
                "got": got.response.body.decode(errors="replace"),
                "want": want.response.body.decode(errors="replace"),
            }
            break
        if expected is not None and decode(got.response.body, bench.text_response) != expected[i]:
            verdict.ok = False
            verdict.oracle_mismatch = {
                "index": i, "request": body,
                "got": got.response.body.decode(errors="replace"), "want": expected[i],
            }
            break
    fr = normal.get(bench.name)
    verdict.served = dict(fr.served)
    verdict.bounces = fr.bounce_count
    verdict.mode = fr.mode.value
    verdict.seconds = time.perf_counter() - t0
    return verdict
