"""Closed-loop load generator and latency report.

Each stream is a thread that sends a request, waits for the answer and
immediately sends the next one. Every request is recorded with its start
time, latency, status and the ``x-accel-served-by`` header, and the report
is aggregated once all streams have stopped.

Report schema (``LatencyReport.to_json``)::

    {
      "benchmark": str, "streams": int, "duration": float, "seed": int,
      "requests": int, "errors": int, "throughput": float,   # requests/s
      "served": {"tracer"|"interpreter"|"executor": int},
      "phases": {"cold": float, "warm": float|null, "switch": float|null},
      "preSwitchMedianMs": float|null, "postSwitchMedianMs": float|null,
      "buckets": [{"second": int, "count": int, "meanMs": float,
                   "ci95Ms": float, "maxMs": float, "served": {...}}, ...]
    }

Phase times are seconds since the start of the run: ``cold`` is the first
request, ``warm`` the first request that completed after it, and ``switch``
the first request served by the trace executor.
"""

from __future__ import annotations

import csv
import http.client
import json
import math
import statistics
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from urllib.parse import urlsplit

from .benchmarks import BenchmarkDef

SERVED_HEADER = "x-accel-served-by"


@dataclass
class Sample:
    stream: int
    start: float  # seconds since the run started
    latency: float  # seconds
    status: int  # 0 for a connection failure
    served_by: str


@dataclass
class LatencyReport:
    benchmark: str
    streams: int
    duration: float
    seed: int
    samples: list = field(default_factory=list, repr=False)

    @property
    def requests(self) -> int:
        return len(self.samples)

    @property
    def errors(self) -> int:
        return sum(1 for s in self.samples if s.status == 0 or s.status >= 500)

    def switch_time(self) -> float | None:
        starts = [s.start for s in self.samples if s.served_by == "executor"]
        return min(starts) if starts else None

    def phase_medians(self) -> tuple[float | None, float | None]:
        """Median latency (ms) of interpreter-served requests before the
        switch and of executor-served requests after it."""
        sw = self.switch_time()
        if sw is None:
            return None, None
        pre = [s.latency for s in self.samples
               if s.start < sw and s.served_by in ("tracer", "interpreter") and s.status]
        post = [s.latency for s in self.samples if s.start >= sw and s.served_by == "executor"]
        med = lambda xs: round(1000 * statistics.median(xs), 4) if xs else None
        return med(pre), med(post)

    def buckets(self) -> list[dict]:
        by_sec: dict[int, list] = {}
        for s in self.samples:
            by_sec.setdefault(int(s.start), []).append(s)
        out = []
        for sec in sorted(by_sec):
            xs = [1000 * s.latency for s in by_sec[sec]]
            mean = statistics.fmean(xs)
            ci = 1.96 * statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else 0.0
            out.append({
                "second": sec, "count": len(xs), "meanMs": round(mean, 4),
                "ci95Ms": round(ci, 4), "maxMs": round(max(xs), 4),
                "served": dict(Counter(s.served_by for s in by_sec[sec])),
            })
        return out

    def to_json(self) -> dict:
        pre, post = self.phase_medians()
        starts = sorted(s.start for s in self.samples)
        firsts = sorted(s.start + s.latency for s in self.samples)
        return {
            "benchmark": self.benchmark, "streams": self.streams,
            "duration": self.duration, "seed": self.seed,
            "requests": self.requests, "errors": self.errors,
            "throughput": round(self.requests / self.duration, 3) if self.duration else 0.0,
            "served": dict(Counter(s.served_by for s in self.samples)),
            "phases": {
                "cold": starts[0] if starts else None,
                "warm": firsts[0] if firsts else None,
                "switch": self.switch_time(),
            },
            "preSwitchMedianMs": pre, "postSwitchMedianMs": post,
            "buckets": self.buckets(),
        }

    def render(self) -> str:
        doc = self.to_json()
        lines = [f"{self.benchmark}: {doc['requests']} requests, {doc['errors']} errors, "
                 f"{doc['throughput']} req/s over {self.duration:g}s with {self.streams} streams",
                 f"served: {doc['served']}",
                 f"switch at: {doc['phases']['switch']}",
                 f"median before switch: {doc['preSwitchMedianMs']} ms, "
                 f"after switch: {doc['postSwitchMedianMs']} ms",
                 f"{'sec':>4} {'n':>6} {'mean ms':>9} {'±95%':>8} {'max ms':>9}  served"]
        for b in doc["buckets"]:
            lines.append(f"{b['second']:>4} {b['count']:>6} {b['meanMs']:>9.3f} "
                         f"{b['ci95Ms']:>8.3f} {b['maxMs']:>9.3f}  {b['served']}")
        return "\n".join(lines)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(Sample.__dataclass_fields__))
            w.writeheader()
            for s in self.samples:
                w.writerow(asdict(s))


def stream_seed(seed: int, stream: int) -> int:
    return seed * 1_000_003 + stream


def request_sequence(bench: BenchmarkDef, seed: int, streams: int, count: int) -> list[list[bytes]]:
    """The first ``count`` request bodies each stream would send."""
    out = []
    for i in range(streams):
        gen = bench.stream(stream_seed(seed, i))
        out.append([next(gen).body for _ in range(count)])
    return out


def _connection(target: str, timeout: float) -> http.client.HTTPConnection:
    return http.client.HTTPConnection(urlsplit(target).netloc, timeout=timeout)


def register(target: str, bench: BenchmarkDef, timeout: float = 30.0) -> dict:
    conn = _connection(target, timeout)
    try:
        conn.request("PUT", f"/function/{bench.name}", body=bench.source.encode())
        r = conn.getresponse()
        doc = json.loads(r.read())
    finally:
        conn.close()
    if r.status != 201:
        raise RuntimeError(f"registering {bench.name} failed: {r.status} {doc}")
    return doc


def run_load(target: str, bench: BenchmarkDef, streams: int = 10, duration: float = 60.0,
             seed: int = 0, timeout: float = 30.0) -> LatencyReport:
    """Drive ``bench`` (already registered at ``target``) with closed-loop streams."""
    path = f"/function/{bench.name}"
    report = LatencyReport(bench.name, streams, duration, seed)
    per_stream: list[list[Sample]] = [[] for _ in range(streams)]
    t0 = time.perf_counter()
    stop_at = t0 + duration

    def worker(i: int) -> None:
        gen = bench.stream(stream_seed(seed, i))
        out = per_stream[i]
        conn = _connection(target, timeout)
        while True:
            start = time.perf_counter()
            if start >= stop_at:
                break
            req = next(gen)
            try:
                conn.request("POST", path, body=req.body,
                             headers={"content-type": "application/json"})
                r = conn.getresponse()
                r.read()
                status, by = r.status, r.getheader(SERVED_HEADER, "")
            except (OSError, http.client.HTTPException):
                conn.close()
                conn = _connection(target, timeout)
                status, by = 0, "error"
            end = time.perf_counter()
            out.append(Sample(i, start - t0, end - start, status, by))
        conn.close()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(streams)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    report.samples = sorted((s for xs in per_stream for s in xs), key=lambda s: s.start)
    return report
