"""The invoker: per-function mode machine plus its HTTP front end.

Each registered function is in one of three modes:

``tracing``
    requests run in the interpreter; one instance at a time also grows the
    trace tree. Once ``trace_after`` requests have been traced, the handler
    table is compiled and the function switches to
``containerless``
    requests run in the trace executor. When it reaches an untraced path
    (or the trace diverges) the function bounces back to tracing and the
    same request is served again by the tracing interpreter. After more than
    ``max_bounces`` bounces the function moves to
``container-only``
    requests always run in the plain interpreter. This mode is absorbing.

Re-execution assumes the function is idempotent, as serverless functions
must be; upstream side effects are not deduplicated.
"""

from __future__ import annotations

import json
import logging
import statistics
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum

from . import trace as T
from .builder import BuilderState
from .errors import AccelError, CompileError, GuestError, ParseError, TraceError, UnsupportedFeature
from .events import NoUpstream, Request, Response, Upstream
from .executor import Arena, CompiledProgram, Limits, Outcome, stats_line
from .frontend import compile_source, desugar, parse
from .instrument import instrument
from .interpreter import DEFAULT_DEADLINE, Interpreter, error_response

log = logging.getLogger("accel.invoker")


class Mode(str, Enum):
    TRACING = "tracing"
    CONTAINERLESS = "containerless"
    CONTAINER_ONLY = "container-only"


@dataclass
class InvokerConfig:
    port: int = 8080
    trace_after: int = 100
    max_bounces: int = 3
    instruction_limit: int = 10_000_000
    memory_limit: int = 128 * 1024 * 1024
    pool_size: int = 4
    upstream: str | None = None
    backend: str = "compiled"
    deadline: float = DEFAULT_DEADLINE
    stats_path: str | None = None

    def __post_init__(self):
        if self.trace_after < 1:
            raise ValueError("trace_after must be at least 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be non-negative")
        if self.pool_size < 1:
            raise ValueError("pool_size must be at least 1")

    @property
    def limits(self) -> Limits:
        return Limits(self.instruction_limit, self.memory_limit)


class NotFound(AccelError):
    pass


@dataclass
class FunctionRecord:
    name: str
    source: str
    program: object  # desugared program
    instrumented: object | None
    mode: Mode
    builder: BuilderState | None = None
    compiled: CompiledProgram | None = None
    traced_count: int = 0
    bounce_count: int = 0
    reason: str = ""
    globals_: tuple = ()
    served: Counter = field(default_factory=Counter)
    aborts: Counter = field(default_factory=Counter)
    latencies: deque = field(default_factory=lambda: deque(maxlen=10_000))
    lock: threading.Lock = field(default_factory=threading.Lock)
    tracer: threading.Lock = field(default_factory=threading.Lock)
    pool: threading.BoundedSemaphore | None = None
    history: list = field(default_factory=list)  # (time, mode) transitions

    def set_mode(self, mode: Mode) -> None:
        if self.mode is Mode.CONTAINER_ONLY:
            return  # absorbing
        if mode is not self.mode:
            self.mode = mode
            self.history.append((time.time(), mode.value))


@dataclass
class Served:
    """A response plus where it came from (for tests and headers)."""

    response: Response
    by: str  # "executor" | "tracer" | "interpreter"
    outcome: Outcome | None = None
    bounced: bool = False


class Invoker:
    def __init__(self, config: InvokerConfig | None = None, upstream: Upstream | None = None):
        self.config = config or InvokerConfig()
        if upstream is None:
            if self.config.upstream:
                from .upstream import HttpUpstream

                upstream = HttpUpstream(self.config.upstream)
            else:
                upstream = NoUpstream()
        self.upstream = upstream
        self.functions: dict[str, FunctionRecord] = {}
        self._stats_lock = threading.Lock()
        self._request_ids = 0

    # ---------------------------------------------------------- registry

    def register(self, name: str, source: str, globals_: tuple = ()) -> FunctionRecord:
        """Compile ``source`` and start the function in tracing mode.

        A program that parses only because ``eval`` is allowed, or that uses a
        construct the tracer cannot handle, is registered container-only.
        """
        reason = ""
        try:
            program = compile_source(source)
        except UnsupportedFeature as e:
            try:
                program = desugar(parse(source, permissive=True))
            except ParseError:
                raise e from None
            reason = str(e)
            instrumented = None
        else:
            try:
                instrumented = instrument(program, globals_)
            except UnsupportedFeature as e:
                instrumented, reason = None, str(e)
        if instrumented is None:
            fr = FunctionRecord(name, source, program, None, Mode.CONTAINER_ONLY, reason=reason,
                                globals_=tuple(globals_))
        else:
            fr = FunctionRecord(name, source, program, instrumented, Mode.TRACING,
                                builder=BuilderState(), globals_=tuple(globals_))
        fr.pool = threading.BoundedSemaphore(self.config.pool_size)
        fr.history.append((time.time(), fr.mode.value))
        self.functions[name] = fr
        return fr

    def get(self, name: str) -> FunctionRecord:
        try:
            return self.functions[name]
        except KeyError:
            raise NotFound(name) from None

    # ---------------------------------------------------------- dispatch

    def invoke(self, name: str, req: Request) -> Response:
        return self.dispatch(name, req).response

    def dispatch(self, name: str, req: Request) -> Served:
        fr = self.get(name)
        t0 = time.perf_counter()
        served = self._dispatch(fr, req)
        dt = time.perf_counter() - t0
        with fr.lock:
            fr.served[served.by] += 1
            fr.latencies.append((time.time(), dt, served.by))
        return served

    def _dispatch(self, fr: FunctionRecord, req: Request) -> Served:
        compiled = fr.compiled
        if fr.mode is Mode.CONTAINERLESS and compiled is not None:
            out = compiled.run(req, self.upstream, Arena(self.config.limits))
            self._log_stats(out)
            if out.responded:
                return Served(out.response, "executor", out)
            with fr.lock:
                fr.aborts[out.reason] += 1
            if out.bounces:
                self._bounce(fr, compiled)
                served = self._interpret(fr, req, trace=True)
                served.outcome, served.bounced = out, True
                return served
            # resource or type errors: serve from a container, the trace is fine
            served = self._interpret(fr, req, trace=False)
            served.outcome = out
            return served
        return self._interpret(fr, req, trace=fr.mode is Mode.TRACING)

    def _bounce(self, fr: FunctionRecord, compiled) -> None:
        with fr.lock:
            if fr.compiled is not compiled:
                return  # another request already bounced this table
            fr.bounce_count += 1
            fr.compiled = None
            if fr.bounce_count > self.config.max_bounces:
                fr.set_mode(Mode.CONTAINER_ONLY)
                fr.builder = None
            else:
                fr.set_mode(Mode.TRACING)

    def _interpreter(self, fr: FunctionRecord, program) -> Interpreter:
        return Interpreter(program, self.upstream, deadline=self.config.deadline,
                           instruction_limit=self.config.instruction_limit,
                           memory_limit=self.config.memory_limit,
                           globals_=fr.globals_,
                           permissive=fr.instrumented is None)

    def _interpret(self, fr: FunctionRecord, req: Request, trace: bool) -> Served:
        with fr.pool:
            if trace and fr.mode is Mode.TRACING and fr.tracer.acquire(blocking=False):
                try:
                    if fr.mode is Mode.TRACING and fr.builder is not None:
                        return self._trace(fr, req)
                finally:
                    fr.tracer.release()
            return self._plain(fr, req)

    def _plain(self, fr: FunctionRecord, req: Request) -> Served:
        try:
            resp = self._interpreter(fr, fr.program).run(req)
        except GuestError as e:
            resp = error_response(e)
        return Served(resp, "interpreter")

    def _trace(self, fr: FunctionRecord, req: Request) -> Served:
        b = fr.builder
        snap = b.snapshot()
        try:
            resp = self._interpreter(fr, fr.instrumented).run(req, b)
        except GuestError as e:
            b.restore(snap)
            return Served(error_response(e), "tracer")
        except TraceError as e:
            # the program cannot be traced along this path: count it like an
            # abort and serve the request again without tracing
            b.restore(snap)
            log.info("%s: trace error: %s", fr.name, e)
            with fr.lock:
                fr.aborts["divergence"] += 1
                fr.bounce_count += 1
                if fr.bounce_count > self.config.max_bounces:
                    fr.set_mode(Mode.CONTAINER_ONLY)
                    fr.builder = None
            served = self._plain(fr, req)
            served.bounced = True
            return served
        with fr.lock:
            fr.traced_count += 1
            if fr.traced_count >= self.config.trace_after and fr.mode is Mode.TRACING:
                self._extract(fr)
        return Served(resp, "tracer")

    def _extract(self, fr: FunctionRecord) -> None:
        """Compile the current handler table (caller holds the tracer and lock)."""
        b = fr.builder
        assert not b.kappa and not b.alpha
        table = dict(b.table)
        fr.compiled = CompiledProgram(table, backend=self.config.backend,
                                      globals_=fr.globals_,
                                      limits=self.config.limits)
        fr.set_mode(Mode.CONTAINERLESS)

    def _log_stats(self, out: Outcome) -> None:
        path = self.config.stats_path
        if not path:
            return
        with self._stats_lock:
            self._request_ids += 1
            line = stats_line(out, self._request_ids)
            with open(path, "a") as f:
                f.write(line + "\n")

    # ------------------------------------------------------------ queries

    def status(self, name: str) -> dict:
        fr = self.get(name)
        with fr.lock:
            lats = [x[1] for x in fr.latencies]
            doc = {
                "name": fr.name,
                "mode": fr.mode.value,
                "tracedEventCount": fr.traced_count,
                "bounceCount": fr.bounce_count,
                "served": dict(fr.served),
                "aborts": dict(fr.aborts),
                "history": [{"time": t, "mode": m} for t, m in fr.history],
            }
            if fr.reason:
                doc["reason"] = fr.reason
        doc["latencyMs"] = _percentiles(lats)
        return doc

    def trace_table(self, name: str) -> dict | None:
        fr = self.get(name)
        with fr.lock:
            if fr.mode is Mode.CONTAINERLESS and fr.compiled is not None:
                return T.table_to_json(fr.compiled.table)
            if fr.mode is Mode.TRACING and fr.builder is not None:
                return T.table_to_json(dict(fr.builder.table))
        return None


def _percentiles(lats: list) -> dict:
    if not lats:
        return {}
    xs = sorted(lats)

    def q(p):
        return round(1000 * xs[min(len(xs) - 1, int(p * len(xs)))], 3)

    return {"p50": q(0.50), "p95": q(0.95), "p99": q(0.99),
            "mean": round(1000 * statistics.fmean(xs), 3), "count": len(xs)}


# ======================================================================= HTTP

PATH_HEADER = "x-accel-path"


def create_app(invoker: Invoker):
    """Starlette application exposing ``invoker`` over HTTP."""
    from starlette.applications import Starlette
    from starlette.concurrency import run_in_threadpool
    from starlette.requests import Request as HttpRequest
    from starlette.responses import JSONResponse, Response as HttpResponse
    from starlette.routing import Route

    def missing(name):
        return JSONResponse({"error": f"no function named {name!r}"}, status_code=404)

    async def register(request: HttpRequest):
        name = request.path_params["name"]
        source = (await request.body()).decode()
        try:
            await run_in_threadpool(invoker.register, name, source)
        except (ParseError, CompileError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        return JSONResponse(invoker.status(name), status_code=201)

    async def invoke(request: HttpRequest):
        name = request.path_params["name"]
        body = await request.body()
        req = Request(request.method, request.headers.get(PATH_HEADER, "/"), body)
        try:
            served = await run_in_threadpool(invoker.dispatch, name, req)
        except NotFound:
            return missing(name)
        r = served.response
        return HttpResponse(r.body, status_code=r.status, media_type=r.content_type,
                            headers={"x-accel-served-by": served.by})

    async def status(request: HttpRequest):
        name = request.path_params["name"]
        try:
            return JSONResponse(invoker.status(name))
        except NotFound:
            return missing(name)

    async def trace(request: HttpRequest):
        name = request.path_params["name"]
        try:
            doc = invoker.trace_table(name)
        except NotFound:
            return missing(name)
        if doc is None:
            return JSONResponse({"error": "function is container-only"}, status_code=409)
        return HttpResponse(json.dumps(doc), media_type="application/json")

    async def health(request: HttpRequest):
        return JSONResponse({"functions": sorted(invoker.functions)})

    return Starlette(routes=[
        Route("/function/{name}", register, methods=["PUT"]),
        Route("/function/{name}", invoke, methods=["POST", "GET"]),
        Route("/function/{name}/status", status, methods=["GET"]),
        Route("/function/{name}/trace", trace, methods=["GET"]),
        Route("/", health, methods=["GET"]),
    ])
