"""Command line entry point: ``accel serve|mock|bench|fuzz``.

Every option can also be set through an environment variable named after
the flag with an ``ACCEL_`` prefix, e.g. ``ACCEL_TRACE_AFTER=50``.
"""

from __future__ import annotations

import json
import logging
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request

import click


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_ready(url: str, timeout: float = 20.0) -> None:
    deadline = time.monotonic() + timeout
    while True:
        try:
            urllib.request.urlopen(url, timeout=1.0).close()
            return
        except urllib.error.HTTPError:
            return  # any HTTP answer means the server is up
        except OSError:
            if time.monotonic() > deadline:
                raise click.ClickException(f"{url} did not come up within {timeout:g}s")
            time.sleep(0.05)


@click.group(context_settings={"auto_envvar_prefix": "ACCEL", "show_default": True})
@click.option("--log-level", default="WARNING")
def main(log_level: str) -> None:
    """Trace-compiling serverless function runtime."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8080, type=int)
@click.option("--trace-after", default=100, type=int, help="Traced requests before compiling.")
@click.option("--max-bounces", default=3, type=int, help="Bounces before container-only mode.")
@click.option("--instruction-limit", default=10_000_000, type=int)
@click.option("--memory-limit", default=128 * 1024 * 1024, type=int, help="Bytes per request.")
@click.option("--pool-size", default=4, type=int, help="Interpreter instances per function.")
@click.option("--upstream", default=None, help="Base URL for get/post requests.")
@click.option("--backend", default="compiled", type=click.Choice(["compiled", "direct"]))
@click.option("--stats", "stats_path", default=None, help="Append executor stats (JSON lines).")
def serve(host, port, trace_after, max_bounces, instruction_limit, memory_limit, pool_size,
          upstream, backend, stats_path):
    """Run the invoker HTTP service."""
    import uvicorn

    from .invoker import Invoker, InvokerConfig, create_app

    config = InvokerConfig(port=port, trace_after=trace_after, max_bounces=max_bounces,
                           instruction_limit=instruction_limit, memory_limit=memory_limit,
                           pool_size=pool_size, upstream=upstream, backend=backend,
                           stats_path=stats_path)
    uvicorn.run(create_app(Invoker(config)), host=host, port=port, log_level="warning")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8081, type=int)
@click.option("--delay", default=0.001, type=float, help="Artificial latency per request (s).")
def mock(host, port, delay):
    """Run the mock upstream service used by the benchmarks."""
    import uvicorn

    from .bench.mock import MockService, create_mock_app

    uvicorn.run(create_mock_app(MockService(delay)), host=host, port=port, log_level="warning")


@main.command()
@click.argument("name")
@click.option("--streams", default=10, type=int)
@click.option("--duration", default=60.0, type=float, help="Seconds.")
@click.option("--seed", default=0, type=int)
@click.option("--out", default=None, help="Write the JSON report here.")
@click.option("--csv", "csv_path", default=None, help="Write per-request samples here.")
@click.option("--target", default=None,
              help="Invoker URL. Without it a mock and an invoker are started locally.")
@click.option("--trace-after", default=100, type=int, help="Used for the local invoker.")
def bench(name, streams, duration, seed, out, csv_path, target, trace_after):
    """Closed-loop load test of benchmark NAME."""
    from .bench import benchmarks
    from .bench.load import register, run_load

    try:
        b = benchmarks.get(name)
    except KeyError as e:
        raise click.BadParameter(str(e.args[0]), param_hint="NAME")
    procs = []
    try:
        if target is None:
            mport, iport = _free_port(), _free_port()
            exe = [sys.executable, "-m", "accel"]
            procs.append(subprocess.Popen(exe + ["mock", "--port", str(mport)]))
            procs.append(subprocess.Popen(exe + [
                "serve", "--port", str(iport), "--trace-after", str(trace_after),
                "--upstream", f"http://127.0.0.1:{mport}"]))
            _wait_ready(f"http://127.0.0.1:{mport}/")
            target = f"http://127.0.0.1:{iport}"
            _wait_ready(target + "/")
        register(target, b)
        report = run_load(target, b, streams=streams, duration=duration, seed=seed)
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            p.wait(timeout=10)
    click.echo(report.render())
    if out:
        with open(out, "w") as f:
            json.dump(report.to_json(), f, indent=2)
    if csv_path:
        report.write_csv(csv_path)


@main.command()
@click.argument("name")
@click.option("-n", "count", default=500, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--trace-after", default=100, type=int)
def fuzz(name, count, seed, trace_after):
    """Compare the full invoker against a container-only one on NAME."""
    from .bench import benchmarks
    from .bench.fuzz import equivalence_fuzz
    from .invoker import InvokerConfig

    try:
        b = benchmarks.get(name)
    except KeyError as e:
        raise click.BadParameter(str(e.args[0]), param_hint="NAME")
    verdict = equivalence_fuzz(b, count, seed, InvokerConfig(trace_after=trace_after))
    click.echo(verdict.summary())
    if not verdict.ok:
        click.echo(json.dumps(verdict.divergence or verdict.oracle_mismatch, indent=2))
        click.echo(f"reproduce with: accel fuzz {name} -n {count} --seed {seed}")
        sys.exit(1)


if __name__ == "__main__":  # pragma: no cover
    main()
