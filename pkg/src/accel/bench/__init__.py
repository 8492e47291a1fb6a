"""Benchmark functions, mock upstream service, load generator and fuzzer."""
