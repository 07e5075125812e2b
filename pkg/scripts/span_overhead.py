#!/usr/bin/env python3
"""Measure the bookkeeping overhead of one profiling span.

Runs a tight loop of empty ``span_scope`` blocks against an active
recorder and reports the per-span cost in nanoseconds, so the numbers
in benchmark reports can be read with the instrumentation tax in mind.
"""

from __future__ import annotations

import argparse
import time

from vlmfp.profiling import SpanRecorder, span_scope


def measure(n: int) -> tuple[float, float]:
    """Return (ns per empty span, ns per loop iteration without spans)."""
    recorder = SpanRecorder()
    with recorder.activate():
        start = time.perf_counter_ns()
        for _ in range(n):
            with span_scope("noop"):
                pass
        with_spans = time.perf_counter_ns() - start

    start = time.perf_counter_ns()
    for _ in range(n):
        pass
    bare = time.perf_counter_ns() - start
    return with_spans / n, bare / n


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=100_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    samples = [measure(args.iterations) for _ in range(args.repeats)]
    per_span = min(s[0] for s in samples)
    bare = min(s[1] for s in samples)
    print(f"empty span:      {per_span:8.1f} ns")
    print(f"bare loop body:  {bare:8.1f} ns")
    print(f"span overhead:   {per_span - bare:8.1f} ns")


if __name__ == "__main__":
    main()
