"""Span recorder and folded-stack export tests, including the exact
conservation property on randomly generated span trees."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlmfp.errors import InstrumentationError
from vlmfp.profiling import Span, SpanRecorder, export_folded, span_scope


def test_nesting_assigns_parents():
    rec = SpanRecorder()
    with rec.activate():
        with span_scope("root"):
            with span_scope("a"):
                with span_scope("leaf"):
                    pass
            with span_scope("b"):
                pass
    spans = {s.name: s for s in rec.closed()}
    assert spans["root"].parent_id is None
    assert spans["a"].parent_id == spans["root"].id
    assert spans["leaf"].parent_id == spans["a"].id
    assert spans["b"].parent_id == spans["root"].id
    # children close before parents, so durations nest
    assert spans["a"].duration_ns >= spans["leaf"].duration_ns
    assert spans["root"].duration_ns >= spans["a"].duration_ns + spans["b"].duration_ns


def test_scope_is_noop_without_active_recorder():
    with span_scope("nobody-listening"):
        pass  # must not raise or record anywhere


def test_mismatched_close_raises():
    rec = SpanRecorder()
    rec.begin("outer")
    with pytest.raises(InstrumentationError):
        rec.end("inner")
    rec.end("outer")  # the mismatch left the stack intact


def test_end_without_begin_raises():
    with pytest.raises(InstrumentationError):
        SpanRecorder().end()


def test_closed_rejects_open_spans():
    rec = SpanRecorder()
    rec.begin("dangling")
    with pytest.raises(InstrumentationError):
        rec.closed()


def test_count_and_total():
    rec = SpanRecorder()
    for _ in range(3):
        rec.begin("x")
        rec.end()
    assert rec.count("x") == 3
    assert rec.total_ns("x") == sum(s.duration_ns for s in rec.spans)


def test_recorder_isolated_per_context():
    rec1, rec2 = SpanRecorder(), SpanRecorder()
    with rec1.activate():
        with span_scope("one"):
            pass
        with rec2.activate():
            with span_scope("two"):
                pass
        with span_scope("three"):
            pass
    assert [s.name for s in rec1.spans] == ["one", "three"]
    assert [s.name for s in rec2.spans] == ["two"]


# ---------------------------------------------------------------------------
# folded export

def _tree_spans(seed: int, n: int) -> list[Span]:
    """Random span forest with child intervals strictly inside parents."""
    rng = np.random.default_rng(seed)
    spans: list[Span] = []
    next_id = 0

    def build(parent_id, lo, hi, depth):
        nonlocal next_id
        sid = next_id
        next_id += 1
        spans.append(
            Span(sid, f"s{rng.integers(0, 6)}", parent_id, int(lo), int(hi - lo))
        )
        if depth >= 4:
            return
        k = int(rng.integers(0, 4))
        if k == 0 or hi - lo < 2 * k:
            return
        cuts = np.sort(rng.choice(np.arange(lo, hi), size=2 * k, replace=False))
        for i in range(k):
            a, b = int(cuts[2 * i]), int(cuts[2 * i + 1])
            if b > a:
                build(sid, a, b, depth + 1)

    roots = int(rng.integers(1, 4))
    t = 0
    for _ in range(roots):
        width = int(rng.integers(10, 10_000))
        build(None, t, t + width, 0)
        t += width + int(rng.integers(0, 50))
    return spans[:n] if n < len(spans) else spans


def test_folded_known_tree():
    spans = [
        Span(0, "root", None, 0, 100),
        Span(1, "a", 0, 10, 30),
        Span(2, "b", 0, 50, 20),
        Span(3, "leaf", 1, 15, 5),
    ]
    text = export_folded(spans)
    assert text.splitlines() == [
        "root 50",
        "root;a 25",
        "root;a;leaf 5",
        "root;b 20",
    ]


def test_folded_zero_exclusive_lines_skipped():
    spans = [
        Span(0, "root", None, 0, 40),
        Span(1, "only", 0, 0, 40),  # fully covers the root
    ]
    lines = export_folded(spans).splitlines()
    assert lines == ["root;only 40"]


def test_folded_sibling_stacks_merge():
    spans = [
        Span(0, "root", None, 0, 100),
        Span(1, "work", 0, 0, 30),
        Span(2, "work", 0, 40, 30),
    ]
    lines = export_folded(spans).splitlines()
    assert "root 40" in lines
    assert "root;work 60" in lines


def test_folded_children_overrunning_parent_raise():
    spans = [
        Span(0, "root", None, 0, 10),
        Span(1, "too-big", 0, 0, 25),
    ]
    with pytest.raises(InstrumentationError):
        export_folded(spans)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_folded_conserves_root_durations(seed):
    spans = _tree_spans(seed, n=10_000)
    text = export_folded(spans)
    folded_total = sum(int(line.rsplit(" ", 1)[1]) for line in text.splitlines() if line)
    root_total = sum(s.duration_ns for s in spans if s.parent_id is None)
    assert folded_total == root_total


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_folded_lines_sorted_and_positive(seed):
    lines = export_folded(_tree_spans(seed, 10_000)).splitlines()
    stacks = [ln.rsplit(" ", 1)[0] for ln in lines]
    values = [int(ln.rsplit(" ", 1)[1]) for ln in lines]
    assert stacks == sorted(stacks)
    assert len(set(stacks)) == len(stacks)
    assert all(v > 0 for v in values)


def test_folded_real_recorder_roundtrip():
    rec = SpanRecorder()
    with rec.activate():
        with span_scope("req"):
            with span_scope("decode"):
                pass
            with span_scope("transfer"):
                with span_scope("h2d_copy"):
                    pass
    text = export_folded(rec.closed())
    folded_total = sum(int(ln.rsplit(" ", 1)[1]) for ln in text.splitlines())
    root = next(s for s in rec.spans if s.parent_id is None)
    assert folded_total == root.duration_ns
