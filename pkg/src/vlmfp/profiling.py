"""In-process span profiler with folded-stack export.

A :class:`SpanRecorder` collects nested, named spans timed with the
monotonic high-resolution clock. Pipeline code marks regions with
``span_scope(name)``; scopes are cheap no-ops unless a recorder has been
activated on the current context, so instrumented library code costs
almost nothing when nobody is profiling.

``export_folded`` emits one line per observed stack with its exclusive
time, the usual collapsed-stack format flame-graph tooling consumes.
"""

from __future__ import annotations

import time
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import InstrumentationError


@dataclass(slots=True)
class Span:
    """One closed instrumented region."""

    id: int
    name: str
    parent_id: Optional[int]
    start_ns: int
    duration_ns: int


class SpanRecorder:
    """Collects spans for one pipeline run.

    Not thread-safe: a recorder belongs to whichever thread currently
    drives the request it instruments.
    """

    def __init__(self):
        self.spans: list[Span] = []
        self._open: list[tuple[int, str, int, Optional[int]]] = []
        self._next_id = 0

    def begin(self, name: str) -> int:
        parent = self._open[-1][0] if self._open else None
        sid = self._next_id
        self._next_id += 1
        self._open.append((sid, name, time.perf_counter_ns(), parent))
        return sid

    def end(self, name: Optional[str] = None) -> Span:
        stop = time.perf_counter_ns()
        if not self._open:
            raise InstrumentationError("end() with no open span")
        sid, open_name, start, parent = self._open.pop()
        if name is not None and name != open_name:
            self._open.append((sid, open_name, start, parent))
            raise InstrumentationError(
                f"unbalanced close: open span is {open_name!r}, got {name!r}"
            )
        span = Span(sid, open_name, parent, start, stop - start)
        self.spans.append(span)
        return span

    def span(self, name: str) -> "_Scope":
        return _Scope(self, name)

    def activate(self) -> "_Activation":
        """Make this recorder the target of ``span_scope`` on this context."""
        return _Activation(self)

    def closed(self) -> list[Span]:
        if self._open:
            names = [n for _, n, _, _ in self._open]
            raise InstrumentationError(f"spans still open: {names}")
        return self.spans

    def count(self, name: str) -> int:
        return sum(1 for s in self.spans if s.name == name)

    def total_ns(self, name: str) -> int:
        return sum(s.duration_ns for s in self.spans if s.name == name)


class _Scope:
    __slots__ = ("_rec", "_name")

    def __init__(self, rec: SpanRecorder, name: str):
        self._rec = rec
        self._name = name

    def __enter__(self):
        self._rec.begin(self._name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self._rec.end(self._name)
        return False


class _NullScope:
    __slots__ = ()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        return False


_NULL_SCOPE = _NullScope()
_active: ContextVar[Optional[SpanRecorder]] = ContextVar("vlmfp_recorder", default=None)


class _Activation:
    __slots__ = ("_rec", "_token")

    def __init__(self, rec: SpanRecorder):
        self._rec = rec
        self._token = None

    def __enter__(self) -> SpanRecorder:
        self._token = _active.set(self._rec)
        return self._rec

    def __exit__(self, exc_type, exc, tb):
        _active.reset(self._token)
        return False


def active_recorder() -> Optional[SpanRecorder]:
    return _active.get()


def span_scope(name: str):
    """Instrument a region against the active recorder, if any."""
    rec = _active.get()
    if rec is None:
        return _NULL_SCOPE
    return _Scope(rec, name)


def export_folded(spans: Iterable[Span]) -> str:
    """Render closed spans as collapsed stacks.

    One line per distinct stack, ``root;child;leaf <ns>``, where the
    value is the exclusive time spent with exactly that stack active.
    Lines are sorted lexicographically; exclusive totals under a root
    sum to the root's duration exactly.
    """
    spans = list(spans)
    by_id = {s.id: s for s in spans}
    child_total: dict[int, int] = {}
    for s in spans:
        if s.parent_id is not None:
            child_total[s.parent_id] = child_total.get(s.parent_id, 0) + s.duration_ns

    totals: dict[str, int] = {}
    for s in spans:
        exclusive = s.duration_ns - child_total.get(s.id, 0)
        if exclusive < 0:
            raise InstrumentationError(
                f"span {s.name!r}: children overrun parent by {-exclusive} ns"
            )
        if exclusive == 0:
            continue
        parts = [s.name]
        cur = s
        while cur.parent_id is not None:
            cur = by_id[cur.parent_id]
            parts.append(cur.name)
        stack = ";".join(reversed(parts))
        totals[stack] = totals.get(stack, 0) + exclusive

    return "\n".join(f"{stack} {ns}" for stack, ns in sorted(totals.items()))
