"""Host-side staging buffers and a deterministic host-to-device copy model.

Three latency levers live here:

* ``HostArena`` — a fixed, pre-allocated, aligned slab standing in for
  page-locked host memory.  Nothing is allocated after construction;
  handing out regions is pointer arithmetic.
* dtype narrowing — ``payload_bytes`` makes the size effect of sending
  uint8 instead of float32 explicit (exactly 4x fewer bytes).
* ``pack`` vs ``stage_individually`` — the same buffers staged as one
  contiguous payload (one copy) or as separate regions (one copy each).

``transfer`` performs a real byte copy (so content checks stay
meaningful) and returns a modeled duration
``latency_per_copy * n_copies + data_bytes / bytes_per_second``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dtypes import ITEMSIZE, tag_of, to_numpy
from .errors import ArenaFullError, DataError, DomainError, ShapeError
from .profiling import span_scope

__all__ = [
    "DEFAULT_ALIGNMENT",
    "CostModel",
    "HostArena",
    "Region",
    "BatchEntry",
    "TransferBatch",
    "TransferResult",
    "payload_bytes",
    "pack",
    "stage_individually",
    "transfer",
    "unpack",
]

DEFAULT_ALIGNMENT = 64

H2D_SPAN = "h2d_copy"


def _round_up(n: int, alignment: int) -> int:
    return ((n + alignment - 1) // alignment) * alignment


@dataclass(frozen=True)
class Region:
    """An aligned window into an arena's slab."""

    offset: int
    size: int
    view: np.ndarray


class HostArena:
    """Bump allocator over a single slab allocated at construction time.

    Regions are handed out at ``alignment``-aligned offsets; ``reset``
    rewinds the high-water mark so a pipeline can reuse the slab every
    request without touching the system allocator.
    """

    def __init__(self, capacity: int, alignment: int = DEFAULT_ALIGNMENT) -> None:
        if capacity <= 0:
            raise DomainError(f"arena capacity must be positive, got {capacity}")
        if alignment <= 0:
            raise DomainError(f"arena alignment must be positive, got {alignment}")
        self._slab = np.zeros(capacity, dtype=np.uint8)
        self._capacity = capacity
        self._alignment = alignment
        self._mark = 0
        self._alloc_count = 0

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def alignment(self) -> int:
        return self._alignment

    @property
    def mark(self) -> int:
        return self._mark

    @property
    def allocation_count(self) -> int:
        return self._alloc_count

    @property
    def remaining(self) -> int:
        return max(0, self._capacity - self._mark)

    def alloc(self, size: int) -> Region:
        if size <= 0:
            raise DomainError(f"allocation size must be positive, got {size}")
        if self._mark + size > self._capacity:
            raise ArenaFullError(requested=size, remaining=self.remaining)
        offset = self._mark
        self._mark = _round_up(offset + size, self._alignment)
        self._alloc_count += 1
        return Region(offset=offset, size=size, view=self._slab[offset : offset + size])

    def reset(self) -> None:
        self._mark = 0


@dataclass(frozen=True)
class CostModel:
    """Copy-engine model: fixed per-copy latency plus a bandwidth term."""

    latency_per_copy: float
    bytes_per_second: float

    def __post_init__(self) -> None:
        if not self.latency_per_copy > 0:
            raise DomainError("latency_per_copy must be positive")
        if not self.bytes_per_second > 0:
            raise DomainError("bytes_per_second must be positive")


@dataclass(frozen=True)
class BatchEntry:
    """One logical buffer inside a staged payload."""

    offset: int
    length: int
    dtype: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class TransferBatch:
    """Staged buffers plus the copy spans needed to move them.

    ``payload`` is one contiguous byte region; ``entries`` locate each
    logical buffer inside it (input order preserved).  ``copies`` are
    the (offset, length) memcpy spans: a packed batch has one span
    covering the payload, an individually staged batch has one per
    entry.
    """

    payload: np.ndarray
    entries: tuple[BatchEntry, ...]
    copies: tuple[tuple[int, int], ...]

    @property
    def n_copies(self) -> int:
        return len(self.copies)

    @property
    def data_bytes(self) -> int:
        return sum(entry.length for entry in self.entries)


@dataclass(frozen=True)
class TransferResult:
    duration_s: float
    dest: np.ndarray


def payload_bytes(shape: Sequence[int], dtype: str) -> int:
    """Bytes needed for ``shape`` elements of the tagged dtype."""
    dims = tuple(shape)
    if any(d <= 0 for d in dims):
        raise ShapeError(f"shape dims must be positive, got {dims}")
    try:
        itemsize = ITEMSIZE[dtype]
    except KeyError:
        raise DataError(f"unknown dtype tag {dtype!r}") from None
    total = itemsize
    for d in dims:
        total *= d
    return total


def _empty_batch() -> TransferBatch:
    return TransferBatch(payload=np.empty(0, dtype=np.uint8), entries=(), copies=())


def _stage(
    buffers: Sequence[np.ndarray], arena: HostArena, *, packed: bool
) -> TransferBatch:
    if not buffers:
        return _empty_batch()
    sizes = [int(buf.nbytes) for buf in buffers]
    alignment = arena.alignment
    rel_offsets = []
    mark = 0
    for size in sizes:
        rel_offsets.append(mark)
        mark = _round_up(mark + size, alignment)
    total = mark

    if packed:
        region = arena.alloc(total)
        payload = region.view
    else:
        # Sequential allocations from one arena land back-to-back, so the
        # regions form a single contiguous window over the slab.
        regions = [arena.alloc(size) for size in sizes]
        base = regions[0].offset
        payload = arena._slab[base : base + total]

    entries = []
    for buf, rel, size in zip(buffers, rel_offsets, sizes):
        flat = np.ascontiguousarray(buf).view(np.uint8).reshape(-1)
        payload[rel : rel + size] = flat
        entries.append(
            BatchEntry(offset=rel, length=size, dtype=tag_of(buf), shape=buf.shape)
        )

    if packed:
        copies = ((0, total),)
    else:
        copies = tuple((rel, size) for rel, size in zip(rel_offsets, sizes))
    return TransferBatch(payload=payload, entries=tuple(entries), copies=copies)


def pack(buffers: Sequence[np.ndarray], arena: HostArena) -> TransferBatch:
    """Stage buffers back-to-back in one arena region: one copy total."""
    return _stage(buffers, arena, packed=True)


def stage_individually(buffers: Sequence[np.ndarray], arena: HostArena) -> TransferBatch:
    """Stage each buffer as its own region: one copy per buffer."""
    return _stage(buffers, arena, packed=False)


def transfer(
    batch: TransferBatch, cost_model: CostModel, dest: np.ndarray | None = None
) -> TransferResult:
    """Copy the batch to ``dest`` and return the modeled duration.

    The copy is real (``dest`` ends up holding the payload's staged
    spans); the duration is modeled so results are hardware-independent:
    ``latency_per_copy * n_copies + data_bytes / bytes_per_second``.
    """
    if dest is None:
        dest = np.empty(len(batch.payload), dtype=np.uint8)
    elif len(dest) < len(batch.payload):
        raise ShapeError(
            f"destination holds {len(dest)} bytes, payload needs {len(batch.payload)}"
        )
    for offset, length in batch.copies:
        with span_scope(H2D_SPAN):
            dest[offset : offset + length] = batch.payload[offset : offset + length]
    duration = (
        cost_model.latency_per_copy * batch.n_copies
        + batch.data_bytes / cost_model.bytes_per_second
    )
    if batch.n_copies == 0:
        duration = 0.0
    return TransferResult(duration_s=duration, dest=dest)


def unpack(batch: TransferBatch, source: np.ndarray | None = None) -> list[np.ndarray]:
    """Reconstruct the staged buffers bit-exactly from a payload image."""
    buf = batch.payload if source is None else source
    out = []
    for entry in batch.entries:
        raw = buf[entry.offset : entry.offset + entry.length].tobytes()
        arr = np.frombuffer(raw, dtype=to_numpy(entry.dtype)).reshape(entry.shape)
        out.append(arr.copy())
    return out
