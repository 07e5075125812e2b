"""Space-to-depth compression of the visual patch grid.

A vision encoder emits one feature vector per image patch; downstream
token budgets shrink when spatially adjacent patches are folded into the
channel dimension instead.  ``pixel_unshuffle`` performs that folding:
every non-overlapping ``r x r`` neighbourhood of patches becomes a single
output cell whose feature vector is the concatenation of the
neighbourhood's vectors in row-major (row offset outer, column offset
inner) order.  The op is a pure reindexing — no values are created,
dropped, or modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .imgproc import TilePlan

__all__ = [
    "PatchGrid",
    "TokenReductionConfig",
    "pixel_unshuffle",
    "tokens_per_tile",
    "visual_token_count",
]


@dataclass(frozen=True)
class TokenReductionConfig:
    """Patch size and space-to-depth factor applied to every tile."""

    patch_edge: int = 14
    r: int = 2

    def __post_init__(self) -> None:
        if self.patch_edge < 1:
            raise ShapeError(f"patch_edge must be positive, got {self.patch_edge}")
        if self.r < 1:
            raise ShapeError(f"reduction factor must be >= 1, got {self.r}")


@dataclass(frozen=True)
class PatchGrid:
    """A row-major grid of ``h * w`` patch feature vectors of width ``d``.

    ``data`` is the flat concatenation of the vectors: patch-major,
    feature-minor, so element ``(i, j, k)`` lives at ``(i*w + j)*d + k``.
    """

    h: int
    w: int
    d: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.h < 1 or self.w < 1 or self.d < 1:
            raise ShapeError("grid dimensions must be positive")
        if self.data.ndim != 1:
            raise ShapeError(f"grid data must be flat, got {self.data.ndim}-d")
        if self.data.shape[0] != self.h * self.w * self.d:
            raise ShapeError(
                f"grid data has {self.data.shape[0]} elements, "
                f"expected {self.h}*{self.w}*{self.d} = {self.h * self.w * self.d}"
            )
        if not self.data.flags["C_CONTIGUOUS"]:
            raise ShapeError("grid data must be C-contiguous")

    @property
    def n_tokens(self) -> int:
        return self.h * self.w

    def as_array(self) -> np.ndarray:
        """View of the data as an ``(h, w, d)`` array."""
        return self.data.reshape(self.h, self.w, self.d)


def pixel_unshuffle(grid: PatchGrid, r: int) -> PatchGrid:
    """Fold ``r x r`` patch neighbourhoods into the channel dimension.

    Output cell ``(i, j)`` concatenates the feature vectors of input
    cells ``(i*r + a, j*r + b)`` with ``a`` as the outer index and ``b``
    as the inner one.  The result has grid shape ``(h/r, w/r)`` and
    feature width ``d * r * r``; its data is a permutation of the input.
    """
    if r < 1:
        raise DomainError(f"reduction factor must be >= 1, got {r}")
    if grid.h % r or grid.w % r:
        raise ShapeError(
            f"reduction factor {r} does not divide grid ({grid.h}, {grid.w})"
        )
    if r == 1:
        return PatchGrid(h=grid.h, w=grid.w, d=grid.d, data=grid.data)
    oh, ow = grid.h // r, grid.w // r
    folded = (
        grid.as_array()
        .reshape(oh, r, ow, r, grid.d)
        .transpose(0, 2, 1, 3, 4)
        .reshape(oh * ow * r * r * grid.d)
    )
    return PatchGrid(h=oh, w=ow, d=grid.d * r * r, data=np.ascontiguousarray(folded))


def tokens_per_tile(tile_edge: int, patch_edge: int, r: int) -> int:
    """Visual tokens one square tile contributes after compression."""
    if tile_edge % patch_edge:
        raise ShapeError(
            f"patch edge {patch_edge} does not divide tile edge {tile_edge}"
        )
    side = tile_edge // patch_edge
    if side % r:
        raise ShapeError(
            f"reduction factor {r} does not divide patch grid side {side}"
        )
    return (side // r) ** 2


def visual_token_count(plan: TilePlan, patch_edge: int, r: int) -> int:
    """Number of visual tokens a tile plan yields after compression.

    Each of the plan's images (tiles plus the optional thumbnail) is a
    square of ``tile_edge/patch_edge`` patches per side, reduced by
    ``r`` in both spatial directions.
    """
    return plan.n_images * tokens_per_tile(plan.tile_edge, patch_edge, r)
