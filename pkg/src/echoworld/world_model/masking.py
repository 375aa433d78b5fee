"""Block masking for spatial world modeling.

The mask is the union of four random rectangles, each covering 15-20% of
the patch grid with aspect ratio in [0.75, 1.5], plus a uniformly chosen
extra fraction (up to 15%) of the remaining visible cells. Masked and
visible sets partition the grid and the visible set is never empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MaskSpec", "block_mask"]

MIN_GRID = 4
_MAX_TRIES = 100


@dataclass(frozen=True)
class MaskSpec:
    grid_h: int
    grid_w: int
    masked: tuple[int, ...]  # flat row-major cell indices, sorted
    visible: tuple[int, ...]

    def __post_init__(self):
        if set(self.masked) & set(self.visible):
            raise ValueError("masked and visible cells overlap")
        cells = self.grid_h * self.grid_w
        if any(i < 0 or i >= cells for i in self.masked + self.visible):
            raise ValueError("cell index outside the grid")

    @classmethod
    def from_masked(cls, grid_h: int, grid_w: int, masked) -> "MaskSpec":
        masked = tuple(sorted(int(i) for i in masked))
        visible = tuple(i for i in range(grid_h * grid_w) if i not in set(masked))
        return cls(grid_h, grid_w, masked, visible)

    @property
    def n_masked(self) -> int:
        return len(self.masked)

    @property
    def n_visible(self) -> int:
        return len(self.visible)

    def mask_fraction(self) -> float:
        return self.n_masked / (self.grid_h * self.grid_w)


def _rect_cells(grid_h, grid_w, rng, scale, aspect) -> set[int]:
    area = rng.uniform(*scale) * grid_h * grid_w
    ratio = rng.uniform(*aspect)  # height / width
    h = max(1, min(grid_h, round(math.sqrt(area * ratio))))
    w = max(1, min(grid_w, round(math.sqrt(area / ratio))))
    top = int(rng.integers(0, grid_h - h + 1))
    left = int(rng.integers(0, grid_w - w + 1))
    return {
        r * grid_w + c for r in range(top, top + h) for c in range(left, left + w)
    }


def block_mask(
    grid_h: int,
    grid_w: int,
    rng: np.random.Generator,
    n_blocks: int = 4,
    scale: tuple[float, float] = (0.15, 0.2),
    aspect: tuple[float, float] = (0.75, 1.5),
    extra_drop: float = 0.15,
) -> MaskSpec:
    if grid_h < MIN_GRID or grid_w < MIN_GRID:
        raise ValueError(f"grid must be at least {MIN_GRID}x{MIN_GRID}")
    for _ in range(_MAX_TRIES):
        masked: set[int] = set()
        for _ in range(n_blocks):
            masked |= _rect_cells(grid_h, grid_w, rng, scale, aspect)
        visible = [i for i in range(grid_h * grid_w) if i not in masked]
        u = rng.uniform(0.0, extra_drop)
        n_extra = int(math.floor(u * len(visible)))
        if n_extra:
            extra = rng.choice(len(visible), size=n_extra, replace=False)
            masked |= {visible[i] for i in extra}
            visible = [i for i in range(grid_h * grid_w) if i not in masked]
        if visible and masked:
            return MaskSpec(
                grid_h, grid_w, tuple(sorted(masked)), tuple(visible)
            )
    raise RuntimeError("block_mask failed to draw a non-degenerate mask")
