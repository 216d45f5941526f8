"""Cell-centered block fields with one ghost layer, and index ranges on them.

All ranges are in raw array indices, i.e. interior cells of a block with
``m`` cells per dimension occupy ``[1, m + 1)`` along every axis and the
ghost layer sits at ``0`` and ``m + 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .blockforest import BlockId, Blockforest, Case, Direction, ForestError

GHOST = 1


@dataclass(frozen=True)
class CellRange:
    lo: tuple[int, ...]
    hi: tuple[int, ...]
    step: tuple[int, ...] | None = None

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"inverted range {self.lo}..{self.hi}")
        if self.step is None:
            object.__setattr__(self, "step", (1,) * len(self.lo))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(range(a, b, s)) for a, b, s in zip(self.lo, self.hi, self.step))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(a, b, s) for a, b, s in zip(self.lo, self.hi, self.step))

    def cells(self):
        """Cell index tuples, lowest axis fastest."""
        axes = [range(a, b, s) for a, b, s in zip(self.lo, self.hi, self.step)]
        for idx in itertools.product(*reversed(axes)):
            yield idx[::-1]

    def index_grid(self) -> np.ndarray:
        """Array of shape ``(size, D)`` listing cells, lowest axis fastest."""
        return np.array(list(self.cells()), dtype=np.int64).reshape(self.size, len(self.lo))

    def contains(self, cell) -> bool:
        return all(a <= c < b for c, a, b in zip(cell, self.lo, self.hi))

    def intersects(self, other: "CellRange") -> bool:
        return all(max(a, c) < min(b, d) for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))


@dataclass
class BlockField:
    """Scalar field on one block; ``data`` may be a view into a stacked array."""

    block: BlockId
    n: int
    data: np.ndarray
    mg_level: int = 0

    def __post_init__(self):
        m = self.cells
        if self.data.shape != (m + 2 * GHOST,) * self.data.ndim:
            raise ValueError(f"data shape {self.data.shape} does not fit {m} cells + ghosts")

    @property
    def cells(self) -> int:
        """Interior cells per dimension on this multigrid level."""
        return self.n >> self.mg_level

    @property
    def dim(self) -> int:
        return self.data.ndim

    @classmethod
    def zeros(cls, block: BlockId, n: int, dim: int, mg_level: int = 0) -> "BlockField":
        m = n >> mg_level
        return cls(block, n, np.zeros((m + 2,) * dim), mg_level)

    def interior(self) -> np.ndarray:
        return self.data[interior_range(self).slices()]


def mg_cells(n: int, mg_level: int) -> int:
    m = n >> mg_level
    if m << mg_level != n:
        raise ForestError(f"{n} cells cannot be coarsened {mg_level} times")
    return m


def max_mg_level(n: int, coarsest: int = 4) -> int:
    """Deepest multigrid level whose per-block interior is still >= ``coarsest`` cells."""
    lvl = 0
    while n % 2 == 0 and n // 2 >= coarsest:
        n //= 2
        lvl += 1
    return lvl


def interior_range(field_or_cells, dim: int | None = None) -> CellRange:
    m, dim = _cells_dim(field_or_cells, dim)
    return CellRange((GHOST,) * dim, (m + GHOST,) * dim)


def interface_range(field_or_cells, direction: Direction, dim: int | None = None) -> CellRange:
    """Single layer of interior cells touching the face in ``direction``."""
    m, dim = _cells_dim(field_or_cells, dim)
    lo = [GHOST] * dim
    hi = [m + GHOST] * dim
    a = direction.axis
    lo[a] = GHOST if direction.sign < 0 else m
    hi[a] = lo[a] + 1
    return CellRange(tuple(lo), tuple(hi))


def ghost_face_range(field_or_cells, direction: Direction, dim: int | None = None) -> CellRange:
    m, dim = _cells_dim(field_or_cells, dim)
    lo = [GHOST] * dim
    hi = [m + GHOST] * dim
    a = direction.axis
    lo[a] = 0 if direction.sign < 0 else m + GHOST
    hi[a] = lo[a] + 1
    return CellRange(tuple(lo), tuple(hi))


def split_interface(rng: CellRange, direction: Direction, r: int = 2) -> list[CellRange]:
    """Split the interface axes into ``r`` pieces each; segment order is lowest axis fastest."""
    dim = len(rng.lo)
    axes = [a for a in range(dim) if a != direction.axis]
    pieces = []
    for a in axes:
        ext = rng.hi[a] - rng.lo[a]
        if ext % r:
            raise ForestError(f"interface extent {ext} along axis {a} not divisible by {r}")
        w = ext // r
        pieces.append([(rng.lo[a] + k * w, rng.lo[a] + (k + 1) * w) for k in range(r)])
    out = []
    for combo in itertools.product(*reversed(pieces)):
        combo = combo[::-1]
        lo, hi = list(rng.lo), list(rng.hi)
        for a, (l, h) in zip(axes, combo):
            lo[a], hi[a] = l, h
        out.append(CellRange(tuple(lo), tuple(hi)))
    return out


def ghost_segment_range(field_or_cells, direction: Direction, case: Case, segment_index: int,
                        dim: int | None = None, r: int = 2) -> CellRange:
    """Ghost cells written by one incoming message."""
    m, dim = _cells_dim(field_or_cells, dim)
    face = ghost_face_range(m, direction, dim)
    if case is not Case.F2C:
        if segment_index != 0:
            raise ForestError(f"{case.value} reception has a single segment, got {segment_index}")
        return face
    segs = split_interface(face, direction, r)
    if not 0 <= segment_index < len(segs):
        raise ForestError(f"segment {segment_index} out of range for {len(segs)} segments")
    return segs[segment_index]


def cell_width(forest: Blockforest, block: BlockId, mg_level: int = 0) -> tuple[float, ...]:
    if block not in forest:
        raise ForestError(f"unknown block {block}")
    m = mg_cells(forest.n, mg_level)
    return tuple(e / m for e in forest.block_extent(block.level))


def cell_centers(forest: Blockforest, block: BlockId, mg_level: int = 0) -> list[np.ndarray]:
    """Coordinates of all (ghost-inclusive) cell centers, one 1D array per axis."""
    h = cell_width(forest, block, mg_level)
    lo, _ = forest.block_box(block)
    m = mg_cells(forest.n, mg_level)
    return [lo[a] + (np.arange(m + 2) - GHOST + 0.5) * h[a] for a in range(forest.dim)]


def _cells_dim(obj, dim):
    if isinstance(obj, BlockField):
        return obj.cells, obj.dim
    if dim is None:
        raise TypeError("dim required when passing a cell count")
    return int(obj), dim
