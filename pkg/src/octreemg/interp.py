"""Inter-/extrapolation at refinement interfaces.

Fine-to-coarse (F2C) values are plain averages of the ``r**D`` fine cells
under a coarse ghost cell.  Coarse-to-fine (C2F) values are built from
1D Lagrange stages: first along the communication axis (into the sending
block), then along each transverse axis.  Every stage only reads interior
cells of the sending block; base positions that would fall into the ghost
layer are remapped to ``-2 * o`` along the offending orthogonal direction.

Since each stage is linear, a C2F value is a tensor-product stencil over
at most ``3**D`` interior cells.  The kernels below build these stencils
once per interface segment and the exchange reuses them.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .blockforest import Direction, ForestError
from .fields import GHOST, BlockField, CellRange, interface_range, interior_range

R = 2
# transverse positions (coarse units) of the fine ghost centers around a coarse cell
FINE_OFFSETS = (-0.25, 0.25)
# position of the fine ghost layer along the communication axis, measured into the block
FINE_DEPTH = -0.25


class SchemeOrder(enum.Enum):
    CONSTANT = 1
    LINEAR = 2
    QUADRATIC = 3

    @property
    def n_bases(self) -> int:
        return self.value

    @classmethod
    def parse(cls, s) -> "SchemeOrder":
        if isinstance(s, cls):
            return s
        key = str(s).strip().lower()
        aliases = {
            "constant": cls.CONSTANT, "const": cls.CONSTANT, "0": cls.CONSTANT,
            "linear": cls.LINEAR, "first": cls.LINEAR, "1": cls.LINEAR,
            "quadratic": cls.QUADRATIC, "second": cls.QUADRATIC, "2": cls.QUADRATIC,
        }
        if key not in aliases:
            raise ValueError(f"unknown scheme order {s!r}")
        return aliases[key]


def lagrange_weights(positions: Sequence[float], x: float) -> list[float]:
    """Weights ``w_i(x)`` of the Lagrange basis through ``positions``."""
    pos = [float(p) for p in positions]
    if not 1 <= len(pos) <= 3:
        raise ValueError(f"expected 1-3 positions, got {len(pos)}")
    if len(set(pos)) != len(pos):
        raise ValueError(f"duplicate base positions {pos}")
    w = []
    for i, xi in enumerate(pos):
        wi = 1.0
        for j, xj in enumerate(pos):
            if j != i:
                wi *= (x - xj) / (xi - xj)
        w.append(wi)
    return w


def f2c_reduce(fine_values: Sequence[float], dim: int | None = None) -> float:
    vals = np.asarray(fine_values, dtype=float).ravel()
    if dim is None:
        dim = {4: 2, 8: 3}.get(vals.size)
    if dim is None or vals.size != R**dim:
        raise ValueError(f"F2C needs {R}**D fine values, got {vals.size}")
    return float((vals * R**-dim).sum())


@dataclass(frozen=True)
class OrthogonalFrame:
    d_comm: Direction
    o2d_plus: Direction
    o2d_minus: Direction
    o3d_plus: Direction | None = None
    o3d_minus: Direction | None = None

    @classmethod
    def of(cls, d_comm: Direction, dim: int) -> "OrthogonalFrame":
        axes = [a for a in range(dim) if a != d_comm.axis]
        o2 = axes[0]
        if dim == 2:
            return cls(d_comm, Direction.of(o2, 1), Direction.of(o2, -1))
        o3 = axes[1]
        return cls(d_comm, Direction.of(o2, 1), Direction.of(o2, -1),
                   Direction.of(o3, 1), Direction.of(o3, -1))

    @property
    def dim(self) -> int:
        return 2 if self.o3d_plus is None else 3

    @property
    def transverse_axes(self) -> list[int]:
        axes = [self.o2d_plus.axis]
        if self.o3d_plus is not None:
            axes.append(self.o3d_plus.axis)
        return axes

    def orthogonal(self) -> set[Direction]:
        return {d for d in Direction.all(self.dim) if d.axis != self.d_comm.axis}


def remap_orthogonal(cell: Sequence[int], o: Direction, interior: CellRange) -> tuple[int, ...]:
    """Offset towards the orthogonal base of ``cell``: ``o`` itself, or ``-2 o`` if that is a ghost."""
    dim = len(cell)
    v = o.vector(dim)
    if interior.contains(tuple(c + d for c, d in zip(cell, v))):
        return v
    return tuple(-2 * d for d in v)


# per-axis edge classification of a coarse interface cell
MIDDLE, LOW_EDGE, HIGH_EDGE = 0, 1, 2


def _first_dim_rule(order: SchemeOrder) -> tuple[tuple[int, ...], tuple[float, ...]]:
    offs = tuple(range(order.n_bases))
    return offs, tuple(lagrange_weights(offs, FINE_DEPTH))


@lru_cache(maxsize=None)
def transverse_rule(order: SchemeOrder, edge: int, side: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Offsets along ``+axis`` and weights for the fine target on ``side`` (0 downwind, 1 upwind)."""
    target = FINE_OFFSETS[side]
    if order is SchemeOrder.CONSTANT:
        offs = (0,)
    elif order is SchemeOrder.QUADRATIC:
        # downwind neighbor remapped from -1 to +2, upwind from +1 to -2
        offs = {MIDDLE: (-1, 0, 1), LOW_EDGE: (0, 1, 2), HIGH_EDGE: (-2, -1, 0)}[edge]
    else:
        # current cell plus its downwind neighbor, remapped to +2 on the low edge
        offs = (0, 2) if edge == LOW_EDGE else (-1, 0)
    return offs, tuple(lagrange_weights(offs, target))


def _edge_class(idx: np.ndarray, m: int) -> np.ndarray:
    cls = np.full(idx.shape, MIDDLE)
    cls[idx == GHOST] = LOW_EDGE
    cls[idx == m - 1 + GHOST] = HIGH_EDGE
    if m < 2:
        raise ForestError("C2F needs at least two cells per dimension")
    return cls


def _targets(dim: int) -> list[tuple[int, ...]]:
    # payload protocol: o2d side fastest, then o3d side
    return [t[::-1] for t in itertools.product((0, 1), repeat=dim - 1)]


@dataclass(frozen=True)
class Stencil:
    """``M`` output values, each a weighted sum over ``K`` cells (raw indices)."""

    cells: np.ndarray  # (M, K, D) int
    weights: np.ndarray  # (M, K) float

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    def flat(self, shape: tuple[int, ...]) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.moveaxis(self.cells, -1, 0)), shape)

    def apply(self, data: np.ndarray) -> np.ndarray:
        vals = data.ravel()[self.flat(data.shape)]
        return (vals * self.weights).sum(axis=1)


def c2f_stencil(m: int, dim: int, cells: CellRange | np.ndarray, frame: OrthogonalFrame,
                order: SchemeOrder) -> Stencil:
    """Stencils for all ``r**(D-1)`` fine values of each interface cell, in packing order."""
    if order is SchemeOrder.QUADRATIC and m < 3:
        raise ForestError("quadratic C2F needs at least three cells per dimension")
    if order is SchemeOrder.LINEAR and m < 3:
        # the low-edge remap reaches two cells upwind
        raise ForestError("linear C2F needs at least three cells per dimension")
    idx = cells.index_grid() if isinstance(cells, CellRange) else np.asarray(cells, dtype=np.int64)
    M = idx.shape[0]
    into = np.array(frame.d_comm.opposite.vector(dim))
    f_offs, f_w = _first_dim_rule(order)
    edges = [_edge_class(idx[:, a], m) for a in frame.transverse_axes]

    all_cells, all_w = [], []
    for sides in _targets(dim):
        # start with the first-dimension stage
        offs = idx[:, None, :] + np.array(f_offs)[None, :, None] * into[None, None, :]
        w = np.broadcast_to(np.array(f_w), (M, len(f_offs)))
        for a, edge, side in zip(frame.transverse_axes, edges, sides):
            rule_offs = np.empty((M, order.n_bases), dtype=np.int64)
            rule_w = np.empty((M, order.n_bases))
            for e in (MIDDLE, LOW_EDGE, HIGH_EDGE):
                sel = edge == e
                if sel.any():
                    o, ww = transverse_rule(order, e, side)
                    rule_offs[sel] = o
                    rule_w[sel] = ww
            K = offs.shape[1]
            nb = order.n_bases
            offs = np.repeat(offs[:, None, :, :], nb, axis=1).copy()  # (M, nb, K, D)
            offs[..., a] += rule_offs[:, :, None]
            offs = offs.reshape(M, nb * K, dim)
            w = (rule_w[:, :, None] * w[:, None, :]).reshape(M, nb * K)
        all_cells.append(offs)
        all_w.append(w)
    T = len(all_cells)
    cells_out = np.stack(all_cells, axis=1).reshape(M * T, -1, dim)
    w_out = np.stack(all_w, axis=1).reshape(M * T, -1)
    lo, hi = GHOST, m + GHOST
    if cells_out.size and (cells_out.min() < lo or cells_out.max() >= hi):
        raise AssertionError("C2F stencil reads outside the sender interior")
    return Stencil(cells_out, np.ascontiguousarray(w_out))


def f2c_stencil(m: int, dim: int, direction: Direction) -> Stencil:
    """Averages of fine interior cells under each coarse ghost cell of the neighbor in ``direction``."""
    if m % R:
        raise ForestError(f"F2C needs cells divisible by {R}, got {m}")
    face = interface_range(m, direction, dim)
    lo = list(face.lo)
    a = direction.axis
    lo[a] = GHOST if direction.sign < 0 else m + GHOST - R
    step = [R] * dim
    step[a] = 1
    starts = CellRange(tuple(lo), tuple(h if i != a else lo[a] + 1 for i, h in enumerate(face.hi)),
                       tuple(step)).index_grid()
    offs = np.array([o[::-1] for o in itertools.product(range(R), repeat=dim)])
    cells = starts[:, None, :] + offs[None, :, :]
    w = np.full(cells.shape[:2], float(R) ** -dim)
    return Stencil(cells, w)


def copy_stencil(m: int, dim: int, direction: Direction) -> Stencil:
    cells = interface_range(m, direction, dim).index_grid()[:, None, :]
    return Stencil(cells, np.ones(cells.shape[:2]))


def c2f_unpack_offsets(frame: OrthogonalFrame, dim: int, r: int = R) -> list[tuple[int, ...]]:
    if r != 2:
        raise ValueError("only refinement ratio 2 is supported")
    zero = (0,) * dim
    o2 = frame.o2d_plus.vector(dim)
    if dim == 2:
        return [zero, o2]
    o3 = frame.o3d_plus.vector(dim)
    return [zero, o2, o3, tuple(a + b for a, b in zip(o2, o3))]


def c2f_unpack_cells(m: int, dim: int, ghost_face: CellRange, frame: OrthogonalFrame) -> np.ndarray:
    """Fine ghost cells in payload order: coarse groups lowest axis fastest, then Fig.-5 offsets."""
    step = [R] * dim
    step[frame.d_comm.axis] = 1
    anchors = CellRange(ghost_face.lo, ghost_face.hi, tuple(step)).index_grid()
    offs = np.array(c2f_unpack_offsets(frame, dim))
    return (anchors[:, None, :] + offs[None, :, :]).reshape(-1, dim)


# single-cell conveniences -------------------------------------------------

def c2f_first_dim_base(field: BlockField, cell: Sequence[int], d_comm: Direction,
                       order: SchemeOrder) -> float:
    """Extrapolate along ``-d_comm`` to the fine ghost depth in front of ``cell``."""
    dim = field.dim
    if not interface_range(field, d_comm).contains(tuple(cell)):
        raise ValueError(f"{cell} is not on the {d_comm.name} interface")
    into = d_comm.opposite.vector(dim)
    offs, w = _first_dim_rule(order)
    val = 0.0
    for o, wi in zip(offs, w):
        val += wi * field.data[tuple(c + o * v for c, v in zip(cell, into))]
    return val


def c2f_compute_fine_values(field: BlockField, cell: Sequence[int], frame: OrthogonalFrame,
                            order: SchemeOrder) -> list[float]:
    if not interface_range(field, frame.d_comm).contains(tuple(cell)):
        raise ValueError(f"{cell} is not on the {frame.d_comm.name} interface")
    st = c2f_stencil(field.cells, field.dim, np.array([cell]), frame, order)
    return st.apply(field.data).tolist()


def c2f_pack(field: BlockField, segment: CellRange, frame: OrthogonalFrame,
             order: SchemeOrder) -> np.ndarray:
    return c2f_stencil(field.cells, field.dim, segment, frame, order).apply(field.data)


def f2c_pack(field: BlockField, direction: Direction) -> np.ndarray:
    return f2c_stencil(field.cells, field.dim, direction).apply(field.data)


def interior_reads(stencil: Stencil, m: int, dim: int) -> bool:
    """True if every cell read by ``stencil`` is an interior cell."""
    inner = interior_range(m, dim)
    lo, hi = np.array(inner.lo), np.array(inner.hi)
    return bool(((stencil.cells >= lo) & (stencil.cells < hi)).all())
