"""Cell-centered Poisson discretization and V-cycle multigrid on a blockforest.

Each block carries its own stack of multigrid levels (``n``, ``n/2``, ...
down to 4 cells per dimension); all blocks of one level are stored in a
single array of shape ``(n_blocks, m + 2, ..., m + 2)``.  Coarsening is
intra-block, and every stencil application is preceded by a boundary
refresh and a refined ghost exchange at that level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .blockforest import BlockId, Blockforest, Direction
from .comm import CompiledExchange, RoutedExchange, VolumeReport, build_plan
from .fields import (
    GHOST, BlockField, cell_width, ghost_face_range, interface_range, max_mg_level, mg_cells,
)
from .interp import SchemeOrder

logger = logging.getLogger(__name__)

COARSEST_CELLS = 4


class SolverDivergence(RuntimeError):
    pass


@dataclass
class SolverConfig:
    omega: float = 0.8
    nu1: int = 3
    nu2: int = 3
    coarse_iters: int = 256
    max_cycles: int = 35
    residual_tol: float = 1e-16
    scheme: SchemeOrder = SchemeOrder.QUADRATIC
    divergence_factor: float = 10.0

    def __post_init__(self):
        self.scheme = SchemeOrder.parse(self.scheme)
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError("smoothing sweep counts must be non-negative")
        if self.coarse_iters < 0 or self.max_cycles < 0:
            raise ValueError("iteration counts must be non-negative")


GHOST_CENTER = "ghost-center"
REFLECT = "reflect"
BC_RULES = (GHOST_CENTER, REFLECT)


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet data ``g(x, y[, z])`` evaluated on coordinate arrays.

    ``rule`` selects how ghosts are filled:

    * ``"ghost-center"``: ghost = g(ghost cell center)
    * ``"reflect"``: ghost = 2 g(face center) - adjacent interior value
    """

    g: Callable
    rule: str = GHOST_CENTER

    def __post_init__(self):
        if self.rule not in BC_RULES:
            raise ValueError(f"unknown boundary rule {self.rule!r}, expected one of {BC_RULES}")

    def with_rule(self, rule: str) -> "BoundarySpec":
        return BoundarySpec(self.g, rule)


@dataclass(frozen=True)
class Problem:
    name: str
    exact: Callable | None
    rhs: Callable
    boundary: BoundarySpec


def _zero(*xs):
    return np.zeros(np.broadcast_shapes(*(np.shape(x) for x in xs)))


def poisson_sinh(dim: int = 3) -> Problem:
    """Harmonic test problem: sin(pi x) sin(pi y) sinh(sqrt(2) pi z) in 3D, sin(pi x) sinh(pi y) in 2D."""
    if dim == 3:
        def u(x, y, z):
            return np.sin(np.pi * x) * np.sin(np.pi * y) * np.sinh(math.sqrt(2) * np.pi * z)
    else:
        def u(x, y):
            return np.sin(np.pi * x) * np.sinh(np.pi * y)
    return Problem("poisson-sinh", u, _zero, BoundarySpec(u))


def zero_problem() -> Problem:
    return Problem("zero", _zero, _zero, BoundarySpec(_zero))


PROBLEMS = {"poisson-sinh": poisson_sinh, "zero": lambda dim=3: zero_problem()}


# per-block kernels ---------------------------------------------------------
# These operate on arrays whose last D axes are (m + 2)-sized blocks, with an
# arbitrary number of leading batch axes.

def _inner(dim):
    return (Ellipsis,) + (slice(1, -1),) * dim


def _shifted(dim, axis, shift):
    sl = [slice(1, -1)] * dim
    sl[axis] = slice(1 + shift, (-1 + shift) or None)
    return (Ellipsis,) + tuple(sl)


def laplacian(data: np.ndarray, inv_h2: list, dim: int) -> np.ndarray:
    """``-Laplace(u)`` on interior cells; ``inv_h2[a]`` broadcasts against the interior."""
    c = data[_inner(dim)]
    out = None
    for a in range(dim):
        term = (2.0 * c - data[_shifted(dim, a, -1)] - data[_shifted(dim, a, 1)]) * inv_h2[a]
        out = term if out is None else out + term
    return out


def apply_laplacian(u: BlockField, h) -> np.ndarray:
    """5-point (2D) / 7-point (3D) stencil applied to the interior of one block."""
    inv_h2 = [1.0 / float(x) ** 2 for x in np.broadcast_to(h, (u.dim,))]
    return laplacian(u.data, inv_h2, u.dim)


def jacobi_update(data: np.ndarray, f: np.ndarray, inv_h2: list, dim: int, omega: float) -> None:
    diag = sum(2.0 * x for x in inv_h2)
    res = f[_inner(dim)] - laplacian(data, inv_h2, dim)
    data[_inner(dim)] += omega * res / diag


def jacobi_sweep(u: BlockField, f: BlockField, h, omega: float = 0.8) -> BlockField:
    """One damped Jacobi sweep on a single block; ghosts must be current."""
    out = BlockField(u.block, u.n, u.data.copy(), u.mg_level)
    inv_h2 = [1.0 / float(x) ** 2 for x in np.broadcast_to(h, (u.dim,))]
    jacobi_update(out.data, f.data, inv_h2, u.dim, omega)
    return out


def set_boundary_ghosts(u: BlockField, forest: Blockforest, spec: BoundarySpec,
                        homogeneous: bool = False) -> None:
    """Fill the ghosts on the block's domain-boundary faces from Dirichlet data.

    ``homogeneous=True`` uses g = 0 (correction equations on coarse levels).
    """
    m = u.cells
    for d in Direction.all(forest.dim):
        if forest.leaves_across(u.block, d):
            continue
        ghost = ghost_face_range(m, d, u.dim)
        inner = interface_range(m, d, u.dim)
        gvals = 0.0
        if not homogeneous:
            gvals = spec.g(*_boundary_coords(forest, u.block, u.mg_level, ghost.index_grid(), d, spec.rule))
            gvals = np.asarray(gvals, dtype=float).reshape(ghost.shape, order="F")
        gi, ii = ghost.slices(), inner.slices()
        if spec.rule == REFLECT:
            u.data[gi] = 2.0 * gvals - u.data[ii]
        else:
            u.data[gi] = gvals


def _boundary_coords(forest, block, mg_level, ghost_cells, d: Direction, rule):
    """Evaluation points for boundary data: ghost centers, or face centers when reflecting."""
    h = cell_width(forest, block, mg_level)
    lo, _ = forest.block_box(block)
    m = mg_cells(forest.n, mg_level)
    xs = []
    for a in range(forest.dim):
        x = lo[a] + (ghost_cells[:, a] - GHOST + 0.5) * h[a]
        if a == d.axis and rule == REFLECT:
            x = np.full(len(ghost_cells), lo[a] + (0.0 if d.sign < 0 else m * h[a]))
        xs.append(x)
    return xs


def restrict(fine: np.ndarray, dim: int) -> np.ndarray:
    """Average of the 2**D children; ``fine`` is an interior array with leading batch axes."""
    lead = fine.shape[:-dim]
    m = fine.shape[-1]
    shape = lead + sum(((m // 2, 2) for _ in range(dim)), ())
    axes = tuple(len(lead) + 2 * a + 1 for a in range(dim))
    return fine.reshape(shape).mean(axis=axes)


def prolong(coarse: np.ndarray, dim: int) -> np.ndarray:
    """Piecewise-constant injection to the 2**D children."""
    out = coarse
    for a in range(dim):
        out = np.repeat(out, 2, axis=out.ndim - dim + a)
    return out


def restrict_block(residual: BlockField) -> BlockField:
    inner = residual.data[_inner(residual.dim)]
    out = BlockField.zeros(residual.block, residual.n, residual.dim, residual.mg_level + 1)
    out.data[_inner(residual.dim)] = restrict(inner, residual.dim)
    return out


def prolong_block(correction: BlockField, u: BlockField) -> None:
    u.data[_inner(u.dim)] += prolong(correction.data[_inner(u.dim)], u.dim)


# hierarchy ----------------------------------------------------------------

@dataclass
class Level:
    mg_level: int
    cells: int
    u: np.ndarray
    f: np.ndarray
    inv_h2: list
    h: np.ndarray  # (n_blocks, D)
    bc_ghost: np.ndarray
    bc_inner: np.ndarray
    bc_value: np.ndarray
    bc_coef: float  # ghost = bc_value + bc_coef * adjacent interior
    exchange: Callable
    exchanges: int = 0


@dataclass
class MgHierarchy:
    forest: Blockforest
    problem: Problem
    scheme: SchemeOrder
    blocks: list
    levels: list
    routed: bool = False
    owner: dict = field(default_factory=dict)
    n_ranks: int = 1

    @property
    def dim(self) -> int:
        return self.forest.dim

    @property
    def l_max(self) -> int:
        return len(self.levels) - 1

    @classmethod
    def build(cls, forest: Blockforest, problem: Problem | None = None,
              scheme: SchemeOrder = SchemeOrder.QUADRATIC, owner: dict | None = None,
              n_ranks: int = 1, routed: bool = False, workers: int = 1,
              boundary_rule: str | None = None) -> "MgHierarchy":
        """Allocate all levels, sample the right-hand side and prepare exchanges.

        With ``routed=True`` every exchange goes through envelope packing and
        rank routing; otherwise the fused gather/scatter path is used.
        """
        scheme = SchemeOrder.parse(scheme)
        problem = problem or poisson_sinh(forest.dim)
        if boundary_rule is not None:
            problem = replace(problem, boundary=problem.boundary.with_rule(boundary_rule))
        coef = -1.0 if problem.boundary.rule == REFLECT else 0.0
        D = forest.dim
        blocks = list(forest.leaves)
        owner = owner if owner is not None else {b: 0 for b in blocks}
        L = max_mg_level(forest.n, COARSEST_CELLS)
        levels = []
        for lvl in range(L + 1):
            m = mg_cells(forest.n, lvl)
            shape = (len(blocks),) + (m + 2,) * D
            u = np.zeros(shape)
            f = np.zeros(shape)
            h = np.array([cell_width(forest, b, lvl) for b in blocks])
            bshape = (len(blocks),) + (1,) * D
            inv_h2 = [(1.0 / h[:, a] ** 2).reshape(bshape) for a in range(D)]
            plan = build_plan(forest, lvl, scheme)
            if routed:
                exch = _BoundRoutedExchange(RoutedExchange(plan, owner, n_ranks, workers),
                                            blocks, forest.n, lvl)
            else:
                exch = CompiledExchange(plan, blocks)
            g_idx, i_idx, val = _boundary_indices(forest, blocks, lvl, problem.boundary, lvl > 0)
            # corrections vanish on the boundary face itself, whatever the finest-level rule
            lv_coef = coef if lvl == 0 else -1.0
            levels.append(Level(lvl, m, u, f, inv_h2, h, g_idx, i_idx, val, lv_coef, exch))
        hier = cls(forest, problem, scheme, blocks, levels, routed, owner, n_ranks)
        hier._sample_rhs()
        return hier

    def _sample_rhs(self):
        lv = self.levels[0]
        for i, b in enumerate(self.blocks):
            xs = self.centers(b, 0)
            lv.f[i][_inner(self.dim)] = self.problem.rhs(*xs)

    def centers(self, block: BlockId, mg_level: int = 0) -> list[np.ndarray]:
        """Broadcastable interior cell-center coordinates of one block."""
        h = cell_width(self.forest, block, mg_level)
        lo, _ = self.forest.block_box(block)
        m = mg_cells(self.forest.n, mg_level)
        out = []
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = m
            out.append((lo[a] + (np.arange(m) + 0.5) * h[a]).reshape(shape))
        return out

    def field(self, block: BlockId, mg_level: int = 0, which: str = "u") -> BlockField:
        i = self.blocks.index(block)
        lv = self.levels[mg_level]
        return BlockField(block, self.forest.n, getattr(lv, which)[i], mg_level)

    def refresh(self, lvl: int, arr: np.ndarray | None = None) -> None:
        """Boundary ghosts plus refined exchange for the solution on ``lvl``."""
        lv = self.levels[lvl]
        arr = lv.u if arr is None else arr
        flat = arr.reshape(-1)
        if lv.bc_coef:
            flat[lv.bc_ghost] = lv.bc_value + lv.bc_coef * flat[lv.bc_inner]
        else:
            flat[lv.bc_ghost] = lv.bc_value
        lv.exchange(arr)
        lv.exchanges += 1

    def residual(self, lvl: int) -> np.ndarray:
        lv = self.levels[lvl]
        self.refresh(lvl)
        return lv.f[_inner(self.dim)] - laplacian(lv.u, lv.inv_h2, self.dim)

    def residual_norm(self) -> float:
        r = self.residual(0)
        return float(np.sqrt(np.sum(r * r)))

    def smooth(self, lvl: int, sweeps: int, omega: float) -> None:
        lv = self.levels[lvl]
        for _ in range(sweeps):
            self.refresh(lvl)
            jacobi_update(lv.u, lv.f, lv.inv_h2, self.dim, omega)

    def volume(self) -> VolumeReport:
        """Accumulated communication volume of all exchanges so far."""
        total = VolumeReport()
        for lv in self.levels:
            for (k, case), e in lv.exchange.report.entries.items():
                total.add(k, case, e.scalars * lv.exchanges, False, e.messages * lv.exchanges)
        return total


class _BoundRoutedExchange:
    """Adapts :class:`RoutedExchange` to stacked storage via per-block views."""

    def __init__(self, rex: RoutedExchange, blocks, n, mg_level):
        self.rex = rex
        self.blocks = blocks
        self.n = n
        self.mg_level = mg_level
        self.report = rex.expected

    def __call__(self, stack: np.ndarray) -> VolumeReport:
        views = {b: BlockField(b, self.n, stack[i], self.mg_level) for i, b in enumerate(self.blocks)}
        return self.rex(views)


def _boundary_indices(forest: Blockforest, blocks, lvl, spec: BoundarySpec, homogeneous: bool):
    D = forest.dim
    m = mg_cells(forest.n, lvl)
    shape = (m + 2,) * D
    stride = int(np.prod(shape))
    ghosts, inners, vals = [], [], []
    for i, b in enumerate(blocks):
        for d in Direction.all(D):
            if forest.leaves_across(b, d):
                continue
            g = ghost_face_range(m, d, D).index_grid()
            n_ = interface_range(m, d, D).index_grid()
            ghosts.append(np.ravel_multi_index(tuple(g.T), shape) + i * stride)
            inners.append(np.ravel_multi_index(tuple(n_.T), shape) + i * stride)
            if homogeneous:
                vals.append(np.zeros(len(g)))
                continue
            gv = np.asarray(spec.g(*_boundary_coords(forest, b, lvl, g, d, spec.rule)), dtype=float)
            vals.append(2.0 * gv if spec.rule == REFLECT else gv)
    if not ghosts:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0)
    return np.concatenate(ghosts), np.concatenate(inners), np.concatenate(vals)


# cycles -------------------------------------------------------------------

def v_cycle(hier: MgHierarchy, cfg: SolverConfig, lvl: int = 0) -> None:
    lv = hier.levels[lvl]
    D = hier.dim
    if lvl == hier.l_max:
        hier.smooth(lvl, cfg.coarse_iters, cfg.omega)
        return
    hier.smooth(lvl, cfg.nu1, cfg.omega)
    r = hier.residual(lvl)
    nxt = hier.levels[lvl + 1]
    nxt.f[...] = 0.0
    nxt.f[_inner(D)] = restrict(r, D)
    nxt.u[...] = 0.0
    v_cycle(hier, cfg, lvl + 1)
    lv.u[_inner(D)] += prolong(nxt.u[_inner(D)], D)
    hier.smooth(lvl, cfg.nu2, cfg.omega)


@dataclass
class SolveResult:
    cycles: int
    history: list
    converged: bool


def solve(hier: MgHierarchy, cfg: SolverConfig) -> SolveResult:
    """Repeat V-cycles until the residual norm drops below ``cfg.residual_tol`` or ``cfg.max_cycles``."""
    history = [hier.residual_norm()]
    r0 = history[0]
    cycles = 0
    while history[-1] >= cfg.residual_tol and cycles < cfg.max_cycles:
        v_cycle(hier, cfg)
        cycles += 1
        res = hier.residual_norm()
        history.append(res)
        logger.debug("cycle %d: residual %.6e", cycles, res)
        if not math.isfinite(res) or (r0 > 0 and res > cfg.divergence_factor * r0):
            raise SolverDivergence(
                f"residual grew from {r0:.3e} to {res:.3e} after {cycles} cycles")
    return SolveResult(cycles, history, history[-1] < cfg.residual_tol)


def l2_error(hier: MgHierarchy, exact: Callable | None = None) -> tuple[float, float]:
    """(volume-weighted, plain RMS) L2 norms of ``u - exact`` over all finest interior cells."""
    exact = exact or hier.problem.exact
    lv = hier.levels[0]
    D = hier.dim
    wsum = 0.0
    sq = 0.0
    count = 0
    for i, b in enumerate(hier.blocks):
        e = lv.u[i][_inner(D)] - exact(*hier.centers(b, 0))
        vol = float(np.prod(lv.h[i]))
        s = float(np.sum(e * e))
        wsum += vol * s
        sq += s
        count += e.size
    return math.sqrt(wsum), math.sqrt(sq / count)


def grid_convergence(e_h: float, e_h2: float) -> float:
    """Ratio of the error norm after halving h to the one before."""
    if e_h == 0:
        raise ZeroDivisionError("coarse-resolution error is zero")
    return e_h2 / e_h
