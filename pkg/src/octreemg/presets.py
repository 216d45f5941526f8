"""Named forests used by the benchmark and the test corpus."""

from __future__ import annotations

from .blockforest import Blockforest, RefineAll, RefineRegion, build_forest


def fig1(n: int = 4) -> Blockforest:
    """2x2 roots on the unit square, refined once globally and twice towards the lower-left corner."""
    return build_forest(2, (2, 2), ((0, 0), (1, 1)), n, [
        RefineAll(),
        RefineRegion((0.0, 0.0), (0.5, 0.5)),
        RefineRegion((0.0, 0.0), (0.25, 0.25)),
    ])


def fig2(n: int = 4) -> Blockforest:
    """Two roots A | B on [0,2]x[0,1]; A is split into A0..A3."""
    return build_forest(2, (2, 1), ((0, 0), (2, 1)), n, [RefineRegion((0.0, 0.0), (1.0, 1.0))])


def fig6(n: int = 16) -> Blockforest:
    """Unit cube at level 2 with the central [0.25, 0.75]^3 refined to level 3 (56 + 64 blocks)."""
    return build_forest(3, (1, 1, 1), ((0, 0, 0), (1, 1, 1)), n, [
        RefineAll(),
        RefineAll(),
        RefineRegion((0.25, 0.25, 0.25), (0.75, 0.75, 0.75)),
    ])


def uniform(dim: int, root_dims, n: int = 4) -> Blockforest:
    lo = (0.0,) * dim
    hi = tuple(float(r) for r in root_dims)
    return build_forest(dim, root_dims, (lo, hi), n, [])


PRESETS = {
    "poisson-fig6": fig6,
    "fig6": fig6,
    "fig2": fig2,
    "fig1": fig1,
}
