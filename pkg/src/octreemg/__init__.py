"""Refinement-aware ghost exchange and geometric multigrid on octree blockforests."""

from .blockforest import (
    BlockId, Blockforest, Case, Direction, NeighborInfo, RefineAll, RefineRegion, assign_ranks,
    build_forest, check_balance, n_neigh, neighbors,
)
from .interp import SchemeOrder
from .mg import MgHierarchy, SolverConfig, l2_error, solve

__all__ = [
    "BlockId", "Blockforest", "Case", "Direction", "NeighborInfo", "RefineAll", "RefineRegion",
    "assign_ranks", "build_forest", "check_balance", "n_neigh", "neighbors", "SchemeOrder",
    "MgHierarchy", "SolverConfig", "l2_error", "solve",
]
