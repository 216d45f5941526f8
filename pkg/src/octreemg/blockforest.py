"""Forest of octree leaf blocks over a cuboid domain.

The domain is split into ``root_dims`` equally sized root blocks, each the
root of an octree (quadtree in 2D).  Leaves are addressed by
:class:`BlockId`, i.e. a refinement level plus integer coordinates in the
level-``level`` lattice spanning the whole domain.  Only face adjacency is
considered, both for the 2:1 balance and for communication.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

REFINEMENT_RATIO = 2


class ForestError(ValueError):
    """Raised for malformed forests, configs or queries."""


class BalanceError(ForestError):
    """Two face-adjacent leaves differ by more than one level."""


class Direction(enum.Enum):
    """Cardinal directions as (axis, sign)."""

    W = (0, -1)
    E = (0, 1)
    S = (1, -1)
    N = (1, 1)
    B = (2, -1)
    T = (2, 1)

    @property
    def axis(self) -> int:
        return self.value[0]

    @property
    def sign(self) -> int:
        return self.value[1]

    @property
    def opposite(self) -> "Direction":
        return Direction((self.axis, -self.sign))

    def vector(self, dim: int) -> tuple[int, ...]:
        v = [0] * dim
        v[self.axis] = self.sign
        return tuple(v)

    @classmethod
    def of(cls, axis: int, sign: int) -> "Direction":
        return cls((axis, sign))

    @classmethod
    def all(cls, dim: int) -> list["Direction"]:
        return [d for d in cls if d.axis < dim]


class Case(enum.Enum):
    SAME_LEVEL = "SameLevel"
    C2F = "C2F"
    F2C = "F2C"


@dataclass(frozen=True, order=True)
class BlockId:
    level: int
    coords: tuple[int, ...]

    def parent(self) -> "BlockId":
        if self.level == 0:
            raise ForestError(f"root block {self} has no parent")
        return BlockId(self.level - 1, tuple(c // 2 for c in self.coords))

    def children(self) -> list["BlockId"]:
        # lowest axis fastest
        out = []
        for bits in itertools.product((0, 1), repeat=len(self.coords)):
            off = bits[::-1]
            out.append(BlockId(self.level + 1, tuple(2 * c + o for c, o in zip(self.coords, off))))
        return out

    def __str__(self) -> str:
        return f"L{self.level}{list(self.coords)}"


@dataclass(frozen=True)
class NeighborInfo:
    neighbor: BlockId
    case: Case
    segment_index: int


@dataclass(frozen=True)
class RefineAll:
    pass


@dataclass(frozen=True)
class RefineRegion:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ForestError("region corners differ in dimensionality")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ForestError(f"malformed region {self.lo}..{self.hi}")


RefinementStep = RefineAll | RefineRegion


def n_neigh(l_curr: int, l_neigh: int, r: int = REFINEMENT_RATIO, d: int = 3) -> int:
    """Number of potential neighbor blocks across one cardinal face."""
    if abs(l_curr - l_neigh) > 1:
        raise BalanceError(f"level difference {l_curr} vs {l_neigh} exceeds 2:1 balance")
    return r ** (d - 1) if l_curr < l_neigh else 1


@dataclass(frozen=True)
class Blockforest:
    dim: int
    root_dims: tuple[int, ...]
    domain_lo: tuple[float, ...]
    domain_hi: tuple[float, ...]
    cells_per_block: int
    leaves: tuple[BlockId, ...]
    owner: dict = field(default_factory=dict, compare=False, hash=False)
    r: int = REFINEMENT_RATIO

    def __post_init__(self):
        object.__setattr__(self, "_leafset", frozenset(self.leaves))

    @property
    def n(self) -> int:
        return self.cells_per_block

    def __contains__(self, block: BlockId) -> bool:
        return block in self._leafset

    def __len__(self) -> int:
        return len(self.leaves)

    def lattice_dims(self, level: int) -> tuple[int, ...]:
        return tuple(d * 2**level for d in self.root_dims)

    def block_extent(self, level: int) -> tuple[float, ...]:
        return tuple(
            (hi - lo) / (rd * 2**level)
            for lo, hi, rd in zip(self.domain_lo, self.domain_hi, self.root_dims)
        )

    def block_box(self, block: BlockId) -> tuple[tuple[float, ...], tuple[float, ...]]:
        ext = self.block_extent(block.level)
        lo = tuple(dl + c * e for dl, c, e in zip(self.domain_lo, block.coords, ext))
        return lo, tuple(a + e for a, e in zip(lo, ext))

    def levels(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for b in self.leaves:
            counts[b.level] = counts.get(b.level, 0) + 1
        return dict(sorted(counts.items()))

    def with_owner(self, owner: dict) -> "Blockforest":
        return Blockforest(
            self.dim, self.root_dims, self.domain_lo, self.domain_hi,
            self.cells_per_block, self.leaves, dict(owner), self.r,
        )

    def _in_lattice(self, level: int, coords: Sequence[int]) -> bool:
        return all(0 <= c < d for c, d in zip(coords, self.lattice_dims(level)))

    def leaves_across(self, block: BlockId, direction: Direction) -> list[BlockId]:
        """All leaves touching ``block``'s face in ``direction``, any level."""
        return _leaves_across(self._leafset, self, block, direction)

    def neighbors(self, block: BlockId, direction: Direction) -> list[NeighborInfo]:
        return neighbors(self, block, direction)


def _leaves_across(leafset, forest: Blockforest, block: BlockId, direction: Direction) -> list[BlockId]:
    c = list(block.coords)
    c[direction.axis] += direction.sign
    if not forest._in_lattice(block.level, c):
        return []
    probe = BlockId(block.level, tuple(c))
    # coarser or equal leaf containing the probe
    cur = probe
    while True:
        if cur in leafset:
            return [cur]
        if cur.level == 0:
            break
        cur = cur.parent()
    # otherwise finer leaves along the shared face
    out = []
    stack = [probe]
    while stack:
        b = stack.pop()
        for ch in b.children():
            # keep children touching the face shared with ``block``
            bit = ch.coords[direction.axis] % 2
            if bit != (0 if direction.sign > 0 else 1):
                continue
            if ch in leafset:
                out.append(ch)
            else:
                stack.append(ch)
    return sorted(out, key=lambda b: _face_order_key(b, direction))


def _face_order_key(b: BlockId, direction: Direction):
    # lowest interface axis fastest
    return (b.level,) + tuple(
        b.coords[a] for a in reversed(range(len(b.coords))) if a != direction.axis
    )


def segment_index(fine: BlockId, direction: Direction) -> int:
    """Segment of the coarse neighbor's face (across ``direction``) that ``fine`` occupies."""
    idx, stride = 0, 1
    for a in range(len(fine.coords)):
        if a == direction.axis:
            continue
        idx += (fine.coords[a] % 2) * stride
        stride *= REFINEMENT_RATIO
    return idx


def neighbors(forest: Blockforest, block: BlockId, direction: Direction) -> list[NeighborInfo]:
    if block not in forest:
        raise ForestError(f"unknown block {block}")
    if direction.axis >= forest.dim:
        raise ForestError(f"direction {direction.name} invalid in {forest.dim}D")
    found = forest.leaves_across(block, direction)
    if not found:
        return []
    lvl = found[0].level
    if lvl == block.level:
        return [NeighborInfo(found[0], Case.SAME_LEVEL, 0)]
    if lvl == block.level - 1:
        return [NeighborInfo(found[0], Case.F2C, 0)]
    if any(b.level != block.level + 1 for b in found):
        raise BalanceError(f"{block} violates 2:1 balance towards {direction.name}")
    expected = n_neigh(block.level, block.level + 1, forest.r, forest.dim)
    if len(found) != expected:
        raise BalanceError(f"{block}: found {len(found)} fine neighbors, expected {expected}")
    infos = [NeighborInfo(b, Case.C2F, segment_index(b, direction.opposite)) for b in found]
    return sorted(infos, key=lambda i: i.segment_index)


def check_balance(forest: Blockforest) -> list[tuple[BlockId, BlockId]]:
    """Face-adjacent leaf pairs whose levels differ by more than one."""
    bad = set()
    for b in forest.leaves:
        for d in Direction.all(forest.dim):
            for nb in forest.leaves_across(b, d):
                if abs(nb.level - b.level) > 1:
                    bad.add(tuple(sorted((b, nb))))
    return sorted(bad)


def _center_box(forest: Blockforest, b: BlockId):
    lo, hi = forest.block_box(b)
    half = tuple((h - l) / (2 * forest.n) for l, h in zip(lo, hi))
    return (
        tuple(l + s for l, s in zip(lo, half)),
        tuple(h - s for h, s in zip(hi, half)),
    )


def _selects(forest: Blockforest, b: BlockId, region: RefineRegion) -> bool:
    clo, chi = _center_box(forest, b)
    return all(a <= rh and rl <= c for a, c, rl, rh in zip(clo, chi, region.lo, region.hi))


def _ripple(forest: Blockforest, leaves: set[BlockId]) -> set[BlockId]:
    while True:
        tmp = Blockforest(forest.dim, forest.root_dims, forest.domain_lo, forest.domain_hi,
                          forest.n, tuple(leaves))
        split = set()
        for b in leaves:
            for d in Direction.all(forest.dim):
                if any(nb.level - b.level > 1 for nb in tmp.leaves_across(b, d)):
                    split.add(b)
                    break
        if not split:
            return leaves
        for b in split:
            leaves.remove(b)
            leaves.update(b.children())


def build_forest(
    dim: int,
    root_dims: Sequence[int],
    domain_bounds: tuple[Sequence[float], Sequence[float]],
    n: int,
    refinement_spec: Iterable[RefinementStep] = (),
) -> Blockforest:
    """Build a 2:1-balanced forest by applying refinement steps in order.

    Regions select every leaf whose (closed) bounding box of cell centers
    intersects the region.  After each step, leaves adjacent to a leaf two
    or more levels finer are split until the forest is balanced again.
    """
    if dim not in (2, 3):
        raise ForestError(f"dim must be 2 or 3, got {dim}")
    if n < 3:
        raise ForestError(f"cells per block must be >= 3, got {n}")
    root_dims = tuple(int(x) for x in root_dims)
    lo, hi = (tuple(float(x) for x in v) for v in domain_bounds)
    if len(root_dims) != dim or len(lo) != dim or len(hi) != dim:
        raise ForestError("root_dims/domain_bounds do not match dim")
    if any(r < 1 for r in root_dims):
        raise ForestError(f"root_dims must be positive, got {root_dims}")
    if any(b <= a for a, b in zip(lo, hi)):
        raise ForestError(f"empty domain {lo}..{hi}")

    leaves = {BlockId(0, c[::-1]) for c in itertools.product(*(range(r) for r in reversed(root_dims)))}
    proto = Blockforest(dim, root_dims, lo, hi, n, ())
    for step in refinement_spec:
        if isinstance(step, RefineAll):
            chosen = set(leaves)
        elif isinstance(step, RefineRegion):
            if len(step.lo) != dim:
                raise ForestError(f"region {step} does not match dim {dim}")
            chosen = {b for b in leaves if _selects(proto, b, step)}
        else:
            raise ForestError(f"unknown refinement step {step!r}")
        for b in chosen:
            leaves.remove(b)
            leaves.update(b.children())
        leaves = _ripple(proto, leaves)
    return Blockforest(dim, root_dims, lo, hi, n, tuple(sorted(leaves, key=morton_key)))


def morton_key(b: BlockId, max_level: int = 24) -> int:
    """Z-order key of the block's lower corner, normalized to ``max_level``."""
    coords = [c << (max_level - b.level) for c in b.coords]
    key = 0
    nbits = max_level + 16
    for bit in range(nbits):
        for a, c in enumerate(coords):
            key |= ((c >> bit) & 1) << (bit * len(coords) + a)
    return key


def assign_ranks(forest: Blockforest, n_ranks: int) -> dict[BlockId, int]:
    """Contiguous chunks of the Morton-ordered leaves; sizes differ by at most one."""
    if n_ranks < 1:
        raise ForestError(f"n_ranks must be >= 1, got {n_ranks}")
    order = sorted(forest.leaves, key=morton_key)
    base, extra = divmod(len(order), n_ranks)
    owner = {}
    pos = 0
    for rank in range(n_ranks):
        cnt = base + (1 if rank < extra else 0)
        for b in order[pos:pos + cnt]:
            owner[b] = rank
        pos += cnt
    return owner


def forest_from_leaves(dim, root_dims, domain_bounds, n, leaves) -> Blockforest:
    """Wrap an explicit leaf set without balancing (for tests and diagnostics)."""
    lo, hi = (tuple(float(x) for x in v) for v in domain_bounds)
    return Blockforest(dim, tuple(root_dims), lo, hi, n, tuple(sorted(leaves, key=morton_key)))
