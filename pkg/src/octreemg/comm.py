"""Bulk-synchronous ghost exchange over the blockforest.

An :class:`ExchangePlan` lists, per multigrid level, one send and one
receive descriptor per message.  Every message is identified on the
receiving side by ``(dst, direction, case, segment_index)``, which is what
an MPI implementation would fold into the message tag.  Coarse blocks
receive one F2C message per face segment; everything else receives a
single message per face.

Two executors share the same stencils and hence produce identical ghost
values:

* :class:`RoutedExchange` packs envelopes, routes them across simulated
  ranks (serializing those that cross ranks) and unpacks them.
* :class:`CompiledExchange` fuses all stencils of a level into a handful of
  gather/scatter arrays over the stacked block storage.  The solver uses it
  for its many coarse-grid sweeps.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blockforest import (
    BalanceError, BlockId, Blockforest, Case, Direction, ForestError, check_balance, segment_index,
)
from .fields import (
    BlockField, CellRange, ghost_face_range, ghost_segment_range, interface_range, mg_cells,
    split_interface,
)
from .interp import (
    OrthogonalFrame, SchemeOrder, Stencil, c2f_stencil, c2f_unpack_cells, copy_stencil, f2c_stencil,
)

logger = logging.getLogger(__name__)

SCALAR_BYTES = 8
CASES = (Case.SAME_LEVEL, Case.C2F, Case.F2C)


class ProtocolError(RuntimeError):
    """Unmatched, duplicated or malformed message."""


@dataclass(frozen=True)
class Envelope:
    src: BlockId
    dst: BlockId
    direction: Direction  # receiver-relative
    case: Case
    segment_index: int
    payload: np.ndarray

    @property
    def tag(self) -> tuple:
        return (self.dst, self.direction, self.case, self.segment_index)


@dataclass(frozen=True)
class SendDescriptor:
    src: BlockId
    dst: BlockId
    direction: Direction  # sender-relative
    case: Case
    segment: int  # segment of the coarse face this message covers (0 for same-level)
    source: CellRange
    stencil: Stencil

    @property
    def tag(self) -> tuple:
        seg = self.segment if self.case is Case.F2C else 0
        return (self.dst, self.direction.opposite, self.case, seg)


@dataclass(frozen=True)
class RecvDescriptor:
    dst: BlockId
    src: BlockId
    direction: Direction  # receiver-relative
    case: Case
    segment: int
    ghost: CellRange
    cells: np.ndarray  # (M, D) ghost cells in payload order

    @property
    def tag(self) -> tuple:
        return (self.dst, self.direction, self.case, self.segment)


@dataclass
class ExchangePlan:
    forest: Blockforest
    mg_level: int
    scheme: SchemeOrder
    sends: dict = field(default_factory=lambda: defaultdict(list))  # (block, dir) -> [SendDescriptor]
    recvs: dict = field(default_factory=lambda: defaultdict(list))  # (block, dir) -> [RecvDescriptor]

    @property
    def cells(self) -> int:
        return mg_cells(self.forest.n, self.mg_level)

    def all_sends(self) -> list[SendDescriptor]:
        return [s for k in sorted(self.sends, key=_key) for s in self.sends[k]]

    def all_recvs(self) -> list[RecvDescriptor]:
        return [r for k in sorted(self.recvs, key=_key) for r in self.recvs[k]]

    def recv_by_tag(self) -> dict:
        return {r.tag: r for r in self.all_recvs()}


def _key(k):
    b, d = k
    return (b.level, b.coords, d.axis, d.sign)


def build_plan(forest: Blockforest, mg_level: int = 0,
               scheme: SchemeOrder = SchemeOrder.QUADRATIC) -> ExchangePlan:
    bad = check_balance(forest)
    if bad:
        raise BalanceError(f"forest is not 2:1 balanced: {bad[:3]}")
    m = mg_cells(forest.n, mg_level)
    D = forest.dim
    plan = ExchangePlan(forest, mg_level, scheme)
    for b in forest.leaves:
        for d in Direction.all(D):
            infos = forest.neighbors(b, d)
            if not infos:
                continue
            face = ghost_face_range(m, d, D)
            case = infos[0].case
            if case is Case.SAME_LEVEL:
                nb = infos[0].neighbor
                src = interface_range(m, d, D)
                plan.sends[b, d].append(SendDescriptor(b, nb, d, case, 0, src, copy_stencil(m, D, d)))
                plan.recvs[b, d].append(RecvDescriptor(b, nb, d, case, 0, face, face.index_grid()))
            elif case is Case.C2F:
                frame = OrthogonalFrame.of(d, D)
                segs = split_interface(interface_range(m, d, D), d)
                for info in infos:
                    s = info.segment_index
                    st = c2f_stencil(m, D, segs[s], frame, scheme)
                    plan.sends[b, d].append(SendDescriptor(b, info.neighbor, d, Case.C2F, s, segs[s], st))
                    g = ghost_segment_range(m, d, Case.F2C, s, D)
                    plan.recvs[b, d].append(
                        RecvDescriptor(b, info.neighbor, d, Case.F2C, s, g, g.index_grid()))
            else:
                nb = infos[0].neighbor
                s = segment_index(b, d)
                st = f2c_stencil(m, D, d)
                src = interface_range(m, d, D)
                plan.sends[b, d].append(SendDescriptor(b, nb, d, Case.F2C, s, src, st))
                cells = c2f_unpack_cells(m, D, face, OrthogonalFrame.of(d.opposite, D))
                plan.recvs[b, d].append(RecvDescriptor(b, nb, d, Case.C2F, 0, face, cells))
    _check_matching(plan)
    return plan


def _check_matching(plan: ExchangePlan) -> None:
    recvs = {}
    for r in plan.all_recvs():
        if r.tag in recvs:
            raise ProtocolError(f"duplicate receive tag {r.tag}")
        recvs[r.tag] = r
    seen = set()
    for s in plan.all_sends():
        r = recvs.get(s.tag)
        if r is None:
            raise ProtocolError(f"send {s.src}->{s.dst} has no matching receive")
        if r.src != s.src or r.cells.shape[0] != s.stencil.size:
            raise ProtocolError(f"send {s.src}->{s.dst} mismatches receive {r.tag}")
        if s.tag in seen:
            raise ProtocolError(f"duplicate send tag {s.tag}")
        seen.add(s.tag)
    if len(seen) != len(recvs):
        raise ProtocolError("receives without matching sends")


# volume accounting --------------------------------------------------------

@dataclass
class CaseVolume:
    messages: int = 0
    scalars: int = 0
    remote_messages: int = 0
    remote_scalars: int = 0

    @property
    def bytes(self) -> int:
        return self.scalars * SCALAR_BYTES

    @property
    def remote_bytes(self) -> int:
        return self.remote_scalars * SCALAR_BYTES


@dataclass
class VolumeReport:
    # (mg_level, case) -> CaseVolume
    entries: dict = field(default_factory=lambda: defaultdict(CaseVolume))

    def add(self, mg_level: int, case: Case, scalars: int, remote: bool = False, messages: int = 1):
        e = self.entries[mg_level, case]
        e.messages += messages
        e.scalars += scalars
        if remote:
            e.remote_messages += messages
            e.remote_scalars += scalars

    def merge(self, other: "VolumeReport") -> "VolumeReport":
        for (lvl, case), e in other.entries.items():
            mine = self.entries[lvl, case]
            mine.messages += e.messages
            mine.scalars += e.scalars
            mine.remote_messages += e.remote_messages
            mine.remote_scalars += e.remote_scalars
        return self

    def totals(self, case: Case | None = None) -> CaseVolume:
        out = CaseVolume()
        for (_, c), e in self.entries.items():
            if case is None or c is case:
                out.messages += e.messages
                out.scalars += e.scalars
                out.remote_messages += e.remote_messages
                out.remote_scalars += e.remote_scalars
        return out

    def counts(self) -> dict:
        """Message and scalar counts only (remote split dropped), for comparisons."""
        return {k: (e.messages, e.scalars) for k, e in self.entries.items() if e.messages}

    def rows(self) -> list[dict]:
        out = []
        for (lvl, case) in sorted(self.entries, key=lambda k: (k[0], CASES.index(k[1]))):
            e = self.entries[lvl, case]
            if not e.messages:
                continue
            out.append({
                "mg_level": lvl, "case": case.value, "messages": e.messages,
                "scalars": e.scalars, "bytes": e.bytes,
                "remote_messages": e.remote_messages, "remote_bytes": e.remote_bytes,
            })
        return out

    def to_csv(self) -> str:
        cols = ["mg_level", "case", "messages", "scalars", "bytes", "remote_messages", "remote_bytes"]
        lines = [",".join(cols)]
        for row in self.rows():
            lines.append(",".join(str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def message_scalars(case: Case, dim: int, m: int, r: int = 2) -> int:
    """Payload length of one message with interpolate-before-send."""
    if case is Case.F2C:
        return (m // r) ** (dim - 1)
    # same-level copies a full face; C2F sends r**(D-1) fine values per coarse segment cell
    return m ** (dim - 1)


def volume_report(plan: ExchangePlan, scheme: SchemeOrder | None = None, n: int | None = None,
                  dim: int | None = None, owner: dict | None = None) -> VolumeReport:
    """Closed-form volume of one exchange described by ``plan``."""
    n = plan.forest.n if n is None else n
    dim = plan.forest.dim if dim is None else dim
    m = mg_cells(n, plan.mg_level)
    rep = VolumeReport()
    for s in plan.all_sends():
        remote = owner is not None and owner[s.src] != owner[s.dst]
        rep.add(plan.mg_level, s.case, message_scalars(s.case, dim, m), remote)
    return rep


# serialization and routing ------------------------------------------------

def serialize(payload: np.ndarray) -> bytes:
    data = np.ascontiguousarray(payload, dtype=np.float64)
    return np.int64(data.size).tobytes() + data.tobytes()


def deserialize(buf: bytes) -> np.ndarray:
    count = int(np.frombuffer(buf[:8], dtype=np.int64)[0])
    data = np.frombuffer(buf[8:], dtype=np.float64)
    if data.size != count:
        raise ProtocolError(f"length prefix {count} does not match {data.size} scalars")
    return data.copy()


@dataclass
class RouteStats:
    local: int = 0
    remote: int = 0
    remote_bytes: int = 0


def _validate_owner(owner: dict, n_ranks: int, blocks) -> None:
    for b in blocks:
        if b not in owner:
            raise ForestError(f"block {b} has no owner")
        if not 0 <= owner[b] < n_ranks:
            raise ForestError(f"block {b} owned by rank {owner[b]} outside [0, {n_ranks})")


def route(envelopes: list[Envelope], owner: dict, n_ranks: int) -> tuple[list[Envelope], RouteStats]:
    """Deliver every envelope to the owner of its destination exactly once.

    Envelopes whose endpoints live on different ranks travel as bytes
    through per-rank mailboxes; same-rank envelopes are handed over as is.
    """
    _validate_owner(owner, n_ranks, {e.src for e in envelopes} | {e.dst for e in envelopes})
    stats = RouteStats()
    mailboxes: dict[int, list[tuple[Envelope, bytes]]] = defaultdict(list)
    delivered = []
    tags = set()
    for env in envelopes:
        if env.tag in tags:
            raise ProtocolError(f"duplicate tag {env.tag}")
        tags.add(env.tag)
        if owner[env.src] == owner[env.dst]:
            stats.local += 1
            delivered.append(env)
        else:
            buf = serialize(env.payload)
            stats.remote += 1
            stats.remote_bytes += len(buf)
            mailboxes[owner[env.dst]].append((env, buf))
    for rank in sorted(mailboxes):
        for env, buf in mailboxes[rank]:
            delivered.append(Envelope(env.src, env.dst, env.direction, env.case, env.segment_index,
                                      deserialize(buf)))
    return delivered, stats


# executors ---------------------------------------------------------------

def pack(desc: SendDescriptor, fld: BlockField) -> Envelope:
    payload = desc.stencil.apply(fld.data)
    seg = desc.segment if desc.case is Case.F2C else 0
    return Envelope(desc.src, desc.dst, desc.direction.opposite, desc.case, seg, payload)


def unpack(env: Envelope, desc: RecvDescriptor, fld: BlockField) -> None:
    if env.payload.size != desc.cells.shape[0]:
        raise ProtocolError(f"payload of {env.payload.size} for {desc.cells.shape[0]} ghost cells")
    fld.data[tuple(desc.cells.T)] = env.payload


class RoutedExchange:
    """Pack, route and unpack envelopes for one multigrid level."""

    def __init__(self, plan: ExchangePlan, owner: dict | None = None, n_ranks: int = 1,
                 workers: int = 1):
        self.plan = plan
        self.n_ranks = n_ranks
        self.owner = owner if owner is not None else {b: 0 for b in plan.forest.leaves}
        _validate_owner(self.owner, n_ranks, plan.forest.leaves)
        self.workers = workers
        self._sends = plan.all_sends()
        self._recvs = plan.recv_by_tag()
        self.expected = volume_report(plan, owner=self.owner)
        self.last_stats = RouteStats()

    def __call__(self, fields: dict) -> VolumeReport:
        missing = [b for b in self.plan.forest.leaves if b not in fields]
        if missing:
            raise ForestError(f"missing fields for {missing[:3]}")
        for b in self.plan.forest.leaves:
            if fields[b].mg_level != self.plan.mg_level:
                raise ForestError(f"field of {b} is on mg level {fields[b].mg_level}, "
                                  f"plan is for {self.plan.mg_level}")
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                envs = list(pool.map(lambda s: pack(s, fields[s.src]), self._sends))
        else:
            envs = [pack(s, fields[s.src]) for s in self._sends]
        delivered, self.last_stats = route(envs, self.owner, self.n_ranks)
        report = VolumeReport()
        seen = set()
        for env in delivered:
            desc = self._recvs.get(env.tag)
            if desc is None or desc.src != env.src:
                raise ProtocolError(f"no receive posted for {env.tag}")
            seen.add(env.tag)
            unpack(env, desc, fields[env.dst])
            report.add(self.plan.mg_level, env.case, env.payload.size,
                       self.owner[env.src] != self.owner[env.dst])
        if len(seen) != len(self._recvs):
            raise ProtocolError("some posted receives got no message")
        if report.counts() != self.expected.counts():
            raise AssertionError("routed volume differs from closed-form accounting")
        return report


class CompiledExchange:
    """All stencils of one level fused into gather/scatter arrays on stacked storage.

    ``stack`` has shape ``(n_blocks, m + 2, ..., m + 2)`` with blocks in the
    order of ``blocks``.
    """

    def __init__(self, plan: ExchangePlan, blocks: list[BlockId]):
        self.plan = plan
        m = plan.cells
        D = plan.forest.dim
        shape = (m + 2,) * D
        stride = int(np.prod(shape))
        index = {b: i for i, b in enumerate(blocks)}
        recvs = plan.recv_by_tag()
        groups = defaultdict(lambda: ([], [], []))
        for s in plan.all_sends():
            r = recvs[s.tag]
            src = s.stencil.flat(shape) + index[s.src] * stride
            dst = np.ravel_multi_index(tuple(r.cells.T), shape) + index[r.dst] * stride
            g = groups[src.shape[1]]
            g[0].append(src)
            g[1].append(s.stencil.weights)
            g[2].append(dst)
        self.groups = [
            (np.concatenate(a), np.ascontiguousarray(np.concatenate(w)), np.concatenate(d))
            for k, (a, w, d) in sorted(groups.items())
        ]
        self.report = volume_report(plan)

    def __call__(self, stack: np.ndarray) -> None:
        flat = stack.reshape(-1)
        # sources are interior cells only, so group order does not matter
        for src, w, dst in self.groups:
            flat[dst] = (flat[src] * w).sum(axis=1)


def exchange(forest: Blockforest, fields: dict, mg_level: int = 0,
             scheme: SchemeOrder = SchemeOrder.QUADRATIC, ranks: dict | None = None,
             n_ranks: int | None = None, workers: int = 1) -> tuple[dict, VolumeReport]:
    """One-shot routed exchange; updates ``fields`` in place and returns them."""
    plan = build_plan(forest, mg_level, scheme)
    if ranks is None:
        ranks = forest.owner or {b: 0 for b in forest.leaves}
    if n_ranks is None:
        n_ranks = max(ranks.values()) + 1
    report = RoutedExchange(plan, ranks, n_ranks, workers)(fields)
    return fields, report
