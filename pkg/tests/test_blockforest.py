from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octreemg import presets
from octreemg.blockforest import (
    BalanceError, BlockId, Case, Direction, ForestError, RefineAll, RefineRegion, assign_ranks,
    build_forest, check_balance, forest_from_leaves, n_neigh, neighbors,
)
from conftest import corpus

A0, A1, A2, A3 = (BlockId(1, c) for c in [(0, 0), (1, 0), (0, 1), (1, 1)])
B = BlockId(0, (1, 0))


@pytest.mark.parametrize("args, expected", [
    ((2, 3, 2, 3), 4),
    ((2, 3, 2, 2), 2),
    ((3, 3, 2, 3), 1),
    ((3, 2, 2, 3), 1),
])
def test_n_neigh(args, expected):
    assert n_neigh(*args) == expected


def test_n_neigh_rejects_unbalanced():
    with pytest.raises(BalanceError):
        n_neigh(0, 2, 2, 3)


def test_fig1_counts():
    f = presets.fig1(4)
    assert f.levels() == {1: 12, 2: 12, 3: 16}
    assert check_balance(f) == []


def test_fig6_counts():
    f = presets.fig6(4)
    assert f.levels() == {2: 56, 3: 64}
    assert check_balance(f) == []


def test_no_refinement_single_leaf():
    f = build_forest(3, (1, 1, 1), ((0, 0, 0), (1, 1, 1)), 4, [])
    assert f.leaves == (BlockId(0, (0, 0, 0)),)


@pytest.mark.parametrize("kwargs", [
    dict(n=2),
    dict(domain=((0, 0), (0, 1))),
    dict(spec=[RefineRegion((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))]),
])
def test_build_forest_errors(kwargs):
    with pytest.raises(ForestError):
        build_forest(2, (1, 1), kwargs.get("domain", ((0, 0), (1, 1))), kwargs.get("n", 4),
                     kwargs.get("spec", []))


def test_malformed_region():
    with pytest.raises(ForestError):
        RefineRegion((0.5, 0.5), (0.25, 1.0))


def test_fig2_neighbors(fig2):
    got =[(i.neighbor, i.case, i.segment_index) for i in neighbors(fig2, B, Direction.W)]
    assert got == [(A1, Case.C2F, 0), (A3, Case.C2F, 1)]
    got = [(i.neighbor, i.case, i.segment_index) for i in neighbors(fig2, A1, Direction.E)]
    assert got == [(B, Case.F2C, 0)]
    assert neighbors(fig2, A0, Direction.W) == []
    assert [(i.neighbor, i.case) for i in neighbors(fig2, A0, Direction.E)] == [(A1, Case.SAME_LEVEL)]


def test_neighbors_unknown_block(fig2):
    with pytest.raises(ForestError):
        neighbors(fig2, BlockId(0, (0, 0)), Direction.E)


def test_assign_ranks_examples(fig2, fig6):
    assert set(assign_ranks(fig6, 1).values()) == {0}
    counts = _counts(assign_ranks(fig6, 8))
    assert sorted(counts.values()) == [15] * 8
    assert sorted(_counts(assign_ranks(fig2, 2)).values()) == [2, 3]
    assert assign_ranks(fig6, 5) == assign_ranks(fig6, 5)
    with pytest.raises(ForestError):
        assign_ranks(fig2, 0)


def _counts(owner):
    out = {}
    for r in owner.values():
        out[r] = out.get(r, 0) + 1
    return out


def test_check_balance_flags_hand_built_pair():
    # level-0 leaf next to level-2 leaves of the neighbouring root
    right = BlockId(0, (1, 0))
    fine = [c for a in right.children() for c in a.children()]
    f = forest_from_leaves(2, (2, 1), ((0, 0), (2, 1)), 4, [BlockId(0, (0, 0))] + fine)
    bad = check_balance(f)
    assert bad and all(BlockId(0, (0, 0)) in pair for pair in bad)
    assert check_balance(presets.uniform(2, (1, 1))) == []


def _volume(forest):
    total = Fraction(0)
    for b in forest.leaves:
        v = Fraction(1)
        for r in forest.root_dims:
            v /= r * 2**b.level
        total += v
    return total


@pytest.mark.parametrize("name", list(corpus()))
def test_invariants_on_corpus(name):
    f = corpus()[name]
    assert _volume(f) == 1
    assert check_balance(f) == []
    for b in f.leaves:
        for d in Direction.all(f.dim):
            for info in neighbors(f, b, d):
                back = neighbors(f, info.neighbor, d.opposite)
                if info.case is Case.C2F:
                    assert [(x.neighbor, x.case, x.segment_index) for x in back] == [(b, Case.F2C, 0)]
                    lo_b, hi_b = f.block_box(b)
                    lo_n, hi_n = f.block_box(info.neighbor)
                    # fine face lies inside the coarse face
                    for a in range(f.dim):
                        if a != d.axis:
                            assert lo_b[a] <= lo_n[a] and hi_n[a] <= hi_b[a]
                elif info.case is Case.SAME_LEVEL:
                    assert [x.neighbor for x in back] == [b]


region = st.tuples(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
).map(lambda t: RefineRegion((min(t[0], t[1]), min(t[2], t[3])), (max(t[0], t[1]), max(t[2], t[3]))))
steps = st.lists(st.one_of(st.just(RefineAll()), region, region, region), max_size=4)


@settings(max_examples=100)
@given(steps)
def test_fuzzed_specs_are_balanced(spec):
    if sum(isinstance(s, RefineAll) for s in spec) > 2:
        spec = [s for s in spec if not isinstance(s, RefineAll)]
    f = build_forest(2, (2, 2), ((0, 0), (1, 1)), 4, spec)
    assert check_balance(f) == []
    assert _volume(f) == 1
