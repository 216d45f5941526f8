import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from octreemg.blockforest import BlockId, Direction, ForestError
from octreemg.fields import BlockField, CellRange, interface_range, interior_range, split_interface
from octreemg.interp import (
    OrthogonalFrame, SchemeOrder, c2f_compute_fine_values, c2f_first_dim_base, c2f_stencil,
    c2f_unpack_cells, c2f_unpack_offsets, f2c_pack, f2c_reduce, f2c_stencil, interior_reads,
    lagrange_weights, remap_orthogonal,
)

Q, L, C = SchemeOrder.QUADRATIC, SchemeOrder.LINEAR, SchemeOrder.CONSTANT
ORDER_DEGREE = {C: 0, L: 1, Q: 2}


def centers(m, dim):
    """Cell-center coordinates (h = 1, origin at the block corner) on the ghost-inclusive grid."""
    ax = np.arange(m + 2) - 0.5
    return np.meshgrid(*([ax] * dim), indexing="ij")


def block(data):
    m = data.shape[0] - 2
    return BlockField(BlockId(0, (0,) * data.ndim), m, data)


def monomials(dim, degree):
    return [p for p in itertools.product(range(degree + 1), repeat=dim) if sum(p) <= degree]


def poly(coeffs, dim, degree):
    def f(*xs):
        out = 0.0
        for c, p in zip(coeffs, monomials(dim, degree)):
            term = c
            for x, k in zip(xs, p):
                term = term * x**k
            out = out + term
        return out
    return f


# Lagrange weights --------------------------------------------------------

@pytest.mark.parametrize("pos, x, expected", [
    ((-1, 0, 1), -0.25, (0.15625, 0.9375, -0.09375)),
    ((-1, 0, 1), 0.0, (0.0, 1.0, 0.0)),
    ((0, 1, 2), -0.25, (1.40625, -0.5625, 0.15625)),
])
def test_lagrange_examples(pos, x, expected):
    np.testing.assert_allclose(lagrange_weights(pos, x), expected, rtol=0, atol=1e-15)


def test_lagrange_duplicates():
    with pytest.raises(ValueError):
        lagrange_weights([0, 0, 1], 0.5)


def test_partition_of_unity_and_linear_reproduction():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        k = rng.integers(1, 4)
        pos = np.sort(rng.uniform(-3, 3, k))
        if k > 1 and np.min(np.diff(pos)) < 1e-2:
            continue
        x = rng.uniform(-3, 3)
        w = lagrange_weights(pos, x)
        assert abs(sum(w) - 1) <= 1e-12
        if k >= 2:
            assert abs(np.dot(w, pos) - x) <= 1e-11


# F2C --------------------------------------------------------------------

def test_f2c_reduce_examples():
    assert f2c_reduce([1, 1, 1, 1]) == 1
    assert f2c_reduce([2.5] * 8) == 2.5
    assert f2c_reduce([0, 1, 2, 3]) == 1.5
    with pytest.raises(ValueError):
        f2c_reduce([1, 2, 3])


def test_f2c_pack_2d_west_geometry():
    st_ = f2c_stencil(4, 2, Direction.W)
    assert st_.size == 2
    cells = {tuple(c) for c in st_.cells.reshape(-1, 2)}
    assert cells == {(i, j) for i in (1, 2) for j in range(1, 5)}


def test_f2c_pack_constant_and_linear():
    m = 4
    for dim in (2, 3):
        xs = centers(m, dim)
        fld = block(np.full((m + 2,) * dim, 3.25))
        for d in Direction.all(dim):
            np.testing.assert_array_equal(f2c_pack(fld, d), 3.25)
        fld = block(0.3 + sum((a + 1) * x for a, x in enumerate(xs)))
        for d in Direction.all(dim):
            # coarse ghost cell centers (coarse h = 2) in payload order
            st_ = f2c_stencil(m, dim, d)
            coarse_c = st_.cells.mean(axis=1) - 0.5
            exact = 0.3 + sum((a + 1) * coarse_c[:, a] for a in range(dim))
            np.testing.assert_allclose(f2c_pack(fld, d), exact, rtol=1e-14)


def test_f2c_needs_even_cells():
    with pytest.raises(ForestError):
        f2c_stencil(5, 2, Direction.W)


# remapping --------------------------------------------------------------

def test_remap_orthogonal():
    inner = interior_range(4, 2)
    assert remap_orthogonal((1, 2), Direction.S, inner) == (0, -1)
    assert remap_orthogonal((1, 1), Direction.S, inner) == (0, 2)
    assert remap_orthogonal((1, 4), Direction.N, inner) == (0, -2)
    inner3 = interior_range(3, 2)
    assert remap_orthogonal((1, 2), Direction.S, inner3) == (0, -1)
    assert remap_orthogonal((1, 2), Direction.N, inner3) == (0, 1)


def test_frame():
    f = OrthogonalFrame.of(Direction.W, 3)
    assert (f.o2d_plus, f.o2d_minus, f.o3d_plus, f.o3d_minus) == (
        Direction.N, Direction.S, Direction.T, Direction.B)
    assert f.orthogonal() == {Direction.S, Direction.N, Direction.B, Direction.T}
    f = OrthogonalFrame.of(Direction.S, 2)
    assert (f.o2d_plus, f.o2d_minus) == (Direction.E, Direction.W)


# C2F ---------------------------------------------------------------------

def test_first_dim_base():
    m = 4
    xs = centers(m, 2)
    for order in SchemeOrder:
        assert c2f_first_dim_base(block(np.full((6, 6), 2.0)), (1, 2), Direction.W, order) == \
            pytest.approx(2.0, abs=1e-15)
    # fine ghost depth: a quarter cell in front of the interface cell center (x = 0.5)
    assert c2f_first_dim_base(block(xs[0]), (1, 2), Direction.W, Q) == pytest.approx(0.25, abs=1e-15)
    assert c2f_first_dim_base(block(xs[0] ** 2), (1, 2), Direction.W, Q) == pytest.approx(0.0625, abs=1e-15)
    assert c2f_first_dim_base(block(xs[0] ** 2), (4, 2), Direction.E, Q) == pytest.approx(3.75**2, abs=1e-13)
    with pytest.raises(ValueError):
        c2f_first_dim_base(block(xs[0]), (2, 2), Direction.W, Q)


def _check_reproduction(dim, m, order, degree, rng, trials=3):
    for _ in range(trials):
        coeffs = rng.normal(size=len(monomials(dim, degree)))
        f = poly(coeffs, dim, degree)
        fld = block(f(*centers(m, dim)))
        for d in Direction.all(dim):
            frame = OrthogonalFrame.of(d, dim)
            for seg in split_interface(interface_range(m, d, dim), d):
                st_ = c2f_stencil(m, dim, seg, frame, order)
                got = st_.apply(fld.data).reshape(seg.size, -1)
                for cell, vals in zip(seg.cells(), got):
                    pts = oracle.fine_centers(cell, d.axis, d.sign, dim)
                    exact = np.array([f(*p) for p in pts])
                    scale = max(1.0, np.abs(exact).max())
                    np.testing.assert_allclose(vals, exact, rtol=0, atol=1e-12 * scale)


@pytest.mark.parametrize("dim", (2, 3))
@pytest.mark.parametrize("m", (4, 8))
def test_c2f_polynomial_reproduction(dim, m):
    rng = np.random.default_rng(dim * 100 + m)
    for order in SchemeOrder:
        _check_reproduction(dim, m, order, ORDER_DEGREE[order], rng)


def test_c2f_quadratic_m3_single_cells():
    # odd sizes cannot be split, but every cell must still reproduce quadratics
    m = 3
    rng = np.random.default_rng(3)
    for dim in (2, 3):
        f = poly(rng.normal(size=len(monomials(dim, 2))), dim, 2)
        data = f(*centers(m, dim))
        for d in Direction.all(dim):
            frame = OrthogonalFrame.of(d, dim)
            for cell in interface_range(m, d, dim).cells():
                got = c2f_compute_fine_values(block(data), cell, frame, Q)
                exact = [f(*p) for p in oracle.fine_centers(cell, d.axis, d.sign, dim)]
                np.testing.assert_allclose(got, exact, atol=1e-12 * max(1, np.abs(exact).max()))


def test_c2f_linear_is_not_quadratic_exact():
    m = 4
    data = centers(m, 2)[1] ** 2
    vals = c2f_compute_fine_values(block(data), (1, 2), OrthogonalFrame.of(Direction.W, 2), L)
    assert not np.allclose(vals, [1.25**2, 1.75**2])


@pytest.mark.parametrize("dim", (2, 3))
def test_c2f_matches_bruteforce_oracle(dim):
    rng = np.random.default_rng(11 + dim)
    m = 4
    for _ in range(20):
        data = rng.normal(size=(m + 2,) * dim)
        for order in SchemeOrder:
            for d in Direction.all(dim):
                frame = OrthogonalFrame.of(d, dim)
                for seg in split_interface(interface_range(m, d, dim), d):
                    got = c2f_stencil(m, dim, seg, frame, order).apply(data).reshape(seg.size, -1)
                    for cell, vals in zip(seg.cells(), got):
                        ref = oracle.fine_values(data, cell, d.axis, d.sign, m, order.n_bases)
                        np.testing.assert_allclose(vals, ref, rtol=0, atol=1e-13)


def test_nine_computation_rules_reached():
    # corners, edges and the plain case of a 3D face all occur on a 4x4 face
    m = 4
    frame = OrthogonalFrame.of(Direction.W, 3)
    face = interface_range(m, Direction.W, 3)
    patterns = set()
    for cell in face.cells():
        st_ = c2f_stencil(m, 3, np.array([cell]), frame, Q)
        patterns.add(tuple(map(tuple, (st_.cells[0] - np.array(cell)).tolist())))
    assert len(patterns) == 9


@pytest.mark.parametrize("dim", (2, 3))
def test_no_ghost_reads(dim):
    for m in (3, 4, 8):
        for order in SchemeOrder:
            for d in Direction.all(dim):
                st_ = c2f_stencil(m, dim, interface_range(m, d, dim), OrthogonalFrame.of(d, dim), order)
                assert interior_reads(st_, m, dim)
        if m % 2 == 0:
            for d in Direction.all(dim):
                assert interior_reads(f2c_stencil(m, dim, d), m, dim)


@given(st.integers(0, 2**32 - 1))
def test_neighbor_agnostic(seed):
    rng = np.random.default_rng(seed)
    dim, m = 3, 4
    data = rng.normal(size=(m + 2,) * dim)
    other = rng.normal(size=data.shape)
    inner = interior_range(m, dim).slices()
    other[inner] = data[inner]
    for d in Direction.all(dim):
        seg = split_interface(interface_range(m, d, dim), d)[int(rng.integers(4))]
        st_ = c2f_stencil(m, dim, seg, OrthogonalFrame.of(d, dim), Q)
        np.testing.assert_array_equal(st_.apply(data), st_.apply(other))
        np.testing.assert_array_equal(f2c_stencil(m, dim, d).apply(data), f2c_stencil(m, dim, d).apply(other))


def test_unpack_offsets():
    assert c2f_unpack_offsets(OrthogonalFrame.of(Direction.W, 2), 2) == [(0, 0), (0, 1)]
    assert c2f_unpack_offsets(OrthogonalFrame.of(Direction.W, 3), 3) == [
        (0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1)]
    assert c2f_unpack_offsets(OrthogonalFrame.of(Direction.S, 3), 3) == [
        (0, 0, 0), (1, 0, 0), (0, 0, 1), (1, 0, 1)]
    with pytest.raises(ValueError):
        c2f_unpack_offsets(OrthogonalFrame.of(Direction.W, 2), 2, r=3)


@pytest.mark.parametrize("d", list(Direction))
def test_pack_unpack_round_trip_geometry(d):
    """Packed values land in the fine ghost cells whose centers they were computed for."""
    dim, m = 3, 4
    rng = np.random.default_rng(5)
    f = poly(rng.normal(size=len(monomials(dim, 2))), dim, 2)
    coarse = f(*centers(m, dim))
    frame = OrthogonalFrame.of(d, dim)
    seg_idx = 2
    seg = split_interface(interface_range(m, d, dim), d)[seg_idx]
    payload = c2f_stencil(m, dim, seg, frame, Q).apply(coarse)
    # the fine block sits across d; its ghost face is on its d.opposite side
    fine_face_ghost = CellRange(*_ghost_face(m, d.opposite, dim))
    cells = c2f_unpack_cells(m, dim, fine_face_ghost, OrthogonalFrame.of(d, dim))
    fine = np.full((m + 2,) * dim, np.nan)
    fine[tuple(cells.T)] = payload
    # fine block coordinates in coarse-cell units
    origin = np.zeros(dim)
    origin[d.axis] = m if d.sign > 0 else -m / 2
    for a in range(dim):
        if a != d.axis:
            bit = (seg_idx >> [x for x in range(dim) if x != d.axis].index(a)) & 1
            origin[a] = bit * m / 2
    for cell in map(tuple, cells):
        x = origin + (np.array(cell) - 0.5) * 0.5
        assert fine[cell] == pytest.approx(f(*x), abs=1e-11)


def _ghost_face(m, d, dim):
    lo = [1] * dim
    hi = [m + 1] * dim
    lo[d.axis] = 0 if d.sign < 0 else m + 1
    hi[d.axis] = lo[d.axis] + 1
    return tuple(lo), tuple(hi)


def test_quadratic_needs_three_cells():
    with pytest.raises(ForestError):
        c2f_stencil(2, 2, interface_range(2, Direction.W, 2), OrthogonalFrame.of(Direction.W, 2), Q)
