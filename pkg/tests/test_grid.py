import math

import numpy as np
import pytest

import oracles
from nlfrag import backend
from nlfrag.errors import InvalidInputError, ParameterError
from nlfrag.grid import (
    CHUNK_PAIRS,
    Grid,
    allocate_pair,
    build_allocation_table,
    locate,
    make_geometric,
    rate_matrix,
)
from nlfrag.kernels import CollisionKernel, PowerLawBreakage, build_no_transfer_beta

CONST = CollisionKernel(1.0, 0.0, 0.0)


def test_geometric_edges():
    g = make_geometric(0.01, 10.0, 4)
    expected = [0.0, 0.01, 10**-1.25, 10**-0.5, 10**0.25, 10.0]
    np.testing.assert_allclose(g.edges, expected, rtol=1e-14)
    assert g.edges[2] == pytest.approx(0.0562, abs=1e-4)
    assert g.edges[3] == pytest.approx(0.3162, abs=1e-4)
    assert g.edges[4] == pytest.approx(1.7783, abs=1e-4)
    assert g.size == 5 and g.n == 10.0
    assert np.all((g.edges[:-1] < g.pivots) & (g.pivots < g.edges[1:]))


def test_interior_pivot_is_geometric_mean():
    g = Grid(np.array([0.0, 0.5, 1.0, 2.0, 4.0]), np.array([0.25, math.sqrt(0.5), math.sqrt(2.0), math.sqrt(8.0)]))
    assert g.pivots[2] == pytest.approx(math.sqrt(2.0))
    geo = make_geometric(1e-3, 10.0, 12)
    np.testing.assert_allclose(geo.pivots[1:], np.sqrt(geo.edges[1:-1] * geo.edges[2:]), rtol=1e-15)
    assert geo.pivots[0] == pytest.approx(0.5e-3)


def test_locate():
    g = make_geometric(0.01, 10.0, 4)
    assert locate(g, 0.005) == 0
    assert locate(g, 0.01) == 1
    assert locate(g, 9.99) == 4
    np.testing.assert_array_equal(g.locate(np.array([0.0, 0.02, 1.0])), [0, 1, 3])


@pytest.mark.parametrize("edges, pivots", [
    ([0.1, 1.0], [0.5]),
    ([0.0, 1.0, 0.5], [0.5, 0.7]),
    ([0.0, 1.0], [1.0]),
])
def test_invalid_grid(edges, pivots):
    with pytest.raises((InvalidInputError, ParameterError)):
        Grid(np.array(edges), np.array(pivots))


@pytest.mark.parametrize("args", [(0.0, 10.0, 4), (1.0, 0.5, 4), (0.01, 10.0, 0)])
def test_make_geometric_rejects(args):
    with pytest.raises((InvalidInputError, ParameterError)):
        make_geometric(*args)


def test_grid_arrays_read_only():
    g = make_geometric(0.01, 10.0, 4)
    with pytest.raises(ValueError):
        g.edges[1] = 0.02


def test_refined_grid_keeps_edges():
    g = make_geometric(1e-4, 10.0, 10)
    r = g.refined(2)
    assert r.size == 2 * (g.size - 1) + 1
    np.testing.assert_allclose(r.edges[1::2], g.edges[1:], rtol=1e-13)


# -- allocation table --------------------------------------------------------------


def test_monodisperse_pair_nu0():
    g = make_geometric(1e-4, 40.0, 30)
    t = build_allocation_table(g, CONST, PowerLawBreakage(0.0))
    i = 15
    w = t.weights(i, i)
    assert w.sum() == pytest.approx(2.0, rel=1e-12)
    assert np.dot(g.pivots, w) == pytest.approx(2 * g.pivots[i], rel=1e-12)


def test_singular_pair_number():
    g = make_geometric(1e-4, 40.0, 30)
    t = build_allocation_table(g, CONST, PowerLawBreakage(-0.5))
    w = t.weights(12, 20)
    assert w.sum() == pytest.approx(3.0, rel=1e-12)
    assert np.dot(g.pivots, w) == pytest.approx(g.pivots[12] + g.pivots[20], rel=1e-12)


def test_truncated_pairs_have_zero_rate():
    g = make_geometric(1e-3, 10.0, 16)
    t = build_allocation_table(g, CONST, PowerLawBreakage(0.0))
    x = g.pivots
    phi = rate_matrix(g, CONST)
    big = x[:, None] + x[None, :] >= g.n
    assert big.any()
    assert np.all(phi[big] == 0.0)
    i, j = np.argwhere(big)[0]
    assert t.rate_of(int(i), int(j)) == 0.0
    assert t.pair_index(int(min(i, j)), int(max(i, j))) is None
    assert np.all(x[t.pair_i] + x[t.pair_j] < g.n)


def test_rate_matrix_symmetric():
    g = make_geometric(1e-5, 40.0, 40)
    phi = rate_matrix(g, CollisionKernel(1.3, 0.2, 0.9))
    np.testing.assert_array_equal(phi, phi.T)


@pytest.mark.parametrize("breakage", [PowerLawBreakage(0.0), PowerLawBreakage(-0.5), PowerLawBreakage(-0.9),
                                      build_no_transfer_beta(-0.3)])
def test_table_consistency_sums(breakage):
    g = make_geometric(1e-6, 40.0, 60)
    t = build_allocation_table(g, CONST, breakage)
    number, mass = t.row_sums()
    x = g.pivots
    pair_mass = x[t.pair_i] + x[t.pair_j]
    np.testing.assert_allclose(mass, pair_mass, rtol=1e-12)
    # number is exact unless a cloud's mean fragment lies below the first pivot
    expected = np.array([breakage.moment(0, x[i], x[j]) for i, j in zip(t.pair_i, t.pair_j)])
    nbar = (breakage.nu + 2.0) / (breakage.nu + 1.0)
    if breakage.kind == "no_transfer":
        feasible = np.minimum(x[t.pair_i], x[t.pair_j]) / nbar >= x[0]
    else:
        feasible = (x[t.pair_i] + x[t.pair_j]) / nbar >= x[0]
    assert feasible.mean() > 0.9
    np.testing.assert_allclose(number[feasible], expected[feasible], rtol=1e-12)
    assert np.all(t.data >= 0.0)


def test_number_defect_reported():
    g = make_geometric(1e-6, 40.0, 30)
    assert build_allocation_table(g, CONST, PowerLawBreakage(0.0)).number_defect <= 1e-12
    t = build_allocation_table(g, CONST, PowerLawBreakage(-0.5))
    assert t.number_defect == pytest.approx(1 / 3, rel=1e-6)


@pytest.mark.parametrize("i, j", [(5, 5), (3, 17), (10, 24), (1, 2)])
def test_weights_match_lever_rule_oracle(i, j):
    g = make_geometric(1e-3, 40.0, 24)
    t = build_allocation_table(g, CONST, PowerLawBreakage(0.0))
    x, y = float(g.pivots[i]), float(g.pivots[j])
    ref = oracles.lever_rule_weights(g.edges, g.pivots, lambda z, a, b: oracles.power_beta(0.0, z, a, b), x, y)
    assert ref is not None
    np.testing.assert_allclose(t.weights(i, j), ref, rtol=1e-9, atol=1e-12)


def test_allocate_pair_arbitrary_sizes():
    g = make_geometric(1e-4, 40.0, 30)
    w, defect = allocate_pair(g, PowerLawBreakage(-0.3), 0.37, 2.9)
    assert defect == 0.0
    assert w.sum() == pytest.approx(PowerLawBreakage(-0.3).gamma, rel=1e-12)
    assert np.dot(g.pivots, w) == pytest.approx(3.27, rel=1e-12)
    with pytest.raises(InvalidInputError):
        allocate_pair(g, PowerLawBreakage(0.0), 30.0, 20.0)


def test_refinement_keeps_pair_totals():
    # the sums are fixed by the kernel, not the grid
    b = PowerLawBreakage(-0.4)
    totals = []
    for cells in (20, 40):
        g = make_geometric(1e-4, 40.0, cells)
        w, _ = allocate_pair(g, b, 0.8, 1.3)
        totals.append((w.sum(), np.dot(g.pivots, w)))
    assert totals[0] == pytest.approx(totals[1], rel=1e-12)
    assert totals[0] == pytest.approx((b.gamma, 2.1), rel=1e-12)


def test_layout_chunks_cover_pairs():
    g = make_geometric(1e-7, 40.0, 200)
    t = build_allocation_table(g, CONST, PowerLawBreakage(0.0))
    c = t.chunks
    assert c[0] == 0 and c[-1] == t.npairs
    assert np.all(np.diff(c) > 0) and np.all(np.diff(c) <= CHUNK_PAIRS)
    lengths = np.diff(t.offsets)
    for a, b in zip(c[:-1], c[1:]):
        assert np.all(lengths[a:b] == lengths[a])


def test_generic_path_matches_power_law_path():
    from nlfrag.kernels import CustomBreakage

    nu = -0.4
    power = PowerLawBreakage(nu)
    custom = CustomBreakage(lambda z, x, y: oracles.power_beta(nu, z, x, y), gamma=power.gamma,
                            clouds=power.clouds, verify=False)
    g = make_geometric(1e-4, 40.0, 20)
    a = build_allocation_table(g, CONST, power)
    b = build_allocation_table(g, CONST, custom)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-14)


@pytest.mark.skipif(len(backend.available()) < 2, reason="compiled core not built")
@pytest.mark.parametrize("breakage", [PowerLawBreakage(-0.5), build_no_transfer_beta(-0.2)])
def test_backends_build_same_table(breakage):
    g = make_geometric(1e-6, 40.0, 50)
    a = build_allocation_table(g, CONST, breakage, backend_name="compiled")
    b = build_allocation_table(g, CONST, breakage, backend_name="python")
    np.testing.assert_allclose(a.data, b.data, rtol=1e-13, atol=1e-15)
    assert a.number_defect == pytest.approx(b.number_defect, rel=1e-10)
