import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qclimit import ContractViolation, PhaseFunction, PhaseGrid, Polynomial
from qclimit.charts import (
    Hypersurface,
    _transition,
    build_involutive_set,
    build_partition,
    grid_boxes,
    lipschitz_check,
    localize,
    overlap_integral,
    overlap_scaling,
    transport_constant,
)

HO = Polynomial.parse("p**2/2 + q**2/2")


def test_transport_oscillator_radius():
    # carried to q = 0 with p > 0, the seed p becomes sqrt(q^2 + p^2)
    res = transport_constant(HO, lambda x: x[:, 1], [[-0.5, 0.5], [1.0, 2.0]], Hypersurface(0, 0.0), counts=129)
    q, p = res.function.grid.mesh()
    ok = res.valid
    assert np.max(np.abs(res.function.values[ok] - np.sqrt(q**2 + p**2)[ok])) < 1e-10
    assert res.residual < 1e-6
    assert res.flagged > 0
    assert np.all(np.isnan(res.function.values[~ok]))


def test_transport_free_particle_keeps_momentum():
    H = Polynomial.parse("p**2/2")
    res = transport_constant(H, lambda x: np.sin(x[:, 1]), [[-1, 1], [0.5, 1.5]], Hypersurface(0, 0.0), counts=33)
    _, p = res.function.grid.mesh()
    assert res.valid.all()
    assert np.max(np.abs(res.function.values - np.sin(p))) < 1e-12
    q, _ = res.function.grid.mesh()
    # crossing time is -q/p
    assert np.allclose(res.crossing_times, -q / p, atol=1e-9)


def test_transport_rejects_tangent_surface():
    with pytest.raises(ContractViolation):
        transport_constant(HO, lambda x: x[:, 1], [[-0.5, 0.5], [-0.5, 0.5]], Hypersurface(0, 0.0), counts=21)


def test_transport_dimension_checks():
    with pytest.raises(ContractViolation):
        transport_constant(HO, lambda x: x[:, 1], [[-1, 1]] * 4, Hypersurface(0, 0.0), counts=5)
    with pytest.raises(ContractViolation):
        transport_constant(HO, lambda x: x[:, 1], [[-1, 1], [1, 2]], Hypersurface(3, 0.0), counts=5)


def test_two_dof_involutive_set():
    H = Polynomial.parse("p1**2/2 + q1**2/2 + p2**2/2 + q2**2/2", 2)
    chart = build_involutive_set(H, [(Hypersurface(0, 0.0), lambda x: x[:, 2] ** 2 / 2)],
                                 [[-0.3, 0.3], [-0.3, 0.3], [1.0, 1.5], [1.0, 1.5]], counts=13)
    q1, q2, p1, p2 = chart.grid.mesh()
    E1 = chart.constants[1].values
    ok = chart.valid
    assert np.max(np.abs(E1[ok] - 0.5 * (q1**2 + p1**2)[ok])) < 1e-10
    assert chart.residuals.max() < 1e-6


def test_involution_failure_reported():
    # q2 is not conserved, so pairing it with the chart breaks involution
    H = Polynomial.parse("p1**2/2 + q1**2/2 + p2**2/2 + q2**2/2", 2)
    seeds = [(Hypersurface(0, 0.0), lambda x: x[:, 2] ** 2 / 2), (Hypersurface(0, 0.0), lambda x: x[:, 1])]
    with pytest.raises(ContractViolation, match="not in involution"):
        build_involutive_set(H, seeds, [[-0.3, 0.3], [-0.3, 0.3], [1.0, 1.5], [1.0, 1.5]], counts=11,
                             bracket_tol=1e-8)


def test_lipschitz_polynomial():
    rep = lipschitz_check(Polynomial.parse("p**2/2 + q**4"), [[-1, 1], [-1, 1]], counts=33)
    assert abs(rep.bound - 12.0) < 1e-12
    assert rep.ok


def test_lipschitz_singular_callable():
    rep = lipschitz_check(lambda q, p: p**2 / 2 + 1 / q, [[-1, 1], [-1, 1]], counts=21)
    assert rep.bound == np.inf
    assert not rep.ok


def test_lipschitz_transversality():
    rep = lipschitz_check(PhaseFunction(PhaseGrid((-1.0, 1.0), (1.0, 2.0), (21, 21)), exact_form=HO),
                          surface=Hypersurface(0, 0.0))
    assert rep.delta_ok and abs(rep.delta_min - 1.0) < 1e-12
    rep = lipschitz_check(HO, [[-1, 1], [-1, 1]], counts=21, surface=Hypersurface(0, 0.0))
    assert rep.delta_ok is False


@given(arrays(np.float64, 200, elements=st.floats(-2, 3)))
def test_transition_symmetry(x):
    s = _transition(x)
    assert np.all((s >= 0) & (s <= 1))
    assert np.allclose(s + _transition(1 - x), 1.0, atol=1e-15)


def test_transition_flat_ends():
    assert _transition(0.0) == 0 and _transition(1.0) == 1
    assert _transition(1e-3) < 1e-300


@pytest.mark.parametrize("edges", [
    [[-1, 0, 1], [-1, 0, 1]],
    [[-1, -0.3, 0.4, 1], [-1, 1]],
    [[0, 1, 2], [0, 0.5, 1], [0, 1], [-1, 0, 1]],
])
def test_partition_sums_to_one(edges, rng):
    atlas = build_partition(grid_boxes(edges), 0.05)
    region = atlas.region
    pts = region[:, 0] + (region[:, 1] - region[:, 0]) * rng.random((10_000, len(edges)))
    assert atlas.partition_error(pts) <= 1e-12
    B = atlas.bump_values(pts)
    assert B.min() >= 0 and B.max() <= 1


def test_bump_is_one_on_core_and_zero_outside_collar(rng):
    atlas = build_partition(grid_boxes([[-1, 0, 1], [-1, 1]]), 0.1)
    b0 = atlas.bumps[0]
    core, collar = b0.core(), b0.collar()
    inside = core[:, 0] + (core[:, 1] - core[:, 0]) * rng.random((1000, 2))
    assert np.allclose(atlas.bump(0, inside), 1.0)
    beyond = np.column_stack([rng.uniform(collar[0, 1] + 1e-9, 1, 1000), rng.uniform(-1, 1, 1000)])
    assert np.all(atlas.bump(0, beyond) == 0)


def test_partition_validation():
    with pytest.raises(ContractViolation):
        build_partition([[[0, 1], [0, 1]], [[0.5, 1.5], [0, 1]]], 0.1)
    with pytest.raises(ContractViolation):
        build_partition(grid_boxes([[0, 0.1, 1], [0, 1]]), 0.1)
    with pytest.raises(ContractViolation):
        build_partition(grid_boxes([[-1, 0, 1], [-1, 1]]), 0.1, hbar=1e-2, action_scale=1.0)
    atlas = build_partition(grid_boxes([[-1, 0, 1], [-1, 1]]), 0.1, hbar=1e-5, action_scale=1.0)
    assert atlas.ratios[0] < 0.1 and atlas.ratios[1] < 0.1


def test_localized_pieces_recombine():
    atlas = build_partition(grid_boxes([[-1, 0, 1], [-1, 0.2, 1]]), 0.1)
    grid = PhaseGrid.square(1, 1.0, 41)
    A = PhaseFunction.from_polynomial("q**2 + p", grid)
    total = sum(localize(A, atlas, i).values for i in atlas.ids)
    assert np.max(np.abs(total - A.values)) < 1e-12


def test_overlap_adjacent_charts_vanishes_away_from_collar():
    atlas = build_partition(grid_boxes([[-1, 0, 1], [-1, 1]]), 0.05)
    assert overlap_integral(atlas, 0, 1) > 0
    atlas3 = build_partition(grid_boxes([[-1, 0, 0.5, 1], [-1, 1]]), 0.05)
    assert overlap_integral(atlas3, 0, 2) == 0.0


@pytest.mark.parametrize("n_dof, count", [(1, 201), (2, 21)])
def test_overlap_exponent(n_dof, count):
    slope, overlaps = overlap_scaling([0.025, 0.05, 0.1, 0.2], n_dof=n_dof, count=count)
    assert abs(slope - 2 * n_dof) <= 0.1 * 2 * n_dof
    assert np.all(np.diff(overlaps) > 0)
