import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from qclimit import (
    ContractViolation,
    DomainExitError,
    PhaseFunction,
    PhaseGrid,
    Polynomial,
    SymplecticForm,
    hamilton_flow,
    integrate_phase,
    poisson_bracket,
)
from qclimit.phasespace import (
    HamiltonianField,
    Trajectory,
    flow_jacobian,
    flow_points,
    grid_derivative,
    phase_point,
    poisson_polynomial,
)

from strategies import polynomials


@pytest.mark.parametrize("n", [1, 2, 3])
def test_symplectic_form_inverse(n):
    w = SymplecticForm(n)
    assert np.array_equal(w.lower, -w.lower.T)
    assert np.array_equal(w.lower @ w.upper, np.eye(2 * n))


def test_phase_point_length():
    assert phase_point([1, 2, 3, 4], 2).shape == (4,)
    with pytest.raises(ContractViolation):
        phase_point([1, 2, 3], None)
    with pytest.raises(ContractViolation):
        phase_point([1, 2], 2)


@pytest.mark.parametrize("mins, maxs, counts", [((0.0,), (0.0,), (5,)), ((1.0,), (0.0,), (5,)), ((0.0,), (1.0,), (2,))])
def test_grid_rejects_degenerate_axes(mins, maxs, counts):
    with pytest.raises(ContractViolation):
        PhaseGrid(mins, maxs, counts)


def test_grid_spacing_and_nodes():
    g = PhaseGrid((-1.0, 0.0), (1.0, 2.0), (5, 3))
    assert np.allclose(g.spacing, (0.5, 1.0))
    assert g.nodes().shape == (5, 3, 2)
    assert g.shape == (5, 3)


def test_exact_form_matches_samples():
    g = PhaseGrid.square(1, 2.0, 17)
    f = PhaseFunction.from_polynomial("q**3 - 2*q*p + p**2", g)
    q, p = g.mesh()
    assert np.allclose(f.values, q**3 - 2 * q * p + p**2, rtol=1e-12, atol=1e-12)


def test_values_are_immutable():
    g = PhaseGrid.square(1, 1.0, 5)
    f = PhaseFunction(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def _sympy_bracket(f: str, g: str):
    q, p = sp.symbols("q p")
    F, G = sp.sympify(f), sp.sympify(g)
    return sp.expand(sp.diff(F, q) * sp.diff(G, p) - sp.diff(F, p) * sp.diff(G, q))


@pytest.mark.parametrize("f, g", [("q", "p"), ("p**2/2 + q**2/2", "p**2/2 + q**2/2"), ("q**2", "p**2"),
                                  ("q**3*p", "q + p**4")])
def test_poisson_polynomial_matches_symbolic(f, g):
    grid = PhaseGrid.square(1, 1.0, 9)
    res = poisson_bracket(PhaseFunction.from_polynomial(f, grid), PhaseFunction.from_polynomial(g, grid))
    oracle = Polynomial.parse(str(_sympy_bracket(f, g)), 1)
    assert res.exact_form.allclose(oracle)


def test_canonical_pair_bracket_is_one():
    grid = PhaseGrid.square(1, 1.0, 9)
    res = poisson_bracket(PhaseFunction.from_polynomial("q", grid), PhaseFunction.from_polynomial("p", grid))
    assert np.allclose(res.values, 1.0)


def test_grid_bracket_converges_second_order():
    errs, hs = [], []
    for n in (21, 41, 81, 161):
        grid = PhaseGrid.square(1, 1.0, n)
        q, p = grid.mesh()
        f = PhaseFunction(grid, np.sin(q) * np.cos(2 * p))
        g = PhaseFunction(grid, np.exp(0.5 * q) + p**3)
        exact = np.cos(q) * np.cos(2 * p) * 3 * p**2 + 2 * np.sin(q) * np.sin(2 * p) * 0.5 * np.exp(0.5 * q)
        errs.append(np.max(np.abs(poisson_bracket(f, g).values - exact)))
        hs.append(grid.spacing[0])
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 2) <= 0.2


def test_grid_mismatch_rejected():
    a = PhaseFunction(PhaseGrid.square(1, 1.0, 9), np.zeros((9, 9)))
    b = PhaseFunction(PhaseGrid.square(1, 1.0, 11), np.zeros((11, 11)))
    with pytest.raises(ContractViolation):
        poisson_bracket(a, b)


@given(polynomials(max_degree=3), polynomials(max_degree=3))
def test_grid_bracket_antisymmetric(f, g):
    grid = PhaseGrid.square(1, 1.0, 15)
    F = PhaseFunction(grid, np.real(f.evaluate(grid.nodes())))
    G = PhaseFunction(grid, np.real(g.evaluate(grid.nodes())))
    assert np.allclose(poisson_bracket(F, G).values, -poisson_bracket(G, F).values, atol=1e-12)


@given(polynomials(max_degree=4), polynomials(max_degree=4), polynomials(max_degree=4))
def test_jacobi_identity(f, g, h):
    total = (poisson_polynomial(f, poisson_polynomial(g, h)) + poisson_polynomial(g, poisson_polynomial(h, f))
             + poisson_polynomial(h, poisson_polynomial(f, g)))
    assert total.allclose(Polynomial.constant(0.0, 2), atol=1e-9 * max(1.0, f.max_coefficient()
                                                                         * g.max_coefficient() * h.max_coefficient()))


@given(polynomials(n_dof=2, max_degree=3), polynomials(n_dof=2, max_degree=3))
def test_two_dof_bracket_antisymmetric(f, g):
    assert (poisson_polynomial(f, g) + poisson_polynomial(g, f)).allclose(Polynomial.constant(0.0, 4))


def test_grid_derivative_periodic_exact_for_trig():
    x = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    d = grid_derivative(np.sin(x), 0, x[1] - x[0], True, accuracy=4)
    assert np.max(np.abs(d - np.cos(x))) < 1e-5


def test_integrate_normalized_gaussian():
    grid = PhaseGrid.square(1, 8.0, 161)
    q, p = grid.mesh()
    f = PhaseFunction(grid, np.exp(-(q**2 + p**2)) / np.pi)
    assert abs(integrate_phase(f) - 1) < 1e-6


def test_integrate_zero_and_odd():
    grid = PhaseGrid.square(1, 4.0, 81)
    q, p = grid.mesh()
    assert integrate_phase(PhaseFunction(grid, np.zeros(grid.shape))) == 0
    assert abs(integrate_phase(PhaseFunction(grid, q * np.exp(-(q**2 + p**2))))) < 1e-10


def test_integrate_subregion_and_bounds():
    grid = PhaseGrid.square(1, 2.0, 41)
    f = PhaseFunction(grid, np.ones(grid.shape))
    assert abs(integrate_phase(f, [(-1, 1), (0, 1)]) - 2.0) < 1e-12
    with pytest.raises(ContractViolation):
        integrate_phase(f, [(-3, 1), (0, 1)])


@pytest.mark.parametrize("integrator", ["adaptive", "symplectic"])
def test_free_particle_exact(integrator):
    tr = hamilton_flow(Polynomial.parse("p**2/2"), [0.5, 1.5], 2.0, 0.01, integrator=integrator)
    assert np.allclose(tr.states[:, 0], 0.5 + 1.5 * tr.times, atol=1e-10)
    assert np.allclose(tr.states[:, 1], 1.5, atol=1e-14)


def test_oscillator_returns_after_period():
    # the fourth-order composition of the Strang step; the plain Strang step has phase error ~3e-7 here
    tr = hamilton_flow(Polynomial.parse("p**2/2 + q**2/2"), [1.0, 0.0], 2 * np.pi, 1e-3,
                       integrator="symplectic", order=4)
    assert np.max(np.abs(tr.final - [1.0, 0.0])) < 1e-8
    assert abs(tr.times[-1] - 2 * np.pi) < 1e-14


def test_oscillator_adaptive_return():
    tr = hamilton_flow(Polynomial.parse("p**2/2 + q**2/2"), [1.0, 0.0], 2 * np.pi, 1e-2)
    assert np.max(np.abs(tr.final - [1.0, 0.0])) < 1e-7


def test_coupled_quartic_energy_drift():
    H = Polynomial.parse("p1**2/2 + p2**2/2 + (q1 - q2)**4", 2)
    tr = hamilton_flow(H, [1.0, 0.0, 0.0, 0.5], 100.0, 1e-3)
    assert tr.energy_drift() < 1e-6


def test_symplectic_energy_bounded_over_million_steps():
    H = Polynomial.parse("p**2/2 + q**2/2")
    x = np.array([[1.0, 0.0]])
    errs = []
    for _ in range(10):
        x = flow_points(H, x, 1000.0, 0.01)
        errs.append(abs(0.5 * (x[0, 0] ** 2 + x[0, 1] ** 2) - 0.5))
    # Strang splitting keeps a modified energy: the error stays at the O(dt^2) level, no growth
    assert max(errs) < 2e-5
    assert errs[-1] < 2 * max(errs[:3]) + 1e-12


@pytest.mark.parametrize("H, start", [("p**2/2 + q**4/4", [0.3, 0.7]), ("p**2/2 + q**2/2 + q**3/3", [0.2, -0.1])])
def test_liouville_unit_jacobian(H, start):
    J = flow_jacobian(Polynomial.parse(H), start, 3.0, 1e-2, integrator="symplectic", order=4)
    assert abs(np.linalg.det(J) - 1) < 1e-4


def test_two_dof_liouville():
    H = Polynomial.parse("p1**2/2 + p2**2/2 + q1**2/2 + q2**2 + q1**2*q2", 2)
    J = flow_jacobian(H, [0.1, 0.2, 0.0, 0.1], 2.0, 1e-2, integrator="symplectic", order=4)
    assert abs(np.linalg.det(J) - 1) < 1e-4


def test_domain_exit_reports_time():
    with pytest.raises(DomainExitError) as info:
        hamilton_flow(Polynomial.parse("p**2/2"), [0.0, 1.0], 5.0, 0.01, domain=[(-1, 1), (-2, 2)])
    assert abs(info.value.time - 1.0) < 1e-6


def test_domain_exit_symplectic():
    with pytest.raises(DomainExitError) as info:
        hamilton_flow(Polynomial.parse("p**2/2"), [0.0, 1.0], 5.0, 0.01, integrator="symplectic",
                      domain=[(-1, 1), (-2, 2)])
    assert 1.0 <= info.value.time <= 1.02


def test_sampled_hamiltonian_flow_exit_from_grid():
    grid = PhaseGrid.square(1, 1.0, 41)
    H = PhaseFunction.from_polynomial("p**2/2", grid)
    H = PhaseFunction(grid, H.values)
    with pytest.raises(DomainExitError):
        hamilton_flow(H, [0.0, 0.5], 10.0, 0.01)


def test_symplectic_needs_separable():
    with pytest.raises(ContractViolation):
        hamilton_flow(Polynomial.parse("q*p"), [0.1, 0.1], 1.0, 0.01, integrator="symplectic")


def test_trajectory_times_monotone():
    with pytest.raises(ContractViolation):
        Trajectory(np.array([0.0, 1.0, 0.5]), np.zeros((3, 2)), np.zeros(3))


def test_batched_flow_matches_single_path():
    H = Polynomial.parse("p**2/2 + q**4/4")
    starts = np.array([[0.1, 0.2], [1.0, -0.3], [-0.5, 0.5]])
    batch = flow_points(H, starts, 2.5, 0.01)
    for s, b in zip(starts, batch):
        single = hamilton_flow(H, s, 2.5, 0.01, integrator="symplectic").final
        assert np.allclose(single, b, atol=1e-12)


@given(st.floats(min_value=0.05, max_value=3.0))
def test_backward_flow_inverts_forward(t):
    H = Polynomial.parse("p**2/2 + q**4/4 - q**2/2")
    x = np.array([[0.3, 0.4]])
    there = flow_points(H, x, t, 0.01)
    back = flow_points(H, there, -t, 0.01)
    assert np.allclose(back, x, atol=1e-10)


def test_hamiltonian_field_split_rejects_mixed_terms():
    assert HamiltonianField(Polynomial.parse("q*p")).split() is None
    assert HamiltonianField(Polynomial.parse("q**2 + p**2")).split() is not None
