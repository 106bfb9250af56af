import numpy as np
import pytest

from qclimit.billiard import (
    DOMAIN_CONSTANTS,
    BilliardSpec,
    DomainLabel,
    billiard_constants,
    billiard_potential,
    domain_labels,
    hard_wall_flow,
    hard_wall_hit,
    hard_wall_lyapunov,
    lyapunov,
    penetrations,
    simulate_billiard,
    specular_limit,
    time_reversal_error,
)
from qclimit.classical import ProbeBatch, classify_constant
from qclimit.exceptions import ContractViolation, ConvergenceError

SPEC = BilliardSpec()
START = [0.3, 0.1, np.cos(0.7), np.sin(0.7)]


def test_spec_validation():
    with pytest.raises(ContractViolation):
        BilliardSpec(radius=0.25, d=0.2)
    with pytest.raises(ContractViolation):
        BilliardSpec(radius=1.5)
    with pytest.raises(ContractViolation):
        BilliardSpec(lx=-1)
    assert SPEC.center == (-1.0, -1.0)
    assert SPEC.v0 == 500.0
    assert not BilliardSpec(radius=0.0).has_disc


def test_potential_zero_in_interior():
    pts = np.array([[0.0, 0.0, 0, 0], [0.9, 0.9, 0, 0], [-0.5, 0.3, 0, 0]])
    assert np.all(billiard_potential(SPEC, pts) == 0.0)


def test_potential_profile_values():
    d, v0 = SPEC.d, SPEC.v0
    for s in (0.1, 0.5, 0.9):
        x = 1.0 - d + s * d
        assert abs(billiard_potential(SPEC, [x, 0.0]) - v0 * s**4 / (1 - s) ** 2) < 1e-9 * v0 / (1 - s) ** 2


def test_potential_effective_hard_wall():
    x = 1.0 - SPEC.d * 1e-3
    kinetic = 0.5
    assert billiard_potential(SPEC, [x, 0.0]) >= 1e6 * kinetic
    assert billiard_potential(SPEC, [1.0, 0.0]) == np.inf


@pytest.mark.parametrize("s", [0.2, 0.7])
def test_disc_potential_rotationally_symmetric(s):
    r = SPEC.radius + SPEC.d * (1 - s)
    c = np.array(SPEC.center)
    vals = [billiard_potential(SPEC, c + r * np.array([np.cos(a), np.sin(a)])) for a in (0.3, 0.8, 1.2)]
    assert np.ptp(vals) <= 1e-12 * max(vals)
    assert vals[0] > 0


def test_potential_outside_box_rejected():
    with pytest.raises(ContractViolation):
        billiard_potential(SPEC, [1.5, 0.0])


@pytest.mark.parametrize("point, label", [
    ([0.0, 0.0], DomainLabel.D0),
    ([0.0, -0.99], DomainLabel.D1),
    ([0.99, 0.0], DomainLabel.D2),
    ([-0.99, 0.0], DomainLabel.D2),
    ([0.0, 0.99], DomainLabel.D3),
    ([-1 + 0.28 / np.sqrt(2), -1 + 0.28 / np.sqrt(2)], DomainLabel.D4),
])
def test_domain_labels(point, label):
    labels, corner = domain_labels(SPEC, [[*point, 0.0, 0.0]])
    assert labels[0] == label
    assert not corner[0]


def test_corner_flag():
    labels, corner = domain_labels(SPEC, [[0.99, 0.98, 0, 0]])
    assert corner[0]
    s = penetrations(SPEC, [[0.99, 0.98, 0, 0]])[0]
    assert labels[0] == (DomainLabel.D2 if s[3] > s[1] else DomainLabel.D3)


def test_constants_table_pairs():
    assert DOMAIN_CONSTANTS[0] == ("H", "Px")
    assert DOMAIN_CONSTANTS[2] == ("H", "Py")
    assert DOMAIN_CONSTANTS[4] == ("H", "Ptheta")


def test_angular_momentum_about_disc_centre():
    c = billiard_constants(SPEC, [[0.0, 0.0, 1.0, 0.0]])
    # r = (1, 1) from the corner, v = (1, 0): r x v = -1
    assert c["Ptheta"][0] == -1.0


def test_long_run_energy_and_domains():
    tr = simulate_billiard(SPEC, START, 1000.0, 1e-4, sample_every=10)
    assert tr.energy_drift <= 1e-6
    assert tr.visited() == {0, 1, 2, 3, 4}
    for label, row in tr.domain_table().items():
        tol = 1e-4 if label == 4 else 1e-5
        assert row["visits"] > 0
        assert max(v for k, v in row.items() if k != "visits") <= tol


def test_horizontal_launch_keeps_py():
    tr = simulate_billiard(SPEC, [0.0, 0.5, 1.0, 0.0], 20.0, 1e-4)
    assert np.all(tr.constants["Py"] == 0.0)
    assert np.any(tr.states[:, 2] < 0)
    assert set(tr.visited()) == {0, 2}


def test_vertical_bounce_flips_py_keeps_px():
    tr = simulate_billiard(SPEC, [0.5, 0.0, 0.2, 1.0], 1.5, 1e-4)
    Px = tr.constants["Px"]
    assert np.max(np.abs(Px - 0.2)) < 1e-12
    py = tr.states[:, 3]
    assert py[0] > 0 and py.min() < -0.99 * np.abs(py[0])
    assert DomainLabel.D3 in tr.visited()


def test_side_wall_flips_px_keeps_py():
    tr = simulate_billiard(SPEC, [0.5, 0.0, 1.0, 0.2], 1.0, 1e-4)
    in_wall = tr.labels == DomainLabel.D2
    assert in_wall.any()
    assert np.max(np.abs(tr.constants["Py"][in_wall] - 0.2)) < 1e-12
    assert tr.states[-1, 2] < 0 and abs(abs(tr.states[-1, 2]) - 1.0) < 1e-6


def test_disc_bounce_conserves_angular_momentum():
    c = np.array(SPEC.center)
    start = [*(c + 0.6 * np.array([1.0, 1.0]) / np.sqrt(2) + np.array([0.05, -0.05])), -1 / np.sqrt(2), -1 / np.sqrt(2)]
    tr = simulate_billiard(SPEC, start, 0.6, 1e-5, sample_every=1)
    in_disc = (tr.labels == DomainLabel.D4) & ~tr.corner
    assert in_disc.sum() > 10
    L = tr.constants["Ptheta"][in_disc]
    speed = np.sqrt(2 * tr.constants["H"][0])
    assert np.ptp(L) / (speed * (SPEC.lx + SPEC.ly)) <= 1e-4


def test_escape_energy_rejected():
    with pytest.raises(ContractViolation, match="escapes"):
        simulate_billiard(SPEC, [0.0, 0.0, 40.0, 0.0], 1.0, 1e-4)


def test_stiff_step_rejected():
    with pytest.raises(ContractViolation, match="too large"):
        simulate_billiard(SPEC, [0.0, 0.0, 10.0, 3.0], 5.0, 5e-3, sample_every=1)


def test_time_reversal():
    assert time_reversal_error(SPEC, START, 10.0, 1e-4) <= 1e-4


def test_energy_drift_improves_under_dt_halving():
    coarse = simulate_billiard(SPEC, START, 50.0, 4e-4).energy_drift
    fine = simulate_billiard(SPEC, START, 50.0, 2e-4).energy_drift
    assert coarse >= 4 * fine


def test_second_order_scheme_halving():
    coarse = simulate_billiard(SPEC, START, 50.0, 2e-4, order=2).energy_drift
    fine = simulate_billiard(SPEC, START, 50.0, 1e-4, order=2).energy_drift
    assert 3.5 <= coarse / fine <= 4.5


def test_hard_wall_hit_geometry():
    t, point, normal = hard_wall_hit(SPEC, [0.0, 0.0], [1.0, 0.0])
    assert t == 1.0 and np.allclose(point, [1, 0]) and np.allclose(normal, [-1, 0])
    t, point, normal = hard_wall_hit(SPEC, [0.0, 0.0], [-1.0, -1.0])
    assert abs(np.linalg.norm(point - SPEC.center) - SPEC.radius) < 1e-12
    assert np.allclose(normal, [1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_hard_wall_flow_conserves_speed_and_reverses():
    end = hard_wall_flow(SPEC, START, 25.0)
    assert abs(np.linalg.norm(end[2:]) - 1) < 1e-12
    back = hard_wall_flow(SPEC, [*end[:2], *(-end[2:])], 25.0)
    assert np.allclose(back[:2], START[:2], atol=1e-8)


def test_smooth_flow_approaches_hard_wall_flow():
    spec = BilliardSpec(radius=0.0, d=0.004)
    smooth = simulate_billiard(spec, [0.0, 0.0, 0.8, 0.6], 4.0, 2e-6, sample_every=1000).states[-1]
    hard = hard_wall_flow(spec, [0.0, 0.0, 0.8, 0.6], 4.0)
    assert np.allclose(smooth[2:], hard[2:], atol=1e-9)
    # each bounce turns around a fraction of d before the hard wall, so positions lag by O(d)
    assert np.allclose(smooth[:2], hard[:2], atol=5 * spec.d)


def test_specular_flat_wall():
    start = [0.0, 0.0, np.cos(0.4), np.sin(0.4)]
    rep = specular_limit(BilliardSpec(radius=0.0), start, 0.2 / 2.0 ** np.arange(5))
    assert rep.monotone
    assert rep.errors[-1] < 1e-3


def test_specular_normal_incidence_exact():
    rep = specular_limit(SPEC, [0.0, 0.0, 1.0, 0.0], [0.1, 0.05])
    assert np.all(rep.errors < 1e-12)
    assert np.allclose(rep.ideal_direction, [-1.0, 0.0])


def test_specular_disc_45_degrees():
    spec = BilliardSpec(radius=0.5, d=0.2)
    c = np.array(spec.center)
    n = np.array([1.0, 1.0]) / np.sqrt(2)
    v = -(np.cos(np.pi / 4) * n + np.sin(np.pi / 4) * np.array([-n[1], n[0]]))
    rep = specular_limit(spec, [*(c + spec.radius * n - 0.5 * v), *v], 0.2 / 2.0 ** np.arange(5))
    assert rep.monotone
    assert rep.errors[-1] < rep.errors[0] / 4


def test_specular_validation():
    with pytest.raises(ContractViolation):
        specular_limit(SPEC, START, [0.01, 0.02])
    with pytest.raises(ConvergenceError):
        specular_limit(SPEC, [0.0, 0.0, 1.0, 0.0], [0.05], t_budget=0.1)


def test_lyapunov_disc_positive():
    res = lyapunov(SPEC, START, 1000.0)
    assert res.lambda_max > 5 * res.stderr
    assert res.block_estimates.size == 20


def test_lyapunov_rectangle_zero():
    res = lyapunov(BilliardSpec(radius=0.0), START, 1000.0)
    assert abs(res.lambda_max) < 3 * res.stderr


def test_lyapunov_stable_under_doubling():
    start = [0.1, 0.5, np.cos(2.0), np.sin(2.0)]
    a = lyapunov(SPEC, start, 1000.0)
    b = lyapunov(SPEC, start, 2000.0)
    assert abs(b.lambda_max - a.lambda_max) < 0.1 * a.lambda_max


def test_lyapunov_matches_hard_wall_estimate():
    # small d approaches the hard-wall billiard; both exponents are of the same size
    smooth = lyapunov(SPEC, START, 1000.0)
    hard = hard_wall_lyapunov(SPEC, START, 1000.0)
    assert hard > 0
    assert abs(smooth.lambda_max - hard) < 0.5 * hard


def test_lyapunov_needs_long_run():
    with pytest.raises(ContractViolation):
        lyapunov(SPEC, START, 50.0)


def test_classifier_separates_local_and_global():
    tr = simulate_billiard(SPEC, START, 100.0, 1e-4)
    assert {2, 4} <= tr.visited()
    labels = np.where(tr.corner, -1, tr.labels)
    probes = ProbeBatch(tr.times, tr.states[None], labels[None])
    H = lambda x: billiard_constants(SPEC, x.reshape(-1, 4))["H"].reshape(x.shape[:-1])
    assert classify_constant(H, None, probes).is_global
    px = classify_constant(lambda x: x[..., 2], None, probes, ignore_labels=(-1,))
    assert px.kind == "local"
    assert px.per_label[0] and px.per_label[1] and px.per_label[3]
    assert not px.per_label[2] and not px.per_label[4]
    assert len(px.jumps) > 0
