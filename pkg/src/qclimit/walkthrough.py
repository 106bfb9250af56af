"""End-to-end scenarios, one per stage of the quantum-to-classical route.

Each scenario returns a JSON-ready report: measured values, their targets and
a pass flag per check.
"""

import numpy as np

from .exceptions import SchemaError


def _check(value, target, ok) -> dict:
    return {"value": value, "target": target, "pass": bool(ok)}


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def moyal_scaling(hbars=None) -> float:
    """Slope of ``max|{q^3,p^3}_mb - {q^3,p^3}_pb|`` against hbar on a log-log scale."""
    from .phasespace import poisson_polynomial
    from .polynomial import Polynomial
    from .weylwigner import moyal_polynomial

    hbars = np.geomspace(1e-3, 1e-1, 7) if hbars is None else np.asarray(hbars)
    f, g = Polynomial.parse("q**3", 1), Polynomial.parse("p**3", 1)
    pb = poisson_polynomial(f, g)
    pts = np.stack(np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21), indexing="ij"), axis=-1)
    dev = [np.max(np.abs((moyal_polynomial(f, g, h) - pb).evaluate(pts))) for h in hbars]
    return loglog_slope(hbars, dev)


def commuting_star_scaling(hbars=None) -> float:
    """Slope of ``max|f*g - fg|`` against hbar for the commuting pair ``f = q^2 + p^2 = g``."""
    from .polynomial import Polynomial
    from .weylwigner import star_polynomial

    hbars = np.geomspace(1e-3, 1e-1, 7) if hbars is None else np.asarray(hbars)
    f = Polynomial.parse("q**2 + p**2", 1)
    pts = np.stack(np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21), indexing="ij"), axis=-1)
    dev = [np.max(np.abs((star_polynomial(f, f, h) - f * f).evaluate(pts))) for h in hbars]
    return loglog_slope(hbars, dev)


def phase_space(cfg) -> dict:
    from .phasespace import PhaseFunction, PhaseGrid
    from .weylwigner import oscillator_state, star_product, trace_pairing, weyl_quantize, wigner_symb

    hbar = cfg.get("hbar", 1.0)
    grid = PhaseGrid.square(1, 2.0, 33)
    q = PhaseFunction.from_polynomial("q", grid, hbar)
    p = PhaseFunction.from_polynomial("p", grid, hbar)
    comm = (star_product(q, p) - star_product(p, q)).exact_form
    dim, dq = 65, np.sqrt(2 * np.pi * hbar / 65)
    ground = oscillator_state(0, dim, dq, hbar=hbar)
    H = weyl_quantize("p**2/2 + q**2/2", dim, dq, hbar=hbar)
    energy = trace_pairing(ground, H)
    w1 = np.real(wigner_symb(oscillator_state(1, dim, dq, hbar=hbar), "state").values)
    checks = {
        "commutator_minus_i_hbar": _check(float(abs(comm.coefficient((0, 0)) - 1j * hbar)), 0.0,
                                          abs(comm.coefficient((0, 0)) - 1j * hbar) == 0 and comm.degree == 0),
        "moyal_poisson_slope": _check(moyal_scaling(), 2.0, abs(moyal_scaling() - 2) <= 0.1),
        "commuting_star_slope": _check(commuting_star_scaling(), 2.0, abs(commuting_star_scaling() - 2) <= 0.1),
        "ground_energy": _check(energy.classical, 0.5 * hbar, abs(energy.classical - 0.5 * hbar) <= 1e-4 * hbar),
        "trace_pairing_relative": _check(energy.relative, 1e-6, energy.relative <= 1e-6),
        "first_excited_min": _check(float(w1.min()), -0.01, w1.min() < -0.01),
    }
    return {"scenario": "phase-space", "checks": checks}


def decoherence(cfg) -> dict:
    from .vanhove import (OmegaGrid, decoherence_time, gaussian_decay, gaussian_profile, lorentzian_decoherence_time,
                          lorentzian_profile, profile_state, regular_part, singular_part, unit_observable)

    grid = OmegaGrid(20.0, 401)
    rho = profile_state(grid, gaussian_profile(0.5), width=2.0)
    obs = unit_observable(grid)
    t = np.linspace(0, 10, 201)
    r = np.abs(regular_part(rho, obs, t))
    r /= r[0]
    exact = gaussian_decay(t, 0.5)
    keep = exact >= 1e-3
    gauss_err = float(np.max(np.abs(r[keep] - exact[keep]) / exact[keep]))
    sing = [singular_part(rho, obs) for _ in range(3)]
    lgrid = OmegaGrid(100.0, 1001)
    lrho = profile_state(lgrid, lorentzian_profile(1.0), width=5.0)
    tl = decoherence_time(lrho, unit_observable(lgrid), 0.1).time
    tl_exact = lorentzian_decoherence_time(1.0, 0.1)
    checks = {
        "gaussian_envelope_relative": _check(gauss_err, 0.02, gauss_err <= 0.02),
        "singular_bit_identical": _check(len(set(sing)) == 1, True, len(set(sing)) == 1),
        "lorentzian_time_relative": _check(abs(tl - tl_exact) / tl_exact, 0.05, abs(tl - tl_exact) / tl_exact <= 0.05),
    }
    return {"scenario": "decoherence", "checks": checks, "lorentzian_time": tl, "lorentzian_exact": tl_exact}


def classical_limit(cfg) -> dict:
    from .classical import LevelChart, LevelSpec, classical_density, config_volume
    from .phasespace import PhaseGrid
    from .polynomial import Polynomial

    H = Polynomial.parse("p**2/2 + q**2/2", 1).compile()
    box = [(-2.0, 2.0), (-2.0, 2.0)]
    chart = LevelChart(0, box, [H])
    vol = config_volume(chart, [0.5], 200_000, cfg.get("seed", 0), 0.1)
    dens = classical_density([chart], [LevelSpec(0, (0.5,), 1.0)], [vol], 0.1, PhaseGrid.square(1, 2.0, 257))
    checks = {
        "normalization": _check(dens.normalization, 1.0, abs(dens.normalization - 1) <= 1e-3),
        "min_value": _check(dens.min_value, -1e-12, dens.min_value >= -1e-12),
        "volume_vs_2pi": _check(vol.volume, 2 * np.pi, abs(vol.volume - 2 * np.pi) <= 3 * vol.mc_error),
    }
    return {"scenario": "classical-limit", "checks": checks, "mc_error": vol.mc_error}


def frobenius_perron(cfg) -> dict:
    from .classical import LevelChart, LevelSpec, classical_density, config_volume, frobenius_perron_test
    from .phasespace import PhaseGrid
    from .polynomial import Polynomial

    Hq = Polynomial.parse("p**2/2 + q**4/4", 1)
    box = [(-2.0, 2.0), (-2.0, 2.0)]
    chart = LevelChart(0, box, [Hq.compile()])
    seed = cfg.get("seed", 0)
    specs = [LevelSpec(0, (0.3,), 0.5), LevelSpec(0, (0.8,), 0.5)]
    vols = [config_volume(chart, s.levels, 200_000, seed + k, 0.1) for k, s in enumerate(specs)]
    dens = classical_density([chart], specs, vols, 0.1, PhaseGrid.square(1, 2.0, 257))
    res = frobenius_perron_test(dens, box, Hq, (1.0, 10.0, 100.0), n=int(cfg.get("n", 100_000)), seed=seed)
    checks = {f"chi_square_p_t{t:g}": _check(r.p_value, 0.01, r.p_value > 0.01) for t, r in res.items()}
    return {"scenario": "frobenius-perron", "checks": checks}


def billiard(cfg) -> dict:
    from .billiard import BilliardSpec, lyapunov, simulate_billiard, specular_limit

    spec = BilliardSpec()
    start = [0.3, 0.1, np.cos(0.7), np.sin(0.7)]
    traj = simulate_billiard(spec, start, 1000.0, 1e-4, sample_every=10)
    table = traj.domain_table()
    checks = {"energy_drift": _check(traj.energy_drift, 1e-6, traj.energy_drift <= 1e-6),
              "five_domains": _check(sorted(traj.visited()), [0, 1, 2, 3, 4], traj.visited() == {0, 1, 2, 3, 4})}
    for label, row in table.items():
        tol = 1e-4 if label == 4 else 1e-5
        worst = max(v for k, v in row.items() if k != "visits")
        checks[f"D{label}_drift"] = _check(worst, tol, worst <= tol)
    wide = BilliardSpec(radius=0.5, d=0.2)
    c = np.array(wide.center)
    n = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4)])
    v = -(np.cos(np.pi / 4) * n + np.sin(np.pi / 4) * np.array([-n[1], n[0]]))
    spec_rep = specular_limit(wide, [*(c + wide.radius * n - 0.5 * v), *v], 0.2 / 2.0 ** np.arange(5))
    checks["specular_monotone"] = _check(spec_rep.errors.tolist(), "decreasing", spec_rep.monotone)
    chaos = lyapunov(spec, start, 1000.0)
    flat = lyapunov(BilliardSpec(radius=0.0), start, 1000.0)
    checks["lyapunov_disc"] = _check([chaos.lambda_max, chaos.stderr], "> 5 stderr",
                                     chaos.lambda_max > 5 * chaos.stderr)
    checks["lyapunov_rectangle"] = _check([flat.lambda_max, flat.stderr], "< 3 stderr",
                                          abs(flat.lambda_max) < 3 * flat.stderr)
    return {"scenario": "billiard", "checks": checks}


SCENARIOS = {"phase-space": phase_space, "decoherence": decoherence, "classical-limit": classical_limit,
             "frobenius-perron": frobenius_perron, "billiard": billiard}


def run(name: str, cfg: dict) -> dict:
    if name not in SCENARIOS:
        raise SchemaError(f"unknown walkthrough scenario {name!r}")
    report = SCENARIOS[name](cfg)
    report["pass"] = all(c["pass"] for c in report["checks"].values())
    return report
