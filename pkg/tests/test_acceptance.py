"""Acceptance suite: one test per criterion, each printing a single pass/fail line."""

import time

import numpy as np
import pytest

from qclimit import PhaseFunction, PhaseGrid, Polynomial
from qclimit.billiard import BilliardSpec, lyapunov, simulate_billiard, specular_limit
from qclimit.charts import (
    Hypersurface,
    build_involutive_set,
    build_partition,
    grid_boxes,
    lipschitz_check,
    overlap_scaling,
    transport_constant,
)
from qclimit.classical import (
    LevelChart,
    LevelSpec,
    ProbeBatch,
    binned_chi_square,
    classical_density,
    classify_constant,
    config_volume,
    frobenius_perron_test,
    rejection_sample,
    traced_equilibrium,
)
from qclimit.vanhove import (
    OmegaGrid,
    VanHoveState,
    decoherence_time,
    gaussian_decay,
    gaussian_profile,
    lorentzian_decoherence_time,
    lorentzian_profile,
    m_trace,
    pointer_basis,
    profile_state,
    regular_part,
    singular_part,
    unit_observable,
)
from qclimit.walkthrough import commuting_star_scaling, moyal_scaling
from qclimit.weylwigner import (
    OperatorMatrix,
    oscillator_state,
    star_polynomial,
    star_product,
    trace_pairing,
    weyl_quantize,
    wigner_symb,
)

HO = Polynomial.parse("p**2/2 + q**2/2")
HO2 = Polynomial.parse("p1**2/2 + q1**2/2 + p2**2/2 + q2**2/2", 2)


def _hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.conj().T


def _random_state(rng, grid, m):
    b = rng.normal(size=(1, grid.count, m, m)) + 1j * rng.normal(size=(1, grid.count, m, m))
    singular = b @ np.conj(np.swapaxes(b, -1, -2))
    r = rng.normal(size=(1, grid.count, grid.count, m, m)) + 1j * rng.normal(size=(1, grid.count, grid.count, m, m))
    regular = 0.1 * (r + np.conj(np.transpose(r, (0, 2, 1, 4, 3))))
    return VanHoveState.normalized(grid, singular, regular)


def _explicit_partial_trace(rho, r_dim, m_dim):
    K = rho.grid.count
    s = np.zeros((rho.n_charts, K, r_dim, r_dim), dtype=complex)
    reg = np.zeros((rho.n_charts, K, K, r_dim, r_dim), dtype=complex)
    for i in range(rho.n_charts):
        for a in range(r_dim):
            for b in range(r_dim):
                for m in range(m_dim):
                    s[i, :, a, b] += rho.singular[i, :, a * m_dim + m, b * m_dim + m]
                    reg[i, :, :, a, b] += rho.regular[i, :, :, a * m_dim + m, b * m_dim + m]
    return s, reg


def test_01_canonical_deformation(criterion):
    t0 = time.perf_counter()
    worst_poly, worst_grid = 0.0, 0.0
    q, p = Polynomial.parse("q"), Polynomial.parse("p")
    for hbar in (0.01, 0.1, 1.0):
        comm = star_polynomial(q, p, hbar) - star_polynomial(p, q, hbar)
        exact = comm.degree == 0 and comm.coefficient((0, 0)) == 1j * hbar
        worst_poly = max(worst_poly, 0.0 if exact else np.inf)
        # sampled values only, so the grid backend is exercised
        grid = PhaseGrid.square(1, 2.0, 33)
        Q, P = grid.mesh()
        fq, fp = PhaseFunction(grid, Q.copy(), hbar=hbar), PhaseFunction(grid, P.copy(), hbar=hbar)
        c = (star_product(fq, fp) - star_product(fp, fq)).values
        worst_grid = max(worst_grid, float(np.max(np.abs(c - 1j * hbar)) / hbar))
    elapsed = time.perf_counter() - t0
    ok = worst_poly == 0 and worst_grid <= 1e-8 and elapsed < 1.0
    criterion(1, ok, f"polynomial exact={worst_poly == 0}, grid rel err={worst_grid:.2e}, {elapsed:.2f}s")
    assert ok


def test_02_classical_limit_scaling(criterion):
    t0 = time.perf_counter()
    s_mb, s_star = moyal_scaling(), commuting_star_scaling()
    elapsed = time.perf_counter() - t0
    ok = abs(s_mb - 2) <= 0.1 and abs(s_star - 2) <= 0.1 and elapsed < 10
    criterion(2, ok, f"moyal-poisson slope={s_mb:.4f}, commuting star slope={s_star:.4f}, {elapsed:.2f}s")
    assert ok


def test_03_trace_pairing(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    dim, hbar = 65, 1.0
    dq = np.sqrt(2 * np.pi * hbar / dim)
    worst = 0.0
    for _ in range(20):
        a = OperatorMatrix(_hermitian(rng, dim), dq, 0.0, hbar)
        b = OperatorMatrix(_hermitian(rng, dim), dq, 0.0, hbar)
        worst = max(worst, trace_pairing(a, b).relative)
    energy = trace_pairing(oscillator_state(0, dim, dq, hbar=hbar), weyl_quantize("p**2/2 + q**2/2", dim, dq, hbar=hbar))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and abs(energy.classical - 0.5 * hbar) <= 1e-4 and elapsed < 30
    criterion(3, ok, f"worst pairing rel={worst:.2e}, ground <H>={energy.classical:.10f}, {elapsed:.2f}s")
    assert ok


def test_04_self_induced_decoherence(criterion):
    t0 = time.perf_counter()
    sigma = 0.5
    grid = OmegaGrid(20.0, 401)
    rho = profile_state(grid, gaussian_profile(sigma), width=2.0)
    obs = unit_observable(grid)
    t = np.linspace(0, 10, 201)
    r = np.abs(regular_part(rho, obs, t))
    r /= r[0]
    exact = gaussian_decay(t, sigma)
    keep = exact >= 1e-3
    gauss_err = float(np.max(np.abs(r[keep] - exact[keep]) / exact[keep]))
    sing = {singular_part(rho, obs) for _ in range(5)}
    lgrid = OmegaGrid(100.0, 1001)
    lrho = profile_state(lgrid, lorentzian_profile(1.0), width=5.0)
    tl = decoherence_time(lrho, unit_observable(lgrid), 0.1).time
    tl_exact = lorentzian_decoherence_time(1.0, 0.1)
    lor_err = abs(tl - tl_exact) / tl_exact
    elapsed = time.perf_counter() - t0
    ok = gauss_err <= 0.02 and len(sing) == 1 and lor_err <= 0.05 and elapsed < 60
    criterion(4, ok, f"gaussian rel={gauss_err:.2e} (to amplitude {exact[keep].min():.1e}), singular identical="
                     f"{len(sing) == 1}, lorentzian rel={lor_err:.2e}, {elapsed:.2f}s")
    assert ok


def test_05_pointer_basis(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    grid = OmegaGrid(2.0, 64)
    worst = 0.0
    for m in (1, 2, 3, 4):
        rho = _random_state(rng, grid, m)
        tr, new = pointer_basis(rho)
        worst = max(worst, float(np.max(np.abs(tr.reconstruct() - rho.singular))))
        new.validate()
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    criterion(5, ok, f"64 samples, m_dim 1..4, worst reconstruction={worst:.2e}, states valid, {elapsed:.2f}s")
    assert ok


def test_06_characteristics(criterion):
    t0 = time.perf_counter()
    free = transport_constant(Polynomial.parse("p**2/2"), lambda x: x[:, 1], [[-1, 1], [0.5, 1.5]],
                              Hypersurface(0, 0.0), counts=257)
    ho = transport_constant(HO, lambda x: x[:, 1], [[-0.5, 0.5], [1.0, 2.0]], Hypersurface(0, 0.0), counts=257)
    # 257 nodes per axis is out of reach in four dimensions; 33 per axis is used instead
    sep = build_involutive_set(HO2, [(Hypersurface(0, 0.0), lambda x: x[:, 2]),
                                     (Hypersurface(1, 0.0), lambda x: x[:, 3])],
                               [[-0.3, 0.3], [-0.3, 0.3], [1.0, 1.5], [1.0, 1.5]], counts=33)
    sep_res = float(sep.residuals.max())
    near = lipschitz_check(lambda q1, q2, p1, p2: (p1**2 + p2**2) / 2 + 1 / (q1 - q2),
                           [[0.001, 0.1], [-0.1, -0.001], [-1, 1], [-1, 1]], counts=9)
    smooth = lipschitz_check(Polynomial.parse("p1**2/2 + p2**2/2 + (q1 - q2)**2", 2), [[-1, 1]] * 4, counts=5)
    elapsed = time.perf_counter() - t0
    ok = (max(free.residual, ho.residual, sep_res) <= 1e-6 and not near.ok and smooth.ok and elapsed < 120)
    criterion(6, ok, f"residuals free={free.residual:.1e} ho={ho.residual:.1e} 2dof(33^4)={sep_res:.1e}, "
                     f"collision rejected={not near.ok}, alpha=2 accepted={smooth.ok}, {elapsed:.1f}s")
    assert ok


def test_07_partition_and_overlap(criterion):
    t0 = time.perf_counter()
    atlas = build_partition(grid_boxes([[-1, -0.2, 0.3, 1], [-1, 0.1, 1]]), 0.05)
    pts = np.random.default_rng(7).uniform(-1, 1, (10_000, 2))
    err = atlas.partition_error(pts)
    slope, _ = overlap_scaling([0.025, 0.05, 0.1, 0.2], n_dof=1)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and abs(slope - 2) <= 0.2 and elapsed < 60
    criterion(7, ok, f"|sum B - 1|={err:.1e}, overlap exponent={slope:.3f}, {elapsed:.2f}s")
    assert ok


def test_08_classical_density(criterion):
    t0 = time.perf_counter()
    box = [(-2.0, 2.0), (-2.0, 2.0)]
    chart = LevelChart(0, box, [HO])
    vol = config_volume(chart, [0.5], 200_000, 0, 0.1)
    dens = classical_density([chart], [LevelSpec(0, (0.5,), 1.0)], [vol], 0.1, PhaseGrid.square(1, 2.0, 257))

    # sector charts split the circle at angle theta; a non-uniform weight f is averaged on each
    theta, E, eta, n = 2.0, 0.5, 0.05, 400_000
    ang = lambda x: np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
    f = lambda x: 1 + 0.5 * np.cos(ang(x)) + 0.3 * np.sin(2 * ang(x))
    inner = lambda x: (ang(x) < theta).astype(float)
    outer = lambda x: 1 - inner(x)
    means, errs = [], []
    for k, c in enumerate([chart, LevelChart(1, box, [HO], inner), LevelChart(2, box, [HO], outer)]):
        num = config_volume(c, [E], n, 10 + 2 * k, eta, weight=f)
        den = config_volume(c, [E], n, 11 + 2 * k, eta)
        r = num.volume / den.volume
        means.append(r)
        errs.append(r * np.hypot(num.relative_error, den.relative_error))
    lhs = 2 * np.pi * means[0]
    rhs = theta * means[1] + (2 * np.pi - theta) * means[2]
    sigma = np.sqrt((2 * np.pi * errs[0]) ** 2 + (theta * errs[1]) ** 2 + ((2 * np.pi - theta) * errs[2]) ** 2)

    dim = 65
    dq = np.sqrt(2 * np.pi / dim)
    w1 = float(np.min(np.real(wigner_symb(oscillator_state(1, dim, dq), "state").values)))
    elapsed = time.perf_counter() - t0
    ok = (dens.min_value >= -1e-12 and abs(dens.normalization - 1) <= 1e-3 and abs(lhs - rhs) <= 3 * sigma
          and w1 < -0.01 and elapsed < 120)
    criterion(8, ok, f"min={dens.min_value:.1e}, integral={dens.normalization:.6f}, sector gap="
                     f"{abs(lhs - rhs) / sigma:.2f} sigma, first-excited min={w1:.4f}, {elapsed:.1f}s")
    assert ok


def test_09_frobenius_perron(criterion):
    t0 = time.perf_counter()
    Hq = Polynomial.parse("p**2/2 + q**4/4")
    box = [(-2.0, 2.0), (-2.0, 2.0)]
    chart = LevelChart(0, box, [Hq.compile()])
    specs = [LevelSpec(0, (0.3,), 0.5), LevelSpec(0, (0.8,), 0.5)]
    vols = [config_volume(chart, s.levels, 200_000, k, 0.1) for k, s in enumerate(specs)]
    dens = classical_density([chart], specs, vols, 0.1, PhaseGrid.square(1, 2.0, 257))
    res = frobenius_perron_test(dens, box, Hq, (1.0, 10.0, 100.0), n=100_000, bins=32, seed=0)
    elapsed = time.perf_counter() - t0
    ok = all(r.p_value > 0.01 for r in res.values()) and elapsed < 300
    pv = ", ".join(f"t={t:g}: p={r.p_value:.3f}" for t, r in res.items())
    criterion(9, ok, f"{pv}, {elapsed:.1f}s")
    assert ok


def test_10_sinai_billiard(criterion):
    t0 = time.perf_counter()
    spec = BilliardSpec()
    start = [0.3, 0.1, np.cos(0.7), np.sin(0.7)]
    traj = simulate_billiard(spec, start, 1000.0, 1e-4, sample_every=10)
    table = traj.domain_table()
    worst_flat = max(v for lab, row in table.items() if lab != 4 for k, v in row.items() if k != "visits")
    worst_disc = max(v for k, v in table[4].items() if k != "visits")

    wide = BilliardSpec(radius=0.5, d=0.2)
    c = np.array(wide.center)
    n = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4)])
    v = -(np.cos(np.pi / 4) * n + np.sin(np.pi / 4) * np.array([-n[1], n[0]]))
    specular = specular_limit(wide, [*(c + wide.radius * n - 0.5 * v), *v], 0.2 / 2.0 ** np.arange(5))

    chaos = lyapunov(spec, start, 1000.0)
    flat = lyapunov(BilliardSpec(radius=0.0), start, 1000.0)
    elapsed = time.perf_counter() - t0
    ok = (traj.visited() == {0, 1, 2, 3, 4} and worst_flat <= 1e-5 and worst_disc <= 1e-4 and specular.monotone
          and chaos.lambda_max > 5 * chaos.stderr and abs(flat.lambda_max) < 3 * flat.stderr
          and traj.energy_drift <= 1e-6 and elapsed < 600)
    criterion(10, ok, f"domains={sorted(traj.visited())}, drift flat={worst_flat:.1e} disc={worst_disc:.1e}, "
                      f"specular monotone={specular.monotone}, lambda disc={chaos.lambda_max:.3f}"
                      f"+-{chaos.stderr:.3f}, rectangle={flat.lambda_max:.4f}+-{flat.stderr:.4f}, "
                      f"energy drift={traj.energy_drift:.1e}, {elapsed:.1f}s")
    assert ok


def test_11_m_tracing(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for split in [(2, 3), (3, 2), (1, 6), (6, 1)]:
        rho = _random_state(rng, OmegaGrid(1.0, 6), 6)
        out = m_trace(rho, split)
        s, reg = _explicit_partial_trace(rho, *split)
        worst = max(worst, float(np.max(np.abs(out.singular - s))), float(np.max(np.abs(out.regular - reg))))

    # equilibrium built from the energy alone, checked on the shell of a 2-dof isotropic oscillator
    probes = ProbeBatch.from_flow(HO2, [[1.0, 0.0, 0.0, 0.5], [0.2, -0.4, 0.3, 0.1]], 10.0, 1e-3)
    cls = classify_constant(HO2, HO2, probes)
    box = [(-1.6, 1.6)] * 4
    E, eta = 0.5, 0.03
    vol = config_volume(LevelChart(0, box, [HO2]), [E], 400_000, 0, eta)
    eq = traced_equilibrium([HO2], [cls], [LevelSpec(0, (E,), 1.0)], [vol], eta,
                            PhaseGrid.square(2, 1.6, 9), box=box)
    pts = rejection_sample(eq.evaluate, box, 40_000, seed=1)
    J1 = 0.5 * (pts[:, 0] ** 2 + pts[:, 2] ** 2)
    J2 = 0.5 * (pts[:, 1] ** 2 + pts[:, 3] ** 2)
    # a uniform measure on the 3-sphere has uniform action share and uniform first angle
    share = J1 / (J1 + J2)
    angle = np.mod(np.arctan2(pts[:, 2], pts[:, 0]), 2 * np.pi)
    edges = [np.linspace(0, 1, 17), np.linspace(0, 2 * np.pi, 17)]
    chi = binned_chi_square(np.column_stack([share, angle]), np.full((16, 16), 1 / 256), edges)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and cls.is_global and chi.p_value > 0.01 and elapsed < 60
    criterion(11, ok, f"partial trace err={worst:.1e}, energy global={cls.is_global}, "
                      f"shell flatness p={chi.p_value:.3f}, {elapsed:.1f}s")
    assert ok
