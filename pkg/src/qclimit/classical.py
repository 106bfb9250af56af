"""Classical statistical limit: configuration volumes, limit densities and ensembles.

Level-set deltas ``delta(H - w)`` are realised as normalised Gaussians of width
``eta``. Monte Carlo work is split into fixed-size chunks, each with its own
Philox stream spawned from the seed, so results do not depend on the number
of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .exceptions import ContractViolation
from .phasespace import HamiltonianField, PhaseFunction, PhaseGrid, flow_points, integrate_phase
from .polynomial import Polynomial

CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def _as_callable(f):
    if isinstance(f, str):
        f = Polynomial.parse(f, 1)
    if isinstance(f, Polynomial):
        fn = f.compile()
        return lambda x: np.real(fn(np.asarray(x, dtype=float)))
    if isinstance(f, PhaseFunction):
        return lambda x: np.real(f.evaluate(x))
    if callable(f):
        return f
    raise ContractViolation(f"cannot evaluate constant of type {type(f).__name__}")


@dataclass
class LevelChart:
    """A chart for level-set integrals: a box and its constants ``(H, P_1, ..., P_N)`` as callables on points."""

    id: int
    box: np.ndarray
    constants: list
    weight: Optional[Callable] = None

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float)
        self.constants = [_as_callable(c) for c in self.constants]
        if not self.constants:
            raise ContractViolation("a chart needs at least the Hamiltonian")

    @property
    def volume(self) -> float:
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    def values(self, x) -> np.ndarray:
        return np.stack([np.asarray(c(x), dtype=float) for c in self.constants], axis=-1)

    def weight_at(self, x) -> np.ndarray:
        inside = np.all((x >= self.box[:, 0]) & (x <= self.box[:, 1]), axis=-1).astype(float)
        if self.weight is None:
            return inside
        return inside * np.asarray(self.weight(x), dtype=float)

    @classmethod
    def from_chart(cls, chart, weight=None) -> "LevelChart":
        """Wrap a chart built from characteristics; constants are interpolated on its grid."""
        return cls(chart.id, chart.box, list(chart.constants), weight)


@dataclass(frozen=True)
class LevelSpec:
    chart_id: int
    levels: tuple
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise ContractViolation("level weights must be non-negative")
        object.__setattr__(self, "levels", tuple(float(v) for v in np.atleast_1d(self.levels)))


def check_specs(specs: Sequence[LevelSpec], tol: float = 1e-10):
    total = math.fsum(s.weight for s in specs)
    if abs(total - 1.0) > tol:
        raise ContractViolation(f"level weights sum to {total:.12g}, not 1")


@dataclass(frozen=True)
class MicroVolume:
    chart_id: int
    levels: tuple
    volume: float
    mc_error: float
    eta: float
    volume_half_eta: float = float("nan")

    @property
    def relative_error(self) -> float:
        return self.mc_error / self.volume


def gaussian(x, eta: float) -> np.ndarray:
    return np.exp(-0.5 * (np.asarray(x) / eta) ** 2) / (eta * np.sqrt(2 * np.pi))


# ---------------------------------------------------------------------------
# Monte Carlo machinery
# ---------------------------------------------------------------------------


def chunk_generators(seed: int, n: int):
    """Philox generators, one per fixed-size chunk of ``n`` samples."""
    n_chunks = max(1, -(-n // CHUNK))
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [CHUNK] * (n_chunks - 1) + [n - CHUNK * (n_chunks - 1)]
    return [(np.random.Generator(np.random.Philox(s)), size) for s, size in zip(seqs, sizes)]


def _map_chunks(fn, seed, n, workers):
    gens = chunk_generators(seed, n)
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda gs: fn(*gs), gens))
    return [fn(g, s) for g, s in gens]


def config_volume(chart: LevelChart, levels, samples: int = 200_000, seed: int = 0, eta: float = 0.05,
                  weight: Optional[Callable] = None, workers: int = 1) -> MicroVolume:
    """Monte Carlo measure of the level set ``{H = w, P_I = p_I}`` inside ``chart``.

    Estimates ``int_box prod_a N_eta(F_a - level_a) * weight`` by uniform
    sampling of the chart box; ``weight`` (default 1) multiplies the chart's
    own bump weight. Also returns the estimate at ``eta/2`` from the same
    samples.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if levels.size > len(chart.constants):
        raise ContractViolation("more levels than chart constants")
    box = chart.box
    lo, width = box[:, 0], box[:, 1] - box[:, 0]

    def work(rng, size):
        x = lo + width * rng.random((size, box.shape[0]))
        F = chart.values(x)[:, : levels.size]
        w = chart.weight_at(x)
        if weight is not None:
            w = w * np.asarray(weight(x), dtype=float)
        k1 = np.prod(gaussian(F - levels, eta), axis=1) * w
        k2 = np.prod(gaussian(F - levels, eta / 2), axis=1) * w
        return k1.sum(), (k1**2).sum(), k2.sum(), F.min(axis=0), F.max(axis=0)

    parts = _map_chunks(work, seed, samples, workers)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    h1 = math.fsum(p[2] for p in parts)
    fmin = np.min([p[3] for p in parts], axis=0)
    fmax = np.max([p[4] for p in parts], axis=0)
    if np.any(levels < fmin) or np.any(levels > fmax):
        raise ContractViolation(f"levels {levels} outside the range attained on chart {chart.id}")
    V = chart.volume
    mean = s1 / samples
    var = max(s2 / samples - mean**2, 0.0)
    vol = V * mean
    err = V * math.sqrt(var / samples)
    if not vol > 3 * err:
        raise ContractViolation(f"level set on chart {chart.id} is empty at this sample size")
    return MicroVolume(chart.id, tuple(float(v) for v in levels), vol, err, eta, V * h1 / samples)


def shell_volume(H: Callable, box, energy: float, eta: float, samples: int = 400_000, seed: int = 0):
    """Shell-counting estimate of ``int delta(H - E)``: box fraction with ``|H - E| < eta`` over ``2 eta``."""
    box = np.asarray(box, dtype=float)
    lo, width = box[:, 0], box[:, 1] - box[:, 0]
    V = float(np.prod(width))
    H = _as_callable(H)

    def work(rng, size):
        x = lo + width * rng.random((size, box.shape[0]))
        return float(np.count_nonzero(np.abs(H(x) - energy) < eta))

    hits = math.fsum(_map_chunks(work, seed, samples, 1))
    frac = hits / samples
    return V * frac / (2 * eta), V * math.sqrt(frac * (1 - frac) / samples) / (2 * eta)


# ---------------------------------------------------------------------------
# limit density
# ---------------------------------------------------------------------------


@dataclass
class ClassicalDensity:
    function: PhaseFunction
    eta: float
    raw_integral: float
    pdf: Callable = field(repr=False, default=None)

    @property
    def normalization(self) -> float:
        return float(integrate_phase(self.function))

    @property
    def min_value(self) -> float:
        return float(np.min(self.function.values))

    def evaluate(self, points) -> np.ndarray:
        return self.pdf(np.asarray(points, dtype=float)) / self.raw_integral


def _level_resolution(chart_map: dict, grid: PhaseGrid, specs, eta: float) -> float:
    """Largest change of a constant across one grid cell inside the smoothed level sets."""
    nodes = grid.nodes()
    worst = 0.0
    for spec in specs:
        levels = np.asarray(spec.levels)
        F = chart_map[spec.chart_id].values(nodes)[..., : levels.size]
        shell = np.all(np.abs(F - levels) < 3 * eta, axis=-1)
        for a in range(levels.size):
            for i in range(grid.ndim):
                step = np.abs(np.diff(F[..., a], axis=i))
                near = np.take(shell, np.arange(grid.shape[i] - 1), axis=i)
                if near.any():
                    worst = max(worst, float(np.max(step[near])))
    return worst


def _density_terms(charts: dict, specs, volumes: dict, eta: float):
    def pdf(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for spec in specs:
            chart = charts[spec.chart_id]
            vol = volumes[(spec.chart_id, spec.levels)]
            levels = np.asarray(spec.levels)
            F = chart.values(x)[..., : levels.size]
            out = out + spec.weight / vol.volume * np.prod(gaussian(F - levels, eta), axis=-1) * chart.weight_at(x)
        return out

    return pdf


def classical_density(charts: Sequence[LevelChart], specs: Sequence[LevelSpec], volumes: Sequence[MicroVolume],
                      eta: float, grid: PhaseGrid, check_resolution: bool = True) -> ClassicalDensity:
    """Limit density ``sum_i sum_specs (weight / C) N_eta(H - w) prod_I N_eta(P_I - p_I) B_i`` on ``grid``.

    The sampled density is renormalised to unit integral; the integral before
    renormalisation is kept as ``raw_integral``.
    """
    check_specs(specs)
    chart_map = {c.id: c for c in charts}
    vol_map = {}
    for v in volumes:
        vol_map[(v.chart_id, tuple(v.levels))] = v
    for s in specs:
        if s.chart_id not in chart_map:
            raise ContractViolation(f"spec refers to unknown chart {s.chart_id}")
        if (s.chart_id, s.levels) not in vol_map:
            raise ContractViolation(f"missing configuration volume for chart {s.chart_id} at levels {s.levels}")
    if check_resolution:
        res = _level_resolution(chart_map, grid, specs, eta)
        if eta < 2 * res:
            raise ContractViolation(f"eta={eta:.3g} under-resolved: constants change by {res:.3g} per grid cell")
    pdf = _density_terms(chart_map, specs, vol_map, eta)
    values = pdf(grid.nodes())
    raw = float(integrate_phase(values, grid=grid))
    if not raw > 0:
        raise ContractViolation("density vanishes on the grid")
    func = PhaseFunction(grid, values / raw)
    return ClassicalDensity(func, eta, raw, pdf)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    points: np.ndarray
    weights: np.ndarray
    seed: int
    time: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ContractViolation("ensemble weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ContractViolation("ensemble weights must sum to 1")

    @property
    def size(self) -> int:
        return self.points.shape[0]


def rejection_sample(pdf: Callable, box, n: int, seed: int = 0, envelope: Optional[float] = None,
                     probe: int = 200_000, min_efficiency: float = 1e-4) -> np.ndarray:
    """Draw ``n`` points from an unnormalised ``pdf`` on ``box`` by rejection."""
    box = np.asarray(box, dtype=float)
    lo, width = box[:, 0], box[:, 1] - box[:, 0]
    root = np.random.SeedSequence(seed)
    env_seq, draw_seq = root.spawn(2)
    if envelope is None:
        rng = np.random.Generator(np.random.Philox(env_seq))
        x = lo + width * rng.random((probe, box.shape[0]))
        envelope = 1.2 * float(np.max(pdf(x)))
    if not envelope > 0:
        raise ContractViolation("density is zero on the sampling box")
    rng = np.random.Generator(np.random.Philox(draw_seq))
    out, have, tried = [], 0, 0
    while have < n:
        x = lo + width * rng.random((CHUNK, box.shape[0]))
        u = rng.random(CHUNK) * envelope
        keep = x[u < pdf(x)]
        out.append(keep)
        have += keep.shape[0]
        tried += CHUNK
        if tried >= 20 * CHUNK and have / tried < min_efficiency:
            raise ContractViolation(f"rejection efficiency {have / tried:.2g} below {min_efficiency}")
    return np.concatenate(out)[:n]


def sample_trajectories(density: ClassicalDensity | Callable, box, n: int, t_end: float, seed: int = 0,
                        H=None, dt: float = 0.01, order: int = 2, flow: Optional[Callable] = None):
    """Initial and evolved ensembles drawn from the limit density.

    Evolution uses ``flow(points, t)`` when given (e.g. an exact action-angle
    map), otherwise the batched symplectic flow of the separable polynomial ``H``.
    """
    pdf = density.pdf if isinstance(density, ClassicalDensity) else density
    pts = rejection_sample(pdf, box, n, seed)
    w = np.full(n, 1.0 / n)
    start = Ensemble(pts, w, seed, 0.0)
    if t_end == 0:
        return start, Ensemble(pts.copy(), w.copy(), seed, 0.0)
    if flow is not None:
        moved = flow(pts, t_end)
    else:
        if H is None:
            raise ContractViolation("need a Hamiltonian or a flow map to evolve the ensemble")
        moved = flow_points(H, pts, t_end, dt, order)
    return start, Ensemble(moved, w.copy(), seed, float(t_end))


def action_angle_flow(frequency: Callable, n_dof: int = 1) -> Callable:
    """Exact flow on coordinates ``(theta_1..theta_n, J_1..J_n)``: theta += Omega(J) t mod 2 pi."""

    def flow(points, t):
        x = np.array(points, dtype=float)
        J = x[:, n_dof:]
        omega = np.asarray(frequency(J), dtype=float).reshape(x.shape[0], n_dof)
        x[:, :n_dof] = np.mod(x[:, :n_dof] + omega * t, 2 * np.pi)
        return x

    return flow


@dataclass(frozen=True)
class ChiSquare:
    statistic: float
    dof: int
    p_value: float
    bins_used: int


def binned_chi_square(samples: np.ndarray, expected_prob: np.ndarray, edges, min_expected: float = 5.0) -> ChiSquare:
    """Pearson chi-square of a histogram against bin probabilities (bins with expected < 5 pooled)."""
    counts, _ = np.histogramdd(samples, bins=edges)
    counts = counts.ravel()
    n = samples.shape[0]
    prob = np.asarray(expected_prob, dtype=float).ravel()
    prob = prob / prob.sum()
    exp = n * prob
    big = exp >= min_expected
    obs_b, exp_b = counts[big], exp[big]
    rest_o, rest_e = counts[~big].sum(), exp[~big].sum()
    if rest_e >= min_expected:
        obs_b = np.append(obs_b, rest_o)
        exp_b = np.append(exp_b, rest_e)
    else:
        # tiny leftover mass is folded into the comparison by rescaling
        exp_b = exp_b * obs_b.sum() / exp_b.sum()
    stat = float(np.sum((obs_b - exp_b) ** 2 / exp_b))
    dof = obs_b.size - 1
    return ChiSquare(stat, dof, float(stats.chi2.sf(stat, dof)), obs_b.size)


def bin_probabilities(pdf: Callable, edges, sub: int = 8) -> np.ndarray:
    """Integrate ``pdf`` over each histogram bin with a ``sub``-point midpoint rule per axis."""
    axes = []
    for e in edges:
        e = np.asarray(e, dtype=float)
        frac = (np.arange(sub) + 0.5) / sub
        pts = e[:-1, None] + np.diff(e)[:, None] * frac[None, :]
        axes.append(pts.ravel())
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = pdf(mesh)
    shape = []
    for e in edges:
        shape += [len(e) - 1, sub]
    vals = vals.reshape(shape)
    vol = np.prod([np.diff(e)[0] / sub for e in edges])
    for ax in range(len(edges) - 1, -1, -1):
        vals = vals.sum(axis=2 * ax + 1)
    return vals * vol


def frobenius_perron_test(density: ClassicalDensity | Callable, box, H=None, times=(1.0, 10.0, 100.0),
                          n: int = 100_000, bins: int = 32, seed: int = 0, dt: float = 0.01,
                          flow: Optional[Callable] = None, order: int = 2) -> dict:
    """Chi-square of the pushed-forward ensemble against the density at each time."""
    pdf = density.pdf if isinstance(density, ClassicalDensity) else density
    box = np.asarray(box, dtype=float)
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in box]
    prob = bin_probabilities(pdf, edges)
    pts = rejection_sample(pdf, box, n, seed)
    out = {}
    t_prev = 0.0
    for t in sorted(times):
        if flow is not None:
            pts = flow(pts, t - t_prev)
        else:
            pts = flow_points(H, pts, t - t_prev, dt, order)
        t_prev = t
        out[t] = binned_chi_square(pts, prob, edges)
    return out


# ---------------------------------------------------------------------------
# global and local constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Classification:
    kind: str
    drift: float
    drift_tol: float
    per_label: dict
    jumps: list
    transitions: int

    @property
    def is_global(self) -> bool:
        return self.kind == "global"


@dataclass
class ProbeBatch:
    """Probe trajectories: ``states[probe, time, coord]`` and optional chart ``labels[probe, time]``."""

    times: np.ndarray
    states: np.ndarray
    labels: Optional[np.ndarray] = None

    @classmethod
    def from_flow(cls, H, starts, t_end: float, dt: float, sample_every: int = 10, order: int = 4,
                  labeler: Optional[Callable] = None) -> "ProbeBatch":
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
        n_samples = int(round(t_end / (dt * sample_every)))
        field_ = HamiltonianField(H)
        states = [starts]
        x = starts
        for _ in range(n_samples):
            x = flow_points(field_, x, dt * sample_every, dt, order)
            states.append(x)
        states = np.stack(states, axis=1)
        times = np.arange(n_samples + 1) * dt * sample_every
        labels = labeler(states) if labeler is not None else None
        return cls(times, states, labels)


def _segments(labels_row):
    change = np.nonzero(np.diff(labels_row) != 0)[0] + 1
    bounds = np.concatenate([[0], change, [labels_row.size]])
    return [(labels_row[a], a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def classify_constant(F, H, probes: ProbeBatch, rel_tol: float = 1e-4, floor: float = 1e-5,
                      ignore_labels: Sequence = ()) -> Classification:
    """Classify ``F`` as a global (isolating) or local (chart-wise) constant along probe trajectories.

    ``drift_tol = max(rel_tol * range(F over probes), floor * max|F|)``, which
    is invariant under ``F -> c F``. ``F`` is global when no probe drifts by
    more than ``drift_tol``. Otherwise it is local when, for at least one chart
    label, ``F`` is constant on every segment spent in that chart; the
    per-label verdicts and the jumps between segments are reported.
    """
    Ff = _as_callable(F)
    vals = np.asarray(Ff(probes.states), dtype=float)
    scale = float(np.max(np.abs(vals)))
    spread = float(np.max(vals) - np.min(vals))
    drift_tol = max(rel_tol * spread, floor * scale, 1e-300)
    drift = float(np.max(np.abs(vals - vals[:, :1])))
    if drift <= drift_tol:
        return Classification("global", drift, drift_tol, {}, [], _transition_count(probes))
    if probes.labels is None:
        raise ContractViolation(
            f"F drifts by {drift:.3g} > {drift_tol:.3g} and no chart labels were given to test local conservation"
        )
    per_label: dict = {}
    jumps = []
    for k in range(vals.shape[0]):
        segs = _segments(probes.labels[k])
        prev_value = None
        for label, a, b in segs:
            label = int(label)
            if label in ignore_labels:
                continue
            seg = vals[k, a:b]
            conserved = float(np.max(seg) - np.min(seg)) <= drift_tol
            per_label[label] = per_label.get(label, True) and conserved
            if conserved:
                if prev_value is not None and abs(seg[0] - prev_value) > drift_tol:
                    jumps.append((float(probes.times[a]), k, float(prev_value), float(seg[0])))
                prev_value = seg[-1]
    if not any(per_label.values()):
        field_ = HamiltonianField(H) if not isinstance(H, HamiltonianField) else H
        rate = np.abs(np.diff(vals, axis=1)).max() / np.diff(probes.times).min()
        raise ContractViolation(
            f"F is not conserved in any chart (worst rate of change {rate:.3g})"
        )
    return Classification("local", drift, drift_tol, per_label, jumps, _transition_count(probes))


def _transition_count(probes: ProbeBatch) -> int:
    if probes.labels is None:
        return 0
    return int(np.min(np.count_nonzero(np.diff(probes.labels, axis=1) != 0, axis=1)))


def traced_equilibrium(functions: Sequence, classifications: Sequence[Classification], specs: Sequence[LevelSpec],
                       volumes: Sequence[MicroVolume], eta: float, grid: PhaseGrid,
                       box=None) -> ClassicalDensity:
    """Equilibrium depending only on the global constants ``functions = (H, G_1, ..., G_A)``.

    Every supplied function must be classified global; local constants
    cannot serve as thermodynamic variables and are refused.
    """
    if len(functions) != len(classifications):
        raise ContractViolation("one classification per function is required")
    for i, c in enumerate(classifications):
        if not c.is_global:
            raise ContractViolation(f"function {i} is a local constant and cannot define an equilibrium")
    if box is None:
        box = np.stack([grid.mins, grid.maxs], axis=1)
    chart = LevelChart(0, box, list(functions))
    specs = [LevelSpec(0, s.levels, s.weight) for s in specs]
    volumes = [MicroVolume(0, v.levels, v.volume, v.mc_error, v.eta, v.volume_half_eta) for v in volumes]
    return classical_density([chart], specs, volumes, eta, grid, check_resolution=False)


def microcanonical_density(H, energy: float, eta: float, grid: PhaseGrid, box=None, samples: int = 200_000,
                           seed: int = 0) -> ClassicalDensity:
    """``N_eta(H - E) / C(E)``, the smoothed microcanonical density on the energy shell."""
    if box is None:
        box = np.stack([grid.mins, grid.maxs], axis=1)
    chart = LevelChart(0, box, [H])
    vol = config_volume(chart, [energy], samples, seed, eta)
    return classical_density([chart], [LevelSpec(0, (energy,), 1.0)], [vol], eta, grid, check_resolution=False)
