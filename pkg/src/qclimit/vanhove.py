"""Van Hove states and observables over a continuous energy spectrum.

A kernel has a singular part ``K(w)_{i,m,m'}`` (supported on w = w') and a
regular part ``K(w, w')_{i,m,m'}``, sampled on a uniform energy grid and
indexed by chart ``i`` and discrete labels ``m``. Array layouts are
``singular[i, k, m, m']`` and ``regular[i, k, k', m, m']``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContractViolation, ConvergenceError, ResolutionError

PHASE_RESOLUTION = np.pi / 4


@dataclass(frozen=True)
class OmegaGrid:
    omega_max: float
    count: int

    def __post_init__(self):
        if not self.omega_max > 0:
            raise ContractViolation("omega_max must be positive")
        if int(self.count) < 2:
            raise ContractViolation("need at least two energy samples")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "omega_max", float(self.omega_max))

    @property
    def spacing(self) -> float:
        return self.omega_max / (self.count - 1)

    @property
    def omega(self) -> np.ndarray:
        return np.linspace(0.0, self.omega_max, self.count)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.count, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    @classmethod
    def with_spacing(cls, omega_max: float, spacing: float) -> "OmegaGrid":
        return cls(omega_max, int(round(omega_max / spacing)) + 1)


class VanHoveKernel:
    """Shared storage and validation for states and observables."""

    def __init__(self, grid: OmegaGrid, singular, regular=None, hbar: float = 1.0,
                 charts: Optional[Sequence[int]] = None):
        singular = np.array(singular, dtype=complex)
        if singular.ndim == 3:
            singular = singular[None]
        if singular.ndim != 4 or singular.shape[1] != grid.count or singular.shape[2] != singular.shape[3]:
            raise ContractViolation(f"singular kernel shape {singular.shape} does not fit (charts, {grid.count}, m, m)")
        n_charts, _, m, _ = singular.shape
        if regular is None:
            regular = np.zeros((n_charts, grid.count, grid.count, m, m), dtype=complex)
        regular = np.array(regular, dtype=complex)
        if regular.ndim == 4:
            regular = regular[None]
        if regular.shape != (n_charts, grid.count, grid.count, m, m):
            raise ContractViolation(f"regular kernel shape {regular.shape} does not match singular kernel")
        if not (np.all(np.isfinite(singular)) and np.all(np.isfinite(regular))):
            raise ContractViolation("kernel has non-finite entries")
        if not hbar > 0:
            raise ContractViolation("hbar must be positive")
        if charts is None:
            charts = list(range(n_charts))
        if len(charts) != n_charts:
            raise ContractViolation("chart labels do not match kernel")
        singular.setflags(write=False)
        regular.setflags(write=False)
        self.grid = grid
        self.singular = singular
        self.regular = regular
        self.hbar = float(hbar)
        self.charts = [int(c) for c in charts]

    @property
    def m_dim(self) -> int:
        return self.singular.shape[-1]

    @property
    def n_charts(self) -> int:
        return self.singular.shape[0]

    def _replace(self, singular=None, regular=None, charts=None):
        return type(self)(
            self.grid,
            self.singular if singular is None else singular,
            self.regular if regular is None else regular,
            self.hbar,
            self.charts if charts is None else charts,
        )

    def hermiticity_error(self) -> float:
        s = self.singular
        r = self.regular
        es = np.max(np.abs(s - np.conj(np.swapaxes(s, -1, -2))))
        er = np.max(np.abs(r - np.conj(np.transpose(r, (0, 2, 1, 4, 3)))))
        return float(max(es, er))

    def regular_l1(self) -> float:
        """Discrete L1 norm of the regular kernel."""
        w = self.grid.weights
        return float(np.einsum("k,l,iklmn->", w, w, np.abs(self.regular)))

    def boundary_magnitude(self) -> float:
        """Largest kernel magnitude at the truncation edge relative to the overall maximum."""
        top = max(np.max(np.abs(self.singular)), np.max(np.abs(self.regular)), 1e-300)
        edge = max(
            np.max(np.abs(self.singular[:, -1])),
            np.max(np.abs(self.regular[:, -1])),
            np.max(np.abs(self.regular[:, :, -1])),
        )
        return float(edge / top)

    def same_layout(self, other: "VanHoveKernel") -> bool:
        return (
            self.grid == other.grid
            and self.singular.shape == other.singular.shape
            and self.charts == other.charts
            and np.isclose(self.hbar, other.hbar, rtol=1e-12)
        )


class VanHoveObservable(VanHoveKernel):
    def is_self_adjoint(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.singular))), float(np.max(np.abs(self.regular))))
        return self.hermiticity_error() <= tol * scale


class VanHoveState(VanHoveKernel):
    """State kernel; construction validates Hermiticity, positivity of the diagonal and normalization."""

    def __init__(self, grid, singular, regular=None, hbar=1.0, charts=None, validate: bool = True):
        super().__init__(grid, singular, regular, hbar, charts)
        if validate:
            self.validate()

    def _replace(self, singular=None, regular=None, charts=None):
        return VanHoveState(
            self.grid,
            self.singular if singular is None else singular,
            self.regular if regular is None else regular,
            self.hbar,
            self.charts if charts is None else charts,
        )

    def total_probability(self) -> float:
        diag = np.einsum("ikmm->ik", self.singular).real
        return float(np.einsum("k,ik->", self.grid.weights, diag))

    def validate(self, tol: float = 1e-10):
        scale = max(1.0, float(np.max(np.abs(self.singular))), float(np.max(np.abs(self.regular))))
        err = self.hermiticity_error()
        if err > 1e-12 * scale:
            raise ContractViolation(f"state kernel is not Hermitian (error {err:.3g})")
        diag = np.einsum("ikmm->ikm", self.singular)
        if np.max(np.abs(diag.imag)) > 1e-12 * scale:
            raise ContractViolation("diagonal of the singular kernel is not real")
        if np.min(diag.real) < -1e-12 * scale:
            raise ContractViolation("diagonal of the singular kernel is negative")
        total = self.total_probability()
        if abs(total - 1.0) > tol:
            raise ContractViolation(f"total probability {total:.12g} differs from 1")

    @classmethod
    def normalized(cls, grid, singular, regular=None, hbar=1.0, charts=None) -> "VanHoveState":
        """Scale singular and regular kernels by the same factor so the total probability is 1."""
        raw = VanHoveState(grid, singular, regular, hbar, charts, validate=False)
        total = raw.total_probability()
        if not total > 0:
            raise ContractViolation("singular kernel carries no probability")
        return cls(grid, raw.singular / total, raw.regular / total, hbar, charts)


# ---------------------------------------------------------------------------
# mean values, evolution and weak limits
# ---------------------------------------------------------------------------


def _check_pair(rho: VanHoveKernel, obs: VanHoveKernel):
    if not rho.same_layout(obs):
        raise ContractViolation("state and observable use different grids, charts, labels or hbar")


def _check_resolution(grid: OmegaGrid, t: float, hbar: float):
    if grid.spacing * abs(t) / hbar > PHASE_RESOLUTION * (1 + 1e-12):
        raise ResolutionError(
            f"energy spacing {grid.spacing:.3g} too coarse for t={t:.3g}: "
            f"need spacing*|t|/hbar <= pi/4"
        )


def singular_part(rho: VanHoveKernel, obs: VanHoveKernel) -> complex:
    _check_pair(rho, obs)
    w = rho.grid.weights
    return complex(np.einsum("k,ikmn,ikmn->", w, np.conj(rho.singular), obs.singular))


def _regular_matrix(rho: VanHoveKernel, obs: VanHoveKernel) -> np.ndarray:
    w = rho.grid.weights
    M = np.einsum("iklmn,iklmn->kl", np.conj(rho.regular), obs.regular)
    return M * np.outer(w, w)


def regular_part(rho: VanHoveKernel, obs: VanHoveKernel, t) -> np.ndarray | complex:
    """Regular contribution ``sum conj(rho(w,w')) e^{i(w-w')t/hbar} O(w,w')`` at one or many times."""
    _check_pair(rho, obs)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    for s in (times.min(), times.max()):
        _check_resolution(rho.grid, s, rho.hbar)
    M = _regular_matrix(rho, obs)
    phase = np.exp(1j * np.outer(times, rho.grid.omega) / rho.hbar)
    vals = np.einsum("tk,kl,tl->t", phase, M, np.conj(phase))
    return complex(vals[0]) if np.ndim(t) == 0 else vals


def mean_value(rho: VanHoveState, obs: VanHoveObservable, t: float = 0.0) -> complex:
    """Mean value of ``obs`` in ``rho`` at time ``t`` by trapezoidal quadrature."""
    _check_pair(rho, obs)
    _check_resolution(rho.grid, t, rho.hbar)
    return singular_part(rho, obs) + regular_part(rho, obs, float(t))


def evolve(rho: VanHoveState, t: float) -> VanHoveState:
    """Time-evolved state, stored so that ``mean_value(evolve(rho, t), O, 0) == mean_value(rho, O, t)``.

    The regular kernel picks up ``exp(-i(w - w')t/hbar)``; the mean-value
    functional conjugates the state, which turns this into the
    ``exp(+i(w - w')t/hbar)`` factor of the pairing.
    """
    w = rho.grid.omega
    nu = w[:, None] - w[None, :]
    phase = np.exp(-1j * nu * t / rho.hbar)
    return rho._replace(regular=rho.regular * phase[None, :, :, None, None])


def weak_limit(rho: VanHoveState) -> VanHoveState:
    """Drop the regular kernel, keeping the singular part unchanged."""
    return rho._replace(regular=np.zeros_like(rho.regular))


@dataclass(frozen=True)
class DecoherenceResult:
    time: float
    threshold: float
    initial: float
    ladder: np.ndarray
    envelope: np.ndarray

    def __float__(self):
        return self.time


def decoherence_time(rho: VanHoveState, obs: VanHoveObservable, threshold: float = 0.1,
                     t0: Optional[float] = None, horizon: Optional[float] = None,
                     tol: float = 1e-4, samples: int = 64) -> DecoherenceResult:
    """First time the regular contribution's envelope drops below ``threshold`` of its t=0 size.

    The envelope at ``t`` is the largest ``|R(s)|`` for ``s >= t`` within the
    bracketing rung of a geometric time ladder (a running maximum from the
    right), so the crossing is not triggered by a transient zero of an
    oscillating signal. The crossing is then refined by bisection on ``|R|``.
    """
    if not 0 < threshold < 1:
        raise ContractViolation("threshold must lie in (0, 1)")
    hbar, grid = rho.hbar, rho.grid
    t_max = PHASE_RESOLUTION * hbar / grid.spacing
    horizon = t_max if horizon is None else min(horizon, t_max)
    r0 = abs(regular_part(rho, obs, 0.0))
    if r0 == 0:
        raise ContractViolation("regular contribution vanishes at t=0")
    level = threshold * r0
    t0 = horizon / 2**12 if t0 is None else t0
    ladder = [0.0]
    t = t0
    while True:
        t_hi = min(t, horizon)
        ts = np.linspace(ladder[-1], t_hi, samples + 1)
        env = np.abs(regular_part(rho, obs, ts))
        suffix = np.maximum.accumulate(env[::-1])[::-1]
        below = np.nonzero(suffix < level)[0]
        ladder.append(t_hi)
        if below.size:
            i = below[0]
            lo, hi = ts[max(i - 1, 0)], ts[i]
            while hi - lo > tol * hi:
                mid = 0.5 * (lo + hi)
                if abs(regular_part(rho, obs, mid)) < level:
                    hi = mid
                else:
                    lo = mid
            ts_all = np.array(ladder)
            return DecoherenceResult(0.5 * (lo + hi), threshold, r0, ts_all,
                                     np.abs(regular_part(rho, obs, ts_all)) / r0)
        if t_hi >= horizon:
            raise ConvergenceError(
                f"no decay below {threshold} detected up to t={horizon:.4g} "
                "(horizon limited by the energy resolution)"
            )
        t *= 2


# ---------------------------------------------------------------------------
# pointer basis and m-tracing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointerTransform:
    unitaries: np.ndarray
    eigenvalues: np.ndarray
    degenerate: np.ndarray

    def unitarity_error(self) -> float:
        U = self.unitaries
        eye = np.eye(U.shape[-1])
        return float(np.max(np.abs(U @ np.conj(np.swapaxes(U, -1, -2)) - eye)))

    def reconstruct(self) -> np.ndarray:
        U = self.unitaries
        return np.einsum("...ab,...b,...cb->...ac", U, self.eigenvalues, np.conj(U))


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    mags = np.abs(vecs)
    top = mags.max(axis=-2, keepdims=True)
    first = np.argmax(mags >= top * (1 - 1e-10), axis=-2)
    pivot = np.take_along_axis(vecs, first[..., None, :], axis=-2)
    return vecs * (np.conj(pivot) / np.abs(pivot))


def pointer_basis(rho: VanHoveState, degeneracy_tol: float = 1e-10) -> tuple[PointerTransform, VanHoveState]:
    """Diagonalise the singular kernel at every energy sample and chart.

    Eigenvalues are sorted in descending order (stable), and each eigenvector
    is rotated so that its first largest-magnitude component is real and
    positive. Columns inside a degenerate eigenspace are an arbitrary
    orthonormal choice and are flagged in ``degenerate``.
    """
    s = rho.singular
    scale = max(1.0, float(np.max(np.abs(s))))
    err = float(np.max(np.abs(s - np.conj(np.swapaxes(s, -1, -2)))))
    if err > 1e-8 * scale:
        raise ContractViolation(f"singular kernel not Hermitian (error {err:.3g})")
    herm = 0.5 * (s + np.conj(np.swapaxes(s, -1, -2)))
    vals, vecs = np.linalg.eigh(herm)
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    vecs = _fix_phases(vecs)
    gaps = np.abs(np.diff(vals, axis=-1)) <= degeneracy_tol * scale
    degenerate = np.zeros(vals.shape, dtype=bool)
    degenerate[..., 1:] |= gaps
    degenerate[..., :-1] |= gaps
    m = rho.m_dim
    new_singular = np.zeros_like(s)
    idx = np.arange(m)
    new_singular[..., idx, idx] = vals
    Uh = np.conj(np.swapaxes(vecs, -1, -2))
    new_regular = np.einsum("ikab,iklbc,ilcd->iklad", Uh, rho.regular, vecs)
    transform = PointerTransform(vecs, vals, degenerate)
    return transform, rho._replace(singular=new_singular, regular=new_regular)


def m_trace(rho: VanHoveState, split: tuple[int, int]) -> VanHoveState:
    """Trace out the ``m`` factor of a composite index ``n = r*m_dim + m`` and sum over charts.

    The result lives on a single chart (label 0) with ``r_dim`` labels.
    """
    r_dim, m_dim = (int(v) for v in split)
    if r_dim < 1 or m_dim < 1 or r_dim * m_dim != rho.m_dim:
        raise ContractViolation(f"cannot factor index dimension {rho.m_dim} as {r_dim} x {m_dim}")
    K = rho.grid.count
    c = rho.n_charts
    s = rho.singular.reshape(c, K, r_dim, m_dim, r_dim, m_dim)
    r = rho.regular.reshape(c, K, K, r_dim, m_dim, r_dim, m_dim)
    singular = np.einsum("ikambm->kab", s)[None]
    regular = np.einsum("iklambm->klab", r)[None]
    return VanHoveState(rho.grid, singular, regular, rho.hbar, [0])


# ---------------------------------------------------------------------------
# reference kernels
# ---------------------------------------------------------------------------


def profile_state(grid: OmegaGrid, nu_profile, center: Optional[float] = None, width: float = 1.0,
                  amplitude: float = 1.0, hbar: float = 1.0) -> VanHoveState:
    """Single-chart, ``m_dim=1`` state with regular kernel ``amplitude*A(W)*g(w - w')``.

    ``A`` is a unit-peak Gaussian in the mean energy ``W = (w + w')/2`` and the
    singular kernel is the normalised Gaussian ``A(w)``.
    """
    w = grid.omega
    center = 0.5 * grid.omega_max if center is None else center
    envelope = lambda x: np.exp(-((x - center) ** 2) / (2 * width**2))
    singular = envelope(w)
    singular = singular / np.sum(grid.weights * singular)
    W = 0.5 * (w[:, None] + w[None, :])
    nu = w[:, None] - w[None, :]
    regular = amplitude * envelope(W) * nu_profile(nu)
    return VanHoveState(grid, singular[None, :, None, None], regular[None, :, :, None, None], hbar)


def gaussian_profile(sigma: float):
    return lambda nu: np.exp(-(nu**2) / (2 * sigma**2))


def lorentzian_profile(gamma: float):
    return lambda nu: gamma / (np.pi * (nu**2 + gamma**2))


def unit_observable(grid: OmegaGrid, m_dim: int = 1, n_charts: int = 1, hbar: float = 1.0) -> VanHoveObservable:
    """Observable with identity blocks in both kernels."""
    eye = np.eye(m_dim)
    singular = np.broadcast_to(eye, (n_charts, grid.count, m_dim, m_dim))
    regular = np.broadcast_to(eye, (n_charts, grid.count, grid.count, m_dim, m_dim))
    return VanHoveObservable(grid, singular, regular, hbar)


def gaussian_decay(t, sigma: float, hbar: float = 1.0):
    return np.exp(-(sigma**2) * np.asarray(t) ** 2 / (2 * hbar**2))


def gaussian_decoherence_time(sigma: float, threshold: float, hbar: float = 1.0) -> float:
    return hbar / sigma * np.sqrt(2 * np.log(1 / threshold))


def lorentzian_decoherence_time(gamma: float, threshold: float, hbar: float = 1.0) -> float:
    return hbar / gamma * np.log(1 / threshold)
