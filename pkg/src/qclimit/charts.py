"""Local constants of motion, chart atlases and partitions of identity.

Constants are built by the method of characteristics: every node of a chart
grid is carried along the Hamiltonian flow (forwards or backwards, whichever
meets it first) to an axis-aligned initial hypersurface ``x[axis] = value``,
where a seed function supplies the value of the constant.

Atlases are tilings of a phase-space box by axis-aligned boxes. Bump
functions ramp smoothly across each shared face over a collar of half-width
``epsilon``; the chart domain ``D`` is its box shrunk by ``epsilon`` at
shared faces, and the frontier ``F`` is the collar around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import ContractViolation
from .phasespace import (
    HamiltonianField,
    PhaseFunction,
    PhaseGrid,
    gradient,
    grid_derivative,
    integrate_phase,
)
from .polynomial import Polynomial

DEFAULT_BRACKET_TOL = 1e-6
DEFAULT_LIPSCHITZ_CAP = 1e6


def _as_box(region) -> np.ndarray:
    box = np.asarray(region, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ContractViolation("region must be a list of (lo, hi) pairs with hi > lo")
    return box


def region_grid(region, counts) -> PhaseGrid:
    box = _as_box(region)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (box.shape[0],))
    return PhaseGrid(tuple(box[:, 0]), tuple(box[:, 1]), tuple(counts))


# ---------------------------------------------------------------------------
# characteristics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hypersurface:
    """Axis-aligned initial surface ``x[axis] = value``."""

    axis: int
    value: float = 0.0

    def distance(self, x):
        return x[..., self.axis] - self.value


def _rk4(field_: HamiltonianField, x, h):
    k1 = field_.vector_field(x)
    k2 = field_.vector_field(x + 0.5 * h * k1)
    k3 = field_.vector_field(x + 0.5 * h * k2)
    k4 = field_.vector_field(x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _march(field_, x0, surface: Hypersurface, box, direction, dt, t_max, newton_steps=4):
    """Flow points until they cross the surface; returns (hit points, times), NaN when not reached."""
    n = x0.shape[0]
    hits = np.full_like(x0, np.nan)
    times = np.full(n, np.nan)
    f0 = surface.distance(x0)
    on = f0 == 0
    hits[on] = x0[on]
    times[on] = 0.0
    idx = np.nonzero(~on)[0]
    x = x0[idx]
    f = f0[idx]
    t = 0.0
    tol = 1e-12 * np.maximum(1.0, np.abs(box).max(axis=1))
    h = direction * dt
    while idx.size and t < t_max:
        xn = _rk4(field_, x, h)
        fn = surface.distance(xn)
        crossed = (f * fn <= 0)
        if np.any(crossed):
            xc, fc, fnc = x[crossed], f[crossed], fn[crossed]
            tau = dt * fc / (fc - fnc)
            for _ in range(newton_steps):
                xt = _rk4(field_, xc, direction * tau[:, None])
                g = surface.distance(xt)
                v = direction * field_.vector_field(xt)[:, surface.axis]
                tau = np.clip(tau - g / v, 0.0, dt)
            xt = _rk4(field_, xc, direction * tau[:, None])
            hits[idx[crossed]] = xt
            times[idx[crossed]] = direction * (t + tau)
        outside = np.any((xn < box[:, 0] - tol) | (xn > box[:, 1] + tol), axis=1) & ~crossed
        keep = ~crossed & ~outside & np.all(np.isfinite(xn), axis=1)
        idx, x, f = idx[keep], xn[keep], fn[keep]
        t += dt
    return hits, times


@dataclass
class TransportResult:
    function: PhaseFunction
    valid: np.ndarray
    residual: float
    residual_location: Optional[np.ndarray]
    crossing_times: np.ndarray
    normal_speed_min: float

    @property
    def flagged(self) -> int:
        return int((~self.valid).sum())


def interior_stencil_mask(valid: np.ndarray, width: int = 2) -> np.ndarray:
    """Nodes whose full finite-difference stencil lies inside the valid set and away from edges."""
    structure = ndimage.generate_binary_structure(valid.ndim, 1)
    return ndimage.binary_erosion(valid, structure, iterations=width, border_value=0)


def bracket_residual(H, O: PhaseFunction, mask: np.ndarray, accuracy: int = 4):
    """max |{H, O}| over ``mask`` using exact H derivatives when available and finite differences for O."""
    grid = O.grid
    n = grid.n_dof
    vals = np.where(np.isfinite(O.values), O.values, 0.0)
    dO = [grid_derivative(vals, i, grid.spacing[i], grid.periodic[i], accuracy) for i in range(grid.ndim)]
    dH = _hamiltonian_gradient(H, grid, accuracy)
    br = sum(dH[j] * dO[n + j] - dH[n + j] * dO[j] for j in range(n))
    br = np.where(mask, np.abs(br), 0.0)
    if not mask.any():
        return 0.0, None, br
    k = np.unravel_index(np.argmax(br), br.shape)
    return float(br[k]), grid.nodes()[k], br


def _hamiltonian_gradient(H, grid: PhaseGrid, accuracy: int):
    field_ = H if isinstance(H, HamiltonianField) else HamiltonianField(H)
    if field_.grid is None:
        g = field_.grad(grid.nodes())
        return [g[..., i] for i in range(grid.ndim)]
    Hs = PhaseFunction(grid, field_.value(grid.nodes()))
    return gradient(Hs, accuracy)


def transport_constant(H, seed, region, surface: Hypersurface, counts=257, dt: float = 0.01,
                       t_max: float = 20.0, transversality_tol: float = 1e-8,
                       residual_accuracy: int = 4) -> TransportResult:
    """Solve ``{H, O} = 0`` on ``region`` by carrying every node to ``surface`` along the flow.

    ``seed`` is a callable on points ``(n, d)`` or a :class:`PhaseFunction`
    (evaluated by multilinear interpolation). Nodes whose characteristic
    leaves ``region`` before meeting the surface are NaN and marked invalid.
    The residual ``max |{H, O}|`` is reported over nodes whose difference
    stencil is entirely valid.
    """
    box = _as_box(region)
    field_ = H if isinstance(H, HamiltonianField) else HamiltonianField(H)
    if box.shape[0] != field_.ndim:
        raise ContractViolation("region dimension does not match the Hamiltonian")
    if not 0 <= surface.axis < field_.ndim:
        raise ContractViolation("hypersurface axis out of range")
    grid = region_grid(box, counts)
    nodes = grid.nodes().reshape(-1, grid.ndim)
    fwd, tf = _march(field_, nodes, surface, box, +1.0, dt, t_max)
    bwd, tb = _march(field_, nodes, surface, box, -1.0, dt, t_max)
    use_b = np.isnan(tf) | (~np.isnan(tb) & (np.abs(tb) < np.abs(tf)))
    hits = np.where(use_b[:, None], bwd, fwd)
    times = np.where(use_b, tb, tf)
    ok = ~np.isnan(times)
    speed = np.abs(field_.vector_field(hits[ok])[:, surface.axis]) if ok.any() else np.array([np.inf])
    if ok.any() and speed.min() < transversality_tol:
        raise ContractViolation(
            f"flow is tangent to the hypersurface x[{surface.axis}]={surface.value} "
            f"(normal speed {speed.min():.3g})"
        )
    values = np.full(nodes.shape[0], np.nan)
    if ok.any():
        values[ok] = np.real(seed.evaluate(hits[ok]) if isinstance(seed, PhaseFunction) else seed(hits[ok]))
    values = values.reshape(grid.shape)
    valid = ok.reshape(grid.shape)
    func = PhaseFunction(grid, values, trusted=valid)
    mask = interior_stencil_mask(valid)
    res, where, _ = bracket_residual(field_, func, mask, residual_accuracy)
    return TransportResult(func, valid, res, where, times.reshape(grid.shape), float(speed.min()))


# ---------------------------------------------------------------------------
# charts of involutive constants
# ---------------------------------------------------------------------------


@dataclass
class Chart:
    id: int
    box: np.ndarray
    frontier_width: float
    constants: list
    angles: Optional[list] = None
    residuals: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    @property
    def grid(self) -> PhaseGrid:
        return self.constants[0].grid


def build_involutive_set(H, seeds: Sequence, region, counts=257, chart_id: int = 0,
                         bracket_tol: float = DEFAULT_BRACKET_TOL, frontier_width: float = 0.0,
                         **transport_kwargs) -> Chart:
    """Transport one seed per extra constant and check that ``{H, O_1, ..., O_N}`` are in involution.

    ``seeds`` is a list of ``(Hypersurface, seed)`` pairs, ordered along the
    nested hypersurfaces. Every pairwise bracket is measured on the common
    valid interior; a pair above ``bracket_tol`` raises with its location.
    """
    box = _as_box(region)
    field_ = H if isinstance(H, HamiltonianField) else HamiltonianField(H)
    grid = region_grid(box, counts)
    H_on = PhaseFunction(grid, field_.value(grid.nodes()))
    constants = [H_on]
    valid = np.ones(grid.shape, dtype=bool)
    for surface, seed in seeds:
        res = transport_constant(field_, seed, box, surface, counts, **transport_kwargs)
        constants.append(res.function)
        valid &= res.valid
    mask = interior_stencil_mask(valid)
    k = len(constants)
    residuals = np.zeros((k, k))
    worst = (0.0, None, None)
    for a in range(k):
        for b in range(a + 1, k):
            r, where = _pair_bracket(field_, constants, a, b, mask)
            residuals[a, b] = residuals[b, a] = r
            if r > worst[0]:
                worst = (r, (a, b), where)
    if worst[0] > bracket_tol:
        raise ContractViolation(
            f"constants {worst[1]} not in involution: bracket {worst[0]:.3g} at {worst[2]}"
        )
    return Chart(chart_id, box, frontier_width, constants, residuals=residuals, valid=valid)


def _pair_bracket(field_, constants, a, b, mask, accuracy=4):
    if a == 0:
        r, where, _ = bracket_residual(field_, constants[b], mask, accuracy)
        return r, where
    f, g = constants[a], constants[b]
    grid = f.grid
    n = grid.n_dof
    fv = np.where(np.isfinite(f.values), f.values, 0.0)
    gv = np.where(np.isfinite(g.values), g.values, 0.0)
    df = [grid_derivative(fv, i, grid.spacing[i], False, accuracy) for i in range(grid.ndim)]
    dg = [grid_derivative(gv, i, grid.spacing[i], False, accuracy) for i in range(grid.ndim)]
    br = np.abs(sum(df[j] * dg[n + j] - df[n + j] * dg[j] for j in range(n)))
    br = np.where(mask, br, 0.0)
    if not mask.any():
        return 0.0, None
    k = np.unravel_index(np.argmax(br), br.shape)
    return float(br[k]), grid.nodes()[k]


@dataclass(frozen=True)
class LipschitzReport:
    bound: float
    ok: bool
    delta_ok: Optional[bool]
    delta_min: Optional[float] = None


def lipschitz_check(H, region=None, counts=65, cap: float = DEFAULT_LIPSCHITZ_CAP,
                    surface: Optional[Hypersurface] = None, delta_tol: float = 1e-8) -> LipschitzReport:
    """Bound the second derivatives of ``H`` on ``region``.

    ``H`` may be a polynomial-backed :class:`PhaseFunction` (exact Hessian), a
    sampled :class:`PhaseFunction` (finite differences on its grid), or a
    callable ``H(*coords)`` sampled on ``region`` with ``counts`` nodes per
    axis. Infinite samples (a singular potential hit exactly) give
    ``bound=inf``; NaN derivatives are an error. With ``surface`` given,
    ``delta_ok`` reports whether the normal component of the flow is nonzero
    at every sampled surface point.
    """
    if isinstance(H, Polynomial):
        H = PhaseFunction(region_grid(region, counts), exact_form=H)
    if isinstance(H, PhaseFunction):
        grid = H.grid if region is None else region_grid(region, counts)
        form = H.exact_form
        if form is not None:
            nodes = grid.nodes()
            hess = [np.real(form.derivative(i).derivative(j).evaluate(nodes))
                    for i in range(grid.ndim) for j in range(i, grid.ndim)]
            values = np.real(form.evaluate(nodes))
        else:
            if region is not None:
                raise ContractViolation("sampled Hamiltonians are checked on their own grid")
            values = np.real(H.values)
            hess = _fd_hessian(values, grid)
    elif callable(H):
        if region is None:
            raise ContractViolation("callable Hamiltonians need a region")
        grid = region_grid(region, counts)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            values = np.asarray(H(*grid.mesh()), dtype=float)
        hess = _fd_hessian(values, grid)
    else:
        raise ContractViolation("unsupported Hamiltonian type")

    if np.any(np.isinf(values)):
        bound = np.inf
    else:
        stack = np.stack([np.abs(h) for h in hess])
        if np.any(np.isnan(stack)):
            raise ContractViolation("non-finite second-derivative samples")
        bound = float(stack.max())
    ok = bool(np.isfinite(bound) and bound < cap)

    delta_ok, delta_min = None, None
    if surface is not None:
        nodes = grid.nodes().reshape(-1, grid.ndim)
        axis_nodes = grid.axis(surface.axis)
        pts = nodes.copy()
        pts[:, surface.axis] = surface.value
        if isinstance(H, PhaseFunction) and H.exact_form is not None:
            field_ = HamiltonianField(H)
            speed = np.abs(field_.vector_field(pts)[:, surface.axis])
        else:
            n = grid.n_dof
            j = surface.axis
            partner = j + n if j < n else j - n
            dH = _fd_gradient(values, grid)[partner]
            k = int(np.argmin(np.abs(axis_nodes - surface.value)))
            speed = np.abs(np.take(dH, k, axis=j)).ravel()
        delta_min = float(np.nanmin(speed))
        delta_ok = bool(delta_min > delta_tol)
    return LipschitzReport(bound, ok, delta_ok, delta_min)


def _fd_gradient(values, grid):
    with np.errstate(invalid="ignore"):
        return [grid_derivative(values, i, grid.spacing[i], grid.periodic[i]) for i in range(grid.ndim)]


def _fd_hessian(values, grid):
    first = _fd_gradient(values, grid)
    out = []
    with np.errstate(invalid="ignore"):
        for i in range(grid.ndim):
            for j in range(i, grid.ndim):
                out.append(grid_derivative(first[i], j, grid.spacing[j], grid.periodic[j]))
    return out


# ---------------------------------------------------------------------------
# partitions of identity
# ---------------------------------------------------------------------------


def _transition(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, with S(x) + S(1 - x) = 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class BumpFunction:
    chart_id: int
    box: np.ndarray
    epsilon: float
    shared_low: tuple
    shared_high: tuple

    def raw(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        out = np.ones(x.shape[:-1])
        eps = self.epsilon
        for i, (lo, hi) in enumerate(self.box):
            xi = x[..., i]
            if self.shared_low[i]:
                out = out * _transition((xi - (lo - eps)) / (2 * eps))
            else:
                out = out * (xi >= lo - 1e-15 * max(1.0, abs(lo)))
            if self.shared_high[i]:
                out = out * _transition(((hi + eps) - xi) / (2 * eps))
            else:
                out = out * (xi <= hi + 1e-15 * max(1.0, abs(hi)))
        return out

    def core(self) -> np.ndarray:
        """The chart domain D: the box shrunk by epsilon at shared faces."""
        core = self.box.copy()
        for i in range(core.shape[0]):
            if self.shared_low[i]:
                core[i, 0] += self.epsilon
            if self.shared_high[i]:
                core[i, 1] -= self.epsilon
        return core

    def collar(self) -> np.ndarray:
        """Outer box of the frontier zone F."""
        out = self.box.copy()
        for i in range(out.shape[0]):
            if self.shared_low[i]:
                out[i, 0] -= self.epsilon
            if self.shared_high[i]:
                out[i, 1] += self.epsilon
        return out


@dataclass
class Atlas:
    boxes: list
    bumps: list
    epsilon: float
    action_scale: float = 1.0
    hbar: Optional[float] = None
    charts: list = field(default_factory=list)

    @property
    def region(self) -> np.ndarray:
        b = np.stack(self.boxes)
        return np.stack([b[:, :, 0].min(axis=0), b[:, :, 1].max(axis=0)], axis=1)

    @property
    def ids(self) -> list:
        return [b.chart_id for b in self.bumps]

    @property
    def ratios(self) -> Optional[tuple]:
        if self.hbar is None:
            return None
        return (self.hbar / self.epsilon**2, self.epsilon**2 / self.action_scale)

    def bump_values(self, points) -> np.ndarray:
        """All bump values at ``points``, shape ``(n_charts,) + points.shape[:-1]``."""
        raw = np.stack([b.raw(points) for b in self.bumps])
        total = raw.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, raw / np.where(total > 0, total, 1.0), 0.0)

    def bump(self, chart_id: int, points) -> np.ndarray:
        return self.bump_values(points)[self._index(chart_id)]

    def _index(self, chart_id: int) -> int:
        try:
            return self.ids.index(chart_id)
        except ValueError:
            raise ContractViolation(f"unknown chart id {chart_id}") from None

    def partition_error(self, points) -> float:
        return float(np.max(np.abs(self.bump_values(points).sum(axis=0) - 1.0)))

    def chart_of(self, points) -> np.ndarray:
        """Index of the box containing each point (first match)."""
        x = np.asarray(points, dtype=float)
        out = np.full(x.shape[:-1], -1)
        for k, box in reversed(list(enumerate(self.boxes))):
            inside = np.all((x >= box[:, 0]) & (x <= box[:, 1]), axis=-1)
            out = np.where(inside, k, out)
        return out


def build_partition(boxes, epsilon: float, hbar: Optional[float] = None, action_scale: float = 1.0,
                    ids: Optional[Sequence[int]] = None, max_ratio: float = 0.1) -> Atlas:
    """Smooth partition of identity subordinate to a tiling by axis-aligned boxes."""
    boxes = [_as_box(b) for b in boxes]
    if not boxes:
        raise ContractViolation("an atlas needs at least one box")
    if not epsilon > 0:
        raise ContractViolation("epsilon must be positive")
    d = boxes[0].shape[0]
    if any(b.shape[0] != d for b in boxes):
        raise ContractViolation("boxes differ in dimension")
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            lo = np.maximum(boxes[a][:, 0], boxes[b][:, 0])
            hi = np.minimum(boxes[a][:, 1], boxes[b][:, 1])
            if np.all(hi - lo > 1e-12):
                raise ContractViolation(f"chart interiors {a} and {b} overlap")
    if hbar is not None:
        r1, r2 = hbar / epsilon**2, epsilon**2 / action_scale
        if not (r1 < max_ratio and r2 < max_ratio):
            raise ContractViolation(
                f"scale ordering hbar << eps^2 << S violated: hbar/eps^2={r1:.3g}, eps^2/S={r2:.3g}"
            )
    outer = np.stack([np.min([b[:, 0] for b in boxes], axis=0), np.max([b[:, 1] for b in boxes], axis=0)], axis=1)
    ids = list(range(len(boxes))) if ids is None else [int(i) for i in ids]
    bumps = []
    for cid, b in zip(ids, boxes):
        low = tuple(bool(b[i, 0] > outer[i, 0] + 1e-12) for i in range(d))
        high = tuple(bool(b[i, 1] < outer[i, 1] - 1e-12) for i in range(d))
        for i in range(d):
            shared = int(low[i]) + int(high[i])
            if shared and 2 * epsilon * shared > (b[i, 1] - b[i, 0]) * (1 - 1e-12):
                raise ContractViolation(
                    f"epsilon={epsilon} too large for chart {cid}: frontier zones would stack on axis {i}"
                )
        bumps.append(BumpFunction(cid, b, float(epsilon), low, high))
    return Atlas(boxes, bumps, float(epsilon), float(action_scale), hbar)


def grid_boxes(edges: Sequence[Sequence[float]]) -> list:
    """Tensor-product tiling from per-axis breakpoints."""
    import itertools

    per_axis = [list(zip(e[:-1], e[1:])) for e in edges]
    return [np.array(c) for c in itertools.product(*per_axis)]


def localize(A: PhaseFunction, atlas: Atlas, chart_id: int) -> PhaseFunction:
    """``A * B_i`` sampled on the grid of ``A``."""
    k = atlas._index(chart_id)
    B = atlas.bump_values(A.grid.nodes())[k]
    return A.with_values(A.values * B)


def overlap_integral(atlas: Atlas, a: int, b: int, count: int = 801) -> float:
    """Cross integral of the unit-normalised bumps of charts ``a`` and ``b``.

    Each normalisation integral uses a grid over the chart's collar box;
    the cross integral uses a grid over the intersection of the two collars,
    so the resolution follows epsilon.
    """
    ia, ib = atlas._index(a), atlas._index(b)
    ca, cb = atlas.bumps[ia].collar(), atlas.bumps[ib].collar()

    def norm(collar, k):
        g = region_grid(collar, count)
        B = atlas.bump_values(g.nodes())[k]
        return np.sqrt(integrate_phase(B**2, grid=g))

    lo = np.maximum(ca[:, 0], cb[:, 0])
    hi = np.minimum(ca[:, 1], cb[:, 1])
    if np.any(hi <= lo):
        return 0.0
    g = region_grid(np.stack([lo, hi], axis=1), count)
    vals = atlas.bump_values(g.nodes())
    cross = integrate_phase(vals[ia] * vals[ib], grid=g)
    return float(cross / (norm(ca, ia) * norm(cb, ib)))


def overlap_scaling(epsilons: Sequence[float], n_dof: int = 1, half_width: float = 1.0,
                    count: int = 201) -> tuple[float, np.ndarray]:
    """Fit the exponent of the corner overlap between diagonally opposite charts of a 2^d tiling.

    Returns ``(slope, overlaps)``; the joining zone is a cube of side
    ``2*epsilon`` in all ``2*n_dof`` phase-space directions, so the slope is ``2*n_dof``.
    """
    d = 2 * n_dof
    edges = [[-half_width, 0.0, half_width]] * d
    boxes = grid_boxes(edges)
    overlaps = []
    for eps in epsilons:
        atlas = build_partition(boxes, eps)
        overlaps.append(overlap_integral(atlas, 0, len(boxes) - 1, count))
    overlaps = np.array(overlaps)
    slope = np.polyfit(np.log(epsilons), np.log(overlaps), 1)[0]
    return float(slope), overlaps
