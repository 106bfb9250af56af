"""Sinai billiard with smoothed walls: potential, domains, dynamics and chaos diagnostics.

The hard walls sit at ``x = +-lx``, ``y = +-ly`` and on the circle ``|q - c| = R``.
Each is replaced by a barrier of width ``d`` on the accessible side, with
profile ``V(s) = V0 (s/d)^4 / (1 - s/d)^2`` in the penetration depth ``s``, so
the barrier vanishes smoothly at its outer edge and diverges on the hard wall.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .exceptions import ContractViolation, ConvergenceError
from .phasespace import Trajectory, _composition


class DomainLabel(IntEnum):
    D0 = 0  # interior
    D1 = 1  # lower wall
    D2 = 2  # vertical walls
    D3 = 3  # upper wall
    D4 = 4  # disc wall


# wall order inside the kernels: bottom, top, left, right, disc
_WALL_LABELS = np.array([1, 3, 2, 2, 4])

# constants conserved in each domain, by name
DOMAIN_CONSTANTS = {0: ("H", "Px"), 1: ("H", "Px"), 2: ("H", "Py"), 3: ("H", "Px"), 4: ("H", "Ptheta")}


@dataclass(frozen=True)
class BilliardSpec:
    """Rectangle ``[-lx, lx] x [-ly, ly]`` with a disc of radius ``radius`` centred at ``center``.

    ``center`` defaults to the lower-left corner. ``radius = 0`` removes the
    disc (the integrable rectangle). The barrier height scale is
    ``1e3 * energy_scale``.
    """

    lx: float = 1.0
    ly: float = 1.0
    radius: float = 0.25
    d: float = 0.05
    energy_scale: float = 0.5
    center: Optional[tuple] = None
    mass: float = 1.0

    def __post_init__(self):
        if self.lx <= 0 or self.ly <= 0:
            raise ContractViolation("rectangle half-widths must be positive")
        if self.d <= 0:
            raise ContractViolation("wall width d must be positive")
        if self.radius < 0 or self.radius >= min(self.lx, self.ly):
            raise ContractViolation("disc radius must satisfy 0 <= R < min(lx, ly)")
        if self.radius > 0 and self.d >= self.radius / 2:
            raise ContractViolation("wall width must satisfy d < R/2")
        if self.d >= min(self.lx, self.ly) / 2:
            raise ContractViolation("wall width too large for the rectangle")
        if self.energy_scale <= 0:
            raise ContractViolation("energy scale must be positive")
        if self.mass != 1.0:
            raise ContractViolation("only unit mass is supported")
        if self.center is None:
            object.__setattr__(self, "center", (-self.lx, -self.ly))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def v0(self) -> float:
        return 1e3 * self.energy_scale

    @property
    def has_disc(self) -> bool:
        return self.radius > 0

    def with_d(self, d: float) -> "BilliardSpec":
        return BilliardSpec(self.lx, self.ly, self.radius, d, self.energy_scale, self.center, self.mass)

    def params(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.radius, self.center[0], self.center[1], self.d, self.v0,
                         1.0 if self.has_disc else 0.0])


# ---------------------------------------------------------------------------
# compiled wall model
# ---------------------------------------------------------------------------


@njit(cache=True)
def _profile(s, d, v0):
    """Barrier value and first two derivatives at penetration ``s``."""
    if s <= 0.0:
        return 0.0, 0.0, 0.0
    if s >= d:
        return np.inf, np.inf, np.inf
    u = s / d
    w = 1.0 - u
    v = v0 * u ** 4 / w ** 2
    dv = v0 * u ** 3 * (4.0 - 2.0 * u) / w ** 3 / d
    d2v = 2.0 * v0 * u ** 2 * (6.0 - 4.0 * u + u * u) / w ** 4 / (d * d)
    return v, dv, d2v


@njit(cache=True)
def _penetrations(x, y, prm, out):
    lx, ly, R, cx, cy, d = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    out[0] = (-ly + d) - y
    out[1] = y - (ly - d)
    out[2] = (-lx + d) - x
    out[3] = x - (lx - d)
    if prm[7] > 0.0:
        out[4] = R + d - np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    else:
        out[4] = -1.0


@njit(cache=True)
def _potential(x, y, prm):
    d, v0 = prm[5], prm[6]
    s = np.empty(5)
    _penetrations(x, y, prm, s)
    total = 0.0
    for k in range(5):
        total += _profile(s[k], d, v0)[0]
    return total


@njit(cache=True)
def _force(x, y, prm):
    """Return ``-grad V`` at ``(x, y)``."""
    lx, ly, R, cx, cy, d, v0 = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    fx = 0.0
    fy = 0.0
    fy -= -_profile((-ly + d) - y, d, v0)[1]
    fy -= _profile(y - (ly - d), d, v0)[1]
    fx -= -_profile((-lx + d) - x, d, v0)[1]
    fx -= _profile(x - (lx - d), d, v0)[1]
    if prm[7] > 0.0:
        rx = x - cx
        ry = y - cy
        r = np.sqrt(rx * rx + ry * ry)
        dv = _profile(R + d - r, d, v0)[1]
        if dv != 0.0:
            # dV/dr = -V'(s); force = -dV/dr * r_hat
            fx += dv * rx / r
            fy += dv * ry / r
    return fx, fy


@njit(cache=True)
def _hessian(x, y, prm):
    lx, ly, R, cx, cy, d, v0 = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    hxx = _profile((-lx + d) - x, d, v0)[2] + _profile(x - (lx - d), d, v0)[2]
    hyy = _profile((-ly + d) - y, d, v0)[2] + _profile(y - (ly - d), d, v0)[2]
    hxy = 0.0
    if prm[7] > 0.0:
        rx = x - cx
        ry = y - cy
        r = np.sqrt(rx * rx + ry * ry)
        _, dv, d2v = _profile(R + d - r, d, v0)
        if dv != 0.0:
            ux = rx / r
            uy = ry / r
            # f(r) = V(R + d - r): f' = -dv, f'' = d2v
            fp = -dv / r
            hxx += d2v * ux * ux + fp * (1.0 - ux * ux)
            hyy += d2v * uy * uy + fp * (1.0 - uy * uy)
            hxy += d2v * ux * uy - fp * ux * uy
    return hxx, hxy, hyy


@njit(cache=True)
def _run(state, dt, n_samples, every, prm, weights):
    out = np.empty((n_samples + 1, 4))
    x, y, px, py = state[0], state[1], state[2], state[3]
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = px
    out[0, 3] = py
    fx, fy = _force(x, y, prm)
    for k in range(n_samples):
        for _ in range(every):
            for w in weights:
                h = w * dt
                px += 0.5 * h * fx
                py += 0.5 * h * fy
                x += h * px
                y += h * py
                fx, fy = _force(x, y, prm)
                px += 0.5 * h * fx
                py += 0.5 * h * fy
        out[k + 1, 0] = x
        out[k + 1, 1] = y
        out[k + 1, 2] = px
        out[k + 1, 3] = py
    return out


@njit(cache=True)
def _run_tangent(state, tangent, dt, n_blocks, block_steps, prm, weights):
    """Evolve a state and a tangent vector, renormalising once per block; return log growths."""
    x, y, px, py = state[0], state[1], state[2], state[3]
    a, b, c, e = tangent[0], tangent[1], tangent[2], tangent[3]
    logs = np.empty(n_blocks)
    fx, fy = _force(x, y, prm)
    hxx, hxy, hyy = _hessian(x, y, prm)
    for k in range(n_blocks):
        for _ in range(block_steps):
            for w in weights:
                h = w * dt
                px += 0.5 * h * fx
                py += 0.5 * h * fy
                c -= 0.5 * h * (hxx * a + hxy * b)
                e -= 0.5 * h * (hxy * a + hyy * b)
                x += h * px
                y += h * py
                a += h * c
                b += h * e
                fx, fy = _force(x, y, prm)
                hxx, hxy, hyy = _hessian(x, y, prm)
                px += 0.5 * h * fx
                py += 0.5 * h * fy
                c -= 0.5 * h * (hxx * a + hxy * b)
                e -= 0.5 * h * (hxy * a + hyy * b)
        norm = np.sqrt(a * a + b * b + c * c + e * e)
        logs[k] = np.log(norm)
        a /= norm
        b /= norm
        c /= norm
        e /= norm
    final = np.array([x, y, px, py])
    return logs, final


@njit(cache=True)
def _batch_potential(x, y, prm):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = _potential(x[i], y[i], prm)
    return out


@njit(cache=True)
def _batch_penetrations(x, y, prm):
    out = np.empty((x.size, 5))
    s = np.empty(5)
    for i in range(x.size):
        _penetrations(x[i], y[i], prm, s)
        out[i] = s
    return out


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def billiard_potential(spec: BilliardSpec, point) -> np.ndarray:
    """Sum of the smoothed wall terms at ``point[..., :2]`` (``inf`` on or beyond a hard wall)."""
    pts = np.asarray(point, dtype=float)
    flat = pts.reshape(-1, pts.shape[-1])
    lo = np.array([-spec.lx, -spec.ly])
    if np.any(flat[:, :2] < lo) or np.any(flat[:, :2] > -lo):
        raise ContractViolation("point outside the bounding box")
    v = _batch_potential(np.ascontiguousarray(flat[:, 0]), np.ascontiguousarray(flat[:, 1]), spec.params())
    return v.reshape(pts.shape[:-1]) if pts.ndim > 1 else float(v[0])


def penetrations(spec: BilliardSpec, states) -> np.ndarray:
    """Penetration depths into the bottom, top, left, right and disc walls."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    return _batch_penetrations(np.ascontiguousarray(s[:, 0]), np.ascontiguousarray(s[:, 1]), spec.params())


def domain_labels(spec: BilliardSpec, states, threshold: float = 0.0):
    """Domain label per state and a corner flag where two walls are entered at once.

    A wall counts as entered once its penetration exceeds ``threshold * d``;
    the deepest entered wall names the domain. With the default threshold the
    interior label is exactly force-free; a positive threshold leaves shallow
    wall contact (and grazing reflections) inside D0.
    """
    s = penetrations(spec, states)
    entered = s > threshold * spec.d
    deepest = np.argmax(s, axis=1)
    labels = np.where(entered.any(axis=1), _WALL_LABELS[deepest], 0)
    corner = np.count_nonzero(entered, axis=1) >= 2
    return labels.astype(np.int64), corner


def billiard_constants(spec: BilliardSpec, states) -> dict:
    s = np.atleast_2d(np.asarray(states, dtype=float))
    cx, cy = spec.center
    kinetic = 0.5 * (s[:, 2] ** 2 + s[:, 3] ** 2)
    return {
        "H": kinetic + billiard_potential(spec, s),
        "Px": s[:, 2].copy(),
        "Py": s[:, 3].copy(),
        "Ptheta": (s[:, 0] - cx) * s[:, 3] - (s[:, 1] - cy) * s[:, 2],
    }


@dataclass
class BilliardTrajectory:
    trajectory: Trajectory
    labels: np.ndarray
    corner: np.ndarray
    constants: dict
    spec: BilliardSpec

    @property
    def times(self):
        return self.trajectory.times

    @property
    def states(self):
        return self.trajectory.states

    @property
    def energy_drift(self) -> float:
        H = self.constants["H"]
        return float(np.max(np.abs(H - H[0])) / abs(H[0]))

    def visited(self) -> set:
        return set(int(v) for v in np.unique(self.labels))

    def domain_table(self) -> dict:
        """Worst relative drift of each domain's two constants over single visits, corners excluded."""
        speed = np.sqrt(2.0 * self.constants["H"][0])
        scales = {"H": abs(self.constants["H"][0]), "Px": speed, "Py": speed,
                  "Ptheta": speed * (self.spec.lx + self.spec.ly)}
        table = {int(k): {"visits": 0, **{name: 0.0 for name in names}} for k, names in DOMAIN_CONSTANTS.items()}
        key = np.where(self.corner, -1, self.labels)
        change = np.nonzero(np.diff(key) != 0)[0] + 1
        bounds = np.concatenate([[0], change, [key.size]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            label = int(key[a])
            if label < 0:
                continue
            row = table[label]
            row["visits"] += 1
            for name in DOMAIN_CONSTANTS[label]:
                seg = self.constants[name][a:b]
                row[name] = max(row[name], float(np.max(np.abs(seg - seg[0]))) / scales[name])
        return table

    def to_rows(self) -> np.ndarray:
        c = self.constants
        return np.column_stack([self.times, self.states, self.labels, c["H"], c["Px"], c["Py"], c["Ptheta"]])


def _check_start(spec: BilliardSpec, start) -> np.ndarray:
    x0 = np.asarray(start, dtype=float).reshape(4)
    if abs(x0[0]) >= spec.lx or abs(x0[1]) >= spec.ly:
        raise ContractViolation("start point outside the billiard")
    V = billiard_potential(spec, x0)
    if not np.isfinite(V):
        raise ContractViolation("start point on or behind a hard wall")
    E = 0.5 * (x0[2] ** 2 + x0[3] ** 2) + V
    if E >= spec.v0:
        raise ContractViolation(f"energy {E:.3g} above the wall cap {spec.v0:.3g}: the particle escapes")
    return x0


def simulate_billiard(spec: BilliardSpec, start, t_end: float, dt: float, sample_every: int = 10,
                      order: int = 4, max_drift: float = 1e-3) -> BilliardTrajectory:
    """Integrate the smoothed billiard and record labels and candidate constants per sample.

    Raises :class:`ContractViolation` when the step is too large for the wall
    stiffness (a state behind a hard wall, or relative energy drift above ``max_drift``).
    """
    if dt <= 0 or t_end <= 0:
        raise ContractViolation("t_end and dt must be positive")
    x0 = _check_start(spec, start)
    n_samples = int(round(t_end / (dt * sample_every)))
    states = _run(x0, float(dt), n_samples, int(sample_every), spec.params(), np.array(_composition(order)))
    times = np.arange(n_samples + 1) * dt * sample_every
    bad = ~np.all(np.isfinite(states), axis=1)
    if not bad.any():
        bad = ~np.isfinite(billiard_potential(spec, states))
    if bad.any():
        k = int(np.argmax(bad))
        raise ContractViolation(f"step dt={dt:g} too large for the wall stiffness: state left the billiard at t={times[k]:.6g}")
    consts = billiard_constants(spec, states)
    H = consts["H"]
    drift = float(np.max(np.abs(H - H[0])) / abs(H[0]))
    if drift > max_drift:
        raise ContractViolation(f"step dt={dt:g} too large for the wall stiffness: energy drift {drift:.3g}")
    labels, corner = domain_labels(spec, states)
    traj = Trajectory(times, states, H)
    return BilliardTrajectory(traj, labels, corner, consts, spec)


def time_reversal_error(spec: BilliardSpec, start, t_end: float, dt: float, order: int = 4) -> float:
    """Distance to ``start`` after running forward, flipping momenta and running back."""
    fwd = simulate_billiard(spec, start, t_end, dt, sample_every=max(1, int(round(t_end / dt))), order=order)
    end = fwd.states[-1].copy()
    end[2:] *= -1
    back = simulate_billiard(spec, end, t_end, dt, sample_every=max(1, int(round(t_end / dt))), order=order)
    final = back.states[-1].copy()
    final[2:] *= -1
    return float(np.max(np.abs(final - np.asarray(start, dtype=float))))


# ---------------------------------------------------------------------------
# hard-wall oracle
# ---------------------------------------------------------------------------


def _reflect(v, n):
    return v - 2.0 * np.dot(v, n) * n


def hard_wall_hit(spec: BilliardSpec, position, velocity):
    """First collision of a free ray with the hard-wall billiard: ``(time, point, normal)``."""
    q = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    best = (np.inf, None, None)
    for axis, bound in ((0, spec.lx), (1, spec.ly)):
        for sign in (1.0, -1.0):
            if v[axis] * sign > 0:
                t = (sign * bound - q[axis]) / v[axis]
                if 1e-12 < t < best[0]:
                    n = np.zeros(2)
                    n[axis] = -sign
                    best = (t, q + t * v, n)
    if spec.has_disc:
        c = np.array(spec.center)
        r = q - c
        a = v @ v
        b = 2 * r @ v
        cc = r @ r - spec.radius ** 2
        disc = b * b - 4 * a * cc
        if disc > 0:
            t = (-b - np.sqrt(disc)) / (2 * a)
            if 1e-12 < t < best[0]:
                p = q + t * v
                best = (t, p, (p - c) / spec.radius)
    return best


def hard_wall_flow(spec: BilliardSpec, start, t_end: float) -> np.ndarray:
    """Event-driven hard-wall billiard: state at ``t_end``."""
    x = np.asarray(start, dtype=float)
    q, v = x[:2].copy(), x[2:].copy()
    t = 0.0
    while True:
        dt_hit, point, normal = hard_wall_hit(spec, q, v)
        if t + dt_hit >= t_end:
            return np.concatenate([q + (t_end - t) * v, v])
        t += dt_hit
        q = point
        v = _reflect(v, normal)


@dataclass
class SpecularReport:
    d_values: np.ndarray
    errors: np.ndarray
    ideal_direction: np.ndarray
    floor: float = 1e-9

    @property
    def monotone(self) -> bool:
        """Errors never grow as ``d`` shrinks (differences below ``floor`` are integration noise)."""
        return bool(np.all(np.diff(self.errors) <= self.floor))


def _angle_between(u, v) -> float:
    return float(abs(np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)))


def specular_limit(spec: BilliardSpec, start, d_values: Sequence[float], dt_per_d: float = 2e-3,
                   t_budget: float = 20.0, order: int = 4) -> SpecularReport:
    """Outgoing direction after one wall interaction vs the ideal hard-wall reflection, per ``d``."""
    d_values = np.asarray(d_values, dtype=float)
    if np.any(d_values <= 0) or np.any(np.diff(d_values) >= 0):
        raise ContractViolation("d_values must be positive and strictly decreasing")
    x0 = np.asarray(start, dtype=float)
    _, _, normal = hard_wall_hit(spec, x0[:2], x0[2:])
    if normal is None:
        raise ContractViolation("start ray never meets a wall")
    ideal = _reflect(x0[2:], normal)
    errors = []
    for d in d_values:
        sd = spec.with_d(float(d))
        _check_start(sd, x0)
        dt = dt_per_d * d
        chunk = max(1, int(round(0.05 * d / dt)))
        state = x0.copy()
        entered = False
        t = 0.0
        while True:
            if t > t_budget:
                raise ConvergenceError(f"wall interaction not completed within t={t_budget} for d={d:g}")
            states = _run(state, dt, 1, chunk, sd.params(), np.array(_composition(order)))
            state = states[-1]
            t += chunk * dt
            inside = np.any(penetrations(sd, state[None, :])[0] > 0)
            if inside:
                entered = True
            elif entered:
                break
        errors.append(_angle_between(ideal, state[2:]))
    return SpecularReport(d_values, np.array(errors), ideal)


# ---------------------------------------------------------------------------
# Lyapunov exponent
# ---------------------------------------------------------------------------


@dataclass
class LyapunovResult:
    lambda_max: float
    stderr: float
    block_estimates: np.ndarray
    block_time: float

    @property
    def converged(self) -> bool:
        return bool(np.isfinite(self.lambda_max) and np.isfinite(self.stderr) and self.stderr > 0)


def lyapunov(spec: BilliardSpec, start, t_end: float = 1000.0, dt: float = 2e-4, blocks: int = 20,
             renorm_time: float = 1.0, burn_in: float = 0.0, seed: int = 0, order: int = 4) -> LyapunovResult:
    """Largest Lyapunov exponent from the linearised flow, renormalised every ``renorm_time``.

    The first ``burn_in`` fraction of the run is discarded; the rest is split
    into ``blocks`` equal blocks whose mean growth rates give the estimate and
    its standard error.
    """
    if t_end < 10 * renorm_time * blocks:
        raise ContractViolation("t_end too short for the requested blocks")
    x0 = _check_start(spec, start)
    rng = np.random.default_rng(seed)
    tangent = rng.standard_normal(4)
    tangent /= np.linalg.norm(tangent)
    steps = max(1, int(round(renorm_time / dt)))
    n_total = int(round(t_end / (steps * dt)))
    logs, final = _run_tangent(x0, tangent, float(dt), n_total, steps, spec.params(), np.array(_composition(order)))
    if not np.all(np.isfinite(logs)) or not np.all(np.isfinite(final)):
        raise ConvergenceError("tangent integration produced non-finite values")
    skip = int(np.ceil(burn_in * n_total))
    usable = logs[skip:]
    per_block = usable.size // blocks
    if per_block < 1:
        raise ConvergenceError("not enough renormalisation intervals after burn-in")
    usable = usable[: per_block * blocks].reshape(blocks, per_block)
    block_time = per_block * steps * dt
    estimates = usable.sum(axis=1) / block_time
    lam = float(estimates.mean())
    err = float(estimates.std(ddof=1) / np.sqrt(blocks))
    return LyapunovResult(lam, err, estimates, block_time)


def hard_wall_lyapunov(spec: BilliardSpec, start, t_end: float = 1000.0, renorm_time: float = 1.0,
                       eps: float = 1e-8, seed: int = 0) -> float:
    """Largest exponent of the hard-wall billiard from two nearby event-driven trajectories."""
    rng = np.random.default_rng(seed)
    a = np.asarray(start, dtype=float)
    dv = rng.standard_normal(4)
    # keep the partner on the same energy shell so the growth is not polluted by shear
    dv[2:] -= (dv[2:] @ a[2:]) / (a[2:] @ a[2:]) * a[2:]
    b = a + eps * dv / np.linalg.norm(dv)
    total = 0.0
    n = int(round(t_end / renorm_time))
    for _ in range(n):
        a = hard_wall_flow(spec, a, renorm_time)
        b = hard_wall_flow(spec, b, renorm_time)
        sep = np.linalg.norm(b - a)
        total += np.log(sep / eps)
        b = a + (b - a) * (eps / sep)
    return total / (n * renorm_time)
