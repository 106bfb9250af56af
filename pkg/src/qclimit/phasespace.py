"""Phase-space geometry: grids, sampled functions, brackets, quadrature and flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator

from .exceptions import ContractViolation, DomainExitError, GridMismatchError
from .polynomial import Polynomial


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


class SymplecticForm:
    """Canonical symplectic structure on R^{2n} with coordinates (q, p)."""

    def __init__(self, n_dof: int):
        if n_dof < 1:
            raise ValueError("n_dof must be positive")
        self.n_dof = n_dof

    @property
    def lower(self) -> np.ndarray:
        n = self.n_dof
        eye, zero = np.eye(n), np.zeros((n, n))
        return np.block([[zero, eye], [-eye, zero]])

    @property
    def upper(self) -> np.ndarray:
        n = self.n_dof
        eye, zero = np.eye(n), np.zeros((n, n))
        return np.block([[zero, -eye], [eye, zero]])


def phase_point(coords, n_dof: Optional[int] = None) -> np.ndarray:
    """Validate and return a phase-space point ``(q1..qn, p1..pn)``."""
    x = np.asarray(coords, dtype=float).reshape(-1)
    if x.size % 2:
        raise ContractViolation(f"phase point needs an even number of coordinates, got {x.size}")
    if n_dof is not None and x.size != 2 * n_dof:
        raise ContractViolation(f"expected {2 * n_dof} coordinates, got {x.size}")
    return x


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform rectangular grid. Periodic axes exclude the upper endpoint."""

    mins: tuple
    maxs: tuple
    counts: tuple
    periodic: tuple = None

    def __post_init__(self):
        mins = tuple(float(v) for v in np.atleast_1d(self.mins))
        maxs = tuple(float(v) for v in np.atleast_1d(self.maxs))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        periodic = self.periodic
        if periodic is None:
            periodic = (False,) * len(mins)
        periodic = tuple(bool(v) for v in np.atleast_1d(periodic))
        if not (len(mins) == len(maxs) == len(counts) == len(periodic)):
            raise ContractViolation("grid axis specifications differ in length")
        for lo, hi, n in zip(mins, maxs, counts):
            if not hi > lo:
                raise ContractViolation(f"axis [{lo}, {hi}] has zero or negative extent")
            if n < 3:
                raise ContractViolation(f"axis needs at least 3 nodes, got {n}")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def square(cls, n_dof: int, extent: float, count: int, periodic: bool = False) -> "PhaseGrid":
        d = 2 * n_dof
        return cls((-extent,) * d, (extent,) * d, (count,) * d, (periodic,) * d)

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def n_dof(self) -> int:
        return self.ndim // 2

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def spacing(self) -> tuple:
        return tuple(
            (hi - lo) / (n if per else n - 1)
            for lo, hi, n, per in zip(self.mins, self.maxs, self.counts, self.periodic)
        )

    def axis(self, i: int) -> np.ndarray:
        lo, hi, n = self.mins[i], self.maxs[i], self.counts[i]
        if self.periodic[i]:
            return lo + np.arange(n) * (hi - lo) / n
        return np.linspace(lo, hi, n)

    @property
    def axes(self) -> list:
        return [self.axis(i) for i in range(self.ndim)]

    def mesh(self) -> list:
        return np.meshgrid(*self.axes, indexing="ij")

    def nodes(self) -> np.ndarray:
        """All nodes, shape ``counts + (ndim,)``."""
        return np.stack(self.mesh(), axis=-1)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.mins) - tol
        hi = np.asarray(self.maxs) + tol
        inside = (pts >= lo) & (pts <= hi)
        per = np.asarray(self.periodic)
        inside |= per
        return np.all(inside, axis=-1)

    def interior_mask(self, fraction: float = 0.8) -> np.ndarray:
        """Nodes within the central ``fraction`` of every non-periodic axis."""
        masks = []
        for i in range(self.ndim):
            x = self.axis(i)
            if self.periodic[i]:
                masks.append(np.ones_like(x, dtype=bool))
                continue
            mid = 0.5 * (self.mins[i] + self.maxs[i])
            half = 0.5 * fraction * (self.maxs[i] - self.mins[i])
            masks.append(np.abs(x - mid) <= half * (1 + 1e-12))
        out = masks[0]
        for m in masks[1:]:
            out = np.multiply.outer(out, m)
        return out.astype(bool)

    def same_as(self, other: "PhaseGrid") -> bool:
        return (
            self.counts == other.counts
            and self.periodic == other.periodic
            and np.allclose(self.mins, other.mins, rtol=0, atol=1e-14)
            and np.allclose(self.maxs, other.maxs, rtol=0, atol=1e-14)
        )

    def metadata(self) -> dict:
        return {
            "mins": list(self.mins),
            "maxs": list(self.maxs),
            "counts": list(self.counts),
            "periodic": list(self.periodic),
        }


class PhaseFunction:
    """Function sampled on a :class:`PhaseGrid`, optionally with an exact polynomial form."""

    def __init__(self, grid: PhaseGrid, values=None, exact_form: Optional[Polynomial] = None,
                 hbar: float = 1.0, trusted: Optional[np.ndarray] = None):
        if values is None:
            if exact_form is None:
                raise ContractViolation("need values or an exact form")
            values = exact_form.evaluate(grid.nodes())
        values = np.array(values)
        if values.shape != grid.shape:
            raise ContractViolation(f"values shape {values.shape} does not match grid {grid.shape}")
        if exact_form is not None and exact_form.nvars != grid.ndim:
            raise ContractViolation("exact form and grid have different dimension")
        if hbar <= 0:
            raise ContractViolation("hbar must be positive")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)
        self.exact_form = exact_form
        self.hbar = float(hbar)
        if trusted is not None:
            trusted = np.asarray(trusted, dtype=bool)
            if trusted.shape != grid.shape:
                raise ContractViolation("trusted mask shape mismatch")
        self.trusted = trusted
        self._interp = None

    @classmethod
    def from_polynomial(cls, poly: Polynomial | str, grid: PhaseGrid, hbar: float = 1.0) -> "PhaseFunction":
        if isinstance(poly, str):
            poly = Polynomial.parse(poly, grid.n_dof)
        vals = poly.evaluate(grid.nodes())
        if poly.is_real:
            vals = np.real(vals)
        return cls(grid, vals, exact_form=poly, hbar=hbar)

    @classmethod
    def from_callable(cls, fn: Callable, grid: PhaseGrid, hbar: float = 1.0) -> "PhaseFunction":
        """Sample ``fn(*coords)`` on the grid nodes."""
        return cls(grid, np.asarray(fn(*grid.mesh())), hbar=hbar)

    def with_values(self, values, exact_form=None, trusted=None) -> "PhaseFunction":
        return PhaseFunction(self.grid, values, exact_form=exact_form, hbar=self.hbar, trusted=trusted)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at arbitrary points; exact for polynomial forms, linear interpolation otherwise."""
        pts = np.asarray(points, dtype=float)
        if self.exact_form is not None:
            out = self.exact_form.evaluate(pts)
            return np.real(out) if not self.is_complex else out
        if self._interp is None:
            self._interp = _periodic_interpolator(self.grid, self.values)
        return self._interp(pts)

    def max_abs(self, mask: Optional[np.ndarray] = None) -> float:
        v = np.abs(self.values)
        if mask is not None:
            v = v[mask]
        return float(v.max()) if v.size else 0.0

    def __add__(self, other):
        if isinstance(other, PhaseFunction):
            _check_same_grid(self, other)
            form = self.exact_form + other.exact_form if self.exact_form and other.exact_form else None
            return self.with_values(self.values + other.values, exact_form=form)
        form = self.exact_form + other if self.exact_form is not None else None
        return self.with_values(self.values + other, exact_form=form)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, other):
        if isinstance(other, PhaseFunction):
            _check_same_grid(self, other)
            form = self.exact_form * other.exact_form if self.exact_form and other.exact_form else None
            return self.with_values(self.values * other.values, exact_form=form)
        form = self.exact_form * other if self.exact_form is not None else None
        return self.with_values(self.values * other, exact_form=form)

    __rmul__ = __mul__

    def __repr__(self):
        return f"PhaseFunction(shape={self.grid.shape}, exact={self.exact_form is not None})"


def _periodic_interpolator(grid: PhaseGrid, values):
    axes, vals = [], np.asarray(values)
    for i in range(grid.ndim):
        x = grid.axis(i)
        if grid.periodic[i]:
            x = np.append(x, grid.maxs[i])
            first = np.take(vals, [0], axis=i)
            vals = np.concatenate([vals, first], axis=i)
        axes.append(x)
    interp = RegularGridInterpolator(axes, vals, bounds_error=False, fill_value=np.nan)
    lo, hi = np.asarray(grid.mins), np.asarray(grid.maxs)
    per = np.asarray(grid.periodic)

    def evaluate(points):
        pts = np.array(points, dtype=float)
        wrapped = lo + np.mod(pts - lo, hi - lo)
        pts = np.where(per, wrapped, pts)
        return interp(pts)

    return evaluate


def _check_same_grid(f: PhaseFunction, g: PhaseFunction):
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("phase functions live on different grids")


# ---------------------------------------------------------------------------
# differentiation and brackets
# ---------------------------------------------------------------------------


def grid_derivative(values, axis: int, h: float, periodic: bool, accuracy: int = 2) -> np.ndarray:
    """Central differences of order ``accuracy`` (2 or 4), one-sided at open edges."""
    v = np.asarray(values)
    n = v.shape[axis]
    if n < 3 or (accuracy == 4 and n < 5):
        raise ContractViolation(f"axis {axis} has {n} nodes, too few to differentiate")
    if accuracy == 2:
        if periodic:
            return (np.roll(v, -1, axis) - np.roll(v, 1, axis)) / (2 * h)
        return np.gradient(v, h, axis=axis, edge_order=2)
    if accuracy != 4:
        raise ValueError("accuracy must be 2 or 4")
    r = lambda k: np.roll(v, -k, axis)
    d = (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)
    if periodic:
        return d
    d = np.moveaxis(d, axis, 0).copy()
    f = np.moveaxis(v, axis, 0)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return np.moveaxis(d, 0, axis)


def gradient(f: PhaseFunction, accuracy: int = 2) -> list:
    """Partial derivatives of ``f`` sampled on its grid, one array per axis."""
    if f.exact_form is not None:
        nodes = f.grid.nodes()
        return [f.exact_form.derivative(i).evaluate(nodes) for i in range(f.grid.ndim)]
    g = f.grid
    return [grid_derivative(f.values, i, g.spacing[i], g.periodic[i], accuracy) for i in range(g.ndim)]


def poisson_polynomial(f: Polynomial, g: Polynomial) -> Polynomial:
    n = f.nvars // 2
    out = Polynomial({}, f.nvars)
    for j in range(n):
        out = out + f.derivative(j) * g.derivative(n + j) - f.derivative(n + j) * g.derivative(j)
    return out


def poisson_bracket(f: PhaseFunction, g: PhaseFunction, accuracy: int = 2) -> PhaseFunction:
    """{f, g} = sum_j df/dq_j dg/dp_j - df/dp_j dg/dq_j.

    Exact when both arguments carry polynomial forms, finite differences otherwise.
    """
    _check_same_grid(f, g)
    if f.exact_form is not None and g.exact_form is not None:
        form = poisson_polynomial(f.exact_form, g.exact_form)
        return PhaseFunction.from_polynomial(form, f.grid, hbar=f.hbar)
    n = f.grid.n_dof
    df, dg = gradient(f, accuracy), gradient(g, accuracy)
    out = sum(df[j] * dg[n + j] - df[n + j] * dg[j] for j in range(n))
    return f.with_values(out)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _axis_weights(x: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    w = np.full(x.size, h)
    if not periodic:
        w[0] = w[-1] = 0.5 * h
    return w


def integrate_phase(f: PhaseFunction | np.ndarray, region=None, grid: Optional[PhaseGrid] = None) -> complex | float:
    """Trapezoidal integral of ``f`` over the grid or over an axis-aligned sub-box.

    ``region`` is a sequence of ``(lo, hi)`` pairs, one per axis. Periodic axes
    use the rectangle rule, which is the trapezoid rule for periodic data.
    """
    if isinstance(f, PhaseFunction):
        grid, values = f.grid, f.values
    else:
        if grid is None:
            raise ContractViolation("raw arrays need a grid")
        values = np.asarray(f)
    out = values
    for i in range(grid.ndim):
        x, h, per = grid.axis(i), grid.spacing[i], grid.periodic[i]
        if region is not None:
            lo, hi = region[i]
            tol = 1e-9 * h
            if lo < grid.mins[i] - tol or hi > grid.maxs[i] + tol or hi <= lo:
                raise ContractViolation(f"region [{lo}, {hi}] on axis {i} outside grid bounds")
            sel = (x >= lo - tol) & (x <= hi + tol)
            if sel.sum() < 2:
                raise ContractViolation(f"region on axis {i} contains fewer than 2 nodes")
            full = sel.all()
            x = x[sel]
            out = np.compress(sel, out, axis=0)
            w = _axis_weights(x, h, per and full)
        else:
            w = _axis_weights(x, h, per)
        out = np.tensordot(w, out, axes=([0], [0]))
    out = out.item() if np.ndim(out) == 0 else out
    if np.iscomplexobj(out) and out.imag == 0:
        return float(out.real)
    return out


# ---------------------------------------------------------------------------
# Hamiltonian flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    exit_time: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times)
        steps = np.diff(t)
        if t.ndim != 1 or (t.size > 1 and not (np.all(steps > 0) or np.all(steps < 0))):
            raise ContractViolation("trajectory times must be strictly monotone")
        if np.asarray(self.states).shape[0] != t.size:
            raise ContractViolation("one state per time required")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def energy_drift(self) -> float:
        e0 = self.energy[0]
        scale = abs(e0) if e0 != 0 else 1.0
        return float(np.max(np.abs(self.energy - e0)) / scale)


class HamiltonianField:
    """Gradient and value of a Hamiltonian given as polynomial, grid function or callables."""

    def __init__(self, H, grad: Optional[Callable] = None, value: Optional[Callable] = None):
        self.grid = None
        if isinstance(H, Polynomial):
            H = PhaseFunction(_dummy_grid(H.nvars), np.zeros((3,) * H.nvars), exact_form=H)
        self.function = H
        self.ndim = H.grid.ndim
        self.n = self.ndim // 2
        if grad is not None:
            self._grad, self._value = grad, value
        elif H.exact_form is not None:
            form = H.exact_form.real()
            parts = [form.derivative(i).compile() for i in range(self.ndim)]
            self._grad = lambda x: np.stack([np.broadcast_to(np.real(p(x)), x.shape[:-1]) for p in parts], axis=-1)
            value_fn = form.compile()
            self._value = lambda x: np.real(value_fn(x))
            self.form = form
        else:
            self.grid = H.grid
            grads = gradient(H)
            interps = [_periodic_interpolator(H.grid, np.real(g)) for g in grads]
            self._grad = lambda x: np.stack([ip(x) for ip in interps], axis=-1)
            self._value = _periodic_interpolator(H.grid, np.real(H.values))
        if not hasattr(self, "form"):
            self.form = None

    def grad(self, x):
        return self._grad(np.asarray(x, dtype=float))

    def value(self, x):
        return self._value(np.asarray(x, dtype=float))

    def vector_field(self, x):
        g = self.grad(x)
        return np.concatenate([g[..., self.n:], -g[..., :self.n]], axis=-1)

    def split(self):
        """Return ``(dT/dp, dV/dq)`` callables when the polynomial form is separable."""
        if self.form is None:
            return None
        n = self.n
        for e in self.form.terms:
            if any(e[:n]) and any(e[n:]):
                return None
        dT = [self.form.derivative(n + j).compile() for j in range(n)]
        dV = [self.form.derivative(j).compile() for j in range(n)]

        def kin(p):
            x = np.concatenate([np.zeros_like(p), p], axis=-1)
            return np.stack([np.broadcast_to(np.real(f(x)), p.shape[:-1]) for f in dT], axis=-1)

        def pot(q):
            x = np.concatenate([q, np.zeros_like(q)], axis=-1)
            return np.stack([np.broadcast_to(np.real(f(x)), q.shape[:-1]) for f in dV], axis=-1)

        return kin, pot

    def split_tables(self):
        """Monomial tables ``(kinetic, potential)`` for the compiled integrator, or None."""
        if self.split() is None:
            return None
        n = self.n

        def table(offset, part):
            exps, coefs, offsets = [], [], [0]
            for j in range(n):
                d = self.form.derivative(offset + j)
                for e, c in sorted(d.terms.items()):
                    exps.append(e[part])
                    coefs.append(float(np.real(c)))
                offsets.append(len(coefs))
            exps = np.array(exps, dtype=np.int64).reshape(-1, n)
            return exps, np.array(coefs, dtype=float), np.array(offsets, dtype=np.int64)

        return table(n, slice(n, 2 * n)), table(0, slice(0, n))


def _dummy_grid(nvars: int) -> PhaseGrid:
    return PhaseGrid((-1.0,) * nvars, (1.0,) * nvars, (3,) * nvars)


# Yoshida coefficients for the fourth-order composition of the Strang step
_YOSHIDA_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA_W0 = -(2.0 ** (1.0 / 3.0)) * _YOSHIDA_W1


def _composition(order: int) -> tuple:
    if order == 2:
        return (1.0,)
    if order == 4:
        return (_YOSHIDA_W1, _YOSHIDA_W0, _YOSHIDA_W1)
    raise ValueError("symplectic order must be 2 or 4")


def leapfrog_step(q, p, dt, kin, pot, order: int = 2):
    """One symplectic step for H = T(p) + V(q), vectorised over leading axes."""
    for w in _composition(order):
        h = w * dt
        p = p - 0.5 * h * pot(q)
        q = q + h * kin(p)
        p = p - 0.5 * h * pot(q)
    return q, p


def flow_points(H, points, t: float, dt: float, order: int = 2) -> np.ndarray:
    """Evolve many points to time ``t`` with the symplectic integrator (batched, compiled)."""
    from ._kernels import steppers

    field_ = H if isinstance(H, HamiltonianField) else HamiltonianField(H)
    tables = field_.split_tables()
    if tables is None:
        raise ContractViolation("batched symplectic flow needs a separable polynomial Hamiltonian")
    batch, _ = steppers(*tables)
    x = np.array(points, dtype=float)
    shape = x.shape
    x = x.reshape(-1, shape[-1])
    n = field_.n
    Q, P = np.ascontiguousarray(x[:, :n]), np.ascontiguousarray(x[:, n:])
    steps, rem = divmod(abs(t), dt)
    steps = int(steps)
    if abs(t) - (steps + 1) * dt > -1e-12 * dt:
        steps, rem = steps + 1, 0.0
    if rem <= 1e-14 * dt:
        rem = 0.0
    sign = 1.0 if t >= 0 else -1.0
    weights = np.array(_composition(order))
    batch(Q, P, steps, sign * dt, sign * rem, weights)
    return np.concatenate([Q, P], axis=-1).reshape(shape)


def hamilton_flow(H, start, t_end: float, dt: float, integrator: str = "adaptive",
                  order: int = 2, rtol: float = 1e-9, atol: float = 1e-9,
                  domain=None) -> Trajectory:
    """Integrate Hamilton's equations from ``start`` and sample every ``dt``.

    ``integrator='adaptive'`` uses an embedded Runge-Kutta 5(4) scheme;
    ``'symplectic'`` uses Strang splitting (``order`` 2, or 4 by Yoshida
    composition) and needs a separable polynomial Hamiltonian. ``domain`` is an
    optional box; leaving it (or the grid of a sampled Hamiltonian) raises
    :class:`DomainExitError` carrying the exit time.
    """
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    field_ = H if isinstance(H, HamiltonianField) else HamiltonianField(H)
    x0 = phase_point(start, field_.n)
    if domain is None and field_.grid is not None:
        g = field_.grid
        domain = [(lo, hi) if not per else (-np.inf, np.inf) for lo, hi, per in zip(g.mins, g.maxs, g.periodic)]
    if domain is not None:
        domain = np.asarray(domain, dtype=float)
        if np.any(x0 < domain[:, 0]) or np.any(x0 > domain[:, 1]):
            raise DomainExitError("start point outside the domain", time=0.0)

    n_steps = int(np.floor(abs(t_end) / dt + 1e-9))
    times = np.arange(n_steps + 1) * dt * np.sign(t_end if t_end != 0 else 1)
    if abs(abs(t_end) - abs(times[-1])) > 1e-12 * max(1.0, abs(t_end)):
        times = np.append(times, t_end)

    if integrator == "symplectic":
        from ._kernels import steppers

        tables = field_.split_tables()
        if tables is None:
            raise ContractViolation("symplectic integrator needs a separable polynomial Hamiltonian")
        _, path = steppers(*tables)
        weights = np.array(_composition(order))
        states = path(np.array(x0, dtype=float), np.diff(times), weights)
        if domain is not None:
            out = np.any((states < domain[:, 0]) | (states > domain[:, 1]), axis=1)
            if out.any():
                k = int(np.argmax(out))
                traj = Trajectory(times[: k + 1], states[: k + 1], field_.value(states[: k + 1]))
                raise DomainExitError(f"trajectory left the domain at t={times[k]:.6g}", time=times[k], trajectory=traj)
        if not np.all(np.isfinite(states)):
            raise ContractViolation("non-finite state in symplectic integration")
        return Trajectory(times, states, np.asarray(field_.value(states), dtype=float))

    if integrator != "adaptive":
        raise ValueError(f"unknown integrator {integrator!r}")

    if domain is not None and field_.grid is not None:
        # trial stages may step past the grid edge; evaluate at the clamped point and let the events stop the run
        lo_b, hi_b = domain[:, 0], domain[:, 1]
        rhs = lambda t, y: field_.vector_field(np.clip(y, lo_b, hi_b)[None, :])[0]
    else:
        rhs = lambda t, y: field_.vector_field(y[None, :])[0]
    events = []
    if domain is not None:
        for i, (lo, hi) in enumerate(domain):
            if np.isfinite(lo):
                ev = (lambda i, lo: lambda t, y: y[i] - lo)(i, lo)
                ev.terminal = True
                events.append(ev)
            if np.isfinite(hi):
                ev = (lambda i, hi: lambda t, y: hi - y[i])(i, hi)
                ev.terminal = True
                events.append(ev)
    if times.size == 1:
        return Trajectory(times, x0[None, :], np.atleast_1d(field_.value(x0[None, :])))
    sol = solve_ivp(rhs, (0.0, times[-1]), x0, method="RK45", t_eval=times, rtol=rtol, atol=atol,
                    events=events or None)
    if sol.status == -1:
        raise ContractViolation(f"integration failed: {sol.message}")
    states = sol.y.T
    got = sol.t
    if sol.status == 1:
        t_exit = min(float(e[0]) for e in sol.t_events if len(e))
        traj = Trajectory(got, states, field_.value(states)) if got.size else None
        raise DomainExitError(f"trajectory left the domain at t={t_exit:.6g}", time=t_exit, trajectory=traj)
    return Trajectory(got, states, np.asarray(field_.value(states), dtype=float))


def _outside(x, domain) -> bool:
    return bool(np.any(x < domain[:, 0]) or np.any(x > domain[:, 1]))


def flow_jacobian(H, start, t: float, dt: float, eps: float = 1e-6, **kwargs) -> np.ndarray:
    """Finite-difference Jacobian of the time-``t`` flow map at ``start``."""
    x0 = phase_point(start)
    d = x0.size
    J = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        plus = hamilton_flow(H, x0 + e, t, dt, **kwargs).final
        minus = hamilton_flow(H, x0 - e, t, dt, **kwargs).final
        J[:, i] = (plus - minus) / (2 * eps)
    return J
