"""Wigner symbols, Weyl quantization, star products and Moyal brackets.

Operators act on a periodic position lattice of odd size ``M`` with spacing
``dq``. Momentum is the spectral derivative, with eigenvalues
``p_k = 2*pi*hbar*k/(M*dq)`` for ``k = -(M-1)/2 .. (M-1)/2``. The discrete
Wigner transform samples the off-diagonal ``<q + y/2|A|q - y/2>`` on the
doubled lattice; because ``M`` is odd, the half step ``y/2`` is the integer
step ``y*(M+1)/2`` modulo ``M``. This makes the transform an exact unitary
map between operators and lattice functions, so the trace pairing holds to
rounding error. The price is aliasing: a state's lattice Wigner function is
the continuous one folded with copies shifted by ``pi*hbar/dq`` in momentum
and mirrored to the antipodal position (see :func:`aliased_wigner`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .exceptions import ContractViolation, GridMismatchError
from .phasespace import PhaseFunction, PhaseGrid, grid_derivative, integrate_phase
from .polynomial import Polynomial

DEFAULT_MAX_DEGREE = 8
GRID_STAR_ORDER = 6
# repeated finite differences lose accuracy quickly on open axes
OPEN_AXIS_MAX_ORDER = 4


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorMatrix:
    """Operator in the orthonormal position basis ``|q_j>``, ``q_j = origin + (j - c)*dq``."""

    entries: np.ndarray
    dq: float
    origin: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation(f"operator must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ContractViolation("operator has non-finite entries")
        if not self.dq > 0:
            raise ContractViolation("dq must be positive")
        if not self.hbar > 0:
            raise ContractViolation("hbar must be positive")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "dq", float(self.dq))
        object.__setattr__(self, "origin", float(self.origin))
        object.__setattr__(self, "hbar", float(self.hbar))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return lattice_positions(self.dim, self.dq, self.origin)

    @property
    def momenta(self) -> np.ndarray:
        return lattice_momenta(self.dim, self.dq, self.hbar)

    @property
    def hermitian_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    @property
    def is_hermitian(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.entries))))
        return self.hermitian_error <= 1e-12 * scale

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def like(self, entries) -> "OperatorMatrix":
        return OperatorMatrix(entries, self.dq, self.origin, self.hbar)

    def compatible(self, other: "OperatorMatrix") -> bool:
        return (
            self.dim == other.dim
            and math.isclose(self.dq, other.dq, rel_tol=1e-12)
            and math.isclose(self.origin, other.origin, abs_tol=1e-12)
            and math.isclose(self.hbar, other.hbar, rel_tol=1e-12)
        )

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_compatible(self, other)
        return self.like(self.entries @ other.entries)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.like(self.entries + other.entries)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.like(self.entries - other.entries)

    def __mul__(self, c):
        return self.like(self.entries * c)

    __rmul__ = __mul__


def _check_compatible(a: OperatorMatrix, b: OperatorMatrix):
    if not a.compatible(b):
        raise GridMismatchError("operators use different bases or hbar")


def lattice_positions(dim: int, dq: float, origin: float = 0.0) -> np.ndarray:
    return origin + (np.arange(dim) - (dim - 1) / 2) * dq


def lattice_momenta(dim: int, dq: float, hbar: float = 1.0) -> np.ndarray:
    k = np.arange(dim) - (dim - 1) // 2
    return 2 * np.pi * hbar * k / (dim * dq)


def _require_odd(dim: int):
    if dim % 2 == 0:
        raise ContractViolation(f"lattice size must be odd, got {dim}")


def identity_operator(dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0) -> OperatorMatrix:
    return OperatorMatrix(np.eye(dim), dq, origin, hbar)


def position_operator(dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0) -> OperatorMatrix:
    return OperatorMatrix(np.diag(lattice_positions(dim, dq, origin)), dq, origin, hbar)


def momentum_operator(dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0) -> OperatorMatrix:
    """Spectral momentum ``-i hbar d/dq`` on the periodic lattice."""
    _require_odd(dim)
    p = lattice_momenta(dim, dq, hbar)
    k = np.arange(dim) - (dim - 1) // 2
    j = np.arange(dim)
    phase = np.exp(2j * np.pi * np.outer(j, k) / dim) / np.sqrt(dim)
    return OperatorMatrix((phase * p) @ phase.conj().T, dq, origin, hbar)


def pure_state(psi, dq: float, origin: float = 0.0, hbar: float = 1.0) -> OperatorMatrix:
    """Projector onto the lattice vector ``psi`` (normalised to unit norm)."""
    v = np.asarray(psi, dtype=complex)
    v = v / np.linalg.norm(v)
    return OperatorMatrix(np.outer(v, v.conj()), dq, origin, hbar)


def oscillator_state(n: int, dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0,
                     mass: float = 1.0, omega: float = 1.0) -> OperatorMatrix:
    """Projector onto the ``n``-th harmonic-oscillator eigenfunction sampled on the lattice."""
    from scipy.special import eval_hermite

    x = lattice_positions(dim, dq, origin)
    xi = np.sqrt(mass * omega / hbar) * x
    psi = eval_hermite(n, xi) * np.exp(-xi**2 / 2)
    return pure_state(psi, dq, origin, hbar)


# ---------------------------------------------------------------------------
# Wigner transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WignerSymbol:
    function: PhaseFunction
    hbar: float
    kind: str = "observable"

    def __post_init__(self):
        if self.kind not in ("observable", "state"):
            raise ContractViolation(f"unknown symbol kind {self.kind!r}")

    @property
    def values(self) -> np.ndarray:
        return self.function.values

    @property
    def grid(self) -> PhaseGrid:
        return self.function.grid


def wigner_grid(dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0) -> PhaseGrid:
    """Periodic (q, p) lattice matching an operator basis."""
    x = lattice_positions(dim, dq, origin)
    p = lattice_momenta(dim, dq, hbar)
    dp = 2 * np.pi * hbar / (dim * dq)
    return PhaseGrid((x[0], p[0]), (x[0] + dim * dq, p[0] + dim * dp), (dim, dim), (True, True))


def _pair_indices(dim: int):
    """Row/column of ``<q_j + s/2| . |q_j - s/2>`` for every (j, s) on the doubled lattice."""
    half = (dim + 1) // 2
    j = np.arange(dim)[:, None]
    s = np.arange(dim)[None, :]
    return (j + s * half) % dim, (j - s * half) % dim


def _momentum_order(dim: int) -> np.ndarray:
    # fft output index -> centred k ordering
    return np.fft.fftshift(np.arange(dim))


def wigner_symb(op: OperatorMatrix, kind: str = "observable") -> WignerSymbol:
    """Discrete Wigner symbol of ``op`` on the lattice returned by :func:`wigner_grid`.

    ``kind='state'`` divides by ``2*pi*hbar`` so that the phase-space integral
    of the symbol equals the trace of the operator.
    """
    _require_odd(op.dim)
    if kind not in ("observable", "state"):
        raise ContractViolation(f"unknown symbol kind {kind!r}")
    rows, cols = _pair_indices(op.dim)
    g = op.entries[rows, cols]
    W = np.fft.fft(g, axis=1)[:, _momentum_order(op.dim)]
    if kind == "state":
        W = W / (2 * np.pi * op.hbar)
    if op.is_hermitian:
        scale = max(float(np.max(np.abs(W))), 1e-300)
        if np.max(np.abs(W.imag)) > 1e-10 * scale:
            raise ContractViolation("Hermitian operator produced a complex symbol")
        W = W.real
    grid = wigner_grid(op.dim, op.dq, op.origin, op.hbar)
    return WignerSymbol(PhaseFunction(grid, W, hbar=op.hbar), op.hbar, kind)


def weyl_operator(symbol: WignerSymbol | np.ndarray, dq: float = None, origin: float = 0.0,
                  hbar: float = None, kind: str = None) -> OperatorMatrix:
    """Exact inverse of :func:`wigner_symb` on the lattice."""
    if isinstance(symbol, WignerSymbol):
        W = np.asarray(symbol.values, dtype=complex)
        grid = symbol.grid
        hbar = symbol.hbar
        kind = symbol.kind
        dim = W.shape[0]
        dq = grid.spacing[0]
        origin = grid.mins[0] + (dim - 1) / 2 * dq
    else:
        W = np.asarray(symbol, dtype=complex)
        dim = W.shape[0]
        hbar = 1.0 if hbar is None else hbar
        kind = kind or "observable"
    _require_odd(dim)
    if kind == "state":
        W = W * (2 * np.pi * hbar)
    g = np.fft.ifft(W[:, np.argsort(_momentum_order(dim))], axis=1)
    rows, cols = _pair_indices(dim)
    A = np.empty((dim, dim), dtype=complex)
    A[rows, cols] = g
    return OperatorMatrix(A, dq, origin, hbar)


def continuous_oscillator_wigner(n: int, q, p, hbar: float = 1.0) -> np.ndarray:
    """Analytic Wigner function of the n-th oscillator eigenstate (unit mass and frequency)."""
    from scipy.special import eval_laguerre

    r2 = (np.asarray(q) ** 2 + np.asarray(p) ** 2) / hbar
    return (-1) ** n / (np.pi * hbar) * np.exp(-r2) * eval_laguerre(n, 2 * r2)


def aliased_wigner(continuous, dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0,
                   images: int = 3) -> np.ndarray:
    """Lattice image of a continuous Wigner function ``continuous(q, p)``.

    For a state whose wavefunction is well resolved and contained in the
    lattice window, the lattice symbol equals half the sum of the continuous
    function over momentum translates by ``pi*hbar/dq``, plus the same sum at
    the antipodal position with alternating sign.
    """
    x = lattice_positions(dim, dq, origin)
    p = lattice_momenta(dim, dq, hbar)
    L = dim * dq
    antipode = origin + np.mod(x - origin, L) - L / 2
    Q, P = np.meshgrid(x, p, indexing="ij")
    QA = np.meshgrid(antipode, p, indexing="ij")[0]
    period = np.pi * hbar / dq
    out = np.zeros_like(Q)
    for n in range(-images, images + 1):
        out += continuous(Q, P + n * period) + (-1) ** n * continuous(QA, P + n * period)
    return 0.5 * out


# ---------------------------------------------------------------------------
# Weyl quantization
# ---------------------------------------------------------------------------


def weyl_quantize(f: Polynomial | str, dim: int, dq: float, origin: float = 0.0, hbar: float = 1.0,
                  max_degree: int = DEFAULT_MAX_DEGREE) -> OperatorMatrix:
    """Map each monomial ``q^a p^b`` to the average of all orderings of ``a`` q's and ``b`` p's."""
    if isinstance(f, str):
        f = Polynomial.parse(f, 1)
    if f.nvars != 2:
        raise ContractViolation("weyl_quantize acts on one-degree-of-freedom polynomials in (q, p)")
    if f.degree > max_degree:
        raise ContractViolation(f"polynomial degree {f.degree} exceeds the limit {max_degree}")
    _require_odd(dim)
    Q = position_operator(dim, dq, origin, hbar).entries
    P = momentum_operator(dim, dq, origin, hbar).entries
    words = _word_sums(Q, P)
    out = np.zeros((dim, dim), dtype=complex)
    for (a, b), c in f.terms.items():
        out += c * words(a, b) / math.comb(a + b, a)
    return OperatorMatrix(out, dq, origin, hbar)


def _word_sums(Q, P):
    """Sum of all distinct words with ``a`` Q's and ``b`` P's, via T(a,b) = Q T(a-1,b) + P T(a,b-1)."""
    eye = np.eye(Q.shape[0], dtype=complex)

    @lru_cache(maxsize=None)
    def T(a, b):
        if a == 0 and b == 0:
            return eye
        out = np.zeros_like(eye)
        if a:
            out = out + Q @ T(a - 1, b)
        if b:
            out = out + P @ T(a, b - 1)
        return out

    return T


# ---------------------------------------------------------------------------
# star products
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _bidifferential_terms(n_dof: int, n: int) -> tuple:
    """Expand (sum_j <-d_qj d_pj-> - <-d_pj d_qj->)^n into (left, right, coefficient) terms."""
    d = 2 * n_dof
    terms = {((0,) * d, (0,) * d): 1}
    for _ in range(n):
        new = {}
        for (left, right), c in terms.items():
            for j in range(n_dof):
                for a, b, sign in ((j, n_dof + j, 1), (n_dof + j, j, -1)):
                    l2 = list(left)
                    r2 = list(right)
                    l2[a] += 1
                    r2[b] += 1
                    key = (tuple(l2), tuple(r2))
                    new[key] = new.get(key, 0) + sign * c
        terms = {k: v for k, v in new.items() if v}
    return tuple((l, r, c) for (l, r), c in terms.items())


def star_polynomial(f: Polynomial, g: Polynomial, hbar: float, order: Optional[int] = None) -> Polynomial:
    """Moyal star product of polynomials, truncated after ``order`` (exact by default)."""
    if f.nvars != g.nvars:
        raise ContractViolation("polynomials live in different phase spaces")
    n_dof = f.nvars // 2
    top = min(f.degree, g.degree) if order is None else order
    out = Polynomial({}, f.nvars)
    for n in range(top + 1):
        scale = (0.5j * hbar) ** n / math.factorial(n)
        for left, right, c in _bidifferential_terms(n_dof, n):
            df = f.multi_derivative(left)
            if df.is_zero:
                continue
            dg = g.multi_derivative(right)
            if dg.is_zero:
                continue
            out = out + (df * dg) * (c * scale)
    return _clean(out)


def moyal_polynomial(f: Polynomial, g: Polynomial, hbar: float, order: Optional[int] = None) -> Polynomial:
    """Moyal bracket of polynomials from the odd terms of the star series."""
    n_dof = f.nvars // 2
    top = min(f.degree, g.degree) if order is None else order
    out = Polynomial({}, f.nvars)
    for n in range(1, top + 1, 2):
        scale = (-1) ** ((n - 1) // 2) * (0.5 * hbar) ** (n - 1) / math.factorial(n)
        for left, right, c in _bidifferential_terms(n_dof, n):
            df = f.multi_derivative(left)
            if df.is_zero:
                continue
            dg = g.multi_derivative(right)
            if dg.is_zero:
                continue
            out = out + (df * dg) * (c * scale)
    return _clean(out)


def _clean(p: Polynomial) -> Polynomial:
    terms = {}
    for e, c in p.terms.items():
        c = complex(c)
        terms[e] = c.real if c.imag == 0 else c
    return Polynomial(terms, p.nvars)


def _spectral_derivative(values, axis: int, h: float, k: int) -> np.ndarray:
    n = values.shape[axis]
    freq = 2j * np.pi * np.fft.fftfreq(n, d=h)
    if n % 2 == 0 and k % 2 == 1:
        freq[n // 2] = 0
    shape = [1] * values.ndim
    shape[axis] = n
    factor = (freq**k).reshape(shape)
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * factor, axis=axis)
    return out if np.iscomplexobj(values) else out.real


def _grid_multi_derivative(f: PhaseFunction, orders, cache: dict) -> np.ndarray:
    key = (id(f), tuple(orders))
    if key in cache:
        return cache[key]
    g = f.grid
    v = f.values
    for axis, k in enumerate(orders):
        if not k:
            continue
        if g.periodic[axis]:
            v = _spectral_derivative(v, axis, g.spacing[axis], k)
        else:
            for _ in range(k):
                v = grid_derivative(v, axis, g.spacing[axis], False, accuracy=4)
    cache[key] = v
    return v


def _grid_order(grid: PhaseGrid, order: Optional[int]) -> int:
    limit = GRID_STAR_ORDER if all(grid.periodic) else OPEN_AXIS_MAX_ORDER
    if order is None:
        return limit
    if order > limit:
        warnings.warn(f"star-product order {order} exceeds derivative accuracy; clamped to {limit}",
                      RuntimeWarning, stacklevel=3)
        return limit
    return order


def _check_pair(f: PhaseFunction, g: PhaseFunction, hbar):
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("star product arguments live on different grids")
    h = f.hbar if hbar is None else hbar
    if hbar is None and not math.isclose(f.hbar, g.hbar, rel_tol=1e-12):
        raise GridMismatchError("star product arguments carry different hbar")
    return h


def _series_on_grid(f: PhaseFunction, g: PhaseFunction, hbar: float, order: int, odd_only: bool) -> np.ndarray:
    n_dof = f.grid.n_dof
    cache: dict = {}
    out = np.zeros(f.grid.shape, dtype=complex)
    for n in range(order + 1):
        if odd_only and n % 2 == 0:
            continue
        if odd_only:
            scale = (-1) ** ((n - 1) // 2) * (0.5 * hbar) ** (n - 1) / math.factorial(n)
        else:
            scale = (0.5j * hbar) ** n / math.factorial(n)
        for left, right, c in _bidifferential_terms(n_dof, n):
            out += c * scale * _grid_multi_derivative(f, left, cache) * _grid_multi_derivative(g, right, cache)
    return out


def star_product(f: PhaseFunction, g: PhaseFunction, order: Optional[int] = None,
                 hbar: Optional[float] = None) -> PhaseFunction:
    """Truncated Moyal star product ``sum_n (1/n!) (i hbar/2)^n f Lambda^n g``.

    Polynomial forms give the exact terminating series (``order`` defaults to
    the full series). Sampled data uses spectral derivatives on periodic axes
    and fourth-order differences on open axes; only the central 80% of each
    open axis is marked trusted.
    """
    h = _check_pair(f, g, hbar)
    if f.exact_form is not None and g.exact_form is not None:
        form = star_polynomial(f.exact_form, g.exact_form, h, order)
        vals = form.evaluate(f.grid.nodes())
        return PhaseFunction(f.grid, vals if not form.is_real else np.real(vals), exact_form=form, hbar=h)
    n = _grid_order(f.grid, order)
    vals = _series_on_grid(f, g, h, n, odd_only=False)
    return PhaseFunction(f.grid, vals, hbar=h, trusted=f.grid.interior_mask(0.8))


def moyal_bracket(f: PhaseFunction, g: PhaseFunction, order: Optional[int] = None,
                  hbar: Optional[float] = None) -> PhaseFunction:
    """(f * g - g * f) / (i hbar), computed from the odd terms of the series."""
    h = _check_pair(f, g, hbar)
    if f.exact_form is not None and g.exact_form is not None:
        form = moyal_polynomial(f.exact_form, g.exact_form, h, order)
        vals = form.evaluate(f.grid.nodes())
        return PhaseFunction(f.grid, vals if not form.is_real else np.real(vals), exact_form=form, hbar=h)
    n = _grid_order(f.grid, order)
    vals = _series_on_grid(f, g, h, n, odd_only=True)
    if not (f.is_complex or g.is_complex):
        vals = vals.real
    return PhaseFunction(f.grid, vals, hbar=h, trusted=f.grid.interior_mask(0.8))


# ---------------------------------------------------------------------------
# trace pairing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TracePairing:
    quantum: float
    classical: float
    discrepancy: float

    @property
    def relative(self) -> float:
        return self.discrepancy / max(abs(self.quantum), 1e-300)

    def __iter__(self):
        return iter((self.quantum, self.classical, self.discrepancy))


def trace_pairing(rho: OperatorMatrix, obs: OperatorMatrix) -> TracePairing:
    """Compare Tr(rho^dagger O) with the phase-space integral of the paired symbols."""
    if rho.dim != obs.dim:
        raise ContractViolation(f"dimension mismatch {rho.dim} vs {obs.dim}")
    _check_compatible(rho, obs)
    quantum = complex(np.vdot(rho.entries, obs.entries))
    ws = wigner_symb(rho, "state").function
    wo = wigner_symb(obs, "observable").function
    classical = complex(integrate_phase(ws.with_values(np.conj(ws.values) * wo.values)))
    return TracePairing(quantum.real, classical.real, abs(quantum - classical))
