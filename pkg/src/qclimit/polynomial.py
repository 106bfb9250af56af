"""Sparse multivariate polynomials over phase-space coordinates.

Variables are ordered ``(q1, ..., qn, p1, ..., pn)``. Coefficients may be
complex so that star products (which carry factors of ``i*hbar``) stay exact.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

Exponent = Tuple[int, ...]


def variable_names(n_dof: int) -> list[str]:
    if n_dof == 1:
        return ["q", "p"]
    return [f"q{i + 1}" for i in range(n_dof)] + [f"p{i + 1}" for i in range(n_dof)]


class Polynomial:
    """Immutable sparse polynomial ``sum_k c_k prod_i x_i**e_ki``."""

    __slots__ = ("nvars", "terms", "_compiled")

    def __init__(self, terms: Mapping[Exponent, complex], nvars: int):
        if nvars < 1:
            raise ValueError("nvars must be positive")
        clean: Dict[Exponent, complex] = {}
        for exp, c in terms.items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nvars:
                raise ValueError(f"exponent {exp} does not match nvars={nvars}")
            if any(e < 0 for e in exp):
                raise ValueError("negative exponent")
            if c != 0:
                clean[exp] = clean.get(exp, 0) + c
        self.nvars = nvars
        self.terms = {e: c for e, c in clean.items() if c != 0}
        self._compiled = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value: complex, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: value}, nvars)

    @classmethod
    def variable(cls, index: int, nvars: int) -> "Polynomial":
        exp = [0] * nvars
        exp[index] = 1
        return cls({tuple(exp): 1.0}, nvars)

    @classmethod
    def canonical(cls, n_dof: int = 1) -> tuple[list["Polynomial"], list["Polynomial"]]:
        """Return the coordinate polynomials ``([q1..qn], [p1..pn])``."""
        nv = 2 * n_dof
        qs = [cls.variable(i, nv) for i in range(n_dof)]
        ps = [cls.variable(n_dof + i, nv) for i in range(n_dof)]
        return qs, ps

    @classmethod
    def parse(cls, text: str, n_dof: int = 1) -> "Polynomial":
        """Parse an expression such as ``"q**2*p + 0.5*p**2"``.

        Names follow :func:`variable_names`.
        """
        import sympy

        names = variable_names(n_dof)
        symbols = sympy.symbols(names)
        local = dict(zip(names, symbols))
        local["I"] = sympy.I
        expr = sympy.sympify(text, locals=local)
        poly = sympy.Poly(sympy.expand(expr), *symbols)
        terms = {}
        for monom, coeff in poly.terms():
            c = complex(coeff)
            terms[tuple(monom)] = c.real if c.imag == 0 else c
        return cls(terms, len(names))

    # -- basic properties -------------------------------------------------
    @property
    def degree(self) -> int:
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_real(self) -> bool:
        return all(np.imag(c) == 0 for c in self.terms.values())

    def coefficient(self, exp: Sequence[int]) -> complex:
        return self.terms.get(tuple(exp), 0.0)

    def real(self) -> "Polynomial":
        return Polynomial({e: float(np.real(c)) for e, c in self.terms.items()}, self.nvars)

    def imag(self) -> "Polynomial":
        return Polynomial({e: float(np.imag(c)) for e, c in self.terms.items()}, self.nvars)

    def depends_on(self, index: int) -> bool:
        return any(e[index] > 0 for e in self.terms)

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("polynomials live in different variable spaces")
            return other
        if np.isscalar(other):
            return Polynomial.constant(other, self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self.terms.items()}, self.nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial({e: c * other for e, c in self.terms.items()}, self.nvars)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: Dict[Exponent, complex] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return self * (1.0 / scalar)

    def __pow__(self, n: int):
        if n < 0 or int(n) != n:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(1.0, self.nvars)
        for _ in range(int(n)):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= atol for c in diff.terms.values())

    def max_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- calculus ---------------------------------------------------------
    def derivative(self, index: int, order: int = 1) -> "Polynomial":
        out: Dict[Exponent, complex] = {}
        for e, c in self.terms.items():
            k = e[index]
            if k < order:
                continue
            factor = math.perm(k, order)
            new = list(e)
            new[index] = k - order
            out[tuple(new)] = out.get(tuple(new), 0) + c * factor
        return Polynomial(out, self.nvars)

    def multi_derivative(self, orders: Sequence[int]) -> "Polynomial":
        out = self
        for i, k in enumerate(orders):
            if k:
                out = out.derivative(i, k)
        return out

    # -- evaluation -------------------------------------------------------
    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at ``points`` of shape ``(..., nvars)``."""
        pts = np.asarray(points)
        if pts.shape[-1] != self.nvars:
            raise ValueError(f"expected trailing dimension {self.nvars}, got {pts.shape}")
        fn = self.compile()
        out = fn(pts)
        return np.broadcast_to(out, pts.shape[:-1]).copy() if np.ndim(out) < pts.ndim - 1 else out

    def compile(self) -> Callable[[np.ndarray], np.ndarray]:
        """Generate a vectorised evaluator ``f(x)`` with ``x[..., i]`` the variables."""
        if self._compiled is not None:
            return self._compiled
        pieces = []
        for e, c in sorted(self.terms.items()):
            factors = [repr(complex(c)) if np.iscomplexobj(c) and np.imag(c) != 0 else repr(float(np.real(c)))]
            for i, k in enumerate(e):
                if k == 1:
                    factors.append(f"x[..., {i}]")
                elif k > 1:
                    factors.append(f"x[..., {i}]**{k}")
            pieces.append("*".join(factors))
        body = " + ".join(pieces) if pieces else "0.0"
        src = f"def _poly(x):\n    return {body} + 0.0*x[..., 0]\n"
        namespace: dict = {}
        exec(compile(src, "<polynomial>", "exec"), namespace)
        self._compiled = namespace["_poly"]
        return self._compiled

    # -- display ----------------------------------------------------------
    def to_string(self, names: Iterable[str] | None = None) -> str:
        if names is None:
            names = variable_names(self.nvars // 2) if self.nvars % 2 == 0 else [f"x{i}" for i in range(self.nvars)]
        names = list(names)
        if not self.terms:
            return "0"
        parts = []
        for e, c in sorted(self.terms.items(), key=lambda kv: (-sum(kv[0]), kv[0])):
            mono = "*".join(n if k == 1 else f"{n}**{k}" for n, k in zip(names, e) if k)
            coeff = c if np.imag(c) != 0 else float(np.real(c))
            parts.append(f"({coeff})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    def __repr__(self):
        return f"Polynomial({self.to_string()})"
