"""Compiled inner loops for fixed-step symplectic integration of polynomial Hamiltonians.

Each gradient component is a list of monomials stored as an exponent matrix,
coefficients and offsets (component ``c`` owns rows ``offsets[c]:offsets[c+1]``).
The tables are turned into straight-line scalar source and compiled once per
Hamiltonian, which keeps the per-particle step free of array traffic.
"""

import numpy as np
from numba import njit

_CACHE: dict = {}


def _component_source(exps, coefs, offsets, name):
    lines = []
    for c in range(offsets.size - 1):
        terms = []
        for m in range(offsets[c], offsets[c + 1]):
            factors = [repr(float(coefs[m]))]
            for i, e in enumerate(exps[m]):
                factors.extend([f"{name}{i}"] * int(e))
            terms.append("*".join(factors))
        lines.append(" + ".join(terms) if terms else "0.0")
    return lines


def _step_source(kin, pot, n, indent):
    pad = " " * indent
    dT = _component_source(*kin, "p")
    dV = _component_source(*pot, "q")
    out = [f"{pad}for w in weights:", f"{pad}    hh = w * h"]
    out += [f"{pad}    p{i} -= 0.5 * hh * ({dV[i]})" for i in range(n)]
    out += [f"{pad}    g{i} = {dT[i]}" for i in range(n)]
    out += [f"{pad}    q{i} += hh * g{i}" for i in range(n)]
    out += [f"{pad}    p{i} -= 0.5 * hh * ({dV[i]})" for i in range(n)]
    return out


def _key(kin, pot):
    return tuple(a.tobytes() + str(a.shape).encode() for t in (kin, pot) for a in t)


def steppers(kin, pot):
    """Return compiled ``(batch, path)`` integrators for the given monomial tables."""
    key = _key(kin, pot)
    if key in _CACHE:
        return _CACHE[key]
    n = kin[2].size - 1
    load = [f"        q{i} = Q[k, {i}]; p{i} = P[k, {i}]" for i in range(n)]
    store = [f"        Q[k, {i}] = q{i}; P[k, {i}] = p{i}" for i in range(n)]
    batch = ["def batch(Q, P, steps, dt, rem, weights):",
             "    for k in range(Q.shape[0]):", *load,
             "        for s in range(steps + 1):",
             "            h = dt if s < steps else rem",
             "            if h == 0.0:",
             "                break",
             *_step_source(kin, pot, n, 12), *store]
    path = ["def path(x0, steps_h, weights):",
            f"    out = np.empty((steps_h.size + 1, {2 * n}))",
            "    out[0] = x0",
            *[f"    q{i} = x0[{i}]; p{i} = x0[{n + i}]" for i in range(n)],
            "    for k in range(steps_h.size):",
            "        h = steps_h[k]",
            *_step_source(kin, pot, n, 8),
            *[f"        out[k + 1, {i}] = q{i}; out[k + 1, {n + i}] = p{i}" for i in range(n)],
            "    return out"]
    namespace = {"np": np}
    exec(compile("\n".join(batch) + "\n\n" + "\n".join(path) + "\n", "<stepper>", "exec"), namespace)
    result = njit(namespace["batch"]), njit(namespace["path"])
    _CACHE[key] = result
    return result
