"""Batch front-end: ``qclimit <subcommand> [--config FILE] [flags]``.

Configuration is merged from built-in defaults, an optional JSON file,
``QCLIMIT_<KEY>`` environment variables and command-line flags (later wins),
validated against the subcommand's JSON schema, and executed. Every run
writes its artifacts plus ``manifest.json`` (config, versions, checksums)
into ``--out``. Exit codes: 0 ok, 2 bad configuration, 3 numerical contract
violation, 4 I/O failure.
"""

import argparse
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .exceptions import ArtifactIOError, ContractViolation, QCLimitError, SchemaError
from .io import (
    fmt,
    read_atlas,
    read_json,
    read_kernel,
    read_operator,
    read_phase_function,
    sha256,
    write_atlas,
    write_csv,
    write_json,
    write_operator,
    write_phase_function,
)

ENV_PREFIX = "QCLIMIT_"
SUBCOMMANDS = ("symb", "quantize", "star", "bracket", "decohere", "charts", "classical", "billiard", "walkthrough")
WALKTHROUGHS = ("phase-space", "decoherence", "classical-limit", "frobenius-perron", "billiard")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_BOX = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "minItems": 1}

_COMMON = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "workers": {"type": "integer", "minimum": 1},
    "out": {"type": "string"},
    "hbar": _POS,
    "action_scale": _POS,
}

DEFAULTS = {
    "common": {"seed": 0, "workers": 1, "out": "qclimit-out", "hbar": 1.0, "action_scale": 100.0},
    "symb": {"kind": "state", "state": {"family": "oscillator", "n": 0}, "dim": 65, "dq": 0.3, "origin": 0.0},
    "quantize": {"polynomial": "p**2/2 + q**2/2", "dim": 65, "dq": 0.3, "origin": 0.0},
    "star": {"f": "q", "g": "p", "backend": "polynomial", "extent": 2.0, "count": 65, "n_dof": 1},
    "bracket": {"f": "q**3", "g": "p**3", "kind": "moyal", "backend": "polynomial", "extent": 2.0,
                "count": 65, "n_dof": 1},
    "decohere": {"scenario": "gaussian", "sigma": 0.5, "gamma": 1.0, "omega_max": 20.0, "count": 401,
                 "width": 2.0, "threshold": 0.1, "samples": 201},
    "charts": {"action": "build", "hbar": 1e-5, "action_scale": 1.0, "hamiltonian": "p**2/2 + q**2/2", "n_dof": 1,
               "region": [[-0.5, 0.5], [1.0, 2.0]], "counts": 129,
               "seeds": [{"axis": 0, "value": 0.0, "function": "q"}],
               "boxes": None, "epsilon": 0.05, "dt": 0.01, "t_max": 20.0, "tol": 1e-6},
    "classical": {"hamiltonian": "p**2/2 + q**2/2", "n_dof": 1, "box": [[-2.0, 2.0], [-2.0, 2.0]],
                  "constants": None, "specs": [{"chart_id": 0, "levels": [0.5], "weight": 1.0}],
                  "eta": 0.1, "grid_count": 257, "samples": 200000,
                  "ensemble": {"n": 10000, "times": [1.0, 10.0], "dt": 0.01}, "bins": 32},
    "billiard": {"lx": 1.0, "ly": 1.0, "radius": 0.25, "d": 0.05, "start": [0.3, 0.1, 0.7648, 0.6442],
                 "t_end": 100.0, "dt": 1e-4, "sample_every": 100, "lyapunov": False, "lyapunov_t_end": 1000.0},
    "walkthrough": {},
}

SCHEMAS = {
    "symb": {"properties": {"kind": {"enum": ["state", "observable"]}, "operator": {"type": "string"},
                            "state": {"type": "object", "properties": {"family": {"enum": ["oscillator"]},
                                                                       "n": {"type": "integer", "minimum": 0}}},
                            "dim": {"type": "integer", "minimum": 3}, "dq": _POS, "origin": _NUM}},
    "quantize": {"properties": {"polynomial": {"type": "string"}, "symbol": {"type": "string"},
                                "dim": {"type": "integer", "minimum": 3}, "dq": _POS, "origin": _NUM}},
    "star": {"properties": {"f": {"type": "string"}, "g": {"type": "string"},
                            "backend": {"enum": ["polynomial", "grid"]}, "extent": _POS,
                            "count": {"type": "integer", "minimum": 9}, "order": _INT,
                            "n_dof": {"type": "integer", "minimum": 1}}},
    "bracket": {"properties": {"f": {"type": "string"}, "g": {"type": "string"},
                               "kind": {"enum": ["moyal", "poisson"]},
                               "backend": {"enum": ["polynomial", "grid"]}, "extent": _POS,
                               "count": {"type": "integer", "minimum": 9}, "order": _INT,
                               "n_dof": {"type": "integer", "minimum": 1}}},
    "decohere": {"properties": {"scenario": {"enum": ["gaussian", "lorentzian", "files"]},
                                "state": {"type": "string"}, "observable": {"type": "string"},
                                "sigma": _POS, "gamma": _POS, "omega_max": _POS,
                                "count": {"type": "integer", "minimum": 3}, "width": _POS,
                                "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                                "samples": {"type": "integer", "minimum": 2}}},
    "charts": {"properties": {"action": {"enum": ["build", "verify"]}, "atlas": {"type": "string"},
                              "hamiltonian": {"type": "string"}, "n_dof": {"type": "integer", "minimum": 1},
                              "region": _BOX, "counts": {"type": "integer", "minimum": 9},
                              "seeds": {"type": "array", "items": {
                                  "type": "object", "required": ["axis", "function"],
                                  "properties": {"axis": {"type": "integer", "minimum": 0}, "value": _NUM,
                                                 "function": {"type": "string"}}}},
                              "boxes": {"anyOf": [{"type": "null"}, {"type": "array", "items": _BOX}]},
                              "epsilon": _POS, "dt": _POS, "t_max": _POS, "tol": _POS}},
    "classical": {"properties": {"atlas": {"type": "string"}, "hamiltonian": {"type": "string"},
                                 "n_dof": {"type": "integer", "minimum": 1}, "box": _BOX,
                                 "constants": {"anyOf": [{"type": "null"}, {"type": "object"}]},
                                 "specs": {"anyOf": [{"type": "string"}, {"type": "array", "items": {
                                     "type": "object", "required": ["chart_id", "levels", "weight"],
                                     "properties": {"chart_id": _INT, "levels": {"type": "array", "items": _NUM},
                                                    "weight": {"type": "number", "minimum": 0}}}}]},
                                 "eta": _POS, "grid_count": {"type": "integer", "minimum": 9},
                                 "samples": {"type": "integer", "minimum": 1000},
                                 "ensemble": {"type": "object", "properties": {
                                     "n": {"type": "integer", "minimum": 100},
                                     "times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                                     "dt": _POS}},
                                 "bins": {"type": "integer", "minimum": 2}}},
    "billiard": {"properties": {"lx": _POS, "ly": _POS, "radius": {"type": "number", "minimum": 0}, "d": _POS,
                                "start": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                                "t_end": _POS, "dt": _POS, "sample_every": {"type": "integer", "minimum": 1},
                                "lyapunov": {"type": "boolean"}, "lyapunov_t_end": _POS}},
    "walkthrough": {"properties": {"scenario": {"enum": list(WALKTHROUGHS)}}, "required": ["scenario"]},
}


def _schema(name: str) -> dict:
    s = SCHEMAS[name]
    return {"type": "object", "properties": {**_COMMON, **s["properties"]}, "required": s.get("required", []),
            "additionalProperties": False}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _env_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(keys, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in keys:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = _env_value(environ[name])
    return out


def build_config(name: str, file_config: dict | None, flags: dict, environ=None) -> dict:
    config = {**DEFAULTS["common"], **DEFAULTS.get(name, {})}
    if file_config:
        if not isinstance(file_config, dict):
            raise SchemaError("configuration file must hold a JSON object")
        config.update(file_config)
    keys = set(_schema(name)["properties"])
    config.update(env_overrides(keys, environ))
    config.update({k: v for k, v in flags.items() if v is not None})
    try:
        jsonschema.validate(config, _schema(name))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"config error at {path}: {exc.message}") from None
    if config["hbar"] >= config["action_scale"]:
        warnings.warn("hbar is not small against the action scale; atlas operations will be refused")
    return config


# ---------------------------------------------------------------------------
# pipelines: each returns (artifact paths, summary dict)
# ---------------------------------------------------------------------------


def _poly(text: str, n_dof: int):
    from .polynomial import Polynomial

    try:
        return Polynomial.parse(text, n_dof)
    except QCLimitError:
        raise
    except Exception as exc:
        raise SchemaError(f"cannot parse polynomial {text!r}: {exc}") from None


def _cfloat(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def run_symb(cfg, out: Path):
    from .weylwigner import oscillator_state, wigner_symb

    if "operator" in cfg:
        op = read_operator(cfg["operator"])
    else:
        st = cfg["state"]
        op = oscillator_state(int(st.get("n", 0)), cfg["dim"], cfg["dq"], cfg["origin"], cfg["hbar"])
    sym = wigner_symb(op, cfg["kind"])
    files = list(write_phase_function(out / "symbol.csv", sym.function))
    vals = np.real(sym.values)
    summary = {"dim": op.dim, "kind": cfg["kind"], "min": float(vals.min()), "max": float(vals.max()),
               "hermitian_error": op.hermitian_error}
    return files, summary


def run_quantize(cfg, out: Path):
    from .weylwigner import WignerSymbol, weyl_operator, weyl_quantize

    if "symbol" in cfg:
        f = read_phase_function(cfg["symbol"])
        op = weyl_operator(WignerSymbol(f, f.hbar, "observable"), dq=cfg["dq"], origin=cfg["origin"])
    else:
        op = weyl_quantize(_poly(cfg["polynomial"], 1), cfg["dim"], cfg["dq"], cfg["origin"], cfg["hbar"])
    path = write_operator(out / "operator.json", op)
    summary = {"dim": op.dim, "trace": _cfloat(op.trace), "hermitian_error": op.hermitian_error}
    return [path], summary


def _pair_functions(cfg):
    from .phasespace import PhaseFunction, PhaseGrid

    n = cfg["n_dof"]
    f, g = _poly(cfg["f"], n), _poly(cfg["g"], n)
    grid = PhaseGrid.square(n, cfg["extent"], cfg["count"])
    if cfg["backend"] == "polynomial":
        return PhaseFunction.from_polynomial(f, grid, cfg["hbar"]), PhaseFunction.from_polynomial(g, grid, cfg["hbar"])
    return (PhaseFunction(grid, np.real(f.evaluate(grid.nodes())), hbar=cfg["hbar"]),
            PhaseFunction(grid, np.real(g.evaluate(grid.nodes())), hbar=cfg["hbar"]))


def _function_summary(res):
    summary = {"max_abs": float(np.max(np.abs(res.values)))}
    if res.exact_form is not None:
        summary["result"] = res.exact_form.to_string()
    return summary


def run_star(cfg, out: Path):
    from .weylwigner import star_product

    f, g = _pair_functions(cfg)
    res = star_product(f, g, cfg.get("order"), cfg["hbar"])
    return list(write_phase_function(out / "star.csv", res)), _function_summary(res)


def run_bracket(cfg, out: Path):
    from .phasespace import poisson_bracket
    from .weylwigner import moyal_bracket

    f, g = _pair_functions(cfg)
    if cfg["kind"] == "moyal":
        res = moyal_bracket(f, g, cfg.get("order"), cfg["hbar"])
    else:
        res = poisson_bracket(f, g, accuracy=4)
    return list(write_phase_function(out / "bracket.csv", res)), _function_summary(res)


def decoherence_table(rho, obs, samples: int):
    """Rows ``t, total_re, total_im, singular_re, regular_envelope`` up to the resolution horizon."""
    from .vanhove import PHASE_RESOLUTION, regular_part, singular_part

    horizon = PHASE_RESOLUTION * rho.hbar / rho.grid.spacing
    t = np.linspace(0.0, horizon, samples)
    s = singular_part(rho, obs)
    r = regular_part(rho, obs, t)
    mag = np.abs(r) / abs(r[0])
    envelope = np.maximum.accumulate(mag[::-1])[::-1]
    total = s + r
    return np.column_stack([t, total.real, total.imag, np.full(t.size, s.real), envelope])


def _decoherence_inputs(cfg):
    from .vanhove import (OmegaGrid, gaussian_decoherence_time, gaussian_profile, lorentzian_decoherence_time,
                          lorentzian_profile, profile_state, unit_observable)

    hbar = cfg["hbar"]
    if cfg["scenario"] == "files":
        if "state" not in cfg or "observable" not in cfg:
            raise SchemaError("scenario 'files' needs 'state' and 'observable' paths")
        return read_kernel(cfg["state"], "state"), read_kernel(cfg["observable"], "observable"), None
    grid = OmegaGrid(cfg["omega_max"], cfg["count"])
    if cfg["scenario"] == "gaussian":
        prof = gaussian_profile(cfg["sigma"])
        analytic = gaussian_decoherence_time(cfg["sigma"], cfg["threshold"], hbar)
    else:
        prof = lorentzian_profile(cfg["gamma"])
        analytic = lorentzian_decoherence_time(cfg["gamma"], cfg["threshold"], hbar)
    rho = profile_state(grid, prof, width=cfg["width"], hbar=hbar)
    return rho, unit_observable(grid, hbar=hbar), analytic


def run_decohere(cfg, out: Path):
    from .vanhove import decoherence_time

    rho, obs, analytic = _decoherence_inputs(cfg)
    rows = decoherence_table(rho, obs, cfg["samples"])
    path = write_csv(out / "decoherence.csv", ["t", "total_re", "total_im", "singular_re", "regular_envelope"], rows)
    res = decoherence_time(rho, obs, cfg["threshold"])
    summary = {"decoherence_time": res.time, "threshold": cfg["threshold"], "regular_initial": res.initial,
               "singular": float(rows[0, 3])}
    if analytic is not None:
        summary["analytic_time"] = analytic
        summary["relative_error"] = abs(res.time - analytic) / analytic
    return [path], summary


def _refuse_atlas(cfg):
    if cfg["hbar"] >= cfg["action_scale"]:
        raise ContractViolation("hbar must be much smaller than the action scale for atlas operations")


def run_charts(cfg, out: Path):
    from .charts import Hypersurface, build_involutive_set, build_partition, lipschitz_check

    _refuse_atlas(cfg)
    n = cfg["n_dof"]
    H = _poly(cfg["hamiltonian"], n)
    if cfg["action"] == "verify":
        return _verify_atlas(cfg, H, out)
    region = np.asarray(cfg["region"], dtype=float)
    if region.shape != (2 * n, 2):
        raise SchemaError(f"region must have {2 * n} [lo, hi] rows")
    boxes = [np.asarray(b, dtype=float) for b in (cfg["boxes"] or [region])]
    atlas = build_partition(boxes, cfg["epsilon"], cfg["hbar"], cfg["action_scale"])
    seeds = [(Hypersurface(int(s["axis"]), float(s.get("value", 0.0))), _poly(s["function"], n).compile())
             for s in cfg["seeds"]]
    report = {"charts": []}
    for bump in atlas.bumps:
        lip = lipschitz_check(H, bump.box)
        if not lip.ok:
            raise ContractViolation(f"Hamiltonian not Lipschitz on chart {bump.chart_id} (bound {lip.bound:.3g})")
        chart = build_involutive_set(H, seeds, bump.box, cfg["counts"], bump.chart_id, bracket_tol=cfg["tol"],
                                     frontier_width=cfg["epsilon"], dt=cfg["dt"], t_max=cfg["t_max"])
        atlas.charts.append(chart)
        report["charts"].append({"id": bump.chart_id, "max_residual": float(np.max(chart.residuals)),
                                 "valid_fraction": float(np.mean(chart.valid)), "lipschitz_bound": lip.bound})
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = atlas.region[:, 0], atlas.region[:, 1]
    report["partition_error"] = atlas.partition_error(lo + (hi - lo) * rng.random((10_000, lo.size)))
    files = write_atlas(out / "atlas.json", atlas, cfg["hamiltonian"])
    files.append(write_json(out / "report.json", report))
    return files, report


def _verify_atlas(cfg, H, out: Path):
    from .charts import bracket_residual, interior_stencil_mask

    if "atlas" not in cfg:
        raise SchemaError("charts verify needs 'atlas'")
    atlas = read_atlas(cfg["atlas"])
    report = {"charts": [], "tol": cfg["tol"]}
    worst = 0.0
    for chart in atlas.charts:
        for k, c in enumerate(chart.constants[1:], start=1):
            mask = interior_stencil_mask(np.isfinite(c.values))
            r, where, _ = bracket_residual(H, c, mask)
            worst = max(worst, r)
            report["charts"].append({"id": chart.id, "constant": k, "residual": r,
                                     "location": None if where is None else np.asarray(where).tolist()})
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = atlas.region[:, 0], atlas.region[:, 1]
    report["partition_error"] = atlas.partition_error(lo + (hi - lo) * rng.random((10_000, lo.size)))
    report["ok"] = bool(worst <= cfg["tol"] and report["partition_error"] <= 1e-12)
    path = write_json(out / "verify.json", report)
    if not report["ok"]:
        raise ContractViolation(f"atlas verification failed: residual {worst:.3g}, "
                                f"partition error {report['partition_error']:.3g}")
    return [path], report


def _level_charts(cfg, n: int):
    from .classical import LevelChart

    H = _poly(cfg["hamiltonian"], n).compile()
    if "atlas" in cfg:
        atlas = read_atlas(cfg["atlas"])
        if not atlas.charts:
            raise SchemaError("atlas carries no chart constants")
        multi = len(atlas.charts) > 1
        return [LevelChart.from_chart(c, (lambda cid: (lambda x: atlas.bump(cid, x)))(c.id) if multi else None)
                for c in atlas.charts]
    box = np.asarray(cfg["box"], dtype=float)
    extra = cfg["constants"] or {}
    consts = [H] + [_poly(s, n).compile() for s in extra.get("0", [])]
    return [LevelChart(0, box, consts)]


def run_classical(cfg, out: Path):
    from .classical import (LevelSpec, bin_probabilities, binned_chi_square, classical_density, config_volume,
                            sample_trajectories)
    from .phasespace import PhaseGrid, flow_points

    n = cfg["n_dof"]
    H = _poly(cfg["hamiltonian"], n)
    charts = _level_charts(cfg, n)
    raw_specs = read_json(cfg["specs"]) if isinstance(cfg["specs"], str) else cfg["specs"]
    specs = [LevelSpec(int(s["chart_id"]), tuple(s["levels"]), float(s["weight"])) for s in raw_specs]
    by_id = {c.id: c for c in charts}
    vols = []
    for k, s in enumerate(specs):
        if s.chart_id not in by_id:
            raise SchemaError(f"spec refers to unknown chart {s.chart_id}")
        vols.append(config_volume(by_id[s.chart_id], s.levels, cfg["samples"], cfg["seed"] + k, cfg["eta"],
                                  workers=cfg["workers"]))
    box = np.asarray(cfg["box"], dtype=float)
    grid = PhaseGrid(tuple(box[:, 0]), tuple(box[:, 1]), (cfg["grid_count"],) * box.shape[0])
    density = classical_density(charts, specs, vols, cfg["eta"], grid)
    files = list(write_phase_function(out / "density.csv", density.function))
    ens_cfg = {"n": 10000, "times": [1.0], "dt": 0.01, **cfg["ensemble"]}
    start, _ = sample_trajectories(density, box, ens_cfg["n"], 0.0, cfg["seed"])
    header = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["weight"]
    rows = [np.column_stack([np.zeros(start.size), start.points, start.weights])]
    edges = [np.linspace(lo, hi, cfg["bins"] + 1) for lo, hi in box] if box.shape[0] == 2 else None
    prob = bin_probabilities(density.pdf, edges) if edges is not None else None
    chi = {}
    pts, t_prev = start.points, 0.0
    for t in sorted(ens_cfg["times"]):
        pts = flow_points(H, pts, t - t_prev, ens_cfg["dt"])
        t_prev = t
        rows.append(np.column_stack([np.full(start.size, t), pts, start.weights]))
        if prob is not None:
            chi[fmt(t)] = binned_chi_square(pts, prob, edges).p_value
    files.append(write_csv(out / "ensemble.csv", header, np.concatenate(rows)))
    report = {"normalization": density.normalization, "min_value": density.min_value,
              "raw_integral": density.raw_integral, "chi_square_p": chi,
              "volumes": [{"chart_id": v.chart_id, "levels": list(v.levels), "volume": v.volume,
                           "mc_error": v.mc_error} for v in vols]}
    files.append(write_json(out / "report.json", report))
    return files, report


def run_billiard(cfg, out: Path):
    from .billiard import BilliardSpec, lyapunov, simulate_billiard

    spec = BilliardSpec(cfg["lx"], cfg["ly"], cfg["radius"], cfg["d"])
    traj = simulate_billiard(spec, cfg["start"], cfg["t_end"], cfg["dt"], cfg["sample_every"])
    header = ["t", "qx", "qy", "px", "py", "domain", "H", "Px", "Py", "Ptheta"]
    rows = [[*r[:5], str(int(r[5])), *r[6:]] for r in traj.to_rows()]
    files = [write_csv(out / "trajectory.csv", header, rows)]
    table = traj.domain_table()
    summary = {"energy_drift": traj.energy_drift, "visited": sorted(traj.visited()),
               "domains": {f"D{k}": v for k, v in table.items()}}
    if cfg["lyapunov"]:
        res = lyapunov(spec, cfg["start"], cfg["lyapunov_t_end"], dt=cfg["dt"], seed=cfg["seed"])
        summary["lyapunov"] = {"lambda_max": res.lambda_max, "stderr": res.stderr}
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def run_walkthrough(cfg, out: Path):
    from . import walkthrough

    report = walkthrough.run(cfg["scenario"], cfg)
    return [write_json(out / f"walkthrough-{cfg['scenario']}.json", report)], report


PIPELINES = {"symb": run_symb, "quantize": run_quantize, "star": run_star, "bracket": run_bracket,
             "decohere": run_decohere, "charts": run_charts, "classical": run_classical,
             "billiard": run_billiard, "walkthrough": run_walkthrough}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _versions() -> dict:
    import numba
    import scipy
    import sympy

    return {"qclimit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "sympy": sympy.__version__}


def write_manifest(out: Path, name: str, config: dict, files) -> Path:
    artifacts = {}
    for f in files:
        rel = Path(f).relative_to(out).as_posix()
        artifacts[rel] = sha256(f)
    manifest = {"subcommand": name, "config": config, "versions": _versions(), "artifacts": artifacts}
    return write_json(out / "manifest.json", manifest)


def _csv_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qclimit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out")
    common.add_argument("--hbar", type=float)
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    sub.add_parser("symb", parents=[common], help="Wigner symbol of an operator")
    q = sub.add_parser("quantize", parents=[common], help="Weyl quantization of a polynomial or symbol")
    q.add_argument("--polynomial")
    for name in ("star", "bracket"):
        p = sub.add_parser(name, parents=[common], help=f"{name} of two phase-space polynomials")
        p.add_argument("--f")
        p.add_argument("--g")
        p.add_argument("--backend", choices=["polynomial", "grid"])
    sub.add_parser("decohere", parents=[common], help="regular/singular mean-value decomposition over time")
    c = sub.add_parser("charts", parents=[common], help="build or verify a chart atlas")
    c.add_argument("action", choices=["build", "verify"])
    c.add_argument("--atlas")
    cl = sub.add_parser("classical", parents=[common], help="classical limit density and ensemble")
    cl.add_argument("--atlas")
    cl.add_argument("--specs")
    b = sub.add_parser("billiard", parents=[common], help="smoothed-wall Sinai billiard run")
    b.add_argument("--lx", type=float)
    b.add_argument("--ly", type=float)
    b.add_argument("--radius", type=float)
    b.add_argument("--d", type=float)
    b.add_argument("--start", type=_csv_floats, help="qx,qy,px,py")
    b.add_argument("--t-end", dest="t_end", type=float)
    b.add_argument("--dt", type=float)
    b.add_argument("--lyapunov", action="store_true", default=None)
    w = sub.add_parser("walkthrough", parents=[common], help="end-to-end scenario report")
    w.add_argument("scenario", choices=WALKTHROUGHS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    name = args.command
    try:
        file_config = read_json(args.config) if args.config else None
        config = build_config(name, file_config, flags)
        out = Path(config["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create output directory {out}: {exc}") from exc
        files, summary = PIPELINES[name](config, out)
        if not any(Path(f).name in ("summary.json", "report.json") or Path(f).name.startswith("walkthrough-")
                   for f in files):
            files.append(write_json(out / "summary.json", summary))
        write_manifest(out, name, config, files)
        if isinstance(summary, dict) and summary.get("pass") is False:
            failed = [k for k, c in summary.get("checks", {}).items() if not c["pass"]]
            print(f"qclimit {name}: checks failed: {', '.join(failed)}", file=sys.stderr)
            return ContractViolation.exit_code
    except QCLimitError as exc:
        print(f"qclimit {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
