"""File formats: PhaseFunction CSV + JSON sidecar, operator/kernel/atlas JSON, deterministic CSV."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .charts import Atlas, build_partition
from .exceptions import ArtifactIOError, SchemaError
from .phasespace import PhaseFunction, PhaseGrid
from .polynomial import Polynomial
from .vanhove import OmegaGrid, VanHoveObservable, VanHoveState
from .weylwigner import OperatorMatrix


def fmt(x) -> str:
    """Shortest round-trip text for a float (deterministic across runs)."""
    x = float(x)
    if x == 0.0:
        return "0"
    return repr(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    except (ValueError, StopIteration) as exc:
        raise SchemaError(f"malformed CSV {path}: {exc}") from exc
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def write_json(path, obj) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _complex_list(a) -> list:
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _from_complex_list(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise SchemaError(f"{name} entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


# ---------------------------------------------------------------------------
# PhaseFunction
# ---------------------------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_phase_function(path, f: PhaseFunction) -> tuple[Path, Path]:
    """Write ``axis0,...,re,im`` rows in row-major node order plus the grid sidecar."""
    path = Path(path)
    g = f.grid
    nodes = g.nodes().reshape(-1, g.ndim)
    vals = np.asarray(f.values, dtype=complex).reshape(-1)
    header = [f"axis{i}" for i in range(g.ndim)] + ["re", "im"]
    rows = np.column_stack([nodes, vals.real, vals.imag])
    write_csv(path, header, rows)
    meta = {"mins": list(g.mins), "maxs": list(g.maxs), "counts": list(g.counts),
            "periodic": list(g.periodic), "hbar": f.hbar}
    if f.exact_form is not None:
        meta["exact_form"] = f.exact_form.to_string()
    write_json(_sidecar(path), meta)
    return path, _sidecar(path)


def read_phase_function(path) -> PhaseFunction:
    path = Path(path)
    meta = read_json(_sidecar(path))
    for key in ("mins", "maxs", "counts", "periodic", "hbar"):
        if key not in meta:
            raise SchemaError(f"sidecar of {path} lacks '{key}'")
    grid = PhaseGrid(tuple(meta["mins"]), tuple(meta["maxs"]), tuple(meta["counts"]), tuple(meta["periodic"]))
    header, data = read_csv(path)
    expected = [f"axis{i}" for i in range(grid.ndim)] + ["re", "im"]
    if header != expected:
        raise SchemaError(f"{path} header {header} != {expected}")
    if data.shape[0] != int(np.prod(grid.shape)):
        raise SchemaError(f"{path} has {data.shape[0]} rows for a grid of {int(np.prod(grid.shape))} nodes")
    vals = (data[:, -2] + 1j * data[:, -1]).reshape(grid.shape)
    if np.all(data[:, -1] == 0):
        vals = vals.real
    exact = meta.get("exact_form")
    exact = Polynomial.parse(exact, grid.n_dof) if exact is not None else None
    return PhaseFunction(grid, vals, exact_form=exact, hbar=float(meta["hbar"]))


# ---------------------------------------------------------------------------
# OperatorMatrix
# ---------------------------------------------------------------------------


def operator_to_json(op: OperatorMatrix) -> dict:
    return {"dim": op.dim, "dq": op.dq, "origin": op.origin, "hbar": op.hbar,
            "entries": _complex_list(op.entries.reshape(-1))}


def operator_from_json(data: dict) -> OperatorMatrix:
    for key in ("dim", "dq", "entries"):
        if key not in data:
            raise SchemaError(f"operator JSON lacks '{key}'")
    dim = int(data["dim"])
    entries = _from_complex_list(data["entries"], "operator")
    if entries.size != dim * dim:
        raise SchemaError(f"operator has {entries.size} entries, expected {dim * dim}")
    return OperatorMatrix(entries.reshape(dim, dim), float(data["dq"]), float(data.get("origin", 0.0)),
                          float(data.get("hbar", 1.0)))


def write_operator(path, op: OperatorMatrix) -> Path:
    return write_json(path, operator_to_json(op))


def read_operator(path) -> OperatorMatrix:
    return operator_from_json(read_json(path))


# ---------------------------------------------------------------------------
# van Hove kernels
# ---------------------------------------------------------------------------


def kernel_to_json(k) -> dict:
    return {"omega_max": k.grid.omega_max, "count": k.grid.count, "charts": list(k.charts),
            "m_dim": k.m_dim, "hbar": k.hbar,
            "singular": _complex_list(k.singular), "regular": _complex_list(k.regular)}


def kernel_from_json(data: dict, kind: str = "state"):
    for key in ("omega_max", "count", "m_dim", "singular", "hbar"):
        if key not in data:
            raise SchemaError(f"kernel JSON lacks '{key}'")
    grid = OmegaGrid(float(data["omega_max"]), int(data["count"]))
    singular = _from_complex_list(data["singular"], "singular")
    regular = _from_complex_list(data["regular"], "regular") if data.get("regular") is not None else None
    charts = data.get("charts")
    if kind == "state":
        return VanHoveState(grid, singular, regular, float(data["hbar"]), charts)
    if kind == "observable":
        return VanHoveObservable(grid, singular, regular, float(data["hbar"]), charts)
    raise SchemaError(f"unknown kernel kind {kind!r}")


def write_kernel(path, k) -> Path:
    return write_json(path, kernel_to_json(k))


def read_kernel(path, kind: str = "state"):
    return kernel_from_json(read_json(path), kind)


# ---------------------------------------------------------------------------
# atlas
# ---------------------------------------------------------------------------


def write_atlas(path, atlas: Atlas, hamiltonian: str | None = None) -> list[Path]:
    """Atlas JSON plus one PhaseFunction CSV (and sidecar) per stored chart constant."""
    path = Path(path)
    written = []
    charts = []
    by_id = {c.id: c for c in atlas.charts}
    for bump in atlas.bumps:
        entry = {"id": bump.chart_id, "box": np.asarray(bump.box).tolist(), "epsilon": bump.epsilon,
                 "constants": []}
        chart = by_id.get(bump.chart_id)
        if chart is not None:
            for k, c in enumerate(chart.constants):
                name = f"{path.stem}_chart{bump.chart_id}_const{k}.csv"
                written += list(write_phase_function(path.parent / name, c))
                entry["constants"].append(name)
        charts.append(entry)
    doc = {"charts": charts, "epsilon": atlas.epsilon, "action_scale": atlas.action_scale, "hbar": atlas.hbar}
    if hamiltonian is not None:
        doc["hamiltonian"] = hamiltonian
    write_json(path, doc)
    return [path] + written


def read_atlas(path) -> Atlas:
    from .charts import Chart

    path = Path(path)
    doc = read_json(path)
    if "charts" not in doc or not doc["charts"]:
        raise SchemaError(f"{path} has no charts")
    boxes = [np.asarray(c["box"], dtype=float) for c in doc["charts"]]
    ids = [int(c["id"]) for c in doc["charts"]]
    eps = float(doc.get("epsilon", doc["charts"][0]["epsilon"]))
    atlas = build_partition(boxes, eps, doc.get("hbar"), float(doc.get("action_scale", 1.0)), ids)
    for c, box in zip(doc["charts"], boxes):
        consts = [read_phase_function(path.parent / name) for name in c.get("constants", [])]
        if consts:
            atlas.charts.append(Chart(int(c["id"]), box, eps, consts))
    return atlas
