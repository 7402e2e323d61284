"""On-disk containers: JSON manifest + raw little-endian float32 binaries.

Every container is a directory holding ``manifest.json`` (with a
``format_version``) and one ``.bin`` file per array.  JSON is written with
sorted keys and no timestamps so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .conformal import ConformalCalibration
from .deeponet import BranchConfig, DeepONetModel, TrunkConfig, parameter_names
from .errors import ConfigError, ProvenanceError
from .tasks import Dataset
from .training import NormStats

FORMAT_VERSION = 1
DTYPE = "<f4"
MANIFEST = "manifest.json"


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing file {path}")
    return json.loads(path.read_text())


def write_f32(path, arr):
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype=DTYPE).tobytes())


def read_f32(path, shape):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing file {path}")
    raw = np.frombuffer(path.read_bytes(), dtype=DTYPE)
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise ConfigError(f"{path} holds {raw.size} values, manifest expects {expected}")
    return raw.astype(np.float64).reshape(shape)


def _manifest(directory, kind):
    m = read_json(Path(directory) / MANIFEST)
    if m.get("kind") != kind:
        raise ConfigError(f"{directory} is not a {kind} container (kind={m.get('kind')!r})")
    if m.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{directory}: unsupported format_version {m.get('format_version')}")
    return m


# ---------------------------------------------------------------- datasets


def save_dataset(data: Dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    N, T, C = data.branch_inputs.shape
    P, dim = data.grid.shape
    write_f32(d / "branch_inputs.bin", data.branch_inputs)
    write_f32(d / "coords.bin", data.grid)
    write_f32(d / "fields.bin", data.fields)
    write_json(d / MANIFEST, {
        "kind": "dataset", "format_version": FORMAT_VERSION,
        "N": N, "T": T, "C": C, "P": P, "d": dim,
        "dtype": "float32", "byte_order": "little", "role": data.role,
        "task": data.task, "oracle_tolerance": data.oracle_tolerance,
    })
    return d


def load_dataset(directory, role=None) -> Dataset:
    d = Path(directory)
    m = _manifest(d, "dataset")
    if role is not None and m["role"] != role:
        raise ConfigError(f"{d} holds the {m['role']!r} split, expected {role!r}")
    N, T, C, P, dim = m["N"], m["T"], m["C"], m["P"], m["d"]
    return Dataset(read_f32(d / "branch_inputs.bin", (N, T, C)), read_f32(d / "coords.bin", (P, dim)),
                   read_f32(d / "fields.bin", (N, P)), m["role"], m["task"], m["oracle_tolerance"])


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: DeepONetModel, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layout = parameter_names(model.branch, model.trunk)
    buf = np.concatenate([model.params[name].reshape(-1) for name, _ in layout])
    write_f32(d / "params.bin", buf)
    b, t = model.branch, model.trunk
    write_json(d / MANIFEST, {
        "kind": "checkpoint", "format_version": FORMAT_VERSION,
        "dtype": "float32", "byte_order": "little",
        "branch": {"kind": b.kind, "input_channels": b.input_channels, "hidden": b.hidden,
                   "layers": b.layers, "dropout": b.dropout, "layer_norm": b.layer_norm},
        "trunk": {"widths": list(t.widths), "activation": t.activation, "dropout": t.dropout},
        "parameters": [{"name": n, "shape": list(s)} for n, s in layout],
        "total_parameters": int(buf.size),
        "norm_stats": None if model.norm is None else model.norm.to_dict(),
    })
    return d


def load_checkpoint(directory) -> DeepONetModel:
    d = Path(directory)
    m = _manifest(d, "checkpoint")
    branch = BranchConfig(**m["branch"])
    trunk = TrunkConfig(tuple(m["trunk"]["widths"]), m["trunk"]["activation"], m["trunk"]["dropout"])
    layout = parameter_names(branch, trunk)
    listed = [(p["name"], tuple(p["shape"])) for p in m["parameters"]]
    if listed != layout:
        raise ConfigError(f"{d}: parameter list does not match the configured architecture")
    flat = read_f32(d / "params.bin", (m["total_parameters"],))
    params, offset = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    norm = None if m["norm_stats"] is None else NormStats.from_dict(m["norm_stats"])
    return DeepONetModel(branch, trunk, params, norm)


# ---------------------------------------------------------------- calibration


def _round_up_f32(q):
    # never shrink a stored quantile when narrowing to float32
    q32 = q.astype(np.float32)
    low = q32.astype(np.float64) < q
    q32[low] = np.nextafter(q32[low], np.float32(np.inf))
    return q32


def save_calibration(calib: ConformalCalibration, directory, extra=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_f32(d / "q.bin", _round_up_f32(np.asarray(calib.q, dtype=np.float64)))
    write_json(d / MANIFEST, {
        "kind": "calibration", "format_version": FORMAT_VERSION,
        "dtype": "float32", "byte_order": "little",
        "alpha": calib.alpha, "z": calib.z, "n_c": calib.n_c, "n_cal": calib.n_cal,
        "sigma_floor": calib.sigma_floor, "mc_seed": calib.mc_seed, "P": int(calib.q.shape[0]),
        **(extra or {}),
    })
    return d


def load_calibration(directory) -> ConformalCalibration:
    d = Path(directory)
    m = _manifest(d, "calibration")
    q = read_f32(d / "q.bin", (m["P"],))
    return ConformalCalibration(q, m["alpha"], m["z"], m["n_cal"], m["n_c"], m["sigma_floor"],
                                m["mc_seed"])


def check_provenance(calib: ConformalCalibration, alpha, z, n_c):
    """Refuse to evaluate with settings other than those used to calibrate."""
    diffs = [f"{k}: artifact {a} vs requested {b}"
             for k, a, b in (("alpha", calib.alpha, alpha), ("z", calib.z, z), ("n_c", calib.n_c, n_c))
             if a != b]
    if diffs:
        raise ProvenanceError("calibration provenance mismatch (" + "; ".join(diffs) + ")")


# ---------------------------------------------------------------- field dumps


FIELD_ARRAYS = ("truth", "mean", "std", "lower", "upper")


def save_fields(directory, grid, arrays: dict, extra=None):
    """Per-sample (N, P) arrays for plotting, plus the query coordinates."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    N, P = arrays["truth"].shape
    write_f32(d / "coords.bin", grid)
    for name in FIELD_ARRAYS:
        write_f32(d / f"{name}.bin", arrays[name])
    write_json(d / MANIFEST, {
        "kind": "fields", "format_version": FORMAT_VERSION, "dtype": "float32",
        "byte_order": "little", "N": N, "P": P, "d": int(grid.shape[1]),
        "arrays": list(FIELD_ARRAYS), **(extra or {}),
    })
    return d


def load_fields(directory):
    d = Path(directory)
    m = _manifest(d, "fields")
    out = {name: read_f32(d / f"{name}.bin", (m["N"], m["P"])) for name in m["arrays"]}
    out["coords"] = read_f32(d / "coords.bin", (m["P"], m["d"]))
    return out, m


# ---------------------------------------------------------------- CSV


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing file {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


REPORT_HEADER = ("sample_id", "coverage", "mean_rel_err_pct", "failure_rate_pct", "outlier_flag")


def write_report_csv(path, report):
    rows = zip(range(len(report)), report.coverage, report.mean_rel_err_pct,
               report.failure_rate_pct, report.outlier)
    write_csv(path, REPORT_HEADER, rows)


def read_report_csv(path):
    rows = read_csv(path)
    return {
        "sample_id": np.array([int(r["sample_id"]) for r in rows]),
        "coverage": np.array([float(r["coverage"]) for r in rows]),
        "mean_rel_err_pct": np.array([float(r["mean_rel_err_pct"]) for r in rows]),
        "failure_rate_pct": np.array([float(r["failure_rate_pct"]) for r in rows]),
        "outlier_flag": np.array([bool(int(r["outlier_flag"])) for r in rows]),
    }


def write_loss_history(path, history):
    write_csv(path, ("epoch", "lr", "train_loss"), history)
