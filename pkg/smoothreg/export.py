"""Export results, manifests, Gram matrices, datasets and fits."""
import csv
import io
import json
import math
import platform
from dataclasses import fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from smoothreg import __version__
from smoothreg.harness.rows import ResultRow, Table1Cell, UCurvePoint

RESULTS_SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.10e"

RESULT_COLUMNS = [f.name for f in fields(ResultRow)]
TABLE1_COLUMNS = [f.name for f in fields(Table1Cell)]
UCURVE_COLUMNS = [f.name for f in fields(UCurvePoint)]
RATE_COLUMNS = ["n", "seeds", "mean_test_l2", "stderr_test_l2", "mean_baseline_l2",
                "sigma_n", "t_star", "beta"]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def _write_csv(columns: Sequence[str], records: Iterable[Sequence]) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(columns)
    for record in records:
        writer.writerow([_fmt(v) for v in record])
    return output.getvalue()


def export_results_csv(rows: Iterable[ResultRow]) -> str:
    """Raw per-seed rows sorted by key, floats as %.10e."""
    ordered = sorted(rows, key=lambda r: r.key)
    return _write_csv(RESULT_COLUMNS, ([getattr(r, c) for c in RESULT_COLUMNS] for r in ordered))


def export_table1_csv(cells: Iterable[Table1Cell]) -> str:
    ordered = sorted(cells, key=lambda c: (c.learner, c.dim, c.noise_type, c.regularizer, c.n))
    return _write_csv(TABLE1_COLUMNS, ([getattr(c, k) for k in TABLE1_COLUMNS] for c in ordered))


def export_ucurve_csv(points: Iterable[UCurvePoint]) -> str:
    ordered = sorted(points, key=lambda p: (p.learner, p.dim, p.noise_type, p.regularizer, p.n, p.sigma))
    return _write_csv(UCURVE_COLUMNS, ([getattr(p, k) for k in UCURVE_COLUMNS] for p in ordered))


def export_rate_csv(report) -> str:
    """Per-n rows of a rate report; fitted slopes go in the manifest."""
    records = []
    for i, n in enumerate(report.sizes):
        records.append([n, report.seeds, report.mean_losses[i], report.stderr_losses[i],
                        report.baseline_losses[i], report.schedules[i].sigma_n,
                        report.schedules[i].t_star, report.schedules[i].beta])
    return _write_csv(RATE_COLUMNS, records)


def export_schedule_csv(params: Sequence) -> str:
    if not params:
        return ""
    rows = [p.as_row() for p in params]
    columns = list(rows[0])
    return _write_csv(columns, ([row[c] for c in columns] for row in rows))


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


def build_manifest(command: str, config_dict: dict, master_seed: int, wall_time: float,
                   columns: Optional[List[str]] = None, extra: Optional[dict] = None) -> dict:
    manifest = {
        "command": command,
        "library_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "master_seed": master_seed,
        "wall_time_seconds": round(wall_time, 3),
        "schema_version": RESULTS_SCHEMA_VERSION,
        "columns": columns or RESULT_COLUMNS,
        "config": config_dict,
    }
    if extra:
        manifest.update(extra)
    return _jsonable(manifest)


def export_manifest_json(manifest: dict) -> str:
    return json.dumps(_jsonable(manifest), indent=2, sort_keys=True)


def export_gram(matrix, path: str):
    """Row-major float64 dump: .npy for a binary file, anything else as CSV."""
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.suffix == ".npy":
        np.save(target, matrix)
    else:
        np.savetxt(target, matrix, delimiter=",", fmt="%.17e")


def export_dataset_csv(dataset) -> str:
    """Coordinates, response and split label per row; test responses are noiseless."""
    D = dataset.X_train.shape[1]
    columns = [f"x{i}" for i in range(D)] + ["y", "split"]
    records = []
    for split, X, y in (("train", dataset.X_train, dataset.y_train),
                        ("val", dataset.X_val, dataset.y_val),
                        ("test", dataset.X_test, dataset.y_test)):
        for xi, yi in zip(X, y):
            records.append([*map(float, xi), float(yi), split])
    return _write_csv(columns, records)


def export_fit_json(fit, seed: Optional[int] = None, extra: Optional[dict] = None) -> str:
    """Weights, config and seed of a kernel GD fit, enough to replay it exactly."""
    payload = {
        "w": [float(v) for v in fit.w],
        "t_used": int(fit.t_used),
        "config": fit.config.to_dict() if fit.config is not None else None,
        "seed": seed,
    }
    if extra:
        payload.update(extra)
    return json.dumps(_jsonable(payload), indent=2)


def load_fit_json(text: str) -> Tuple[np.ndarray, dict]:
    """(weights, metadata) from ``export_fit_json`` output."""
    payload = json.loads(text)
    w = np.asarray(payload.pop("w"), dtype=float)
    return w, payload


def export_training_curve_csv(result) -> str:
    """MLP training and validation curves joined on iteration."""
    val = dict(result.val_curve)
    train = dict(result.train_curve)
    steps = sorted(set(val) | set(train))
    return _write_csv(["iteration", "train_loss", "val_loss"],
                      ([s, train.get(s, math.nan), val.get(s, math.nan)] for s in steps))


def export_mlp_snapshot(model, path: str, noise=None):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    arrays = model.to_arrays()
    if noise is not None:
        arrays["noise"] = np.asarray(noise, dtype=float)
    np.savez(target, **arrays)


def load_mlp_snapshot(path: str):
    """(model, noise or None) from ``export_mlp_snapshot``."""
    from smoothreg.mlp import MlpModel
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    noise = arrays.pop("noise", None)
    return MlpModel.from_arrays(arrays), noise


def write_text(path: str, text: str):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
