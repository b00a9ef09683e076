"""Serialization of datasets, schedules, point clouds and trajectories.

Floats are written with 17 significant digits, which round-trips every IEEE
double exactly.  Non-finite values, which JSON cannot represent, are written
as the strings ``"inf"``, ``"-inf"`` and ``"nan"`` and read back as floats.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .core import ControlSchedule, Dataset
from .errors import DatasetError, NodeCtlError, ParseError

_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    # Keep the value typed as a float when it happens to be integral.
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _encode(obj: Any, indent: int, level: int, out: list[str]) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, value) in enumerate(obj.items()):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _encode(value, indent, level + 1, out)
            out.append(",\n" if k + 1 < len(obj) else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
        elif all(_is_scalar(v) for v in obj):
            # Flat numeric rows stay on one line.
            out.append("[" + ", ".join(_scalar(v) for v in obj) + "]")
        else:
            out.append("[\n")
            for k, value in enumerate(obj):
                out.append(pad)
                _encode(value, indent, level + 1, out)
                out.append(",\n" if k + 1 < len(obj) else "\n")
            out.append(end + "]")
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), indent, level, out)
    else:
        out.append(_scalar(obj))


def _is_scalar(v) -> bool:
    return v is None or isinstance(v, (bool, int, float, str, np.integer, np.floating, np.bool_))


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """Deterministic JSON text with lossless floats and a trailing newline."""
    out: list[str] = []
    _encode(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if isinstance(obj, str) and obj in _NONFINITE:
        return _NONFINITE[obj]
    return obj


def loads(text: str) -> Any:
    try:
        return _restore(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    return loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------- datasets


def _vector(value, d: int, where: str) -> list[float]:
    if not isinstance(value, list) or len(value) != d:
        raise ParseError(f"{where} must be a list of {d} numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"{where} contains a non-numeric entry {v!r}")
        out.append(float(v))
    return out


def dataset_from_obj(doc: Any) -> Dataset:
    if not isinstance(doc, dict) or "dim" not in doc or "pairs" not in doc:
        raise ParseError('dataset must be an object with keys "dim" and "pairs"')
    d = doc["dim"]
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise ParseError(f'"dim" must be a positive integer, got {d!r}')
    pairs = doc["pairs"]
    if not isinstance(pairs, list) or not pairs:
        raise ParseError('"pairs" must be a non-empty list')
    X, Y = [], []
    for i, pair in enumerate(pairs):
        if not isinstance(pair, dict) or set(pair) != {"x", "y"}:
            raise ParseError(f'pair {i} must be an object with exactly the keys "x" and "y"')
        X.append(_vector(pair["x"], d, f"pair {i} x"))
        Y.append(_vector(pair["y"], d, f"pair {i} y"))
    try:
        return Dataset(X, Y)
    except DatasetError as exc:
        raise ParseError(str(exc)) from exc


def parse_dataset(path) -> Dataset:
    """Read ``{"dim": d, "pairs": [{"x": [...], "y": [...]}, ...]}``."""
    return dataset_from_obj(read_json(path))


def dataset_json(data: Dataset) -> str:
    return dumps(data.to_dict())


# ---------------------------------------------------------------- schedules


def schedule_from_obj(doc: Any) -> ControlSchedule:
    try:
        return ControlSchedule.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"schedule is missing or mistypes a field: {exc}") from exc
    except NodeCtlError as exc:
        raise ParseError(f"invalid schedule: {exc}") from exc


def parse_schedule(path) -> ControlSchedule:
    return schedule_from_obj(read_json(path))


def schedule_json(schedule: ControlSchedule) -> str:
    return dumps(schedule.to_dict())


# ---------------------------------------------------------------- CSV


def read_points_csv(path) -> np.ndarray:
    """One point per row; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"{path}: line {lineno} is not numeric") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    width = len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(f"{path}: row {k} has {len(r)} columns, expected {width}")
    P = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(P)):
        raise ParseError(f"{path}: non-finite coordinates")
    return P


def write_points_csv(path, P: np.ndarray) -> None:
    P = np.atleast_2d(P)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{k + 1}" for k in range(P.shape[1])])
        for row in P:
            w.writerow([format(float(v), ".17g") for v in row])


def write_trajectories_csv(path, times: np.ndarray, states: np.ndarray) -> None:
    """``states`` has shape ``(points, samples, d)``; rows are ``point_id, t, x_1..x_d``."""
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    n_points, n_samples, d = states.shape
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "t"] + [f"x_{k + 1}" for k in range(d)])
        for i in range(n_points):
            for j in range(n_samples):
                w.writerow([i, format(float(times[j]), ".17g")]
                           + [format(float(v), ".17g") for v in states[i, j]])
