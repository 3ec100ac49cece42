"""File IO: headerless point CSVs, atomic writes and precision-pinned JSON."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .errors import DomainError, InputNotFound


def fmt(x: float) -> str:
    """17 significant digits; round-trips any float64."""
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write through a temp file in the target directory and rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_points(path) -> np.ndarray:
    if not os.path.isfile(path):
        raise InputNotFound(f"input file not found: {path}")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise DomainError(f"{path}: no points")
    if len({len(r) for r in rows}) != 1:
        raise DomainError(f"{path}: rows have differing lengths")
    return np.array(rows, dtype=np.float64)


def points_to_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(points):
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def table_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _stringify(obj):
    if isinstance(obj, dict):
        return {str(k): _stringify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_stringify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _stringify(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def to_json(obj) -> str:
    """Stable JSON: sorted keys, floats as 17-digit decimal strings."""
    return json.dumps(_stringify(obj), sort_keys=True, indent=2) + "\n"
