"""Flat text persistence: ``key value`` header lines, a ``---`` separator,
then one parameter per line written with ``repr`` so floats round-trip.
Report tables (CSV, JSON, JSON lines) use 12 significant digits."""

from __future__ import annotations

import csv
import json

import numpy as np


def write_flat(path, header: dict, values) -> None:
    lines = [f"{key} {value}" for key, value in header.items()]
    lines.append("---")
    lines.extend(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_flat(path) -> tuple[dict, np.ndarray]:
    header = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        sep = lines.index("---")
    except ValueError as exc:
        raise ValueError(f"{path}: missing header separator") from exc
    for line in lines[:sep]:
        key, _, value = line.partition(" ")
        header[key] = value
    values = np.array([float(x) for x in lines[sep + 1:] if x], dtype=np.float64)
    return header, values


def fmt(value) -> str:
    """Fixed 12-significant-digit rendering for report tables."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    return obj


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_rounded(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(_rounded(row), sort_keys=True) + "\n")
