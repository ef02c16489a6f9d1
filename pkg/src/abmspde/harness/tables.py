"""Comma-separated tables with a leading ``# key=value ...`` metadata line."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class FormatError(ValueError):
    """A table is missing required columns or is malformed."""


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence],
                meta: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise FormatError(f"{path}: row has {len(row)} fields, expected {len(columns)}")
            w.writerow([_cell(v) for v in row])
    return path


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_table(path: str | Path, required: Sequence[str] = ()) -> tuple[dict, list[dict]]:
    """Return ``(meta, rows)``; raises :class:`FormatError` if ``required`` columns are absent."""
    path = Path(path)
    meta: dict[str, str] = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
        lines = lines[1:]
    if not lines:
        raise FormatError(f"{path}: no header row")
    reader = csv.DictReader(lines)
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return meta, [{k: _parse(v) for k, v in row.items()} for row in reader]
