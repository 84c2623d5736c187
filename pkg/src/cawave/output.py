"""Atomic, deterministic file output shared by every exporter."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt(x) -> str:
    """17 significant digits for reals; blanks for None; ints and strings as they are."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write through a temporary sibling and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with tmp.open("w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def csv_text(header, rows, meta: dict | None = None) -> str:
    buf = io.StringIO()
    for key in sorted(meta or {}):
        buf.write(f"# {key}: {_meta_value(meta[key])}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(header))
    for row in rows:
        wr.writerow([fmt(x) for x in row])
    return buf.getvalue()


def write_csv(path: str | Path, header, rows, meta: dict | None = None) -> Path:
    """CSV with an optional block of ``# key: value`` lines above the column header."""
    return atomic_write_text(path, csv_text(header, rows, meta))


def _meta_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return " ".join(fmt(x) for x in v)
    return fmt(v)


def read_csv(path: str | Path) -> tuple[dict, list[str], np.ndarray]:
    """Inverse of ``write_csv`` for numeric tables: (meta, header, rows); blanks read as nan."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(x) if x not in ("",) else math.nan for x in r] for r in reader]
    return meta, header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [_plain(x.real), _plain(x.imag)]
    return x


def write_json(path: str | Path, record: dict) -> Path:
    """JSON with sorted keys and a schema_version field; non-finite numbers become null."""
    data = {"schema_version": SCHEMA_VERSION, **_plain(record)}
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")
