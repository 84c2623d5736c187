"""Small on-disk cache of numpy arrays keyed by a hash of the full input record."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Callable

import numpy as np

ENV_VAR = "CAWAVE_CACHE_DIR"


def cache_dir() -> Path | None:
    """Directory named by CAWAVE_CACHE_DIR, or None when caching is off."""
    d = os.environ.get(ENV_VAR)
    return Path(d) if d else None


def record_key(record: dict) -> str:
    text = json.dumps(record, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:32]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if hasattr(x, "to_dict"):
        return x.to_dict()
    raise TypeError(f"cannot hash {type(x).__name__}")


def cached_arrays(tag: str, record: dict, compute: Callable[[], dict], directory: Path | None = None) -> dict:
    """Arrays from ``compute()``; stored as ``<tag>-<hash>.npz`` when a cache directory is set."""
    directory = directory if directory is not None else cache_dir()
    if directory is None:
        return compute()
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{tag}-{record_key(record)}.npz"
    if path.exists():
        with np.load(path, allow_pickle=False) as data:
            return {k: data[k] for k in data.files}
    arrays = compute()
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return arrays
