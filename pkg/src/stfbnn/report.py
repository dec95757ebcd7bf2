"""Deterministic report serialization and config hashing.

Reports are JSON with sorted keys and no timestamps, so identical runs
produce byte-identical files; wall-clock details belong in sidecar files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, is_dataclass


def jsonable(obj):
    """Recursively convert dataclasses, numpy scalars, and arrays for JSON."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return jsonable(obj.tolist())
    if hasattr(obj, "item") and not isinstance(obj, (bool, int, float, str)):
        return obj.item()
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable 16-hex-digit digest of a config-like object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def write_json(obj, path: str) -> None:
    with open(path, "w") as f:
        json.dump(jsonable(obj), f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path: str):
    with open(path) as f:
        return json.load(f)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
