"""Plot-ready CSV output and the per-directory metadata record."""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__

METADATA_NAME = "metadata.json"


def write_csv(path: Path, header: list[str], rows) -> Path:
    """Comma-separated values with 17 significant digits (lossless for float64)."""
    path = Path(path)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        rows = rows.reshape(0, len(header))
    if rows.shape[1] != len(header):
        raise ValueError(f"{path.name}: {rows.shape[1]} columns for a header of {len(header)}")
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data.reshape(-1, len(header))


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_metadata(out: Path, record: dict) -> Path:
    """Write the directory's single metadata file, checksumming every CSV in it."""
    out = Path(out)
    sums = {p.name: sha256(p) for p in sorted(out.glob("*.csv"))}
    meta = {"code_version": __version__, "python": platform.python_version(), **record, "checksums": sums}
    path = out / METADATA_NAME
    path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return path


def verify_checksums(out: Path) -> bool:
    out = Path(out)
    meta = json.loads((out / METADATA_NAME).read_text())
    on_disk = {p.name for p in out.glob("*.csv")}
    if on_disk != set(meta["checksums"]):
        return False
    return all(sha256(out / name) == digest for name, digest in meta["checksums"].items())
