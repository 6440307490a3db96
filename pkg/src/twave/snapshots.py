"""Artifact files: binary field snapshots, PGM rasters, CSV tables,
and the run manifest.

The snapshot layout is fixed so files round-trip bit-exactly across
platforms: magic ``TWV1``, little-endian u32 nx and ny, little-endian
f64 cell size and time stamp, then ny*nx f64 values row-major.
"""

import csv
import hashlib
import json
import struct
import sys
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "write_snapshot",
    "read_snapshot",
    "write_pgm",
    "write_csv",
    "write_manifest",
    "file_sha256",
]

_MAGIC = b"TWV1"
FLOAT_FMT = "%.12g"


def write_snapshot(path, field: np.ndarray, h: float, t: float) -> None:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError("snapshot field must be 2-d")
    ny, nx = field.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", nx, ny))
        fh.write(struct.pack("<dd", float(h), float(t)))
        fh.write(np.ascontiguousarray(field, dtype="<f8").tobytes())


def read_snapshot(path):
    """Returns (field, h, t); rejects wrong magic or truncated payload."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    nx, ny = struct.unpack_from("<II", raw, 4)
    h, t = struct.unpack_from("<dd", raw, 12)
    payload = raw[28:]
    if len(payload) != 8 * nx * ny:
        raise ValueError(f"{path}: truncated snapshot payload")
    field = np.frombuffer(payload, dtype="<f8").reshape(ny, nx).copy()
    return field, h, t


def write_pgm(path, field: np.ndarray) -> None:
    """8-bit grayscale raster, min-max scaled; flat fields come out mid-gray."""
    field = np.asarray(field, dtype=np.float64)
    ny, nx = field.shape
    lo, hi = float(field.min()), float(field.max())
    if hi > lo:
        scaled = np.round((field - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full_like(field, 128.0)
    with open(path, "wb") as fh:
        fh.write(f"P5 {nx} {ny} 255\n".encode("ascii"))
        fh.write(scaled.astype(np.uint8).tobytes())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Floats rendered with 12 significant digits, newline-stable."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, *, subcommand: str, config_path,
                   config_text: str, seed: Optional[int],
                   outputs: Sequence, extra: Optional[Dict] = None) -> Path:
    """Reproduction record: config hash, seed, versions, output hashes."""
    from . import __version__
    out_dir = Path(out_dir)
    entry = {
        "subcommand": subcommand,
        "config": str(config_path),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "twave": __version__,
        },
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    if extra:
        entry.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(entry, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
