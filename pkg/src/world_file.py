"""
SCSW1 world files.

Layout
------
A UTF-8 text file with one header record per line, then a run-length
encoded voxel payload::

    SCSW1
    resolution 0.2
    origin_index -5 -12 -12
    shape 810 25 25
    base_station 1.1 0.1 0.1
    spawn_points 2
    2.1 0.1 0.1
    3.1 0.1 0.1
    payload 3
    1024 8 4096

* ``origin_index`` is the global voxel index of the first lattice voxel and
  ``shape`` the lattice size; together they give the world extents
  ``[origin_index·res, (origin_index + shape)·res)``.
* Floats are written with ``repr`` so a save/load cycle is bit-exact.
* The payload lists ``payload`` run lengths over the lattice flattened in
  C order (x slowest, z fastest).  Runs alternate free / rock and always
  start with free, so the first run may be 0.  Runs are written 32 per line.

Every parse error names the offending field.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import WorldFormatError
from .worldsim import GroundTruthWorld

MAGIC = "SCSW1"
_RUNS_PER_LINE = 32


# ── Writing ───────────────────────────────────────────────────────────────────

def _encode_runs(occupancy: np.ndarray) -> np.ndarray:
    flat = occupancy.ravel(order="C")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate([[0], runs])
    return runs


def dumps_world(world: GroundTruthWorld) -> str:
    lines = [
        MAGIC,
        f"resolution {world.resolution!r}",
        "origin_index " + " ".join(str(v) for v in world.origin_index),
        "shape " + " ".join(str(v) for v in world.shape),
        "base_station " + " ".join(repr(float(v)) for v in world.base_station),
        f"spawn_points {len(world.spawn_points)}",
    ]
    for p in world.spawn_points:
        lines.append(" ".join(repr(float(v)) for v in p))

    runs = _encode_runs(world.occupancy)
    lines.append(f"payload {len(runs)}")
    for i in range(0, len(runs), _RUNS_PER_LINE):
        lines.append(" ".join(str(int(r)) for r in runs[i:i + _RUNS_PER_LINE]))
    return "\n".join(lines) + "\n"


def save_world(world: GroundTruthWorld, path: str) -> None:
    Path(path).write_text(dumps_world(world), encoding="utf-8")


# ── Reading ───────────────────────────────────────────────────────────────────

class _Lines:
    """Line cursor that reports the field it was expecting on failure."""

    def __init__(self, text: str) -> None:
        self._lines: Iterator[str] = iter(
            ln.strip() for ln in text.splitlines() if ln.strip()
        )

    def next(self, field: str) -> str:
        try:
            return next(self._lines)
        except StopIteration:
            raise WorldFormatError(field, "missing (file ends early)") from None

    def record(self, field: str, count: int | None = None) -> list[str]:
        """Read a ``<field> v1 v2 …`` line and return the values."""
        parts = self.next(field).split()
        if parts[0] != field:
            raise WorldFormatError(field, f"expected '{field}', found '{parts[0]}'")
        values = parts[1:]
        if count is not None and len(values) != count:
            raise WorldFormatError(field, f"expected {count} value(s), got {len(values)}")
        return values

    def rest(self) -> list[str]:
        return list(self._lines)


def _floats(field: str, values: list[str]) -> list[float]:
    try:
        out = [float(v) for v in values]
    except ValueError:
        raise WorldFormatError(field, f"not a number in {' '.join(values)!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise WorldFormatError(field, "values must be finite")
    return out


def _ints(field: str, values: list[str]) -> list[int]:
    try:
        return [int(v) for v in values]
    except ValueError:
        raise WorldFormatError(field, f"not an integer in {' '.join(values)!r}") from None


def loads_world(text: str) -> GroundTruthWorld:
    reader = _Lines(text)
    magic = reader.next("magic")
    if magic != MAGIC:
        raise WorldFormatError("magic", f"expected '{MAGIC}', found '{magic[:16]}'")

    (resolution,) = _floats("resolution", reader.record("resolution", 1))
    if resolution <= 0:
        raise WorldFormatError("resolution", f"must be > 0, got {resolution}")
    origin_index = _ints("origin_index", reader.record("origin_index", 3))
    shape = _ints("shape", reader.record("shape", 3))
    if any(v <= 0 for v in shape):
        raise WorldFormatError("shape", f"every dimension must be > 0, got {shape}")
    base = _floats("base_station", reader.record("base_station", 3))

    (n_spawn,) = _ints("spawn_points", reader.record("spawn_points", 1))
    if n_spawn < 0:
        raise WorldFormatError("spawn_points", "count must be >= 0")
    spawns = []
    for i in range(n_spawn):
        values = reader.next(f"spawn_points[{i}]").split()
        if len(values) != 3:
            raise WorldFormatError(f"spawn_points[{i}]", "expected 3 coordinates")
        spawns.append(_floats(f"spawn_points[{i}]", values))

    (n_runs,) = _ints("payload", reader.record("payload", 1))
    tokens = " ".join(reader.rest()).split()
    runs = np.array(_ints("payload", tokens), dtype=np.int64)
    if len(runs) != n_runs:
        raise WorldFormatError("payload", f"header announces {n_runs} runs, found {len(runs)}")
    if (runs < 0).any():
        raise WorldFormatError("payload", "run lengths must be >= 0")
    total = math.prod(shape)
    if int(runs.sum()) != total:
        raise WorldFormatError(
            "payload", f"runs cover {int(runs.sum())} voxels, shape needs {total}"
        )

    values = (np.arange(len(runs)) % 2) == 1
    occupancy = np.repeat(values, runs).reshape(shape)

    return GroundTruthWorld(
        resolution   = resolution,
        origin_index = tuple(origin_index),
        occupancy    = occupancy,
        base_station = np.array(base),
        spawn_points = np.array(spawns).reshape(-1, 3),
    )


def load_world(path: str) -> GroundTruthWorld:
    """Parse an SCSW1 file; raises :class:`WorldFormatError` naming the bad field."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise WorldFormatError("magic", "file is not UTF-8 text") from None
    return loads_world(text)
