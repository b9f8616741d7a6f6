"""
File formats for fields, measures and result series.

Field binary: int64 little-endian header (d, N, M_1, ..., M_d) followed by
float64 little-endian values, node-major in C order with the N components
fastest. Field CSV (d = 2 only): header `i,j,c0,...,c{N-1}`, one row per node.
A measure file is a JSON sidecar naming its density file (relative to the
sidecar) and listing the singular pieces.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

import config
from errors import ParseError
from measure_lab import Box, GridMeasure, SingularPiece
from spectral_projection import PeriodicField

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def write_field(path, u: PeriodicField) -> None:
    header = np.array([u.d, u.N, *u.grid], dtype="<i8")
    body = np.ascontiguousarray(np.moveaxis(u.values, 0, -1), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(body.tobytes())
    logger.debug("wrote %d x %s field to %s", u.N, u.grid, path)


def read_field(path) -> PeriodicField:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ParseError(f"{path}: file too short for a field header")
    d, N = (int(v) for v in np.frombuffer(raw[:16], dtype="<i8"))
    if d < 1 or N < 1:
        raise ParseError(f"{path}: bad header d={d}, N={N}")
    head_len = 8 * (2 + d)
    if len(raw) < head_len:
        raise ParseError(f"{path}: header announces d={d} but the file ends early")
    grid = tuple(int(v) for v in np.frombuffer(raw[16:head_len], dtype="<i8"))
    if any(M < 1 for M in grid):
        raise ParseError(f"{path}: bad grid {grid}")
    expected = 8 * N * int(np.prod(grid))
    if len(raw) - head_len != expected:
        raise ParseError(f"{path}: expected {expected} bytes of values, found {len(raw) - head_len}")
    values = np.frombuffer(raw[head_len:], dtype="<f8").reshape(grid + (N,))
    return PeriodicField(np.moveaxis(values, -1, 0).copy())


def read_field_csv(path) -> PeriodicField:
    """Two-dimensional fields from `i,j,c0,...` rows, every node exactly once."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise ParseError(f"{path}: cannot read field CSV: {e}")
    if header[:2] != ["i", "j"] or len(header) < 3:
        raise ParseError(f"{path}: header must start with i,j and name at least one component")
    N = len(header) - 2
    if data.shape[1] != N + 2:
        raise ParseError(f"{path}: rows have {data.shape[1]} columns, header has {N + 2}")
    idx = data[:, :2]
    if np.any(idx < 0) or np.any(idx != np.round(idx)):
        raise ParseError(f"{path}: node indices must be non-negative integers")
    idx = idx.astype(int)
    grid = tuple(int(v) + 1 for v in idx.max(axis=0))
    if len(data) != grid[0] * grid[1] or len({tuple(r) for r in idx}) != len(data):
        raise ParseError(f"{path}: expected each of the {grid[0]} x {grid[1]} nodes exactly once")
    values = np.zeros((N,) + grid)
    values[:, idx[:, 0], idx[:, 1]] = data[:, 2:].T
    return PeriodicField(values)


def load_field(path) -> PeriodicField:
    return read_field_csv(path) if str(path).lower().endswith(".csv") else read_field(path)


def write_measure(path, mu: GridMeasure) -> None:
    """Write `path` (JSON sidecar) and `path` with a .bin suffix (density)."""
    path = Path(path)
    density_path = path.with_suffix(".bin")
    write_field(density_path, PeriodicField(mu.density))
    sidecar = {
        "schema": config.SCHEMA_VERSION,
        "domain": mu.domain.to_dict(),
        "density": density_path.name,
        "singular": [p.to_dict() for p in mu.singular],
    }
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_measure(path) -> GridMeasure:
    path = Path(path)
    data = config.load_json_file(path)
    for key in ("domain", "density"):
        if key not in data:
            raise ParseError(f"{path}: measure sidecar is missing {key!r}")
    density = load_field(path.parent / data["density"])
    try:
        pieces = [SingularPiece.from_dict(p) for p in data.get("singular", [])]
    except (KeyError, TypeError) as e:
        raise ParseError(f"{path}: malformed singular piece: {e}")
    return GridMeasure(Box.from_dict(data["domain"]), density.values, pieces)


def write_columns_csv(path, columns: Dict[str, Sequence[float]]) -> None:
    """Equal-length numeric columns in the given order."""
    names = list(columns)
    lengths = {len(columns[n]) for n in names}
    if len(lengths) > 1:
        raise ParseError(f"CSV columns have different lengths: {sorted(lengths)}")
    table = np.column_stack([np.asarray(columns[n], dtype=float) for n in names]) if names else np.zeros((0, 0))
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt=FLOAT_FORMAT)


def write_series_csv(path, series: Dict[str, List]) -> None:
    """Experiment series in report order (lsc: j, F, residual, ac, singular)."""
    write_columns_csv(path, series)


def write_scan_csv(path, points: np.ndarray, ranks: np.ndarray, residuals: Optional[np.ndarray] = None) -> None:
    """Per-sample rows xi0..xi{d-1}, rank and, when a query was given, residual."""
    columns = {f"xi{a}": points[:, a] for a in range(points.shape[1])}
    columns["rank"] = ranks
    if residuals is not None:
        columns["residual"] = residuals
    write_columns_csv(path, columns)


def write_trace_csv(path, traces: List[List[float]]) -> None:
    restart, iteration, value = [], [], []
    for r, trace in enumerate(traces):
        restart += [r] * len(trace)
        iteration += list(range(len(trace)))
        value += list(trace)
    write_columns_csv(path, {"restart": restart, "iteration": iteration, "value": value})
