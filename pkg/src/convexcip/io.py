"""Measurement/Cauchy CSV files and legacy-ASCII VTK scalar fields."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .model import CauchyData, Grid3D, MeasurementSet, ShapeError


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""


MEASUREMENT_HEADER = ["alpha", "x", "y", "re", "im"]
CAUCHY_HEADER = ["n", "x", "y", "re0", "im0", "re1", "im1"]
NEARFIELD_HEADER = ["alpha", "x", "y", "re_u", "im_u", "re_dz", "im_dz"]


def _fmt(v: float) -> str:
    return repr(float(v))


def _lattice(values, what: str, path) -> np.ndarray:
    axis = np.unique(np.asarray(values))
    if axis.size < 2:
        raise ParseError(f"{path}: {what} lattice needs at least two values")
    steps = np.diff(axis)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise ParseError(f"{path}: inconsistent {what} lattice (non-uniform spacing)")
    return axis


def _read_rows(path, header: list[str]):
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise ParseError(f"{path}: no samples")
        if [h.strip() for h in first] != header:
            raise ParseError(f"{path}:1: expected header {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: expected {len(header)} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(f"{path}:{line}: non-numeric entry in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}:{line}: non-finite value in {row!r}")
            rows.append((line, vals))
    if not rows:
        raise ParseError(f"{path}: no samples")
    return rows


def load_measurements(path, z_plane: float = -14.0) -> MeasurementSet:
    """Read a measurement CSV (``alpha,x,y,re,im``); row order is immaterial."""
    rows = _read_rows(path, MEASUREMENT_HEADER)
    data = np.array([r[1] for r in rows])
    alphas = np.unique(data[:, 0])
    xs = _lattice(data[:, 1], "x", path)
    ys = _lattice(data[:, 2], "y", path)
    ia = np.searchsorted(alphas, data[:, 0])
    ix = np.rint((data[:, 1] - xs[0]) / (xs[1] - xs[0])).astype(int)
    iy = np.rint((data[:, 2] - ys[0]) / (ys[1] - ys[0])).astype(int)
    samples = np.zeros((alphas.size, xs.size, ys.size), dtype=complex)
    seen = np.zeros(samples.shape, dtype=bool)
    for (line, vals), a, i, j in zip(rows, ia, ix, iy):
        if seen[a, i, j]:
            raise ParseError(f"{path}:{line}: duplicate sample for (alpha={vals[0]}, x={vals[1]}, y={vals[2]})")
        seen[a, i, j] = True
        samples[a, i, j] = vals[3] + 1j * vals[4]
    if not seen.all():
        raise ParseError(f"{path}: inconsistent lattice, {int((~seen).sum())} (alpha, x, y) samples missing")
    return MeasurementSet(z_plane, xs, ys, alphas, samples)


def save_measurements(meas: MeasurementSet, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for a, alpha in enumerate(meas.alphas):
            for i, x in enumerate(meas.x):
                for j, y in enumerate(meas.y):
                    s = meas.samples[a, i, j]
                    w.writerow([_fmt(alpha), _fmt(x), _fmt(y), _fmt(s.real), _fmt(s.imag)])


def save_cauchy(data: CauchyData, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CAUCHY_HEADER)
        for n in range(data.N):
            for i, x in enumerate(data.x):
                for j, y in enumerate(data.y):
                    p0, p1 = data.psi0[n, i, j], data.psi1[n, i, j]
                    w.writerow([n, _fmt(x), _fmt(y), _fmt(p0.real), _fmt(p0.imag), _fmt(p1.real), _fmt(p1.imag)])


def load_cauchy(path) -> CauchyData:
    rows = _read_rows(path, CAUCHY_HEADER)
    data = np.array([r[1] for r in rows])
    ns = data[:, 0]
    if not np.all(ns == np.rint(ns)) or ns.min() < 0:
        raise ParseError(f"{path}: Fourier index column must hold non-negative integers")
    N = int(ns.max()) + 1
    xs = _lattice(data[:, 1], "x", path)
    ys = _lattice(data[:, 2], "y", path)
    ix = np.rint((data[:, 1] - xs[0]) / (xs[1] - xs[0])).astype(int)
    iy = np.rint((data[:, 2] - ys[0]) / (ys[1] - ys[0])).astype(int)
    psi0 = np.zeros((N, xs.size, ys.size), dtype=complex)
    psi1 = np.zeros_like(psi0)
    seen = np.zeros(psi0.shape, dtype=bool)
    for (line, vals), n, i, j in zip(rows, ns.astype(int), ix, iy):
        if seen[n, i, j]:
            raise ParseError(f"{path}:{line}: duplicate entry for (n={n}, x={vals[1]}, y={vals[2]})")
        seen[n, i, j] = True
        psi0[n, i, j] = vals[3] + 1j * vals[4]
        psi1[n, i, j] = vals[5] + 1j * vals[6]
    if not seen.all():
        raise ParseError(f"{path}: inconsistent lattice, {int((~seen).sum())} entries missing")
    return CauchyData(xs, ys, psi0, psi1)


def save_near_field(alphas, x, y, U, dU, path) -> None:
    """Scattered field and its z-derivative on ``z = -b``, one row per (alpha, x, y)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NEARFIELD_HEADER)
        for a, alpha in enumerate(alphas):
            for i, xv in enumerate(x):
                for j, yv in enumerate(y):
                    u, du = U[a, i, j], dU[a, i, j]
                    w.writerow([_fmt(alpha), _fmt(xv), _fmt(yv), _fmt(u.real), _fmt(u.imag), _fmt(du.real), _fmt(du.imag)])


def load_near_field(path):
    """Inverse of :func:`save_near_field`: ``(alphas, x, y, U, dU)``."""
    rows = _read_rows(path, NEARFIELD_HEADER)
    data = np.array([r[1] for r in rows])
    alphas = np.unique(data[:, 0])
    xs = _lattice(data[:, 1], "x", path)
    ys = _lattice(data[:, 2], "y", path)
    ia = np.searchsorted(alphas, data[:, 0])
    ix = np.rint((data[:, 1] - xs[0]) / (xs[1] - xs[0])).astype(int)
    iy = np.rint((data[:, 2] - ys[0]) / (ys[1] - ys[0])).astype(int)
    U = np.zeros((alphas.size, xs.size, ys.size), dtype=complex)
    dU = np.zeros_like(U)
    seen = np.zeros(U.shape, dtype=bool)
    for (line, vals), a, i, j in zip(rows, ia, ix, iy):
        if seen[a, i, j]:
            raise ParseError(f"{path}:{line}: duplicate sample for (alpha={vals[0]}, x={vals[1]}, y={vals[2]})")
        seen[a, i, j] = True
        U[a, i, j] = vals[3] + 1j * vals[4]
        dU[a, i, j] = vals[5] + 1j * vals[6]
    if not seen.all():
        raise ParseError(f"{path}: inconsistent lattice, {int((~seen).sum())} samples missing")
    return alphas, xs, ys, U, dU


def export_scalar_field(
    field: np.ndarray,
    grid: Grid3D,
    path,
    name: str = "c_comp",
    extra: Optional[Mapping[str, np.ndarray]] = None,
    iso_fraction: float = 0.1,
) -> dict:
    """Write a legacy ASCII STRUCTURED_POINTS file plus ``<path>.json`` metadata.

    The metadata records ``isovalue = iso_fraction * max(field)`` for
    isosurface viewers.  Extra arrays become further SCALARS blocks.
    """
    blocks = {name: np.asarray(field, dtype=float)}
    blocks.update({k: np.asarray(v, dtype=float) for k, v in (extra or {}).items()})
    for key, arr in blocks.items():
        if arr.shape != grid.shape:
            raise ShapeError(f"block {key!r} has shape {arr.shape}, grid is {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"block {key!r} contains non-finite values")
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        f"convexcip scalar field {name}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*grid.shape),
        "ORIGIN {} {} {}".format(*(_fmt(v) for v in grid.origin)),
        "SPACING {} {} {}".format(*(_fmt(v) for v in grid.step)),
        f"POINT_DATA {grid.size}",
    ]
    for key, arr in blocks.items():
        lines += [f"SCALARS {key} double 1", "LOOKUP_TABLE default"]
        # VTK wants x fastest
        lines += [_fmt(v) for v in arr.ravel(order="F")]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "scalars": list(blocks),
        "max": float(blocks[name].max()),
        "isovalue": float(iso_fraction * blocks[name].max()),
        "iso_fraction": iso_fraction,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return meta


def read_scalar_field(path) -> tuple[Grid3D, dict[str, np.ndarray]]:
    """Read back a file written by :func:`export_scalar_field`."""
    tokens = Path(path).read_text(encoding="utf-8").split("\n")
    header = {}
    i = 0
    while i < len(tokens) and not tokens[i].startswith("POINT_DATA"):
        parts = tokens[i].split()
        if parts and parts[0] in ("DIMENSIONS", "ORIGIN", "SPACING"):
            header[parts[0]] = parts[1:]
        i += 1
    if i == len(tokens):
        raise ParseError(f"{path}: no POINT_DATA section")
    dims = tuple(int(v) for v in header["DIMENSIONS"])
    grid = Grid3D(*dims, tuple(float(v) for v in header["ORIGIN"]), tuple(float(v) for v in header["SPACING"]))
    count = int(tokens[i].split()[1])
    i += 1
    blocks = {}
    while i < len(tokens):
        parts = tokens[i].split()
        if parts and parts[0] == "SCALARS":
            vals = np.array([float(v) for v in tokens[i + 2 : i + 2 + count]])
            if vals.size != count or not np.all(np.isfinite(vals)):
                raise ParseError(f"{path}: block {parts[1]} is truncated or non-finite")
            blocks[parts[1]] = vals.reshape(dims, order="F")
            i += 2 + count
        else:
            i += 1
    return grid, blocks
