"""Cell-centered scalar fields on a planar box.

Values live at cell centers and integrals use piecewise-constant quadrature,
so the volume of a cell set is its cell count times the cell area.  Arrays are
stored with shape ``(ny, nx)``; row ``j`` is the ``j``-th strip in ``y`` and
column ``i`` the ``i``-th strip in ``x``.  Flattening is row-major (``x``
fastest), which is also the order used by the GF1 text format.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class SpecMismatch(ValueError):
    """Two fields that must share a grid do not."""


class FormatError(ValueError):
    """A GF1/TF1 stream is malformed."""


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx, ny must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("nx and ny must be at least 2")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("box must have positive extent")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_diameter(self) -> float:
        return float(np.hypot(self.dx, self.dy))

    def xs(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    def ys(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell centers, each of shape (ny, nx)."""
        return np.meshgrid(self.xs(), self.ys())

    def to_index(self, x, y):
        """Fractional (row, col) index coordinates of points, cell centers at integers."""
        col = (np.asarray(x, dtype=float) - self.x_min) / self.dx - 0.5
        row = (np.asarray(y, dtype=float) - self.y_min) / self.dy - 0.5
        return row, col

    def cell_of(self, x, y):
        """Integer (row, col) of the cell containing each point (clipped to the grid)."""
        col = np.floor((np.asarray(x, dtype=float) - self.x_min) / self.dx).astype(int)
        row = np.floor((np.asarray(y, dtype=float) - self.y_min) / self.dy).astype(int)
        return np.clip(row, 0, self.ny - 1), np.clip(col, 0, self.nx - 1)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "nx": self.nx, "ny": self.ny}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]),
                   float(d["y_max"]), int(d["nx"]), int(d["ny"]))

    @classmethod
    def square(cls, half: float, n: int) -> "GridSpec":
        return cls(-half, half, -half, half, n, n)


@dataclass(frozen=True)
class GridField:
    """Immutable cell-centered field.

    ``support_tol`` defaults to ``1e-9 * sup_norm``; cells with
    ``|value| > support_tol`` form the support.
    """

    spec: GridSpec
    values: np.ndarray
    support_tol: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.size != self.spec.nx * self.spec.ny:
            raise SpecMismatch(f"expected {self.spec.nx * self.spec.ny} values, got {v.size}")
        v = v.reshape(self.spec.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.support_tol is None:
            tol = 1e-9 * float(np.max(np.abs(v))) if v.size else 0.0
            object.__setattr__(self, "support_tol", tol)
        elif self.support_tol < 0:
            raise ValueError("support_tol must be non-negative")

    def with_values(self, values, support_tol=None) -> "GridField":
        return GridField(self.spec, values, support_tol)

    def __add__(self, other: "GridField") -> "GridField":
        return lin_comb([(1.0, self), (1.0, other)])

    def __sub__(self, other: "GridField") -> "GridField":
        return lin_comb([(1.0, self), (-1.0, other)])

    def scaled(self, c: float) -> "GridField":
        return GridField(self.spec, c * self.values)


def zeros(spec: GridSpec) -> GridField:
    return GridField(spec, np.zeros(spec.shape), 0.0)


def from_function(spec: GridSpec, fn, support_tol=None) -> GridField:
    X, Y = spec.centers()
    return GridField(spec, fn(X, Y), support_tol)


def indicator(spec: GridSpec, mask, scale: float = 1.0) -> GridField:
    return GridField(spec, np.where(np.asarray(mask, dtype=bool), scale, 0.0))


def sup_norm(f: GridField) -> float:
    return float(np.max(np.abs(f.values)))


def l1_norm(f: GridField) -> float:
    return float(np.sum(np.abs(f.values)) * f.spec.cell_area)


def lp_norm(f: GridField, p: float) -> float:
    if np.isinf(p):
        return sup_norm(f)
    return float((np.sum(np.abs(f.values) ** p) * f.spec.cell_area) ** (1.0 / p))


def mean(f: GridField) -> float:
    """Integral of the field (not divided by area)."""
    return float(np.sum(f.values) * f.spec.cell_area)


def support_cells(f: GridField) -> np.ndarray:
    """Boolean mask of cells with |value| > support_tol."""
    return np.abs(f.values) > f.support_tol


def support_volume(f: GridField) -> float:
    return float(np.count_nonzero(support_cells(f)) * f.spec.cell_area)


def mask_volume(spec: GridSpec, mask) -> float:
    return float(np.count_nonzero(mask) * spec.cell_area)


def lin_comb(terms: Sequence[tuple[float, GridField]]) -> GridField:
    """Pointwise sum of coef*field, accumulated left to right."""
    terms = list(terms)
    if not terms:
        raise ValueError("lin_comb needs at least one term")
    spec = terms[0][1].spec
    acc = np.zeros(spec.shape)
    for coef, f in terms:
        if f.spec != spec:
            raise SpecMismatch("fields live on different grids")
        acc = acc + coef * f.values
    return GridField(spec, acc)


def dilate(mask, cells: int = 1) -> np.ndarray:
    """Chebyshev dilation of a cell mask by ``cells`` rings (3x3 structuring element)."""
    from scipy.ndimage import binary_dilation

    mask = np.asarray(mask, dtype=bool)
    if cells <= 0:
        return mask.copy()
    return binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=int(cells))


# ---------------------------------------------------------------- time fields

@dataclass(frozen=True)
class TimeField:
    fields: tuple
    t_grid: np.ndarray = field(default=None)

    def __post_init__(self):
        fs = tuple(self.fields)
        if len(fs) < 2:
            raise ValueError("a TimeField needs at least two time samples")
        spec = fs[0].spec
        for f in fs:
            if f.spec != spec:
                raise SpecMismatch("all time slices must share one grid")
        t = np.linspace(0.0, 1.0, len(fs)) if self.t_grid is None else np.asarray(self.t_grid, float)
        if t.shape != (len(fs),):
            raise ValueError("t_grid length must match number of slices")
        if abs(t[0]) > 1e-12 or abs(t[-1] - 1.0) > 1e-12:
            raise ValueError("t_grid must span [0, 1]")
        steps = np.diff(t)
        if np.any(steps <= 0) or np.max(np.abs(steps - steps.mean())) > 1e-9:
            raise ValueError("t_grid must be a uniform increasing partition")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "fields", fs)
        object.__setattr__(self, "t_grid", t)

    @property
    def spec(self) -> GridSpec:
        return self.fields[0].spec

    @property
    def T(self) -> int:
        return len(self.fields)

    def stack(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    @classmethod
    def from_array(cls, spec: GridSpec, arr) -> "TimeField":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(GridField(spec, a) for a in arr))

    @classmethod
    def autonomous(cls, f: GridField, samples: int = 2) -> "TimeField":
        return cls(tuple(f for _ in range(samples)))


def _trapezoid(y, t) -> float:
    return float(np.trapezoid(y, t)) if hasattr(np, "trapezoid") else float(np.trapz(y, t))


def l1inf_norm(H: TimeField) -> float:
    """Integral over time of the per-slice sup norm (trapezoid rule)."""
    return _trapezoid([sup_norm(f) for f in H.fields], H.t_grid)


def l11_norm(H: TimeField) -> float:
    return _trapezoid([l1_norm(f) for f in H.fields], H.t_grid)


def slice_means(H: TimeField) -> np.ndarray:
    return np.array([mean(f) for f in H.fields])


def time_union_support(H: TimeField) -> np.ndarray:
    m = np.zeros(H.spec.shape, bool)
    for f in H.fields:
        m |= support_cells(f)
    return m


# ------------------------------------------------------------------ GF1 / TF1

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _open_text(target, mode):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode), True
    return target, False


def dumps_gf1(f: GridField) -> str:
    s = f.spec
    head = " ".join(["GF1", str(s.nx), str(s.ny)] +
                    [_fmt(v) for v in (s.x_min, s.x_max, s.y_min, s.y_max, f.support_tol)])
    body = "\n".join(" ".join(_fmt(v) for v in row) for row in f.values)
    return head + "\n" + body + "\n"


def write_gf1(f: GridField, target) -> None:
    fh, close = _open_text(target, "w")
    try:
        fh.write(dumps_gf1(f))
    finally:
        if close:
            fh.close()


def _parse_gf1_header(tokens):
    if len(tokens) != 8 or tokens[0] != "GF1":
        raise FormatError("bad GF1 header")
    nx, ny = int(tokens[1]), int(tokens[2])
    x0, x1, y0, y1, tol = (float(t) for t in tokens[3:8])
    return GridSpec(x0, x1, y0, y1, nx, ny), tol


def _read_gf1_from_tokens(it):
    header = [next(it) for _ in range(8)]
    spec, tol = _parse_gf1_header(header)
    n = spec.nx * spec.ny
    vals = np.array([float(next(it)) for _ in range(n)])
    return GridField(spec, vals, tol)


def loads_gf1(text: str) -> GridField:
    it = iter(text.split())
    try:
        f = _read_gf1_from_tokens(it)
    except StopIteration:
        raise FormatError("truncated GF1 data") from None
    if next(it, None) is not None:
        raise FormatError("trailing data after GF1 body")
    return f


def read_gf1(source) -> GridField:
    fh, close = _open_text(source, "r")
    try:
        return loads_gf1(fh.read())
    finally:
        if close:
            fh.close()


def dumps_tf1(H: TimeField) -> str:
    s = H.spec
    out = io.StringIO()
    out.write(" ".join(["TF1", str(H.T), str(s.nx), str(s.ny)] +
                       [_fmt(v) for v in (s.x_min, s.x_max, s.y_min, s.y_max)]) + "\n")
    out.write(" ".join(_fmt(t) for t in H.t_grid) + "\n")
    for f in H.fields:
        out.write(dumps_gf1(f))
    return out.getvalue()


def write_tf1(H: TimeField, target) -> None:
    fh, close = _open_text(target, "w")
    try:
        fh.write(dumps_tf1(H))
    finally:
        if close:
            fh.close()


def loads_tf1(text: str) -> TimeField:
    it = iter(text.split())
    try:
        if next(it) != "TF1":
            raise FormatError("bad TF1 header")
        T, nx, ny = int(next(it)), int(next(it)), int(next(it))
        box = [float(next(it)) for _ in range(4)]
        t = np.array([float(next(it)) for _ in range(T)])
        fields = [_read_gf1_from_tokens(it) for _ in range(T)]
    except StopIteration:
        raise FormatError("truncated TF1 data") from None
    spec = GridSpec(box[0], box[1], box[2], box[3], nx, ny)
    if any(f.spec != spec for f in fields):
        raise FormatError("TF1 slice grid differs from header")
    return TimeField(tuple(fields), t)


def read_tf1(source) -> TimeField:
    fh, close = _open_text(source, "r")
    try:
        return loads_tf1(fh.read())
    finally:
        if close:
            fh.close()


# ------------------------------------------------------------------ regions

def region_mask(spec: GridSpec, region) -> np.ndarray:
    """Cell mask from a region description.

    Accepted forms (dicts, as loaded from JSON):
      {"type": "box", "x": [a, b], "y": [c, d]}        centers in the open box
      {"type": "disk", "center": [x, y], "radius": r}  centers with |p-c| < r
      {"type": "annulus", "center": [x, y], "r_in": r0, "r_out": r1}
      {"type": "cells", "rows": [...], "cols": [...]}
      {"type": "union", "parts": [...]}, {"type": "difference", "a": ..., "b": ...}
    A boolean array of the grid shape is passed through.
    """
    if isinstance(region, np.ndarray):
        if region.shape != spec.shape:
            raise SpecMismatch("mask shape does not match grid")
        return region.astype(bool)
    X, Y = spec.centers()
    kind = region.get("type")
    if kind == "box":
        (a, b), (c, d) = region["x"], region["y"]
        return (X > a) & (X < b) & (Y > c) & (Y < d)
    if kind == "disk":
        cx, cy = region["center"]
        return np.hypot(X - cx, Y - cy) < region["radius"]
    if kind == "annulus":
        cx, cy = region["center"]
        r = np.hypot(X - cx, Y - cy)
        return (r >= region["r_in"]) & (r < region["r_out"])
    if kind == "cells":
        m = np.zeros(spec.shape, bool)
        m[np.asarray(region["rows"], int), np.asarray(region["cols"], int)] = True
        return m
    if kind == "union":
        m = np.zeros(spec.shape, bool)
        for part in region["parts"]:
            m |= region_mask(spec, part)
        return m
    if kind == "difference":
        return region_mask(spec, region["a"]) & ~region_mask(spec, region["b"])
    raise ValueError(f"unknown region type {kind!r}")


def mask_to_region(mask) -> dict:
    rows, cols = np.nonzero(np.asarray(mask, bool))
    return {"type": "cells", "rows": rows.tolist(), "cols": cols.tolist()}


def iter_cells(mask) -> Iterable[tuple[int, int]]:
    rows, cols = np.nonzero(np.asarray(mask, bool))
    return zip(rows.tolist(), cols.tolist())
