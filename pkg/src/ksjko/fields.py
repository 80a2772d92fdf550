"""Uniform cell-centred grids on rectangles and the fields that live on them."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the box prod_i [0, L_i] with N_i cells per axis (dim 1 or 2)."""

    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)
        if len(lengths) not in (1, 2) or len(cells) != len(lengths):
            raise ValueError(f"grid must be 1D or 2D with matching axes, got {lengths} / {cells}")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")
        if any(n < 1 for n in cells):
            raise ValueError(f"cell counts must be positive, got {cells}")

    @classmethod
    def interval(cls, length: float, cells: int) -> "GridSpec":
        return cls((length,), (cells,))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def cell_width(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def h(self) -> float:
        """Cell width of the first axis (the only one in 1D)."""
        return self.cell_width[0]

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.cell_width))

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    def centers(self, axis: int = 0) -> np.ndarray:
        h = self.cell_width[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def faces(self, axis: int = 0) -> np.ndarray:
        return np.linspace(0.0, self.lengths[axis], self.cells[axis] + 1)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinate arrays broadcast to the grid shape."""
        return tuple(np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij"))


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    """Signed cell values on a grid (chemoattractant, potentials, residuals)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.shape:
            vals = _frozen(vals.reshape(self.grid.shape))
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        return type(self)(self.grid, self.values + _values(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _values(other))

    def __mul__(self, a):
        return type(self)(self.grid, self.values * a)

    __rmul__ = __mul__


class DensityField(ScalarField):
    """Nonnegative cell-averaged density."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise ValueError(f"density must be nonnegative (min {self.values.min():.3e})")

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "DensityField":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def mass(self) -> float:
        return mass(self)

    @property
    def linf(self) -> float:
        return float(self.values.max())


def _values(obj) -> np.ndarray | float:
    return obj.values if isinstance(obj, ScalarField) else obj


def mass(rho: ScalarField) -> float:
    return float(rho.values.sum() * rho.grid.cell_measure)


def integrate(f: ScalarField | np.ndarray, grid: GridSpec | None = None) -> float:
    """Midpoint-rule integral of cell values."""
    if isinstance(f, ScalarField):
        return float(f.values.sum() * f.grid.cell_measure)
    return float(np.sum(f) * grid.cell_measure)


def lp_norm(rho: ScalarField, p: float) -> float:
    """Cell-measure weighted discrete L^p norm; ``p=np.inf`` gives the max of |values|."""
    if p == np.inf:
        return float(np.abs(rho.values).max())
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    return float((np.sum(np.abs(rho.values) ** p) * rho.grid.cell_measure) ** (1.0 / p))


def gradient(f: ScalarField) -> tuple[ScalarField, ...]:
    """Per-axis derivative: centred in the interior, second-order one-sided at the ends."""
    out = []
    for axis, h in enumerate(f.grid.cell_width):
        n = f.grid.cells[axis]
        if n == 1:
            d = np.zeros_like(f.values)
        elif n == 2:
            d = np.gradient(f.values, h, axis=axis, edge_order=1)
        else:
            d = np.gradient(f.values, h, axis=axis, edge_order=2)
        out.append(ScalarField(f.grid, d))
    return tuple(out)


def write_snapshot(rho: ScalarField, path: str | Path | None = None) -> str:
    """Write ``x,rho`` (or ``x,y,rho``) rows with 17 significant digits; returns the text."""
    grid = rho.grid
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if grid.dim == 1:
        writer.writerow(["x", "rho"])
        for x, v in zip(grid.centers(0), rho.values):
            writer.writerow([f"{x:.17g}", f"{v:.17g}"])
    else:
        writer.writerow(["x", "y", "rho"])
        X, Y = grid.mesh()
        for x, y, v in zip(X.ravel(), Y.ravel(), rho.values.ravel()):
            writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_snapshot(path: str | Path) -> DensityField:
    """Inverse of :func:`write_snapshot`; the grid is recovered from the cell centres."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader if row])
    if header == ["x", "rho"]:
        x = rows[:, 0]
        h = x[1] - x[0] if len(x) > 1 else 2 * x[0]
        grid = GridSpec.interval(len(x) * h, len(x))
        return DensityField(grid, rows[:, 1])
    if header == ["x", "y", "rho"]:
        xs = np.unique(rows[:, 0])
        ys = np.unique(rows[:, 1])
        hx = xs[1] - xs[0] if len(xs) > 1 else 2 * xs[0]
        hy = ys[1] - ys[0] if len(ys) > 1 else 2 * ys[0]
        grid = GridSpec((len(xs) * hx, len(ys) * hy), (len(xs), len(ys)))
        order = np.lexsort((rows[:, 1], rows[:, 0]))
        return DensityField(grid, rows[order, 2].reshape(len(xs), len(ys)))
    raise ValueError(f"unrecognised snapshot header {header!r} in {path}")
