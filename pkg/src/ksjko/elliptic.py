"""Chemoattractant solve: -Lap c + Lambda c = rho (Neumann) or -Lap c = rho, c = 0 on the boundary.

On a uniform cell-centred grid the three-point Laplacian with mirror ghost
cells is diagonal in the DCT-II basis, and with antisymmetric ghosts it is
diagonal in the DST-II basis, so each solve is one forward and one inverse
transform per axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .fields import DensityField, GridSpec, ScalarField

BCS = ("neumann_screened", "dirichlet_poisson")


@dataclass(frozen=True)
class EllipticConfig:
    bc: str = "neumann_screened"
    Lambda: float = 1.0

    def __post_init__(self):
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}, got {self.bc!r}")
        if self.bc == "neumann_screened" and not self.Lambda > 0:
            raise ValueError(f"Neumann mode needs Lambda > 0 (got {self.Lambda})")

    @property
    def shift(self) -> float:
        return self.Lambda if self.bc == "neumann_screened" else 0.0


def _eigs(n: int, h: float, bc: str) -> np.ndarray:
    k = np.arange(n)
    if bc == "neumann_screened":
        return (2 - 2 * np.cos(np.pi * k / n)) / h**2
    return (2 - 2 * np.cos(np.pi * (k + 1) / n)) / h**2


def _forward(v, axis, bc):
    if bc == "neumann_screened":
        return fft.dct(v, type=2, norm="ortho", axis=axis)
    return fft.dst(v, type=2, norm="ortho", axis=axis)


def _inverse(v, axis, bc):
    if bc == "neumann_screened":
        return fft.idct(v, type=2, norm="ortho", axis=axis)
    return fft.idst(v, type=2, norm="ortho", axis=axis)


def _symbol(grid: GridSpec, cfg: EllipticConfig) -> np.ndarray:
    lam = np.zeros(grid.shape)
    for axis, (n, h) in enumerate(zip(grid.cells, grid.cell_width)):
        shape = [1] * grid.dim
        shape[axis] = n
        lam = lam + _eigs(n, h, cfg.bc).reshape(shape)
    return lam + cfg.shift


def solve(rho: DensityField | ScalarField, cfg: EllipticConfig) -> ScalarField:
    """Discrete solution c of the configured elliptic problem with source rho."""
    grid = rho.grid
    v = np.asarray(rho.values, dtype=float)
    for axis in range(grid.dim):
        v = _forward(v, axis, cfg.bc)
    v = v / _symbol(grid, cfg)
    for axis in range(grid.dim):
        v = _inverse(v, axis, cfg.bc)
    return ScalarField(grid, v)


def apply_operator(c: ScalarField, cfg: EllipticConfig) -> ScalarField:
    """``-Lap_h c + shift c`` with the ghost-cell boundary closure of the solver."""
    out = cfg.shift * np.asarray(c.values, dtype=float)
    for axis, h in enumerate(c.grid.cell_width):
        v = np.moveaxis(c.values, axis, 0)
        if cfg.bc == "neumann_screened":
            lo, hi = v[:1], v[-1:]
        else:
            lo, hi = -v[:1], -v[-1:]
        padded = np.concatenate([lo, v, hi], axis=0)
        lap = (padded[2:] - 2 * padded[1:-1] + padded[:-2]) / h**2
        out = out - np.moveaxis(lap, 0, axis)
    return ScalarField(c.grid, out)


@lru_cache(maxsize=32)
def _derivative_matrix(n: int, length: float, bc: str) -> np.ndarray:
    """Matrix mapping cell values to the exact derivative of their trigonometric interpolant."""
    h = length / n
    x = (np.arange(n) + 0.5) * h
    k = np.arange(n)
    eye = np.eye(n)
    if bc == "neumann_screened":
        coef = fft.dct(eye, type=2, norm="ortho", axis=0)
        w = np.full(n, np.sqrt(2.0 / n))
        w[0] = np.sqrt(1.0 / n)
        freq = np.pi * k / length
        basis = -np.sin(np.outer(x, freq)) * freq * w
    else:
        coef = fft.dst(eye, type=2, norm="ortho", axis=0)
        w = np.full(n, np.sqrt(2.0 / n))
        w[-1] = np.sqrt(1.0 / n)
        freq = np.pi * (k + 1) / length
        basis = np.cos(np.outer(x, freq)) * freq * w
    mat = basis @ coef
    mat.setflags(write=False)
    return mat


def spectral_gradient(c: ScalarField, cfg: EllipticConfig) -> tuple[ScalarField, ...]:
    """Per-axis derivative of the cosine (Neumann) or sine (Dirichlet) interpolant of c."""
    out = []
    for axis, (n, L) in enumerate(zip(c.grid.cells, c.grid.lengths)):
        D = _derivative_matrix(n, L, cfg.bc)
        d = np.moveaxis(np.tensordot(D, np.moveaxis(c.values, axis, 0), axes=(1, 0)), 0, axis)
        out.append(ScalarField(c.grid, d))
    return tuple(out)


def gradient_magnitude(c: ScalarField, cfg: EllipticConfig) -> np.ndarray:
    comps = spectral_gradient(c, cfg)
    return np.sqrt(sum(g.values**2 for g in comps))


def regularity_ratio(rho: DensityField, cfg: EllipticConfig) -> float:
    """``(||c||_inf + ||grad c||_inf) / ||rho||_inf``: an empirical elliptic constant."""
    linf = float(np.abs(rho.values).max())
    if not linf > 0:
        raise ValueError("regularity_ratio needs a nonzero density")
    c = solve(rho, cfg)
    return (float(np.abs(c.values).max()) + float(gradient_magnitude(c, cfg).max())) / linf
