"""Log-domain Sinkhorn iterations on a uniform grid with squared-distance cost.

The cost between cell centres is separable (sum over axes), so a soft-min over
the full grid is a sequence of one-axis log-sum-exp reductions.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fields import GridSpec


class SinkhornError(RuntimeError):
    pass


@lru_cache(maxsize=64)
def _axis_cost(n: int, h: float) -> np.ndarray:
    x = (np.arange(n) + 0.5) * h
    C = (x[:, None] - x[None, :]) ** 2
    C.setflags(write=False)
    return C


def log_kernel_apply(V: np.ndarray, grid: GridSpec, eps: float) -> np.ndarray:
    """``out_i = log sum_j exp(V_j - |x_i - x_j|^2 / eps)`` over the grid."""
    out = V
    for axis, (n, h) in enumerate(zip(grid.cells, grid.cell_width)):
        C = _axis_cost(n, h) / eps
        moved = np.moveaxis(out, axis, 0)  # (n_j, rest...)
        flat = moved.reshape(n, -1)
        A = flat[None, :, :] - C[:, :, None]  # (n_i, n_j, rest)
        mx = A.max(axis=1)
        safe = np.where(np.isfinite(mx), mx, 0.0)
        red = safe + np.log(np.exp(A - safe[:, None, :]).sum(axis=1))
        red = np.where(np.isfinite(mx), red, -np.inf)
        out = np.moveaxis(red.reshape(moved.shape), 0, axis)
    return out


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


@dataclass
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    cost: float
    iterations: int
    marginal_error: float


@lru_cache(maxsize=16)
def pairwise_cost(grid: GridSpec) -> np.ndarray:
    pts = np.stack([m.ravel() for m in grid.mesh()], axis=1)
    D = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    D.setflags(write=False)
    return D


def plan(f, g, log_a, log_b, grid: GridSpec, eps: float) -> np.ndarray:
    """Dense plan ``a_i b_j exp((f_i + g_j - C_ij)/eps)`` on the flattened grid."""
    logP = (f.ravel()[:, None] + g.ravel()[None, :] - pairwise_cost(grid)) / eps
    return np.exp(logP + log_a.ravel()[:, None] + log_b.ravel()[None, :])


def transport_cost(f, g, log_a, log_b, grid: GridSpec, eps: float) -> float:
    return float(np.sum(plan(f, g, log_a, log_b, grid, eps) * pairwise_cost(grid)))


def balanced(a: np.ndarray, b: np.ndarray, grid: GridSpec, eps: float, tol: float = 1e-9,
             max_iter: int = 20000, eps_start: float | None = None, stages: int = 6) -> SinkhornResult:
    """Entropic transport between cell masses a and b (equal totals), with eps-scaling."""
    log_a, log_b = _log(a), _log(b)
    mass = float(a.sum())
    f = np.zeros(grid.shape)
    g = np.zeros(grid.shape)
    diam2 = sum(L * L for L in grid.lengths)
    eps0 = max(eps, diam2 if eps_start is None else eps_start)
    schedule = np.geomspace(eps0, eps, stages) if eps0 > eps and stages > 1 else np.array([eps])
    it = 0
    err = np.inf
    for k, e in enumerate(schedule):
        last = k == len(schedule) - 1
        for _ in range(max_iter):
            it += 1
            f = -e * log_kernel_apply(g / e + log_b, grid, e)
            g = -e * log_kernel_apply(f / e + log_a, grid, e)
            row = np.exp(f / e + log_a + log_kernel_apply(g / e + log_b, grid, e))
            err = float(np.abs(np.where(a > 0, row, 0.0) - a).sum()) / mass
            if err <= (tol if last else max(tol, 1e-6)):
                break
        else:
            if last:
                raise SinkhornError(f"no convergence after {max_iter} iterations (marginal error {err:.3e})")
    cost = transport_cost(f, g, log_a, log_b, grid, eps)
    return SinkhornResult(f, g, cost, it, err)
