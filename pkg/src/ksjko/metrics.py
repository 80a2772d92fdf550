"""Distances between cell densities.

* ``w2_1d``: exact quadratic-cost transport on an interval by monotone rearrangement.
* ``w2_entropic``: log-domain Sinkhorn on the grid (1D or 2D).
* ``fr_distance``: closed-form Fisher-Rao (Hellinger) distance.
* ``wfr_upper_bound``: upper bounds on the Wasserstein-Fisher-Rao distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sinkhorn
from ._quantile import Quantile, face_cdf, w2sq_unit
from .fields import DensityField, GridSpec, ScalarField, mass

_GAUSS3 = np.polynomial.legendre.leggauss(3)


class MassMismatch(ValueError):
    pass


def _check_balanced(rho0: DensityField, rho1: DensityField, rtol: float = 1e-10):
    m0, m1 = mass(rho0), mass(rho1)
    if not (m0 > 0 and m1 > 0):
        raise ValueError("transport distances need positive mass")
    if abs(m0 - m1) > rtol * m0:
        raise MassMismatch(f"masses differ: {m0!r} vs {m1!r}")
    return m0


@dataclass(frozen=True)
class TransportPlan1D:
    """Quantiles of both marginals at K nodes and the monotone map at source cell centres."""

    nodes: np.ndarray
    source_quantiles: np.ndarray
    target_quantiles: np.ndarray
    map_at_centers: np.ndarray


class KantorovichPotential1D:
    """Dual potential psi for the cost |x - y|^2, with psi' = 2 (x - T(x)) and psi(0) = 0.

    psi is piecewise quadratic: on each segment [a, b] the map T is affine, so
    the exact representation is (a, b, T(a+), T(b-), psi(a)).
    """

    def __init__(self, a, b, Ta, Tb, grid: GridSpec):
        order = np.argsort(a, kind="stable")
        self.a, self.b = np.asarray(a)[order], np.asarray(b)[order]
        self.Ta, self.Tb = np.asarray(Ta)[order], np.asarray(Tb)[order]
        self.grid = grid
        ell = self.b - self.a
        inc = self.b**2 - self.a**2 - ell * (self.Ta + self.Tb)
        self.psi_a = np.concatenate([[0.0], np.cumsum(inc)[:-1]])
        self.kappa = np.where(ell > 0, (self.Tb - self.Ta) / np.where(ell > 0, ell, 1.0), 0.0)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.a, x, side="right") - 1, 0, len(self.a) - 1)
        z = x - self.a[i]
        return self.psi_a[i] + z * z + 2 * self.a[i] * z - 2 * self.Ta[i] * z - self.kappa[i] * z * z

    def map(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.a, x, side="right") - 1, 0, len(self.a) - 1)
        return self.Ta[i] + self.kappa[i] * (x - self.a[i])

    @property
    def at_centers(self) -> ScalarField:
        return ScalarField(self.grid, self(self.grid.centers()))

    @property
    def cell_averages(self) -> ScalarField:
        ell = self.b - self.a
        seg = (self.psi_a * ell + ell**3 / 3 + (self.a - self.Ta) * ell**2 - self.kappa * ell**3 / 3)
        h = self.grid.h
        cell = np.clip(np.floor((0.5 * (self.a + self.b)) / h).astype(int), 0, self.grid.cells[0] - 1)
        return ScalarField(self.grid, np.bincount(cell, seg, minlength=self.grid.cells[0]) / h)

    def c_transform(self, y) -> np.ndarray:
        """``psi^c(y) = min_x |x - y|^2 - psi(x)`` by exact minimisation on every segment."""
        y = np.asarray(y, dtype=float)[:, None]
        a, Ta, k, ell = self.a[None], self.Ta[None], self.kappa[None], (self.b - self.a)[None]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(k > 0, (y - Ta) / np.where(k > 0, k, 1.0), np.where(Ta >= y, 0.0, ell))
        z = np.clip(z, 0.0, ell)
        vals = (y - a) ** 2 - self.psi_a[None] + 2 * z * (Ta - y) + k * z * z
        return vals.min(axis=1)

    def duality_gap_terms(self, rho0: DensityField, rho1: DensityField) -> tuple[float, float]:
        """(int psi d rho0, int psi^c d rho1), both integrated exactly."""
        h = self.grid.h
        t1 = float(np.sum(self.cell_averages.values * rho0.values) * h)
        faces = self.grid.faces()
        ys = np.unique(np.concatenate([faces, self.Ta, self.Tb]))
        ys = ys[(ys >= 0) & (ys <= faces[-1])]
        lo, hi = ys[:-1], ys[1:]
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        nodes, weights = _GAUSS3
        pts = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * nodes[None]
        cell = np.clip(np.floor(0.5 * (lo + hi) / h).astype(int), 0, self.grid.cells[0] - 1)
        vals = self.c_transform(pts.ravel()).reshape(pts.shape)
        t2 = float(np.sum(0.5 * (hi - lo) * (vals @ weights) * rho1.values[cell]))
        return t1, t2


@dataclass(frozen=True)
class W2Result:
    distance: float
    plan: TransportPlan1D
    potential: KantorovichPotential1D

    @property
    def squared(self) -> float:
        return self.distance**2


def _segments(rho0: DensityField, rho1: DensityField):
    grid = rho0.grid
    x = grid.faces()
    h = grid.h
    q0 = Quantile(face_cdf(rho0.values), x)
    q1 = Quantile(face_cdf(rho1.values), x)
    s = np.unique(np.concatenate([q0.F, q1.F]))
    sa, sb = s[:-1], s[1:]
    keep = sb > sa
    sa, sb = sa[keep], sb[keep]
    mid = 0.5 * (sa + sb)
    j, k = q0.cell_of(mid), q1.cell_of(mid)
    a, b = q0.eval_in(sa, j), q0.eval_in(sb, j)
    Ta, Tb = q1.eval_in(sa, k), q1.eval_in(sb, k)
    empty = np.flatnonzero(rho0.values <= 0)
    if len(empty):
        Tc = q1(q0.F[empty])
        a = np.concatenate([a, x[empty]])
        b = np.concatenate([b, x[empty] + h])
        Ta = np.concatenate([Ta, Tc])
        Tb = np.concatenate([Tb, Tc])
    return a, b, Ta, Tb, q0, q1


def w2_1d(rho0: DensityField, rho1: DensityField, nodes_per_cell: int = 4) -> W2Result:
    """Exact W2 between equal-mass cell densities on an interval, with map and potential."""
    if rho0.grid != rho1.grid or rho0.grid.dim != 1:
        raise ValueError("w2_1d needs two densities on the same 1D grid")
    m = _check_balanced(rho0, rho1)
    a, b, Ta, Tb, q0, q1 = _segments(rho0, rho1)
    w2sq = m * w2sq_unit(q0, q1)
    K = nodes_per_cell * rho0.grid.cells[0]
    nodes = (np.arange(K) + 0.5) / K
    pot = KantorovichPotential1D(a, b, Ta, Tb, rho0.grid)
    plan = TransportPlan1D(nodes, q0(nodes), q1(nodes), pot.map(rho0.grid.centers()))
    return W2Result(float(np.sqrt(max(w2sq, 0.0))), plan, pot)


def w2_entropic(rho0: DensityField, rho1: DensityField, eps: float, tol: float = 1e-9,
                max_iter: int = 20000) -> float:
    """Square root of the transport cost of the entropic plan (no debiasing)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if rho0.grid != rho1.grid:
        raise ValueError("densities must share a grid")
    _check_balanced(rho0, rho1)
    w = rho0.grid.cell_measure
    res = sinkhorn.balanced(rho0.values * w, rho1.values * w, rho0.grid, eps, tol=tol,
                            max_iter=max_iter)
    return float(np.sqrt(max(res.cost, 0.0)))


def fr_distance(rho0: DensityField, rho1: DensityField) -> float:
    """``sqrt(4 int |sqrt(rho0) - sqrt(rho1)|^2)``."""
    d = np.sqrt(rho0.values) - np.sqrt(rho1.values)
    return float(np.sqrt(4 * np.sum(d * d) * rho0.grid.cell_measure))


def _w2sq_any(rho0, rho1, eps):
    if rho0.grid.dim == 1:
        return w2_1d(rho0, rho1).squared
    return w2_entropic(rho0, rho1, eps) ** 2


def wfr_chains(rho0: DensityField, rho1: DensityField, eps: float = 1e-3) -> dict[str, float]:
    """Every available upper bound on WFR(rho0, rho1), keyed by chain."""
    out = {"fr": fr_distance(rho0, rho1)}
    m0, m1 = mass(rho0), mass(rho1)
    if m0 > 0 and m1 > 0:
        sigma = DensityField(rho1.grid, rho1.values * (m0 / m1))
        out["w2_then_fr"] = float(np.sqrt(2 * (_w2sq_any(rho0, sigma, eps) + fr_distance(sigma, rho1) ** 2)))
        sigma2 = DensityField(rho0.grid, rho0.values * (m1 / m0))
        out["fr_then_w2"] = float(np.sqrt(2 * (fr_distance(rho0, sigma2) ** 2 + _w2sq_any(sigma2, rho1, eps))))
        if abs(m0 - m1) <= 1e-10 * m0:
            out["w2"] = float(np.sqrt(_w2sq_any(rho0, rho1, eps)))
    return out


def wfr_upper_bound(rho0: DensityField, rho1: DensityField, eps: float = 1e-3) -> float:
    return min(wfr_chains(rho0, rho1, eps).values())
