"""Exact quadratic-cost transport between piecewise-constant densities on an interval.

A cell density has a piecewise-linear CDF and a piecewise-linear quantile
function. Merging the CDF breakpoints of two densities gives subintervals of
[0, 1] on which both quantiles are affine, so every integral needed below is a
polynomial integral evaluated in closed form.
"""
from __future__ import annotations

import numpy as np

MASS_FLOOR = 1e-12


def face_cdf(weights: np.ndarray) -> np.ndarray:
    """Normalised CDF at the N+1 cell faces from nonnegative cell weights."""
    w = np.asarray(weights, dtype=float)
    F = np.concatenate([[0.0], np.cumsum(w)])
    F /= F[-1]
    F[-1] = 1.0
    return F


def floored(weights: np.ndarray, theta: float = MASS_FLOOR) -> np.ndarray:
    """Mass-preserving mix ``(1 - theta) w + theta mean(w)`` so no cell is empty."""
    w = np.asarray(weights, dtype=float)
    if np.all(w > 0):
        return w
    return (1 - theta) * w + theta * w.mean()


class Quantile:
    """Quantile function of a cell density given by its face CDF ``F`` and face positions ``x``."""

    def __init__(self, F: np.ndarray, x: np.ndarray):
        self.F = np.asarray(F, dtype=float)
        self.x = np.asarray(x, dtype=float)

    @classmethod
    def from_weights(cls, weights, x_faces):
        return cls(face_cdf(weights), x_faces)

    def cell_of(self, s: np.ndarray) -> np.ndarray:
        """Index of the cell whose CDF range contains s (right-continuous; empty cells skipped)."""
        n = len(self.F) - 1
        j = np.searchsorted(self.F, s, side="right") - 1
        return np.clip(j, 0, n - 1)

    def eval_in(self, s: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Affine branch of cell j evaluated at s (s must lie in that cell's CDF range)."""
        F0, F1 = self.F[j], self.F[j + 1]
        D = F1 - F0
        h = self.x[j + 1] - self.x[j]
        frac = np.where(D > 0, (s - F0) / np.where(D > 0, D, 1.0), 0.0)
        return self.x[j] + h * frac

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.eval_in(s, self.cell_of(s))


def merged(*Fs: np.ndarray) -> np.ndarray:
    return np.unique(np.concatenate(Fs))


def w2sq_unit(q0: Quantile, q1: Quantile) -> float:
    """``int_0^1 (Q0 - Q1)^2 ds`` exactly."""
    s = merged(q0.F, q1.F)
    a, b = s[:-1], s[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    mid = 0.5 * (a + b)
    j0, j1 = q0.cell_of(mid), q1.cell_of(mid)
    da = q0.eval_in(a, j0) - q1.eval_in(a, j1)
    db = q0.eval_in(b, j0) - q1.eval_in(b, j1)
    return float(np.sum((b - a) * (da * da + da * db + db * db) / 3.0))


def _lin_moments(ta, tb, qa, qb):
    """For q affine on [ta, tb]: (int q t dt, int q (1 - t) dt)."""
    ell = tb - ta
    qt = ell / 6.0 * (qa * (2 * ta + tb) + qb * (ta + 2 * tb))
    q1 = ell * (qa + qb) / 2.0
    return qt, q1 - qt


def _poly_ints(ta, tb):
    """Integrals of t^2, (1 - t)^2 and t (1 - t) over [ta, tb]."""
    t2 = (tb**3 - ta**3) / 3.0
    omt2 = ((1 - ta) ** 3 - (1 - tb) ** 3) / 3.0
    t1 = (tb**2 - ta**2) / 2.0
    return t2, omt2, t1 - t2


class StepGeometry:
    """Transport part of the 1D step in face-CDF coordinates.

    Unknowns are the interior face CDF values ``F_1..F_{N-1}`` of the trial
    density (with ``F_0 = 0``, ``F_N = 1``), and ``g`` is fixed through its
    quantile. All quantities are per unit mass.
    """

    def __init__(self, g_quantile: Quantile, x_faces: np.ndarray):
        self.qg = g_quantile
        self.x = np.asarray(x_faces, dtype=float)
        self.n = len(self.x) - 1

    def _pieces(self, F):
        s = merged(F, self.qg.F)
        a, b = s[:-1], s[1:]
        keep = b > a
        a, b = a[keep], b[keep]
        mid = 0.5 * (a + b)
        j = np.clip(np.searchsorted(F, mid, side="right") - 1, 0, self.n - 1)
        k = self.qg.cell_of(mid)
        D = F[j + 1] - F[j]
        ta = (a - F[j]) / D
        tb = (b - F[j]) / D
        qa = self.qg.eval_in(a, k)
        qb = self.qg.eval_in(b, k)
        return j, ta, tb, qa, qb

    def cost(self, F: np.ndarray) -> float:
        """``int_0^1 (Q_F - Q_g)^2 ds``."""
        j, ta, tb, qa, qb = self._pieces(F)
        h = self.x[j + 1] - self.x[j]
        D = F[j + 1] - F[j]
        ea = self.x[j] + h * ta - qa
        eb = self.x[j] + h * tb - qb
        return float(np.sum(D * (tb - ta) * (ea * ea + ea * eb + eb * eb) / 3.0))

    def grad_hess(self, F: np.ndarray):
        """Gradient over interior faces and the tridiagonal Hessian (diag, offdiag)."""
        n = self.n
        j, ta, tb, qa, qb = self._pieces(F)
        h = self.x[1:] - self.x[:-1]
        # int_0^1 e_j t dt and int_0^1 e_j (1 - t) dt with e_j = x_j + h t - Q_g
        qt, q1mt = _lin_moments(ta, tb, qa, qb)
        Qt = np.bincount(j, qt, minlength=n)
        Q1mt = np.bincount(j, q1mt, minlength=n)
        et = self.x[:-1] / 2 + h / 3 - Qt
        e1mt = self.x[:-1] / 2 + h / 6 - Q1mt
        grad = -2 * (h[:-1] * et[:-1] + h[1:] * e1mt[1:])
        # int_0^1 p(t) Q_g'(s(t)) dt as a Stieltjes sum of p against dQ_g
        D = F[1:] - F[:-1]
        slope = (qb - qa) / (tb - ta) / D[j]
        t2, omt2, tomt = _poly_ints(ta, tb)
        S_t2 = h * np.bincount(j, slope * t2, minlength=n)
        S_omt2 = h * np.bincount(j, slope * omt2, minlength=n)
        S_tomt = h * np.bincount(j, slope * tomt, minlength=n)
        diag = 2 * (S_t2[:-1] + S_omt2[1:])
        off = 2 * S_tomt[1:-1]
        return grad, diag, off

    def potential_jumps(self, F: np.ndarray) -> np.ndarray:
        """Cell-to-cell increments of the discrete dual potential (minus the face gradient)."""
        g, _, _ = self.grad_hess(F)
        return -g
