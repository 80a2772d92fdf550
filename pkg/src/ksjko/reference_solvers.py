"""Independent oracles for the test suite.

Nothing here imports the solver modules: reaction parameters are read by
attribute (``alpha``, ``beta``, ``r``) and every formula is written out again.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, idct


@dataclass(frozen=True)
class OracleResult:
    values: np.ndarray | float
    error_bound: float
    method: str


def _params(F):
    return float(F.alpha), float(F.beta), float(F.r)


def _rate(s, alpha, beta, r):
    """Right-hand side of ``s' = -s F'(s) = alpha s - beta s^r``."""
    return alpha * s - beta * np.power(s, r)


def logistic_exact(rho0, alpha: float, beta: float, t: float):
    """Closed-form solution of ``s' = alpha s - beta s^2``."""
    rho0 = np.asarray(rho0, dtype=float)
    if alpha == 0:
        out = rho0 / (1 + beta * rho0 * t)
    else:
        e = math.exp(alpha * t)
        out = alpha * rho0 * e / (alpha + beta * rho0 * (e - 1))
    return float(out) if out.ndim == 0 else out


def _rk4(s, alpha, beta, r, t, steps):
    h = t / steps
    for _ in range(steps):
        k1 = _rate(s, alpha, beta, r)
        k2 = _rate(s + 0.5 * h * k1, alpha, beta, r)
        k3 = _rate(s + 0.5 * h * k2, alpha, beta, r)
        k4 = _rate(s + h * k3, alpha, beta, r)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def rk4_reaction(rho0, F, t: float, steps: int = 1000) -> OracleResult:
    """Classic RK4 for ``s' = -s F'(s)``; error estimated by step halving (Richardson)."""
    if steps < 10:
        raise ValueError("steps must be at least 10")
    alpha, beta, r = _params(F)
    s0 = np.asarray(rho0, dtype=float)
    coarse = _rk4(s0, alpha, beta, r, t, steps)
    fine = _rk4(s0, alpha, beta, r, t, 2 * steps)
    err = float(np.max(np.abs(fine - coarse))) / 15 + 1e-15 * (1 + float(np.max(np.abs(fine))))
    vals = float(fine) if fine.ndim == 0 else fine
    return OracleResult(vals, err, "rk4-richardson")


def cell_average_restrict(values: np.ndarray, factor: int) -> np.ndarray:
    """Average consecutive blocks of ``factor`` fine cells onto one coarse cell."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] % factor:
        raise ValueError("fine cell count must be a multiple of the factor")
    return v.reshape(-1, factor).mean(axis=1)


def crank_nicolson_rd(init, length: float, cells: int, F, tau_ref: float, t: float,
                      diffusivity: float = 1.0) -> OracleResult:
    """``rho_t = D rho_xx + alpha rho - beta rho^r`` on [0, length] with no-flux ends.

    Spectral cosine basis on cell centres: Crank-Nicolson for diffusion and a
    second-order Adams-Bashforth treatment of the reaction (first step by
    explicit Euler-Heun). ``init`` is a callable of the centres or an array.
    The returned values are point values at the cell centres.
    """
    alpha, beta, r = _params(F)
    h = length / cells
    x = (np.arange(cells) + 0.5) * h
    rho = np.asarray(init(x) if callable(init) else init, dtype=float).copy()
    steps = max(1, int(round(t / tau_ref)))
    dt = t / steps
    lam = -diffusivity * (np.pi * np.arange(cells) / length) ** 2
    plus = (1 + 0.5 * dt * lam) / (1 - 0.5 * dt * lam)
    imp = dt / (1 - 0.5 * dt * lam)

    def react(v):
        return alpha * v - beta * np.power(np.maximum(v, 0.0), r)

    fwd = lambda v: dct(v, type=2, norm="ortho")
    inv = lambda v: idct(v, type=2, norm="ortho")
    prev = None
    for n in range(steps):
        R = react(rho)
        if prev is None:
            # Heun predictor for the first reaction term
            pred = inv(plus * fwd(rho) + imp * fwd(R))
            Rn = 0.5 * (R + react(pred))
        else:
            Rn = 1.5 * R - 0.5 * prev
        prev = R
        rho = inv(plus * fwd(rho) + imp * fwd(Rn))
    bound = float(dt**2 * (1 + abs(alpha) + beta) * (1 + np.max(np.abs(rho))))
    return OracleResult(rho, bound, "cn-ab2-cosine")


def heat_cosine_series(coeffs, length: float, x, t: float, diffusivity: float = 1.0):
    """``sum_k a_k exp(-D (k pi/L)^2 t) cos(k pi x / L)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k, a in enumerate(coeffs):
        out = out + a * math.exp(-diffusivity * (k * math.pi / length) ** 2 * t) * np.cos(k * math.pi * x / length)
    return out


def _log_objective(logM, alpha, beta, r, rho0_linf):
    """log of ``min(M / eta_M, M / rho0_linf)`` with ``eta_M = ((alpha + M)/beta)^(1/(r-1))``."""
    M = np.exp(logM)
    log_eta = (np.log(alpha + M) - math.log(beta)) / (r - 1)
    return np.minimum(logM - log_eta, logM - math.log(rho0_linf))


def brute_force_chi_star(alpha: float, beta: float, r: float, rho0_linf: float,
                         points: int = 10_000, M_min: float = 1e-8, M_max: float = 1e15,
                         zooms: int = 4, slope_tol: float = 1e-9) -> OracleResult:
    """Grid search of ``sup_M min(M / eta_M, M / ||rho0||)``.

    The sup is located on a log grid, then the bracket around the best node is
    re-gridded ``zooms`` times. If the objective is still rising at ``M_max``
    with log-slope above ``slope_tol`` the value is reported as infinite.
    """
    lo, hi = math.log(M_min), math.log(M_max)
    grid = np.linspace(lo, hi, points)
    vals = _log_objective(grid, alpha, beta, r, rho0_linf)
    tail = (vals[-1] - vals[-2]) / (grid[-1] - grid[-2])
    if int(np.argmax(vals)) >= points - 2 and tail > slope_tol:
        return OracleResult(math.inf, 0.0, "grid-unbounded")
    best = float(vals.max())
    for _ in range(zooms):
        i = int(np.argmax(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
        grid = np.linspace(a, b, points)
        vals = _log_objective(grid, alpha, beta, r, rho0_linf)
        best = max(best, float(vals.max()))
    spacing = grid[1] - grid[0]
    return OracleResult(math.exp(best), math.exp(best) * 2 * spacing, "grid-zoom")


def j_inverse_bisection(y, tau: float, alpha: float, beta: float, r: float, iters: int = 200):
    """Solve ``s (1 + tau (beta s^(r-1) - alpha)/2)^2 = y`` by bisection on [0, y / (1 - tau alpha/2)^2]."""
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def J(s):
        return s * (1 + 0.5 * tau * (beta * np.power(s, r - 1) - alpha)) ** 2

    lo = np.zeros_like(y)
    hi = y / (1 - 0.5 * tau * alpha) ** 2 + 1e-300
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = J(mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)
