"""Minimizing-movement steps of the splitting.

Transport step: minimise ``E1(mu) + W2^2(g, mu) / (2 tau)`` over densities with
the mass of g and ``0 <= mu <= 1/(tau chi)``. The chemotaxis part of E1 is
concave, so it is linearised at the current iterate (frozen c) and the convex
remainder is minimised; repeating this is a majorise-minimise loop whose true
objective never increases.

Reaction step: minimise ``E2(mu) + FR^2(rho, mu) / (2 tau)``; the minimiser is
the cellwise inverse of ``J_tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import elliptic, sinkhorn
from ._quantile import Quantile, StepGeometry, face_cdf, floored
from .fields import DensityField, ScalarField, mass
from .metrics import w2_1d, fr_distance
from .model import ModelParams
from .potentials import EntropySpec, J_tau_inverse, ReactionSpec, XiResult, eta, l1_step_bound

BACKENDS = ("quantile_1d", "entropic")


class StepError(RuntimeError):
    """Raised when a step cannot be taken (infeasible cap, no convergence)."""


@dataclass(frozen=True)
class W2StepConfig:
    backend: str = "quantile_1d"
    tau: float = 0.01
    outer_fixed_point_iters: int = 3
    eps_schedule: tuple[float, ...] | None = None
    inner_tol: float = 1e-10
    max_newton: int = 200
    max_sinkhorn: int = 200

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.outer_fixed_point_iters < 1:
            raise ValueError("outer_fixed_point_iters must be >= 1")
        if self.eps_schedule is not None:
            e = np.asarray(self.eps_schedule, dtype=float)
            if e.size == 0 or np.any(e <= 0) or np.any(np.diff(e) >= 0):
                raise ValueError("eps_schedule must be strictly decreasing positive values")
            object.__setattr__(self, "eps_schedule", tuple(float(v) for v in e))

    def density_cap(self, chi: float) -> float:
        return math.inf if chi == 0 else 1.0 / (self.tau * chi)

    def schedule_for(self, h: float) -> tuple[float, ...]:
        if self.eps_schedule is not None:
            return self.eps_schedule
        # eps ~ h^2 at the end: much smaller eps locks mass to cells (the discrete cost is
        # linear, not quadratic, in sub-cell displacements)
        return tuple(np.geomspace(10 * h * h, h * h, 4))


@dataclass
class W2StepResult:
    rho: DensityField
    c: ScalarField
    outer_iters: int
    fixed_point_gap: float
    inner_iters: int
    objective: float


# ----------------------------------------------------------------------------- helpers


def _objective(model: ModelParams, g: DensityField, rho: DensityField, tau: float,
               c: ScalarField | None = None) -> float:
    """True step objective ``E1(rho) + W2^2(g, rho)/(2 tau)`` (1D exact transport)."""
    return model.E1(rho, c) + w2_1d(g, rho).squared / (2 * tau)


def _cap_project(q: np.ndarray, cap: float, total: float) -> np.ndarray:
    """Rescale q to the given total, clip at cap and refill the uncapped cells proportionally."""
    q = q * (total / q.sum())
    if not np.isfinite(cap):
        return q
    for _ in range(100):
        over = q > cap
        if not over.any():
            break
        excess = float(np.sum(q[over] - cap))
        q = np.where(over, cap, q)
        free = q < cap
        room = q[free].sum()
        q[free] *= 1 + excess / room
    return np.minimum(q, cap)


# ----------------------------------------------------------------------------- quantile backend


class _QuantileProblem:
    """Frozen-c convex step in face-CDF coordinates."""

    def __init__(self, model: ModelParams, g_vals: np.ndarray, tau: float, cap: float):
        grid = model.grid
        self.h = grid.h
        self.x = grid.faces()
        self.model = model
        self.U = model.entropy
        self.tau = tau
        self.cap = cap
        self.m = float(np.sum(g_vals) * self.h)
        self.geo = StepGeometry(Quantile(face_cdf(floored(g_vals)), self.x), self.x)
        self.c = np.zeros_like(g_vals)
        self.s_cap = 0.0
        self.s_pos = 0.0

    def mu(self, F):
        return self.m * np.diff(F) / self.h

    def feasible(self, F) -> bool:
        D = np.diff(F)
        if np.any(D <= 0):
            return False
        return bool(np.all(self.mu(F) < self.cap)) if np.isfinite(self.cap) else True

    def value(self, F) -> float:
        mu = self.mu(F)
        h = self.h
        v = float(np.sum(self.U.U(mu)) * h - self.model.chi * np.sum(self.c * mu) * h)
        v += self.m * self.geo.cost(F) / (2 * self.tau)
        if self.s_cap:
            v -= self.s_cap * float(np.sum(np.log(self.cap - mu)))
        if self.s_pos:
            v -= self.s_pos * float(np.sum(np.log(mu)))
        return v

    def grad_hess(self, F):
        m, h = self.m, self.h
        mu = self.mu(F)
        # derivative of sum_j h phi(mu_j) wrt interior face f is m (phi'(mu_{f-1}) - phi'(mu_f))
        d1 = self.U.dU(mu) - self.model.chi * self.c
        d2 = self.U.d2U(mu)
        if self.s_cap:
            d1 = d1 + self.s_cap / (h * (self.cap - mu))
            d2 = d2 + self.s_cap / (h * (self.cap - mu) ** 2)
        if self.s_pos:
            d1 = d1 - self.s_pos / (h * mu)
            d2 = d2 + self.s_pos / (h * mu * mu)
        gt, Ht_d, Ht_o = self.geo.grad_hess(F)
        k = m / (2 * self.tau)
        grad = m * (d1[:-1] - d1[1:]) + k * gt
        diag = m * m / h * (d2[:-1] + d2[1:]) + k * Ht_d
        off = -m * m / h * d2[1:-1] + k * Ht_o
        return grad, diag, off

    def newton(self, F, tol: float, max_iter: int):
        """Damped Newton; returns (F, iterations, converged)."""
        n = len(F) - 1
        val = self.value(F)
        for it in range(1, max_iter + 1):
            grad, diag, off = self.grad_hess(F)
            ab = np.zeros((3, n - 1))
            ab[0, 1:] = off
            ab[1] = diag
            ab[2, :-1] = off
            try:
                d = solve_banded((1, 1), ab, -grad)
            except (np.linalg.LinAlgError, ValueError):
                d = -grad / np.maximum(diag, 1e-300)
            dec = -float(grad @ d)
            if dec < 0:
                d = -grad / np.maximum(diag, 1e-300)
                dec = float(grad @ (grad / np.maximum(diag, 1e-300)))
            if dec <= tol * (1.0 + abs(val)):
                return F, it, True
            # largest step keeping all cell masses positive and below the cap
            dF = np.concatenate([[0.0], d, [0.0]])
            dD = np.diff(dF)
            D = np.diff(F)
            t = 1.0
            shrink = dD < 0
            if shrink.any():
                t = min(t, 0.99 * float(np.min(-D[shrink] / dD[shrink])))
            if np.isfinite(self.cap):
                slack = self.cap * self.h / self.m - D
                grow = dD > 0
                if grow.any():
                    t = min(t, 0.99 * float(np.min(slack[grow] / dD[grow])))
            accepted = False
            for _ in range(60):
                Fn = F + t * dF
                Fn[0], Fn[-1] = 0.0, 1.0
                if self.feasible(Fn):
                    vn = self.value(Fn)
                    if vn <= val - 1e-4 * t * dec or (t < 1e-12 and vn <= val):
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                return F, it, False
            F, val = Fn, vn
        return F, max_iter, False


def _feasible_start(vals: np.ndarray, cap: float) -> np.ndarray:
    v = floored(vals)
    if not np.isfinite(cap) or v.max() < cap * (1 - 1e-6):
        return v
    mean = v.mean()
    if mean >= cap:
        raise StepError(f"cap infeasible: mean density {mean} >= cap {cap}")
    target = mean + 0.999 * (cap - mean)
    theta = min(1.0, (v.max() - target) / (v.max() - mean))
    return (1 - theta) * v + theta * mean


def _quantile_inner(prob: _QuantileProblem, start: np.ndarray, cfg: W2StepConfig) -> tuple[np.ndarray, int]:
    F0 = face_cdf(_feasible_start(start, prob.cap))
    needs_pos = not prob.U.has_log_part
    if not needs_pos:
        F, it, ok = prob.newton(F0, 1e-15, cfg.max_newton)
        if ok:
            return prob.mu(F), it
    # barrier path: cap and/or positivity constraints may be active
    scale = 1.0
    total = 0
    F = F0
    s = 1e-2 * scale
    while True:
        prob.s_cap = s if np.isfinite(prob.cap) else 0.0
        prob.s_pos = s if needs_pos else 0.0
        F, it, ok = prob.newton(F, 1e-15, cfg.max_newton)
        total += it
        if s <= 1e-13:
            break
        s *= 0.1
    prob.s_cap = prob.s_pos = 0.0
    if not ok:
        # a stalled line search at the end of the path is acceptable only if the iterate is stationary
        pass
    return prob.mu(F), total


# ----------------------------------------------------------------------------- entropic backend


def kl_prox(log_z: np.ndarray, c: np.ndarray, model: ModelParams, tau: float, eps: float,
            w: float, cap: float, u0: np.ndarray | None = None, max_iter: int = 100) -> np.ndarray:
    """Per-cell minimiser q of ``eps KL(q | z) + 2 tau w (U(q/w) - chi c q/w)`` with ``q <= cap w``.

    Works in ``u = log q`` where the optimality condition
    ``G(u) = eps (u - log z) + 2 tau (U'(e^u / w) - chi c) = 0`` is increasing in u.
    Newton steps are kept inside a bisection bracket. Returns log q.
    """
    U = model.entropy
    chi = model.chi
    lz = np.asarray(log_z, dtype=float)

    def G(u):
        return eps * (u - lz) + 2 * tau * (U.dU(np.exp(u) / w) - chi * c)

    def dG(u):
        q = np.exp(u) / w
        return eps + 2 * tau * U.dPsi(q)

    if u0 is None:
        # Boltzmann balance as the first guess
        u0 = (eps * lz + 2 * tau * (math.log(w) - 1 + chi * c)) / (eps + 2 * tau)
    u = np.array(np.broadcast_to(u0, lz.shape), dtype=float)
    lo = u - 1.0
    hi = u + 1.0
    for _ in range(200):
        bad = G(lo) > 0
        if not bad.any():
            break
        lo = np.where(bad, lo - 2 * (hi - lo), lo)
    for _ in range(200):
        bad = G(hi) < 0
        if not bad.any():
            break
        hi = np.where(bad, hi + 2 * (hi - lo), hi)
    u = np.clip(u, lo, hi)
    for _ in range(max_iter):
        g = G(u)
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        un = u - g / dG(u)
        outside = (un <= lo) | (un >= hi) | ~np.isfinite(un)
        un = np.where(outside, 0.5 * (lo + hi), un)
        if np.all(np.abs(un - u) <= 1e-14 * np.maximum(1.0, np.abs(u))):
            u = un
            break
        u = un
    if np.isfinite(cap):
        u = np.minimum(u, math.log(cap * w))
    return u


def _density_from_level(level: np.ndarray, model: ModelParams) -> np.ndarray:
    """Solve ``U'(rho) = level`` cellwise (U' is increasing)."""
    U = model.entropy
    if U.delta == 0 or U.kind == "boltzmann":
        try:
            if U.delta == 0:
                return U.inv_dU(level)
            return np.exp(level / (1 + U.delta) - 1.0)
        except NotImplementedError:
            pass
    # power law with a log part: Newton in log rho inside a bisection bracket
    lo = np.full_like(level, -750.0)
    hi = np.full_like(level, 50.0)
    bare = EntropySpec(U.kind, U.m, 0.0)
    with np.errstate(divide="ignore"):
        v = np.clip(np.log(np.maximum(bare.inv_dU(level), 1e-300)), lo, hi)
    for _ in range(200):
        r = np.exp(v)
        gv = U.dU(r) - level
        lo = np.where(gv < 0, v, lo)
        hi = np.where(gv > 0, v, hi)
        vn = v - gv / np.maximum(U.dPsi(r), 1e-300)
        out = (vn <= lo) | (vn >= hi) | ~np.isfinite(vn)
        vn = np.where(out, 0.5 * (lo + hi), vn)
        if np.all(np.abs(vn - v) <= 1e-14 * np.maximum(1.0, np.abs(v))):
            v = vn
            break
        v = vn
    return np.exp(v)


class _SemiDual:
    """Concave semi-dual of the entropic step in the column potential g.

    ``D(g) = -eps sum_i p_i LSE_j((g_j - C_ij)/eps) - sum_j Phi*(-g_j)`` where
    ``Phi(q) = 2 tau w (U(q/w) - chi c q/w)`` restricted to ``q <= cap w``. Its
    gradient is ``q*(g) - colsum(plan)``, so a stationary point matches the
    plan's second marginal with the pointwise optimal density.
    """

    def __init__(self, model, p, c, tau, cap, eps):
        self.model, self.p, self.c, self.tau, self.cap, self.eps = model, p.ravel(), c.ravel(), tau, cap, eps
        grid = model.grid
        self.w = grid.cell_measure
        self.C = sinkhorn.pairwise_cost(grid)
        with np.errstate(divide="ignore"):
            self.log_p = np.log(self.p)

    def q_star(self, g):
        rho = _density_from_level(self.model.chi * self.c - g / (2 * self.tau), self.model)
        clipped = rho >= self.cap
        rho = np.minimum(rho, self.cap)
        return rho * self.w, clipped

    def phi(self, q):
        r = q / self.w
        return 2 * self.tau * self.w * (self.model.entropy.U(r) - self.model.chi * self.c * r)

    def evaluate(self, g, need_hess=True):
        eps = self.eps
        A = (g[None, :] - self.C) / eps
        mx = A.max(axis=1)
        E = np.exp(A - mx[:, None])
        S = E.sum(axis=1)
        P = E / S[:, None]
        lse = mx + np.log(S)
        q, clipped = self.q_star(g)
        val = -eps * float(np.sum(self.p * lse)) - float(np.sum(-g * q - self.phi(q)))
        col = self.p @ P
        grad = q - col
        if not need_hess:
            return val, grad, col, None
        PP = P * self.p[:, None]
        hess_neg = (np.diag(col) - PP.T @ P) / eps
        r = q / self.w
        dq = np.where(clipped, 0.0, self.w / (2 * self.tau * np.maximum(self.model.entropy.d2U(r), 1e-300)))
        hess_neg[np.diag_indices_from(hess_neg)] += dq
        return val, grad, col, hess_neg

    def solve(self, g, tol, max_iter=200):
        total = float(self.p.sum())
        val, grad, col, Hn = self.evaluate(g)
        for it in range(1, max_iter + 1):
            if float(np.abs(grad).sum()) <= tol * total:
                return g, col, it, True
            reg = 1e-14 * float(np.trace(Hn)) / len(g)
            try:
                d = np.linalg.solve(Hn + reg * np.eye(len(g)), grad)
            except np.linalg.LinAlgError:
                d = grad / np.maximum(np.diag(Hn), 1e-300)
            slope = float(grad @ d)
            t = 1.0
            for _ in range(60):
                gn = g + t * d
                vn, gradn, coln, _ = self.evaluate(gn, need_hess=False)
                # near the optimum the value change drowns in rounding; fall back on the gradient norm
                flat = abs(t * slope) <= 1e-11 * (1.0 + abs(val))
                if vn >= val + 1e-4 * t * slope or (flat and np.abs(gradn).sum() < np.abs(grad).sum()):
                    break
                t *= 0.5
            else:
                return g, col, it, False
            g = gn
            val, grad, col, Hn = self.evaluate(g)
        return g, col, max_iter, float(np.abs(grad).sum()) <= tol * total


def _entropic_inner(model: ModelParams, g_vals: np.ndarray, c: np.ndarray, tau: float, cap: float,
                    cfg: W2StepConfig, state: dict) -> tuple[np.ndarray, int]:
    """Entropic step: scaling sweeps with the per-cell KL prox, then semi-dual Newton if they stall."""
    grid = model.grid
    w = grid.cell_measure
    p = g_vals * w
    log_p = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    total = float(p.sum())
    if "g" in state:
        gpot = state["g"]
    else:
        # potential of the no-motion guess q = p
        gpot = -2 * tau * (model.entropy.dU(np.maximum(g_vals, 1e-300)) - model.chi * c)
    f = -1.0
    iters = 0
    schedule = state.get("schedule", cfg.schedule_for(min(grid.cell_width)))
    col = p
    for k, eps in enumerate(schedule):
        last = k == len(schedule) - 1
        tol = cfg.inner_tol if last else max(cfg.inner_tol, 1e-7)
        converged = False
        u = None
        f = -eps * sinkhorn.log_kernel_apply(gpot / eps, grid, eps)
        for _ in range(cfg.max_sinkhorn):
            iters += 1
            log_z = sinkhorn.log_kernel_apply(f / eps + log_p, grid, eps)
            u = kl_prox(log_z, c, model, tau, eps, w, cap, u0=u)
            gpot = eps * (u - log_z)
            f_new = -eps * sinkhorn.log_kernel_apply(gpot / eps, grid, eps)
            err = float(np.sum(np.abs(p * (np.exp((f - f_new) / eps) - 1.0)))) / total
            f = f_new
            if err <= tol:
                converged = True
                col = np.exp(u)
                break
        if not converged:
            sd = _SemiDual(model, p, c, tau, cap, eps)
            g_flat, col_flat, it, converged = sd.solve(gpot.ravel(), tol)
            iters += it
            gpot = g_flat.reshape(grid.shape)
            col = col_flat.reshape(grid.shape)
            if not converged and last:
                raise StepError("entropic step did not converge")
    state["g"] = gpot
    state["schedule"] = schedule[-1:]
    q = _cap_project(np.asarray(col, dtype=float), cap * w, total)
    return q / w, iters


# ----------------------------------------------------------------------------- transport step


def w2_step_detailed(g: DensityField, model: ModelParams, cfg: W2StepConfig) -> W2StepResult:
    tau = cfg.tau
    grid = model.grid
    m = mass(g)
    if not m > 0:
        raise StepError("transport step needs positive mass")
    cap = cfg.density_cap(model.chi)
    if m > cap * grid.measure:
        raise StepError(f"cap infeasible: mass {m} exceeds cap*|Omega| = {cap * grid.measure}")
    if cfg.backend == "quantile_1d" and grid.dim != 1:
        raise StepError("quantile_1d backend is one-dimensional")
    g_vals = np.asarray(g.values, dtype=float)
    current = g_vals.copy()
    c = model.c_of(DensityField(grid, current)).values if model.chi else np.zeros(grid.shape)
    prob = _QuantileProblem(model, g_vals, tau, cap) if cfg.backend == "quantile_1d" else None
    state: dict = {}
    inner_total = 0
    gap = 0.0
    outer = 0
    n_outer = cfg.outer_fixed_point_iters if model.chi else 1
    for outer in range(1, n_outer + 1):
        if prob is not None:
            prob.c = c
            new, it = _quantile_inner(prob, current, cfg)
        else:
            new, it = _entropic_inner(model, g_vals, c, tau, cap, cfg, state)
        inner_total += it
        gap = float(np.sum(np.abs(new - current)) * grid.cell_measure)
        current = new
        if model.chi:
            c = model.c_of(DensityField(grid, current)).values
        if gap <= cfg.inner_tol and outer > 1:
            break
    # exact mass: renormalise the last iterate
    w = grid.cell_measure
    current = _cap_project(current * w, cap * w, m) / w
    rho = DensityField(grid, current)
    c_field = ScalarField(grid, c)
    obj = model.E1(rho, c_field)
    if grid.dim == 1:
        obj += w2_1d(g, rho).squared / (2 * tau)
    return W2StepResult(rho, c_field, outer, gap, inner_total, obj)


def w2_step(g: DensityField, model: ModelParams, cfg: W2StepConfig) -> DensityField:
    """Approximate minimiser of ``E1(mu) + W2^2(g, mu)/(2 tau)`` under mass and cap constraints."""
    return w2_step_detailed(g, model, cfg).rho


# ----------------------------------------------------------------------------- optimality residual


@dataclass(frozen=True)
class ELResidualReport:
    l_estimate: float
    max_residual: float
    cap_active_fraction: float
    complementarity_defect: float


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    i = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(v[min(i, len(v) - 1)])


def w2_step_el_residual(rho: DensityField, g: DensityField, model: ModelParams, tau: float,
                        threshold: float = 0.0) -> ELResidualReport:
    """Residual of ``U'(rho) - chi c[rho] + phi/(2 tau) + p = l`` for a transport-step output.

    phi is the quadratic-cost dual potential on rho's side (``phi' = 2 (x - T)``
    with T the monotone map from rho to g), evaluated at cell centres.
    """
    if rho.grid.dim != 1:
        raise ValueError("the optimality residual needs the one-dimensional transport potential")
    cap = math.inf if model.chi == 0 else 1.0 / (tau * model.chi)
    pot = w2_1d(rho, g).potential
    phi = pot.at_centers.values
    c = model.c_of(rho).values if model.chi else 0.0
    vals = rho.values
    support = vals > threshold
    hfun = model.entropy.dU(np.where(support, vals, 1.0)) - model.chi * c + phi / (2 * tau)
    active = support & (vals >= 0.99 * cap)
    inactive = support & ~active
    l = _weighted_median(hfun[inactive], vals[inactive]) if inactive.any() else float(np.min(hfun[support]))
    resid = float(np.max(np.abs(hfun[inactive] - l))) if inactive.any() else 0.0
    p = np.where(active, np.maximum(l - hfun, 0.0), 0.0)
    comp = float(np.max(p * (cap - vals) / cap)) if active.any() else 0.0
    return ELResidualReport(l, resid, float(active.mean()), comp)


# ----------------------------------------------------------------------------- reaction step


def fr_step(rho: DensityField, F: ReactionSpec, tau: float) -> DensityField:
    """Cellwise ``J_tau^{-1}(rho)``: the exact Fisher-Rao minimising movement for E2."""
    return DensityField(rho.grid, J_tau_inverse(rho.values, tau, F))


@dataclass
class FRCheck:
    linf_ok: bool
    linf_margin: float
    l1_ok: bool
    l1_margin: float
    branch: str


def fr_step_estimates(rho: DensityField, rho_hat: DensityField, F: ReactionSpec, tau: float,
                      M: float, xi_result: XiResult) -> FRCheck:
    """Check the L-infinity contraction/absorption bound and the one-step L1 recurrence."""
    if not F.alpha * tau < 1:
        raise ValueError("needs alpha * tau < 1")
    lvl = eta(M, F)
    hat = rho_hat.linf
    if hat > lvl:
        bound, branch = rho.linf / (1 + tau * M), "contraction"
    else:
        bound, branch = lvl, "absorbed"
    l1_bound = l1_step_bound(mass(rho), tau, xi_result)
    lm = bound + 1e-10 - hat
    l1m = l1_bound + 1e-10 - mass(rho_hat)
    return FRCheck(lm >= 0, lm, l1m >= 0, l1m, branch)


def fr_dissipation_slack(rho: DensityField, rho_hat: DensityField, F: ReactionSpec, tau: float) -> float:
    """``E2(rho) - E2(rho_hat) - FR^2(rho, rho_hat)/(2 tau)`` (nonnegative at a minimiser)."""
    w = rho.grid.cell_measure
    e2 = lambda r: float(np.sum(F.F(r.values)) * w)
    return e2(rho) - e2(rho_hat) - fr_distance(rho, rho_hat) ** 2 / (2 * tau)
