"""Property suites behind ``ksjko validate``."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import scheme as S
from .fields import DensityField, GridSpec
from .jko import W2StepConfig, fr_step, fr_step_estimates, w2_step_detailed, w2_step_el_residual
from .metrics import fr_distance, w2_1d, wfr_upper_bound
from .model import ModelParams
from .potentials import J_tau, J_tau_inverse, ReactionSpec, chi_star, xi
from .reference_solvers import (brute_force_chi_star, cell_average_restrict, crank_nicolson_rd,
                                logistic_exact)
from .scenarios import bump, library

SUITES = ("lemmas", "metrics", "convergence")


@dataclass(frozen=True)
class Row:
    name: str
    property: str
    margin: float
    passed: bool


def _row(name, prop, margin, passed=None):
    margin = float(margin)
    return Row(name, prop, margin, margin >= 0 if passed is None else bool(passed))


# ----------------------------------------------------------------------------- lemmas


def _chi_star_rows(n=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(n):
        a, b, r, q = rng.uniform(0, 5), rng.uniform(0.1, 5), rng.uniform(1.01, 4), rng.uniform(0.1, 10)
        cs = chi_star(q, ReactionSpec(a, b, r))
        bf = brute_force_chi_star(a, b, r, q).values
        if math.isinf(cs) or math.isinf(bf):
            if cs != bf:
                worst = min(worst, -1.0)
        else:
            worst = min(worst, 1e-4 - abs(bf - cs) / cs)
    return [_row("chi_star_vs_grid_search", "closed-form admissible chi", worst)]


def _fr_rows(n=2000, seed=1):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 3, n)
    b = rng.uniform(0.1, 3, n)
    r = rng.uniform(1.05, 4, n)
    tau = rng.uniform(0.01, 0.99, n) / (2 * np.maximum(a, 1e-12))
    tau = np.minimum(tau, 1.0)
    s = rng.uniform(0, 5, n)
    worst_rt = worst_el = 0.0
    for i in range(n):
        F = ReactionSpec(a[i], b[i], r[i])
        sh = J_tau_inverse(s[i], tau[i], F)
        worst_rt = max(worst_rt, abs(float(J_tau(sh, tau[i], F)) - s[i]) / max(1.0, s[i]))
        el = math.sqrt(sh) - math.sqrt(s[i]) + 0.5 * tau[i] * math.sqrt(sh) * float(F.dF(sh))
        worst_el = max(worst_el, abs(el))
    rows = [_row("fr_roundtrip", "reaction step inverse", 1e-10 - worst_rt),
            _row("fr_euler_lagrange", "reaction step optimality", 1e-10 - worst_el)]
    # L-infinity branch bound on random fields
    g = GridSpec.interval(1.0, 32)
    worst = math.inf
    for _ in range(50):
        F = ReactionSpec(rng.uniform(0, 2), rng.uniform(0.2, 2), rng.uniform(1.2, 3.5))
        tau = 0.9 * min(F.tau_limit, 0.5)
        rho = DensityField(g, rng.uniform(0, 5, 32))
        M = rng.uniform(0.1, 3)
        chk = fr_step_estimates(rho, fr_step(rho, F, tau), F, tau, M, xi(float(rho.values.mean()), F, 1.0))
        worst = min(worst, chk.linf_margin + 1e-10)
    rows.append(_row("fr_linf_branch", "reaction step L-infinity bound", worst))
    return rows


def _trajectory_rows():
    rows = []
    for name, sc in library().items():
        traj = S.run(sc.initial(), sc.config())
        for chk in (S.check_uniform_bounds(traj), S.check_l1_bound(traj), S.check_dissipation(traj),
                    S.check_two_solution_gap(traj), S.check_support(traj)):
            rows.append(_row(f"{name}:{chk.name}", "trajectory estimate", chk.margin, chk.passed))
    return rows


# ----------------------------------------------------------------------------- metrics


def _random_density(rng, g, total=None):
    v = rng.uniform(0, 1, g.shape) ** 2 + 0.05 * rng.uniform(0, 1)
    v = v * rng.uniform(0.5, 2)
    if total is not None:
        v = v * total / (v.sum() * g.cell_measure)
    return DensityField(g, v)


def _metric_rows(n=40, seed=2):
    rng = np.random.default_rng(seed)
    g = GridSpec.interval(1.0, 24)
    tri_w2 = tri_fr = dual = cmp_fr = cmp_w2 = math.inf
    for _ in range(n):
        a, b, c = (_random_density(rng, g, 1.0) for _ in range(3))
        ab, bc, ac = w2_1d(a, b), w2_1d(b, c), w2_1d(a, c)
        tri_w2 = min(tri_w2, ab.distance + bc.distance - ac.distance + 1e-8)
        t1, t2 = ab.potential.duality_gap_terms(a, b)
        dual = min(dual, 1e-6 - abs(t1 + t2 - ab.squared) / max(ab.squared, 1e-300))
        u, v, w = (_random_density(rng, g) for _ in range(3))
        tri_fr = min(tri_fr, fr_distance(u, v) + fr_distance(v, w) - fr_distance(u, w) + 1e-12)
        cmp_fr = min(cmp_fr, fr_distance(u, v) - wfr_upper_bound(u, v) + 1e-12)
        cmp_w2 = min(cmp_w2, ab.distance - wfr_upper_bound(a, b) + 1e-12)
    return [_row("w2_triangle", "metric axiom", tri_w2), _row("w2_duality", "Kantorovich duality", dual),
            _row("fr_triangle", "metric axiom", tri_fr), _row("wfr_le_fr", "WFR comparison", cmp_fr),
            _row("wfr_le_w2", "WFR comparison", cmp_w2)]


# ----------------------------------------------------------------------------- convergence


def _order_rows(label, taus, errs, min_order):
    rows = []
    for k in range(len(errs) - 1):
        order = math.log(errs[k] / errs[k + 1]) / math.log(taus[k] / taus[k + 1])
        rows.append(_row(f"{label}:order[{k}]", f"error {errs[k]:.3e} -> {errs[k + 1]:.3e}", order - min_order))
    return rows


def _logistic_rows():
    F = ReactionSpec(1.0, 1.0, 2.0)
    g = GridSpec.interval(1.0, 4)
    taus, errs = (0.1, 0.05, 0.025), []
    for tau in taus:
        sc = S.SchemeConfig(ModelParams(g, reaction=F), tau, 1.0, W2StepConfig("quantile_1d", tau), record_el=False)
        traj = S.run(DensityField.constant(g, 0.5), sc)
        errs.append(abs(traj.full_steps[-1].values[0] - logistic_exact(0.5, 1.0, 1.0, 1.0)))
    return _order_rows("logistic", taus, errs, 0.8)


def bump_convergence(pairs=((0.02, 64), (0.01, 128), (0.005, 256)), t_final=0.5, fine=2048):
    """L2 errors of the chi = 0 bump run against the spectral Crank-Nicolson reference."""
    F = ReactionSpec(0.0, 1e-3, 2.0)
    finest = min(t for t, _ in pairs)
    ref_grid = GridSpec.interval(1.0, fine)
    ref = crank_nicolson_rd(bump(ref_grid).values, 1.0, fine, F, finest / 8, t_final).values
    errs = []
    for tau, N in pairs:
        g = GridSpec.interval(1.0, N)
        sc = S.SchemeConfig(ModelParams(g, reaction=F), tau, t_final, W2StepConfig("quantile_1d", tau), record_el=False)
        traj = S.run(bump(g), sc)
        diff = traj.full_steps[-1].values - cell_average_restrict(ref, fine // N)
        errs.append(float(np.sqrt(np.sum(diff**2) * g.cell_measure)))
    return [t for t, _ in pairs], errs


def el_refinement(cells=(64, 128, 256), tau=1e-3):
    F = ReactionSpec(0.0, 1e-3, 2.0)
    out = []
    for N in cells:
        g = GridSpec.interval(1.0, N)
        model = ModelParams(g, reaction=F)
        rho0 = bump(g)
        res = w2_step_detailed(rho0, model, W2StepConfig("quantile_1d", tau))
        out.append(w2_step_el_residual(res.rho, rho0, model, tau))
    return out


def _convergence_rows():
    taus, errs = bump_convergence()
    rows = _order_rows("bump_vs_reference", taus, errs, 0.8)
    el = el_refinement()
    for k in range(len(el) - 1):
        rows.append(_row(f"el_residual[{k}]", "transport step optimality",
                         el[k].max_residual - el[k + 1].max_residual))
    rows += _logistic_rows()
    return rows


_TASKS = {
    "lemmas": (_chi_star_rows, _fr_rows, _trajectory_rows),
    "metrics": (_metric_rows,),
    "convergence": (_convergence_rows,),
}


def _call(fn):
    return fn()


def run_suite(suite: str, jobs: int = 1) -> list[Row]:
    if suite not in _TASKS:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    cap = os.environ.get("KSJKO_THREADS")
    if cap:
        jobs = max(1, min(jobs, int(cap)))
    tasks = _TASKS[suite]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            parts = list(pool.map(_call, tasks))
    else:
        parts = [fn() for fn in tasks]
    return [row for part in parts for row in part]


def format_table(rows: list[Row]) -> str:
    w = max([len(r.name) for r in rows] + [5])
    p = max([len(r.property) for r in rows] + [8])
    lines = [f"{'check':<{w}}  {'property':<{p}}  {'margin':>12}  status"]
    for r in rows:
        lines.append(f"{r.name:<{w}}  {r.property:<{p}}  {r.margin:>12.4g}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
