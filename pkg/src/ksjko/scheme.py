"""Alternating transport/reaction splitting and trajectory-level checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import elliptic
from .fields import DensityField, ScalarField, gradient, mass
from .jko import (StepError, W2StepConfig, fr_dissipation_slack, fr_step, w2_step_detailed,
                  w2_step_el_residual)
from .metrics import fr_distance, w2_1d, w2_entropic, wfr_upper_bound
from .model import ModelParams
from .potentials import (ThresholdReport, attach_trajectory_constants, chi_star, compute_thresholds,
                         l1_step_bound)

DIAGNOSTIC_COLUMNS = ("step", "time", "mass", "linf", "E1", "E2", "w2_inc", "fr_inc",
                      "el_residual", "diss_slack_w2", "diss_slack_fr")


class ThresholdViolation(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class SchemeConfig:
    model: ModelParams
    tau: float
    T_final: float
    w2cfg: W2StepConfig = field(default_factory=W2StepConfig)
    enforce_thresholds: bool = False
    lam: float = 1.01
    blowup_factor: float = 10.0
    record_el: bool = True

    def __post_init__(self):
        if not self.tau > 0 or not self.T_final > 0:
            raise ValueError("tau and T_final must be positive")
        if self.w2cfg.tau != self.tau:
            object.__setattr__(self, "w2cfg", replace(self.w2cfg, tau=self.tau))

    @property
    def entropy(self):
        return self.model.entropy

    @property
    def reaction(self):
        return self.model.reaction

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T_final / self.tau + 1e-9))


@dataclass
class StepRecord:
    step: int
    time: float
    mass: float
    linf: float
    E1: float
    E2: float
    w2_inc: float
    fr_inc: float
    el_residual: float
    diss_slack_w2: float
    diss_slack_fr: float
    # half-step companions
    mass_half: float = float("nan")
    linf_half: float = float("nan")
    E1_half: float = float("nan")
    E2_half: float = float("nan")
    fixed_point_gap: float = 0.0

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in DIAGNOSTIC_COLUMNS)


@dataclass
class Trajectory:
    config: SchemeConfig
    report: ThresholdReport
    times: list[float] = field(default_factory=list)
    full_steps: list[DensityField] = field(default_factory=list)
    half_steps: list[DensityField] = field(default_factory=list)
    c_fields: list[ScalarField] = field(default_factory=list)
    diagnostics: list[StepRecord] = field(default_factory=list)
    status: str = "completed"
    K3: float | None = None

    @property
    def tau(self) -> float:
        return self.config.tau

    @property
    def model(self) -> ModelParams:
        return self.config.model


def _w2sq(a: DensityField, b: DensityField) -> float:
    if a.grid.dim == 1:
        return w2_1d(a, b).squared
    h = min(a.grid.cell_width)
    return w2_entropic(a, b, 1e-2 * h * h) ** 2


def thresholds_for(rho0: DensityField, cfg: SchemeConfig) -> ThresholdReport:
    m = cfg.model
    F = m.reaction
    M_star = None
    if m.chi * cfg.lam >= chi_star(rho0.linf, F):
        # outside the admissible regime: keep a report so the sentinel level is defined
        M_star = max(F.beta * rho0.linf ** (F.r - 1) - F.alpha, 1e-6)
    return compute_thresholds(F, rho0.linf, m.chi, cfg.lam, rho0_l1=mass(rho0),
                              omega=m.grid.measure, dim=m.grid.dim, U=m.entropy, M_star=M_star)


def check_step_size(rho0: DensityField, cfg: SchemeConfig, report: ThresholdReport | None = None) -> ThresholdReport:
    """Raise ThresholdViolation unless tau is below every admissible bound."""
    report = report or thresholds_for(rho0, cfg)
    m = cfg.model
    if m.chi * cfg.lam >= report.chi_star:
        raise ThresholdViolation(f"lambda*chi = {m.chi * cfg.lam} is not below chi_star = {report.chi_star}")
    if not cfg.tau < report.tau_max:
        raise ThresholdViolation(
            f"tau = {cfg.tau} must be below min(tau_hat, tau_tilde, tau_**) = {report.tau_max} "
            f"(tau_hat={report.tau_hat:.6g}, tau_tilde={report.tau_tilde:.6g}, tau_**={report.tau_double_star:.6g})")
    if not cfg.tau * m.chi * report.linf_level * cfg.lam < 1:
        raise ThresholdViolation("tau*chi*max(eta, ||rho0||)*lambda must be below 1")
    return report


def run(rho0: DensityField, cfg: SchemeConfig,
        on_step: Callable[[Trajectory], None] | None = None) -> Trajectory:
    """Alternate the transport and reaction steps for floor(T/tau) iterations."""
    model = cfg.model
    if rho0.grid != model.grid:
        raise ValueError("initial density must live on the model grid")
    if not mass(rho0) > 0:
        raise ValueError("initial density must have positive mass")
    report = thresholds_for(rho0, cfg)
    if cfg.enforce_thresholds:
        check_step_size(rho0, cfg, report)
    traj = Trajectory(cfg, report)
    tau = cfg.tau
    c0 = model.c_of(rho0) if model.chi else ScalarField(model.grid, np.zeros(model.grid.shape))
    traj.times.append(0.0)
    traj.full_steps.append(rho0)
    traj.c_fields.append(c0)
    E1_prev, E2_prev = model.E1(rho0, c0), model.E2(rho0)
    traj.diagnostics.append(StepRecord(0, 0.0, mass(rho0), rho0.linf, E1_prev, E2_prev, 0.0, 0.0,
                                       0.0, 0.0, 0.0))
    sentinel = cfg.blowup_factor * report.C1
    rho = rho0
    for n in range(cfg.n_steps):
        try:
            res = w2_step_detailed(rho, model, cfg.w2cfg)
            half = res.rho
            full = fr_step(half, model.reaction, tau)
        except (StepError, ValueError, FloatingPointError) as exc:
            raise SolverFailure(n + 1, exc) from exc
        c_half = model.c_of(half) if model.chi else res.c
        E1_half = model.E1(half, c_half if model.chi else None)
        E2_half = model.E2(half)
        E1_full, E2_full = model.E1(full), model.E2(full)
        w2 = _w2sq(rho, half)
        fr = fr_distance(half, full) ** 2
        el = float("nan")
        if cfg.record_el and model.grid.dim == 1:
            el = w2_step_el_residual(half, rho, model, tau).max_residual
        rec = StepRecord(
            step=n + 1, time=(n + 1) * tau, mass=mass(full), linf=full.linf, E1=E1_full, E2=E2_full,
            w2_inc=w2, fr_inc=fr, el_residual=el,
            diss_slack_w2=E1_prev - E1_half - w2 / (2 * tau),
            diss_slack_fr=fr_dissipation_slack(half, full, model.reaction, tau),
            mass_half=mass(half), linf_half=half.linf, E1_half=E1_half, E2_half=E2_half,
            fixed_point_gap=res.fixed_point_gap,
        )
        traj.times.append((n + 1) * tau)
        traj.half_steps.append(half)
        traj.full_steps.append(full)
        traj.c_fields.append(c_half)
        traj.diagnostics.append(rec)
        E1_prev, E2_prev = E1_full, E2_full
        rho = full
        if on_step is not None:
            on_step(traj)
        if max(half.linf, full.linf) > sentinel:
            traj.status = "blowup_sentinel"
            break
    return traj


# ----------------------------------------------------------------------------- constants from a run


def empirical_K3(traj: Trajectory, probes: int = 8) -> float:
    """Largest regularity ratio over the run, its step differences and fixed sign-pattern probes."""
    model = traj.model
    cfg = model.elliptic
    ratios = []
    fields = traj.full_steps + traj.half_steps
    for f in fields:
        if f.linf > 0:
            ratios.append(elliptic.regularity_ratio(f, cfg))
    for a, b in zip(traj.half_steps, traj.full_steps[1:]):
        d = ScalarField(model.grid, b.values - a.values)
        if np.abs(d.values).max() > 0:
            ratios.append(_signed_ratio(d, cfg))
    grid = model.grid
    mesh = grid.mesh()
    for k in range(probes):
        pat = np.ones(grid.shape)
        for x, L in zip(mesh, grid.lengths):
            pat = pat * np.sign(np.cos((k + 1) * np.pi * x / L) + 1e-12)
        ratios.append(_signed_ratio(ScalarField(grid, pat), cfg))
    return float(max(ratios))


def _signed_ratio(f: ScalarField, cfg) -> float:
    c = elliptic.solve(f, cfg)
    return (float(np.abs(c.values).max()) + float(elliptic.gradient_magnitude(c, cfg).max())) / float(np.abs(f.values).max())


def finalize_constants(traj: Trajectory) -> ThresholdReport:
    """Attach the run-dependent constants (empirical K3, horizon) to the threshold report."""
    if traj.K3 is None:
        traj.K3 = empirical_K3(traj)
    model = traj.model
    T = traj.times[-1] if len(traj.times) > 1 else traj.config.T_final
    attach_trajectory_constants(traj.report, model.entropy, traj.K3, T, traj.diagnostics[0].E1)
    return traj.report


# ----------------------------------------------------------------------------- checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""


def check_uniform_bounds(traj: Trajectory, report: ThresholdReport | None = None,
                         tol: float | None = None) -> CheckResult:
    """Full steps stay below max(eta, ||rho0||); half steps stay below C1."""
    report = report or traj.report
    tol = 1e-6 + traj.config.w2cfg.inner_tol if tol is None else tol
    lvl = report.linf_level
    full = max(f.linf for f in traj.full_steps)
    half = max((f.linf for f in traj.half_steps), default=0.0)
    m_full = lvl * (1 + tol) - full
    m_half = report.C1 * (1 + tol) - half
    margin = min(m_full / lvl, m_half / report.C1)
    return CheckResult("uniform_linf", margin >= 0, margin,
                       f"max full {full:.6g} <= {lvl:.6g}; max half {half:.6g} <= C1={report.C1:.6g}")


def check_l1_bound(traj: Trajectory, report: ThresholdReport | None = None, tol: float = 1e-8) -> CheckResult:
    """Every mass stays below xi and each reaction step obeys the one-step L1 recurrence."""
    report = report or traj.report
    xr = report.xi_result()
    worst = min(report.xi + tol - f.mass for f in traj.full_steps)
    rec = math.inf
    for half, full in zip(traj.half_steps, traj.full_steps[1:]):
        rec = min(rec, l1_step_bound(mass(half), traj.tau, xr) + tol - full.mass)
    margin = min(worst, rec)
    return CheckResult("l1_bound", margin >= 0, margin, f"xi={report.xi:.6g}; recurrence margin {rec:.3g}")


def check_dissipation(traj: Trajectory, rtol: float = 1e-6) -> CheckResult:
    """Both per-step minimality inequalities with slack ``rtol (1 + |E|)``."""
    worst = math.inf
    prev = traj.diagnostics[0]
    for d in traj.diagnostics[1:]:
        worst = min(worst, d.diss_slack_w2 + rtol * (1 + abs(prev.E1)))
        worst = min(worst, d.diss_slack_fr + rtol * (1 + abs(d.E2_half)))
        prev = d
    if worst is math.inf:
        worst = 0.0
    return CheckResult("dissipation", worst >= 0, worst)


def step_chain_bounds(traj: Trajectory) -> np.ndarray:
    """Per-step WFR bound ``sqrt(2 (W2^2 + FR^2))`` through the half step."""
    return np.array([math.sqrt(2 * (d.w2_inc + d.fr_inc)) for d in traj.diagnostics[1:]])


def check_holder(traj: Trajectory, pairs: int = 100, seed: int = 0) -> float:
    """Max over sampled index pairs i < j of ``WFR_ub(rho_i, rho_j)^2 / ((j - i) tau + tau)``."""
    n = len(traj.full_steps)
    if n < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    chain = np.concatenate([[0.0], np.cumsum(step_chain_bounds(traj))])
    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(all_pairs) > pairs:
        idx = rng.choice(len(all_pairs), size=pairs, replace=False)
        all_pairs = [all_pairs[k] for k in sorted(idx)]
    best = 0.0
    for i, j in all_pairs:
        a, b = traj.full_steps[i], traj.full_steps[j]
        ub = min(wfr_upper_bound(a, b), chain[j] - chain[i])
        best = max(best, ub * ub / ((j - i) * traj.tau + traj.tau))
    return best


@dataclass(frozen=True)
class TestFunction:
    """Smooth closed-form test function on [0, L] (1D)."""

    kind: str
    length: float = 1.0

    def value(self, x):
        L = self.length
        if self.kind == "one":
            return np.ones_like(x)
        if self.kind == "parabola":
            return x * (L - x)
        if self.kind == "cosine":
            return np.cos(np.pi * x / L)
        raise ValueError(f"unknown test function {self.kind!r}")

    def grad(self, x):
        L = self.length
        if self.kind == "one":
            return np.zeros_like(x)
        if self.kind == "parabola":
            return L - 2 * x
        if self.kind == "cosine":
            return -np.pi / L * np.sin(np.pi * x / L)
        raise ValueError(f"unknown test function {self.kind!r}")


def weak_residual(traj: Trajectory, phi: TestFunction, n1: int = 0, n2: int | None = None) -> float:
    """``|LHS - RHS|`` of the approximate weak form between step indices n1 < n2.

    Flux terms use the half steps, the reaction term mixes full and half steps
    through ``sqrt(rho)(sqrt(rho) + sqrt(rho_half))/2 F'(rho)``.
    """
    model = traj.model
    if model.grid.dim != 1:
        raise ValueError("weak_residual is implemented for one-dimensional runs")
    n2 = len(traj.full_steps) - 1 if n2 is None else n2
    grid = model.grid
    x = grid.centers()
    w = grid.cell_measure
    tau = traj.tau
    ph, dph = phi.value(x), phi.grad(x)
    lhs = float(np.sum((traj.full_steps[n2].values - traj.full_steps[n1].values) * ph) * w)
    rhs = 0.0
    U, F = model.entropy, model.reaction
    for n in range(n1, n2):
        half, full = traj.half_steps[n], traj.full_steps[n + 1]
        r, rh = full.values, half.values
        react = np.sqrt(r) * (np.sqrt(r) + np.sqrt(rh)) / 2 * F.dF(r)
        dpsi = gradient(ScalarField(grid, U.Psi(rh)))[0].values
        flux = -dpsi
        if model.chi:
            c = model.c_of(half)
            dc = elliptic.spectral_gradient(c, model.elliptic)[0].values
            flux = flux + model.chi * rh * dc
        rhs += tau * float(np.sum(-react * ph + flux * dph) * w)
    return abs(lhs - rhs)


def flux_integral(traj: Trajectory) -> float:
    """``sum_n tau ||grad Psi(rho_{n+1/2})||^2``."""
    model = traj.model
    total = 0.0
    for half in traj.half_steps:
        comps = gradient(ScalarField(model.grid, model.entropy.Psi(half.values)))
        total += traj.tau * float(sum(np.sum(g.values**2) for g in comps) * model.grid.cell_measure)
    return total


def check_flux_bound(traj: Trajectory) -> CheckResult:
    report = finalize_constants(traj) if traj.report.C9 is None else traj.report
    lhs = flux_integral(traj)
    return CheckResult("flux_bound", lhs <= report.C9, report.C9 - lhs, f"{lhs:.6g} <= C9={report.C9:.6g}")


def check_two_solution_gap(traj: Trajectory) -> CheckResult:
    """``||rho_half - rho_full||_inf <= tau C2`` at every step."""
    C2 = traj.report.C2
    worst = max((float(np.abs(f.values - h.values).max())
                 for h, f in zip(traj.half_steps, traj.full_steps[1:])), default=0.0)
    margin = traj.tau * C2 - worst
    return CheckResult("two_solution_gap", margin >= -1e-12, margin)


def check_energy_gaps(traj: Trajectory) -> CheckResult:
    """Per-step energy gaps against (C3 + C4) tau and C5 tau."""
    rep = traj.report if traj.report.C4 is not None else finalize_constants(traj)
    tau = traj.tau
    worst = math.inf
    for d in traj.diagnostics[1:]:
        worst = min(worst, (rep.C3 + rep.C4) * tau - (d.E1 - d.E1_half))
        worst = min(worst, rep.C5 * tau - (d.E2_half - d.E2))
    worst = 0.0 if worst is math.inf else worst
    return CheckResult("energy_gaps", worst >= -1e-12, worst)


def check_support(traj: Trajectory) -> CheckResult:
    ok = all(np.array_equal(h.values == 0, f.values == 0)
             for h, f in zip(traj.half_steps, traj.full_steps[1:]))
    return CheckResult("support_preserved", ok, 0.0)


def diagnostics_csv(traj: Trajectory) -> str:
    lines = [",".join(DIAGNOSTIC_COLUMNS)]
    for d in traj.diagnostics:
        vals = d.row()
        lines.append(",".join([str(vals[0])] + [f"{v:.17g}" for v in vals[1:]]))
    return "\n".join(lines) + "\n"
