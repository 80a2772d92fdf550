import math

import numpy as np
import pytest

from ksjko import scheme as S
from ksjko.fields import DensityField, GridSpec
from ksjko.jko import W2StepConfig
from ksjko.model import ModelParams
from ksjko.potentials import J_tau_inverse, ReactionSpec
from ksjko.reference_solvers import logistic_exact
from ksjko.scenarios import bump, library, make_initial

LOGISTIC = ReactionSpec(1.0, 1.0, 2.0)


def _cfg(model, tau, T, **kw):
    return S.SchemeConfig(model, tau, T, W2StepConfig("quantile_1d", tau), **kw)


@pytest.fixture(scope="module")
def steady():
    g = GridSpec.interval(1.0, 32)
    model = ModelParams(g, chi=0.5, reaction=LOGISTIC)
    return S.run(DensityField.constant(g, LOGISTIC.s_star), _cfg(model, 0.01, 0.2, enforce_thresholds=True))


@pytest.fixture(scope="module")
def logistic_run():
    g = GridSpec.interval(1.0, 8)
    return S.run(DensityField.constant(g, 0.5), _cfg(ModelParams(g, reaction=LOGISTIC), 0.05, 1.0))


@pytest.fixture(scope="module")
def bump_run():
    g = GridSpec.interval(1.0, 64)
    return S.run(bump(g), _cfg(ModelParams(g, reaction=ReactionSpec(0.0, 1e-3, 2.0)), 0.005, 0.1))


def test_config_syncs_tau():
    g = GridSpec.interval(1.0, 8)
    cfg = S.SchemeConfig(ModelParams(g), 0.02, 1.0, W2StepConfig("quantile_1d", 0.5))
    assert cfg.w2cfg.tau == 0.02
    assert cfg.n_steps == 50
    with pytest.raises(ValueError):
        S.SchemeConfig(ModelParams(g), -1.0, 1.0)


def test_steady_state_is_constant(steady):
    assert len(steady.full_steps) == 21 and len(steady.half_steps) == 20
    assert steady.full_steps[0].values[0] == LOGISTIC.s_star
    for f in steady.full_steps:
        assert np.allclose(f.values, LOGISTIC.s_star, atol=1e-12)
    assert S.check_holder(steady) <= 1e-20
    assert S.weak_residual(steady, S.TestFunction("cosine")) <= 1e-8
    assert S.weak_residual(steady, S.TestFunction("parabola")) <= 1e-8
    assert S.flux_integral(steady) <= 1e-20
    assert S.check_uniform_bounds(steady).passed


def test_logistic_tracks_exact_solution(logistic_run):
    exact = logistic_exact(0.5, 1.0, 1.0, 1.0)
    assert exact == pytest.approx(0.73106, abs=1e-5)
    err = abs(logistic_run.full_steps[-1].values[0] - exact)
    assert err <= 5 * 0.05
    for t, f in zip(logistic_run.times, logistic_run.full_steps):
        assert abs(f.values[0] - logistic_exact(0.5, 1.0, 1.0, t)) <= 5 * 0.05


def test_logistic_mass_identity(logistic_run):
    r = S.weak_residual(logistic_run, S.TestFunction("one"))
    assert r <= 0.05


def test_linf_decreases_from_above_level():
    g = GridSpec.interval(1.0, 4)
    tau = 0.05
    traj = S.run(DensityField.constant(g, 3.0), _cfg(ModelParams(g, reaction=LOGISTIC), tau, 1.0))
    linf = [f.linf for f in traj.full_steps]
    assert np.all(np.diff(linf) < 0) and linf[-1] > LOGISTIC.s_star
    expect = 3.0
    for v in linf[1:]:
        expect = J_tau_inverse(expect, tau, LOGISTIC)
        assert v == pytest.approx(expect, rel=1e-12)
    assert S.check_uniform_bounds(traj).passed


def test_mass_growth_stays_below_xi():
    g = GridSpec.interval(1.0, 8)
    traj = S.run(DensityField.constant(g, 0.01), _cfg(ModelParams(g, reaction=LOGISTIC), 0.1, 3.0))
    masses = [f.mass for f in traj.full_steps]
    assert masses[-1] > 10 * masses[0]
    assert S.check_l1_bound(traj).passed


def test_per_step_pythagorean_bound(bump_run):
    chain = S.step_chain_bounds(bump_run)
    for n, d in enumerate(bump_run.diagnostics[1:]):
        assert chain[n] ** 2 == pytest.approx(2 * (d.w2_inc + d.fr_inc), rel=1e-12)
        assert chain[n] ** 2 >= d.w2_inc + d.fr_inc


def test_holder_ratio_stable_under_refinement():
    vals = []
    g = GridSpec.interval(1.0, 4)
    for tau in (0.1, 0.05):
        traj = S.run(DensityField.constant(g, 0.2), _cfg(ModelParams(g, reaction=LOGISTIC), tau, 1.0))
        vals.append(S.check_holder(traj))
    assert all(math.isfinite(v) and v > 0 for v in vals)
    assert 0.5 < vals[1] / vals[0] < 2.0


def test_bump_run_checks(bump_run):
    for chk in (S.check_dissipation(bump_run), S.check_two_solution_gap(bump_run), S.check_support(bump_run),
                S.check_uniform_bounds(bump_run), S.check_l1_bound(bump_run), S.check_energy_gaps(bump_run)):
        assert chk.passed, chk


def test_flux_bound_has_slack(bump_run):
    chk = S.check_flux_bound(bump_run)
    assert chk.passed
    assert bump_run.report.C9 > 2 * S.flux_integral(bump_run)


def test_diagnostics_csv(bump_run):
    text = S.diagnostics_csv(bump_run)
    lines = text.splitlines()
    assert lines[0] == ",".join(S.DIAGNOSTIC_COLUMNS)
    assert len(lines) == len(bump_run.full_steps) + 1


def test_deterministic_replay():
    sc = library(32)["two_bumps_chemo"]
    a = S.diagnostics_csv(S.run(sc.initial(), sc.config()))
    b = S.diagnostics_csv(S.run(sc.initial(), sc.config()))
    assert a == b


def test_threshold_violation():
    g = GridSpec.interval(1.0, 16)
    model = ModelParams(g, chi=0.5, reaction=LOGISTIC)
    rho0 = make_initial("perturbed_uniform", g, LOGISTIC, amplitude=0.1)
    with pytest.raises(S.ThresholdViolation):
        S.run(rho0, _cfg(model, 0.5, 1.0, enforce_thresholds=True))
    big = ModelParams(g, chi=2.0, reaction=LOGISTIC)
    with pytest.raises(S.ThresholdViolation):
        S.run(rho0, _cfg(big, 1e-3, 0.01, enforce_thresholds=True))


def test_solver_failure_carries_step_index():
    g = GridSpec.interval(1.0, 8)
    model = ModelParams(g, chi=10.0, reaction=ReactionSpec(0.1, 1e-3, 2.0))
    # mass 1 with cap 1/(tau chi) = 1: admissible at first, but growth makes the cap infeasible
    rho0 = DensityField.constant(g, 0.95)
    with pytest.raises(S.SolverFailure) as info:
        S.run(rho0, _cfg(model, 0.1, 5.0))
    assert info.value.step > 1


def test_blowup_sentinel():
    # the sentinel sits at blowup_factor * C1; lower it below the logistic limit
    g = GridSpec.interval(1.0, 8)
    cfg = _cfg(ModelParams(g, reaction=LOGISTIC), 0.1, 2.0, blowup_factor=0.3)
    traj = S.run(DensityField.constant(g, 0.3), cfg)
    assert traj.report.C1 == pytest.approx(2.0, rel=1e-5)
    assert traj.status == "blowup_sentinel"
    assert traj.full_steps[-1].linf > 0.3 * traj.report.C1
    assert len(traj.full_steps) < cfg.n_steps + 1
