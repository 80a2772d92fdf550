import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksjko.potentials import (EntropySpec, ReactionSpec, J_tau, J_tau_inverse, ThresholdReport, c0_and_delta,
                              chi_star, chi_star_case, compute_thresholds, eta, select_Mstar, tau_star, theta, xi)
from ksjko.reference_solvers import brute_force_chi_star, j_inverse_bisection


# ---------------------------------------------------------------- entropy


def test_boltzmann_psi_at_one():
    assert EntropySpec().Psi(1.0) == pytest.approx(1.0)


def test_power_psi():
    assert EntropySpec("power", 2.0, 0.0).Psi(3.0) == pytest.approx(9.0)


@pytest.mark.parametrize("U", [EntropySpec(), EntropySpec("power", 2.0), EntropySpec("power", 3.0, 0.0)])
def test_psi_derivative_matches_s_U2(U):
    s = np.linspace(0.2, 4.0, 30)
    h = 1e-5
    fd = (U.Psi(s + h) - U.Psi(s - h)) / (2 * h)
    assert np.allclose(fd, s * U.d2U(s), rtol=1e-6, atol=1e-8)
    assert np.all(fd >= 0)


@pytest.mark.parametrize("U", [EntropySpec(), EntropySpec("power", 2.0)])
def test_entropy_hypotheses(U):
    assert U.is_convex_on_samples()
    a, b = U.zero_limit_of_sdU()
    assert abs(a - b) <= 1e-6


def test_entropy_rejects_unknown_kind():
    with pytest.raises(ValueError):
        EntropySpec("tsallis")


def test_inverse_derivative():
    U = EntropySpec()
    s = np.array([0.1, 1.0, 7.0])
    assert np.allclose(U.inv_dU(U.dU(s)), s)


# ---------------------------------------------------------------- reaction


@pytest.mark.parametrize("args", [(1, 0, 2), (1, 1, 1), (-1, 1, 2), (1, -2, 2)])
def test_reaction_validation(args):
    with pytest.raises(ValueError):
        ReactionSpec(*args)


def test_reaction_derivatives_and_carrying_capacity():
    F = ReactionSpec(2.0, 0.5, 3.0)
    s = np.linspace(0.1, 3, 20)
    assert np.allclose(F.dF(s), 0.5 * s**2 - 2.0)
    assert F.dF(F.s_star) == pytest.approx(0.0, abs=1e-12)
    assert np.all(F.d2F(s) > 0)
    h = 1e-6
    assert np.allclose((F.F(s + h) - F.F(s - h)) / (2 * h), F.dF(s), atol=1e-6)


# ---------------------------------------------------------------- eta and chi_star


def test_eta_examples():
    assert eta(3.0, ReactionSpec(1.0, 2.0, 2.0)) == pytest.approx(2.0)
    assert eta(1.5, ReactionSpec(0.5, 2.0, 2.7)) == pytest.approx(1.0)
    assert eta(2.0, ReactionSpec(1.0, 1.0, 1.5)) == pytest.approx(((1 + 2) / 1) ** 2)


def test_chi_star_closed_form_cases_from_formula():
    assert chi_star(3.0, ReactionSpec(0.0, 1.0, 3.0)) == math.inf
    assert chi_star_case(1.0, ReactionSpec(1.0, 2.0, 2.0)) == (2.0, "r=2")


@pytest.mark.parametrize("q,expected", [(9.0, 2.0 / 9.0), (1.0, 0.25)])
def test_chi_star_sublinear_cases_against_grid_search(q, expected):
    F = ReactionSpec(1.0, 1.0, 1.5)
    oracle = brute_force_chi_star(1.0, 1.0, 1.5, q).values
    assert oracle == pytest.approx(expected, rel=1e-6)
    assert chi_star(q, F) == pytest.approx(oracle, rel=1e-6)


def test_chi_star_case_labels():
    F = ReactionSpec(1.0, 1.0, 1.5)
    assert chi_star_case(9.0, F)[1] == "1<r<2, large data"
    assert chi_star_case(1.0, F)[1] == "1<r<2, small data"
    assert chi_star_case(1.0, ReactionSpec(1.0, 1.0, 2.5))[1] == "r>2"


def test_select_Mstar_examples():
    F = ReactionSpec(1.0, 1.0, 1.5)
    M = select_Mstar(9.0, F, 1.01, 0.2)
    assert M == pytest.approx(2.0)
    # f(M*) = g(M*) on the large-data branch
    assert M / eta(M, F) == pytest.approx(M / 9.0)
    assert select_Mstar(1.0, F, 1.01, 0.2) == pytest.approx(1.0)
    F2 = ReactionSpec(0.0, 1.0, 2.0)
    M2 = select_Mstar(1.5, F2, 1.01, 0.5)
    assert M2 / 1.5 > 1.01 * 0.5


def test_select_Mstar_rejects_inadmissible_chi():
    with pytest.raises(ValueError):
        select_Mstar(1.0, ReactionSpec(1.0, 1.0, 2.0), 1.01, 1.0)


# ---------------------------------------------------------------- theta and tau*


def test_theta_at_zero_and_slope():
    M, q, lam, chi = 2.0, 1.3, 1.05, 0.4
    assert float(theta(M, 0.0, q, lam, chi)) == pytest.approx(1 / q)
    h = 1e-6
    slope = (float(theta(M, h, q, lam, chi)) - float(theta(M, -h, q, lam, chi))) / (2 * h)
    assert slope == pytest.approx(M / q - lam * chi, abs=1e-6)


def test_theta_stays_above_initial_value_up_to_tau_star():
    F = ReactionSpec(1.0, 1.0, 2.0)
    q, lam, chi = 1.1, 1.01, 0.5
    M = select_Mstar(q, F, lam, chi)
    ts = tau_star(M, q, F, lam, chi)
    taus = np.linspace(0, ts, 100)
    for level in (q, eta(M, F)):
        assert np.all(theta(M, taus, level, lam, chi) >= theta(M, 0.0, level, lam, chi) - 1e-12)


# ---------------------------------------------------------------- xi and c0


def test_xi_without_growth_is_initial_mass():
    assert xi(5.0, ReactionSpec(0.0, 1.0, 2.0), 1.0).xi == pytest.approx(5.0)


def test_xi_finite_for_strong_growth_and_dominates_mass():
    r = xi(0.3, ReactionSpec(10.0, 1.0, 2.0), 1.0)
    assert math.isfinite(r.xi) and r.xi >= 0.3 and r.A > 0


def test_c0_one_dimension():
    c0, delta = c0_and_delta(1.5, 2.0, 1)
    assert delta == 1.0 and c0 == pytest.approx(1 / (2 * 2.0))


def test_c0_two_dimensions():
    # (1+x)^2 = 1 + 4x has root x = 2, which the cap 1/2 cuts off
    c0, delta = c0_and_delta(2.0, 1.0, 2)
    assert delta == pytest.approx(0.5)
    assert c0 == pytest.approx(4 / 9)
    assert c0_and_delta(2.0, 3.0, 2)[0] < c0


# ---------------------------------------------------------------- J_tau


def test_J_example():
    F = ReactionSpec(0.0, 1.0, 2.0)
    assert float(J_tau(1.0, 0.5, F)) == pytest.approx(1.5625)
    assert J_tau_inverse(1.5625, 0.5, F) == pytest.approx(1.0, abs=1e-14)
    assert float(j_inverse_bisection(1.5625, 0.5, 0.0, 1.0, 2.0)[0]) == pytest.approx(1.0, abs=1e-12)
    assert J_tau_inverse(0.0, 0.5, F) == 0.0


def test_J_inverse_rejects_large_tau():
    with pytest.raises(ValueError):
        J_tau_inverse(1.0, 0.6, ReactionSpec(1.0, 1.0, 2.0))


def test_J_round_trip_random(rng):
    F = ReactionSpec(0.7, 1.3, 2.4)
    s = rng.uniform(1e-9, 50, 1000)
    back = J_tau_inverse(J_tau(s, 0.3, F), 0.3, F)
    assert np.max(np.abs(back - s) / np.maximum(1, s)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(1e-3, 4)), st.floats(0.05, 4), st.floats(1.05, 4), st.floats(0.01, 0.98), st.floats(0, 20))
def test_J_inverse_matches_bisection(alpha, beta, r, frac, y):
    tau = min(frac / (2 * alpha), 5.0) if alpha > 0 else frac
    F = ReactionSpec(alpha, beta, r)
    got = J_tau_inverse(y, tau, F)
    ref = float(j_inverse_bisection(y, tau, alpha, beta, r)[0])
    assert got == pytest.approx(ref, rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------- report


def test_report_scenario_values():
    F = ReactionSpec(1.0, 1.0, 2.0)
    rep = compute_thresholds(F, 1.1, 0.5, 1.01)
    assert rep.C1 == pytest.approx(2 * max(rep.eta_Mstar, 1.1))
    inv = 1 / (2 * 1.01 * 0.5)
    assert rep.tau_tilde == pytest.approx(min(inv / 1.1, inv / rep.eta_Mstar))
    assert rep.tau_hat == pytest.approx(min(0.5, rep.c0 / 1.1, rep.tau_star, rep.c0 / rep.eta_Mstar,
                                            1.0 / (0.5 * rep.xi)))
    assert rep.tau_max == min(rep.tau_hat, rep.tau_tilde, rep.tau_double_star)


def test_report_json_round_trip():
    rep = compute_thresholds(ReactionSpec(1.0, 2.0, 2.0), 1.0, 1.0, 1.01)
    assert ThresholdReport.from_json(rep.to_json()) == rep
