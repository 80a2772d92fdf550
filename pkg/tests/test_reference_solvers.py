import math

import numpy as np
import pytest

from ksjko.reference_solvers import (brute_force_chi_star, cell_average_restrict, crank_nicolson_rd,
                                     heat_cosine_series, j_inverse_bisection, logistic_exact, rk4_reaction)


class F:
    def __init__(self, alpha, beta, r):
        self.alpha, self.beta, self.r = alpha, beta, r


def test_logistic_exact_examples():
    assert logistic_exact(2.0, 2.0, 1.0, 3.7) == pytest.approx(2.0)
    assert logistic_exact(0.5, 1.0, 1.0, 1.0) == pytest.approx(math.e / (1 + math.e), rel=1e-15)
    assert logistic_exact(0.3, 1.0, 2.0, 0.0) == pytest.approx(0.3)


def test_rk4_matches_closed_form():
    res = rk4_reaction(0.5, F(1.0, 1.0, 2.0), 1.0, 1000)
    assert res.values == pytest.approx(logistic_exact(0.5, 1.0, 1.0, 1.0), abs=1e-10)
    assert 0 < res.error_bound < 1e-10


def test_rk4_constant_at_carrying_capacity():
    s_star = (2.0 / 0.5) ** (1 / 1.5)
    assert rk4_reaction(s_star, F(2.0, 0.5, 2.5), 2.0, 100).values == pytest.approx(s_star, rel=1e-12)


@pytest.mark.parametrize("s0", [0.2, 5.0])
def test_rk4_monotone_approach(s0):
    s_star = 1.0
    vals = [rk4_reaction(s0, F(1.0, 1.0, 3.0), t, 200).values for t in np.linspace(0.1, 3, 12)]
    d = np.diff(vals)
    assert np.all(d > 0) if s0 < s_star else np.all(d < 0)
    assert all(abs(v - s_star) < abs(s0 - s_star) for v in vals)


def test_rk4_step_floor():
    with pytest.raises(ValueError):
        rk4_reaction(1.0, F(1.0, 1.0, 2.0), 1.0, 5)


def test_cn_uniform_matches_rk4():
    cn = crank_nicolson_rd(np.full(16, 0.4), 1.0, 16, F(1.0, 1.0, 2.0), 1e-4, 1.0)
    ref = rk4_reaction(0.4, F(1.0, 1.0, 2.0), 1.0, 1000).values
    assert np.allclose(cn.values, ref, atol=1e-8)


def test_cn_pure_diffusion_matches_cosine_series():
    x = (np.arange(64) + 0.5) / 64
    cn = crank_nicolson_rd(lambda x: 1 + np.cos(np.pi * x) + 0.5 * np.cos(3 * np.pi * x), 1.0, 64,
                           F(0.0, 1e-12, 2.0), 1e-4, 0.1)
    exact = heat_cosine_series([1.0, 1.0, 0.0, 0.5], 1.0, x, 0.1)
    assert np.abs(cn.values - exact).max() <= 1e-6


def test_cn_self_consistency():
    init = lambda x: 0.1 + np.exp(-(x - 0.3) ** 2 / 0.08)
    a = crank_nicolson_rd(init, 1.0, 128, F(0.0, 1e-3, 2.0), 1e-4, 0.2).values
    b = crank_nicolson_rd(init, 1.0, 128, F(0.0, 1e-3, 2.0), 5e-5, 0.2).values
    assert np.abs(a - b).max() < 1e-8


def test_restrict():
    assert np.allclose(cell_average_restrict(np.arange(8.0), 4), [1.5, 5.5])
    with pytest.raises(ValueError):
        cell_average_restrict(np.arange(6.0), 4)


def test_brute_force_chi_star_cases():
    assert brute_force_chi_star(0.0, 1.0, 3.0, 2.0).values == math.inf
    assert brute_force_chi_star(1.0, 2.0, 2.0, 1.0).values == pytest.approx(2.0, rel=1e-9)
    assert brute_force_chi_star(1.0, 1.0, 1.5, 9.0).values == pytest.approx(2 / 9, rel=1e-8)


def test_bisection_inverse_round_trip():
    s = np.linspace(0, 10, 50)
    tau, a, b, r = 0.3, 1.0, 2.0, 2.5
    y = s * (1 + 0.5 * tau * (b * s ** (r - 1) - a)) ** 2
    assert np.allclose(j_inverse_bisection(y, tau, a, b, r), s, atol=1e-12)


def test_oracles_do_not_import_solver_modules():
    import ast
    import inspect

    import ksjko.reference_solvers as ref

    tree = ast.parse(inspect.getsource(ref))
    mods = {n.module for n in ast.walk(tree) if isinstance(n, ast.ImportFrom)}
    mods |= {a.name for n in ast.walk(tree) if isinstance(n, ast.Import) for a in n.names}
    assert not any(m and (m.startswith("ksjko") or m.startswith(".")) for m in mods)
    assert all(n.level == 0 for n in ast.walk(tree) if isinstance(n, ast.ImportFrom))
