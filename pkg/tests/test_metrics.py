import numpy as np
import pytest

from ksjko.fields import DensityField, GridSpec
from ksjko.metrics import MassMismatch, fr_distance, w2_1d, w2_entropic, wfr_chains, wfr_upper_bound


def _blocks(N=64):
    g = GridSpec.interval(2.0, N)
    x = g.centers()
    a = DensityField(g, (x < 1).astype(float))
    b = DensityField(g, (x >= 1).astype(float))
    return a, b


def _random(rng, g, total=1.0):
    v = rng.uniform(0, 1, g.shape) ** 2 + 0.01
    return DensityField(g, v * total / (v.sum() * g.cell_measure))


def test_translation_distance_is_one():
    a, b = _blocks()
    assert w2_1d(a, b).distance == pytest.approx(1.0, abs=1e-12)


def test_identical_densities():
    a, _ = _blocks()
    assert w2_1d(a, a).distance == pytest.approx(0.0, abs=1e-12)
    assert fr_distance(a, a) == 0.0
    assert wfr_upper_bound(a, a) == pytest.approx(0.0, abs=1e-12)


def test_truncated_gaussians():
    g = GridSpec.interval(10.0, 512)
    x = g.centers()
    a = DensityField(g, np.exp(-(x - 3) ** 2 / 0.5))
    b = DensityField(g, np.exp(-(x - 5) ** 2 / 0.5))
    a, b = DensityField(g, a.values / a.mass), DensityField(g, b.values / b.mass)
    assert w2_1d(a, b).distance == pytest.approx(2.0, abs=2e-2)


def test_transport_plan_properties():
    g = GridSpec.interval(1.0, 50)
    x = g.centers()
    a = DensityField(g, 1 + np.sin(3 * x) ** 2)
    b = DensityField(g, (1 + x) * a.mass / (1.5))
    plan = w2_1d(a, b).plan
    assert np.all(np.diff(plan.source_quantiles) >= 0)
    assert np.all(np.diff(plan.target_quantiles) >= 0)
    assert np.all(np.diff(plan.map_at_centers) >= -1e-12)


def test_mass_mismatch_rejected():
    g = GridSpec.interval(1.0, 8)
    with pytest.raises(MassMismatch):
        w2_1d(DensityField.constant(g, 1.0), DensityField.constant(g, 2.0))


def test_duality_identity(rng):
    g = GridSpec.interval(1.0, 40)
    for _ in range(20):
        a, b = _random(rng, g), _random(rng, g)
        res = w2_1d(a, b)
        t1, t2 = res.potential.duality_gap_terms(a, b)
        assert t1 + t2 == pytest.approx(res.squared, rel=1e-6)


def test_entropic_translation():
    g = GridSpec.interval(2.0, 256)
    x = g.centers()
    a = DensityField(g, (x < 1).astype(float))
    b = DensityField(g, (x >= 1).astype(float))
    assert abs(w2_entropic(a, b, 1e-3) ** 2 - 1.0) <= 0.05


def test_entropic_symmetry_and_diagonal():
    g = GridSpec.interval(1.0, 32)
    x = g.centers()
    a = DensityField(g, 1 + x)
    b = DensityField(g, (2 - x))
    assert w2_entropic(a, b, 1e-3) == pytest.approx(w2_entropic(b, a, 1e-3), rel=1e-8)
    small = w2_entropic(a, a, 2e-3) ** 2
    assert small <= 2e-3
    assert w2_entropic(a, a, 1e-3) ** 2 < small


def test_fr_constant_fields():
    g = GridSpec.interval(1.0, 10)
    assert fr_distance(DensityField.constant(g, 1.0), DensityField.constant(g, 4.0)) == pytest.approx(2.0)


def test_wfr_chains_constant_fields():
    g = GridSpec.interval(1.0, 10)
    ch = wfr_chains(DensityField.constant(g, 1.0), DensityField.constant(g, 4.0))
    assert ch["fr"] == pytest.approx(2.0)
    assert ch["w2_then_fr"] == pytest.approx(np.sqrt(8.0))
    assert min(ch.values()) <= 2.0 + 1e-12


def test_wfr_translated_blocks():
    a, b = _blocks()
    assert wfr_upper_bound(a, b) <= 1.0 + 1e-12


def test_random_triples(rng):
    g = GridSpec.interval(1.0, 30)
    for _ in range(200):
        a, b, c = (_random(rng, g) for _ in range(3))
        assert w2_1d(a, c).distance <= w2_1d(a, b).distance + w2_1d(b, c).distance + 1e-8
        u, v, w = (_random(rng, g, rng.uniform(0.5, 2)) for _ in range(3))
        assert fr_distance(u, w) <= fr_distance(u, v) + fr_distance(v, w) + 1e-12
        assert wfr_upper_bound(u, v) <= fr_distance(u, v) + 1e-12
        assert wfr_upper_bound(a, b) <= w2_1d(a, b).distance + 1e-12
