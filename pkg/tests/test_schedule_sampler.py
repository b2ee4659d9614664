import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from reversion.errors import InvalidAlpha, InvalidT, OutOfRange
from reversion.schedule_sampler import Mode, build_distribution, density, sample

_t, _T, _a = sp.symbols("t T alpha", positive=True)
_f = (1 - _a * sp.cos(sp.pi * _t / _T)) / _T


def test_symbolic_tail_and_mean():
    # oracle for the two derived constants used below
    tail = sp.simplify(sp.integrate(_f, (_t, _T / 2, _T)))
    mean = sp.simplify(sp.integrate(_t * _f, (_t, 0, _T)) / _T)
    assert sp.simplify(tail - (sp.Rational(1, 2) + _a / sp.pi)) == 0
    assert sp.simplify(mean - (sp.Rational(1, 2) + 2 * _a / sp.pi**2)) == 0
    assert sp.simplify(sp.integrate(_f, (_t, 0, _T))) == 1


def test_density_examples():
    assert density(0, 1000, 0.5) == pytest.approx(0.0005, abs=1e-15)
    assert density(1000, 1000, 0.5) == pytest.approx(0.0015, abs=1e-15)
    for T, a in [(10, 0.3), (1000, 0.9), (7.5, 1.0)]:
        assert density(T / 2, T, a) == pytest.approx(1 / T, abs=1e-15)
    with pytest.raises(OutOfRange):
        density(1001, 1000, 0.5)


def test_density_integrates_to_one():
    panels = 100_000
    T = 1000.0
    h = T / panels
    mids = (np.arange(panels) + 0.5) * h
    total = h * np.sum(1 - 0.5 * np.cos(np.pi * mids / T)) / T
    assert total == pytest.approx(1.0, abs=1e-6)
    assert h * sum(density(float(m), T, 0.5) for m in mids) == pytest.approx(1.0, abs=1e-6)


def test_tail_mass_importance_and_uniform():
    imp = build_distribution(1000, 0.5)
    assert imp.tail_mass(500) == pytest.approx(0.5 + 0.5 / math.pi, abs=2e-3)
    uni = build_distribution(1000, mode=Mode.UNIFORM)
    assert uni.tail_mass(500) == 0.5


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_invalid_alpha(alpha):
    with pytest.raises(InvalidAlpha):
        build_distribution(1000, alpha)


@pytest.mark.parametrize("T", [0, 1, 2.5])
def test_invalid_T(T):
    with pytest.raises(InvalidT):
        build_distribution(T, 0.5)


def test_uniform_bins_law_of_large_numbers():
    draws = sample(build_distribution(4, mode="uniform"), np.random.default_rng(0), 1_000_000)
    freq = np.bincount(draws, minlength=5)[1:] / draws.size
    np.testing.assert_allclose(freq, 0.25, atol=0.005)


def test_importance_empirical_mean():
    draws = sample(build_distribution(1000, 0.5), np.random.default_rng(1), 1_000_000)
    assert draws.min() >= 1 and draws.max() <= 1000
    assert np.mean(draws / 1000) == pytest.approx(0.5 + 1 / math.pi**2, abs=0.005)


def test_sampling_is_deterministic():
    d = build_distribution(50, 0.7)
    a = sample(d, np.random.default_rng(9), 500)
    b = sample(d, np.random.default_rng(9), 500)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 2000), st.floats(0.01, 1.0))
def test_probabilities_monotone_and_normalized(T, alpha):
    d = build_distribution(T, alpha)
    assert np.all(np.diff(d.probabilities) >= 0)
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.cdf[-1] == 1.0


@pytest.mark.parametrize("T,alpha", [(10, 0.5), (50, 0.2), (100, 1.0)])
def test_histogram_within_four_sigma(T, alpha):
    d = build_distribution(T, alpha)
    n = 200_000
    counts = np.bincount(sample(d, np.random.default_rng(T), n), minlength=T + 1)[1:]
    expected = n * d.probabilities
    sigma = np.sqrt(n * d.probabilities * (1 - d.probabilities))
    assert np.all(np.abs(counts - expected) <= 4 * sigma)
