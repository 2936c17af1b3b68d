import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowsplit.inversion import ExpTerms, group_poles, hypoexponential_cdf_terms, residue_terms, talbot
from oracles import erlang_cdf, phase_type_cdf

T = np.linspace(0.0, 12.0, 61)


def test_group_poles_merges_relative_neighbours():
    g = group_poles([-1.0, -1.0 - 1e-12, -2.0, -3.0 + 1e-13, -3.0])
    assert sorted(m for _, m in g) == [1, 2, 2]
    assert group_poles([]) == []


def test_group_poles_keeps_distinct():
    g = group_poles([-1.0, -1.0 - 1e-6])
    assert [m for _, m in g] == [1, 1]


@pytest.mark.parametrize("rates", [[2.0, 1.0], [1.0, 1.0], [1.0, 1.0, 1.0], [0.5, 2.0, 2.0, 4.0],
                                   [3.0, 3.0 * (1 + 1e-12)]])
def test_hypoexponential_matches_phase_type(rates):
    F = hypoexponential_cdf_terms(rates)
    assert np.max(np.abs(F(T) - phase_type_cdf(rates, T))) < 1e-10


def test_two_queue_coefficients():
    F = hypoexponential_cdf_terms([2.0, 1.0])
    # 1 + e^{-2t} - 2 e^{-t}
    got = {(round(float(r.real), 9), int(p)): c.real for c, r, p in zip(F.coef, F.rate, F.power)}
    assert got[(0.0, 0)] == pytest.approx(1.0)
    assert got[(2.0, 0)] == pytest.approx(1.0)
    assert got[(1.0, 0)] == pytest.approx(-2.0)


@given(st.integers(1, 6), st.floats(0.1, 10.0))
def test_erlang(n, rate):
    F = hypoexponential_cdf_terms([rate] * n)
    t = np.linspace(0.01, 10.0 / rate * n, 25)
    assert np.max(np.abs(F(t) - erlang_cdf(n, rate, t))) < 1e-9


def test_expterms_zero_for_nonpositive_time():
    F = hypoexponential_cdf_terms([1.0])
    assert F(0.0) == 0.0 and F(-1.0) == 0.0
    assert np.all(F(np.array([-1.0, 0.0])) == 0.0)


def test_residue_terms_complex_pair():
    # 1 / (s^2 + 2s + 5) -> e^{-t} sin(2t) / 2
    poles = [(complex(-1, 2), 1), (complex(-1, -2), 1)]
    f = residue_terms(np.array([1.0]), poles)
    t = np.linspace(0.1, 5, 20)
    assert np.allclose(f(t), np.exp(-t) * np.sin(2 * t) / 2, atol=1e-12)


def test_talbot_exponential_cdf():
    F = lambda s: 1.0 / (s * (s + 1.0))
    t = np.array([0.0, 0.1, 1.0, 3.0, 10.0])
    assert np.allclose(talbot(F, t), np.where(t > 0, 1 - np.exp(-t), 0.0), atol=1e-9)


def test_talbot_erlang3():
    F = lambda s: 8.0 / (s * (s + 2.0) ** 3)
    t = np.linspace(0.05, 6, 30)
    assert np.max(np.abs(talbot(F, t) - erlang_cdf(3, 2.0, t))) < 1e-8


def test_slowest_rate_and_coef():
    F = hypoexponential_cdf_terms([0.5, 3.0])
    assert F.slowest_rate() == pytest.approx(0.5)
    assert F.max_abs_coef == pytest.approx(1.2)
    assert ExpTerms(np.zeros(0, complex), np.zeros(0, complex), np.zeros(0)).slowest_rate() == np.inf
