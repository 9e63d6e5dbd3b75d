import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eagleson import mixing, models
from eagleson.errors import InvalidModelError, ResourceError
from eagleson.mixing import (AlphaProfile, ApproximationProfile, MixingProfile, alpha_bruteforce,
                             alpha_upper_dobrushin, delta_from_alpha, delta_profile_expanding)
from eagleson.models import InhomogeneousMarkovChain, SequentialExpandingMap

from oracles import alpha_two_state, random_chain_data


def test_expanding_profile_examples():
    assert delta_profile_expanding((2,), 0).value(0) == 1.0
    assert delta_profile_expanding((2,), 3).value(3) == 0.125
    assert delta_profile_expanding((2, 3, 4), 3).value(3) == pytest.approx(1 / 24, rel=1e-15)
    with pytest.raises(InvalidModelError):
        delta_profile_expanding((1, 2), 3)


@given(st.lists(st.integers(2, 9), min_size=1, max_size=6), st.integers(1, 40))
def test_expanding_profile_halves(slopes, n):
    prof = delta_profile_expanding(slopes, n)
    d = prof.array(n + 1)
    assert np.all(d[1:] <= d[:-1] / 2 + 1e-300)


def test_profile_forms():
    geo = MixingProfile("geometric", "analytic", "variation", c1=2.0, rate=0.5)
    assert geo(3) == 0.25 and geo.decays()
    poly = MixingProfile("polynomial", "analytic", "variation", c1=1.0, rate=2.0)
    assert poly(0) == 1.0 and poly(4) == 1 / 16
    with pytest.raises(ValueError):
        MixingProfile("exact-array", "measured", "lp", data=[1.0, -1.0])


def test_alpha_independence_is_zero():
    c = InhomogeneousMarkovChain([[0.3, 0.7], [0.3, 0.7]], [0.4, 0.6])
    for k, n, depth in [(0, 1, 0), (1, 2, 1), (0, 3, 2)]:
        assert alpha_bruteforce(c, k, n, depth).value == 0.0
        assert alpha_upper_dobrushin(c, n) == 0.0


def test_alpha_identity_chain_quarter():
    c = InhomogeneousMarkovChain(np.eye(2), [0.5, 0.5])
    assert alpha_bruteforce(c, 0, 1, 0).value == 0.25
    assert alpha_upper_dobrushin(c, 3) == 0.25


def test_alpha_matches_enumeration_oracle(flip_chain):
    assert alpha_bruteforce(flip_chain, 0, 1, 0).value == alpha_two_state(flip_chain, 0, 1, 0)


def test_alpha_random_chains_match_oracle():
    rng = np.random.default_rng(7)
    for _ in range(15):
        c = InhomogeneousMarkovChain(*random_chain_data(rng, 2, period=2))
        k, n, depth = int(rng.integers(0, 2)), int(rng.integers(1, 4)), int(rng.integers(0, 2))
        got = alpha_bruteforce(c, k, n, depth).value
        assert got == pytest.approx(alpha_two_state(c, k, n, depth), abs=1e-15)


def test_dobrushin_examples(flip_chain):
    assert mixing.dobrushin_coefficient(flip_chain.matrix(0)) == pytest.approx(0.8, abs=1e-15)
    assert alpha_upper_dobrushin(flip_chain, 2) == pytest.approx(0.16, abs=1e-15)
    assert alpha_upper_dobrushin(flip_chain, 2) >= alpha_bruteforce(flip_chain, 0, 2, 0).value
    assert alpha_upper_dobrushin(flip_chain, 0) == 0.25


def test_alpha_cap_and_fallback():
    c = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(1), 3))
    with pytest.raises(ResourceError):
        alpha_bruteforce(c, 9, 1, 0)
    res = alpha_bruteforce(c, 3, 1, 3, allow_fallback=True)
    assert res.kind == "lower-bound" and 0 <= res.value <= 0.25
    with pytest.raises(ResourceError):
        alpha_bruteforce(c, 3, 1, 3)


def test_alpha_monotone_in_depth():
    c = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(4), 2, period=3))
    vals = [alpha_bruteforce(c, 1, 2, d).value for d in range(4)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_delta_from_alpha_examples():
    zero = delta_from_alpha(AlphaProfile(np.zeros(4), "exact"), ApproximationProfile.zero(4), 2.0)
    assert np.all(zero.array(8) == 0)
    a = AlphaProfile(np.full(3, 0.04), "exact")
    assert delta_from_alpha(a, ApproximationProfile.zero(3), 2.0).value(5) == pytest.approx(1.2)
    b = AlphaProfile(np.full(3, 0.01), "exact")
    g = ApproximationProfile(np.full(3, 0.005))
    assert delta_from_alpha(b, g, math.inf).value(4) == pytest.approx(0.07)


def test_alpha_profile_range():
    with pytest.raises(ValueError):
        AlphaProfile([0.3], "exact")


def test_transfer_operator_preserves_integral():
    breaks, values = [0.0, 0.3, 0.7, 1.0], [0.2, 1.8, 0.6, 1.0]
    y = (np.arange(4096) + 0.5) / 4096
    for K in (1, 2, 6, 35):
        Ls = mixing.transfer_piecewise_linear(breaks, values, K, y)
        brute = np.mean([np.interp((y + i) / K, breaks, values) for i in range(K)], axis=0)
        np.testing.assert_allclose(Ls, brute, rtol=0, atol=1e-13)


def test_exact_correlation_against_monte_carlo():
    m = SequentialExpandingMap((2, 3))
    breaks, values = [0.0, 0.25, 1.0], [0.2, 1.5, 0.6]
    f = lambda x: np.cos(2 * np.pi * np.asarray(x))  # noqa: E731
    s = lambda x: np.interp(x, breaks, values)  # noqa: E731
    for n in (1, 2):
        exact = mixing.correlation_exact(m, breaks, values, f, n)
        mc, se = mixing.correlation_mc(m, s, f, n, 200_000, seed=3)
        assert abs(exact - mc) <= 4 * se


def test_correlation_certificate_random():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = SequentialExpandingMap(tuple(int(k) for k in rng.integers(2, 5, size=3)))
        knots = np.sort(np.concatenate([[0.0, 1.0], rng.random(3)]))
        vals = rng.random(knots.size) + 0.1
        f = lambda x, h=int(rng.integers(1, 4)): np.sin(2 * np.pi * h * np.asarray(x))  # noqa: E731
        for n in (1, 3, 7):
            assert mixing.correlation_certificate(m, knots, vals, f, 1.0, n).holds
