import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eagleson import models, spectral
from eagleson.mixing import dobrushin_coefficient
from eagleson.models import InhomogeneousMarkovChain
from eagleson.sums import simulate_sums
from eagleson.spectral import (empirical_cf, exact_cf_chain, exact_moments_chain,
                               operator_norm_envelope)

from oracles import cf_by_enumeration, moments_by_enumeration, random_chain_data


def test_empirical_cf_examples():
    assert empirical_cf(np.zeros(10))(np.array([0.3, 2.0])).tolist() == [1, 1]
    phi = empirical_cf(np.array([0.7]))
    assert phi(1.3) == pytest.approx(complex(math.cos(0.91), math.sin(0.91)), abs=1e-15)
    assert empirical_cf(np.array([-1.0, 1.0]))(math.pi) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ValueError):
        empirical_cf(np.array([]))


def test_empirical_cf_symmetry_and_radius(rng):
    x = rng.normal(size=1000)
    phi = empirical_cf(x)
    t = np.linspace(-3, 3, 13)
    assert np.array_equal(phi(-t), np.conj(phi(t)))
    assert phi(0.0) == 1.0
    assert phi.confidence_radius() == pytest.approx(4 / math.sqrt(1000))


def test_vector_cf():
    x = np.array([[1.0, 2.0], [0.0, -1.0]])
    phi = empirical_cf(x)
    t = np.array([[0.5, 0.25]])
    want = (np.exp(1j * 1.0) + np.exp(-0.25j)) / 2
    assert phi(t)[0] == pytest.approx(want, abs=1e-15)


def test_exact_cf_iid_example():
    c = models.iid_model([-1.0, 1.0], [0.5, 0.5])
    obs = models.state_value_observable(c)
    assert exact_cf_chain(c, obs, None, 2, math.pi / 3) == pytest.approx(0.25, abs=1e-15)


def test_exact_cf_zero_frequency_and_empty_product():
    c = InhomogeneousMarkovChain([[0.2, 0.8], [0.6, 0.4]], [0.3, 0.7])
    obs = models.state_value_observable(c)
    tilt = models.validate_tilt(models.vector_tilt([2.0, 0.4 / 0.7]), c)
    assert exact_cf_chain(c, obs, None, 5, 0.0) == 1.0
    assert exact_cf_chain(c, obs, tilt, 5, 0.0) == math.fsum(c.initial_distribution * tilt(np.arange(2)))
    assert exact_cf_chain(c, obs, tilt, 0, 1.7) == pytest.approx(tilt.integral, abs=1e-15)


def test_exact_cf_matches_enumeration():
    rng = np.random.default_rng(2)
    ts = np.linspace(-2.5, 2.5, 20)
    for states in (2, 3):
        mats, init = random_chain_data(rng, states, period=2)
        c = InhomogeneousMarkovChain(mats, init)
        table = rng.normal(size=states)
        obs = models.table_observable(table)
        weights = rng.random(states) + 0.5
        weights /= np.dot(init, weights)
        tilt = models.validate_tilt(models.vector_tilt(weights), c)
        for n in (1, 4, 8):
            got = exact_cf_chain(c, obs, tilt, n, ts)
            want = np.array([cf_by_enumeration(c, table, weights, n, t) for t in ts])
            assert np.abs(got - want).max() <= 1e-12


def test_exact_moments_examples():
    c = models.iid_model([-1.0, 1.0], [0.5, 0.5])
    obs = models.state_value_observable(c)
    assert exact_moments_chain(c, obs, None, 16) == (0.0, pytest.approx(16.0, abs=1e-12))
    zero = models.table_observable([0.0, 0.0])
    assert exact_moments_chain(c, zero, None, 9) == (0.0, 0.0)
    with pytest.raises(ValueError):
        exact_moments_chain(c, obs, None, 3, order=3)


def test_exact_moments_match_enumeration():
    rng = np.random.default_rng(6)
    for states in (2, 3):
        mats, init = random_chain_data(rng, states, period=3)
        c = InhomogeneousMarkovChain(mats, init)
        table = rng.normal(size=states)
        obs = models.table_observable(table)
        w = np.ones(states)
        n = 10 if states == 3 else 12
        mean, var = exact_moments_chain(c, obs, None, n)
        m2, v2 = moments_by_enumeration(c, table, w, n)
        assert mean == pytest.approx(m2, rel=1e-10, abs=1e-12)
        assert var == pytest.approx(v2, rel=1e-10)


def test_cf_derivatives_match_moments():
    c = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(8), 3, period=2))
    obs = models.table_observable([0.4, -1.1, 0.9])
    n = 12
    mean, var = exact_moments_chain(c, obs, None, n)
    h = 1e-5
    first = (exact_cf_chain(c, obs, None, n, h) - exact_cf_chain(c, obs, None, n, -h)) / (2 * h)
    assert first.imag == pytest.approx(mean, rel=1e-6)
    h2 = 1e-3
    second = (exact_cf_chain(c, obs, None, n, h2) + exact_cf_chain(c, obs, None, n, -h2) - 2) / h2**2
    assert -second.real == pytest.approx(var + mean**2, rel=1e-5)


def test_sum_distribution_total_mass_and_mean():
    c = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(9), 2, period=2))
    obs = models.table_observable([1.0, -2.0])
    _, value, mass = spectral.exact_sum_distribution(c, obs, 9)
    assert math.fsum(mass) == pytest.approx(1.0, abs=1e-14)
    assert math.fsum(mass * value) == pytest.approx(exact_moments_chain(c, obs, None, 9)[0], abs=1e-12)


def test_envelope_examples(flip_chain):
    obs = models.state_value_observable(flip_chain)
    indep = InhomogeneousMarkovChain([[0.3, 0.7], [0.3, 0.7]], [0.3, 0.7])
    assert np.all(operator_norm_envelope(indep, models.state_value_observable(indep), [0.0], [1, 3]).norm
                  <= 1e-15)
    ident = InhomogeneousMarkovChain(np.eye(2), [0.5, 0.5])
    env = operator_norm_envelope(ident, models.state_value_observable(ident), [0.0], [1, 2, 5])
    np.testing.assert_allclose(env.norm, 1.0, atol=1e-15)
    env = operator_norm_envelope(flip_chain, obs, [0.0], [2])
    assert env.norm[0] == pytest.approx(0.64, abs=1e-14)
    assert env.to_csv().splitlines()[0] == "t,n,norm"


def test_envelope_l1_below_dobrushin_product():
    rng = np.random.default_rng(10)
    for _ in range(40):
        mats, init = random_chain_data(rng, 3, period=3)
        c = InhomogeneousMarkovChain(mats, init)
        obs = models.table_observable(rng.normal(size=3))
        env = operator_norm_envelope(c, obs, [0.0], [1, 2, 4, 7], norm="l1")
        for n, val in zip(env.n, env.norm):
            bound = np.prod([dobrushin_coefficient(c.matrix(j)) for j in range(n)])
            assert val <= bound + 1e-14


def test_empirical_matches_exact_within_radius():
    c = InhomogeneousMarkovChain([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]], [0.3, 0.3, 0.4])
    obs = models.table_observable([-1.0, 0.5, 2.0])
    n, N = 10, 20_000
    run = simulate_sums(c, obs, [n], N, seed=4)
    phi = empirical_cf(run.sample(n))
    ts = np.linspace(0.05, 1.0, 20)
    exact = exact_cf_chain(c, obs, None, n, ts)
    hits = np.abs(phi(ts) - exact) <= phi.confidence_radius()
    assert hits.mean() >= 0.95


@given(st.floats(-5, 5), st.integers(0, 6))
def test_exact_cf_conjugate_symmetry(t, n):
    c = InhomogeneousMarkovChain([[0.2, 0.8], [0.6, 0.4]], [0.3, 0.7])
    obs = models.table_observable([0.3, -1.2])
    assert exact_cf_chain(c, obs, None, n, -t) == np.conj(exact_cf_chain(c, obs, None, n, t))
