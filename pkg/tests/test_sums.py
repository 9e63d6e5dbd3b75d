import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eagleson import mixing, models, spectral, sums
from eagleson.errors import InvalidPairingError
from eagleson.models import InhomogeneousMarkovChain, SequentialExpandingMap, sample_trajectories
from eagleson.sums import (PartialSumSample, center_and_normalize, centering_gap_certificate,
                           empirical_gap, optimal_level, partial_sums, simulate_sums,
                           variance_gap_certificate)

from oracles import grid_minimum, random_chain_data


def test_zero_observable_gives_zero_sums():
    m = SequentialExpandingMap((2,))
    batch = sample_trajectories(m, 8, 50, seed=1)
    zero = models.trig_observable([1], [0.0])
    out = partial_sums(batch, zero, [0, 3, 8])
    assert all(np.all(out[n].values == 0) for n in out)


def test_first_sum_is_first_value():
    m = SequentialExpandingMap((3,))
    batch = sample_trajectories(m, 4, 20, seed=2)
    g = models.cosine_observable()
    s1 = partial_sums(batch, g, [1])[1].scalar()
    assert np.array_equal(s1, g(0, batch.values[:, 0])[:, 0])


def test_direct_sum_example():
    chain = models.iid_model([-1.0, 1.0], [0.5, 0.5])
    batch = models.TrajectoryBatch(np.array([[1, 1, 0, 1]]), "mu", 0, chain)
    obs = models.state_value_observable(chain)
    assert partial_sums(batch, obs, [4])[4].scalar()[0] == 2.0
    with pytest.raises(IndexError):
        partial_sums(batch, obs, [5])


def test_prefix_consistency():
    c = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(3), 3, period=2))
    obs = models.table_observable([[0.5, -1.0, 2.0], [1.0, 0.0, -0.5]])
    batch = sample_trajectories(c, 30, 200, seed=4)
    out = partial_sums(batch, obs, range(30))
    for n in range(29):
        step = obs(n, batch.values[:, n])
        assert np.array_equal(out[n + 1].values, out[n].values + step)


@pytest.mark.parametrize("kind", ["map", "chain"])
def test_streamed_sums_match_materialised(kind):
    if kind == "map":
        model = SequentialExpandingMap((2, 3, 5))
        obs = models.trig_observable([1, 3], [0.7, -0.2], [0.1, 0.4])
        tilt = models.validate_tilt(models.cosine_tilt(0.5), model)
    else:
        model = InhomogeneousMarkovChain(*random_chain_data(np.random.default_rng(5), 3, period=3))
        obs = models.table_observable([[0.5, -1.0, 2.0], [1.0, 0.0, -0.5]])
        tilt = models.validate_tilt(models.vector_tilt([1.5, 0.5, 1.0] / np.dot(
            model.initial_distribution, [1.5, 0.5, 1.0])), model)
    for measure in (models.MU, models.NU):
        t = tilt if measure == models.NU else None
        batch = sample_trajectories(model, 700, 600, seed=9, measure=measure, tilt=t)
        run = simulate_sums(model, obs, [0, 1, 5, 300, 700], 600, seed=9, measure=measure, tilt=t)
        direct = partial_sums(batch, obs, [0, 1, 5, 300, 700])
        for n in (0, 1, 5, 300, 700):
            np.testing.assert_allclose(run.sample(n).values, direct[n].values, rtol=0, atol=1e-10)
        assert np.array_equal(run.initial, batch.initial)


def test_generic_observable_route():
    model = SequentialExpandingMap((2, 3))
    plain = models.ObservableSequence(lambda j, x: np.sin(2 * np.pi * x) + 0.1 * (j % 2))
    batch = sample_trajectories(model, 1100, 300, seed=3)
    run = simulate_sums(model, plain, [1, 513, 1100], 300, seed=3)
    direct = partial_sums(batch, plain, [1, 513, 1100])
    for n in (1, 513, 1100):
        np.testing.assert_allclose(run.sample(n).values, direct[n].values, rtol=0, atol=1e-10)


def test_center_and_normalize_examples():
    s = PartialSumSample(np.array([1.0, 2.0, 6.0]), 3, "mu")
    c = center_and_normalize(s, sums.sample_mean(s), 1.0)
    assert abs(c.values.mean()) < 1e-15
    assert np.array_equal(center_and_normalize(s, 0.0, 1.0).values, s.values)
    five = PartialSumSample(np.full(4, 5.0), 3, "mu")
    assert np.all(center_and_normalize(five, 5.0, 2.0).values == 0)
    with pytest.raises(ValueError):
        center_and_normalize(s, 0.0, 0.0)


def test_gap_identity_tilt_exact():
    m = SequentialExpandingMap((2, 3))
    g = models.cosine_observable()
    tilt = models.validate_tilt(models.identity_tilt(m), m)
    a = simulate_sums(m, g, [64], 2000, 5).sample(64)
    b = simulate_sums(m, g, [64], 2000, 5, measure=models.NU, tilt=tilt).sample(64)
    est = empirical_gap(a, b)
    assert est.mean_gap == 0.0 and est.std_ratio == 1.0


def test_gap_degenerate_constants():
    a = PartialSumSample(np.full(50, 1.0), 4, "mu")
    b = PartialSumSample(np.full(50, 3.5), 4, "nu")
    est = empirical_gap(a, b)
    assert est.mean_gap == 2.5 and est.degenerate and math.isnan(est.std_ratio)
    with pytest.raises(InvalidPairingError):
        empirical_gap(a, PartialSumSample(np.ones(50), 5, "nu"))


def test_doubling_map_gap_within_certificate():
    m = SequentialExpandingMap((2,))
    g = models.cosine_observable()
    tilt = models.validate_tilt(models.cosine_tilt(0.5), m)
    n, N = 1 << 10, 100_000
    a = simulate_sums(m, g, [n], N, 17).sample(n)
    b = simulate_sums(m, g, [n], N, 17, measure=models.NU, tilt=tilt).sample(n)
    est = empirical_gap(a, b)
    delta = mixing.delta_profile_expanding(m, n)
    cert = centering_gap_certificate(delta, np.ones(n), (math.inf, math.inf, 1.0), n, norm_r=2.0)
    assert cert.total == pytest.approx(2.0 * (2 - 2.0 ** (1 - n)), rel=1e-14)
    assert est.mean_gap <= cert.total + 3 * est.mean_gap_se


def test_centering_certificate_examples():
    zero = centering_gap_certificate(np.zeros(5), np.ones(5), (2, 4, 4), 5)
    assert zero.total == 0.0 and zero.limiting_levels and np.all(np.isinf(zero.levels))
    # beta = p2/p3 = 1, K = 1 ** 2: minimise M + 1/M
    one = centering_gap_certificate(np.array([1.0]), np.array([1.0]), (2, 4, 4), 1)
    assert one.levels[0] == pytest.approx(1.0) and one.total == pytest.approx(2.0)
    with pytest.raises(ValueError):
        centering_gap_certificate(np.ones(2), np.ones(2), (2, 2, 2), 2)
    with pytest.raises(ValueError):
        centering_gap_certificate(np.array([1.0, -0.1]), np.ones(2), (2, 4, 4), 2)


def test_variance_certificate_examples():
    assert variance_gap_certificate(np.zeros(3), np.ones((3, 3)), (2, 4, 4), 3).total == 0.0
    one = variance_gap_certificate(np.array([1.0]), np.ones((1, 1)), (2, 4, 4), 1)
    assert one.total == pytest.approx(2.0)


def test_variance_certificate_callable_matches_table(rng):
    n = 12
    table = rng.random((n, n))
    delta = 0.5 ** np.arange(n)
    a = variance_gap_certificate(delta, table, (3, 3, 3), n)
    b = variance_gap_certificate(delta, lambda k, js: table[k, js], (3, 3, 3), n)
    assert a.total == b.total


@given(st.floats(1e-4, 10), st.floats(1e-4, 10), st.floats(0.05, 20), st.floats(0.1, 5), st.floats(0.1, 5))
def test_optimal_level_beats_grid(delta, K, beta, w1, w2):
    _, best = optimal_level(delta, K, beta, w1, w2)
    grid = grid_minimum(lambda M: w1 * delta * M + w2 * K * M ** (-beta), 1e-8, 1e8)
    assert best <= grid * (1 + 1e-12)


def test_certificate_bounds_exact_chain_gap():
    rng = np.random.default_rng(31)
    for _ in range(20):
        mats, init = random_chain_data(rng, 3, period=2)
        c = InhomogeneousMarkovChain(mats, init)
        vals = rng.normal(size=3)
        obs = models.table_observable(vals)
        r = rng.random(3) + 0.2
        tilt = models.validate_tilt(models.vector_tilt(r / np.dot(init, r), p=1.0), c)
        n = 15
        mu = spectral.exact_moments_chain(c, obs, None, n, order=1)
        nu = spectral.exact_moments_chain(c, obs, tilt, n, order=1)
        delta = mixing.delta_profile_dobrushin(c, n, p=1.0)
        sup = np.full(n, np.abs(vals).max())
        cert = centering_gap_certificate(delta, sup, (math.inf, math.inf, 1.0), n, norm_r=tilt.norm_value)
        assert abs(nu - mu) <= cert.total + 1e-12


def test_chain_moment_norms():
    c = InhomogeneousMarkovChain([[0.5, 0.5], [0.5, 0.5]], [0.25, 0.75])
    obs = models.table_observable([2.0, -1.0])
    norms = sums.chain_moment_norms(c, obs, 2.0, 2)
    assert norms[0] == pytest.approx(math.sqrt(0.25 * 4 + 0.75))
    assert norms[1] == pytest.approx(math.sqrt(0.5 * 4 + 0.5))
    assert sums.chain_moment_norms(c, obs, math.inf, 1)[0] == 2.0


def test_translation_integral_identity():
    s = PartialSumSample(np.array([1.0, -3.0]), 2, "mu")
    val, _ = sums.translation_integral(s, np.zeros(2), None)
    assert val == 6.0
    with pytest.raises(InvalidPairingError):
        sums.translation_integral(PartialSumSample(np.ones(2), 2, "nu"), np.zeros(2), None)
