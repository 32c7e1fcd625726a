import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from bladeinv.metrics import (
    crps,
    crps_bruteforce,
    evaluate_ensemble,
    kl_gaussian,
    kl_gaussian_samples,
    mode_occupancy,
    rank_histogram,
    rel_l2,
    sliced_wasserstein,
    ssr,
)

finite = st.floats(-100, 100, allow_nan=False)


def test_rel_l2():
    x = np.array([1.0, -2.0, 3.0])
    assert rel_l2(x, x) == 0
    assert rel_l2(2 * x, x) == pytest.approx(1.0)
    assert rel_l2([3.0, 4.0], [0.0, 4.0]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        rel_l2(x, np.zeros(3))


def test_crps_examples():
    assert crps(np.full((5, 2), 1.5), [1.5, 1.5]) == 0
    assert crps([[0.0], [2.0]], [1.0]) == pytest.approx(0.0, abs=1e-15)
    assert crps([[0.0], [2.0]], [5.0]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        crps([[1.0, 2.0]], [0.0, 0.0])


@given(st.sampled_from([2, 7, 64]), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_crps_fast_equals_double_sum(J, n, seed):
    g = np.random.default_rng(seed)
    E = g.standard_normal((J, n)) * g.uniform(0.1, 10)
    t = g.standard_normal(n) * 3
    a, b = crps(E, t), crps_bruteforce(E, t)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


@given(arrays(float, (6, 2), elements=finite), arrays(float, 2, elements=finite), finite, st.floats(0.01, 100))
def test_crps_nonnegative_translation_and_scale(E, t, shift, scale):
    c = crps(E, t)
    assert c >= -1e-12
    assert crps(E + shift, t + shift) == pytest.approx(c, rel=1e-9, abs=1e-9)
    assert crps(scale * E, scale * t) == pytest.approx(scale * c, rel=1e-9, abs=1e-9)


def test_ssr_examples():
    assert ssr([[-1.0], [1.0]], [0.0]) == pytest.approx(np.sqrt(2))
    g = np.random.default_rng(0)
    tight = 100 + 1e-3 * g.standard_normal((10, 32, 2))
    assert ssr(tight, np.zeros((10, 2))) < 1e-4
    with pytest.raises(ValueError):
        ssr([[1.0], [1.0]], [1.0])


def test_ssr_calibrated_synthetic():
    # truth and members exchangeable draws around a per-case center
    g = np.random.default_rng(1)
    cases, J, n = 200, 64, 16
    centers = 5 * g.standard_normal((cases, 1, n))
    E = centers + g.standard_normal((cases, J, n))
    T = centers[:, 0] + g.standard_normal((cases, n))
    assert abs(ssr(E, T) - 1) < 0.05


def test_rank_histogram():
    g = np.random.default_rng(2)
    E = g.standard_normal((20, 8, 3))
    h = rank_histogram(E, np.full((20, 3), -10.0), 0)
    assert h[0] == 60 and h.sum() == 60 and len(h) == 9
    cal = rank_histogram(g.standard_normal((10_000, 8, 1)), g.standard_normal((10_000, 1)), 3)
    assert cal.sum() == 10_000
    assert chisquare(cal).pvalue > 0.01
    tied = rank_histogram(np.zeros((9000, 8, 1)), np.zeros((9000, 1)), 4)
    assert chisquare(tied).pvalue > 0.01


def test_swd_examples():
    g = np.random.default_rng(5)
    P = g.standard_normal((300, 3))
    assert sliced_wasserstein(P, P, rng=0) == 0
    for p in (1.0, 2.0, 3.0):
        assert sliced_wasserstein(np.zeros((1, 1)), np.full((1, 1), -2.5), p=p, rng=1) == pytest.approx(2.5)
    mu = np.array([3.0, -1.0])
    A, B = g.standard_normal((20_000, 2)), mu + g.standard_normal((20_000, 2))
    swd2 = sliced_wasserstein(A, B, L=2000, rng=2) ** 2
    assert abs(swd2 / (mu @ mu / 2) - 1) < 0.10


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_swd_pseudometric(seed):
    g = np.random.default_rng(seed)
    P, Q, R = (g.standard_normal((64, 2)) + g.uniform(-3, 3, 2) for _ in range(3))
    d = lambda a, b: sliced_wasserstein(a, b, rng=seed)  # noqa: E731 same directions for every pair
    assert d(P, Q) == pytest.approx(d(Q, P), rel=1e-12)
    assert d(P, R) <= d(P, Q) + d(Q, R) + 1e-9
    assert d(P, P) == 0


def test_kl_examples_and_properties():
    assert kl_gaussian([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.5, abs=1e-12)
    assert kl_gaussian([0.0], [[2.0]], [0.0], [[1.0]]) == pytest.approx(0.5 * (1 - np.log(2)), abs=1e-12)
    g = np.random.default_rng(6)
    for _ in range(50):
        A = g.standard_normal((3, 3))
        S = A @ A.T + 0.1 * np.eye(3)
        mu = g.standard_normal(3)
        assert kl_gaussian(mu, S, mu, S) == pytest.approx(0.0, abs=1e-12)
        B = 0.3 * g.standard_normal((3, 3))
        assert kl_gaussian(mu + 0.1 * g.standard_normal(3), S + B @ B.T, mu, S) > 0
    with pytest.raises(ValueError):
        kl_gaussian([0.0, 0.0], np.zeros((2, 2)), [0.0, 0.0], np.eye(2))
    X = g.standard_normal((200_000, 2))
    assert kl_gaussian_samples(X, np.zeros(2), np.eye(2)) < 1e-3


def test_mode_occupancy_and_report():
    X = np.array([[0.0, 0.1], [9.0, 9.0], [10.0, 11.0], [0.5, -0.2]])
    np.testing.assert_allclose(mode_occupancy(X, [[0, 0], [10, 10], [0, 10]]), [0.5, 0.5, 0.0])
    g = np.random.default_rng(7)
    E = g.standard_normal((32, 2))
    truths = g.standard_normal((5, 2))
    rep = evaluate_ensemble(E, truths=truths, rng=0).to_dict()
    assert sum(rep["rank_histogram"]) == 2 * 5 and len(rep["rank_histogram"]) == 33
    assert all(np.isfinite(v) for k, v in rep.items() if isinstance(v, float))
