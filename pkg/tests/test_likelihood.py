import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bladeinv.ensemble import ensemble_cov
from bladeinv.errors import NumericalAbort
from bladeinv.forward import ForwardModel, LinearModel, Observation, make_test_instance
from bladeinv.likelihood import (
    EnsembleCollapseWarning,
    LikelihoodConfig,
    coupling_drift,
    data_drift,
    likelihood_step,
    resample,
    resample_std,
)
from bladeinv.rng import Streams


def explicit_linear_drift(Z, H, y, sig):
    return -(Z @ H.T - y) @ H @ ensemble_cov(Z) / sig**2


def test_data_drift_examples():
    Z = np.array([[0.0], [2.0]])
    np.testing.assert_allclose(data_drift(Z, Z, [1.0], 1.0), [[1.0], [-1.0]])
    same = np.ones((4, 2))
    assert not np.any(data_drift(same, same @ np.ones((2, 1)), [0.3], 1.0))


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4), st.integers(2, 40), st.floats(0.1, 5.0))
def test_linearization_is_exact(seed, n, m, J, sig):
    g = np.random.default_rng(seed)
    H = g.standard_normal((m, n))
    # low-rank ensembles included: J may be below n
    Z = g.standard_normal((J, n)) * g.uniform(0.1, 10, n)
    y = g.standard_normal(m)
    got = data_drift(Z, Z @ H.T, y, sig)
    ref = explicit_linear_drift(Z, H, y, sig)
    assert np.linalg.norm(got - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300) + 1e-300


@given(st.integers(0, 10_000))
def test_data_drift_invariant_to_observation_shift(seed):
    g = np.random.default_rng(seed)
    Z = g.standard_normal((10, 3))
    Gz = np.sin(Z) @ g.standard_normal((3, 2))
    y = g.standard_normal(2)
    c = 5 * g.standard_normal(2)
    np.testing.assert_allclose(data_drift(Z, Gz + c, y + c, 0.8), data_drift(Z, Gz, y, 0.8), atol=1e-10)


def test_coupling_drift_examples(rng):
    Z = np.array([[0.0], [2.0]])
    np.testing.assert_allclose(coupling_drift(Z, Z, 1.0, "main"), [[-1.0], [1.0]])
    np.testing.assert_allclose(coupling_drift(Z, Z, 1.0, "diag"), [[0.0], [0.0]])
    W = rng.standard_normal((6, 3))
    np.testing.assert_allclose(coupling_drift(W, W, 0.5), 4 / 6 * (W - W.mean(axis=0)))
    # attractive: the tether points from z toward its anchor
    X = np.zeros((6, 3))
    d = coupling_drift(W, X, 1.0, "diag")
    assert np.all(np.sum(d * (X - W), axis=1) >= 0)
    with pytest.raises(ValueError):
        coupling_drift(W, X, 0.0)
    with pytest.raises(ValueError):
        coupling_drift(W, X, 1.0, "full")


def test_resample_examples():
    g = np.random.default_rng(0)
    Z = np.array([[0.0], [2.0], [4.0]])  # Tr(C)/n = 8/3
    np.testing.assert_array_equal(resample(Z, 1.0, g), Z)
    Z = np.zeros((10_000, 2))
    out = resample(Z, 1.0, np.random.default_rng(1))
    assert abs(out.std() - 1.0) < 0.03
    Z = np.array([[-np.sqrt(0.3)], [np.sqrt(0.3)]])
    assert resample_std(Z, 1.0) == pytest.approx(0.7)
    assert resample_std(Z, 1.0, variance_form=True) == pytest.approx(np.sqrt(0.7))
    with pytest.raises(ValueError):
        resample(Z, -1.0, g)


def test_config_validation():
    for bad in ({"mode": "full"}, {"gamma": -1.0}, {"eff_sigma_y": 0.0}, {"n_steps": 0}, {"step_cap": 0.0}):
        with pytest.raises(ValueError):
            LikelihoodConfig(**bad)


def _instance(sigma_y=1.5):
    return make_test_instance("linear-gaussian", 2, seed=0, sigma_y=sigma_y)


def test_eval_budget_and_determinism():
    inst = _instance()
    X = np.random.default_rng(0).standard_normal((16, 2)) * 3
    cfg = LikelihoodConfig(n_steps=7)
    a = likelihood_step(X, inst.forward, inst.observation, 2.0, cfg, Streams(3))
    assert inst.forward.eval_counter == 16 * 7
    b = likelihood_step(X, inst.forward, inst.observation, 2.0, cfg, Streams(3))
    np.testing.assert_array_equal(a, b)
    c = likelihood_step(X, inst.forward, inst.observation, 2.0, cfg, Streams(4))
    assert not np.array_equal(a, c)


def test_gamma_zero_only_resamples():
    inst = _instance()
    X = np.random.default_rng(0).standard_normal((16, 2)) * 0.1
    s = Streams(5)
    Z = likelihood_step(X, inst.forward, inst.observation, 2.0, LikelihoodConfig(gamma=0.0, n_steps=5), s)
    np.testing.assert_array_equal(Z, resample(X, 2.0, s.child(1)))
    assert not np.array_equal(Z, X)
    Z = likelihood_step(X, inst.forward, inst.observation, 2.0, LikelihoodConfig(gamma=0.0, resample=False), s)
    np.testing.assert_array_equal(Z, X)


def test_collapse_warns_and_leaves_ensemble(recwarn):
    inst = _instance()
    X = np.tile([1.0, 2.0], (8, 1))
    with pytest.warns(EnsembleCollapseWarning):
        Z = likelihood_step(X, inst.forward, inst.observation, 1.0, LikelihoodConfig(resample=False, n_steps=3), 0)
    np.testing.assert_array_equal(Z, X)


class Exploding(ForwardModel):
    def __init__(self):
        super().__init__(1, 1)

    def _map(self, Z):
        with np.errstate(over="ignore"):
            return np.exp(800 * Z)


def test_non_finite_is_reported():
    from bladeinv.forward import ForwardModelError

    X = np.linspace(0.5, 1.5, 8)[:, None]
    with pytest.raises(ForwardModelError):
        likelihood_step(X, Exploding(), Observation([0.0], 1.0), 1.0, LikelihoodConfig(resample=False), 0)

    class Huge(ForwardModel):
        def __init__(self):
            super().__init__(1, 1)

        def _map(self, Z):
            return 1e200 * Z

    with pytest.raises(NumericalAbort) as exc:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            likelihood_step(X, Huge(), Observation([0.0], 1e-100), 1.0, LikelihoodConfig(resample=False), 0, iteration=4)
    assert exc.value.iteration == 4 and exc.value.substep == 0


def test_diag_mode_runs_and_keeps_budget():
    inst = _instance()
    X = np.random.default_rng(1).standard_normal((32, 2)) * 4
    Z = likelihood_step(X, inst.forward, inst.observation, 2.0, LikelihoodConfig(mode="diag", n_steps=20), 0)
    assert Z.shape == X.shape and np.all(np.isfinite(Z))
    assert inst.forward.eval_counter == 32 * 20


def test_trace_rows():
    inst = _instance()
    tr = []
    X = np.random.default_rng(1).standard_normal((8, 2))
    likelihood_step(X, inst.forward, inst.observation, 2.0, LikelihoodConfig(n_steps=4), 0, trace=tr, iteration=2)
    assert [r["substep"] for r in tr] == [0, 1, 2, 3]
    assert all(r["iteration"] == 2 and r["eta"] > 0 for r in tr)


def test_start_shape_checked():
    inst = _instance()
    with pytest.raises(ValueError, match="shape"):
        likelihood_step(np.zeros((8, 2)), inst.forward, inst.observation, 1.0, LikelihoodConfig(), 0, start=np.zeros((4, 2)))


def _long_run(cfg, anchors, start, rho, chunks, seed=1, sigma_y=1.5):
    """Chain with fixed anchors run in chunks; returns pooled offsets z - x after burn-in."""
    inst = _instance(sigma_y)
    Z = start
    offs = []
    for c in range(chunks):
        Z = likelihood_step(anchors, inst.forward, inst.observation, rho, cfg, Streams(seed).child(c), start=Z)
        if c >= chunks // 5:
            offs.append(Z - anchors)
    return inst, np.concatenate(offs)


def test_uninformative_data_samples_the_tether():
    J, rho = 256, 1.5
    X = np.random.default_rng(2).standard_normal((J, 2)) * 2
    start = X + rho * np.random.default_rng(3).standard_normal((J, 2))
    # tight cap: Euler-Maruyama inflates the stationary variance by about 1 / (1 - cap / 2)
    cfg = LikelihoodConfig(gamma=100.0, eff_sigma_y=1e8, n_steps=100, resample=False, step_cap=0.05)
    _, D = _long_run(cfg, X, start, rho, 20)
    assert np.abs(D.mean(axis=0)).max() < 0.15
    target = rho**2 * np.eye(2)
    assert np.linalg.norm(np.cov(D.T, bias=True) - target) / np.linalg.norm(target) < 0.1
