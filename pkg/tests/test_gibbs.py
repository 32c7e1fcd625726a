import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bladeinv.errors import NumericalAbort
from bladeinv.forward import ForwardModel, LinearModel, Observation, make_test_instance
from bladeinv.gibbs import EksConfig, GibbsConfig, initialize, rho_schedule, run_blade, run_eks
from bladeinv.likelihood import LikelihoodConfig
from bladeinv.metrics import sliced_wasserstein
from bladeinv.prior_step import PriorStepConfig, sample_prior
from bladeinv.priors import GaussianPrior


def test_schedule_examples():
    np.testing.assert_allclose(rho_schedule("linear", 3, 4.0, 0.1), [4.0, 2.05, 0.1])
    np.testing.assert_allclose(rho_schedule("concave", 3, 4.0, 0.0), [4.0, 3.0, 0.0])
    e = rho_schedule("edm", 7, 4.8, 0.08)
    assert e[0] == 4.8 and e[-1] == 0.08
    np.testing.assert_array_equal(rho_schedule("linear", 1, 4.8, 0.08), [4.8])
    with pytest.raises(ValueError):
        rho_schedule("cosine", 3, 4.0, 0.1)
    with pytest.raises(ValueError):
        rho_schedule("linear", 0, 4.0, 0.1)


@given(st.sampled_from(["linear", "edm", "concave"]), st.integers(2, 60), st.floats(0.5, 50), st.floats(0.001, 0.49))
def test_schedules_exact_endpoints_and_strictly_decreasing(name, K, rmax, rmin):
    r = rho_schedule(name, K, rmax, rmin)
    assert r[0] == rmax and r[-1] == rmin and len(r) == K
    assert np.all(np.diff(r) < 0)


def test_config_validation():
    for bad in ({"K": 0}, {"rho_min": 5.0}, {"rho_min": 0.0}, {"schedule": "x"}, {"init": "x"}, {"J": 1}):
        with pytest.raises(ValueError):
            GibbsConfig(**bad)
    assert GibbsConfig().echo()["likelihood"]["mode"] == "main"


def test_initialize():
    p = GaussianPrior([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]])
    X = initialize(GibbsConfig(init="gaussian", J=10_000, rho_max=4.8), p, 0)
    assert np.all(np.abs(X.std(axis=0) / 4.8 - 1) < 0.03)
    np.testing.assert_array_equal(X, initialize(GibbsConfig(init="gaussian", J=10_000, rho_max=4.8), p, 0))
    D = initialize(GibbsConfig(init="dm", J=10_000), p, 1)
    assert np.linalg.norm(D.mean(axis=0) - p.mean) < 0.1
    # 200 Euler ODE steps from t=500; the residual is discretization bias
    assert np.linalg.norm(np.cov(D.T) - p.cov) / np.linalg.norm(p.cov) < 0.10


def small_cfg(**kw):
    base = dict(K=4, J=16, likelihood=LikelihoodConfig(n_steps=5), prior=PriorStepConfig(n_steps=10), init_steps=20)
    base.update(kw)
    return GibbsConfig(**base)


def test_eval_budget_is_exact():
    inst = make_test_instance("linear-gaussian", 3, seed=2)
    for init in ("dm", "gaussian"):
        inst.forward.reset_counter()
        rec = run_blade(inst.forward, inst.observation, inst.prior, small_cfg(init=init))
        assert rec.forward_evals == inst.forward.eval_counter == 16 * 5 * 4


def test_determinism_and_record():
    inst = make_test_instance("linear-gmm4", seed=2)
    cfg = small_cfg(seed=9, prior=PriorStepConfig(n_steps=10, use_sde=True))
    a = run_blade(inst.forward, inst.observation, inst.prior, cfg, trace=True)
    b = run_blade(inst.forward, inst.observation, inst.prior, cfg)
    np.testing.assert_array_equal(a.ensemble, b.ensemble)
    assert a.method == "blade" and len(a.rhos) == 4 and len(a.span_ranks) == 4
    assert a.span_ranks == sorted(a.span_ranks)
    assert len(a.diagnostics) == 4 * 5 and not b.diagnostics
    c = run_blade(inst.forward, inst.observation, inst.prior, dataclasses.replace(cfg, seed=10))
    assert not np.array_equal(a.ensemble, c.ensemble)


def test_dimension_checks():
    inst = make_test_instance("linear-gaussian", 3)
    with pytest.raises(ValueError, match="dimension"):
        run_blade(inst.forward, inst.observation, GaussianPrior(np.zeros(2), np.eye(2)), small_cfg())
    with pytest.raises(ValueError, match="observation"):
        run_blade(inst.forward, Observation([0.0, 1.0], 1.0), inst.prior, small_cfg())


class Blowup(ForwardModel):
    def __init__(self):
        super().__init__(1, 1)

    def _map(self, Z):
        return 1e250 * np.sign(Z) * Z**2


def test_numerical_abort_carries_iteration():
    with pytest.raises(NumericalAbort) as exc:
        with np.errstate(all="ignore"):
            run_blade(Blowup(), Observation([0.0], 1e-200), GaussianPrior([0.0], [[1.0]]), small_cfg())
    assert exc.value.iteration == 0


def test_prior_dominated_limit():
    inst = make_test_instance("linear-gaussian", 2, seed=0, sigma_y=0.5)
    cfg = GibbsConfig(K=1, J=512, likelihood=LikelihoodConfig(eff_sigma_y=1e6))
    rec = run_blade(inst.forward, inst.observation, inst.prior, cfg)
    prior_draws = sample_prior(inst.prior, 4096, PriorStepConfig(n_steps=200, t_max=500.0), 11)
    post_draws = inst.analytic_posterior().sample(4096, 12)
    assert sliced_wasserstein(rec.ensemble, prior_draws, rng=0) < sliced_wasserstein(rec.ensemble, post_draws, rng=0)


def test_eks_matches_gaussian_posterior():
    inst = make_test_instance("linear-gaussian", 2, seed=0, sigma_y=1.5)
    post = inst.analytic_posterior()
    rec = run_eks(inst.forward, inst.observation, inst.prior, EksConfig(J=512, seed=1))
    m, S = post.means[0], post.covariances[0]
    assert np.linalg.norm(rec.ensemble.mean(axis=0) - m) / np.linalg.norm(m) < 0.05
    assert np.linalg.norm(np.cov(rec.ensemble.T) - S) / np.linalg.norm(S) < 0.10
    assert rec.forward_evals == 512 * 2000


def test_eks_pure_prior_limit():
    p = GaussianPrior([2.0, -1.0], [[3.0, 1.0], [1.0, 2.0]])
    fm = LinearModel(np.zeros((1, 2)))
    # a small cap keeps the Euler variance inflation 1/(1 - cap/2) near 1
    cfg = EksConfig(J=512, seed=2, stepping=LikelihoodConfig(n_steps=800, gamma=1e6, resample=False, step_cap=0.05))
    rec = run_eks(fm, Observation([0.0], 1.0), p, cfg, init=np.random.default_rng(0).standard_normal((512, 2)))
    assert np.linalg.norm(rec.ensemble.mean(axis=0) - p.mean) < 0.3
    assert np.linalg.norm(np.cov(rec.ensemble.T) - p.cov) / np.linalg.norm(p.cov) < 0.15


def test_eks_requires_gaussian_prior():
    inst = make_test_instance("linear-gmm4")
    with pytest.raises(TypeError):
        run_eks(inst.forward, inst.observation, inst.prior, EksConfig(J=8))
    with pytest.raises(ValueError):
        EksConfig(J=1)
