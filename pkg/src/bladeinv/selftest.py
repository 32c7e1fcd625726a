"""Quick internal consistency checks run by ``bladeinv selftest``.

The oracle triangle samples one 1-D bimodal linear problem three ways
(closed form, grid, random-walk Metropolis) and requires them to agree;
the metric checks compare fast estimators with their definitions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from bladeinv.ensemble import ensemble_cov
from bladeinv.forward import LinearModel, Observation, TestInstance
from bladeinv.metrics import crps, crps_bruteforce, kl_gaussian
from bladeinv.oracles import gmm_posterior, grid_posterior, rwm_sample
from bladeinv.prior_step import PriorStepConfig, prior_step
from bladeinv.priors import GaussianPrior, GmmPrior, score_self_test
from bladeinv.likelihood import data_drift


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} (tol {self.tol:g})"


def _triangle_instance() -> TestInstance:
    prior = GmmPrior([0.3, 0.7], [[-3.0], [2.0]], [[[1.0]], [[0.5]]])
    return TestInstance("selftest-bimodal", 0, LinearModel([[1.0]]), prior, Observation([0.5], 2.0))


def oracle_triangle(rng: int = 0) -> list[Check]:
    inst = _triangle_instance()
    post = gmm_posterior(inst.prior, [[1.0]], [[4.0]], [0.5])
    mean = float(post.weights @ post.means[:, 0])
    second = float(post.weights @ (post.covariances[:, 0, 0] + post.means[:, 0] ** 2))
    grid = grid_posterior(inst.log_posterior, [[-10.0, 10.0]], 4000)
    g = np.random.default_rng(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        chain = rwm_sample(inst.log_posterior, inst.prior.sample(200, g), 3000, 1.5, g, burn=500).samples[:, 0]
    split = 0.0
    return [
        Check("grid vs analytic mean", abs(grid.mean()[0] - mean), 1e-3),
        Check("grid vs analytic second moment", abs(grid.cov()[0, 0] + grid.mean()[0] ** 2 - second), 1e-2),
        Check("grid vs analytic left-mode mass", abs(float(grid.probs[grid.points[:, 0] < split].sum()) - _left_mass(post, split)), 1e-3),
        Check("rwm vs analytic mean", abs(chain.mean() - mean), 0.1),
        Check("rwm vs analytic left-mode mass", abs(float(np.mean(chain < split)) - _left_mass(post, split)), 0.03),
    ]


def _left_mass(post: GmmPrior, split: float) -> float:
    from scipy.stats import norm

    return float(sum(w * norm.cdf(split, m[0], np.sqrt(c[0, 0])) for w, m, c in zip(post.weights, post.means, post.covariances)))


def metric_checks(rng: int = 0) -> list[Check]:
    g = np.random.default_rng(rng)
    worst = 0.0
    for J in (2, 3, 17, 64):
        E = g.standard_normal((J, 3))
        t = g.standard_normal(3)
        a, b = crps(E, t), crps_bruteforce(E, t)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return [
        Check("fast CRPS vs double sum (relative)", worst, 1e-10),
        Check("KL N(0,1) || N(1,1) = 0.5", abs(kl_gaussian([0.0], [[1.0]], [1.0], [[1.0]]) - 0.5), 1e-12),
        Check("KL N(0,2) || N(0,1) = (1 - ln 2)/2", abs(kl_gaussian([0.0], [[2.0]], [0.0], [[1.0]]) - 0.5 * (1 - np.log(2))), 1e-12),
    ]


def sampler_checks(rng: int = 0) -> list[Check]:
    g = np.random.default_rng(rng)
    gmm = GmmPrior(np.full(4, 0.25), [(0, 0), (0, 16), (16, 0), (16, 16)], np.stack([2.0 * np.eye(2)] * 4))
    st = score_self_test(gmm, 2.0, rng=rng)
    H = g.standard_normal((3, 4))
    Z = g.standard_normal((32, 4))
    y = g.standard_normal(3)
    d = data_drift(Z, Z @ H.T, y, 0.7)
    ref = -(Z @ H.T - y) @ H @ ensemble_cov(Z) / 0.7**2
    rho = 2.0
    X0 = np.sqrt(1 + rho**2) * g.standard_normal((4000, 2))
    X = prior_step(X0, GaussianPrior(np.zeros(2), np.eye(2)), rho, PriorStepConfig(n_steps=200, t_max=rho))
    return [
        Check("GMM score vs finite differences", st.max_deviation, 1e-5),
        Check("data drift vs explicit linear gradient (relative)", np.linalg.norm(d - ref) / np.linalg.norm(ref), 1e-10),
        Check("prior step variance error", float(np.abs(np.var(X, axis=0) - 1).max()), 0.1),
    ]


def run_all(rng: int = 0) -> list[Check]:
    return metric_checks(rng) + sampler_checks(rng) + oracle_triangle(rng)
