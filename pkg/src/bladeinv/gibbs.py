"""Outer split-Gibbs loop, coupling-strength schedules, and the EKS baseline."""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from bladeinv.ensemble import SpanTracker, _particles, ensemble_cov, span_update, RANK_TOL
from bladeinv.errors import NumericalAbort
from bladeinv.forward import ForwardModel, Observation
from bladeinv.likelihood import LikelihoodConfig, data_drift, likelihood_step
from bladeinv.prior_step import PriorStepConfig, prior_step, sample_prior
from bladeinv.priors import GaussianPrior
from bladeinv.rng import EKS, INIT, LIKELIHOOD, PRIOR, Streams

SCHEDULES = ("linear", "edm", "concave")
INITS = ("gaussian", "dm")


def rho_schedule(schedule: str, K: int, rho_max: float, rho_min: float) -> np.ndarray:
    """Coupling strengths ``rho_0 = rho_max, ..., rho_{K-1} = rho_min``."""
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}; expected one of {SCHEDULES}")
    if K < 1:
        raise ValueError("K must be >= 1")
    if K == 1:
        return np.array([float(rho_max)])
    s = np.arange(K) / (K - 1)
    if schedule == "linear":
        rho = rho_max + s * (rho_min - rho_max)
    elif schedule == "edm":
        rho = (rho_max**0.25 + s * (rho_min**0.25 - rho_max**0.25)) ** 4
    else:
        rho = rho_min + (rho_max - rho_min) * (1.0 - s**2)
    rho[0], rho[-1] = rho_max, rho_min
    return rho


@dataclass(frozen=True)
class GibbsConfig:
    K: int = 25
    rho_max: float = 4.8
    rho_min: float = 0.08
    schedule: str = "linear"
    init: str = "dm"
    J: int = 512
    seed: int = 0
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    prior: PriorStepConfig = field(default_factory=PriorStepConfig)
    init_t_max: float = 500.0  # far above the prior scale so N(0, t_max^2 I) matches the noised prior
    init_steps: int = 200
    span_tol: float = RANK_TOL

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.rho_max > self.rho_min > 0:
            raise ValueError("need rho_max > rho_min > 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.J < 2:
            raise ValueError("J must be >= 2")

    def echo(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    method: str
    ensemble: np.ndarray
    rhos: np.ndarray
    forward_evals: int
    span_ranks: list[int]
    wall_clock: float
    config: dict
    diagnostics: list[dict] = field(default_factory=list)


def initialize(cfg: GibbsConfig, score, rng=None) -> np.ndarray:
    """``gaussian``: ``N(0, rho_max^2 I)``. ``dm``: denoise from ``init_t_max``."""
    streams = rng if isinstance(rng, Streams) else Streams(cfg.seed if rng is None else rng).child(INIT)
    if cfg.init == "gaussian":
        return cfg.rho_max * streams.generator().standard_normal((cfg.J, score.dim))
    pcfg = dataclasses.replace(cfg.prior, t_max=cfg.init_t_max, n_steps=cfg.init_steps)
    return sample_prior(score, cfg.J, pcfg, streams)


def run_blade(fm: ForwardModel, obs: Observation, score, cfg: GibbsConfig, *, trace: bool = False) -> RunRecord:
    """Alternate likelihood and prior steps over the annealed coupling schedule."""
    if fm.in_dim != score.dim:
        raise ValueError(f"forward model input dimension {fm.in_dim} != prior dimension {score.dim}")
    if np.size(obs.y) != fm.out_dim:
        raise ValueError(f"observation length {np.size(obs.y)} != forward output dimension {fm.out_dim}")
    t0 = time.perf_counter()
    base = Streams(cfg.seed)
    rhos = rho_schedule(cfg.schedule, cfg.K, cfg.rho_max, cfg.rho_min)
    pcfg = cfg.prior if cfg.prior.t_max is not None else cfg.prior.with_t_max(cfg.rho_max)
    evals0 = fm.eval_counter
    X = initialize(cfg, score, base.child(INIT))
    tracker = SpanTracker(score.dim)
    ranks = []
    rows: list[dict] | None = [] if trace else None
    for k, rho in enumerate(rhos):
        try:
            Z = likelihood_step(X, fm, obs, rho, cfg.likelihood, base.child(LIKELIHOOD, k), trace=rows, iteration=k)
            tracker = span_update(tracker, Z, cfg.span_tol)
            ranks.append(tracker.rank)
            X = prior_step(Z, score, rho, pcfg, base.child(PRIOR, k), iteration=k)
        except NumericalAbort as exc:
            raise exc.at_iteration(k) from exc
    return RunRecord(
        method="blade",
        ensemble=X,
        rhos=rhos,
        forward_evals=fm.eval_counter - evals0,
        span_ranks=ranks,
        wall_clock=time.perf_counter() - t0,
        config=cfg.echo(),
        diagnostics=rows or [],
    )


@dataclass(frozen=True)
class EksConfig:
    J: int = 512
    seed: int = 0
    # horizon, gamma, effective noise and step cap; mode "main" keeps the (n+1)/J correction
    stepping: LikelihoodConfig = field(default_factory=lambda: LikelihoodConfig(n_steps=2000, gamma=1e6, resample=False))

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("J must be >= 2")

    def echo(self) -> dict:
        return dataclasses.asdict(self)


def run_eks(fm: ForwardModel, obs: Observation, prior, cfg: EksConfig, *, init=None, trace: bool = False) -> RunRecord:
    """Ensemble Kalman sampler with the finite-ensemble correction.

    All particles share the potential ``f(z; y) + (z-m)^T S^-1 (z-m) / 2``;
    the prior must be Gaussian. Starts from prior draws unless ``init`` is
    given and uses the same adaptive Euler-Maruyama stepping as the
    likelihood step.
    """
    if not isinstance(prior, GaussianPrior):
        raise TypeError("run_eks needs a GaussianPrior (use GmmPrior.moment_matched() for mixtures)")
    t0 = time.perf_counter()
    streams = Streams(cfg.seed).child(EKS)
    n = prior.dim
    J = cfg.J
    st = cfg.stepping
    sig = obs.sigma_y if st.eff_sigma_y is None else st.eff_sigma_y
    Z = prior.sample(J, streams.generator(INIT)) if init is None else _particles(init).copy()
    prec = np.linalg.solve(prior.cov, np.eye(n))
    m = prior.mean
    evals0 = fm.eval_counter
    rows = [] if trace else None
    for i in range(int(st.n_steps)):
        Gz = fm.evaluate(Z)
        Zd = Z - Z.mean(axis=0)
        C = Zd.T @ Zd / J
        drift = data_drift(Z, Gz, obs.y, sig) - (Z - m) @ prec @ C
        if st.mode == "main":
            drift = drift + (n + 1) / J * Zd
        if not np.all(np.isfinite(drift)):
            raise NumericalAbort("non-finite EKS drift", substep=i)
        norm2 = float(np.sum(drift**2))
        if norm2 == 0.0 or st.gamma == 0.0:
            continue
        eta = st.gamma / norm2
        if st.step_cap is not None:
            # prior rate: top eigenvalue of C S^-1, i.e. of the tether with rho = 1 and metric S
            Gd = Gz - Gz.mean(axis=0)
            rate = np.linalg.norm(Gd, 2) ** 2 / (J * sig**2) + np.max(np.real(np.linalg.eigvals(C @ prec)))
            if rate > 0:
                eta = min(eta, st.step_cap / rate)
        xi = streams.generator(LIKELIHOOD, i).standard_normal((J, J))
        Z = Z + eta * drift + np.sqrt(2.0 * eta / J) * (xi @ Zd)
        if not np.all(np.isfinite(Z)):
            raise NumericalAbort("non-finite EKS state", substep=i)
        if rows is not None:
            rows.append({"iteration": 0, "substep": i, "eta": eta, "trace_C": float(np.trace(C))})
    return RunRecord(
        method="eks",
        ensemble=Z,
        rhos=np.array([]),
        forward_evals=fm.eval_counter - evals0,
        span_ranks=[],
        wall_clock=time.perf_counter() - t0,
        config=cfg.echo(),
        diagnostics=rows or [],
    )
