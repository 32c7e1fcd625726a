"""Derivative-free ensemble likelihood step.

Each particle ``z_j`` targets its own tethered likelihood
``exp(-f(z; y) - ||z - x_j||^2 / (2 rho^2))``. The gradient of ``f`` is
replaced by its ensemble-statistical linearization, preconditioned by the
ensemble covariance so no pseudo-inverse is ever formed::

    d1_j = -(1/sig^2) (1/J) sum_k <G_k - Gbar, G_j - y> (z_k - zbar)
    d2_j = -(1/rho^2) C (z_j - x_j) [+ (n+1)/J (z_j - zbar)  in main mode]
    z_j <- z_j + eta (d1_j + d2_j) + sqrt(2 eta C) xi_j,  eta = gamma / ||d1 + d2||_F^2
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from bladeinv.ensemble import EnsembleSqrt, _particles, apply_sqrt_noise, ensemble_cov
from bladeinv.errors import NumericalAbort
from bladeinv.forward import ForwardModel, Observation
from bladeinv.rng import LIKELIHOOD, RESAMPLE, Streams, as_streams

MODES = ("main", "diag")


class EnsembleCollapseWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LikelihoodConfig:
    mode: str = "main"
    gamma: float = 3000.0
    eff_sigma_y: float | None = None  # None: use the observation's sigma_y
    n_steps: int = 50
    resample: bool = True
    resample_variance_form: bool = False
    step_cap: float | None = 0.5  # None: pure gamma / ||drift||^2 stepping

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if self.eff_sigma_y is not None and not self.eff_sigma_y > 0:
            raise ValueError("eff_sigma_y must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")
        if self.step_cap is not None and not self.step_cap > 0:
            raise ValueError("step_cap must be positive or None")


def data_drift(Z, Gz: np.ndarray, y, eff_sigma_y: float) -> np.ndarray:
    """Linearized data-misfit drift, one row per particle.

    Equals ``-(1/sig^2) C A^T (G(z_j) - y)`` for the least-squares linear
    surrogate ``A`` of ``G`` over the ensemble, without forming ``A``.
    """
    Z = _particles(Z)
    J = Z.shape[0]
    Gz = np.asarray(Gz, dtype=float).reshape(J, -1)
    Zd = Z - Z.mean(axis=0)
    Gd = Gz - Gz.mean(axis=0)
    W = (Gz - np.asarray(y, dtype=float)) @ Gd.T  # W[j, k] = <G_j - y, G_k - Gbar>
    return -(W @ Zd) / (J * eff_sigma_y**2)


def coupling_drift(Z, X_anchor, rho: float, mode: str = "main", C: np.ndarray | None = None) -> np.ndarray:
    """Attractive tether toward each particle's anchor, plus the finite-ensemble
    correction ``(n+1)/J (z_j - zbar)`` in ``main`` mode."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    Z = _particles(Z)
    X = _particles(X_anchor)
    J, n = Z.shape
    if C is None:
        C = ensemble_cov(Z)
    d2 = -((Z - X) @ C) / rho**2
    if mode == "main":
        d2 = d2 + (n + 1) / J * (Z - Z.mean(axis=0))
    elif mode != "diag":
        raise ValueError(f"unknown mode {mode!r}")
    return d2


def resample_std(Z, rho: float, variance_form: bool = False) -> float:
    Z = _particles(Z)
    n = Z.shape[1]
    level = np.trace(ensemble_cov(Z)) / n
    if variance_form:
        return float(np.sqrt(max(0.0, rho**2 - level)))
    return float(max(0.0, rho - level))


def resample(X, rho: float, rng, variance_form: bool = False) -> np.ndarray:
    """Add isotropic noise of std ``max(0, rho - Tr(C)/n)`` to every particle.

    ``variance_form`` uses ``sqrt(max(0, rho^2 - Tr(C)/n))`` instead.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    X = _particles(X)
    s = resample_std(X, rho, variance_form)
    if s == 0.0:
        return X.copy()
    if isinstance(rng, Streams):
        rng = rng.generator()
    return X + s * rng.standard_normal(X.shape)


def stiffness(Gz: np.ndarray, C: np.ndarray, eff_sigma_y: float, rho: float) -> float:
    """Upper bound on the fastest linear rate of the preconditioned drift.

    The data part has rate ``||G - Gbar||_2^2 / (J sig^2)`` (the top eigenvalue of
    ``C A^T A / sig^2`` on the ensemble span), the tether ``lambda_max(C) / rho^2``.
    Both come from forward evaluations and particle positions only.
    """
    J = Gz.shape[0]
    Gd = Gz - Gz.mean(axis=0)
    data = np.linalg.norm(Gd, 2) ** 2 / (J * eff_sigma_y**2) if Gd.size else 0.0
    tether = np.linalg.eigvalsh(C)[-1] / rho**2
    return float(data + tether) or np.inf


def likelihood_step(
    X,
    fm: ForwardModel,
    obs: Observation,
    rho: float,
    cfg: LikelihoodConfig,
    rng=None,
    *,
    trace: list | None = None,
    iteration: int = 0,
    start=None,
) -> np.ndarray:
    """Run ``cfg.n_steps`` Euler-Maruyama substeps from ``X``; returns ``Z_N``.

    ``rng`` is a :class:`~bladeinv.rng.Streams` (or a seed). Substep ``i``
    noise comes from stream ``(LIKELIHOOD, i)`` below it, and resampling from
    ``(RESAMPLE,)``. Exactly ``J`` forward evaluations happen per substep.

    ``start`` replaces the (resampled) anchors as the initial state, which lets
    a long chain with fixed anchors be run in chunks.
    """
    streams = as_streams(rng)
    X = _particles(X).copy()
    J, n = X.shape
    if start is not None:
        Z = _particles(start).copy()
        if Z.shape != X.shape:
            raise ValueError(f"start has shape {Z.shape}, anchors {X.shape}")
    elif cfg.resample:
        Z = resample(X, rho, streams.child(RESAMPLE), cfg.resample_variance_form)
    else:
        Z = X.copy()
    sig = obs.sigma_y if cfg.eff_sigma_y is None else cfg.eff_sigma_y
    collapsed = False
    for i in range(int(cfg.n_steps)):
        Gz = fm.evaluate(Z)
        zbar = Z.mean(axis=0)
        Zd = Z - zbar
        C = Zd.T @ Zd / J
        d1 = data_drift(Z, Gz, obs.y, sig)
        d2 = coupling_drift(Z, X, rho, cfg.mode, C)
        drift = d1 + d2
        if not np.all(np.isfinite(drift)):
            raise NumericalAbort("non-finite likelihood drift", substep=i, iteration=iteration)
        norm2 = float(np.sum(drift**2))
        if norm2 == 0.0 or cfg.gamma == 0.0:
            if not np.any(Zd):
                collapsed = True
            if trace is not None:
                trace.append(_trace_row(iteration, i, 0.0, d1, d2, C))
            continue
        eta = cfg.gamma / norm2
        if cfg.step_cap is not None:
            eta = min(eta, cfg.step_cap / stiffness(Gz, C, sig, rho))
        g = streams.generator(LIKELIHOOD, i)
        if cfg.mode == "main":
            noise = apply_sqrt_noise(EnsembleSqrt(Zd.T / np.sqrt(J)), 2.0 * eta, g)
        else:
            std = np.sqrt(np.diag(C))
            noise = np.sqrt(2.0 * eta) * std * g.standard_normal((J, n))
        Z = Z + eta * drift + noise
        if not np.all(np.isfinite(Z)):
            raise NumericalAbort("non-finite particle state", substep=i, iteration=iteration)
        if trace is not None:
            trace.append(_trace_row(iteration, i, eta, d1, d2, C))
    if collapsed:
        warnings.warn(
            f"ensemble collapsed to a point during likelihood step (iteration {iteration}); "
            "covariance-preconditioned dynamics cannot move it",
            EnsembleCollapseWarning,
            stacklevel=2,
        )
    return Z


def _trace_row(iteration, substep, eta, d1, d2, C) -> dict:
    return {
        "iteration": iteration,
        "substep": substep,
        "eta": eta,
        "norm_d1": float(np.linalg.norm(d1)),
        "norm_d2": float(np.linalg.norm(d2)),
        "trace_C": float(np.trace(C)),
    }
