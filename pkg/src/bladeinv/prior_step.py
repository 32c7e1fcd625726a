"""Ensemble denoising prior step (variance-exploding, ``sigma(t) = t``).

Each particle enters the reverse diffusion at the first grid time not above
the coupling strength and is integrated to ``t = 0`` with Euler steps of the
probability-flow ODE, or of the reverse SDE when ``use_sde`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from bladeinv.errors import NumericalAbort
from bladeinv.ensemble import _particles
from bladeinv.rng import INIT, PRIOR, as_streams


@dataclass(frozen=True)
class PriorStepConfig:
    n_steps: int = 50
    t_min: float = 0.002
    t_max: float | None = None  # None: the driver fills in rho_max
    use_sde: bool = False
    karras_exponent: float = 7.0

    def __post_init__(self):
        if int(self.n_steps) < 2:
            raise ValueError("n_steps must be >= 2")
        if not self.t_min > 0:
            raise ValueError("t_min must be positive")
        if self.t_max is not None and not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")

    def with_t_max(self, t_max: float) -> "PriorStepConfig":
        return replace(self, t_max=float(t_max))


def karras_grid(cfg: PriorStepConfig) -> np.ndarray:
    """``t_0 = t_max > ... > t_{N-1} = t_min`` spaced uniformly in ``t^(1/p)``, then ``t_N = 0``."""
    if cfg.t_max is None:
        raise ValueError("karras_grid needs t_max")
    p = float(cfg.karras_exponent)
    N = int(cfg.n_steps)
    a, b = cfg.t_max ** (1.0 / p), cfg.t_min ** (1.0 / p)
    t = (a + np.arange(N) / (N - 1) * (b - a)) ** p
    t[0], t[-1] = cfg.t_max, cfg.t_min
    return np.append(t, 0.0)


def entry_index(grid: np.ndarray, rho: float) -> int:
    """First index ``i < N`` with ``t_i <= rho``; ``N - 1`` if none qualifies."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    inner = np.asarray(grid)[:-1]
    hits = np.flatnonzero(inner <= rho)
    return int(hits[0]) if hits.size else inner.size - 1


def prior_step(Z, score, rho: float, cfg: PriorStepConfig, rng=None, *, trace: list | None = None, iteration: int = 0) -> np.ndarray:
    """Denoise the ensemble from noise level ``rho`` to ``0``.

    One batched score call per substep; no forward-model calls. ``rng`` is a
    :class:`~bladeinv.rng.Streams` and is only consumed in SDE mode.
    """
    X = _particles(Z).copy()
    if cfg.t_max is None:
        cfg = cfg.with_t_max(max(rho, 2 * cfg.t_min))
    grid = karras_grid(cfg)
    N = int(cfg.n_steps)
    lam = 2.0 if cfg.use_sde else 1.0
    streams = as_streams(rng) if cfg.use_sde else None
    for i in range(entry_index(grid, rho), N):
        t, t_next = grid[i], grid[i + 1]
        d = -lam * t * score.score(X, t)
        X = X + (t_next - t) * d
        if cfg.use_sde and i != N - 1:
            X = X + np.sqrt(2.0 * t * (t - t_next)) * streams.generator(PRIOR, i).standard_normal(X.shape)
        if not np.all(np.isfinite(X)):
            raise NumericalAbort("non-finite state in prior step", substep=i, iteration=iteration)
        if trace is not None:
            trace.append({"iteration": iteration, "substep": i, "t": float(t), "mean_norm_d": float(np.linalg.norm(d, axis=1).mean())})
    return X


def sample_prior(score, J: int, cfg: PriorStepConfig, rng=None) -> np.ndarray:
    """Draw ``J`` prior samples by denoising ``N(0, t_max^2 I)`` noise from ``t_max``."""
    if cfg.t_max is None:
        raise ValueError("sample_prior needs cfg.t_max")
    streams = as_streams(rng)
    Z = cfg.t_max * streams.generator(INIT).standard_normal((int(J), score.dim))
    return prior_step(Z, score, cfg.t_max, cfg, streams.child(PRIOR))
