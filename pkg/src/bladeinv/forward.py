"""Black-box forward maps and the controlled test instances.

A forward model exposes batched evaluation only. There is deliberately no
Jacobian or adjoint hook: samplers in this package see ``G`` through
``evaluate`` and nothing else.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from bladeinv.priors import GaussianPrior, GmmPrior
from bladeinv.rng import INSTANCE, Streams


class ForwardModelError(RuntimeError):
    def __init__(self, message: str, particles: np.ndarray):
        super().__init__(f"{message} (particle indices {particles.tolist()})")
        self.particles = particles


class ForwardModel:
    """Base class: subclasses implement ``_map`` on a ``J x n`` batch."""

    in_dim: int
    out_dim: int

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._lock = threading.Lock()
        self._count = 0

    @property
    def eval_counter(self) -> int:
        return self._count

    def reset_counter(self) -> None:
        with self._lock:
            self._count = 0

    def _map(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, Z) -> np.ndarray:
        Z = np.asarray(getattr(Z, "particles", Z), dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[1] != self.in_dim:
            raise ValueError(f"expected inputs of dimension {self.in_dim}, got {Z.shape[1]}")
        bad = np.flatnonzero(~np.all(np.isfinite(Z), axis=1))
        if bad.size:
            raise ForwardModelError("non-finite input", bad)
        out = np.asarray(self._map(Z), dtype=float).reshape(Z.shape[0], self.out_dim)
        with self._lock:
            self._count += Z.shape[0]
        bad = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
        if bad.size:
            raise ForwardModelError("non-finite forward output", bad)
        return out


class LinearModel(ForwardModel):
    def __init__(self, H):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        super().__init__(H.shape[1], H.shape[0])
        self.H = H

    def _map(self, Z):
        return Z @ self.H.T

    @classmethod
    def from_csv(cls, path: str | Path) -> "LinearModel":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


class QuadraticModel(ForwardModel):
    """``G(z) = ||z||^2`` (scalar output)."""

    def __init__(self, n: int):
        super().__init__(n, 1)

    def _map(self, Z):
        return np.sum(Z**2, axis=1, keepdims=True)


class AbsLinearModel(ForwardModel):
    """``G(z) = |H z|`` elementwise."""

    def __init__(self, H):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        super().__init__(H.shape[1], H.shape[0])
        self.H = H

    def _map(self, Z):
        return np.abs(Z @ self.H.T)


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    sigma_y: float

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ValueError("sigma_y must be positive")
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))


def likelihood_potential(fm: ForwardModel, obs: Observation, Z) -> np.ndarray:
    """Gaussian misfit ``||G(z_j) - y||^2 / (2 sigma_y^2)`` per particle."""
    r = fm.evaluate(Z) - obs.y
    return np.sum(r**2, axis=1) / (2.0 * obs.sigma_y**2)


def _misfit_no_count(fm: ForwardModel, obs: Observation, Z: np.ndarray) -> np.ndarray:
    # oracle-side evaluation; bypasses the sampler's cost accounting
    r = fm._map(Z) - obs.y
    return np.sum(r**2, axis=1) / (2.0 * obs.sigma_y**2)


@dataclass
class TestInstance:
    """Forward model, prior, data, and the ground truth available for it."""

    name: str
    seed: int
    forward: ForwardModel
    prior: GmmPrior
    observation: Observation
    x_true: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def is_linear(self) -> bool:
        return isinstance(self.forward, LinearModel)

    def log_posterior(self, x) -> np.ndarray:
        """Unnormalized log posterior on a batch of points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.prior.log_density(x) - _misfit_no_count(self.forward, self.observation, x)

    def analytic_posterior(self):
        if not self.is_linear:
            raise ValueError(f"instance {self.name!r} has no closed-form posterior")
        from bladeinv.oracles import gmm_posterior

        m = self.forward.out_dim
        return gmm_posterior(self.prior, self.forward.H, self.observation.sigma_y**2 * np.eye(m), self.observation.y)


INSTANCES = ("linear-gaussian", "linear-gmm4", "quadratic-gmm", "abs-linear")

# benchmark noise levels for linear-gaussian
LINEAR_GAUSSIAN_SIGMAS = (0.5, 1.5, 2.5, 3.5)


def make_test_instance(
    name: str,
    n: int | None = None,
    seed: int = 0,
    *,
    sigma_y: float | None = None,
    H: np.ndarray | None = None,
) -> TestInstance:
    """Build a named instance.

    ``n`` is the state dimension (only free for ``linear-gaussian`` and the
    1-2 dimensional nonlinear instances). ``H`` overrides the random linear
    operator of the linear instances.
    """
    rng = Streams(seed).generator(INSTANCE)
    if name == "linear-gaussian":
        n = 2 if n is None else int(n)
        m = 1
        s_y = 0.5 if sigma_y is None else float(sigma_y)
        Hm = rng.standard_normal((m, n)) if H is None else np.atleast_2d(H)
        mean = rng.standard_normal(n)
        prior = GaussianPrior(mean, 25.0 * np.eye(n))
        x_true = prior.sample(1, rng)[0]
        y = Hm @ x_true + s_y * rng.standard_normal(m)
        return TestInstance(name, seed, LinearModel(Hm), prior, Observation(y, s_y), x_true, {"n": n})
    if name == "linear-gmm4":
        if n not in (None, 2):
            raise ValueError("linear-gmm4 is two-dimensional")
        means = [(16.0 * i, 16.0 * j) for i in (0, 1) for j in (0, 1)]
        prior = GmmPrior(np.full(4, 0.25), means, np.stack([2.0 * np.eye(2)] * 4))
        s_y = np.sqrt(1.5) if sigma_y is None else float(sigma_y)
        Hm = rng.standard_normal((1, 2)) if H is None else np.atleast_2d(H)
        y = rng.standard_normal(1)
        return TestInstance(name, seed, LinearModel(Hm), prior, Observation(y, s_y), None, {"n": 2})
    if name == "quadratic-gmm":
        n = 2 if n is None else int(n)
        if n not in (1, 2):
            raise ValueError("quadratic-gmm supports n in {1, 2}")
        means = np.array([[-2.0, 0.0], [2.0, 1.0]])[:, :n]
        prior = GmmPrior([0.5, 0.5], means, np.stack([np.eye(n)] * 2))
        s_y = 0.5 if sigma_y is None else float(sigma_y)
        fm = QuadraticModel(n)
        x_true = prior.sample(1, rng)[0]
        y = fm._map(x_true[None])[0] + s_y * rng.standard_normal(1)
        return TestInstance(name, seed, fm, prior, Observation(y, s_y), x_true, {"n": n})
    if name == "abs-linear":
        n = 1 if n is None else int(n)
        if n not in (1, 2):
            raise ValueError("abs-linear supports n in {1, 2}")
        Hm = rng.standard_normal((n, n)) + 2.0 * np.eye(n) if H is None else np.atleast_2d(H)
        prior = GaussianPrior(np.zeros(n), 4.0 * np.eye(n))
        s_y = 0.3 if sigma_y is None else float(sigma_y)
        fm = AbsLinearModel(Hm)
        x_true = prior.sample(1, rng)[0]
        y = fm._map(x_true[None])[0] + s_y * rng.standard_normal(n)
        return TestInstance(name, seed, fm, prior, Observation(y, s_y), x_true, {"n": n})
    raise ValueError(f"unknown instance {name!r}; expected one of {INSTANCES}")
