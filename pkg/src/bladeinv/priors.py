"""Noise-conditioned prior scores with closed forms.

These stand in for a trained diffusion model: ``score(x, sigma)`` returns
``grad log p(x; sigma)`` where ``p(.; sigma)`` is the prior convolved with
``N(0, sigma^2 I)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from bladeinv.rng import as_generator


@runtime_checkable
class PriorScore(Protocol):
    dim: int

    def score(self, x: np.ndarray, sigma: float) -> np.ndarray: ...


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if dim == 1 else x[None, :]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


class GmmPrior:
    """Gaussian mixture ``sum_i w_i N(m_i, S_i)``."""

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float).ravel()
        m = np.atleast_2d(np.asarray(means, dtype=float))
        S = np.asarray(covariances, dtype=float)
        if S.ndim == 2:
            S = S[None]
        K, n = m.shape
        if w.shape != (K,) or S.shape != (K, n, n):
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, covariances {S.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex (sum={w.sum()!r})")
        if not np.allclose(S, np.swapaxes(S, 1, 2)):
            raise ValueError("component covariances must be symmetric")
        for i in range(K):
            try:
                np.linalg.cholesky(S[i])
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance of component {i} is not positive definite") from None
        self.weights = w
        self.means = m
        self.covariances = S

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_config(cls, block: dict) -> "GmmPrior":
        return cls(block["weights"], block["means"], block["covariances"])

    def to_config(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    def _components(self, sigma: float):
        eye = np.eye(self.dim)
        for i in range(self.K):
            A = self.covariances[i] + sigma**2 * eye
            yield i, cho_factor(A, lower=True)

    def _log_terms(self, x: np.ndarray, sigma: float):
        """Per-component log(w_i N(x; m_i, S_i + sigma^2 I)) and solves (S_i + sigma^2 I)^-1 (x - m_i)."""
        J, n = x.shape
        logs = np.empty((J, self.K))
        solves = np.empty((self.K, J, n))
        const = -0.5 * n * np.log(2 * np.pi)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        for i, fac in self._components(sigma):
            r = x - self.means[i]
            sol = cho_solve(fac, r.T).T
            logdet = 2.0 * np.sum(np.log(np.diag(fac[0])))
            logs[:, i] = logw[i] + const - 0.5 * logdet - 0.5 * np.einsum("jk,jk->j", r, sol)
            solves[i] = sol
        return logs, solves

    def log_density(self, x, sigma: float = 0.0) -> np.ndarray:
        x = _as_batch(x, self.dim)
        logs, _ = self._log_terms(x, sigma)
        return logsumexp(logs, axis=1)

    def responsibilities(self, x, sigma: float = 0.0) -> np.ndarray:
        x = _as_batch(x, self.dim)
        logs, _ = self._log_terms(x, sigma)
        return np.exp(logs - logsumexp(logs, axis=1, keepdims=True))

    def score(self, x, sigma: float) -> np.ndarray:
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        x = _as_batch(x, self.dim)
        logs, solves = self._log_terms(x, sigma)
        resp = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return -np.einsum("jk,kjn->jn", resp, solves)

    def sample(self, count: int, rng=None) -> np.ndarray:
        return gmm_sample(self, count, rng)

    def moment_matched(self) -> "GaussianPrior":
        mean = self.weights @ self.means
        d = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covariances) + (self.weights[:, None] * d).T @ d
        return GaussianPrior(mean, cov)


class GaussianPrior(GmmPrior):
    """Single Gaussian ``N(mean, cov)``; the only prior the EKS baseline accepts."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        super().__init__([1.0], mean[None], cov[None])

    @property
    def mean(self) -> np.ndarray:
        return self.means[0]

    @property
    def cov(self) -> np.ndarray:
        return self.covariances[0]

    def score(self, x, sigma: float) -> np.ndarray:
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        x = _as_batch(x, self.dim)
        A = self.cov + sigma**2 * np.eye(self.dim)
        return -cho_solve(cho_factor(A, lower=True), (x - self.mean).T).T


def gmm_sample(p: GmmPrior, count: int, rng=None) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = as_generator(rng)
    comp = rng.choice(p.K, size=count, p=p.weights)
    L = np.linalg.cholesky(p.covariances)
    eps = rng.standard_normal((count, p.dim))
    return p.means[comp] + np.einsum("jab,jb->ja", L[comp], eps)


def gmm_noised_score(p: GmmPrior, x, sigma: float) -> np.ndarray:
    return p.score(x, sigma)


@dataclass(frozen=True)
class SelfTestResult:
    passed: bool
    max_deviation: float
    n_probes: int

    def __bool__(self) -> bool:
        return self.passed


def score_self_test(
    p, sigma: float, tol: float = 1e-5, *, n_probes: int = 32, h: float = 1e-4, rng=0
) -> SelfTestResult:
    """Compare ``p.score`` against central differences of ``p.log_density``.

    Deviation is measured as ``|fd - score| / (1 + |score|)`` per coordinate.
    Probe points are drawn from the sigma-noised prior when ``p`` can sample,
    otherwise from a standard normal.
    """
    if not hasattr(p, "log_density"):
        raise TypeError("score_self_test needs an instance with log_density(x, sigma)")
    rng = as_generator(rng)
    n = p.dim
    if hasattr(p, "sample"):
        x = p.sample(n_probes, rng) + sigma * rng.standard_normal((n_probes, n))
    else:
        x = rng.standard_normal((n_probes, n))
    s = p.score(x, sigma)
    fd = np.empty_like(s)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, k] = (p.log_density(x + e, sigma) - p.log_density(x - e, sigma)) / (2 * h)
    dev = float(np.max(np.abs(fd - s) / (1.0 + np.abs(s))))
    return SelfTestResult(dev <= tol, dev, n_probes)
