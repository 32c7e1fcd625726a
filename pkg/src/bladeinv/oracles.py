"""Ground truth for the controlled experiments.

Closed-form mixture posteriors for linear forward models, plus two
brute-force samplers for low-dimensional nonlinear problems: random-walk
Metropolis and normalized grid evaluation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from bladeinv.priors import GmmPrior, gmm_sample
from bladeinv.rng import as_generator


class GmmPosterior(GmmPrior):
    """Mixture posterior ``sum_i omega_i N(mhat_i, C_i)``."""

    @property
    def omega(self) -> np.ndarray:
        return self.weights


def _gauss_logpdf(r: np.ndarray, fac) -> float:
    L = fac[0]
    sol = cho_solve(fac, r)
    return -0.5 * (r @ sol) - np.sum(np.log(np.diag(L))) - 0.5 * r.size * np.log(2 * np.pi)


def gmm_posterior(prior: GmmPrior, H, Sigma_eps, y, *, weights=None) -> GmmPosterior:
    """Conjugate update of every mixture component and its evidence weight.

    Uses the gain form ``mhat = m + S H^T (H S H^T + R)^-1 (y - H m)``, which
    equals the precision form without inverting prior covariances.
    ``weights`` optionally replaces the prior weights by any positive, not
    necessarily normalized, vector.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(Sigma_eps, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m_dim, n = H.shape
    if prior.dim != n or R.shape != (m_dim, m_dim) or y.shape != (m_dim,):
        raise ValueError("dimension mismatch between prior, H, Sigma_eps and y")
    logw = np.empty(prior.K)
    means = np.empty((prior.K, n))
    covs = np.empty((prior.K, n, n))
    raw = prior.weights if weights is None else np.asarray(weights, dtype=float)
    if raw.shape != (prior.K,) or np.any(raw < 0) or not np.any(raw > 0):
        raise ValueError("weights must be K non-negative numbers, not all zero")
    with np.errstate(divide="ignore"):
        log_gamma = np.log(raw)
    for i in range(prior.K):
        S = prior.covariances[i]
        m = prior.means[i]
        HS = H @ S
        innov_cov = HS @ H.T + R
        try:
            fac = cho_factor(innov_cov, lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"innovation covariance of component {i} is singular") from None
        resid = y - H @ m
        gain_T = cho_solve(fac, HS)  # (H S H^T + R)^-1 H S
        means[i] = m + gain_T.T @ resid
        C = S - HS.T @ gain_T
        covs[i] = 0.5 * (C + C.T)
        logw[i] = log_gamma[i] + _gauss_logpdf(resid, fac)
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return GmmPosterior(w, means, covs)


def gmm_posterior_sample(p: GmmPosterior, count: int, rng=None) -> np.ndarray:
    return gmm_sample(p, count, rng)


@dataclass
class RwmResult:
    samples: np.ndarray  # (kept steps * chains) x n
    acceptance: float
    n_chains: int


def rwm_sample(
    log_target: Callable[[np.ndarray], np.ndarray],
    init,
    steps: int,
    step_std=None,
    rng=None,
    *,
    burn: int = 0,
    thin: int = 1,
) -> RwmResult:
    """Random-walk Metropolis on ``exp(log_target)``.

    ``log_target`` maps a ``c x n`` batch to ``c`` log densities. ``init`` is a
    single point or a ``c x n`` array of independent chain starts; all chains
    advance together, ``steps`` moves each. ``step_std`` defaults to
    ``2.4 / sqrt(n)`` (unit posterior scale assumed).
    """
    x = np.atleast_2d(np.asarray(init, dtype=float)).copy()
    c, n = x.shape
    if n > 4:
        raise ValueError("rwm_sample is a low-dimensional oracle (n <= 4)")
    if step_std is None:
        step_std = 2.4 / np.sqrt(n)
    step_std = np.broadcast_to(np.asarray(step_std, dtype=float), (n,))
    rng = as_generator(rng)
    lp = np.asarray(log_target(x), dtype=float)
    kept = []
    accepted = 0
    for s in range(burn + steps):
        prop = x + step_std * rng.standard_normal((c, n))
        lq = np.asarray(log_target(prop), dtype=float)
        acc = np.log(rng.random(c)) < lq - lp
        x[acc] = prop[acc]
        lp[acc] = lq[acc]
        if s >= burn:
            accepted += int(acc.sum())
            if (s - burn) % thin == 0:
                kept.append(x.copy())
    rate = accepted / (steps * c) if steps else 0.0
    if not 0.1 <= rate <= 0.6:
        warnings.warn(f"random-walk Metropolis acceptance rate {rate:.3f} outside [0.1, 0.6]", RuntimeWarning)
    samples = np.concatenate(kept, axis=0) if kept else np.empty((0, n))
    return RwmResult(samples, rate, c)


class BoundsTooSmall(ValueError):
    pass


@dataclass
class GridPosterior:
    axes: list[np.ndarray]
    points: np.ndarray  # G x n cell centers
    probs: np.ndarray  # G, sums to 1
    cell_widths: np.ndarray

    def mean(self) -> np.ndarray:
        return self.probs @ self.points

    def cov(self) -> np.ndarray:
        d = self.points - self.mean()
        # midpoint quadrature; the cell-variance term is second order in the width
        return (self.probs[:, None] * d).T @ d

    def mode_weights(self, centers) -> np.ndarray:
        centers = np.atleast_2d(centers)
        d2 = ((self.points[:, None, :] - centers[None]) ** 2).sum(-1)
        lab = np.argmin(d2, axis=1)
        return np.bincount(lab, weights=self.probs, minlength=len(centers))

    def sample(self, count: int, rng=None) -> np.ndarray:
        rng = as_generator(rng)
        idx = rng.choice(self.probs.size, size=count, p=self.probs)
        jitter = (rng.random((count, self.points.shape[1])) - 0.5) * self.cell_widths
        return self.points[idx] + jitter


def grid_posterior(
    log_target: Callable[[np.ndarray], np.ndarray],
    bounds,
    resolution: int | tuple[int, ...],
    *,
    boundary_tol: float = 1e-3,
    check_bounds: bool = True,
) -> GridPosterior:
    """Normalized target on a regular grid of cell centers (``n <= 2``)."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    n = bounds.shape[0]
    if n > 2:
        raise ValueError("grid_posterior supports n <= 2")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (n,))
    axes, widths = [], []
    for (lo, hi), r in zip(bounds, res):
        w = (hi - lo) / r
        axes.append(lo + w * (np.arange(r) + 0.5))
        widths.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    lp = np.asarray(log_target(pts), dtype=float)
    probs = np.exp(lp - logsumexp(lp))
    if check_bounds:
        shaped = probs.reshape(tuple(res))
        edge = np.zeros(shaped.shape, dtype=bool)
        for ax in range(n):
            sl = [slice(None)] * n
            sl[ax] = 0
            edge[tuple(sl)] = True
            sl[ax] = -1
            edge[tuple(sl)] = True
        mass = float(shaped[edge].sum())
        if mass > boundary_tol:
            raise BoundsTooSmall(f"{mass:.3g} of the probability mass sits on boundary cells; widen bounds")
    return GridPosterior(axes, pts, probs, np.asarray(widths))
