"""Probabilistic verification metrics for ensembles."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from bladeinv.rng import as_generator


def rel_l2(x, x_star) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x_star = np.asarray(x_star, dtype=float).ravel()
    denom = np.linalg.norm(x_star)
    if denom == 0:
        raise ValueError("relative L2 error is undefined for a zero ground truth")
    return float(np.linalg.norm(x - x_star) / denom)


def _members(ensemble) -> np.ndarray:
    E = np.asarray(ensemble, dtype=float)
    return E[:, None] if E.ndim == 1 else E


def crps(ensemble, truth) -> float:
    """Fair ensemble CRPS averaged over dimensions, via the sorted-sample form.

    Uses ``sum_jk |x_j - x_k| = 2 sum_i (2i - J + 1) x_(i)`` on sorted members
    (``i`` from 0), so the cost is ``O(n J log J)``.
    """
    E = _members(ensemble)
    J = E.shape[0]
    if J < 2:
        raise ValueError("fair CRPS needs at least two members")
    t = np.broadcast_to(np.asarray(truth, dtype=float).ravel(), (E.shape[1],))
    skill = np.abs(E - t).mean(axis=0)
    S = np.sort(E, axis=0)
    coef = 2.0 * np.arange(J) - J + 1
    pair = 2.0 * (coef @ S)
    return float(np.mean(skill - pair / (2.0 * J * (J - 1))))


def crps_bruteforce(ensemble, truth) -> float:
    """``O(J^2)`` double-sum definition of the fair CRPS."""
    E = _members(ensemble)
    J = E.shape[0]
    if J < 2:
        raise ValueError("fair CRPS needs at least two members")
    t = np.broadcast_to(np.asarray(truth, dtype=float).ravel(), (E.shape[1],))
    skill = np.abs(E - t).mean(axis=0)
    pair = np.abs(E[:, None, :] - E[None, :, :]).sum(axis=(0, 1))
    return float(np.mean(skill - pair / (2.0 * J * (J - 1))))


def _cases(ensembles, truths):
    E = np.asarray(ensembles, dtype=float)
    T = np.asarray(truths, dtype=float)
    if E.ndim == 2:
        E = E[None]
    if E.ndim != 3:
        raise ValueError("ensembles must be cases x J x n")
    T = T.reshape(E.shape[0], E.shape[2])
    return E, T


def ssr(ensembles, truths) -> float:
    """Spread-skill ratio ``sqrt(spread^2 / skill^2)`` over cases.

    ``spread^2`` averages the ``1/(J-1)`` member variance summed over
    dimensions; ``skill^2`` is the mean squared error of the ensemble mean
    plus ``spread^2 / (J (J-1))``.
    """
    E, T = _cases(ensembles, truths)
    J = E.shape[1]
    if J < 2:
        raise ValueError("SSR needs at least two members")
    mean = E.mean(axis=1)
    spread2 = np.mean(np.sum((E - mean[:, None, :]) ** 2, axis=(1, 2)) / (J - 1))
    skill2 = np.mean(np.sum((mean - T) ** 2, axis=1)) + spread2 / (J * (J - 1))
    if skill2 == 0:
        raise ValueError("skill is zero; SSR undefined")
    return float(np.sqrt(spread2 / skill2))


def rank_histogram(ensembles, truths, rng=None) -> np.ndarray:
    """Pooled rank of the truth among members, ``J + 1`` bins; ties split uniformly."""
    E, T = _cases(ensembles, truths)
    J = E.shape[1]
    rng = as_generator(rng)
    below = np.sum(E < T[:, None, :], axis=1)
    ties = np.sum(E == T[:, None, :], axis=1)
    u = rng.random(below.shape)
    ranks = below + np.floor(u * (ties + 1)).astype(int)
    return np.bincount(ranks.ravel(), minlength=J + 1)


def sliced_wasserstein(P, Q, L: int = 128, p: float = 2.0, rng=None) -> float:
    """``((1/L) sum_l W_p^p(<P, theta_l>, <Q, theta_l>))^(1/p)``, theta uniform on the sphere.

    The larger sample set is subsampled without replacement to the size of
    the smaller one, so each 1-D transport is a sorted matching.
    """
    P = _members(P)
    Q = _members(Q)
    if P.shape[1] != Q.shape[1]:
        raise ValueError("sample sets live in different dimensions")
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("sample sets must be non-empty")
    rng = as_generator(rng)
    k = min(len(P), len(Q))
    if len(P) > k:
        P = P[rng.choice(len(P), k, replace=False)]
    if len(Q) > k:
        Q = Q[rng.choice(len(Q), k, replace=False)]
    theta = rng.standard_normal((P.shape[1], L))
    theta /= np.linalg.norm(theta, axis=0)
    a = np.sort(P @ theta, axis=0)
    b = np.sort(Q @ theta, axis=0)
    return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))


def kl_gaussian(mu, Sigma, mu_star, Sigma_star) -> float:
    """``KL(N(mu, Sigma) || N(mu_star, Sigma_star))``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    mu_star = np.atleast_1d(np.asarray(mu_star, dtype=float))
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    S_star = np.atleast_2d(np.asarray(Sigma_star, dtype=float))
    d = mu.size
    try:
        f = cho_factor(S, lower=True)
        f_star = cho_factor(S_star, lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("covariances must be positive definite") from None
    logdet = 2 * np.sum(np.log(np.diag(f[0])))
    logdet_star = 2 * np.sum(np.log(np.diag(f_star[0])))
    diff = mu_star - mu
    tr = np.trace(cho_solve(f_star, S))
    maha = diff @ cho_solve(f_star, diff)
    return float(0.5 * (logdet_star - logdet - d + tr + maha))


def kl_gaussian_samples(samples, mu_star, Sigma_star, ridge: float = 1e-9) -> float:
    """KL of the moment-matched Gaussian of ``samples`` (unbiased covariance plus ridge)."""
    X = _members(samples)
    mu = X.mean(axis=0)
    S = np.atleast_2d(np.cov(X, rowvar=False)) + ridge * np.eye(X.shape[1])
    return kl_gaussian(mu, S, mu_star, Sigma_star)


def mode_occupancy(samples, centers) -> np.ndarray:
    """Fraction of samples whose nearest center is each entry of ``centers``."""
    X = _members(samples)
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    lab = np.argmin(((X[:, None, :] - C[None]) ** 2).sum(-1), axis=1)
    return np.bincount(lab, minlength=len(C)) / len(X)


@dataclass
class MetricsReport:
    rel_l2: float | None = None
    crps: float | None = None
    ssr: float | None = None
    rank_histogram: list[int] | None = None
    swd: float | None = None
    swd_order: float | None = None
    kl_gaussian: float | None = None
    mode_occupancy: list[float] | None = None
    cases: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != []}


def evaluate_ensemble(
    samples,
    *,
    truths=None,
    reference_state=None,
    oracle_samples=None,
    gaussian_target=None,
    mode_centers=None,
    L: int = 128,
    p: float = 2.0,
    rng=None,
) -> MetricsReport:
    """Bundle the metrics that apply given the available ground truth.

    ``truths`` is one or more ground-truth states; CRPS/SSR/rank histogram
    score the single ensemble against each in turn and average (a truth
    drawn from the exact posterior makes these calibration checks).
    ``reference_state`` (e.g. the true state) is what the relative L2 error
    of the ensemble mean is measured against; without it the truths are used.
    """
    rng = as_generator(rng)
    X = _members(samples)
    rep = MetricsReport()
    if truths is not None:
        T = np.atleast_2d(np.asarray(truths, dtype=float))
        crps_vals = [crps(X, t) for t in T]
        rep.crps = float(np.mean(crps_vals))
        rep.ssr = ssr(np.broadcast_to(X, (len(T),) + X.shape), T)
        rep.rank_histogram = rank_histogram(np.broadcast_to(X, (len(T),) + X.shape), T, rng).tolist()
        if reference_state is None:
            rel = [rel_l2(X.mean(axis=0), t) for t in T if np.any(t)]
            rep.rel_l2 = float(np.mean(rel)) if rel else None
        if len(T) <= 16:
            rep.cases = [{"case": i, "crps": c} for i, c in enumerate(crps_vals)]
    if reference_state is not None:
        rep.rel_l2 = rel_l2(X.mean(axis=0), reference_state)
    if oracle_samples is not None:
        rep.swd = sliced_wasserstein(X, oracle_samples, L=L, p=p, rng=rng)
        rep.swd_order = p
    if gaussian_target is not None:
        mu_star, S_star = gaussian_target
        rep.kl_gaussian = kl_gaussian_samples(X, mu_star, S_star)
    if mode_centers is not None:
        rep.mode_occupancy = mode_occupancy(X, mode_centers).tolist()
    return rep
