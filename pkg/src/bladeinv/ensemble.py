"""Ensemble container and the shared statistical kernels.

Particles are stored row-major, one particle per row (``J x n``).
Covariances use the biased ``1/J`` normalization throughout so that the
square-root construction and the finite-particle correction agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RANK_TOL = 1e-8


@dataclass(frozen=True)
class Ensemble:
    """``J`` particles in ``R^n``. The particle array is stored read-only."""

    particles: np.ndarray

    def __post_init__(self):
        arr = np.array(self.particles, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"particles must be a J x n matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("particles contain non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "particles", arr)

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def n(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return ensemble_mean(self)

    def cov(self, biased: bool = True) -> np.ndarray:
        return ensemble_cov(self, biased=biased)

    def to_csv(self, path: str | Path) -> None:
        write_samples_csv(path, self.particles)

    @classmethod
    def from_csv(cls, path: str | Path) -> "Ensemble":
        return cls(read_samples_csv(path))


@dataclass(frozen=True)
class EnsembleSqrt:
    """Deviation matrix ``(z_j - mean) / sqrt(J)`` stacked as columns (``n x J``)."""

    columns: np.ndarray

    def covariance(self) -> np.ndarray:
        return self.columns @ self.columns.T


@dataclass(frozen=True)
class SpanTracker:
    """Orthonormal basis of every particle deviation ingested so far."""

    n: int
    basis: np.ndarray = field(default=None)  # n x rank
    ingested: int = 0

    def __post_init__(self):
        if self.basis is None:
            object.__setattr__(self, "basis", np.zeros((self.n, 0)))

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def _particles(e) -> np.ndarray:
    arr = np.asarray(getattr(e, "particles", e), dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def ensemble_mean(e) -> np.ndarray:
    return _particles(e).mean(axis=0)


def deviations(e) -> np.ndarray:
    Z = _particles(e)
    return Z - Z.mean(axis=0)


def ensemble_cov(e, biased: bool = True) -> np.ndarray:
    """Ensemble covariance, ``1/J`` normalized unless ``biased=False``."""
    D = deviations(e)
    J = D.shape[0]
    denom = J if biased else J - 1
    C = D.T @ D / denom
    return 0.5 * (C + C.T)


def ensemble_sqrt(e) -> EnsembleSqrt:
    D = deviations(e)
    return EnsembleSqrt(D.T / np.sqrt(D.shape[0]))


def apply_sqrt_noise(s: EnsembleSqrt, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Draw one ``N(0, scale * C)`` vector per particle as ``sqrt(scale) * S @ xi``.

    Returns a ``J x n`` array; row ``j`` uses row ``j`` of a ``J x J`` block of
    standard normals.
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    n, J = s.columns.shape
    xi = rng.standard_normal((J, J))
    return np.sqrt(scale) * (xi @ s.columns.T)


def span_update(t: SpanTracker, e, tol: float = RANK_TOL) -> SpanTracker:
    """Extend the accumulated span with the deviations of ``e``.

    New directions are the part of each deviation orthogonal to the current
    basis; singular values of that residual below ``tol`` times the largest
    singular value of the raw deviations count as zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    D = deviations(e).T  # n x J
    if D.shape[0] != t.n:
        raise ValueError(f"ensemble dimension {D.shape[0]} does not match tracker dimension {t.n}")
    ingested = t.ingested + D.shape[1]
    scale = np.linalg.norm(D, 2) if D.size else 0.0
    if scale == 0.0:
        return SpanTracker(t.n, t.basis, ingested)
    B = t.basis
    R = D - B @ (B.T @ D)
    # second pass keeps the residual orthogonal to B in floating point
    R = R - B @ (B.T @ R)
    U, sv, _ = np.linalg.svd(R, full_matrices=False)
    new = U[:, sv > tol * scale]
    basis = np.hstack([B, new]) if new.size else B
    return SpanTracker(t.n, basis, ingested)


def write_samples_csv(path: str | Path, samples: np.ndarray, comment: str | None = None) -> None:
    """``dim_*`` header then one particle per row; ``comment`` lines go first, prefixed ``# ``."""
    samples = _particles(samples)
    header = ",".join(f"dim_{i}" for i in range(samples.shape[1]))
    if comment:
        header = "\n".join("# " + line for line in comment.splitlines()) + "\n" + header
    np.savetxt(path, samples, delimiter=",", header=header, comments="", fmt="%.17g")


def read_samples_csv(path: str | Path) -> np.ndarray:
    skip = 0
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            skip += 1
            line = fh.readline()
    header = line.strip().split(",")
    if not header or not all(h == f"dim_{i}" for i, h in enumerate(header)):
        raise ValueError(f"{path}: expected header dim_0..dim_{{n-1}}, got {header}")
    return np.loadtxt(path, delimiter=",", skiprows=skip + 1, ndmin=2)
