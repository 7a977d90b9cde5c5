"""Random Fourier feature maps and their closed-form Gaussian moments.

The feature map interleaves sine/cosine pairs, one pair per spectral
frequency, so a map with L features uses L/2 frequencies.  Inner products
of feature vectors are unbiased Monte Carlo estimates of a stationary
kernel whose spectral density generated the frequencies.

When each frequency is Gaussian-distributed, the first and second moments
of the feature matrix are available in closed form via the Gaussian
characteristic function; those moments drive the analytic kernel
estimates used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeError, ValidationError

# exp() underflows to 0 below ~-745 in float64; clamp so downstream logs stay finite
_EXP_FLOOR = -745.0


@dataclass
class SpectralPoints:
    """A fixed draw of spectral frequencies, one row per sin/cos pair."""

    W: NDArray[np.float64]  # (L/2, Q)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] < 1 or self.W.shape[1] < 1:
            raise ShapeError(f"spectral points must be (L/2, Q), got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ValidationError("spectral points contain non-finite entries")

    @property
    def n_features(self) -> int:
        return 2 * self.W.shape[0]

    @property
    def n_dims(self) -> int:
        return self.W.shape[1]


@dataclass
class FeatureMatrix:
    """Random-feature design matrix with rows of unit Euclidean norm."""

    Phi: NDArray[np.float64]  # (N, L)
    scale: float              # sqrt(2/L)

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, dtype=np.float64)
        if self.Phi.ndim != 2 or self.Phi.shape[1] % 2 != 0:
            raise ShapeError(f"feature matrix must be (N, L) with even L, got {self.Phi.shape}")


@dataclass
class SpectralMoments:
    """Per-frequency Gaussian moments: q(w_l) = N(means[l], covs[l])."""

    means: NDArray[np.float64]  # (L/2, Q)
    covs: NDArray[np.float64]   # (L/2, Q, Q)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        if self.means.ndim != 2:
            raise ShapeError(f"means must be (L/2, Q), got {self.means.shape}")
        half, q = self.means.shape
        if self.covs.shape != (half, q, q):
            raise ShapeError(f"covs must be {(half, q, q)}, got {self.covs.shape}")
        if not np.allclose(self.covs, np.swapaxes(self.covs, 1, 2), atol=1e-10):
            raise ValidationError("covariances must be symmetric")
        eigs = np.linalg.eigvalsh(self.covs)
        if np.any(eigs < -1e-10):
            raise ValidationError(f"covariances must be PSD; min eigenvalue {eigs.min():.3e}")

    @property
    def n_features(self) -> int:
        return 2 * self.means.shape[0]


def feature_map(X: NDArray, points: SpectralPoints) -> FeatureMatrix:
    """Evaluate the sin/cos feature map of X at the given frequencies.

    Row n holds sqrt(2/L) * [sin(w_1.x_n), cos(w_1.x_n), ..., sin, cos],
    so every row has unit squared norm.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != points.n_dims:
        raise ShapeError(
            f"X has {X.shape[1]} columns but spectral points expect {points.n_dims}"
        )
    L = points.n_features
    angles = X @ points.W.T                     # (N, L/2)
    scale = np.sqrt(2.0 / L)
    Phi = np.empty((X.shape[0], L))
    Phi[:, 0::2] = np.sin(angles)
    Phi[:, 1::2] = np.cos(angles)
    Phi *= scale
    return FeatureMatrix(Phi=Phi, scale=scale)


def kernel_estimate(features: FeatureMatrix) -> NDArray[np.float64]:
    """Gram matrix Phi Phi^T: the RFF kernel estimate (unit diagonal)."""
    return features.Phi @ features.Phi.T


def _quad_forms(X: NDArray, covs: NDArray) -> NDArray:
    """x_n^T V_l x_n for all (n, l); shape (N, L/2)."""
    return np.einsum("nq,lqr,nr->nl", X, covs, X)


def expected_feature_map(X: NDArray, moments: SpectralMoments) -> NDArray[np.float64]:
    """E[Phi] under Gaussian frequencies, via the characteristic function.

    Entry pair (2l, 2l+1) of row n is
    sqrt(2/L) * exp(-x^T V_l x / 2) * (sin(m_l.x), cos(m_l.x)).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != moments.means.shape[1]:
        raise ShapeError("X dimensionality does not match spectral moments")
    L = moments.n_features
    angles = X @ moments.means.T                            # (N, L/2)
    damp = np.exp(np.maximum(-0.5 * _quad_forms(X, moments.covs), _EXP_FLOOR))
    out = np.empty((X.shape[0], L))
    out[:, 0::2] = damp * np.sin(angles)
    out[:, 1::2] = damp * np.cos(angles)
    out *= np.sqrt(2.0 / L)
    return out


def expected_feature_gram(X: NDArray, moments: SpectralMoments) -> NDArray[np.float64]:
    """E[Phi^T Phi] under Gaussian frequencies; symmetric with trace N.

    Entries from distinct frequencies factor by independence.  Same-frequency
    diagonal entries use E[sin^2] and E[cos^2]; the same-frequency sin*cos
    cross term follows from sin t cos t = sin(2t)/2 applied to the doubled
    frequency.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != moments.means.shape[1]:
        raise ShapeError("X dimensionality does not match spectral moments")
    N = X.shape[0]
    half = moments.means.shape[0]
    L = 2 * half

    angles = X @ moments.means.T                            # (N, L/2)
    quad = _quad_forms(X, moments.covs)                     # (N, L/2)
    damp1 = np.exp(np.maximum(-0.5 * quad, _EXP_FLOOR))
    damp2 = np.exp(np.maximum(-2.0 * quad, _EXP_FLOOR))

    # First moments per feature column, interleaved (sin, cos).
    E1 = np.empty((N, L))
    E1[:, 0::2] = damp1 * np.sin(angles)
    E1[:, 1::2] = damp1 * np.cos(angles)

    # Independence gives the outer product for cross-frequency entries.
    gram = np.einsum("ni,nj->ij", E1, E1)

    # Same-frequency 2x2 blocks: overwrite with Identity-2 diagonals and the
    # doubled-frequency cross term.
    sin2 = np.sum(0.5 - 0.5 * damp2 * np.cos(2.0 * angles), axis=0)   # (L/2,)
    cos2 = np.sum(0.5 + 0.5 * damp2 * np.cos(2.0 * angles), axis=0)
    cross = np.sum(0.5 * damp2 * np.sin(2.0 * angles), axis=0)
    idx = np.arange(half)
    gram[2 * idx, 2 * idx] = sin2
    gram[2 * idx + 1, 2 * idx + 1] = cos2
    gram[2 * idx, 2 * idx + 1] = cross
    gram[2 * idx + 1, 2 * idx] = cross

    gram *= 2.0 / L
    return gram
