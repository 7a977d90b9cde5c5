"""Variational Gaussians over the latent inputs, one per observation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeError, ValidationError

LOG_SCALE_MIN = np.log(1e-6)
LOG_SCALE_MAX = np.log(1e6)


@dataclass
class LatentState:
    """q(X) = prod_n N(x_n | mean_n, S_n).

    Diagonal mode stores log standard deviations; full mode stores lower
    triangular Cholesky factors of S_n.  Scale parameters are clamped to
    [1e-6, 1e6] after every update.
    """

    mean: NDArray[np.float64]                       # (N, Q)
    log_scale: Optional[NDArray[np.float64]] = None  # (N, Q) diagonal mode
    chol: Optional[NDArray[np.float64]] = None       # (N, Q, Q) full mode

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.mean.ndim != 2:
            raise ShapeError(f"latent means must be (N, Q), got {self.mean.shape}")
        if (self.log_scale is None) == (self.chol is None):
            raise ValidationError("exactly one of log_scale / chol must be set")
        n, q = self.mean.shape
        if self.log_scale is not None:
            self.log_scale = np.asarray(self.log_scale, dtype=np.float64)
            if self.log_scale.shape != (n, q):
                raise ShapeError("log_scale shape must match means")
        else:
            self.chol = np.tril(np.asarray(self.chol, dtype=np.float64))
            if self.chol.shape != (n, q, q):
                raise ShapeError("chol shape must be (N, Q, Q)")
            if np.any(np.einsum("nii->ni", self.chol) <= 0):
                raise ValidationError("Cholesky diagonals must be positive")

    @property
    def diagonal(self) -> bool:
        return self.log_scale is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    def clamp(self) -> None:
        """Clamp scale parameters into their legal range, in place."""
        if self.diagonal:
            np.clip(self.log_scale, LOG_SCALE_MIN, LOG_SCALE_MAX, out=self.log_scale)
        else:
            diag = np.einsum("nii->ni", self.chol)
            np.clip(diag, 1e-6, 1e6, out=diag)

    def scale_factors(self) -> NDArray[np.float64]:
        """Per-observation factors R_n with S_n = R_n R_n^T; (N, Q, Q)."""
        if self.diagonal:
            n, q = self.mean.shape
            out = np.zeros((n, q, q))
            np.einsum("nii->ni", out)[:] = np.exp(self.log_scale)
            return out
        return self.chol

    def covariances(self) -> NDArray[np.float64]:
        r = self.scale_factors()
        return r @ np.swapaxes(r, 1, 2)

    @classmethod
    def from_pca(cls, Y: NDArray, q: int, init_scale: float = 0.1) -> "LatentState":
        """PCA warm start: top-q scores of the column-standardized data,
        rescaled to unit variance per latent dimension."""
        Y = np.asarray(Y, dtype=np.float64)
        Yc = Y - Y.mean(axis=0)
        sd = Yc.std(axis=0)
        Yc = Yc / np.where(sd > 0, sd, 1.0)
        _, _, vt = np.linalg.svd(Yc, full_matrices=False)
        scores = Yc @ vt[:q].T
        if scores.shape[1] < q:  # fewer data columns than latent dimensions
            pad = np.zeros((scores.shape[0], q - scores.shape[1]))
            scores = np.hstack((scores, pad))
        ssd = scores.std(axis=0)
        scores = scores / np.where(ssd > 0, ssd, 1.0)
        n = Y.shape[0]
        return cls(mean=scores, log_scale=np.full((n, q), np.log(init_scale)))


def sample_latents(state: LatentState, noise: NDArray) -> NDArray[np.float64]:
    """Reparameterized draw x_n = mean_n + R_n eps_n for given standard-normal noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != state.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != latent shape {state.mean.shape}")
    if state.diagonal:
        return state.mean + np.exp(state.log_scale) * noise
    return state.mean + np.einsum("nqr,nr->nq", state.chol, noise)


def kl_to_prior(state: LatentState) -> float:
    """KL(q(X) || N(0, I)) = 1/2 sum_n [tr S_n + |mu_n|^2 - log|S_n| - Q]."""
    n, q = state.mean.shape
    mu_sq = float(np.sum(state.mean ** 2))
    if state.diagonal:
        var = np.exp(2.0 * state.log_scale)
        tr = float(var.sum())
        logdet = float(2.0 * state.log_scale.sum())
    else:
        tr = float(np.sum(state.chol ** 2))
        logdet = float(2.0 * np.sum(np.log(np.einsum("nii->ni", state.chol))))
    return 0.5 * (tr + mu_sq - logdet - n * q)
