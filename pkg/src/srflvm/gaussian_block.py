"""Gaussian-likelihood block: low-rank marginal log-likelihood, the Monte
Carlo ELBO estimator and its gradients, and Gaussian missing-data imputation.

The N x N covariance Phi Phi^T + sigma^2 I is never inverted densely; all
solves go through the L x L system A = sigma^2 I + Phi^T Phi (matrix
inversion and determinant lemmas), so per-column cost is O(N L^2 + L^3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from numpy.typing import NDArray

from . import _reparam as rp
from .dp_mixture import MixtureState, expected_log_pi
from .errors import NumericDegeneracyError, ShapeError, ValidationError
from .features import FeatureMatrix, feature_map, SpectralPoints
from .latent_state import LatentState, sample_latents

NOISE_VAR_MIN = 1e-8
NOISE_VAR_MAX = 1e8
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianLikelihood:
    """Homoscedastic observation noise, stored on the log scale."""

    log_noise_var: float = float(np.log(1.0))

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    def clamp(self) -> None:
        self.log_noise_var = float(np.clip(self.log_noise_var,
                                           np.log(NOISE_VAR_MIN), np.log(NOISE_VAR_MAX)))


@dataclass
class ObservationSet:
    """Data matrix with an observation mask (True = observed)."""

    Y: NDArray[np.float64]
    mask: Optional[NDArray[np.bool_]] = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise ShapeError(f"observations must be (N, M), got {self.Y.shape}")
        if self.mask is None:
            self.mask = np.ones(self.Y.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.Y.shape:
            raise ShapeError("mask shape must match observations")
        if np.any(self.mask.sum(axis=0) < 1):
            raise ValidationError("every column must have at least one observed entry")

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())


def _chol_jitter(A: NDArray) -> NDArray:
    """Cholesky, escalating jitter (0, then 1e-6 and 1e-4 times mean diagonal)."""
    scale = float(np.mean(np.diagonal(A, axis1=-2, axis2=-1)))
    eye = np.eye(A.shape[-1])
    for level in (0.0, 1e-6, 1e-4):
        try:
            return np.linalg.cholesky(A + level * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericDegeneracyError("Cholesky of the low-rank system failed")


def _chol_jitter_t(A: torch.Tensor) -> torch.Tensor:
    scale = torch.mean(torch.diagonal(A, dim1=-2, dim2=-1)).detach()
    eye = torch.eye(A.shape[-1], dtype=rp.DTYPE)
    for level in (0.0, 1e-6, 1e-4):
        try:
            return torch.linalg.cholesky(A + level * scale * eye)
        except torch.linalg.LinAlgError:
            continue
    raise NumericDegeneracyError("Cholesky of the low-rank system failed")


def marginal_loglik(y_col: NDArray, Phi, noise_var: float,
                    mask_col: Optional[NDArray] = None) -> float:
    """log N(y_obs | 0, Phi_obs Phi_obs^T + sigma^2 I) via the low-rank lemmas."""
    if isinstance(Phi, FeatureMatrix):
        Phi = Phi.Phi
    Phi = np.asarray(Phi, dtype=np.float64)
    y = np.asarray(y_col, dtype=np.float64).ravel()
    if Phi.shape[0] != y.shape[0]:
        raise ShapeError("feature matrix and observation length disagree")
    if mask_col is not None:
        sel = np.asarray(mask_col, dtype=bool)
        y = y[sel]
        Phi = Phi[sel]
    n, L = Phi.shape
    if n < 1:
        raise ValidationError("a column must have at least one observed entry")
    A = noise_var * np.eye(L) + Phi.T @ Phi
    chol = _chol_jitter(A)
    b = Phi.T @ y
    z = np.linalg.solve(chol, b)
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(chol))))
    quad = (float(y @ y) - float(z @ z)) / noise_var
    return (-0.5 * n * _LOG_2PI
            - 0.5 * (logdet_a + (n - L) * np.log(noise_var))
            - 0.5 * quad)


def draw_feature_matrix(latent: LatentState, mixture: MixtureState,
                        rng: np.random.Generator) -> NDArray[np.float64]:
    """One joint draw of (X, W) pushed through the feature map; (N, L)."""
    x = sample_latents(latent, rng.standard_normal(latent.mean.shape))
    moments = mixture.spectral_moments()
    chol = np.linalg.cholesky(moments.covs + 1e-12 * np.eye(moments.covs.shape[-1]))
    eps = rng.standard_normal(moments.means.shape)
    w = moments.means + np.einsum("lqr,lr->lq", chol, eps)
    return feature_map(x, SpectralPoints(W=w)).Phi


def _stacked_features(obs: ObservationSet, latent: LatentState,
                      mixture: MixtureState, leaves: dict,
                      noise: rp.NoiseBundle) -> torch.Tensor:
    m_w, chol_w = rp.spectral_moments_t(leaves)
    phis = []
    for i in range(noise.n_samples):
        x = rp.sample_latents_t(leaves, latent.diagonal, rp.tensor(noise.eps_x[i]))
        phis.append(rp.sample_features_t(x, m_w, chol_w, rp.tensor(noise.eps_w[i])))
    return torch.stack(phis)                                     # (I, N, L)


def _column_logliks(phi: torch.Tensor, obs: ObservationSet,
                    log_noise: torch.Tensor) -> torch.Tensor:
    """Masked marginal log-likelihoods, all columns and MC samples; (I, M)."""
    noise_var = torch.exp(log_noise)
    L = phi.shape[-1]
    mask = rp.tensor(obs.mask.astype(np.float64))                # (N, M)
    ym = rp.tensor(obs.Y * obs.mask)                             # (N, M)
    n_obs = rp.tensor(obs.mask.sum(axis=0).astype(np.float64))   # (M,)
    yty = torch.sum(ym * ym, dim=0)                              # (M,)
    b = (phi.transpose(1, 2) @ ym).transpose(1, 2)               # (I, M, L)
    eye = torch.eye(L, dtype=rp.DTYPE)

    if obs.fully_observed:
        A = noise_var * eye + phi.transpose(1, 2) @ phi          # (I, L, L)
        chol = _chol_jitter_t(A)
        logdet = 2.0 * torch.sum(
            torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)), dim=-1)  # (I,)
        z = torch.linalg.solve_triangular(chol.unsqueeze(1), b.unsqueeze(-1),
                                          upper=False).squeeze(-1)       # (I, M, L)
        logdet = logdet.unsqueeze(1)
    else:
        A = torch.einsum("inl,nm,ink->imlk", phi, mask, phi) + noise_var * eye
        chol = _chol_jitter_t(A)
        logdet = 2.0 * torch.sum(
            torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)), dim=-1)  # (I, M)
        z = torch.linalg.solve_triangular(chol, b.unsqueeze(-1),
                                          upper=False).squeeze(-1)
    quad = (yty.unsqueeze(0) - torch.sum(z * z, dim=-1)) / noise_var
    return (-0.5 * n_obs * _LOG_2PI
            - 0.5 * (logdet + (n_obs - L) * log_noise)
            - 0.5 * quad)


def _gaussian_graph(obs, latent, mixture, log_noise_var, noise,
                    with_assignment_kl=False):
    leaves = {**rp.latent_leaves(latent), **rp.mixture_leaves(mixture)}
    leaves["log_noise"] = rp.tensor(log_noise_var, grad=True)
    phi = _stacked_features(obs, latent, mixture, leaves, noise)
    loglik = torch.mean(torch.sum(
        _column_logliks(phi, obs, leaves["log_noise"]), dim=1))
    elbo = loglik - rp.latent_kl_t(leaves, latent.diagonal)
    if with_assignment_kl:
        elbo = elbo - rp.assignment_kl_t(leaves, expected_log_pi(mixture.stick))
    return elbo, leaves


def gaussian_elbo_core(obs: ObservationSet, latent: LatentState,
                       mixture: MixtureState, log_noise_var: float,
                       noise: rp.NoiseBundle, want_grads: bool = False,
                       with_assignment_kl: bool = False):
    """Fixed-noise ELBO estimate, optionally with gradients for every
    variational and model parameter (common random numbers by construction)."""
    elbo, leaves = _gaussian_graph(obs, latent, mixture, log_noise_var, noise,
                                   with_assignment_kl)
    if not want_grads:
        return float(elbo.detach()), None
    return float(elbo.detach()), rp.collect_grads(elbo, leaves)


def _draw_bundle(obs, latent, mixture, n_samples, rng) -> rp.NoiseBundle:
    n, q = latent.mean.shape
    half = mixture.assign_logits.shape[0]
    return rp.draw_noise(n_samples, n, q, half, rng)


def gaussian_elbo(obs: ObservationSet, latent: LatentState, mixture: MixtureState,
                  noise_var: float, n_samples: int, rng: np.random.Generator) -> float:
    """MC estimate of the Gaussian ELBO: mean column log-likelihood minus the
    latent KL."""
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    noise = _draw_bundle(obs, latent, mixture, n_samples, rng)
    value, _ = gaussian_elbo_core(obs, latent, mixture, float(np.log(noise_var)), noise)
    return value


def gaussian_elbo_grad(obs: ObservationSet, latent: LatentState,
                       mixture: MixtureState, noise_var: float,
                       n_samples: int, rng: np.random.Generator) -> dict:
    """Gradients of the MC ELBO estimator for fixed noise draws."""
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    noise = _draw_bundle(obs, latent, mixture, n_samples, rng)
    _, grads = gaussian_elbo_core(obs, latent, mixture, float(np.log(noise_var)),
                                  noise, want_grads=True)
    return grads


def gaussian_impute(obs: ObservationSet, latent: LatentState, mixture: MixtureState,
                    noise_var: float, n_samples: int,
                    rng: np.random.Generator) -> NDArray[np.float64]:
    """Posterior-mean imputation of the masked entries.

    Per MC sample and per column, the joint N(0, Phi Phi^T + sigma^2 I) is
    conditioned on the observed rows through the L x L system; conditional
    means are averaged over samples.  Observed entries pass through
    unchanged.
    """
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    out = obs.Y.copy()
    if obs.fully_observed:
        return out
    n, m_cols = obs.Y.shape
    acc = np.zeros((n, m_cols))
    for _ in range(n_samples):
        phi = draw_feature_matrix(latent, mixture, rng)
        L = phi.shape[1]
        for m in range(m_cols):
            sel = obs.mask[:, m]
            if sel.all():
                continue
            phi_o = phi[sel]
            A = noise_var * np.eye(L) + phi_o.T @ phi_o
            chol = _chol_jitter(A)
            rhs = phi_o.T @ obs.Y[sel, m]
            h = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            acc[~sel, m] += phi[~sel] @ h
    filled = acc / n_samples
    out[~obs.mask] = filled[~obs.mask]
    return out
