"""Logistic-family likelihood block via Pólya-Gamma augmentation.

Bernoulli and negative binomial observations share the common form

    p(y | psi) = c * exp(psi)^a / (1 + exp(psi))^b,      psi = phi(x)^T h,

which becomes conditionally Gaussian in the weights h after augmenting with
omega ~ PG(b, psi).  The weight posterior per column is then available in
closed form, and the ELBO is estimated by Monte Carlo over draws of
(X, W, H) with the PG draws treated as stop-gradient constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from numpy.typing import NDArray
from scipy.special import gammaln

from . import _reparam as rp
from .dp_mixture import MixtureState, expected_log_pi
from .errors import NumericDegeneracyError, ShapeError, ValidationError
from .features import feature_map, SpectralPoints
from .gaussian_block import ObservationSet, _chol_jitter
from .latent_state import LatentState, sample_latents
from .likelihoods import BERNOULLI, NEGATIVE_BINOMIAL, LikelihoodSpec
from .polya_gamma import pg_sample, pg_sample_many  # noqa: F401  (re-exported)


@dataclass
class LogisticParams:
    """Per-entry (a, b, log c) of the common logistic likelihood form."""

    a: NDArray[np.float64]
    b: NDArray[np.float64]
    log_c: NDArray[np.float64]

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.log_c = np.asarray(self.log_c, dtype=np.float64)
        if not (self.a.shape == self.b.shape == self.log_c.shape):
            raise ShapeError("a, b, log_c must share one shape")
        if np.any(self.b <= 0):
            raise ValidationError("b must be positive everywhere")

    @property
    def c(self) -> NDArray[np.float64]:
        return np.exp(self.log_c)

    @property
    def kappa(self) -> NDArray[np.float64]:
        return self.a - self.b / 2.0


@dataclass
class WeightPosterior:
    """Gaussian posterior of one weight column: N(mean, cov)."""

    mean: NDArray[np.float64]      # (L,)
    cov: NDArray[np.float64]       # (L, L)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.cov = np.asarray(self.cov, dtype=np.float64)
        L = self.mean.shape[0]
        if self.cov.shape != (L, L):
            raise ShapeError("posterior covariance must be (L, L)")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValidationError("posterior covariance must be symmetric")

    def chol(self) -> NDArray[np.float64]:
        return _chol_jitter(self.cov)


@dataclass
class PGMatrix:
    """A matrix of Pólya-Gamma draws, one per observation entry."""

    omega: NDArray[np.float64]

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if np.any(self.omega <= 0):
            raise ValidationError("PG draws must be positive")


def likelihood_params(spec: LikelihoodSpec, Y: NDArray) -> LogisticParams:
    """Map observations to the (a, b, c) of the common likelihood form."""
    Y = np.asarray(Y, dtype=np.float64)
    spec.validate_data(Y)
    if spec.family == BERNOULLI:
        return LogisticParams(a=Y, b=np.ones_like(Y), log_c=np.zeros_like(Y))
    if spec.family == NEGATIVE_BINOMIAL:
        r = spec.dispersion_vector(Y.shape[1])[None, :]
        b = Y + r
        log_c = gammaln(Y + r) - gammaln(r) - gammaln(Y + 1.0)
        return LogisticParams(a=Y, b=b, log_c=log_c)
    raise ValidationError(f"{spec.family!r} is not a logistic family")


def weight_posterior(Phi: NDArray, omega_col: NDArray,
                     kappa_col: NDArray) -> WeightPosterior:
    """Exact conditional posterior of one weight column under a N(0, I) prior:
    V = (Phi^T diag(omega) Phi + I)^{-1}, mean = V Phi^T kappa."""
    Phi = np.asarray(Phi, dtype=np.float64)
    omega = np.asarray(omega_col, dtype=np.float64).ravel()
    kappa = np.asarray(kappa_col, dtype=np.float64).ravel()
    if Phi.shape[0] != omega.shape[0] or Phi.shape[0] != kappa.shape[0]:
        raise ShapeError("rows of Phi, omega and kappa must align")
    L = Phi.shape[1]
    prec = Phi.T @ (omega[:, None] * Phi) + np.eye(L)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - omega > 0 prevents this
        raise NumericDegeneracyError("weight precision not positive definite") from exc
    eye = np.eye(L)
    inv_chol = np.linalg.solve(chol, eye)
    cov = inv_chol.T @ inv_chol
    mean = cov @ (Phi.T @ kappa)
    return WeightPosterior(mean=mean, cov=cov)


def sample_weights(post: WeightPosterior, noise: NDArray) -> NDArray[np.float64]:
    """h = mean + chol(V) eps for fixed standard-normal noise."""
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if noise.shape != post.mean.shape:
        raise ShapeError("noise length must match the weight dimension")
    return post.mean + post.chol() @ noise


def sample_pg_matrix(H: NDArray, Phi: NDArray, params: LogisticParams,
                     rng: np.random.Generator) -> PGMatrix:
    """omega_nm ~ PG(b_nm, psi_nm) with psi = Phi H; vectorized over entries."""
    psi = np.asarray(Phi, dtype=np.float64) @ np.asarray(H, dtype=np.float64)
    if psi.shape != params.b.shape:
        raise ShapeError("Phi H shape must match the likelihood parameters")
    b = params.b
    if np.allclose(b, 1.0):
        omega = pg_sample_many(1.0, psi, None, rng)
    else:
        omega = pg_sample_many(b, psi, None, rng)
    return PGMatrix(omega=omega)


def _phi_numpy(latent: LatentState, mixture: MixtureState,
               eps_x: NDArray, eps_w: NDArray) -> NDArray[np.float64]:
    """Numpy mirror of the torch feature sampling, for stop-gradient paths."""
    x = sample_latents(latent, eps_x)
    moments = mixture.spectral_moments()
    chol = np.linalg.cholesky(moments.covs + 1e-12 * np.eye(moments.covs.shape[-1]))
    w = moments.means + np.einsum("lqr,lr->lq", chol, eps_w)
    return feature_map(x, SpectralPoints(W=w)).Phi


def draw_pg_noise(obs: ObservationSet, latent: LatentState, mixture: MixtureState,
                  spec: LikelihoodSpec, noise: rp.NoiseBundle,
                  rng: np.random.Generator,
                  init_weights: Optional[NDArray] = None) -> None:
    """Fill noise.omega with PG draws at psi = Phi^(i) H_prev (zero H default).

    Masked entries get omega = 0 so they drop out of the weight posterior.
    """
    params = likelihood_params(spec, obs.Y)
    n, m = obs.Y.shape
    L = 2 * noise.eps_w.shape[1]
    h_prev = np.zeros((L, m)) if init_weights is None else np.asarray(init_weights)
    omega = np.empty((noise.n_samples, n, m))
    for i in range(noise.n_samples):
        phi = _phi_numpy(latent, mixture, noise.eps_x[i], noise.eps_w[i])
        omega[i] = sample_pg_matrix(h_prev, phi, params, rng).omega
    omega[:, ~obs.mask] = 0.0
    noise.omega = omega


def _family_terms(spec: LikelihoodSpec, y: torch.Tensor,
                  log_r: Optional[torch.Tensor]):
    """Torch (a, b, log c, kappa); differentiable in log r for negative binomial."""
    if spec.family == BERNOULLI:
        a = y
        b = torch.ones_like(y)
        log_c = torch.zeros_like(y)
    else:
        r = torch.exp(log_r)[None, :]
        a = y
        b = y + r
        log_c = torch.lgamma(y + r) - torch.lgamma(r) - torch.lgamma(y + 1.0)
    return a, b, log_c, a - b / 2.0


def logistic_elbo_core(obs: ObservationSet, latent: LatentState,
                       mixture: MixtureState, spec: LikelihoodSpec,
                       noise: rp.NoiseBundle, want_grads: bool = False,
                       with_assignment_kl: bool = False):
    """Fixed-noise logistic ELBO: term (a) minus latent KL minus the weight
    KL term; the intractable cross term of the augmented bound is omitted.

    Returns (value, grads-or-None, last_weight_sample) where the weight
    sample (L, M) can seed the next step's PG draws.
    """
    if noise.omega is None:
        raise ValidationError("noise bundle lacks PG draws; call draw_pg_noise first")
    leaves = {**rp.latent_leaves(latent), **rp.mixture_leaves(mixture)}
    log_r = None
    if spec.family == NEGATIVE_BINOMIAL:
        log_r = rp.tensor(np.log(spec.dispersion_vector(obs.Y.shape[1])), grad=True)
        leaves["log_r"] = log_r

    y = rp.tensor(obs.Y)
    mask = rp.tensor(obs.mask.astype(np.float64))
    a, b, log_c, kappa = _family_terms(spec, y, log_r)
    kappa = kappa * mask
    m_w, chol_w = rp.spectral_moments_t(leaves)
    L = 2 * noise.eps_w.shape[1]
    eye = torch.eye(L, dtype=rp.DTYPE)

    term_a = []
    term_c = []
    h_last = None
    for i in range(noise.n_samples):
        x = rp.sample_latents_t(leaves, latent.diagonal, rp.tensor(noise.eps_x[i]))
        phi = rp.sample_features_t(x, m_w, chol_w, rp.tensor(noise.eps_w[i]))
        omega = rp.tensor(noise.omega[i])                    # (N, M), stop-grad
        prec = torch.einsum("nl,nm,nk->mlk", phi, omega, phi) + eye
        try:
            chol_p = torch.linalg.cholesky(prec)
        except torch.linalg.LinAlgError as exc:
            raise NumericDegeneracyError("weight precision not positive definite") from exc
        logdet_v = -2.0 * torch.sum(
            torch.log(torch.diagonal(chol_p, dim1=-2, dim2=-1)), dim=-1)     # (M,)
        cov = torch.cholesky_inverse(chol_p)                                 # (M, L, L)
        tr_v = torch.diagonal(cov, dim1=-2, dim2=-1).sum(-1)
        rhs = (phi.T @ kappa).T.unsqueeze(-1)                                # (M, L, 1)
        mean = torch.cholesky_solve(rhs, chol_p).squeeze(-1)                 # (M, L)
        term_c.append(0.5 * torch.sum(tr_v + torch.sum(mean ** 2, dim=1)
                                      - L - logdet_v))
        # h ~ N(mean, V): V = P^{-1}, so chol(P)^{-T} eps has covariance V
        eps_h = rp.tensor(noise.eps_h[i]).T.unsqueeze(-1)                    # (M, L, 1)
        h = mean + torch.linalg.solve_triangular(
            chol_p.transpose(1, 2), eps_h, upper=True).squeeze(-1)           # (M, L)
        h_last = h
        psi = phi @ h.T                                                      # (N, M)
        term_a.append(torch.sum(mask * (log_c + a * psi
                                        - b * torch.nn.functional.softplus(psi))))

    elbo = (torch.mean(torch.stack(term_a)) - torch.mean(torch.stack(term_c))
            - rp.latent_kl_t(leaves, latent.diagonal))
    if with_assignment_kl:
        elbo = elbo - rp.assignment_kl_t(leaves, expected_log_pi(mixture.stick))
    h_out = h_last.detach().numpy().T
    if not want_grads:
        return float(elbo.detach()), None, h_out
    return float(elbo.detach()), rp.collect_grads(elbo, leaves), h_out


def _draw_full_bundle(obs, latent, mixture, spec, n_samples, rng, init_weights=None):
    n, q = latent.mean.shape
    half = mixture.assign_logits.shape[0]
    noise = rp.draw_noise(n_samples, n, q, half, rng,
                          n_weights=2 * half, n_cols=obs.Y.shape[1])
    draw_pg_noise(obs, latent, mixture, spec, noise, rng, init_weights)
    return noise


def logistic_elbo(obs: ObservationSet, latent: LatentState, mixture: MixtureState,
                  spec: LikelihoodSpec, n_samples: int,
                  rng: np.random.Generator,
                  init_weights: Optional[NDArray] = None) -> float:
    """MC estimate of the augmented logistic ELBO."""
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    noise = _draw_full_bundle(obs, latent, mixture, spec, n_samples, rng, init_weights)
    value, _, _ = logistic_elbo_core(obs, latent, mixture, spec, noise)
    return value


def logistic_elbo_grad(obs: ObservationSet, latent: LatentState,
                       mixture: MixtureState, spec: LikelihoodSpec,
                       n_samples: int, rng: np.random.Generator,
                       init_weights: Optional[NDArray] = None) -> dict:
    """Gradients of the fixed-noise estimator (PG draws held constant)."""
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    noise = _draw_full_bundle(obs, latent, mixture, spec, n_samples, rng, init_weights)
    _, grads, _ = logistic_elbo_core(obs, latent, mixture, spec, noise,
                                     want_grads=True)
    return grads


def logistic_impute(obs: ObservationSet, latent: LatentState, mixture: MixtureState,
                    spec: LikelihoodSpec, n_samples: int,
                    rng: np.random.Generator,
                    init_weights: Optional[NDArray] = None) -> NDArray[np.float64]:
    """MC average of the family mean at masked entries; observed entries kept.

    Bernoulli mean: sigmoid(psi).  Negative binomial mean: r * exp(psi).
    """
    if n_samples < 1:
        raise ValidationError("need at least one MC sample")
    params = likelihood_params(spec, obs.Y)
    kappa = params.kappa * obs.mask
    n, m_cols = obs.Y.shape
    acc = np.zeros((n, m_cols))
    h_prev = init_weights
    for _ in range(n_samples):
        phi = _phi_numpy(latent, mixture,
                         rng.standard_normal(latent.mean.shape),
                         rng.standard_normal(mixture.assign_logits.shape[0:1]
                                             + (latent.mean.shape[1],)))
        L = phi.shape[1]
        h0 = np.zeros((L, m_cols)) if h_prev is None else h_prev
        omega = sample_pg_matrix(h0, phi, params, rng).omega
        omega[~obs.mask] = 0.0
        h = np.empty((L, m_cols))
        for m in range(m_cols):
            post = weight_posterior(phi, omega[:, m], kappa[:, m])
            h[:, m] = sample_weights(post, rng.standard_normal(L))
        h_prev = h
        psi = phi @ h
        if spec.family == BERNOULLI:
            acc += 1.0 / (1.0 + np.exp(-psi))
        else:
            r = spec.dispersion_vector(m_cols)[None, :]
            acc += r * np.exp(np.clip(psi, -700, 700))
    out = obs.Y.copy()
    out[~obs.mask] = (acc / n_samples)[~obs.mask]
    return out
