"""Shared torch plumbing for reparameterized Monte Carlo ELBO estimators.

All randomness is drawn with numpy generators and handed to torch as fixed
noise tensors, so value and gradient passes share common random numbers and
results are bitwise reproducible for a given seed.  Everything runs in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .dp_mixture import MixtureState
from .latent_state import LatentState

DTYPE = torch.float64


def tensor(x, grad: bool = False) -> torch.Tensor:
    t = torch.tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)
    if grad:
        t.requires_grad_(True)
    return t


@dataclass
class NoiseBundle:
    """Fixed standard-normal (and optionally Pólya-Gamma) noise for I MC samples."""

    eps_x: np.ndarray                     # (I, N, Q)
    eps_w: np.ndarray                     # (I, L/2, Q)
    eps_h: Optional[np.ndarray] = None    # (I, L, M), logistic weight draws
    omega: Optional[np.ndarray] = None    # (I, N, M), Pólya-Gamma draws

    @property
    def n_samples(self) -> int:
        return self.eps_x.shape[0]


def draw_noise(n_samples: int, n: int, q: int, half: int,
               rng: np.random.Generator,
               n_weights: int = 0, n_cols: int = 0) -> NoiseBundle:
    """Draw the Gaussian parts of a noise bundle (PG draws are made later,
    since they depend on the current linear predictor)."""
    eps_x = rng.standard_normal((n_samples, n, q))
    eps_w = rng.standard_normal((n_samples, half, q))
    eps_h = None
    if n_weights:
        eps_h = rng.standard_normal((n_samples, n_weights, n_cols))
    return NoiseBundle(eps_x=eps_x, eps_w=eps_w, eps_h=eps_h)


def latent_leaves(latent: LatentState) -> dict[str, torch.Tensor]:
    leaves = {"latent_mean": tensor(latent.mean, grad=True)}
    if latent.diagonal:
        leaves["latent_scale"] = tensor(latent.log_scale, grad=True)
    else:
        leaves["latent_scale"] = tensor(latent.chol, grad=True)
    return leaves


def mixture_leaves(mixture: MixtureState) -> dict[str, torch.Tensor]:
    return {
        "logits": tensor(mixture.assign_logits, grad=True),
        "comp_means": tensor(mixture.components.means, grad=True),
        "comp_chols": tensor(mixture.components.chol_factors, grad=True),
    }


def sample_latents_t(leaves: dict, diagonal: bool, eps_x: torch.Tensor) -> torch.Tensor:
    """x = mu + R eps for one MC sample; differentiable in the leaves."""
    mean = leaves["latent_mean"]
    scale = leaves["latent_scale"]
    if diagonal:
        return mean + torch.exp(scale) * eps_x
    return mean + torch.einsum("nqr,nr->nq", torch.tril(scale), eps_x)


def spectral_moments_t(leaves: dict) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-frequency mixture moments (m_l, chol(V_l)) from the mixture leaves."""
    phi = torch.softmax(leaves["logits"], dim=1)                  # (L/2, K)
    chols = torch.tril(leaves["comp_chols"])
    covs = chols @ chols.transpose(1, 2)                          # (K, Q, Q)
    m = phi @ leaves["comp_means"]                                # (L/2, Q)
    v = torch.einsum("lk,kqr->lqr", phi, covs)                    # (L/2, Q, Q)
    q = v.shape[-1]
    jitter = 1e-12 * torch.eye(q, dtype=DTYPE)
    return m, torch.linalg.cholesky(v + jitter)


def sample_features_t(x: torch.Tensor, m_w: torch.Tensor, chol_w: torch.Tensor,
                      eps_w: torch.Tensor) -> torch.Tensor:
    """Feature matrix Phi of one MC sample: reparameterized frequencies,
    interleaved sin/cos columns, rows scaled to unit norm."""
    w = m_w + torch.einsum("lqr,lr->lq", chol_w, eps_w)           # (L/2, Q)
    angles = x @ w.T                                              # (N, L/2)
    feats = torch.stack((torch.sin(angles), torch.cos(angles)), dim=-1)
    n = x.shape[0]
    half = w.shape[0]
    return feats.reshape(n, 2 * half) * np.sqrt(1.0 / half)


def latent_kl_t(leaves: dict, diagonal: bool) -> torch.Tensor:
    """KL(q(X) || N(0, I)) on the torch graph."""
    mean = leaves["latent_mean"]
    scale = leaves["latent_scale"]
    n, q = mean.shape
    mu_sq = torch.sum(mean ** 2)
    if diagonal:
        tr = torch.sum(torch.exp(2.0 * scale))
        logdet = 2.0 * torch.sum(scale)
    else:
        tril = torch.tril(scale)
        tr = torch.sum(tril ** 2)
        logdet = 2.0 * torch.sum(torch.log(torch.diagonal(tril, dim1=1, dim2=2)))
    return 0.5 * (tr + mu_sq - logdet - n * q)


def assignment_kl_t(leaves: dict, e_log_pi: np.ndarray) -> torch.Tensor:
    """Sum_l KL-like term of the assignments against expected stick log-weights."""
    log_phi = torch.log_softmax(leaves["logits"], dim=1)
    phi = torch.exp(log_phi)
    return torch.sum(phi * (log_phi - tensor(e_log_pi)))


def collect_grads(value: torch.Tensor, leaves: dict) -> dict[str, np.ndarray]:
    """Ascent-direction gradients of `value` with respect to every leaf."""
    names = list(leaves)
    grads = torch.autograd.grad(value, [leaves[k] for k in names],
                                allow_unused=True)
    out = {}
    for name, g in zip(names, grads):
        out[name] = (np.zeros(tuple(leaves[name].shape)) if g is None
                     else g.detach().numpy())
    return out
