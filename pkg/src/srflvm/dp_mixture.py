"""Truncated stick-breaking Dirichlet-process mixture over spectral frequencies.

The mixture state consists of K Gaussian components (means and covariance
Cholesky factors), per-frequency assignment probabilities, truncated stick
Beta parameters and a Gamma posterior for the concentration.  Sticks and
concentration admit closed-form conjugate coordinate updates; assignments
are optimized by gradient on unconstrained logits elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import digamma, gammaln, softmax

from .errors import NumericDegeneracyError, ShapeError, ValidationError
from .features import SpectralMoments

_CHOL_DIAG_FLOOR = 1e-8


@dataclass
class MixtureComponents:
    """Gaussian mixture components parameterized by covariance Cholesky factors."""

    means: NDArray[np.float64]        # (K, Q)
    chol_factors: NDArray[np.float64]  # (K, Q, Q), lower triangular, positive diagonal

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.chol_factors = np.asarray(self.chol_factors, dtype=np.float64)
        if self.means.ndim != 2:
            raise ShapeError(f"component means must be (K, Q), got {self.means.shape}")
        k, q = self.means.shape
        if self.chol_factors.shape != (k, q, q):
            raise ShapeError(f"Cholesky factors must be {(k, q, q)}, got {self.chol_factors.shape}")
        self.chol_factors = np.tril(self.chol_factors)
        diag = np.einsum("kii->ki", self.chol_factors)
        if np.any(diag < _CHOL_DIAG_FLOOR):
            raise ValidationError("Cholesky diagonals must be >= 1e-8")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def covariances(self) -> NDArray[np.float64]:
        return self.chol_factors @ np.swapaxes(self.chol_factors, 1, 2)


@dataclass
class Assignments:
    """Per-frequency assignment probabilities q(z_l = k); rows on the simplex."""

    phi: NDArray[np.float64]  # (L/2, K)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 2:
            raise ShapeError(f"assignments must be (L/2, K), got {self.phi.shape}")
        if np.any(self.phi < -1e-12):
            raise ValidationError("assignment probabilities must be nonnegative")
        rows = self.phi.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-10):
            raise ValidationError("assignment rows must sum to 1 within 1e-10")

    @classmethod
    def from_logits(cls, logits: NDArray) -> "Assignments":
        return cls(phi=softmax(np.asarray(logits, dtype=np.float64), axis=1))


@dataclass
class StickState:
    """Beta parameters for the sticks plus the Gamma concentration posterior."""

    a_v: NDArray[np.float64]
    b_v: NDArray[np.float64]
    a_alpha: float
    b_alpha: float
    alpha0: float = 1.0
    beta0: float = 1.0

    def __post_init__(self):
        self.a_v = np.atleast_1d(np.asarray(self.a_v, dtype=np.float64))
        self.b_v = np.atleast_1d(np.asarray(self.b_v, dtype=np.float64))
        if self.a_v.shape != self.b_v.shape:
            raise ShapeError("a_v and b_v must have equal length")
        params = [self.a_alpha, self.b_alpha, self.alpha0, self.beta0]
        if np.any(self.a_v <= 0) or np.any(self.b_v <= 0) or any(p <= 0 for p in params):
            raise ValidationError("all stick/concentration parameters must be positive")

    @property
    def n_components(self) -> int:
        return self.a_v.shape[0]

    def expected_alpha(self) -> float:
        return self.a_alpha / self.b_alpha

    @classmethod
    def uniform(cls, k: int, alpha0: float = 1.0, beta0: float = 1.0) -> "StickState":
        return cls(a_v=np.ones(k), b_v=np.ones(k), a_alpha=alpha0, b_alpha=beta0,
                   alpha0=alpha0, beta0=beta0)


@dataclass
class MixtureState:
    """Complete DP-mixture state: components, assignments and sticks."""

    components: MixtureComponents
    assign_logits: NDArray[np.float64]  # (L/2, K), unconstrained
    stick: StickState

    def __post_init__(self):
        self.assign_logits = np.asarray(self.assign_logits, dtype=np.float64)
        k = self.components.n_components
        if self.assign_logits.ndim != 2 or self.assign_logits.shape[1] != k:
            raise ShapeError("assignment logits must be (L/2, K)")
        if self.stick.n_components != k:
            raise ShapeError("stick truncation must match component count")

    @property
    def assignments(self) -> Assignments:
        return Assignments.from_logits(self.assign_logits)

    def spectral_moments(self) -> SpectralMoments:
        return mixture_moments(self.assignments, self.components)

    def occupancy(self) -> NDArray[np.float64]:
        """Soft counts per component, sum over frequencies of phi_lk."""
        return self.assignments.phi.sum(axis=0)

    @classmethod
    def init_random(cls, n_half: int, k: int, q: int, rng: np.random.Generator,
                    alpha0: float = 1.0, beta0: float = 1.0) -> "MixtureState":
        comps = MixtureComponents(
            means=rng.standard_normal((k, q)),
            chol_factors=np.broadcast_to(np.eye(q), (k, q, q)).copy(),
        )
        return cls(components=comps, assign_logits=np.zeros((n_half, k)),
                   stick=StickState.uniform(k, alpha0, beta0))


def stick_log_moments(stick: StickState) -> tuple[NDArray, NDArray]:
    """(E[log v_k], E[log(1 - v_k)]) under the Beta stick posteriors."""
    total = digamma(stick.a_v + stick.b_v)
    return digamma(stick.a_v) - total, digamma(stick.b_v) - total


def expected_log_pi(stick: StickState) -> NDArray[np.float64]:
    """E[log pi_k] = E[log v_k] + sum_{j<k} E[log(1 - v_j)]."""
    e_log_v, e_log_1mv = stick_log_moments(stick)
    prefix = np.concatenate(([0.0], np.cumsum(e_log_1mv)[:-1]))
    return e_log_v + prefix


def mixture_moments(phi: Assignments, comps: MixtureComponents) -> SpectralMoments:
    """Moment-matched Gaussian per frequency: convex combinations of components."""
    if phi.phi.shape[1] != comps.n_components:
        raise ShapeError("assignments and components disagree on K")
    means = phi.phi @ comps.means
    covs = np.einsum("lk,kqr->lqr", phi.phi, comps.covariances())
    return SpectralMoments(means=means, covs=covs)


def update_v(phi: Assignments, expected_alpha: float) -> tuple[NDArray, NDArray]:
    """Closed-form Beta update for the sticks given soft assignment counts."""
    if expected_alpha <= 0:
        raise ValidationError("expected_alpha must be positive")
    counts = phi.phi.sum(axis=0)                 # (K,)
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0.0]))
    return 1.0 + counts, expected_alpha + tail


def update_alpha(stick: StickState) -> tuple[float, float]:
    """Closed-form Gamma update for the concentration posterior."""
    _, e_log_1mv = stick_log_moments(stick)
    b_alpha = stick.beta0 - float(e_log_1mv.sum())
    if b_alpha <= 0:
        raise NumericDegeneracyError("degenerate concentration rate")
    return stick.alpha0, b_alpha


def assignment_kl(phi: Assignments, stick: StickState) -> float:
    """Cross-entropy form of KL[q(z) || p(z | v)] under expected stick log-weights.

    Can be negative because the expected log-probabilities need not
    normalize; finiteness is the only guarantee.
    """
    e_log_pi = expected_log_pi(stick)
    p = phi.phi
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(ent.sum() - (p * e_log_pi).sum())


def sample_alpha(stick: StickState, rng: np.random.Generator) -> float:
    """One concentration draw from its Gamma posterior (reporting only)."""
    return float(rng.gamma(shape=stick.a_alpha, scale=1.0 / stick.b_alpha))


# Analytic local objectives, used to assert monotonicity of the conjugate
# updates (and by the debug mode of the optimizer).

def _beta_log_norm(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def stick_objective(phi: Assignments, stick: StickState) -> float:
    """Local ELBO terms that depend on the stick Beta parameters.

    The stick prior enters as (1 - v_k)^(alpha - 1); its alpha-only
    normalizer is constant in the stick parameters and omitted.
    """
    e_log_v, e_log_1mv = stick_log_moments(stick)
    e_log_pi = expected_log_pi(stick)
    e_alpha = stick.expected_alpha()

    cross = float((phi.phi * e_log_pi).sum())
    log_prior = (e_alpha - 1.0) * float(e_log_1mv.sum())
    # -E_q[log q(v)]
    entropy = float(np.sum(
        _beta_log_norm(stick.a_v, stick.b_v)
        - (stick.a_v - 1.0) * e_log_v
        - (stick.b_v - 1.0) * e_log_1mv
    ))
    return cross + log_prior + entropy


def alpha_objective(stick: StickState) -> float:
    """Local ELBO terms that depend on the concentration Gamma parameters.

    Uses the same (1 - v)^(alpha - 1) stick-prior convention as
    `stick_objective`, under which the closed-form update Ga(alpha0,
    beta0 - sum E[log(1 - v_k)]) is the exact coordinate maximizer.
    """
    _, e_log_1mv = stick_log_moments(stick)
    e_alpha = stick.expected_alpha()
    e_log_alpha = digamma(stick.a_alpha) - np.log(stick.b_alpha)

    # E[log p(alpha)] + the alpha-dependent stick terms, minus E[log q(alpha)]
    log_prior = (stick.alpha0 - 1.0) * e_log_alpha - stick.beta0 * e_alpha
    log_stick = e_alpha * float(e_log_1mv.sum())
    entropy = (stick.a_alpha - np.log(stick.b_alpha) + gammaln(stick.a_alpha)
               + (1.0 - stick.a_alpha) * digamma(stick.a_alpha))
    return float(log_prior + log_stick + entropy)
