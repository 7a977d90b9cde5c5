"""Block-coordinate-descent variational inference orchestrator.

Each outer iteration runs three phases:

1. likelihood block — Adam ascent on the latent means/scales, mixture
   component parameters and the likelihood hyperparameter (noise variance
   or dispersion), using the reparameterized MC ELBO gradient;
2. assignment block — Adam ascent on the assignment logits against the
   MC likelihood term minus the assignment KL;
3. conjugate block — closed-form coordinate updates of the stick Beta
   parameters and the concentration Gamma posterior.

All randomness flows through one numpy Generator, so a (data, config) pair
determines every output bitwise, independent of worker count.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _reparam as rp
from .dp_mixture import (MixtureState, StickState, alpha_objective, stick_objective,
                         update_alpha, update_v)
from .errors import NumericDegeneracyError, ValidationError
from .gaussian_block import (GaussianLikelihood, ObservationSet,
                             gaussian_elbo_core, NOISE_VAR_MIN, NOISE_VAR_MAX)
from .latent_state import LatentState
from .likelihoods import GAUSSIAN, NEGATIVE_BINOMIAL, LikelihoodSpec
from .logistic_block import draw_pg_noise, logistic_elbo_core

PER_STEP = "per_step"
PER_OUTER = "per_outer"


@dataclass
class FitConfig:
    """Hyperparameters of a fitting run."""

    n_latent: int = 2                 # Q
    n_features: int = 100             # L, even
    n_clusters: int = 20              # K, truncation level
    likelihood: LikelihoodSpec = field(default_factory=LikelihoodSpec)
    mc_samples: int = 5               # I
    outer_iters: int = 200            # T
    likelihood_block_steps: int = 50  # T1
    z_block_steps: int = 20           # T2
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    convergence_tol: float = 1e-4
    convergence_window: int = 10
    resample_mode: str = PER_STEP
    latent_cov: str = "diagonal"      # or "full"
    standardize: bool = True          # Gaussian family only
    fix_spectral: bool = False        # freeze the spectral mixture (RBF-style baseline)
    alpha0: float = 1.0
    beta0: float = 1.0
    init_scale: float = 0.1
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    debug_monotonicity: bool = False

    def __post_init__(self):
        if self.n_features % 2 != 0:
            raise ValidationError("feature count must be even")
        if min(self.n_latent, self.n_clusters) < 1:
            raise ValidationError("latent dimension and cluster count must be >= 1")
        if min(self.outer_iters, self.likelihood_block_steps, self.z_block_steps,
               self.mc_samples) < 1:
            raise ValidationError("iteration and sample counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0.0 <= beta < 1.0:
                raise ValidationError("Adam decay rates must lie in [0, 1)")
        if self.resample_mode not in (PER_STEP, PER_OUTER):
            raise ValidationError(f"unknown resample mode {self.resample_mode!r}")
        if self.latent_cov not in ("diagonal", "full"):
            raise ValidationError(f"unknown latent covariance mode {self.latent_cov!r}")


@dataclass
class FitReport:
    """Summary of one fitting run."""

    elbo_trace: list[float] = field(default_factory=list)
    wall_time_seconds: float = 0.0
    converged: bool = False
    expected_alpha: float = float("nan")
    occupancy: list[float] = field(default_factory=list)
    standardized: bool = False
    column_means: Optional[list[float]] = None
    column_stds: Optional[list[float]] = None
    aborted: Optional[str] = None


@dataclass
class FitResult:
    latent: LatentState
    mixture: MixtureState
    likelihood: GaussianLikelihood | LikelihoodSpec
    report: FitReport
    weights: Optional[NDArray[np.float64]] = None  # last H sample (logistic)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per named parameter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam ascent step, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name])
        if p.shape != g.shape:
            raise ValidationError(f"gradient shape mismatch for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1 ** t)
        v_hat = state.v[name] / (1.0 - beta2 ** t)
        p += lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def partition_check(config: FitConfig) -> list[dict]:
    """Describe the variational blocks and the solver each one uses."""
    lik_vars = ["latent_means", "latent_scales", "component_means",
                "component_covariances"]
    if config.likelihood.family == GAUSSIAN:
        lik_vars.append("noise_variance")
    else:
        lik_vars.append("weights_H (exact-posterior sampling)")
        if config.likelihood.family == NEGATIVE_BINOMIAL:
            lik_vars.append("dispersion")
    return [
        {"name": "likelihood", "variables": lik_vars, "solver": "RGVI"},
        {"name": "assignments", "variables": ["assignment_logits"], "solver": "RGVI"},
        {"name": "sticks", "variables": ["stick_betas"], "solver": "MFVI"},
        {"name": "concentration", "variables": ["concentration_gamma"], "solver": "MFVI"},
    ]


def _init_latent(Y: NDArray, mask: NDArray, config: FitConfig) -> LatentState:
    filled = Y.copy()
    if not mask.all():
        col_mean = np.where(mask, Y, 0.0).sum(axis=0) / np.maximum(mask.sum(axis=0), 1)
        filled[~mask] = np.broadcast_to(col_mean, Y.shape)[~mask]
    state = LatentState.from_pca(filled, config.n_latent, config.init_scale)
    if config.latent_cov == "full":
        n, q = state.mean.shape
        chol = np.broadcast_to(config.init_scale * np.eye(q), (n, q, q)).copy()
        state = LatentState(mean=state.mean, chol=chol)
    return state


def _standardize(obs: ObservationSet) -> tuple[ObservationSet, NDArray, NDArray]:
    """Column-standardize using observed entries only."""
    cnt = np.maximum(obs.mask.sum(axis=0), 1)
    mean = np.where(obs.mask, obs.Y, 0.0).sum(axis=0) / cnt
    centered = np.where(obs.mask, obs.Y - mean, 0.0)
    std = np.sqrt((centered ** 2).sum(axis=0) / cnt)
    std = np.where(std > 1e-12, std, 1.0)
    return ObservationSet(Y=(obs.Y - mean) / std, mask=obs.mask.copy()), mean, std


def _likelihood_param_names(config: FitConfig) -> list[str]:
    names = ["latent_mean", "latent_scale"]
    if not config.fix_spectral:
        names += ["comp_means", "comp_chols"]
    if config.likelihood.family == GAUSSIAN:
        names.append("log_noise")
    elif config.likelihood.family == NEGATIVE_BINOMIAL:
        names.append("log_r")
    return names


class _Trainer:
    """Mutable fitting state shared by the block phases and checkpointing."""

    def __init__(self, obs: ObservationSet, config: FitConfig):
        config.likelihood.validate_data(obs.Y)
        self.config = config
        self.report = FitReport()
        if config.likelihood.family == GAUSSIAN and config.standardize:
            obs, mean, std = _standardize(obs)
            self.report.standardized = True
            self.report.column_means = [float(v) for v in mean]
            self.report.column_stds = [float(v) for v in std]
        self.obs = obs
        self.rng = np.random.default_rng(config.seed)
        self.latent = _init_latent(obs.Y, obs.mask, config)
        self.mixture = MixtureState.init_random(
            config.n_features // 2, config.n_clusters, config.n_latent, self.rng,
            config.alpha0, config.beta0)
        if config.fix_spectral:
            # standard-normal spectral density (a plain RBF kernel)
            self.mixture.components.means[:] = 0.0
        self.log_noise = np.array(0.0)
        self.log_r = np.log(config.likelihood.dispersion_vector(obs.Y.shape[1])) \
            if config.likelihood.family == NEGATIVE_BINOMIAL else None
        self.weights = None
        self.adam_lik = AdamState()
        self.adam_z = AdamState()
        self.outer_done = 0

    # -- parameter plumbing -------------------------------------------------

    def _params(self, names: list[str]) -> dict:
        table = {
            "latent_mean": self.latent.mean,
            "latent_scale": (self.latent.log_scale if self.latent.diagonal
                             else self.latent.chol),
            "comp_means": self.mixture.components.means,
            "comp_chols": self.mixture.components.chol_factors,
            "logits": self.mixture.assign_logits,
            "log_noise": self.log_noise,
            "log_r": self.log_r,
        }
        return {k: table[k] for k in names}

    def _clamp(self) -> None:
        self.latent.clamp()
        diag = np.einsum("kii->ki", self.mixture.components.chol_factors)
        np.clip(diag, 1e-8, None, out=diag)
        self.mixture.components.chol_factors[:] = np.tril(
            self.mixture.components.chol_factors)
        # keep a 0-d array (not a numpy scalar) so Adam's in-place update sticks
        self.log_noise = np.array(np.clip(float(self.log_noise),
                                          np.log(NOISE_VAR_MIN),
                                          np.log(NOISE_VAR_MAX)))

    def _spec_now(self) -> LikelihoodSpec:
        cfg = self.config.likelihood
        if cfg.family == NEGATIVE_BINOMIAL:
            return LikelihoodSpec(family=cfg.family, dispersion=np.exp(self.log_r))
        return cfg

    # -- ELBO evaluation ----------------------------------------------------

    def _draw_bundle(self):
        n, q = self.latent.mean.shape
        half = self.config.n_features // 2
        is_log = self.config.likelihood.is_logistic
        noise = rp.draw_noise(self.config.mc_samples, n, q, half, self.rng,
                              n_weights=2 * half if is_log else 0,
                              n_cols=self.obs.Y.shape[1] if is_log else 0)
        if is_log:
            draw_pg_noise(self.obs, self.latent, self.mixture, self._spec_now(),
                          noise, self.rng, self.weights)
        return noise

    def _elbo(self, noise, want_grads: bool, with_z: bool):
        if self.config.likelihood.is_logistic:
            value, grads, h = logistic_elbo_core(
                self.obs, self.latent, self.mixture, self._spec_now(), noise,
                want_grads=want_grads, with_assignment_kl=with_z)
            self.weights = h
            return value, grads
        value, grads = gaussian_elbo_core(
            self.obs, self.latent, self.mixture, float(self.log_noise), noise,
            want_grads=want_grads, with_assignment_kl=with_z)
        return value, grads

    # -- the three phases ---------------------------------------------------

    def likelihood_phase(self) -> list[float]:
        cfg = self.config
        names = _likelihood_param_names(cfg)
        values = []
        noise = self._draw_bundle() if cfg.resample_mode == PER_OUTER else None
        for _ in range(cfg.likelihood_block_steps):
            step_noise = noise if noise is not None else self._draw_bundle()
            value, grads = self._elbo(step_noise, want_grads=True, with_z=False)
            values.append(value)
            params = self._params(names)
            adam_step(params, {k: grads[k] for k in names}, self.adam_lik,
                      cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                      cfg.adam_eps)
            if "log_noise" in names:
                self.log_noise = params["log_noise"]
            if "log_r" in names:
                self.log_r = params["log_r"]
            self._clamp()
        return values

    def z_phase(self) -> None:
        cfg = self.config
        if cfg.fix_spectral or cfg.n_clusters == 1:
            return
        noise = self._draw_bundle() if cfg.resample_mode == PER_OUTER else None
        for _ in range(cfg.z_block_steps):
            step_noise = noise if noise is not None else self._draw_bundle()
            _, grads = self._elbo(step_noise, want_grads=True, with_z=True)
            params = self._params(["logits"])
            adam_step(params, {"logits": grads["logits"]}, self.adam_z,
                      cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                      cfg.adam_eps)

    def conjugate_phase(self) -> None:
        stick = self.mixture.stick
        phi = self.mixture.assignments
        if self.config.debug_monotonicity:
            before = stick_objective(phi, stick)
        a_v, b_v = update_v(phi, stick.expected_alpha())
        stick.a_v, stick.b_v = a_v, b_v
        if self.config.debug_monotonicity:
            after = stick_objective(phi, stick)
            if after < before - 1e-10:
                raise NumericDegeneracyError("stick update decreased its objective")
            before_a = alpha_objective(stick)
        a_alpha, b_alpha = update_alpha(stick)
        stick.a_alpha, stick.b_alpha = a_alpha, b_alpha
        if self.config.debug_monotonicity:
            if alpha_objective(stick) < before_a - 1e-10:
                raise NumericDegeneracyError(
                    "concentration update decreased its objective")

    # -- checkpointing ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "outer_done": self.outer_done,
            "elbo_trace": list(self.report.elbo_trace),
            "latent_mean": self.latent.mean.tolist(),
            "latent_scale": (self.latent.log_scale if self.latent.diagonal
                             else self.latent.chol).tolist(),
            "latent_diagonal": self.latent.diagonal,
            "comp_means": self.mixture.components.means.tolist(),
            "comp_chols": self.mixture.components.chol_factors.tolist(),
            "logits": self.mixture.assign_logits.tolist(),
            "stick": {
                "a_v": self.mixture.stick.a_v.tolist(),
                "b_v": self.mixture.stick.b_v.tolist(),
                "a_alpha": self.mixture.stick.a_alpha,
                "b_alpha": self.mixture.stick.b_alpha,
                "alpha0": self.mixture.stick.alpha0,
                "beta0": self.mixture.stick.beta0,
            },
            "log_noise": float(self.log_noise),
            "log_r": None if self.log_r is None else self.log_r.tolist(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "adam_lik": _adam_to_json(self.adam_lik),
            "adam_z": _adam_to_json(self.adam_z),
            "rng_state": _rng_state_to_json(self.rng),
            "standardized": self.report.standardized,
            "column_means": self.report.column_means,
            "column_stds": self.report.column_stds,
        }

    def load_state_dict(self, state: dict) -> None:
        self.outer_done = int(state["outer_done"])
        self.report.elbo_trace = [float(v) for v in state["elbo_trace"]]
        mean = np.array(state["latent_mean"])
        scale = np.array(state["latent_scale"])
        if state["latent_diagonal"]:
            self.latent = LatentState(mean=mean, log_scale=scale)
        else:
            self.latent = LatentState(mean=mean, chol=scale)
        comps = self.mixture.components
        comps.means[:] = np.array(state["comp_means"])
        comps.chol_factors[:] = np.array(state["comp_chols"])
        self.mixture.assign_logits[:] = np.array(state["logits"])
        st = state["stick"]
        self.mixture.stick = StickState(
            a_v=np.array(st["a_v"]), b_v=np.array(st["b_v"]),
            a_alpha=float(st["a_alpha"]), b_alpha=float(st["b_alpha"]),
            alpha0=float(st["alpha0"]), beta0=float(st["beta0"]))
        self.log_noise = np.array(float(state["log_noise"]))
        self.log_r = None if state["log_r"] is None else np.array(state["log_r"])
        self.weights = None if state["weights"] is None else np.array(state["weights"])
        self.adam_lik = _adam_from_json(state["adam_lik"])
        self.adam_z = _adam_from_json(state["adam_z"])
        self.rng.bit_generator.state = _rng_state_from_json(state["rng_state"])
        self.report.standardized = bool(state["standardized"])
        self.report.column_means = state["column_means"]
        self.report.column_stds = state["column_stds"]


def _adam_to_json(state: AdamState) -> dict:
    return {"step": state.step,
            "m": {k: v.tolist() for k, v in state.m.items()},
            "v": {k: v.tolist() for k, v in state.v.items()}}


def _adam_from_json(d: dict) -> AdamState:
    return AdamState(step=int(d["step"]),
                     m={k: np.array(v) for k, v in d["m"].items()},
                     v={k: np.array(v) for k, v in d["v"].items()})


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    out = json.loads(json.dumps(state, default=int))
    return out


def _rng_state_from_json(d: dict) -> dict:
    state = dict(d)
    if "state" in state and isinstance(state["state"], dict):
        inner = dict(state["state"])
        for key in ("state", "inc"):
            if key in inner:
                inner[key] = int(inner[key])
        if "key" in inner:
            inner["key"] = np.array(inner["key"], dtype=np.uint64)
        state["state"] = inner
    return state


def save_checkpoint(path: str, state: dict) -> None:
    """Atomic JSON dump (write to a temp file, then rename)."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(state, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def fit(obs, config: FitConfig, resume_from: Optional[str] = None,
        progress=None) -> FitResult:
    """Run block-coordinate-descent variational inference.

    `obs` is an ObservationSet or a plain (N, M) array.  `progress`, if
    given, is called as progress(outer_index, elbo, elapsed_seconds) after
    every outer iteration.
    """
    if not isinstance(obs, ObservationSet):
        obs = ObservationSet(Y=np.asarray(obs, dtype=np.float64))
    trainer = _Trainer(obs, config)
    if resume_from is not None:
        trainer.load_state_dict(load_checkpoint(resume_from))
    report = trainer.report
    start = time.perf_counter()
    window = config.convergence_window
    try:
        for t in range(trainer.outer_done, config.outer_iters):
            values = trainer.likelihood_phase()
            trainer.z_phase()
            if not config.fix_spectral:
                trainer.conjugate_phase()
            report.elbo_trace.append(float(np.mean(values)))
            trainer.outer_done = t + 1
            elapsed = time.perf_counter() - start
            if progress is not None:
                progress(t, report.elbo_trace[-1], elapsed)
            if (config.checkpoint_every and config.checkpoint_path
                    and (t + 1) % config.checkpoint_every == 0):
                save_checkpoint(config.checkpoint_path, trainer.state_dict())
            if len(report.elbo_trace) >= 2 * window:
                recent = np.mean(report.elbo_trace[-window:])
                previous = np.mean(report.elbo_trace[-2 * window:-window])
                rel = abs(recent - previous) / max(1.0, abs(previous))
                if rel < config.convergence_tol:
                    report.converged = True
                    break
    except NumericDegeneracyError as exc:
        report.aborted = str(exc)
        raise
    finally:
        report.wall_time_seconds = time.perf_counter() - start
        report.expected_alpha = trainer.mixture.stick.expected_alpha()
        report.occupancy = [float(v) for v in trainer.mixture.occupancy()]

    likelihood: GaussianLikelihood | LikelihoodSpec
    if config.likelihood.family == GAUSSIAN:
        likelihood = GaussianLikelihood(log_noise_var=float(trainer.log_noise))
    else:
        likelihood = trainer._spec_now()
    return FitResult(latent=trainer.latent, mixture=trainer.mixture,
                     likelihood=likelihood, report=report,
                     weights=trainer.weights)
