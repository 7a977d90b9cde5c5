"""Command-line front end: generate / fit / impute / eval.

One JSON config per run, with top-level sections "data", "model",
"optimizer" and "eval"; unknown keys anywhere are hard errors.  Exit codes:
0 success, 2 validation or parse error, 3 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .bcd_vi import (FitConfig, FitResult, fit, load_checkpoint, save_checkpoint,
                     _Trainer)
from .datasets import (MissingMaskSpec, SyntheticSpec, generate_clusters,
                       generate_scurve, load_csv, load_idx, make_mask, save_csv)
from .errors import NumericDegeneracyError, SrflvmError, ValidationError
from .evalkit import EvalReport, imputation_mse, kernel_recovery, knn_cv, procrustes
from .gaussian_block import GaussianLikelihood, ObservationSet, gaussian_impute
from .likelihoods import GAUSSIAN, NEGATIVE_BINOMIAL, LikelihoodSpec
from .logistic_block import logistic_impute

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERACY = 3

_TOP_KEYS = {"data", "model", "optimizer", "eval"}

_DATA_KEYS = {"type", "n_obs", "n_dims", "noise_std", "seed", "family",
              "dispersion", "n_clusters", "separation", "output_dir",
              "y", "mask", "labels", "x_true", "k_true", "y_true", "state",
              "latents", "imputed", "rbf_output", "rbf_length",
              "periodic_output", "periodic_length", "period",
              "mask_fraction", "mask_seed", "images", "format"}

_MODEL_KEYS = {"n_latent", "n_features", "n_clusters", "family", "dispersion",
               "latent_cov", "standardize", "fix_spectral"}

_OPTIMIZER_KEYS = {"mc_samples", "outer_iters", "likelihood_block_steps",
                   "z_block_steps", "learning_rate", "adam_beta1", "adam_beta2",
                   "adam_eps", "seed", "convergence_tol", "convergence_window",
                   "resample_mode", "checkpoint_every", "alpha0", "beta0",
                   "init_scale", "debug_monotonicity"}

_EVAL_KEYS = {"knn_k", "folds", "seed", "l_eval", "metrics"}


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError("config root must be a JSON object")
    _reject_unknown(config, _TOP_KEYS, "top level")
    for section, allowed in (("data", _DATA_KEYS), ("model", _MODEL_KEYS),
                             ("optimizer", _OPTIMIZER_KEYS), ("eval", _EVAL_KEYS)):
        if section in config:
            if not isinstance(config[section], dict):
                raise ValidationError(f"section {section!r} must be an object")
            _reject_unknown(config[section], allowed, f"section {section!r}")
    return config


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ValidationError(f"unknown key(s) {unknown} in {where}")


def _seed_override(value: int) -> int:
    env = os.environ.get("SRFLVM_SEED")
    if env is None:
        return value
    try:
        return int(env)
    except ValueError as exc:
        raise ValidationError("SRFLVM_SEED must be an integer") from exc


def _likelihood_from(section: dict) -> LikelihoodSpec:
    return LikelihoodSpec(family=section.get("family", GAUSSIAN),
                          dispersion=section.get("dispersion", 1.0))


def _output_dir(data: dict) -> str:
    out = data.get("output_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path: str, payload: dict) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    import tempfile
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_generate(config: dict, args) -> int:
    data = config.get("data", {})
    seed = _seed_override(int(data.get("seed", 0)))
    out = _output_dir(data)
    kind = data.get("type", "scurve")
    likelihood = _likelihood_from(data)
    if kind == "scurve":
        spec = SyntheticSpec(
            n_obs=int(data.get("n_obs", 500)), n_dims=int(data.get("n_dims", 100)),
            rbf_output=float(data.get("rbf_output", 0.5)),
            rbf_length=float(data.get("rbf_length", 1.0)),
            periodic_output=float(data.get("periodic_output", 0.5)),
            periodic_length=float(data.get("periodic_length", 1.0)),
            period=float(data.get("period", 4.5)),
            noise_std=float(data.get("noise_std", 0.1)),
            seed=seed, likelihood=likelihood)
        x_true, y, k_true = generate_scurve(spec)
        labels = None
    elif kind == "clusters":
        x_true, y, labels = generate_clusters(
            n_obs=int(data.get("n_obs", 150)), n_dims=int(data.get("n_dims", 30)),
            n_clusters=int(data.get("n_clusters", 2)),
            separation=float(data.get("separation", 4.0)),
            seed=seed, likelihood=likelihood,
            noise_std=float(data.get("noise_std", 0.1)))
        k_true = x_true @ x_true.T
    else:
        raise ValidationError(f"unknown synthetic data type {kind!r}")
    save_csv(os.path.join(out, "X_true.csv"), x_true)
    save_csv(os.path.join(out, "Y.csv"), y)
    save_csv(os.path.join(out, "K_true.csv"), k_true)
    if labels is not None:
        save_csv(os.path.join(out, "labels.csv"), labels[:, None].astype(float))
    fraction = float(data.get("mask_fraction", 0.0))
    if fraction > 0:
        mask = make_mask(y.shape, MissingMaskSpec(
            fraction=fraction, seed=int(data.get("mask_seed", seed))))
        save_csv(os.path.join(out, "mask.csv"), mask.astype(float))
    return EXIT_OK


def _load_observations(data: dict) -> ObservationSet:
    if "y" not in data:
        raise ValidationError("config section 'data' must name a 'y' CSV file")
    obs = load_csv(data["y"])
    if "mask" in data:
        mask_obs = load_csv(data["mask"])
        if mask_obs.Y.shape != obs.Y.shape:
            raise ValidationError("mask shape does not match observations")
        obs = ObservationSet(Y=obs.Y, mask=mask_obs.Y > 0.5)
    return obs


def _fit_config(config: dict) -> FitConfig:
    model = config.get("model", {})
    optimizer = config.get("optimizer", {})
    kwargs = dict(
        n_latent=int(model.get("n_latent", 2)),
        n_features=int(model.get("n_features", 100)),
        n_clusters=int(model.get("n_clusters", 20)),
        likelihood=_likelihood_from(model),
        latent_cov=model.get("latent_cov", "diagonal"),
        standardize=bool(model.get("standardize", True)),
        fix_spectral=bool(model.get("fix_spectral", False)),
    )
    for name, cast in (("mc_samples", int), ("outer_iters", int),
                       ("likelihood_block_steps", int), ("z_block_steps", int),
                       ("learning_rate", float), ("adam_beta1", float),
                       ("adam_beta2", float), ("adam_eps", float), ("seed", int),
                       ("convergence_tol", float), ("convergence_window", int),
                       ("resample_mode", str), ("checkpoint_every", int),
                       ("alpha0", float), ("beta0", float), ("init_scale", float),
                       ("debug_monotonicity", bool)):
        if name in optimizer:
            kwargs[name] = cast(optimizer[name])
    kwargs["seed"] = _seed_override(kwargs.get("seed", 0))
    return FitConfig(**kwargs)


def cmd_fit(config: dict, args) -> int:
    data = config.get("data", {})
    obs = _load_observations(data)
    fit_config = _fit_config(config)
    out = _output_dir(data)
    resume = None
    if args.checkpoint:
        fit_config.checkpoint_path = args.checkpoint
        if fit_config.checkpoint_every == 0:
            fit_config.checkpoint_every = 1
        if os.path.exists(args.checkpoint):
            resume = args.checkpoint

    def progress(i, elbo, seconds):
        print(f"{i},{elbo:.6f},{seconds:.3f}", flush=True)

    result = fit(obs, fit_config, resume_from=resume, progress=progress)
    save_csv(os.path.join(out, "latents.csv"), result.latent.mean)
    trainer = _Trainer(obs, fit_config)
    _restore_into(trainer, result)
    _write_json(os.path.join(out, "state.json"), trainer.state_dict())
    report = result.report
    _write_json(os.path.join(out, "report.json"), {
        "elbo_trace": report.elbo_trace,
        "wall_time_seconds": report.wall_time_seconds,
        "converged": report.converged,
        "expected_alpha": report.expected_alpha,
        "occupancy": report.occupancy,
        "standardized": report.standardized,
    })
    return EXIT_OK


def _restore_into(trainer: _Trainer, result: FitResult) -> None:
    trainer.latent = result.latent
    trainer.mixture = result.mixture
    trainer.report = result.report
    trainer.weights = result.weights
    trainer.outer_done = len(result.report.elbo_trace)
    if isinstance(result.likelihood, GaussianLikelihood):
        trainer.log_noise = np.array(result.likelihood.log_noise_var)
    elif result.likelihood.family == NEGATIVE_BINOMIAL:
        trainer.log_r = np.log(result.likelihood.dispersion_vector(
            trainer.obs.Y.shape[1]))


def _restore_trained(config: dict, obs: ObservationSet):
    data = config.get("data", {})
    if "state" not in data:
        raise ValidationError("config section 'data' must name a fitted 'state' file")
    fit_config = _fit_config(config)
    trainer = _Trainer(obs, fit_config)
    trainer.load_state_dict(load_checkpoint(data["state"]))
    return trainer, fit_config


def cmd_impute(config: dict, args) -> int:
    data = config.get("data", {})
    obs = _load_observations(data)
    out = _output_dir(data)
    model = config.get("model", {})
    likelihood = _likelihood_from(model)
    seed = _seed_override(int(config.get("optimizer", {}).get("seed", 0)))
    rng = np.random.default_rng(seed)
    n_samples = int(config.get("optimizer", {}).get("mc_samples", 5))
    if obs.fully_observed:
        imputed = obs.Y.copy()
    else:
        trainer, _ = _restore_trained(config, obs)
        work = trainer.obs  # standardized view when applicable
        if likelihood.family == GAUSSIAN:
            imputed = gaussian_impute(work, trainer.latent, trainer.mixture,
                                      float(np.exp(trainer.log_noise)),
                                      n_samples, rng)
            if trainer.report.standardized:
                mean = np.array(trainer.report.column_means)
                std = np.array(trainer.report.column_stds)
                imputed = imputed * std + mean
                imputed[obs.mask] = obs.Y[obs.mask]
        else:
            imputed = logistic_impute(obs, trainer.latent, trainer.mixture,
                                      trainer._spec_now(), n_samples, rng,
                                      trainer.weights)
    save_csv(os.path.join(out, "Y_imputed.csv"), imputed)
    if "y_true" in data:
        truth = load_csv(data["y_true"])
        if truth.Y.shape != obs.Y.shape:
            raise ValidationError("ground-truth shape does not match observations")
        mse = imputation_mse(truth.Y, imputed, obs.mask)
        _write_json(os.path.join(out, "mse.json"), {"imputation_mse": mse})
    return EXIT_OK


def cmd_eval(config: dict, args) -> int:
    data = config.get("data", {})
    eval_cfg = config.get("eval", {})
    out = _output_dir(data)
    if "latents" not in data:
        raise ValidationError("config section 'data' must name a 'latents' CSV")
    latents = load_csv(data["latents"]).Y
    seed = _seed_override(int(eval_cfg.get("seed", 0)))
    report = EvalReport()
    start = time.perf_counter()
    metrics = eval_cfg.get("metrics")

    def wanted(name):
        return metrics is None or name in metrics

    if wanted("knn"):
        if "labels" not in data:
            if metrics is not None and "knn" in metrics:
                raise ValidationError("knn evaluation requested but no labels given")
        else:
            labels = load_csv(data["labels"]).Y.ravel().astype(np.int64)
            ks = eval_cfg.get("knn_k", 1)
            ks = ks if isinstance(ks, list) else [ks]
            for k in ks:
                mean, std = knn_cv(latents, labels, k=int(k),
                                   folds=int(eval_cfg.get("folds", 5)), seed=seed)
                report.knn_accuracy[int(k)] = {"mean": mean, "std": std}
    if wanted("procrustes") and "x_true" in data:
        report.procrustes_disparity = procrustes(latents, load_csv(data["x_true"]).Y)
    if wanted("kernel") and "k_true" in data:
        if "state" not in data:
            raise ValidationError("kernel recovery needs a fitted 'state' file")
        trainer = _restore_state_only(config, latents)
        k_true = load_csv(data["k_true"]).Y
        l_eval = eval_cfg.get("l_eval")
        report.kernel_frobenius_rel_err = kernel_recovery(
            k_true, latents, trainer.mixture.spectral_moments(),
            l_eval=None if l_eval is None else int(l_eval),
            rng=np.random.default_rng(seed))
    if wanted("imputation") and "imputed" in data and "y_true" in data \
            and "mask" in data:
        report.imputation_mse = imputation_mse(
            load_csv(data["y_true"]).Y, load_csv(data["imputed"]).Y,
            load_csv(data["mask"]).Y > 0.5)
    report.wall_time_seconds = time.perf_counter() - start
    _write_json(os.path.join(out, "eval.json"), report.to_json())
    return EXIT_OK


def _restore_state_only(config: dict, latents):
    data = config["data"]
    obs = ObservationSet(Y=np.zeros((latents.shape[0], 1)))
    fit_config = _fit_config(config)
    trainer = _Trainer(obs, fit_config)
    trainer.load_state_dict(load_checkpoint(data["state"]))
    return trainer


_COMMANDS = {"generate": cmd_generate, "fit": cmd_fit,
             "impute": cmd_impute, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="srflvm",
        description="Random-feature latent variable models with "
                    "block-coordinate variational inference")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker count (results are identical for any value)")
    parser.add_argument("--checkpoint", default=None,
                        help="checkpoint file to save to and resume from")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except NumericDegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERACY
    except (ValidationError, SrflvmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
