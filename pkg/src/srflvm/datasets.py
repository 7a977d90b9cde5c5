"""Synthetic data generation, file ingestion and missing-data masks.

The synthetic generator draws GP function values on a planar S-shaped
curve under a hybrid RBF-plus-periodic kernel and pushes them through the
chosen observation family.  Loaders cover numeric CSV matrices and the
big-endian IDX image/label format.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .errors import ValidationError
from .gaussian_block import ObservationSet
from .likelihoods import BERNOULLI, GAUSSIAN, NEGATIVE_BINOMIAL, LikelihoodSpec

_IDX_IMAGES_MAGIC = 2051
_IDX_LABELS_MAGIC = 2049


@dataclass
class SyntheticSpec:
    """Configuration of the S-curve GP generator."""

    n_obs: int = 500
    n_dims: int = 100
    rbf_output: float = 0.5      # output scale of the RBF part
    rbf_length: float = 1.0
    periodic_output: float = 0.5
    periodic_length: float = 1.0
    period: float = 4.5
    noise_std: float = 0.1
    seed: int = 0
    likelihood: LikelihoodSpec = field(default_factory=LikelihoodSpec)

    def __post_init__(self):
        for name in ("rbf_output", "rbf_length", "periodic_output",
                     "periodic_length", "period"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"kernel hyperparameter {name} must be positive")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be nonnegative")
        if self.n_obs < 2 or self.n_dims < 1:
            raise ValidationError("need at least 2 observations and 1 dimension")


@dataclass
class MissingMaskSpec:
    """Uniform random masking of a fixed fraction of entries."""

    fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValidationError("masking fraction must lie in [0, 1)")


def hybrid_kernel(X: NDArray, X2: Optional[NDArray] = None, *,
                  rbf_output: float = 0.5, rbf_length: float = 1.0,
                  periodic_output: float = 0.5, periodic_length: float = 1.0,
                  period: float = 4.5) -> NDArray[np.float64]:
    """RBF plus periodic kernel on Euclidean distances."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=np.float64))
    d = cdist(X, X2)
    rbf = rbf_output * np.exp(-d ** 2 / (2.0 * rbf_length ** 2))
    per = periodic_output * np.exp(-2.0 * np.sin(d / period) ** 2
                                   / periodic_length ** 2)
    return rbf + per


def _scurve_points(n: int) -> NDArray[np.float64]:
    t = np.linspace(-1.5 * np.pi, 1.5 * np.pi, n)
    x = np.column_stack((np.sin(t), np.sign(t) * (np.cos(t) - 1.0)))
    x -= x.mean(axis=0)
    sd = x.std(axis=0)
    return x / np.where(sd > 0, sd, 1.0)


def _push_through_family(f: NDArray, spec: LikelihoodSpec, noise_std: float,
                         rng: np.random.Generator) -> NDArray[np.float64]:
    if spec.family == GAUSSIAN:
        return f + noise_std * rng.standard_normal(f.shape)
    p = 1.0 / (1.0 + np.exp(-f))
    if spec.family == BERNOULLI:
        return (rng.random(f.shape) < p).astype(np.float64)
    r = spec.dispersion_vector(f.shape[1])[None, :]
    # numpy's negative binomial counts failures before r successes with
    # success probability q; q = 1 - p gives mean r * p / (1 - p) = r exp(f)
    return rng.negative_binomial(np.broadcast_to(r, f.shape), 1.0 - p).astype(np.float64)


def generate_scurve(spec: SyntheticSpec) -> tuple[NDArray, NDArray, NDArray]:
    """S-curve latents, GP observations and the generating kernel matrix."""
    rng = np.random.default_rng(spec.seed)
    x_true = _scurve_points(spec.n_obs)
    k_true = hybrid_kernel(
        x_true, rbf_output=spec.rbf_output, rbf_length=spec.rbf_length,
        periodic_output=spec.periodic_output, periodic_length=spec.periodic_length,
        period=spec.period)
    chol = np.linalg.cholesky(k_true + 1e-10 * np.eye(spec.n_obs))
    f = chol @ rng.standard_normal((spec.n_obs, spec.n_dims))
    y = _push_through_family(f, spec.likelihood, spec.noise_std, rng)
    return x_true, y, k_true


def generate_clusters(n_obs: int, n_dims: int, n_latent: int = 2,
                      n_clusters: int = 2, separation: float = 4.0,
                      seed: int = 0,
                      likelihood: Optional[LikelihoodSpec] = None,
                      n_features: int = 50,
                      noise_std: float = 0.1) -> tuple[NDArray, NDArray, NDArray]:
    """Model-generated data with clustered latents; returns (X, Y, labels).

    Latents are drawn around cluster centers `separation` apart, mapped
    through a random-feature linear model with standard-normal weights, and
    observed under the requested family.
    """
    likelihood = likelihood or LikelihoodSpec()
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_clusters), int(np.ceil(n_obs / n_clusters)))[:n_obs]
    centers = rng.standard_normal((n_clusters, n_latent))
    centers *= separation / max(1e-12, np.linalg.norm(centers[1] - centers[0])) \
        if n_clusters > 1 else 1.0
    x = centers[labels] + 0.5 * rng.standard_normal((n_obs, n_latent))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    w = rng.standard_normal((n_features // 2, n_latent))
    angles = x @ w.T
    phi = np.empty((n_obs, 2 * (n_features // 2)))
    phi[:, 0::2] = np.sin(angles)
    phi[:, 1::2] = np.cos(angles)
    phi *= np.sqrt(2.0 / phi.shape[1])
    h = rng.standard_normal((phi.shape[1], n_dims))
    f = phi @ h
    y = _push_through_family(f, likelihood, noise_std, rng)
    return x, y, labels.astype(np.int64)


def make_mask(shape: tuple[int, int], spec: MissingMaskSpec) -> NDArray[np.bool_]:
    """Boolean mask (True = observed) hiding floor(fraction * N * M) entries,
    redrawn until every column keeps at least one observed entry."""
    n, m = shape
    total = int(np.floor(spec.fraction * n * m))
    rng = np.random.default_rng(spec.seed)
    if total == 0:
        return np.ones(shape, dtype=bool)
    for _ in range(1000):
        mask = np.ones(n * m, dtype=bool)
        mask[rng.choice(n * m, size=total, replace=False)] = False
        mask = mask.reshape(shape)
        if mask.sum(axis=0).min() >= 1:
            return mask
    raise ValidationError("could not draw a mask keeping every column observed")


# ---------------------------------------------------------------------------
# file formats


def save_csv(path: str, array: NDArray) -> None:
    """Atomic CSV export at 17 significant digits."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            np.savetxt(fh, np.atleast_2d(array), delimiter=",", fmt="%.17g")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_csv(path: str, labels_path: Optional[str] = None):
    """Rectangular numeric CSV -> ObservationSet (+ labels if a companion
    file is given).  Parse failures report the offending row and column."""
    try:
        with open(path) as fh:
            lines = [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ValidationError(f"{path}: empty file")
    rows = []
    width = None
    for i, line in enumerate(lines):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValidationError(
                f"{path}: row {i + 1} has {len(cells)} cells, expected {width}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            bad = next(j for j, c in enumerate(cells)
                       if not _is_number(c))
            raise ValidationError(
                f"{path}: non-numeric cell at row {i + 1}, column {bad + 1}") from None
    obs = ObservationSet(Y=np.array(rows, dtype=np.float64))
    if labels_path is None:
        return obs
    labels_obs = load_csv(labels_path)
    labels = labels_obs.Y.ravel()
    if labels.shape[0] != obs.Y.shape[0]:
        raise ValidationError("label count does not match observation count")
    return obs, labels.astype(np.int64)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_idx(images_path: str, labels_path: Optional[str] = None):
    """Big-endian IDX images (magic 2051) and labels (magic 2049); pixel
    values scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValidationError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">iiii", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise ValidationError(f"{images_path}: bad magic {magic}, expected 2051")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise ValidationError(f"{images_path}: payload shorter than header promises")
    images = np.frombuffer(data, dtype=np.uint8).reshape(count, rows * cols)
    obs = ObservationSet(Y=images.astype(np.float64) / 255.0)
    if labels_path is None:
        return obs
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValidationError(f"{labels_path}: truncated IDX header")
        magic, n_labels = struct.unpack(">ii", header)
        if magic != _IDX_LABELS_MAGIC:
            raise ValidationError(f"{labels_path}: bad magic {magic}, expected 2049")
        payload = fh.read(n_labels)
    if len(payload) != n_labels:
        raise ValidationError(f"{labels_path}: payload shorter than header promises")
    if n_labels != count:
        raise ValidationError("image and label counts disagree")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    return obs, labels
