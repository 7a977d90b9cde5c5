"""Evaluation of learned latent spaces and imputations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import procrustes as _scipy_procrustes
from scipy.spatial.distance import cdist
from sklearn.model_selection import KFold, StratifiedKFold

from .errors import ValidationError
from .features import SpectralMoments, expected_feature_map, feature_map, SpectralPoints


@dataclass
class EvalReport:
    """Collected evaluation metrics; unset metrics stay None."""

    knn_accuracy: dict = field(default_factory=dict)   # k -> {"mean":, "std":}
    imputation_mse: Optional[float] = None
    kernel_frobenius_rel_err: Optional[float] = None
    procrustes_disparity: Optional[float] = None
    wall_time_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "knn_accuracy": {str(k): v for k, v in self.knn_accuracy.items()},
            "imputation_mse": self.imputation_mse,
            "kernel_frobenius_rel_err": self.kernel_frobenius_rel_err,
            "procrustes_disparity": self.procrustes_disparity,
            "wall_time_seconds": self.wall_time_seconds,
        }


def _knn_predict(train_x, train_y, test_x, k: int) -> NDArray:
    d = cdist(test_x, train_x)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    votes = train_y[nearest]                       # (n_test, k)
    n_classes = int(train_y.max()) + 1
    counts = np.zeros((votes.shape[0], n_classes), dtype=np.int64)
    for j in range(k):
        np.add.at(counts, (np.arange(votes.shape[0]), votes[:, j]), 1)
    # argmax breaks ties toward the smallest class index
    return counts.argmax(axis=1)


def knn_cv(latents: NDArray, labels: NDArray, k: int = 1, folds: int = 5,
           seed: int = 0) -> tuple[float, float]:
    """K-nearest-neighbour classification accuracy, k-fold cross-validated.

    Euclidean distances, majority vote, ties broken by the smallest class
    index; folds stratified when every class has at least `folds` members,
    plain shuffled folds otherwise.
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if latents.shape[0] != labels.shape[0]:
        raise ValidationError("latents and labels must align")
    if k < 1 or folds < 2:
        raise ValidationError("need k >= 1 and folds >= 2")
    _, counts = np.unique(labels, return_counts=True)
    if counts.min() >= folds:
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    else:
        splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    accs = []
    for train_idx, test_idx in splitter.split(latents, labels):
        if k >= train_idx.shape[0]:
            raise ValidationError("k must be smaller than the training fold size")
        pred = _knn_predict(latents[train_idx], labels[train_idx],
                            latents[test_idx], k)
        accs.append(float(np.mean(pred == labels[test_idx])))
    return float(np.mean(accs)), float(np.std(accs))


def imputation_mse(Y_true: NDArray, Y_imputed: NDArray, mask: NDArray) -> float:
    """Mean squared error over the masked (False) entries only."""
    Y_true = np.asarray(Y_true, dtype=np.float64)
    Y_imputed = np.asarray(Y_imputed, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (Y_true.shape == Y_imputed.shape == mask.shape):
        raise ValidationError("arrays and mask must share one shape")
    hidden = ~mask
    if not hidden.any():
        raise ValidationError("no masked entries to score")
    diff = Y_true[hidden] - Y_imputed[hidden]
    return float(np.mean(diff ** 2))


def expected_kernel(latents: NDArray, moments: SpectralMoments,
                    l_eval: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> NDArray:
    """Expected RFF Gram matrix E[Phi Phi^T] at the latent means.

    Analytic off-diagonals come from the Gaussian characteristic function of
    each frequency; with `l_eval` set, the expectation is instead estimated
    from `l_eval` fresh frequency draws (uniform over frequencies, Gaussian
    within each).
    """
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    n = latents.shape[0]
    if l_eval is None:
        half = moments.means.shape[0]
        k_hat = np.zeros((n, n))
        # accumulate per frequency: E[cos(w (x - x'))] over the pair grid
        for l in range(half):
            delta_angle = latents @ moments.means[l]
            quad = np.einsum("nq,qr,nr->n", latents, moments.covs[l], latents)
            # cos(a_n - a_m) damped by exp(-(x_n - x_m)^T V (x_n - x_m)/2):
            # expand the quadratic form over the pair grid
            cross = latents @ moments.covs[l] @ latents.T
            damp = np.exp(-0.5 * (quad[:, None] + quad[None, :] - 2.0 * cross))
            k_hat += damp * np.cos(delta_angle[:, None] - delta_angle[None, :])
        k_hat /= half
        np.fill_diagonal(k_hat, 1.0)
        return k_hat
    rng = rng or np.random.default_rng(0)
    half = moments.means.shape[0]
    idx = rng.integers(0, half, size=l_eval)
    chol = np.linalg.cholesky(moments.covs + 1e-12 * np.eye(moments.covs.shape[-1]))
    eps = rng.standard_normal((l_eval, moments.means.shape[1]))
    w = moments.means[idx] + np.einsum("lqr,lr->lq", chol[idx], eps)
    phi = feature_map(latents, SpectralPoints(W=w)).Phi
    return phi @ phi.T


def kernel_recovery(K_true: NDArray, latents: NDArray, moments: SpectralMoments,
                    l_eval: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Relative Frobenius error ||K_hat - K_true||_F / ||K_true||_F."""
    K_true = np.asarray(K_true, dtype=np.float64)
    k_hat = expected_kernel(latents, moments, l_eval=l_eval, rng=rng)
    if k_hat.shape != K_true.shape:
        raise ValidationError("kernel shapes disagree")
    return float(np.linalg.norm(k_hat - K_true) / np.linalg.norm(K_true))


def procrustes(latents: NDArray, X_true: NDArray) -> float:
    """Disparity after optimal translation, scaling and orthogonal alignment;
    normalized to [0, 1]."""
    latents = np.asarray(latents, dtype=np.float64)
    X_true = np.asarray(X_true, dtype=np.float64)
    if latents.shape != X_true.shape:
        raise ValidationError("point sets must share one shape")
    for name, arr in (("latents", latents), ("reference", X_true)):
        if np.allclose(arr, arr.mean(axis=0), atol=1e-12):
            raise ValidationError(f"{name} have zero variance")
    _, _, disparity = _scipy_procrustes(X_true, latents)
    return float(disparity)
