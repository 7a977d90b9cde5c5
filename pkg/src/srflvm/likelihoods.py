"""Observation likelihood families and their validation rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ValidationError

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
NEGATIVE_BINOMIAL = "negative_binomial"

_FAMILIES = (GAUSSIAN, BERNOULLI, NEGATIVE_BINOMIAL)


@dataclass
class LikelihoodSpec:
    """Which observation model to use, plus family-specific hyperparameters.

    For the negative binomial family, `dispersion` holds the per-column
    failure counts r_m (scalar broadcast allowed); it is the initial value
    when the dispersion is optimized.
    """

    family: str = GAUSSIAN
    dispersion: Union[float, NDArray[np.float64]] = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(
                f"unknown likelihood family {self.family!r}; expected one of {_FAMILIES}"
            )
        if self.family == NEGATIVE_BINOMIAL:
            r = np.atleast_1d(np.asarray(self.dispersion, dtype=np.float64))
            if np.any(r <= 0):
                raise ValidationError("negative binomial dispersion must be positive")
            self.dispersion = r if r.size > 1 else float(r[0])

    @property
    def is_logistic(self) -> bool:
        return self.family in (BERNOULLI, NEGATIVE_BINOMIAL)

    def dispersion_vector(self, n_cols: int) -> NDArray[np.float64]:
        r = np.broadcast_to(np.atleast_1d(np.asarray(self.dispersion, float)), (n_cols,))
        return np.array(r, dtype=np.float64)

    def validate_data(self, Y: NDArray) -> None:
        """Check that Y lies in the family's support; raises on violation."""
        Y = np.asarray(Y)
        if not np.all(np.isfinite(Y)):
            raise ValidationError("observations contain non-finite values")
        if self.family == BERNOULLI:
            if not np.isin(Y, (0, 1)).all():
                raise ValidationError("Bernoulli observations must lie in {0, 1}")
        elif self.family == NEGATIVE_BINOMIAL:
            if np.any(Y < 0) or np.any(Y != np.round(Y)):
                raise ValidationError(
                    "negative binomial observations must be nonnegative integers"
                )
