"""Pólya-Gamma random variate generation.

Three regimes, chosen by the shape parameter b:

* b = 1 — exact Devroye-style alternating-series rejection sampler for
  J*(1, z), returned as PG(1, c) = J*(1, |c|/2) / 4.
* integer b — convolution of b independent PG(1, c) draws.
* non-integer b — the weighted infinite Gamma sum truncated at T terms,
  plus a moment-matched Gamma draw standing in for the discarded tail.

All samplers are vectorized over draws; scalar entry points wrap the
vectorized ones.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from .errors import ValidationError

_T_DEVROYE = 0.64           # piecewise boundary of the J*(1, z) proposal
_SERIES_TERMS = 200
_TAIL_TERMS = 5000


def pg_mean(b, c):
    """E[omega] for omega ~ PG(b, c): b*tanh(c/2)/(2c), with limit b/4 at c=0."""
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    small = np.abs(c) < 1e-8
    safe = np.where(small, 1.0, c)
    out = np.where(small, b / 4.0 - b * c ** 2 / 24.0,
                   b * np.tanh(safe / 2.0) / (2.0 * safe))
    return out if out.ndim else float(out)


def series_mean(b: float, c: float, terms: int = 10_000) -> float:
    """Truncated-series expectation oracle (b/(2 pi^2)) sum_k 1/((k-1/2)^2 + c^2/(4 pi^2))."""
    k = np.arange(1, terms + 1)
    denom = (k - 0.5) ** 2 + c ** 2 / (4.0 * np.pi ** 2)
    return float(b / (2.0 * np.pi ** 2) * np.sum(1.0 / denom))


def _piecewise_coef(n: NDArray, x: NDArray) -> NDArray:
    """Alternating-series coefficients a_n(x) of the J*(1, 0) density."""
    right = np.pi * (n + 0.5) * np.exp(-((n + 0.5) ** 2) * np.pi ** 2 * x / 2.0)
    with np.errstate(divide="ignore", over="ignore"):
        left = ((2.0 / (np.pi * x)) ** 1.5
                * np.pi * (n + 0.5)
                * np.exp(-2.0 * (n + 0.5) ** 2 / x))
    return np.where(x > _T_DEVROYE, right, left)


def _inv_gauss_cdf(x, mu):
    """Inverse-Gaussian(mu, shape 1) CDF; mu = inf handled as the stable limit."""
    rx = 1.0 / np.sqrt(x)
    with np.errstate(divide="ignore", over="ignore"):
        z = np.where(np.isinf(mu), 0.0, 1.0 / mu)
        out = norm.cdf(rx * (x * z - 1.0)) + np.exp(2.0 * z) * norm.cdf(-rx * (x * z + 1.0))
    return out


def _sample_trunc_inv_gauss(z: NDArray, rng: np.random.Generator) -> NDArray:
    """Draw from Inverse-Gaussian(1/z, 1) truncated to (0, t]; vectorized over z >= 0."""
    t = _T_DEVROYE
    m = z.shape[0]
    out = np.empty(m)
    todo = np.arange(m)
    small = z < 1.0 / t  # mean above the truncation point: rejection via 1/chi^2 tilt
    while todo.size:
        zi = z[todo]
        x = np.empty(todo.size)
        done = np.zeros(todo.size, dtype=bool)

        sm = small[todo]
        if sm.any():
            n_sm = int(sm.sum())
            e1 = rng.exponential(size=n_sm)
            e2 = rng.exponential(size=n_sm)
            ok = e1 ** 2 <= 2.0 * e2 / t
            cand = t / (1.0 + t * e1) ** 2
            acc = ok & (rng.random(n_sm) <= np.exp(-zi[sm] ** 2 * cand / 2.0))
            x[sm] = cand
            done[sm] = acc
        lg = ~sm
        if lg.any():
            n_lg = int(lg.sum())
            mu = 1.0 / zi[lg]
            y = rng.standard_normal(n_lg) ** 2
            cand = mu + mu ** 2 * y / 2.0 - mu / 2.0 * np.sqrt(4.0 * mu * y + (mu * y) ** 2)
            flip = rng.random(n_lg) > mu / (mu + cand)
            cand = np.where(flip, mu ** 2 / cand, cand)
            x[lg] = cand
            done[lg] = cand <= t
        out[todo[done]] = x[done]
        todo = todo[~done]
    return out


def _devroye_many(c: NDArray, rng: np.random.Generator) -> NDArray:
    """Vectorized exact PG(1, c) sampler."""
    z = np.abs(np.asarray(c, dtype=np.float64)) / 2.0
    t = _T_DEVROYE
    k_rate = np.pi ** 2 / 8.0 + z ** 2 / 2.0
    p_exp = np.pi / (2.0 * k_rate) * np.exp(-k_rate * t)
    with np.errstate(divide="ignore", over="ignore"):
        mu = np.where(z > 0, 1.0 / z, np.inf)
    q_ig = 2.0 * np.exp(-z) * _inv_gauss_cdf(np.full_like(z, t), mu)

    m = z.shape[0]
    out = np.empty(m)
    todo = np.arange(m)
    while todo.size:
        zi = z[todo]
        n_t = todo.size
        use_exp = rng.random(n_t) < p_exp[todo] / (p_exp[todo] + q_ig[todo])
        x = np.empty(n_t)
        if use_exp.any():
            x[use_exp] = t + rng.exponential(size=int(use_exp.sum())) / k_rate[todo][use_exp]
        if (~use_exp).any():
            x[~use_exp] = _sample_trunc_inv_gauss(zi[~use_exp], rng)

        # alternating-series accept/reject on the proposal draw
        s = _piecewise_coef(np.zeros(n_t), x)
        y = rng.random(n_t) * s
        accepted = np.zeros(n_t, dtype=bool)
        rejected = np.zeros(n_t, dtype=bool)
        n = 0
        while not (accepted | rejected).all():
            n += 1
            an = _piecewise_coef(np.full(n_t, float(n)), x)
            open_ = ~(accepted | rejected)
            if n % 2 == 1:
                s = s - an
                accepted |= open_ & (y <= s)
            else:
                s = s + an
                rejected |= open_ & (y > s)
        out[todo[accepted]] = x[accepted]
        todo = todo[~accepted]
    return out / 4.0


def _series_many(b, c: NDArray, rng: np.random.Generator) -> NDArray:
    """Truncated Gamma-sum PG(b, c) sampler with a moment-matched tail draw.

    `b` may be a scalar or an array aligned with `c`.
    """
    c = np.asarray(c, dtype=np.float64)
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), c.shape)
    m = c.shape[0]
    r2 = c ** 2 / (4.0 * np.pi ** 2)                     # (m,)
    k = np.arange(1, _SERIES_TERMS + 1)
    denom = (k - 0.5) ** 2 + r2[:, None]                 # (m, T)
    g = rng.gamma(shape=b[:, None], scale=1.0, size=(m, _SERIES_TERMS))
    omega = np.sum(g / denom, axis=1) / (2.0 * np.pi ** 2)

    # accumulate tail sums in chunks to keep the (m, chunk) temporaries small
    sum_inv = np.zeros(m)
    sum_inv_sq = np.zeros(m)
    for start in range(_SERIES_TERMS, _SERIES_TERMS + _TAIL_TERMS, 256):
        stop = min(start + 256, _SERIES_TERMS + _TAIL_TERMS)
        k_tail = np.arange(start + 1, stop + 1)
        d_tail = (k_tail - 0.5) ** 2 + r2[:, None]
        sum_inv += np.sum(1.0 / d_tail, axis=1)
        sum_inv_sq += np.sum(1.0 / d_tail ** 2, axis=1)
    mu_tail = b / (2.0 * np.pi ** 2) * sum_inv
    var_tail = b / (4.0 * np.pi ** 4) * sum_inv_sq
    shape = mu_tail ** 2 / var_tail
    scale = var_tail / mu_tail
    omega += rng.gamma(shape=shape, scale=scale)
    return omega


def pg_sample_many(b, c, size: int | None, rng: np.random.Generator) -> NDArray:
    """Vectorized PG(b, c) draws.

    `c` may be a scalar (with `size` draws) or an array (one draw per entry,
    `size` ignored).  `b` may be a positive scalar — exact sampling when it
    is an integer — or an array aligned with `c`, routed through the
    truncated-series sampler.
    """
    b_arr = np.asarray(b, dtype=np.float64)
    if np.any(b_arr <= 0):
        raise ValidationError("PG shape parameter b must be positive")
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        c = np.full(int(size), float(c))
    flat = c.ravel()
    if b_arr.ndim == 0:
        b_int = int(round(float(b_arr)))
        if abs(float(b_arr) - b_int) < 1e-12:
            out = np.zeros(flat.shape[0])
            for _ in range(b_int):
                out += _devroye_many(flat, rng)
        else:
            out = _series_many(float(b_arr), flat, rng)
    else:
        out = _series_many(np.broadcast_to(b_arr, c.shape).ravel(), flat, rng)
    return out.reshape(c.shape)


def pg_sample(b: float, c: float, rng: np.random.Generator) -> float:
    """One PG(b, c) draw."""
    return float(pg_sample_many(b, float(c), 1, rng)[0])
