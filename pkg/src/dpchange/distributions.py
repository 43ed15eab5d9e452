"""Seeded samplers and log densities for the families the Gibbs steps need.

Everything works in the log domain.  Random draws go through a
``numpy.random.Generator``; a chain owns exactly one generator, so a seed
plus the sequence of calls reproduces every draw bit for bit.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, multigammaln

from .errors import InvalidArgumentError, NumericalDomainError

_LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed) -> np.random.Generator:
    """The package's RNG stream: PCG64 seeded from a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NumericalDomainError` on failure."""
    a = np.asarray(a, dtype=float)
    try:
        if not np.all(np.isfinite(a)):
            raise np.linalg.LinAlgError("non-finite entries")
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"matrix is not SPD: {exc}", payload=a.copy()) from None


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix via its Cholesky factor."""
    l_inv = np.linalg.inv(cholesky(a))
    return l_inv.T @ l_inv


def _logdet_from_chol(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def mvn_sample(mean, cov, rng: np.random.Generator) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = cholesky(np.atleast_2d(cov))
    return mean + chol @ rng.standard_normal(mean.size)


def mvn_logpdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = cholesky(np.atleast_2d(cov))
    z = np.linalg.solve(chol, x - mean)
    return -0.5 * (x.size * _LOG_2PI + _logdet_from_chol(chol) + float(z @ z))


def _check_iw(df, scale: np.ndarray) -> int:
    d = scale.shape[-1]
    if scale.shape[-2:] != (d, d):
        raise InvalidArgumentError(f"scale must be square, got shape {scale.shape}")
    if not np.all(np.asarray(df) > d - 1):
        raise InvalidArgumentError(f"inverse-Wishart df={df} must exceed D-1={d - 1}")
    return d


@lru_cache(maxsize=None)
def _tril(d: int):
    return np.tril_indices(d, -1)


def cholesky_batch(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a stack of SPD matrices."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"matrix is not SPD: {exc}", payload=np.asarray(a).copy()) from None


def mvn_sample_batch(means, covs, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``means`` (shape ``(B, D)``) with covariances ``(B, D, D)``."""
    chol = cholesky_batch(covs)
    z = rng.standard_normal(means.shape)
    return means + np.einsum("bij,bj->bi", chol, z)


def inv_wishart_sample_batch(df, scales, rng: np.random.Generator) -> np.ndarray:
    """Independent IW draws for a stack of scales ``(B, D, D)``.

    With ``scale = L L'`` and a Bartlett factor ``A`` of a standard Wishart,
    ``W = L^{-T} A A' L^{-1}`` is Wishart with scale ``scale^{-1}``, so its
    inverse ``(L A^{-T})(L A^{-T})'`` is the inverse-Wishart draw.
    """
    scales = np.asarray(scales, dtype=float)
    d = _check_iw(df, scales)
    nb = scales.shape[0]
    chol = cholesky_batch(scales)
    df = np.broadcast_to(np.asarray(df, dtype=float), (nb,))
    a = np.zeros((nb, d, d))
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(rng.chisquare(df[:, None] - idx[None, :]))
    low = _tril(d)
    if low[0].size:
        a[:, low[0], low[1]] = rng.standard_normal((nb, low[0].size))
    b = chol @ np.swapaxes(np.linalg.inv(a), 1, 2)
    return b @ np.swapaxes(b, 1, 2)


def inv_wishart_sample(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Draw from IW(df, scale) (Bartlett decomposition on the inverted scale)."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    _check_iw(df, scale)
    return inv_wishart_sample_batch(df, scale[None], rng)[0]


def inv_wishart_logpdf(x, df: float, scale) -> float:
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = _check_iw(df, scale)
    try:
        chol_x = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return -math.inf
    logdet_s = _logdet_from_chol(cholesky(scale))
    x_inv = np.linalg.inv(chol_x)
    x_inv = x_inv.T @ x_inv
    return (
        0.5 * df * logdet_s
        - 0.5 * df * d * math.log(2.0)
        - multigammaln(0.5 * df, d)
        - 0.5 * (df + d + 1) * _logdet_from_chol(chol_x)
        - 0.5 * float(np.trace(scale @ x_inv))
    )


def _check_ig(shape: float, rate: float) -> None:
    if not (shape > 0 and rate > 0):
        raise InvalidArgumentError(f"inverse-gamma needs shape>0, rate>0 (got {shape}, {rate})")


def inv_gamma_sample(shape: float, rate: float, rng: np.random.Generator) -> float:
    _check_ig(shape, rate)
    return rate / rng.standard_gamma(shape)


def inv_gamma_sample_batch(shapes, rates, rng: np.random.Generator) -> np.ndarray:
    shapes = np.asarray(shapes, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if np.any(shapes <= 0) or np.any(rates <= 0):
        raise InvalidArgumentError("inverse-gamma needs positive shapes and rates")
    return rates / rng.standard_gamma(shapes)


def inv_gamma_logpdf(x, shape: float, rate: float):
    """``log[b^a / Gamma(a) x^{-a-1} exp(-b/x)]``; ``-inf`` for ``x <= 0``."""
    _check_ig(shape, rate)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * math.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x
    out = np.where(x > 0, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def categorical_sample(log_weights, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``exp(log_weights)``."""
    lw = np.asarray(log_weights, dtype=float)
    top = np.max(lw) if lw.size else -math.inf
    if not np.isfinite(top):
        raise InvalidArgumentError("categorical needs at least one finite log-weight")
    cdf = np.cumsum(np.exp(lw - top))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), lw.size - 1))
