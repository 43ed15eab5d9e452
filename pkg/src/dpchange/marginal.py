"""Collapsed marginal likelihoods and the integrated posterior over (tau, K).

For the data ``Y`` of one class with design ``G`` the model is::

    Y | phi, s2 ~ N(G phi, s2 I)
    phi | s2    ~ N(lambda_phi, delta s2 I)
    s2          ~ IG(nu / 2, gamma / 2)

and integrating out ``phi`` and ``s2`` gives :func:`log_marginal_class`.
The change point prior ``lambda^K (1 - lambda)^(N-K-1)`` with a uniform
``lambda`` integrates to the Beta function ``B(K + 1, N - K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import betaln, gammaln

from .errors import InvalidArgumentError, NumericalDomainError
from .model import ClassAssignment, Hyperparameters, Segmentation, TimeSeries

_LOG_PI = math.log(math.pi)


@dataclass(frozen=True, eq=False)
class ClassStat:
    """Sufficient summary of one class: ``M = (G'G + I/delta)^-1`` and ``Y'PY``."""

    m: np.ndarray
    quad: float
    d: int
    logdet_m: float


def class_stat_from_moments(gtg, gty, yty, d, delta, lambda_phi=None) -> ClassStat:
    """Build a :class:`ClassStat` from ``G'G``, ``G'Y`` and ``Y'Y``.

    With a nonzero prior mean the data are shifted to ``Y - G lambda_phi``
    before the quadratic form is taken.
    """
    gtg = np.atleast_2d(np.asarray(gtg, dtype=float))
    gty = np.atleast_1d(np.asarray(gty, dtype=float))
    yty = float(yty)
    if d < 1:
        raise InvalidArgumentError("class has no data rows")
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be > 0, got {delta}")
    if lambda_phi is not None and np.any(lambda_phi):
        lam = np.asarray(lambda_phi, dtype=float)
        glam = gtg @ lam
        yty = yty - 2.0 * float(gty @ lam) + float(lam @ glam)
        gty = gty - glam
    prec = gtg + np.eye(gtg.shape[0]) / delta
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise NumericalDomainError("G'G + I/delta is not SPD", payload=prec) from None
    w = np.linalg.solve(chol, gty)
    quad = max(yty - float(w @ w), 0.0)
    if not math.isfinite(quad):
        raise NumericalDomainError("non-finite residual quadratic form", payload=prec)
    l_inv = np.linalg.inv(chol)
    logdet_m = -2.0 * float(np.sum(np.log(np.diag(chol))))
    return ClassStat(m=l_inv.T @ l_inv, quad=quad, d=int(d), logdet_m=logdet_m)


def class_stat(y, g, delta: float, lambda_phi=None) -> ClassStat:
    y = np.asarray(y, dtype=float).ravel()
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if y.size == 0 or g.shape[0] != y.size:
        raise InvalidArgumentError("Y and G must be non-empty with matching row counts")
    return class_stat_from_moments(g.T @ g, g.T @ y, y @ y, y.size, delta, lambda_phi)


def log_marginal_class(stat: ClassStat, hyper: Hyperparameters) -> float:
    """``log p(Y_v)`` with the class coefficients and noise variance integrated out."""
    d_model = stat.m.shape[0]
    a_post = 0.5 * (stat.d + hyper.nu)
    return (
        -0.5 * stat.d * (math.log(2.0) + _LOG_PI)
        - 0.5 * d_model * math.log(hyper.delta)
        + 0.5 * stat.logdet_m
        + 0.5 * hyper.nu * math.log(0.5 * hyper.gamma)
        - gammaln(0.5 * hyper.nu)
        + gammaln(a_post)
        - a_post * math.log(0.5 * (hyper.gamma + stat.quad))
    )


def log_prior_tau(k: int, n: int, k_max: Optional[int] = None) -> float:
    """``log B(K + 1, N - K)``: the change point prior with ``lambda`` integrated out."""
    upper = n - 2 if k_max is None else min(k_max, n - 2)
    if not 0 <= k <= upper:
        raise InvalidArgumentError(f"K={k} outside 0..{upper} for N={n}")
    return float(betaln(k + 1, n - k))


class SeriesMoments:
    """``G'G``, ``G'Y`` and ``Y'Y`` of any segment in O(D^2) via prefix sums.

    Rows whose lags all fall inside the segment are summed from prefix
    tables over the full series; the at most ``D - 1`` leading rows that
    need zero-padding are built explicitly.
    """

    def __init__(self, x, d_model: int):
        xs = np.asarray(x.samples if isinstance(x, TimeSeries) else x, dtype=float)
        self.x = xs
        self.d = d_model
        n = xs.size
        rows = np.zeros((n, d_model))
        rows[:, 0] = 1.0
        for lag in range(1, d_model):
            rows[lag:, lag] = xs[:-lag] if lag < n else 0.0
        valid = np.arange(n) >= d_model - 1
        rows[~valid] = 0.0
        self._gg = np.zeros((n + 1, d_model, d_model))
        self._gy = np.zeros((n + 1, d_model))
        self._yy = np.zeros(n + 1)
        np.cumsum(rows[:, :, None] * rows[:, None, :], axis=0, out=self._gg[1:])
        np.cumsum(rows * (xs * valid)[:, None], axis=0, out=self._gy[1:])
        np.cumsum(xs * xs * valid, axis=0, out=self._yy[1:])
        self._cache: dict = {}

    def segment(self, start: int, end: int):
        """Moments of the segment covering ``x_{start+1} .. x_{end}`` (1-based)."""
        key = (start, end)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        xs, dm = self.x, self.d
        lag_src = 0 if start == 1 else start
        full_from = min(max(start, lag_src + dm - 1), end)
        gtg = self._gg[end] - self._gg[full_from]
        gty = self._gy[end] - self._gy[full_from]
        yty = self._yy[end] - self._yy[full_from]
        if full_from > start:
            gtg = gtg.copy()
            gty = gty.copy()
            for p in range(start, full_from):
                r = np.zeros(dm)
                r[0] = 1.0
                for lag in range(1, dm):
                    if p - lag >= lag_src:
                        r[lag] = xs[p - lag]
                gtg += np.outer(r, r)
                gty += r * xs[p]
                yty += xs[p] * xs[p]
        out = (gtg, gty, float(yty), end - start)
        if len(self._cache) >= 500_000:
            self._cache.clear()
        self._cache[key] = out
        return out

    def pooled(self, segments):
        gtg = np.zeros((self.d, self.d))
        gty = np.zeros(self.d)
        yty = 0.0
        d = 0
        for start, end in segments:
            a, b, c, n = self.segment(start, end)
            gtg = gtg + a
            gty = gty + b
            yty += c
            d += n
        return gtg, gty, yty, d


class PosteriorEvaluator:
    """Memoized ``log p(tau, K | c, x)`` for one series and hyperparameter set.

    Class marginals are cached by the tuple of segment bounds they pool, so
    moves that touch one or two segments only recompute those classes.
    """

    def __init__(self, x, hyper: Hyperparameters, cache_limit: int = 200_000):
        self.x = np.asarray(x.samples if isinstance(x, TimeSeries) else x, dtype=float)
        self.n = self.x.size
        self.hyper = hyper.resolve(self.x)
        self.moments = SeriesMoments(self.x, self.hyper.d_model)
        self._cache: dict = {}
        self._cache_limit = cache_limit

    def _entry(self, segments: tuple):
        hit = self._cache.get(segments)
        if hit is None:
            if len(self._cache) >= self._cache_limit:
                self._cache.clear()
            gtg, gty, yty, d = self.moments.pooled(segments)
            stat = class_stat_from_moments(
                gtg, gty, yty, d, self.hyper.delta, self.hyper.lambda_phi
            )
            hit = (stat, log_marginal_class(stat, self.hyper))
            self._cache[segments] = hit
        return hit

    def class_stat(self, segments) -> ClassStat:
        return self._entry(tuple(segments))[0]

    def class_log_marginal(self, segments: tuple) -> float:
        return self._entry(tuple(segments))[1]

    def log_likelihood(self, tau, labels) -> float:
        bounds = (1,) + tuple(tau) + (self.n,)
        groups: dict = {}
        for i, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append((bounds[i], bounds[i + 1]))
        return sum(self.class_log_marginal(tuple(g)) for g in groups.values())

    def log_posterior(self, tau, labels) -> float:
        return self.log_likelihood(tau, labels) + log_prior_tau(len(tau), self.n)


def log_posterior_tau_k(x, seg: Segmentation, c, hyper: Hyperparameters) -> float:
    """Sum of class marginals plus the change point prior."""
    labels = c.labels if isinstance(c, ClassAssignment) else np.asarray(c)
    if len(labels) != seg.k + 1:
        raise InvalidArgumentError(f"{len(labels)} labels for {seg.k + 1} segments")
    ClassAssignment(labels)
    return PosteriorEvaluator(x, hyper).log_posterior(seg.tau, labels)
