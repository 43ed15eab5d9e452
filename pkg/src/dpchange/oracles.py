"""Independent checks: exhaustive enumeration and direct numerical integration.

Neither routine shares code with the closed-form path it checks beyond the
per-segment posterior evaluation (enumeration) or nothing at all
(quadrature, which integrates the unnormalized joint density directly).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InvalidArgumentError
from .marginal import PosteriorEvaluator
from .model import Hyperparameters, TimeSeries

MAX_ENUMERATION_N = 20


def feasible_segmentations(n: int, k_max: int, l_min: int):
    """Every ``tau`` with at most ``k_max`` points and all segments ``>= l_min``."""
    for k in range(k_max + 1):
        for tau in itertools.combinations(range(2, n), k):
            bounds = (1,) + tau + (n,)
            if all(b - a >= l_min for a, b in zip(bounds, bounds[1:])):
                yield tau


def oracle_enumerate(x, hyper: Hyperparameters, k_max: Optional[int] = None) -> dict:
    """Exact posterior over ``tau`` (all labels distinct), normalized by log-sum-exp."""
    xs = np.asarray(x.samples if isinstance(x, TimeSeries) else x, dtype=float)
    n = xs.size
    k_max = hyper.k_max if k_max is None else k_max
    if n > MAX_ENUMERATION_N:
        raise InvalidArgumentError(f"enumeration limited to N <= {MAX_ENUMERATION_N}, got {n}")
    if k_max > 2:
        raise InvalidArgumentError("enumeration limited to K_max <= 2")
    ev = PosteriorEvaluator(xs, hyper)
    taus = list(feasible_segmentations(n, k_max, hyper.l_min))
    lp = np.array([ev.log_posterior(t, range(len(t) + 1)) for t in taus])
    prob = np.exp(lp - logsumexp(lp))
    return dict(zip(taus, prob))


@dataclass(frozen=True)
class QuadratureResult:
    log_value: float
    error: float
    converged: bool


def _log_joint_integral(y, g, hyper, n_sigma, n_phi, width, sigma_span):
    """``log`` of the trapezoid integral of ``N(Y; G phi, s2) N(phi; lam, delta s2) IG(s2)``.

    The ``phi`` grid for each ``s2`` spans ``+-width`` conditional standard
    deviations along the principal axes of the conditional density (from the
    SVD of the stacked system, not from any closed-form marginal); ``s2`` is
    integrated on a log grid over ``[1/sigma_span, sigma_span] * gamma``.
    """
    d, dm = g.shape
    lam, delta, nu, gam = hyper.lambda_phi, hyper.delta, hyper.nu, hyper.gamma
    a = np.vstack([g, np.eye(dm) / math.sqrt(delta)])
    rhs = np.concatenate([y, lam / math.sqrt(delta)])
    centre = np.linalg.lstsq(a, rhs, rcond=None)[0]
    _, sing, vt = np.linalg.svd(a, full_matrices=False)

    t = np.linspace(-width, width, n_phi)
    wt = np.full(n_phi, t[1] - t[0])
    wt[[0, -1]] *= 0.5
    grids = np.meshgrid(*([t] * dm), indexing="ij")
    tt = np.stack([gr.ravel() for gr in grids], axis=1)
    log_wt = np.zeros(tt.shape[0])
    for axis in range(dm):
        log_wt += np.log(np.meshgrid(*([wt] * dm), indexing="ij")[axis].ravel())

    s = np.linspace(math.log(gam / sigma_span), math.log(gam * sigma_span), n_sigma)
    ws = np.full(n_sigma, s[1] - s[0])
    ws[[0, -1]] *= 0.5
    a_ig, b_ig = 0.5 * nu, 0.5 * gam
    out = np.empty(n_sigma)
    for k, sk in enumerate(s):
        s2 = math.exp(sk)
        step = math.sqrt(s2) / sing
        phi = centre + (tt * step) @ vt
        resid = y[None, :] - phi @ g.T
        prior = phi - lam
        log_f = (
            -0.5 * d * math.log(2 * math.pi * s2)
            - 0.5 * np.sum(resid * resid, axis=1) / s2
            - 0.5 * dm * math.log(2 * math.pi * delta * s2)
            - 0.5 * np.sum(prior * prior, axis=1) / (delta * s2)
            + a_ig * math.log(b_ig) - gammaln(a_ig) - (a_ig + 1) * sk - b_ig / s2
        )
        out[k] = logsumexp(log_f + log_wt) + float(np.sum(np.log(step))) + sk
    return float(logsumexp(out + np.log(ws)))


def oracle_quadrature(y, g, hyper: Hyperparameters, n_sigma: int = 241, n_phi: int = 41,
                      width: float = 12.0, sigma_span: float = 1e4,
                      tol: float = 1e-5) -> QuadratureResult:
    """Numerically integrated class marginal with a grid-doubling error estimate."""
    y = np.asarray(y, dtype=float).ravel()
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if g.shape[1] > 2 or y.size > 12:
        raise InvalidArgumentError("quadrature oracle limited to D <= 2 and d_v <= 12")
    if hyper.gamma is None:
        raise InvalidArgumentError("hyperparameters must have gamma resolved")
    coarse = _log_joint_integral(y, g, hyper, n_sigma, n_phi, width, sigma_span)
    fine = _log_joint_integral(y, g, hyper, 2 * n_sigma - 1, 2 * n_phi - 1, width, sigma_span)
    err = abs(fine - coarse)
    return QuadratureResult(fine, err, err <= tol)
