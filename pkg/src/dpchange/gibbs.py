"""Nested Gibbs updates for segment classes.

Each segment ``i`` carries coefficients ``phi_i ~ N(mean_c, cov_c)`` drawn
around the parameters of its class ``c = c_i``; classes follow a Dirichlet
process with base measure::

    s2 ~ IG(nu/2, gamma/2),   mean ~ N(lambda_phi, delta s2 I),   cov ~ IW(beta, beta Omega)

The ``*_posterior`` functions return the parameters of each full
conditional and the ``sample_*`` functions draw from it.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .distributions import (
    categorical_sample,
    cholesky_batch,
    inv_gamma_sample,
    inv_gamma_sample_batch,
    inv_wishart_sample,
    inv_wishart_sample_batch,
    mvn_sample,
    spd_inverse,
)
from .errors import InvalidArgumentError
from .marginal import ClassStat, class_stat
from .model import ClassParams, Hyperparameters, compact_labels

_LOG_2PI = math.log(2.0 * math.pi)


def segment_params_posterior(gtg, gty, mean, cov, noise_var):
    """Mean and covariance of ``phi_i`` given its data and its class."""
    cov_inv = spd_inverse(cov)
    v = spd_inverse(np.asarray(gtg) / noise_var + cov_inv)
    mu = v @ (np.asarray(gty) / noise_var + cov_inv @ mean)
    return mu, v


def sample_segment_params(y, g, mean, cov, noise_var, rng) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if y.size == 0:
        raise InvalidArgumentError("empty segment")
    if not noise_var > 0:
        raise InvalidArgumentError("noise variance must be positive")
    mu, v = segment_params_posterior(g.T @ g, g.T @ y, mean, cov, noise_var)
    return mvn_sample(mu, v, rng)


def class_mean_posterior(phis, cov, noise_var, hyper: Hyperparameters):
    """``N(mu, S)`` with ``S = (n cov^-1 + I/(delta s2))^-1``."""
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    n = phis.shape[0]
    if n < 1:
        raise InvalidArgumentError("class has no segments")
    prior_prec = 1.0 / (hyper.delta * noise_var)
    cov_inv = spd_inverse(cov)
    s = spd_inverse(n * cov_inv + prior_prec * np.eye(phis.shape[1]))
    mu = s @ (cov_inv @ phis.sum(axis=0) + prior_prec * hyper.lambda_phi)
    return mu, s


def sample_class_mean(phis, cov, noise_var, hyper, rng) -> np.ndarray:
    mu, s = class_mean_posterior(phis, cov, noise_var, hyper)
    return mvn_sample(mu, s, rng)


def class_cov_posterior(phis, mean, hyper: Hyperparameters):
    """``IW(n + beta, beta Omega + sum_i (phi_i - mean)(phi_i - mean)')``."""
    phis = np.asarray(phis, dtype=float).reshape(-1, hyper.d_model)
    resid = phis - np.asarray(mean, dtype=float)
    return phis.shape[0] + hyper.beta, hyper.beta * hyper.omega + resid.T @ resid


def sample_class_cov(phis, mean, hyper, rng) -> np.ndarray:
    df, scale = class_cov_posterior(phis, mean, hyper)
    return inv_wishart_sample(df, scale, rng)


def class_noise_var_posterior(stat: ClassStat, hyper: Hyperparameters):
    """Shape and rate of the inverse-gamma conditional of a class noise variance."""
    return 0.5 * (hyper.nu + stat.d), 0.5 * (hyper.gamma + stat.quad)


def sample_class_noise_var(y, g, hyper: Hyperparameters, rng) -> float:
    stat = class_stat(y, g, hyper.delta, hyper.lambda_phi)
    return inv_gamma_sample(*class_noise_var_posterior(stat, hyper), rng)


def crp_existing_log_prob(n_minus_i_v: int, n_total: int, alpha: float) -> float:
    return math.log(n_minus_i_v) - math.log(n_total - 1 + alpha)


def crp_new_log_prob(n_total: int, alpha: float) -> float:
    return math.log(alpha) - math.log(n_total - 1 + alpha)


def crp_finite_prob(n_minus_i_v: int, n_total: int, alpha: float, n_classes: int) -> float:
    """Conditional class probability under a symmetric Dirichlet(alpha/V) with V classes."""
    return (n_minus_i_v + alpha / n_classes) / (n_total - 1 + alpha)


def spd_inverse_batch(a: np.ndarray) -> np.ndarray:
    l_inv = np.linalg.inv(cholesky_batch(a))
    return np.swapaxes(l_inv, 1, 2) @ l_inv


def class_means_posterior_batch(phi, labels, covs, noise_vars, hyper: Hyperparameters):
    """:func:`class_mean_posterior` for every class at once."""
    n_classes, dm = covs.shape[0], covs.shape[1]
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    sums = np.zeros((n_classes, dm))
    np.add.at(sums, labels, phi)
    cov_inv = spd_inverse_batch(covs)
    prior_prec = 1.0 / (hyper.delta * noise_vars)
    prec = counts[:, None, None] * cov_inv + prior_prec[:, None, None] * np.eye(dm)
    s = spd_inverse_batch(prec)
    rhs = np.einsum("vij,vj->vi", cov_inv, sums) + prior_prec[:, None] * hyper.lambda_phi
    return np.einsum("vij,vj->vi", s, rhs), s


def class_covs_posterior_batch(phi, labels, means, hyper: Hyperparameters):
    """:func:`class_cov_posterior` for every class at once."""
    n_classes = means.shape[0]
    resid = phi - means[labels]
    scales = np.broadcast_to(hyper.beta * hyper.omega, (n_classes,) + hyper.omega.shape).copy()
    np.add.at(scales, labels, resid[:, :, None] * resid[:, None, :])
    dfs = np.bincount(labels, minlength=n_classes) + hyper.beta
    return dfs, scales


def segment_params_posterior_batch(gtg, gty, means, covs, noise_vars):
    """:func:`segment_params_posterior` for a stack of segments."""
    cov_inv = spd_inverse_batch(covs)
    v = spd_inverse_batch(gtg / noise_vars[:, None, None] + cov_inv)
    rhs = gty / noise_vars[:, None] + np.einsum("bij,bj->bi", cov_inv, means)
    return np.einsum("bij,bj->bi", v, rhs), v


def draw_base(hyper: Hyperparameters, rng):
    """One ``(mean, cov, noise_var)`` triple from the base measure."""
    means, covs, s2 = draw_base_batch(hyper, 1, rng)
    return means[0], covs[0], float(s2[0])


def draw_base_batch(hyper: Hyperparameters, count: int, rng):
    """``count`` independent triples from the base measure."""
    if hyper.gamma is None:
        raise InvalidArgumentError("gamma must be resolved before drawing from the base measure")
    s2 = inv_gamma_sample_batch(
        np.full(count, 0.5 * hyper.nu), np.full(count, 0.5 * hyper.gamma), rng
    )
    means = hyper.lambda_phi + np.sqrt(hyper.delta * s2)[:, None] * rng.standard_normal(
        (count, hyper.d_model)
    )
    scales = np.broadcast_to(hyper.beta * hyper.omega, (count,) + hyper.omega.shape)
    covs = inv_wishart_sample_batch(hyper.beta, scales, rng)
    return means, covs, s2


def _gauss_terms(covs):
    """Inverse Cholesky factors and half log-determinants of a covariance stack."""
    chol = cholesky_batch(covs)
    half_logdet = np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return np.linalg.inv(chol), half_logdet


def _gauss_logpdf(x, means, linv, half_logdet):
    z = np.einsum("bij,bj->bi", linv, x - means)
    return -0.5 * (x.size * _LOG_2PI + np.sum(z * z, axis=1)) - half_logdet


def resample_labels(
    phi,
    labels,
    classes: ClassParams,
    hyper: Hyperparameters,
    rng,
    base_sampler: Optional[Callable] = None,
):
    """One sweep of class-label updates with auxiliary new-class parameters.

    For each segment in turn: remove it from its class, score every
    remaining class by ``n_{-i,v}/(n-1+alpha) N(phi_i; mean_v, cov_v)`` and
    ``m_aux`` candidate new classes by ``(alpha/m_aux)/(n-1+alpha)
    N(phi_i; aux)``.  Auxiliary triples come from ``base_sampler`` (the base
    measure by default); if the segment was a singleton its own class
    parameters fill the first auxiliary slot, which keeps the update exact
    for any ``m_aux``.  Returns compact labels and the matching parameters.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    labels = np.asarray(labels, dtype=np.int64).copy()
    n = labels.size
    if phi.shape[0] != n:
        raise InvalidArgumentError("one coefficient vector per segment required")
    m_aux, dm = hyper.m_aux, phi.shape[1]
    if base_sampler is None:
        aux_means, aux_covs, aux_s2 = draw_base_batch(hyper, n * m_aux, rng)
    else:
        draws = [base_sampler() for _ in range(n * m_aux)]
        aux_means = np.array([np.atleast_1d(d[0]) for d in draws], dtype=float)
        aux_covs = np.array([np.atleast_2d(d[1]) for d in draws], dtype=float)
        aux_s2 = np.array([d[2] for d in draws], dtype=float)
    aux_linv, aux_hld = _gauss_terms(aux_covs)

    # class tables with room for one new class per segment
    cap = classes.v + n
    means = np.zeros((cap, dm))
    covs = np.zeros((cap, dm, dm))
    noise = np.zeros(cap)
    linv = np.zeros((cap, dm, dm))
    hld = np.zeros(cap)
    size = classes.v
    means[:size], covs[:size], noise[:size] = classes.means, classes.covs, classes.noise_vars
    linv[:size], hld[:size] = _gauss_terms(classes.covs)
    counts = np.zeros(cap, dtype=np.int64)
    counts[:size] = np.bincount(labels, minlength=size)
    log_norm = math.log(n - 1 + hyper.alpha)
    log_new = math.log(hyper.alpha / m_aux) - log_norm

    for i in range(n):
        old = int(labels[i])
        counts[old] -= 1
        sl = slice(i * m_aux, (i + 1) * m_aux)
        a_means, a_covs, a_s2 = aux_means[sl].copy(), aux_covs[sl].copy(), aux_s2[sl].copy()
        a_linv, a_hld = aux_linv[sl].copy(), aux_hld[sl].copy()
        singleton = counts[old] == 0
        if singleton:
            a_means[0], a_covs[0], a_s2[0] = means[old], covs[old], noise[old]
            a_linv[0], a_hld[0] = linv[old], hld[old]
        live = np.flatnonzero(counts[:size] > 0)
        lw = np.concatenate([
            np.log(counts[live]) - log_norm
            + _gauss_logpdf(phi[i], means[live], linv[live], hld[live]),
            log_new + _gauss_logpdf(phi[i], a_means, a_linv, a_hld),
        ])
        pick = categorical_sample(lw, rng)
        if pick < live.size:
            new = int(live[pick])
        else:
            j = pick - live.size
            new = old if singleton else size
            if not singleton:
                size += 1
            means[new], covs[new], noise[new] = a_means[j], a_covs[j], a_s2[j]
            linv[new], hld[new] = a_linv[j], a_hld[j]
        labels[i] = new
        counts[new] += 1

    order = compact_labels(labels)
    keep = np.empty(int(order.max()) + 1, dtype=np.int64)
    keep[order] = labels
    return order, ClassParams(means[keep], covs[keep], noise[keep])
