"""Domain types, segment bookkeeping and design matrices.

Time indices follow the 1-based convention used throughout the package: a
series holds ``x_1 .. x_N``, change points ``tau_1 < ... < tau_K`` lie in
``2 .. N-1`` and the implicit outer boundaries are ``tau_0 = 1`` and
``tau_{K+1} = N``.  Segment ``i`` owns the samples ``x_{tau_i + 1} ..
x_{tau_{i+1}}``; ``x_1`` is never a regression target, it only serves as a
lag source for segment 0.  Class labels are 0-based (``0 .. V-1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Observed samples ``x_1 .. x_N``."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).ravel()
        if arr.size == 0:
            raise InvalidArgumentError("time series is empty")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0]) + 1
            raise InvalidArgumentError(f"non-finite sample at t={bad}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return self.samples.size

    def __len__(self) -> int:
        return self.samples.size

    def check_order(self, d_model: int) -> None:
        """Require room for at least two segments of a ``d_model`` regression."""
        if self.n < 2 * (d_model + 1):
            raise InvalidArgumentError(
                f"series of length {self.n} too short for model dimension {d_model}"
                f" (need at least {2 * (d_model + 1)})"
            )


@dataclass(frozen=True)
class Segmentation:
    """Sorted interior change points of a series of length ``n``."""

    tau: tuple
    n: int

    def __post_init__(self):
        tau = tuple(int(t) for t in self.tau)
        object.__setattr__(self, "tau", tau)
        if any(b <= a for a, b in zip(tau, tau[1:])):
            raise InvalidArgumentError(f"change points not strictly increasing: {tau}")
        if tau and (tau[0] <= 1 or tau[-1] >= self.n):
            raise InvalidArgumentError(f"change points must lie in 2..{self.n - 1}: {tau}")

    @property
    def k(self) -> int:
        return len(self.tau)

    @property
    def boundaries(self) -> tuple:
        """``(tau_0, tau_1, ..., tau_K, tau_{K+1})`` with the implicit ends."""
        return (1,) + self.tau + (self.n,)

    def segments(self) -> list:
        """``(start, end)`` pairs; segment i covers ``x_{start+1} .. x_{end}``."""
        b = self.boundaries
        return list(zip(b[:-1], b[1:]))

    def lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    def validate(self, l_min: int = 1, k_max: Optional[int] = None) -> None:
        if k_max is not None and self.k > k_max:
            raise InvalidArgumentError(f"K={self.k} exceeds K_max={k_max}")
        short = np.flatnonzero(self.lengths() < l_min)
        if short.size:
            raise InvalidArgumentError(
                f"segment {int(short[0])} shorter than L_min={l_min}: {self.tau}"
            )


def compact_labels(labels: Sequence[int]) -> np.ndarray:
    """Renumber labels to ``0 .. V-1`` in order of first appearance."""
    mapping: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(int(lab), len(mapping))
    return out


@dataclass(frozen=True, eq=False)
class ClassAssignment:
    """Per-segment class labels with compact numbering ``0 .. V-1``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.size == 0:
            raise InvalidArgumentError("class assignment needs at least one segment")
        v = int(labels.max()) + 1
        if labels.min() < 0 or np.unique(labels).size != v:
            raise InvalidArgumentError(f"labels are not compact: {labels.tolist()}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def v(self) -> int:
        return int(self.labels.max()) + 1

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.v)

    @classmethod
    def distinct(cls, n_segments: int) -> "ClassAssignment":
        return cls(np.arange(n_segments))


# Per-segment coefficient vectors, shape (K+1, D).
SegmentParams = np.ndarray


@dataclass(eq=False)
class ClassParams:
    """Per-class regression mean, coefficient covariance and noise variance."""

    means: np.ndarray
    covs: np.ndarray
    noise_vars: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float).reshape(
            self.means.shape[0], self.means.shape[1], self.means.shape[1]
        )
        self.noise_vars = np.asarray(self.noise_vars, dtype=float).ravel()
        if self.noise_vars.size != self.means.shape[0]:
            raise InvalidArgumentError("class parameter collections differ in length")
        if np.any(self.noise_vars <= 0):
            raise InvalidArgumentError("noise variances must be positive")

    @property
    def v(self) -> int:
        return self.means.shape[0]

    def copy(self) -> "ClassParams":
        return ClassParams(self.means.copy(), self.covs.copy(), self.noise_vars.copy())

    def take(self, idx: Iterable[int]) -> "ClassParams":
        idx = np.asarray(list(idx), dtype=np.int64)
        return ClassParams(self.means[idx], self.covs[idx], self.noise_vars[idx])


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Model order, prior constants and sampler settings.

    ``d_model`` counts the intercept, so ``d_model = 1`` is a constant-mean
    model and ``d_model = p + 1`` an AR(p) model.  Fields left as ``None``
    take data- or order-dependent defaults: ``lambda_phi = 0``,
    ``beta = D + 2``, ``omega = I``, ``l_min = D + 1`` and ``gamma`` = the
    sample variance of the series (see :meth:`resolve`).
    """

    d_model: int = 2
    delta: float = 10.0
    lambda_phi: Optional[np.ndarray] = None
    beta: Optional[float] = None
    omega: Optional[np.ndarray] = None
    nu: float = 2.0
    gamma: Optional[float] = None
    alpha: float = 1.0
    k_max: int = 20
    l_min: Optional[int] = None
    n_iter: int = 20000
    nc_iter: int = 5
    m_aux: int = 3
    seed: int = 0
    burn_in: float = 0.5
    thin: int = 1

    def __post_init__(self):
        d = int(self.d_model)
        if d < 1:
            raise InvalidArgumentError(f"d_model must be >= 1, got {self.d_model}")
        object.__setattr__(self, "d_model", d)
        lam = np.zeros(d) if self.lambda_phi is None else np.asarray(self.lambda_phi, float)
        lam = np.broadcast_to(lam, (d,)).copy()
        omega = np.eye(d) if self.omega is None else np.asarray(self.omega, float)
        if omega.ndim == 0:
            omega = float(omega) * np.eye(d)
        object.__setattr__(self, "lambda_phi", lam)
        object.__setattr__(self, "omega", omega)
        if self.beta is None:
            object.__setattr__(self, "beta", float(d + 2))
        if self.l_min is None:
            object.__setattr__(self, "l_min", d + 1)
        self.validate()

    def validate(self) -> None:
        d = self.d_model
        problems = []
        if not self.delta > 0:
            problems.append("delta must be > 0")
        if self.lambda_phi.shape != (d,):
            problems.append(f"lambda_phi must have length {d}")
        if not self.beta > d - 1:
            problems.append(f"beta must exceed D-1={d - 1}")
        if self.omega.shape != (d, d):
            problems.append(f"omega must be {d}x{d}")
        else:
            if not np.allclose(self.omega, self.omega.T):
                problems.append("omega must be symmetric")
            elif np.any(np.linalg.eigvalsh(self.omega) <= 0):
                problems.append("omega must be positive definite")
        if not self.nu > 0:
            problems.append("nu must be > 0")
        if self.gamma is not None and not self.gamma > 0:
            problems.append("gamma must be > 0")
        if not self.alpha > 0:
            problems.append("alpha must be > 0")
        if self.k_max < 1:
            problems.append("k_max must be >= 1")
        if self.l_min < d + 1:
            problems.append(f"l_min must be >= D+1={d + 1}")
        if self.n_iter < 0 or self.nc_iter < 0:
            problems.append("iteration counts must be >= 0")
        if self.m_aux < 1:
            problems.append("m_aux must be >= 1")
        if not 0 <= self.burn_in < 1:
            problems.append("burn_in must be a fraction in [0, 1)")
        if self.thin < 1:
            problems.append("thin must be >= 1")
        if problems:
            raise InvalidArgumentError("; ".join(problems))

    def resolve(self, x: np.ndarray) -> "Hyperparameters":
        """Fill the data-dependent ``gamma`` default from the series."""
        if self.gamma is not None:
            return self
        var = float(np.var(np.asarray(x, dtype=float)))
        return self.replace(gamma=var if var > 0 else 1.0)

    def replace(self, **changes) -> "Hyperparameters":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return Hyperparameters(**values)

    def as_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            out[name] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def build_design_matrix(segment, d_model: int, history=None) -> np.ndarray:
    """Regression matrix of a segment under zero-padded initial lags.

    Row ``t`` is ``[1, s_{t-1}, ..., s_{t-D+1}]``.  Lags reaching before the
    segment start are zero unless ``history`` supplies the samples that
    precede it (only segment 0 uses this, for ``x_1``).
    """
    seg = np.asarray(segment, dtype=float).ravel()
    if d_model < 1:
        raise InvalidArgumentError(f"d_model must be >= 1, got {d_model}")
    if seg.size == 0:
        raise InvalidArgumentError("empty segment")
    hist = np.empty(0) if history is None else np.asarray(history, dtype=float).ravel()
    z = np.concatenate([hist, seg])
    h = hist.size
    g = np.zeros((seg.size, d_model))
    g[:, 0] = 1.0
    rows = np.arange(seg.size) + h
    for lag in range(1, d_model):
        src = rows - lag
        ok = src >= 0
        g[ok, lag] = z[src[ok]]
    return g


def segment_data(x, seg: Segmentation, i: int, d_model: int):
    """``(Y_i, G_i)`` of segment ``i``."""
    xs = x.samples if isinstance(x, TimeSeries) else np.asarray(x, dtype=float)
    start, end = seg.segments()[i]
    y = xs[start:end]
    history = xs[:1] if i == 0 else None
    return y.copy(), build_design_matrix(y, d_model, history)


def concat_class_data(x, seg: Segmentation, c, v: int, d_model: int):
    """Stack the data of every segment labelled ``v`` in segment order.

    Zero-padding of lags restarts at each segment boundary, so the result is
    the row-concatenation of the per-segment design matrices.
    """
    labels = c.labels if isinstance(c, ClassAssignment) else np.asarray(c)
    members = np.flatnonzero(labels == v)
    if members.size == 0:
        raise InvalidArgumentError(f"class {v} has no segments")
    parts = [segment_data(x, seg, int(i), d_model) for i in members]
    y = np.concatenate([p[0] for p in parts])
    g = np.vstack([p[1] for p in parts])
    return y, g
