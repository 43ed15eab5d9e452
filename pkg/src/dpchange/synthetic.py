"""Piecewise autoregressive series with repeating regimes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .distributions import make_rng
from .errors import InvalidArgumentError
from .model import Segmentation, TimeSeries


@dataclass(frozen=True)
class Regime:
    """``x_t = coefficients[0] + sum_j coefficients[j] x_{t-j} + noise_sd * e_t``."""

    coefficients: tuple
    noise_sd: float

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def lags(self) -> np.ndarray:
        return np.asarray(self.coefficients[1:], dtype=float)

    def is_stationary(self) -> bool:
        if self.lags.size == 0:
            return True
        roots = np.roots(np.concatenate([[1.0], -self.lags]))
        return bool(np.all(np.abs(roots) < 1.0))


@dataclass(frozen=True, eq=False)
class SyntheticData:
    series: TimeSeries
    segmentation: Segmentation
    labels: np.ndarray
    class_names: tuple

    def sample_labels(self) -> np.ndarray:
        bounds = np.asarray((0,) + self.segmentation.tau + (self.series.n,))
        return np.repeat(self.labels, np.diff(bounds))


def _as_regime(spec) -> Regime:
    if isinstance(spec, Regime):
        return spec
    if isinstance(spec, Mapping):
        return Regime(tuple(float(c) for c in spec["coefficients"]), float(spec["noise_sd"]))
    coeffs, sd = spec
    return Regime(tuple(float(c) for c in coeffs), float(sd))


def generate(regimes: Mapping, plan: Sequence, seed: int, l_min: int = 1) -> SyntheticData:
    """Simulate ``plan`` (a list of ``(class name, length)``) segment by segment.

    Every segment starts from a zero lag state.  Returns the series with its
    true change points (the cumulative segment ends) and 0-based class
    labels numbered by first appearance.
    """
    regimes = {name: _as_regime(spec) for name, spec in regimes.items()}
    for name, reg in regimes.items():
        if not reg.is_stationary():
            raise InvalidArgumentError(f"class {name!r} has a non-stationary AR polynomial")
        if not reg.noise_sd >= 0:
            raise InvalidArgumentError(f"class {name!r} has a negative noise sd")
    if not plan:
        raise InvalidArgumentError("empty segment plan")
    rng = make_rng(seed)
    names: list = []
    labels, pieces = [], []
    for name, length in plan:
        if name not in regimes:
            raise InvalidArgumentError(f"plan references unknown class {name!r}")
        length = int(length)
        if length < l_min:
            raise InvalidArgumentError(f"segment of class {name!r} shorter than {l_min}")
        reg = regimes[name]
        drive = reg.intercept + reg.noise_sd * rng.standard_normal(length)
        pieces.append(lfilter([1.0], np.concatenate([[1.0], -reg.lags]), drive))
        if name not in names:
            names.append(name)
        labels.append(names.index(name))
    x = np.concatenate(pieces)
    tau = tuple(int(t) for t in np.cumsum([int(n) for _, n in plan])[:-1])
    return SyntheticData(TimeSeries(x), Segmentation(tau, x.size), np.asarray(labels), tuple(names))
