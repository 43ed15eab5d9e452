"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericalDomainError(ArithmeticError):
    """A numerical routine left its domain (e.g. a matrix that is not SPD).

    ``payload`` carries whatever helps reproduce the failure: the offending
    matrix for the linear-algebra helpers, a serialized chain state for the
    sampler.
    """

    def __init__(self, message: str, payload: Any = None):
        super().__init__(message)
        self.payload = payload
