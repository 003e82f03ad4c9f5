"""Prediction types returned by learners."""

from dataclasses import dataclass

import numpy as np

from ..linalg import ValidationError, check_density_matrix

KEY_DECIMALS = 9


@dataclass(frozen=True)
class ExpectationTuple:
    """Estimates of observable expectations, each in [0, 1]."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValidationError("expectation estimates must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    def key(self):
        return ("expectations",) + tuple(round(v, KEY_DECIMALS) for v in self.values)

    def summary(self):
        return ";".join(repr(v) for v in self.values)


@dataclass(frozen=True, eq=False)
class StateDescription:
    """Classical description of a density matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_density_matrix(self.matrix))

    def key(self):
        m = np.round(self.matrix, KEY_DECIMALS) + 0.0
        return ("state",) + tuple(np.concatenate([m.real.ravel(), m.imag.ravel()]).tolist())

    def summary(self):
        return "state"


@dataclass(frozen=True)
class Bit:
    """Binary decision; 0 means accept (null hypothesis), 1 means reject."""

    value: int

    def __post_init__(self):
        if int(self.value) not in (0, 1):
            raise ValidationError("a bit prediction must be 0 or 1")
        object.__setattr__(self, "value", int(self.value))

    def key(self):
        return ("bit", self.value)

    def summary(self):
        return str(self.value)


@dataclass(frozen=True)
class Scalar:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v):
            raise ValidationError("scalar prediction must be finite")
        object.__setattr__(self, "value", v)

    def key(self):
        return ("scalar", round(self.value, KEY_DECIMALS))

    def summary(self):
        return repr(self.value)


@dataclass(frozen=True)
class CoverageFailure:
    """Declared output when some measurement setting was never drawn."""

    def key(self):
        return ("coverage-failure",)

    def summary(self):
        return "coverage-failure"


PREDICTION_TYPES = (ExpectationTuple, StateDescription, Bit, Scalar, CoverageFailure)


def as_prediction(p):
    """Wrap raw values: ints 0/1 become bits, floats scalars, matrices states."""
    if isinstance(p, PREDICTION_TYPES):
        return p
    if isinstance(p, (bool, np.bool_)) or (isinstance(p, (int, np.integer)) and p in (0, 1)):
        return Bit(int(p))
    if isinstance(p, (float, np.floating, int, np.integer)):
        return Scalar(float(p))
    arr = np.asarray(p)
    if arr.ndim == 2:
        return StateDescription(arr)
    if arr.ndim == 1:
        return ExpectationTuple(tuple(arr))
    raise ValidationError(f"cannot interpret {type(p).__name__} as a prediction")
