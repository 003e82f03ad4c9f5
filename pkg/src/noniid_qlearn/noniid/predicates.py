"""Success sets and distance-like functions defining learning tasks."""

from dataclasses import dataclass, field, replace

import numpy as np

from ..linalg import (
    DimensionError,
    ValidationError,
    as_square,
    check_hermitian,
    check_unit_vector,
    maximally_mixed,
    trace_norm,
)
from .predictions import Bit, CoverageFailure, ExpectationTuple, Scalar, StateDescription, as_prediction


def _fidelity(psi, sigma):
    return float(np.real(np.vdot(psi, sigma @ psi)))


def _max_fidelity(targets, sigma):
    return max(_fidelity(t, sigma) for t in targets)


def _observables(obs):
    mats = [check_hermitian(as_square(o)) for o in obs]
    for m in mats:
        ev = np.linalg.eigvalsh(m)
        if ev[0] < -1e-10 or ev[-1] > 1 + 1e-10:
            raise ValidationError("observables must satisfy 0 <= O <= I")
    return tuple(mats)


def _targets(targets):
    ts = [targets] if np.ndim(targets) == 1 else list(targets)
    if not ts:
        raise ValidationError("at least one target state is required")
    return tuple(check_unit_vector(t) for t in ts)


def _bit(p):
    p = as_prediction(p)
    if not isinstance(p, Bit):
        raise ValidationError(f"expected a bit prediction, got {type(p).__name__}")
    return p.value


class SuccessPredicate:
    """Base class: ``evaluate(p, sigma)`` tells whether ``p`` is correct for ``sigma``."""

    epsilon: float

    def with_epsilon(self, epsilon):
        return replace(self, epsilon=float(epsilon))

    def evaluate(self, p, sigma):
        p = as_prediction(p)
        if isinstance(p, CoverageFailure):
            return False
        return bool(self._evaluate(p, as_square(sigma)))

    def __call__(self, p, sigma):
        return self.evaluate(p, sigma)


@dataclass(frozen=True, eq=False)
class ShadowTomography(SuccessPredicate):
    """Every estimate within ``epsilon`` of its expectation."""

    observables: tuple
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "observables", _observables(self.observables))

    def expectations(self, sigma):
        return np.array([np.real(np.trace(o @ sigma)) for o in self.observables])

    def _evaluate(self, p, sigma):
        if not isinstance(p, ExpectationTuple) or len(p.values) != len(self.observables):
            raise ValidationError("shadow tomography needs one estimate per observable")
        return np.max(np.abs(np.array(p.values) - self.expectations(sigma))) <= self.epsilon


@dataclass(frozen=True)
class Tomography(SuccessPredicate):
    """Trace-norm error at most ``epsilon``."""

    epsilon: float

    def _evaluate(self, p, sigma):
        if not isinstance(p, StateDescription):
            raise ValidationError("tomography needs a state description")
        if p.matrix.shape != sigma.shape:
            raise DimensionError("prediction and state dimensions differ")
        return trace_norm(p.matrix - sigma, validate=False) <= self.epsilon


@dataclass(frozen=True, eq=False)
class VerifyPure(SuccessPredicate):
    """Tolerant verification against a list of pure targets.

    Fails on ``(1, sigma)`` when some target has fidelity at least
    ``1 - epsilon`` and on ``(0, sigma)`` when every target has fidelity at
    most ``1 - 2 epsilon``. Inputs in between succeed either way.
    """

    targets: tuple
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "targets", _targets(self.targets))

    def _evaluate(self, p, sigma):
        f = _max_fidelity(self.targets, sigma)
        if _bit(p) == 1:
            return f < 1.0 - self.epsilon
        return f > 1.0 - 2.0 * self.epsilon


@dataclass(frozen=True)
class Mixedness(SuccessPredicate):
    """Tolerant mixedness test in full trace norm.

    Fails on ``(1, sigma)`` when ``||sigma - I/d||_1 <= epsilon`` and on
    ``(0, sigma)`` when ``||sigma - I/d||_1 >= 2 epsilon``.
    """

    epsilon: float

    def _evaluate(self, p, sigma):
        dist = trace_norm(sigma - maximally_mixed(sigma.shape[0]), validate=False)
        if _bit(p) == 1:
            return dist > self.epsilon
        return dist < 2.0 * self.epsilon


@dataclass(frozen=True, eq=False)
class FidelityEst(SuccessPredicate):
    """Scalar estimate within ``epsilon`` of the fidelity with a pure target."""

    target: np.ndarray
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "target", check_unit_vector(self.target))

    def _evaluate(self, p, sigma):
        if not isinstance(p, Scalar):
            raise ValidationError("fidelity estimation needs a scalar prediction")
        return abs(p.value - _fidelity(self.target, sigma)) <= self.epsilon


def evaluate_success(pred, p, sigma):
    """Whether ``(p, sigma)`` lies in the success set of ``pred``."""
    return pred.evaluate(p, sigma)


class DFunction:
    """Base class for task-defining functions ``d(p, sigma) >= 0``."""

    bound = 1.0

    def __call__(self, p, sigma):
        return self.evaluate(p, sigma)

    def evaluate(self, p, sigma):
        p = as_prediction(p)
        if isinstance(p, CoverageFailure):
            return float(self.bound)
        return float(self._evaluate(p, as_square(sigma)))

    def success(self, epsilon):
        """Predicate ``d(p, sigma) <= epsilon``."""
        return DSuccess(self, float(epsilon))


@dataclass(frozen=True)
class TraceDist(DFunction):
    """Half the trace norm between a predicted state and the true one.

    The bound is 1 (orthogonal pure states), not 1/2.
    """

    bound: float = 1.0

    def _evaluate(self, p, sigma):
        if not isinstance(p, StateDescription):
            raise ValidationError("trace distance needs a state description")
        return 0.5 * trace_norm(p.matrix - sigma, validate=False)


@dataclass(frozen=True, eq=False)
class ShadowMax(DFunction):
    """Largest estimate error over the observables."""

    observables: tuple = field(default_factory=tuple)
    bound: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "observables", _observables(self.observables))

    def _evaluate(self, p, sigma):
        if not isinstance(p, ExpectationTuple) or len(p.values) != len(self.observables):
            raise ValidationError("one estimate per observable is required")
        exp = np.array([np.real(np.trace(o @ sigma)) for o in self.observables])
        return float(np.max(np.abs(np.array(p.values) - exp)))


@dataclass(frozen=True, eq=False)
class VerifyD(DFunction):
    """``p + (1 - p)(1 - <psi|sigma|psi>)``."""

    target: np.ndarray = None
    bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "target", check_unit_vector(self.target))

    def _evaluate(self, p, sigma):
        b = _bit(p)
        return b + (1 - b) * (1.0 - _fidelity(self.target, sigma))


@dataclass(frozen=True)
class MixednessD(DFunction):
    """``p + (1 - p) ||sigma - I/d||_1 / 2``."""

    bound: float = 1.0

    def _evaluate(self, p, sigma):
        b = _bit(p)
        dist = trace_norm(sigma - maximally_mixed(sigma.shape[0]), validate=False)
        return b + (1 - b) * 0.5 * dist


@dataclass(frozen=True, eq=False)
class DSuccess(SuccessPredicate):
    dfunction: DFunction
    epsilon: float

    def _evaluate(self, p, sigma):
        return self.dfunction.evaluate(p, sigma) <= self.epsilon


def evaluate_dfunction(d, p, sigma):
    return d.evaluate(p, sigma)
