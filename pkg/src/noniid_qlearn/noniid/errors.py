"""Error-probability estimates and the wrapper guarantees they are compared with."""

import math
from dataclasses import dataclass

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from ..linalg import ValidationError, as_generator, trace_norms
from ..parallel import master_entropy, parallel_map, stream
from ..states import MultipartiteState, permute_random
from .algorithms import MeasurementEngine, _algorithm1, run_iid


@dataclass(frozen=True)
class ErrorEstimate:
    """Failure frequency with a Wilson 95% interval."""

    delta_hat: float
    ci_halfwidth: float
    trials: int
    failures: int
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, failures, trials, alpha=0.05):
        failures, trials = int(failures), int(trials)
        if trials < 1:
            raise ValidationError("at least one trial is required")
        lo, hi = proportion_confint(failures, trials, alpha=alpha, method="wilson")
        return cls(failures / trials, (hi - lo) / 2.0, trials, failures, float(lo), float(hi))

    def to_dict(self):
        return {
            "delta_hat": self.delta_hat,
            "ci_halfwidth": self.ci_halfwidth,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "trials": self.trials,
            "failures": self.failures,
        }


def wilson(successes, trials, alpha=0.05):
    """Wilson interval ``(low, high)`` for a binomial proportion."""
    lo, hi = proportion_confint(int(successes), int(trials), alpha=alpha, method="wilson")
    return float(lo), float(hi)


def _trial_loop(seed, key, trials, body, block=250):
    """Run ``body(rng)`` per trial with per-trial streams; ordered results."""
    base = master_entropy(seed)
    starts = list(range(0, int(trials), block))

    def chunk(s):
        return [body(stream(base, key, i)) for i in range(s, min(s + block, int(trials)))]

    return [x for part in parallel_map(chunk, starts) for x in part]


def error_probability_with_calibration(state_builder, wrapper, predicate, trials=10_000, rng=None, return_records=False):
    """Fraction of runs whose prediction fails against the conditional test copy.

    Parameters
    ----------
    state_builder : MultipartiteState or callable
        The input, or ``state_builder(rng)`` returning a fresh input per
        trial.
    wrapper : object
        Anything with ``run(rng, state=None)`` returning a ``RunRecord``
        (a fitted ``NonIidWrapper`` for instance) or a callable
        ``wrapper(state, rng)``.
    """
    fixed = isinstance(state_builder, MultipartiteState)
    if hasattr(wrapper, "run") and fixed:
        if hasattr(wrapper, "fit"):
            wrapper = wrapper.fit(state_builder)
        run = lambda st, r: wrapper.run(r)
    elif hasattr(wrapper, "run"):
        run = lambda st, r: wrapper.run(r, state=st)
    elif callable(wrapper):
        run = lambda st, r: wrapper(st, r)
    else:
        raise ValidationError("wrapper must be callable or expose run(rng, state=None)")

    def body(r):
        st = state_builder if fixed else state_builder(r)
        rec = run(st, r)
        return (not predicate.evaluate(rec.p, rec.conditional_test_state)), rec

    out = _trial_loop(rng, "delta-calibration", trials, body)
    fails = sum(f for f, _ in out)
    est = ErrorEstimate.from_counts(fails, trials)
    return (est, [r for _, r in out]) if return_records else est


def error_probability_without_calibration(state, alg, predicate, trials=10_000, rng=None, reservoir=None):
    """Failure frequency with test copies conditioned on the prediction only.

    Runs are grouped by prediction; each group's conditional state is the
    average of its per-run conditionals, an unbiased estimate of the state
    given the prediction.
    """
    engine = MeasurementEngine(state, alg.pool)
    recs = _trial_loop(rng, "delta-no-calibration", trials, lambda r: _algorithm1(engine, alg, r, state))
    groups = {}
    for rec in recs:
        acc = groups.setdefault(rec.p.key(), [rec.p, 0.0, 0])
        acc[1] = acc[1] + rec.conditional_test_state
        acc[2] += 1
    fails = 0
    for p, total, count in groups.values():
        if not predicate.evaluate(p, total / count):
            fails += count
    return ErrorEstimate.from_counts(fails, trials)


def iid_error_probability(sigma, alg, predicate, trials=10_000, rng=None):
    """Error probability of the raw learner on i.i.d. copies of ``sigma``."""
    out = _trial_loop(rng, "delta-iid", trials, lambda r: not predicate.evaluate(run_iid(alg, sigma, r)[0], sigma))
    return ErrorEstimate.from_counts(sum(out), trials)


def sup_branch_delta_a(records, alg, predicate, trials_per_state=2000, rng=None, max_states=20, decimals=8):
    """Largest learner error over observed calibrated test copies.

    The supremum over all calibration records is not computable for
    continuous families; the maximum over observed records is a lower
    bound on it.

    Returns ``(worst ErrorEstimate, number of distinct states examined)``.
    """
    seen = {}
    for rec in records:
        st = rec.test_state_given_w
        key = tuple(np.round(np.concatenate([st.real.ravel(), st.imag.ravel()]), decimals) + 0.0)
        seen.setdefault(key, st)
        if len(seen) >= max_states:
            break
    rng = as_generator(rng)
    worst = None
    for st in seen.values():
        est = iid_error_probability(st, alg, predicate, trials_per_state, rng)
        if worst is None or est.delta_hat > worst.delta_hat:
            worst = est
    return worst, len(seen)


def delta_prime(state, wrapper, predicate, trials=10_000, rng=None):
    """Error averaged over explicit site permutations of a fixed input.

    Each trial permutes the input with a fresh permutation and runs the
    wrapper on the permuted state without further shuffling; the learner
    never sees the permutation.
    """
    alg = wrapper.algorithm if hasattr(wrapper, "algorithm") else wrapper

    def body(r):
        permuted, _ = permute_random(state, r)
        rec = _algorithm1(MeasurementEngine(permuted, alg.pool), alg, r, permuted)
        return not predicate.evaluate(rec.p, rec.conditional_test_state)

    out = _trial_loop(rng, "delta-prime", trials, body)
    return ErrorEstimate.from_counts(sum(out), trials)


def wrapper_error_bound(N, k_a, delta_a, d, epsilon, sup_delta_a=0.0):
    """Guarantee on the wrapper error at precision ``2 epsilon``.

    ``2 sup_delta_a + 6 sqrt(k_a^2 ln^2(k_a/delta_a) ln d / (N epsilon^2))``.
    """
    if N <= 1 or epsilon <= 0:
        raise ValidationError("need N > 1 and epsilon > 0")
    k_a = int(k_a)
    term = 6.0 * math.sqrt(k_a**2 * math.log(k_a / delta_a) ** 2 * math.log(d) / (N * epsilon**2))
    return 2.0 * sup_delta_a + term


def wrapper_size_condition(N, k_a):
    """``k_a <= N / ln N``."""
    return k_a <= N / math.log(N)


def shift_probability_bound(N, K, d, eps_prime):
    """Bound on the probability that the learning outcomes move the test copy by more than ``eps_prime``."""
    return math.sqrt(16.0 * K**2 * math.log(d) / (N * eps_prime**2))


def general_shift_bound(N, k, d, eps_prime):
    """Counterpart of ``shift_probability_bound`` for general measurements on ``k`` copies."""
    return 12.0 * math.sqrt(2.0 * k**3 * d**2 * math.log(d) / (N * eps_prime**2))


def shift_frequency(records, eps_prime):
    """Frequency of ``||rho_given_all - rho_given_w||_1 > eps_prime`` among records."""
    a = np.stack([r.conditional_test_state for r in records])
    b = np.stack([r.test_state_given_w for r in records])
    norms = trace_norms(a - b)
    return ErrorEstimate.from_counts(int(np.sum(norms > eps_prime)), len(records))
