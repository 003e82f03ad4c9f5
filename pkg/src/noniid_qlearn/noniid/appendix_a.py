"""Exact permutation enumeration for the bit-mean example.

A single bit string is fixed and its sites are permuted uniformly; the
learner sees the first ``N - 1`` permuted bits and the last one is the
test bit. All probabilities are exact rationals.
"""

import itertools
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from ..linalg import ValidationError

MAX_N = 10


def _check_even(N):
    N = int(N)
    if N < 2 or N % 2 or N > MAX_N:
        raise ValidationError(f"N must be even and at most {MAX_N}")
    return N


def two_strings(N):
    """Half zeros then half ones, and one more zero than that."""
    N = _check_even(N)
    half = N // 2
    return (0,) * half + (1,) * half, (0,) * (half + 1) + (1,) * (half - 1)


def _permuted(x):
    for perm in itertools.permutations(range(len(x))):
        yield perm, tuple(x[i] for i in perm)


def training_distribution(x, event=None):
    """Exact law of the training string given an event on the test position.

    ``event(j)`` receives the 0-based original index moved to the test
    position; ``None`` means no conditioning.
    """
    counts = Counter()
    for perm, y in _permuted(x):
        if event is None or event(perm[-1]):
            counts[y[:-1]] += 1
    total = sum(counts.values())
    return {k: Fraction(c, total) for k, c in counts.items()}


def appendix_a_distribution_check(N):
    """Whether the two conditioned training laws coincide exactly.

    First string: the test bit comes from the ones block. Second string:
    the test bit comes from the zeros block. Both laws are uniform over
    strings with ``N/2`` zeros and ``N/2 - 1`` ones.
    """
    N = _check_even(N)
    a, b = two_strings(N)
    half = N // 2
    law_a = training_distribution(a, lambda j: j >= half)
    law_b = training_distribution(b, lambda j: j <= half)
    return law_a == law_b


def mean_estimator(bits):
    return Fraction(sum(bits), len(bits))


def exact_delta_prime(x, estimator, epsilon):
    """Exact permutation-averaged failure ``Pr[|x_test - F(train)| > epsilon]``."""
    eps = Fraction(epsilon).limit_denominator(10**9)
    fails = total = 0
    for _, y in _permuted(x):
        total += 1
        if abs(Fraction(y[-1]) - Fraction(estimator(y[:-1]))) > eps:
            fails += 1
    return Fraction(fails, total)


@dataclass(frozen=True)
class AppendixAResult:
    N: int
    epsilon: float
    distributions_equal: bool
    delta_prime_first: Fraction
    delta_prime_second: Fraction

    @property
    def delta_prime_lower(self):
        """The larger of the two errors; no estimator keeps both below 1/4."""
        return max(self.delta_prime_first, self.delta_prime_second)

    @property
    def passed(self):
        return self.distributions_equal and self.delta_prime_lower >= Fraction(1, 4)


def appendix_a_experiment(N=6, epsilon=0.1, estimator=mean_estimator):
    a, b = two_strings(N)
    return AppendixAResult(
        N,
        float(epsilon),
        appendix_a_distribution_check(N),
        exact_delta_prime(a, estimator, epsilon),
        exact_delta_prime(b, estimator, epsilon),
    )
