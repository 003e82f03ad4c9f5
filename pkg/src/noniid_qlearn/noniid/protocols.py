"""Application learners and their wrapped versions.

Each ``*_spec`` builder returns an ``IidAlgorithmSpec`` for the raw
single-copy learner; the ``*_protocol`` functions run it once inside the
calibrated wrapper on a given input.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..linalg import (
    I2,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DimensionError,
    ValidationError,
    as_generator,
    as_square,
    check_unit_vector,
    maximally_mixed,
    projector,
    project_to_density_matrix,
    tensor,
    trace_norm,
)
from ..measurements import clifford_group, linear_inversion_pauli6, pauli6_povm
from ..shadows import median_of_means, median_of_means_batch
from .algorithms import IidAlgorithmSpec, MeasurementEngine, NonIidWrapper, algorithm1_run, max_k_a
from .errors import wilson
from .predictions import Bit, ExpectationTuple, Scalar, StateDescription


def _n_qubits(d):
    n = int(round(math.log2(d)))
    if 2**n != d:
        raise DimensionError("site dimension must be a power of two")
    return n


@lru_cache(maxsize=None)
def clifford_pool(n_qubits, mode="global"):
    """Random-Clifford basis measurements and their shadow inverses.

    Returns ``(effects, snapshots)`` of shape (P, d, d, d): effect and
    snapshot matrix for each pool member and outcome. ``global`` uses the
    full Clifford group on ``n_qubits``; ``local`` uses products of
    single-qubit Cliffords with the per-qubit inverse.
    """
    n = int(n_qubits)
    d = 2**n
    if mode == "global":
        table = clifford_group(n)
        vecs = table.conj()
        eff = np.einsum("pvi,pvj->pvij", vecs, vecs.conj())
        snaps = (d + 1) * eff - np.eye(d)
    elif mode == "local":
        one = clifford_group(1).conj()
        e1 = np.einsum("pvi,pvj->pvij", one, one.conj())
        s1 = 3 * e1 - I2
        eff, snaps = [], []
        for combo in itertools.product(range(len(one)), repeat=n):
            es, ss = [], []
            for bits in itertools.product(range(2), repeat=n):
                es.append(tensor(*[e1[c, b] for c, b in zip(combo, bits)]))
                ss.append(tensor(*[s1[c, b] for c, b in zip(combo, bits)]))
            eff.append(es)
            snaps.append(ss)
        eff, snaps = np.array(eff), np.array(snaps)
    else:
        raise ValidationError(f"unknown measurement mode {mode!r}")
    eff.setflags(write=False)
    snaps.setflags(write=False)
    return eff, snaps


def _shadow_values(observables, mode, d):
    eff, snaps = clifford_pool(_n_qubits(d), mode)
    obs = np.stack([as_square(o) for o in observables])
    if obs.shape[1:] != (d, d):
        raise DimensionError("observable dimension differs from the site dimension")
    return eff, np.einsum("pxij,oji->pxo", snaps, obs).real


def _uniform_draw(pool_size, k_a):
    return lambda rng: rng.integers(pool_size, size=k_a)


def shadow_spec(observables, k_a, delta_a, n_groups=1, mode="global"):
    """Classical-shadow estimates of ``observables``, clipped to [0, 1]."""
    d = as_square(observables[0]).shape[0]
    eff, vals = _shadow_values(observables, mode, d)

    def predictor(ids, outcomes, rng):
        est = median_of_means_batch(vals[ids, outcomes].T, n_groups)
        return ExpectationTuple(tuple(np.clip(est, 0.0, 1.0)))

    return IidAlgorithmSpec(eff, predictor, k_a, delta_a, _uniform_draw(len(eff), k_a), name="shadows")


def _targets(targets):
    ts = [targets] if np.ndim(targets) == 1 else list(targets)
    if not ts:
        raise ValidationError("at least one target is required")
    return [check_unit_vector(t) for t in ts]


def verify_spec(targets, epsilon, k_a, delta_a, n_groups=1, mode="global"):
    """Accept (0) iff some shadow fidelity estimate is at least ``1 - epsilon/2``."""
    ts = _targets(targets)
    eff, vals = _shadow_values([projector(t) for t in ts], mode, ts[0].size)
    threshold = 1.0 - epsilon / 2.0

    def predictor(ids, outcomes, rng):
        mu = median_of_means_batch(vals[ids, outcomes].T, n_groups)
        return Bit(0 if np.any(mu >= threshold) else 1)

    return IidAlgorithmSpec(eff, predictor, k_a, delta_a, _uniform_draw(len(eff), k_a), name="verify")


def _default_k_a(state, delta_a, k_a):
    if k_a is not None:
        return int(k_a)
    k = max_k_a(state.n_sites, delta_a)
    if k < 1:
        raise ValidationError("too few sites for any learner at this delta_A")
    return k


def verify_pure_protocol(state, targets, epsilon, delta, measurement_mode="global", rng=None, k_a=None, delta_a=None, n_groups=1):
    """One wrapped verification run; ``p`` is ``Bit(0)`` on accept.

    ``k_a`` defaults to the largest value the input size admits and
    ``delta_a`` to ``delta``.
    """
    delta_a = delta if delta_a is None else delta_a
    k_a = _default_k_a(state, delta_a, k_a)
    alg = verify_spec(targets, epsilon, k_a, delta_a, n_groups, measurement_mode)
    return algorithm1_run(state, alg, rng)


def shadow_protocol(state, observables, k_a=None, delta_a=0.1, n_groups=1, mode="global", rng=None):
    k_a = _default_k_a(state, delta_a, k_a)
    return algorithm1_run(state, shadow_spec(observables, k_a, delta_a, n_groups, mode), rng)


@dataclass(frozen=True)
class VerificationExpectation:
    """Acceptance rate and the infidelity-weighted acceptance estimate."""

    completeness: float
    completeness_ci: tuple
    soundness: float
    soundness_stderr: float
    trials: int
    k: int
    K: int
    N: int

    def to_dict(self):
        return {
            "completeness": self.completeness,
            "completeness_ci_low": self.completeness_ci[0],
            "completeness_ci_high": self.completeness_ci[1],
            "soundness": self.soundness,
            "soundness_stderr": self.soundness_stderr,
            "trials": self.trials,
            "k": self.k,
            "K": self.K,
            "N": self.N,
        }


def expectation_group_count(epsilon):
    """``ceil(2 ln(1/epsilon))`` median-of-means groups."""
    return max(1, math.ceil(2.0 * math.log(1.0 / epsilon)))


def verification_expectation(state, psi, epsilon, k, K=None, N=None, trials=1000, rng=None):
    """Monte Carlo estimate of the acceptance operator's two expectations.

    Each trial draws ``l`` from ``k+1 .. k+N/2`` and measures sites
    ``0 .. l-1`` in fresh uniformly random Clifford bases. The first ``k``
    outcomes give the median-of-means fidelity estimate over ``K``
    groups; accept iff it is at least ``1 - epsilon/5``. ``completeness``
    is the acceptance frequency and ``soundness`` the mean of the
    acceptance indicator times the test copy's infidelity given all
    outcomes.
    """
    rng = as_generator(rng)
    psi = check_unit_vector(psi)
    K = expectation_group_count(epsilon) if K is None else int(K)
    N = state.n_sites if N is None else int(N)
    if N > state.n_sites or N <= 2 * k:
        raise ValidationError("need 2k < N <= number of sites")
    if k < K:
        raise ValidationError("need at least one snapshot per group")
    eff, vals = _shadow_values([projector(psi)], "global", psi.size)
    vals = vals[..., 0]
    engine = MeasurementEngine(state, eff)
    thr = 1.0 - epsilon / 5.0
    acc = np.zeros(trials)
    weighted = np.zeros(trials)
    for t in range(trials):
        l = int(rng.integers(k + 1, k + N // 2 + 1))
        pids = rng.integers(len(eff), size=l)
        (x,), (test,), _ = engine.run(rng, [(np.arange(l), pids)], test_site=N - 1)
        mu = median_of_means(vals[pids[:k], x[:k]], K)
        if mu >= thr:
            acc[t] = 1.0
            weighted[t] = 1.0 - float(np.real(np.vdot(psi, test @ psi)))
    return VerificationExpectation(
        float(acc.mean()),
        wilson(int(acc.sum()), trials),
        float(weighted.mean()),
        float(weighted.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan"),
        int(trials),
        int(k),
        int(K),
        int(N),
    )


PAULI_1Q = (I2, PAULI_X, PAULI_Y, PAULI_Z)
PAULI_NAMES = "IXYZ"


@lru_cache(maxsize=None)
def pauli_operators(n_qubits):
    """All ``4**n`` Pauli strings with their labels."""
    ops, labels = [], []
    for combo in itertools.product(range(4), repeat=int(n_qubits)):
        ops.append(tensor(*[PAULI_1Q[c] for c in combo]))
        labels.append("".join(PAULI_NAMES[c] for c in combo))
    arr = np.array(ops)
    arr.setflags(write=False)
    return arr, tuple(labels)


def pauli_sampling_law(psi):
    """Characteristic values ``<psi|P|psi>`` and the law ``<psi|P|psi>^2 / d``."""
    psi = check_unit_vector(psi)
    n = _n_qubits(psi.size)
    if n > 2:
        raise ValidationError("Pauli enumeration supports at most two qubits")
    ops, _ = pauli_operators(n)
    chi = np.einsum("i,pij,j->p", psi.conj(), ops, psi).real
    law = chi**2 / psi.size
    if law[1:].sum() <= 1e-12:
        raise ValidationError("degenerate sampling law: no non-identity Pauli overlap")
    return chi, law / law.sum()


def fidelity_repetitions(chi, delta):
    """``ceil(2 ln(2/delta) delta / chi^2)`` per Pauli (0 where chi vanishes)."""
    chi2 = np.asarray(chi) ** 2
    out = np.zeros(chi2.shape, dtype=int)
    nz = chi2 > 1e-12
    out[nz] = np.ceil(2.0 * math.log(2.0 / delta) * delta / chi2[nz] - 1e-12).astype(int)
    return out


def fidelity_pauli_count(epsilon, delta):
    """``ceil(1 / (epsilon^2 delta))`` sampled Paulis."""
    return math.ceil(1.0 / (epsilon**2 * delta) - 1e-12)


def fidelity_spec(psi, epsilon, delta=1.0 / 6.0, delta_a=None):
    """Direct fidelity estimation with two-outcome Pauli measurements.

    Outcome 1 of a pool member is the ``+1`` eigenspace. The learner draws
    ``ceil(1/(epsilon^2 delta))`` Paulis from the characteristic law and
    measures each ``m_i`` times; its copy count is the realized total.
    """
    psi = check_unit_vector(psi)
    chi, law = pauli_sampling_law(psi)
    ops, _ = pauli_operators(_n_qubits(psi.size))
    d = psi.size
    eye = np.eye(d)
    pool = np.stack([np.stack([(eye - p) / 2, (eye + p) / 2]) for p in ops])
    reps = fidelity_repetitions(chi, delta)
    n_paulis = fidelity_pauli_count(epsilon, delta)
    delta_a = delta / 2.0 if delta_a is None else delta_a

    def draw(rng):
        picks = rng.choice(len(ops), size=n_paulis, p=law)
        return np.repeat(picks, reps[picks])

    def predictor(ids, outcomes, rng):
        weight = 1.0 / (reps[ids] * chi[ids])
        return Scalar(float(np.sum((2 * outcomes - 1) * weight) / n_paulis))

    spec = IidAlgorithmSpec(pool, predictor, n_paulis, delta_a, draw, name="fidelity")
    spec.chi, spec.law, spec.repetitions = chi, law, reps
    return spec


def fidelity_protocol(state, psi, epsilon, rng=None, delta=1.0 / 6.0, delta_a=None):
    """One wrapped fidelity-estimation run with a ``Scalar`` prediction."""
    return algorithm1_run(state, fidelity_spec(psi, epsilon, delta, delta_a), rng)


def flammia_liu_estimates(rho, psi, epsilon, runs, rng=None, delta=1.0 / 6.0):
    """Vectorized estimates from ``runs`` independent raw learner runs on ``rho``."""
    rng = as_generator(rng)
    psi = check_unit_vector(psi)
    chi, law = pauli_sampling_law(psi)
    ops, _ = pauli_operators(_n_qubits(psi.size))
    reps = fidelity_repetitions(chi, delta)
    n = fidelity_pauli_count(epsilon, delta)
    exp = np.einsum("pij,ji->p", ops, as_square(rho)).real
    picks = rng.choice(len(ops), size=(runs, n), p=law)
    m = reps[picks]
    plus = rng.binomial(m, np.clip((1.0 + exp[picks]) / 2.0, 0.0, 1.0))
    return np.sum((2 * plus - m) / (m * chi[picks]), axis=1) / n


def _tomography_estimate(outcomes):
    freq = np.bincount(outcomes, minlength=6) / max(len(outcomes), 1)
    return project_to_density_matrix(linear_inversion_pauli6(freq))


def tomography_spec(k_a, delta_a):
    """Pauli-6 measurements, linear inversion, projection onto states."""

    def predictor(ids, outcomes, rng):
        return StateDescription(_tomography_estimate(outcomes))

    return IidAlgorithmSpec([pauli6_povm()], predictor, k_a, delta_a, name="tomography")


def mixedness_threshold(epsilon):
    """Decision threshold ``3 epsilon / 2`` on ``||estimate - I/d||_1``."""
    return 1.5 * epsilon


def mixedness_spec(epsilon, k_a, delta_a):
    """Output 1 iff the tomographic estimate is farther than ``3 epsilon/2`` from I/2."""
    thr = mixedness_threshold(epsilon)

    def predictor(ids, outcomes, rng):
        est = _tomography_estimate(outcomes)
        return Bit(int(trace_norm(est - maximally_mixed(2), validate=False) > thr))

    return IidAlgorithmSpec([pauli6_povm()], predictor, k_a, delta_a, name="mixedness")


def _qubit_sites(state):
    if state.site_dim != 2:
        raise DimensionError("this protocol needs qubit sites")


def tomography_protocol(state, epsilon=None, rng=None, k_a=None, delta_a=0.1):
    """One wrapped tomography run. ``epsilon`` only documents the target precision."""
    _qubit_sites(state)
    k_a = _default_k_a(state, delta_a, k_a)
    return algorithm1_run(state, tomography_spec(k_a, delta_a), rng)


def mixedness_protocol(state, epsilon, rng=None, k_a=None, delta_a=0.1):
    _qubit_sites(state)
    k_a = _default_k_a(state, delta_a, k_a)
    return algorithm1_run(state, mixedness_spec(epsilon, k_a, delta_a), rng)


def wrapper_for(alg, state, shuffle="auto"):
    """Fitted ``NonIidWrapper`` for repeated runs on ``state``."""
    return NonIidWrapper(alg, shuffle=shuffle).fit(state)
