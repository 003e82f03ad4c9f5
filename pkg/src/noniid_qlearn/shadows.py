"""Classical-shadow snapshots and median-of-means aggregation."""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .linalg import DimensionError, ValidationError, as_generator, as_square, tensor
from .measurements import BasisMeasurement, clifford_group, random_clifford_unitary


@dataclass(frozen=True)
class ShadowSnapshot:
    """One classical-shadow estimate with the record that produced it."""

    matrix: np.ndarray
    basis_label: object = None
    outcome: object = None


@dataclass(frozen=True)
class MedianOfMeansResult:
    value: float
    group_count: int
    group_size: int
    dropped: int


def _unitary(u):
    return u.unitary if isinstance(u, BasisMeasurement) else as_square(u)


def global_snapshot(unitary, outcome, d=None, label=None):
    """``(d+1) U^dagger |v><v| U - I`` for a basis measurement ``U``."""
    u = _unitary(unitary)
    d = u.shape[0] if d is None else int(d)
    if u.shape[0] != d:
        raise DimensionError("unitary dimension differs from d")
    if not 0 <= int(outcome) < d:
        raise ValidationError(f"outcome {outcome} out of range for d={d}")
    vec = u[int(outcome)].conj()
    m = (d + 1) * np.outer(vec, vec.conj()) - np.eye(d)
    return ShadowSnapshot(m, label, int(outcome))


def local_snapshot(per_qubit):
    """Tensor product of single-qubit inverses ``3 u^dagger |b><b| u - I``."""
    factors, bits = [], []
    for u, b in per_qubit:
        factors.append(global_snapshot(u, b, 2).matrix)
        bits.append(int(b))
    return ShadowSnapshot(tensor(*factors), None, tuple(bits))


def shadow_mean_exact(rho, basis_set, weights=None):
    """Exact average snapshot over bases and outcomes (no sampling).

    Parameters
    ----------
    rho : array_like
        State being measured.
    basis_set : sequence
        Unitaries or ``BasisMeasurement`` objects.
    weights : sequence of float, optional
        Probability of each basis; uniform by default.
    """
    r = as_square(rho)
    us = [_unitary(u) for u in basis_set]
    w = np.full(len(us), 1.0 / len(us)) if weights is None else np.asarray(weights, dtype=float)
    d = r.shape[0]
    acc = np.zeros((d, d), dtype=complex)
    for wb, u in zip(w, us):
        for v in range(d):
            vec = u[v].conj()
            p = np.real(np.vdot(vec, r @ vec))
            acc += wb * p * global_snapshot(u, v, d).matrix
    return acc


def median_of_means(values, K, return_info=False):
    """Median of ``K`` group means; trailing values that do not fill a group are dropped.

    For an even ``K`` the lower-middle group mean is returned.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    K = int(K)
    if x.size == 0:
        raise ValidationError("median_of_means needs at least one value")
    if K < 1 or K > x.size:
        raise ValidationError(f"group count {K} invalid for {x.size} values")
    size = x.size // K
    means = np.sort(x[: size * K].reshape(K, size).mean(axis=1))
    val = float(means[(K - 1) // 2])
    if return_info:
        return MedianOfMeansResult(val, K, size, x.size - size * K)
    return val


def median_of_means_batch(values, K):
    """Row-wise median of means for an array of shape (batch, n)."""
    x = np.asarray(values, dtype=float)
    size = x.shape[1] // K
    means = np.sort(x[:, : size * K].reshape(x.shape[0], K, size).mean(axis=2), axis=1)
    return means[:, (K - 1) // 2]


def _matrix(s):
    return s.matrix if isinstance(s, ShadowSnapshot) else as_square(s)


def estimate_expectations(snapshots, observables, K):
    """Median-of-means estimate of ``tr(O rho)`` for each observable."""
    mats = np.stack([_matrix(s) for s in snapshots])
    obs = np.stack([as_square(o) for o in observables])
    if mats.shape[1:] != obs.shape[1:]:
        raise DimensionError("snapshot and observable dimensions differ")
    vals = np.einsum("sij,oji->os", mats, obs).real
    return np.array([median_of_means(v, K) for v in vals])


def snapshot_values(unitaries, outcomes, observable):
    """``tr(snapshot O)`` for global snapshots without forming the matrices.

    ``unitaries`` has shape (S, d, d) and ``outcomes`` shape (S,).
    """
    u = np.asarray(unitaries, dtype=complex)
    d = u.shape[-1]
    vecs = u[np.arange(u.shape[0]), outcomes].conj()
    o = as_square(observable)
    quad = np.einsum("si,ij,sj->s", vecs.conj(), o, vecs).real
    return (d + 1) * quad - np.trace(o).real


def sample_global_snapshots(rho, count, rng, n_qubits=None, table=None):
    """Measure ``count`` copies of ``rho`` in uniformly random Clifford bases.

    Returns ``(unitaries, outcomes)``. For up to two qubits the enumerated
    Clifford group is used; otherwise the tableau sampler.
    """
    rng = as_generator(rng)
    r = as_square(rho)
    d = r.shape[0]
    n = int(round(np.log2(d))) if n_qubits is None else int(n_qubits)
    if table is None and n <= 2:
        table = clifford_group(n)
    if table is not None:
        us = table[rng.integers(len(table), size=count)]
    else:
        us = np.stack([random_clifford_unitary(n, rng) for _ in range(count)])
    vecs = us.conj()
    probs = np.einsum("svi,ij,svj->sv", vecs.conj(), r, vecs).real
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=1, keepdims=True)
    u01 = rng.random(count)
    outcomes = (probs.cumsum(axis=1) < u01[:, None]).sum(axis=1)
    return us, np.minimum(outcomes, d - 1)


class ShadowEstimator(BaseEstimator):
    """Classical-shadow estimator with a fit/predict interface.

    Parameters
    ----------
    n_groups : int
        Number of median-of-means groups.
    mode : {"global", "local"}
        Snapshot inverse: global Clifford or per-qubit.

    ``fit`` consumes measurement records ``(unitary, outcome)``; for the
    local mode each record is a sequence of per-qubit ``(unitary, bit)``
    pairs. ``predict`` returns median-of-means estimates of observables.
    """

    def __init__(self, n_groups=1, mode="global"):
        self.n_groups = n_groups
        self.mode = mode

    def fit(self, records, y=None):
        if self.mode not in ("global", "local"):
            raise ValidationError(f"unknown shadow mode {self.mode!r}")
        if self.mode == "global":
            snaps = [global_snapshot(u, v) for u, v in records]
        else:
            snaps = [local_snapshot(rec) for rec in records]
        if len(snaps) < self.n_groups:
            raise ValidationError("fewer snapshots than median-of-means groups")
        self.snapshots_ = np.stack([s.matrix for s in snaps])
        self.n_snapshots_ = len(snaps)
        return self

    def predict(self, observables):
        if not hasattr(self, "snapshots_"):
            raise NotFittedError("ShadowEstimator is not fitted yet")
        return estimate_expectations(self.snapshots_, observables, self.n_groups)

    def state_estimate(self):
        """Plain average snapshot (an unbiased, generally non-PSD estimate)."""
        if not hasattr(self, "snapshots_"):
            raise NotFittedError("ShadowEstimator is not fitted yet")
        return self.snapshots_.mean(axis=0)


def write_snapshot_records(path, records, include_matrix=False):
    """Write ``(basis_label, outcome[, matrix])`` records, one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {"basis": _jsonable(rec.basis_label), "outcome": _jsonable(rec.outcome)}
            if include_matrix:
                m = np.asarray(rec.matrix, dtype=complex).reshape(-1)
                row["dim"] = int(np.sqrt(m.size))
                row["matrix"] = np.stack([m.real, m.imag], axis=1).tolist()
            fh.write(json.dumps(row) + "\n")


def read_snapshot_records(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            mat = None
            if "matrix" in row:
                arr = np.asarray(row["matrix"], dtype=float)
                d = int(row["dim"])
                mat = (arr[:, 0] + 1j * arr[:, 1]).reshape(d, d)
            out.append(ShadowSnapshot(mat, row["basis"], row["outcome"]))
    return out


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    if isinstance(x, np.integer):
        return int(x)
    return x
