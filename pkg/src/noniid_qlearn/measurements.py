"""POVMs, basis measurements, Clifford samplers and measurement families."""

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .linalg import (
    HADAMARD,
    I2,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    PHASE_S,
    CapacityError,
    DimensionError,
    ValidationError,
    as_generator,
    haar_vectors,
    tensor,
    trace_norms,
)

POVM_FORMAT = "noniid-qlearn/povm"
MAX_CLIFFORD_QUBITS = 3


class NotInformationallyCompleteError(ValidationError):
    """The POVM statistics do not determine the state."""


@dataclass(frozen=True)
class PovmDiagnostics:
    ok: bool
    min_eigenvalue: float
    completeness_deviation: float
    messages: tuple = ()


class Povm:
    """Finite-outcome measurement given by its effects.

    Parameters
    ----------
    elements : array_like, shape (m, d, d)
        Effects, positive semidefinite and summing to the identity.
    labels : sequence, optional
        Outcome labels; defaults to ``0 .. m-1``.
    validate : bool
        Raise ``ValidationError`` when the effects do not form a POVM.
    """

    def __init__(self, elements, labels=None, validate=True, name=None):
        e = np.asarray(elements, dtype=complex)
        if e.ndim != 3 or e.shape[1] != e.shape[2]:
            raise DimensionError("POVM elements must have shape (m, d, d)")
        self.elements = 0.5 * (e + np.conj(np.swapaxes(e, 1, 2)))
        self.elements.setflags(write=False)
        self.labels = tuple(range(e.shape[0])) if labels is None else tuple(labels)
        if len(self.labels) != e.shape[0]:
            raise ValidationError("one label per element is required")
        self.name = name
        if validate:
            diag = validate_povm(self)
            if not diag.ok:
                raise ValidationError("; ".join(diag.messages))

    @property
    def dim(self):
        return self.elements.shape[1]

    @property
    def n_outcomes(self):
        return self.elements.shape[0]

    def probabilities(self, rho):
        return apply_channel(self, rho)

    def __len__(self):
        return self.n_outcomes

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Povm{tag}(outcomes={self.n_outcomes}, dim={self.dim})"


def validate_povm(povm, tol=1e-10):
    """Report positivity and completeness of a POVM without raising."""
    e = povm.elements if isinstance(povm, Povm) else np.asarray(povm, dtype=complex)
    mins = np.linalg.eigvalsh(0.5 * (e + np.conj(np.swapaxes(e, 1, 2))))[:, 0]
    lo = float(mins.min())
    dev = float(np.max(np.abs(e.sum(axis=0) - np.eye(e.shape[1]))))
    msgs = []
    if lo < -tol:
        msgs.append(f"effect with negative eigenvalue {lo:.3e}")
    if dev > tol:
        msgs.append(f"effects do not sum to identity (deviation {dev:.3e})")
    return PovmDiagnostics(not msgs, lo, dev, tuple(msgs))


def apply_channel(povm, rho):
    """Outcome distribution ``tr(M_x rho)``."""
    r = np.asarray(rho, dtype=complex)
    if r.shape != (povm.dim, povm.dim):
        raise DimensionError(f"state of shape {r.shape} does not match POVM dim {povm.dim}")
    return np.einsum("xij,ji->x", povm.elements, r).real


def _draw(probs, rng):
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    return int(rng.choice(p.size, p=p / p.sum()))


def sample_outcome(povm, state, site, rng):
    """Measure one site of a multipartite state.

    Returns the outcome label and the conditioned remainder.
    """
    rng = as_generator(rng)
    probs = apply_channel(povm, state.reduced(site))
    x = _draw(probs, rng)
    res = state.condition(site, povm.elements[x])
    return povm.labels[x], res


def sample_iid(povm, rho, size, rng):
    """Outcome indices of ``size`` independent measurements of ``rho``."""
    probs = np.clip(apply_channel(povm, rho), 0.0, None)
    return as_generator(rng).choice(povm.n_outcomes, size=size, p=probs / probs.sum())


def tensor_povm(povms):
    """Product POVM with cartesian-product labels."""
    povms = list(povms)
    elems, labels = [], []
    for combo in itertools.product(*[range(p.n_outcomes) for p in povms]):
        elems.append(tensor(*[p.elements[i] for p, i in zip(povms, combo)]))
        labels.append(tuple(p.labels[i] for p, i in zip(povms, combo)))
    return Povm(np.stack(elems), labels, validate=False)


class BasisMeasurement:
    """Projective measurement in the basis ``{U^dagger |v>}``."""

    def __init__(self, unitary, validate=True, label=None):
        u = np.asarray(unitary, dtype=complex)
        if validate and np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > 1e-10:
            raise ValidationError("matrix is not unitary")
        self.unitary = u
        self.label = label

    @property
    def dim(self):
        return self.unitary.shape[0]

    def effects(self):
        vecs = self.unitary.conj()  # row v is (U^dagger |v>)^T
        return np.einsum("vi,vj->vij", vecs, vecs.conj())

    @property
    def povm(self):
        return Povm(self.effects(), validate=False, name=self.label)


def computational_povm(d=2):
    return Povm(np.stack([np.diag(np.eye(d)[i]).astype(complex) for i in range(d)]), name="computational")


def pauli_eigenprojectors():
    """``|b,+><b,+|, |b,-><b,-|`` for ``b`` in Z, X, Y."""
    out = []
    for p in (PAULI_Z, PAULI_X, PAULI_Y):
        out.append((I2 + p) / 2)
        out.append((I2 - p) / 2)
    return np.stack(out)


def pauli6_povm():
    """Six-outcome qubit POVM ordered (Z+, Z-, X+, X-, Y+, Y-)."""
    labels = ("Z+", "Z-", "X+", "X-", "Y+", "Y-")
    return Povm(pauli_eigenprojectors() / 3.0, labels, name="pauli6")


def pauli_basis_unitaries():
    """Unitaries whose computational-basis measurement reads Z, X and Y."""
    return [I2.copy(), HADAMARD.copy(), HADAMARD @ PHASE_S.conj().T]


def is_informationally_complete(povm, tol=1e-10):
    flat = povm.elements.reshape(povm.n_outcomes, -1)
    gram = flat.conj() @ flat.T
    return int(np.linalg.matrix_rank(gram, tol=tol)) == povm.dim ** 2


def phase_normalize(u, tol=1e-9):
    """Fix the global phase: first nonzero entry (column-major) real positive."""
    u = np.asarray(u, dtype=complex)
    flat = u.T.reshape(-1)
    idx = int(np.argmax(np.abs(flat) > tol))
    z = flat[idx]
    return u * (abs(z) / z)


def _real_key(a, decimals):
    a = np.asarray(a, dtype=complex)
    r = np.round(np.stack([a.real, a.imag]), decimals)
    # map -0.0 to 0.0 so equal matrices share a key
    return np.where(r == 0.0, 0.0, r).tobytes()


def _unitary_key(u, decimals=8):
    return _real_key(phase_normalize(u), decimals)


def _clifford_generators(n):
    gens = []
    eye = [I2] * n
    for q in range(n):
        for g in (HADAMARD, PHASE_S):
            ops = list(eye)
            ops[q] = g
            gens.append(tensor(*ops))
    for c in range(n):
        for t in range(n):
            if c != t:
                gens.append(_cnot(n, c, t))
    return gens


def _cnot(n, control, target):
    dim = 2 ** n
    m = np.zeros((dim, dim), dtype=complex)
    for x in range(dim):
        bits = [(x >> (n - 1 - q)) & 1 for q in range(n)]
        if bits[control]:
            bits[target] ^= 1
        y = sum(b << (n - 1 - q) for q, b in enumerate(bits))
        m[y, x] = 1.0
    return m


@lru_cache(maxsize=None)
def _clifford_table(n):
    if n > 2:
        raise CapacityError("Clifford enumeration is limited to two qubits")
    gens = _clifford_generators(n)
    start = phase_normalize(np.eye(2 ** n, dtype=complex))
    seen = {_unitary_key(start): start}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for g in gens:
                v = phase_normalize(g @ u)
                key = _unitary_key(v)
                if key not in seen:
                    seen[key] = v
                    nxt.append(v)
        frontier = nxt
    keys = sorted(seen)
    table = np.stack([seen[k] for k in keys])
    table.setflags(write=False)
    return table


def clifford_group(n_qubits):
    """All ``n``-qubit Cliffords modulo phase (24 for one qubit, 11520 for two)."""
    return _clifford_table(int(n_qubits))


def single_qubit_cliffords():
    """The 24 single-qubit Cliffords, phase-normalized."""
    return [u.copy() for u in _clifford_table(1)]


# symplectic tableau sampler


def _symplectic_form(a, b, n):
    return (a[..., :n] @ b[..., n:].T + a[..., n:] @ b[..., :n].T) % 2


def random_symplectic(n, rng):
    """Uniform element of Sp(2n, F_2) as a list of (v_i, w_i) row pairs.

    Pairs are drawn sequentially: ``v_i`` uniform among nonzero vectors
    orthogonal to all earlier pairs, then ``w_i`` uniform among vectors
    orthogonal to earlier pairs with ``<v_i, w_i> = 1``. The number of
    choices at every step does not depend on earlier choices, so the
    resulting symplectic basis is uniform.
    """
    rng = as_generator(rng)
    allv = np.array(list(itertools.product((0, 1), repeat=2 * n)), dtype=np.int64)
    pairs = []
    for _ in range(n):
        ok = np.ones(len(allv), dtype=bool)
        for v, w in pairs:
            ok &= _symplectic_form(allv, v[None], n)[:, 0] == 0
            ok &= _symplectic_form(allv, w[None], n)[:, 0] == 0
        cand_v = allv[ok & (allv.sum(axis=1) > 0)]
        v = cand_v[rng.integers(len(cand_v))]
        cand_w = allv[ok & (_symplectic_form(allv, v[None], n)[:, 0] == 1)]
        w = cand_w[rng.integers(len(cand_w))]
        pairs.append((v, w))
    return pairs


def pauli_from_vector(vec, n):
    """Hermitian Pauli ``i^{x.z} X^x Z^z`` for a vector ``(x | z)``."""
    ops = []
    for q in range(n):
        x, z = int(vec[q]), int(vec[n + q])
        ops.append({(0, 0): I2, (1, 0): PAULI_X, (0, 1): PAULI_Z, (1, 1): PAULI_Y}[(x, z)])
    return tensor(*ops)


def tableau_to_unitary(x_images, z_images):
    """Dense unitary with ``U X_j U^dagger = x_images[j]`` and same for Z.

    Column ``|x>`` is built as ``prod_{j: x_j = 1} x_images[j] |psi0>``
    where ``psi0`` is the joint +1 eigenvector of the Z images.
    """
    n = len(z_images)
    dim = 2 ** n
    proj = np.eye(dim, dtype=complex)
    for z in z_images:
        proj = proj @ (np.eye(dim) + z) / 2
    col = int(np.argmax(np.linalg.norm(proj, axis=0)))
    psi0 = proj[:, col] / np.linalg.norm(proj[:, col])
    u = np.zeros((dim, dim), dtype=complex)
    for x in range(dim):
        v = psi0
        for j in range(n):
            if (x >> (n - 1 - j)) & 1:
                v = x_images[j] @ v
        u[:, x] = v
    return phase_normalize(u)


def random_clifford_unitary(n_qubits, rng):
    """Uniform ``n``-qubit Clifford (modulo phase) as a dense matrix."""
    n = int(n_qubits)
    if n < 1 or n > MAX_CLIFFORD_QUBITS:
        raise CapacityError(f"Clifford sampling supports 1..{MAX_CLIFFORD_QUBITS} qubits")
    rng = as_generator(rng)
    pairs = random_symplectic(n, rng)
    signs = rng.choice((-1.0, 1.0), size=(2, n))
    xs = [signs[0, j] * pauli_from_vector(v, n) for j, (v, _) in enumerate(pairs)]
    zs = [signs[1, j] * pauli_from_vector(w, n) for j, (_, w) in enumerate(pairs)]
    return tableau_to_unitary(xs, zs)


def random_clifford(n_qubits, rng):
    """Uniformly random Clifford basis measurement."""
    return BasisMeasurement(random_clifford_unitary(n_qubits, rng), validate=False, label="clifford")


class MeasurementFamily:
    """Indexed POVMs ``M_r`` with a sampling law over the index.

    Effects of all members are pooled and deduplicated so that outcome
    records can be stored as indices into ``unique_effects``.
    """

    def __init__(self, povms, probs=None, name=None):
        self.povms = list(povms)
        if not self.povms:
            raise ValidationError("a measurement family needs at least one POVM")
        dims = {p.dim for p in self.povms}
        if len(dims) != 1:
            raise DimensionError("family members act on different dimensions")
        self.dim = dims.pop()
        m = len(self.povms)
        q = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=float)
        if q.shape != (m,) or np.any(q < 0) or abs(q.sum() - 1) > 1e-10:
            raise ValidationError("sampling law must be a probability vector over the family")
        self.probs = q / q.sum()
        self.name = name
        keys, uniq, index = {}, [], []
        for p in self.povms:
            idx = []
            for e in p.elements:
                k = _real_key(e, 10)
                if k not in keys:
                    keys[k] = len(uniq)
                    uniq.append(e)
                idx.append(keys[k])
            index.append(np.array(idx))
        self.unique_effects = np.stack(uniq)
        self.effect_index = index
        sizes = {p.n_outcomes for p in self.povms}
        self.uniform_outcomes = sizes.pop() if len(sizes) == 1 else None
        if self.uniform_outcomes is not None:
            self.effect_index_array = np.stack(index)

    def __len__(self):
        return len(self.povms)

    def sample_indices(self, size, rng):
        return as_generator(rng).choice(len(self.povms), size=size, p=self.probs)

    def outcome_probabilities(self, rho):
        """Array (R, X) of ``tr(M_{r,x} rho)`` (requires equal outcome counts)."""
        p = np.einsum("uij,ji->u", self.unique_effects, np.asarray(rho, dtype=complex)).real
        return np.clip(p[self.effect_index_array], 0.0, None)


def computational_family(d=2):
    return MeasurementFamily([computational_povm(d)], name="computational")


def pauli3_family():
    povms = [BasisMeasurement(u, label=b).povm for u, b in zip(pauli_basis_unitaries(), "ZXY")]
    return MeasurementFamily(povms, name="pauli3")


def clifford_family(n_qubits=1):
    table = clifford_group(n_qubits)
    return MeasurementFamily([BasisMeasurement(u, validate=False).povm for u in table], name=f"clifford{n_qubits}")


def measurement_family(name, site_dim=2):
    """Family by identifier: computational, pauli3, clifford1 or cliffordN."""
    if name == "computational":
        return computational_family(site_dim)
    if name == "pauli3":
        if site_dim != 2:
            raise DimensionError("pauli3 acts on qubits")
        return pauli3_family()
    if name == "clifford1":
        if site_dim != 2:
            raise DimensionError("clifford1 acts on qubits")
        return clifford_family(1)
    if name == "cliffordN":
        n = int(round(np.log2(site_dim)))
        if 2 ** n != site_dim:
            raise DimensionError("cliffordN needs a power-of-two site dimension")
        return clifford_family(n)
    raise ValidationError(f"unknown measurement family {name!r}")


def distortion_lower_bound(povm, trials, rng, side_dim=1):
    """Largest sampled ratio ``||D||_1 / ||(id x M)(D)||_1``.

    ``D`` ranges over differences of Haar-random pure states on the side
    system tensored with the measured system. The maximum over samples is
    a lower bound on the distortion constant of ``povm``.

    Raises
    ------
    NotInformationallyCompleteError
        If the effects do not span the operator space, or a sampled
        difference has a vanishing image.
    """
    if not is_informationally_complete(povm):
        raise NotInformationallyCompleteError("POVM is not informationally complete")
    rng = as_generator(rng)
    d, s = povm.dim, int(side_dim)
    a = haar_vectors(trials, s * d, rng)
    b = haar_vectors(trials, s * d, rng)
    delta = np.einsum("ti,tj->tij", a, a.conj()) - np.einsum("ti,tj->tij", b, b.conj())
    num = trace_norms(delta)
    t = delta.reshape(trials, s, d, s, d)
    img = np.einsum("tajbk,xkj->txab", t, povm.elements)
    den = trace_norms(img).sum(axis=1) if s > 1 else np.abs(img[..., 0, 0]).sum(axis=1)
    if np.any(den[num > 1e-9] < 1e-12):
        raise NotInformationallyCompleteError("a nonzero difference has a vanishing image")
    ok = num > 1e-9
    return float(np.max(num[ok] / den[ok]))


def linear_inversion_pauli6(probs):
    """Qubit state from exact or empirical pauli6 frequencies."""
    p = np.asarray(probs, dtype=float)
    r = 3.0 * np.array([p[2] - p[3], p[4] - p[5], p[0] - p[1]])
    return 0.5 * (I2 + r[0] * PAULI_X + r[1] * PAULI_Y + r[2] * PAULI_Z)


def _pairs(a):
    a = np.asarray(a, dtype=complex).reshape(-1)
    return np.stack([a.real, a.imag], axis=1).tolist()


def povm_to_dict(povm):
    return {
        "format": POVM_FORMAT,
        "version": 1,
        "dim": povm.dim,
        "name": povm.name,
        "labels": [list(x) if isinstance(x, tuple) else x for x in povm.labels],
        "elements": [_pairs(e) for e in povm.elements],
    }


def povm_from_dict(doc):
    if doc.get("format") != POVM_FORMAT:
        raise ValidationError("not a serialized POVM document")
    d = int(doc["dim"])
    elems = np.stack([(np.asarray(e)[:, 0] + 1j * np.asarray(e)[:, 1]).reshape(d, d) for e in doc["elements"]])
    labels = [tuple(x) if isinstance(x, list) else x for x in doc["labels"]]
    return Povm(elems, labels, name=doc.get("name"))


def dumps_povm(povm):
    return json.dumps(povm_to_dict(povm))


def loads_povm(text):
    return povm_from_dict(json.loads(text))
