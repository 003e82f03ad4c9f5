"""Multipartite states made of ``n_sites`` copies of a ``site_dim`` system.

Two representations are provided.

``DenseState``
    A full density matrix on ``site_dim ** n_sites`` dimensions. Exact for
    any state (including entangled ones such as GHZ) but limited to 4096
    dimensions.

``ProductMixture``
    A convex combination of product states, stored as branch weights and
    per-site factors. Conditioning on a local outcome multiplies each weight
    by the branch likelihood, so the family is closed under local
    measurements and scales to hundreds of sites.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .linalg import (
    MAX_DENSE_DIM,
    CapacityError,
    DimensionError,
    ValidationError,
    as_generator,
    check_density_matrix,
    check_effect,
    haar_vectors,
    maximally_mixed,
    partial_trace,
    tensor,
    trace_norm,
)

ZERO_PROBABILITY = 1e-14
WEIGHT_TOL = 1e-10
MAX_GHZ_QUBITS = 12
STATE_FORMAT = "noniid-qlearn/state"


@dataclass(frozen=True)
class MixtureBranch:
    """One product branch: a weight and ``n_sites`` single-site factors."""

    weight: float
    factors: np.ndarray


@dataclass(frozen=True)
class ConditionResult:
    """Outcome probability and the state of the remaining sites."""

    probability: float
    post_state: "MultipartiteState"


class MultipartiteState:
    """Common interface of the two representations."""

    rep = None

    def __init__(self, n_sites, site_dim):
        if n_sites < 1 or site_dim < 1:
            raise ValidationError("n_sites and site_dim must be positive")
        self.n_sites = int(n_sites)
        self.site_dim = int(site_dim)

    @property
    def dims(self):
        return [self.site_dim] * self.n_sites

    def _check_site(self, site):
        site = int(site)
        if not 0 <= site < self.n_sites:
            raise DimensionError(f"site {site} out of range for {self.n_sites} sites")
        return site

    def __repr__(self):
        return f"{type(self).__name__}(n_sites={self.n_sites}, site_dim={self.site_dim})"


class DenseState(MultipartiteState):
    """Exact density matrix over all sites."""

    rep = "dense"

    def __init__(self, matrix, site_dim, validate=True):
        m = np.asarray(matrix, dtype=complex)
        n = round(math.log(m.shape[0], site_dim)) if m.shape[0] > 1 else 1
        if site_dim ** n != m.shape[0]:
            raise DimensionError(f"dimension {m.shape[0]} is not a power of {site_dim}")
        if m.shape[0] > MAX_DENSE_DIM:
            raise CapacityError(f"dense dimension {m.shape[0]} exceeds {MAX_DENSE_DIM}")
        super().__init__(n, site_dim)
        self.matrix = check_density_matrix(m) if validate else m
        self.matrix.setflags(write=False)

    def to_dense(self):
        return self.matrix

    def reduced(self, site):
        return partial_trace(self.matrix, self.dims, [self._check_site(site)])

    def marginal(self, sites):
        return partial_trace(self.matrix, self.dims, sites)

    def _contract_site(self, site, element):
        d, n = self.site_dim, self.n_sites
        t = self.matrix.reshape([d] * (2 * n))
        # sum_{x,y} E[y, x] rho[.. x .., .. y ..]
        t = np.tensordot(t, element, axes=([site, n + site], [1, 0]))
        dim = d ** (n - 1)
        return t.reshape(dim, dim)

    def condition(self, site, element):
        site = self._check_site(site)
        e = check_effect(element)
        if self.n_sites == 1:
            prob = float(np.real(np.trace(e @ self.matrix)))
            return ConditionResult(max(prob, 0.0), None)
        un = self._contract_site(site, e)
        prob = float(np.real(np.trace(un)))
        if prob <= ZERO_PROBABILITY:
            rest = maximally_mixed(self.site_dim ** (self.n_sites - 1))
            return ConditionResult(max(prob, 0.0), DenseState(rest, self.site_dim, validate=False))
        return ConditionResult(prob, DenseState(un / prob, self.site_dim, validate=False))

    def permute(self, perm):
        """Move the content of site ``i`` to site ``perm[i]``."""
        perm = _check_perm(perm, self.n_sites)
        n, d = self.n_sites, self.site_dim
        t = self.matrix.reshape([d] * (2 * n))
        inv = np.argsort(perm)
        axes = list(inv) + [n + i for i in inv]
        out = np.transpose(t, axes).reshape(d ** n, d ** n)
        return DenseState(out, d, validate=False)


class ProductMixture(MultipartiteState):
    """Weighted mixture of product states.

    Parameters
    ----------
    weights : array_like, shape (B,)
        Branch probabilities.
    factors : array_like, shape (B, n, d, d) or (B, d, d)
        Per-site factors. A 3-D array means every site of a branch carries
        the same factor; the state is then stored without copying it ``n``
        times and ``n_sites`` must be given.
    """

    rep = "product_mixture"

    def __init__(self, weights, factors, n_sites=None, validate=True):
        w = np.asarray(weights, dtype=float).reshape(-1)
        f = np.asarray(factors, dtype=complex)
        if f.ndim == 3:
            if n_sites is None:
                raise ValidationError("n_sites is required for site-symmetric factors")
            self.site_factors = f
            self.symmetric = True
            n = int(n_sites)
        elif f.ndim == 4:
            n = f.shape[1]
            self.site_factors = None
            self.symmetric = False
        else:
            raise DimensionError("factors must have shape (B, n, d, d) or (B, d, d)")
        if f.shape[0] != w.size or f.shape[-1] != f.shape[-2]:
            raise DimensionError("weights and factors disagree")
        super().__init__(n, f.shape[-1])
        if validate:
            if np.any(w < -WEIGHT_TOL) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ValidationError("branch weights must be a probability vector")
            flat = f.reshape(-1, self.site_dim, self.site_dim)
            for op in flat:
                check_density_matrix(op)
        self.weights = np.clip(w, 0.0, None)
        self.weights.setflags(write=False)
        if self.symmetric:
            self.site_factors.setflags(write=False)
            self._factors = None
        else:
            self._factors = f
            self._factors.setflags(write=False)

    @property
    def n_branches(self):
        return self.weights.size

    @property
    def factors(self):
        """Factors with shape (B, n, d, d); a read-only view when symmetric."""
        if self.symmetric:
            b, d = self.site_factors.shape[0], self.site_dim
            return np.broadcast_to(self.site_factors[:, None], (b, self.n_sites, d, d))
        return self._factors

    def site_factor(self, site):
        """Factors of every branch at one site, shape (B, d, d)."""
        if self.symmetric:
            return self.site_factors
        return self._factors[:, site]

    def branch(self, b):
        return MixtureBranch(float(self.weights[b]), np.array(self.factors[b]))

    def reduced(self, site):
        site = self._check_site(site)
        return np.einsum("b,bij->ij", self.weights, self.site_factor(site))

    def marginal(self, sites):
        sites = sorted(set(int(s) for s in sites))
        d = self.site_dim
        out = np.zeros((d ** len(sites),) * 2, dtype=complex)
        for b in range(self.n_branches):
            if self.weights[b] == 0.0:
                continue
            out += self.weights[b] * tensor(*[self.site_factor(s)[b] for s in sites])
        return out

    def to_dense(self):
        if self.site_dim ** self.n_sites > MAX_DENSE_DIM:
            raise CapacityError("state too large to densify")
        return self.marginal(range(self.n_sites))

    def likelihoods(self, sites, effects):
        """``tr(E_j F_{b, site_j})`` for every branch ``b`` and pair ``j``.

        Returns an array of shape (B, len(sites)).
        """
        effects = np.asarray(effects, dtype=complex)
        if self.symmetric:
            vals = np.einsum("bij,mji->bm", self.site_factors, effects)
        else:
            f = self._factors[:, list(sites)]
            vals = np.einsum("bmij,mji->bm", f, effects)
        return np.clip(vals.real, 0.0, None)

    def with_weights(self, weights):
        """Same factors, new branch weights (normalized here)."""
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        if self.symmetric:
            return ProductMixture(w, self.site_factors, n_sites=self.n_sites, validate=False)
        return ProductMixture(w, self._factors, validate=False)

    def drop_sites(self, sites):
        drop = set(int(s) for s in sites)
        keep = [s for s in range(self.n_sites) if s not in drop]
        if not keep:
            return None
        if self.symmetric:
            return ProductMixture(self.weights, self.site_factors, n_sites=len(keep), validate=False)
        return ProductMixture(self.weights, self._factors[:, keep], validate=False)

    def condition(self, site, element):
        site = self._check_site(site)
        e = check_effect(element)
        lik = self.likelihoods([site], e[None])[:, 0]
        joint = self.weights * lik
        prob = float(joint.sum())
        rest = self.drop_sites([site])
        if rest is None:
            return ConditionResult(prob, None)
        if prob <= ZERO_PROBABILITY:
            return ConditionResult(max(prob, 0.0), iid_state(maximally_mixed(self.site_dim), rest.n_sites))
        return ConditionResult(prob, rest.with_weights(joint))

    def permute(self, perm):
        perm = _check_perm(perm, self.n_sites)
        if self.symmetric:
            return self
        inv = np.argsort(perm)
        return ProductMixture(self.weights, self._factors[:, inv], validate=False)


def _check_perm(perm, n):
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(n)):
        raise ValidationError("not a permutation of the sites")
    return perm


def iid_state(sigma, n):
    """``sigma`` on each of ``n`` sites, as a single-branch mixture."""
    s = check_density_matrix(sigma)
    return ProductMixture([1.0], s[None], n_sites=n, validate=False)


def basis_mixture(d, n):
    """Uniform mixture of ``|i><i|`` on every site, ``i = 0 .. d-1``."""
    if d < 2:
        raise ValidationError("basis_mixture needs d >= 2")
    f = np.zeros((d, d, d), dtype=complex)
    for i in range(d):
        f[i, i, i] = 1.0
    return ProductMixture(np.full(d, 1.0 / d), f, n_sites=n, validate=False)


def haar_branch_sample(n, rng, d=2, num_samples=1):
    """One branch ``|phi><phi|`` on all sites with ``phi`` Haar-random.

    The weight is ``1 / num_samples`` so that ``num_samples`` draws form a
    normalized ensemble.
    """
    v = haar_vectors(1, d, as_generator(rng))[0]
    p = np.outer(v, v.conj())
    return MixtureBranch(1.0 / num_samples, np.broadcast_to(p, (n, d, d)).copy())


def haar_mixture(n, rng, branches=10_000, d=2):
    """Finite-ensemble stand-in for the Haar-averaged i.i.d. state."""
    v = haar_vectors(branches, d, as_generator(rng))
    f = np.einsum("bi,bj->bij", v, v.conj())
    return ProductMixture(np.full(branches, 1.0 / branches), f, n_sites=n, validate=False)


def mixture_from_branches(branches):
    """Build a ProductMixture from MixtureBranch objects."""
    w = np.array([b.weight for b in branches], dtype=float)
    f = np.stack([np.asarray(b.factors, dtype=complex) for b in branches])
    return ProductMixture(w, f)


def ghz_pure(n):
    """``(|0...0> + |1...1>)/sqrt(2)`` as a dense state."""
    if n > MAX_GHZ_QUBITS:
        raise CapacityError(f"GHZ state limited to {MAX_GHZ_QUBITS} qubits")
    dim = 2 ** n
    v = np.zeros(dim, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return DenseState(np.outer(v, v.conj()), 2, validate=False)


def pure_state(vector, site_dim):
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return DenseState(np.outer(v, v.conj()), site_dim)


def to_dense(state):
    return state.to_dense()


def reduced(state, site):
    """Single-site marginal of ``state`` at a 0-based ``site``."""
    return state.reduced(site)


def condition_on_outcome(state, site, element):
    """Condition on observing ``element`` at ``site`` and remove the site."""
    return state.condition(site, element)


def permute_state(state, perm):
    return state.permute(perm)


def permute_random(state, rng):
    """Apply a uniformly random site permutation.

    Returns the permuted state and the permutation (site ``i`` moves to
    ``perm[i]``).
    """
    perm = as_generator(rng).permutation(state.n_sites)
    return state.permute(perm), perm


def _branch_key(weight, factors, decimals=10):
    return (round(float(weight), decimals), np.round(factors, decimals).tobytes())


def is_permutation_invariant(state, trials=20, rng=None, tol=1e-10):
    """Check invariance under ``trials`` random site permutations.

    Dense states are compared in trace norm. Mixtures use a sufficient
    test: the multiset of branches must be unchanged by each permutation.
    """
    rng = as_generator(rng)
    if isinstance(state, ProductMixture):
        if state.symmetric:
            return True
        f = state.factors
        base = Counter(_branch_key(state.weights[b], f[b]) for b in range(state.n_branches))
        for _ in range(trials):
            inv = np.argsort(rng.permutation(state.n_sites))
            moved = Counter(_branch_key(state.weights[b], f[b][inv]) for b in range(state.n_branches))
            if moved != base:
                return False
        return True
    for _ in range(trials):
        perm = rng.permutation(state.n_sites)
        if trace_norm(state.matrix - state.permute(perm).matrix, validate=False) > tol:
            return False
    return True


def symmetrize(state, max_permutations=50_000):
    """Average ``state`` over all site permutations.

    This is the symmetrizing counterpart of ``permute_random``; it is exact
    but only feasible for few sites.
    """
    n = state.n_sites
    if math.factorial(n) > max_permutations:
        raise CapacityError(f"{n}! permutations exceed the limit {max_permutations}")
    perms = list(permutations(range(n)))
    if isinstance(state, ProductMixture):
        if state.symmetric:
            return state
        f = state.factors
        w = np.tile(state.weights / len(perms), len(perms))
        fs = np.concatenate([f[:, np.argsort(p)] for p in perms])
        return ProductMixture(w, fs, validate=False)
    acc = np.zeros_like(state.matrix)
    for p in perms:
        acc += state.permute(p).matrix
    return DenseState(acc / len(perms), state.site_dim, validate=False)


def _pairs(a):
    a = np.asarray(a, dtype=complex).reshape(-1)
    return np.stack([a.real, a.imag], axis=1).tolist()


def _unpairs(p, shape):
    arr = np.asarray(p, dtype=float)
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(shape)


def state_to_dict(state):
    """Plain-data description of a state; complex entries as [re, im] pairs."""
    doc = {"format": STATE_FORMAT, "version": 1, "site_dim": state.site_dim, "n_sites": state.n_sites, "rep": state.rep}
    if isinstance(state, DenseState):
        doc["matrix"] = _pairs(state.matrix)
    else:
        doc["weights"] = state.weights.tolist()
        doc["site_symmetric"] = bool(state.symmetric)
        raw = state.site_factors if state.symmetric else state.factors
        doc["factors"] = [_pairs(x) for x in raw]
    return doc


def state_from_dict(doc):
    if doc.get("format") != STATE_FORMAT:
        raise ValidationError("not a serialized state document")
    d, n = int(doc["site_dim"]), int(doc["n_sites"])
    if doc["rep"] == "dense":
        return DenseState(_unpairs(doc["matrix"], (d ** n, d ** n)), d)
    w = doc["weights"]
    if doc.get("site_symmetric"):
        f = np.stack([_unpairs(x, (d, d)) for x in doc["factors"]])
        return ProductMixture(w, f, n_sites=n)
    f = np.stack([_unpairs(x, (n, d, d)) for x in doc["factors"]])
    return ProductMixture(w, f)


def dumps_state(state):
    """Serialize to JSON text. Floats use Python's shortest round-trip form."""
    return json.dumps(state_to_dict(state))


def loads_state(text):
    return state_from_dict(json.loads(text))
