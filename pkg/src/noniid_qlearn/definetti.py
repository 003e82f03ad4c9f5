"""Monte Carlo evaluation of de Finetti-type approximation errors.

Two estimators are provided:

``randomized_definetti_lhs``
    Average measured trace norm between the conditional state of the first
    ``k + 1`` sites and the ``(k + 1)``-fold power of a single conditional
    marginal, after local random measurements on a block of other sites.
    The comparison value is ``sqrt(4 k^2 ln d / N)``.

``gf_lhs``
    Average full trace norm between the conditional state of the first
    ``k`` sites and the ``k``-fold power of its first marginal, after a
    fixed informationally complete measurement on ``l - k`` other sites.
    The comparison value is ``2 sqrt(2 k^3 d^2 ln d / N)``.

Conditional states are exact for both representations: branch posteriors
for product mixtures, sequential conditioning for dense states. Only the
outer expectation over ``l``, measurement choices and outcomes is sampled.
"""

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss as _leggauss
from scipy.special import gammaln, xlogy

from .linalg import (
    CapacityError,
    ValidationError,
    as_generator,
    tensor,
    tensor_power,
    trace_norm,
    trace_norms,
)
from .measurements import MeasurementFamily, Povm, is_informationally_complete, sample_outcome
from .parallel import block_sizes, master_entropy, parallel_map
from .states import ProductMixture, is_permutation_invariant, permute_random

BLOCK = 1000
MAX_BRANCH_TENSOR = 2_000_000


@dataclass(frozen=True)
class DefinettiEstimate:
    """Monte Carlo mean of a de Finetti left side and its comparison value."""

    lhs_mean: float
    std_error: float
    rhs_bound: float
    trials: int
    N: int
    k: int
    d: int
    family_id: str
    seed: object = None
    samples: np.ndarray = field(default=None, repr=False, compare=False)
    image_samples: np.ndarray = field(default=None, repr=False, compare=False)

    def holds(self, sigmas=3.0):
        return self.lhs_mean + sigmas * self.std_error <= self.rhs_bound

    def to_row(self):
        return {
            "N": self.N,
            "k": self.k,
            "d": self.d,
            "family_id": self.family_id,
            "trials": self.trials,
            "lhs_mean": self.lhs_mean,
            "lhs_stderr": self.std_error,
            "rhs_bound": self.rhs_bound,
            "seed": self.seed,
        }


def randomized_definetti_bound(N, k, d):
    """``sqrt(4 k^2 ln d / N)``."""
    return math.sqrt(4 * k * k * math.log(d) / N)


def gf_bound(N, k, d):
    """``2 sqrt(2 k^3 d^2 ln d / N)``."""
    return 2 * math.sqrt(2 * k**3 * d * d * math.log(d) / N)


def check_k_range(N, k):
    if not (1 <= k and 2 * k < N):
        raise ValidationError(
            f"k={k} is out of range for N={N}: the number of kept copies must satisfy 1 <= k < N/2"
        )


def _as_family(family):
    if isinstance(family, MeasurementFamily):
        return family
    if isinstance(family, Povm):
        return MeasurementFamily([family], name=family.name)
    return MeasurementFamily(list(family))


def measured_image_norm(op, d, povms):
    """``sum_x || tr_rest[(I x E_x) op] ||_1`` over outcome tuples of ``povms``.

    ``op`` acts on ``1 + len(povms)`` sites of dimension ``d``; the first
    site is left unmeasured.
    """
    m = len(povms)
    if m == 0:
        return trace_norm(op, validate=False)
    rest = d**m
    t = np.asarray(op).reshape(d, rest, d, rest)
    total = 0.0
    for combo in itertools.product(*[range(p.n_outcomes) for p in povms]):
        e = tensor(*[p.elements[x] for p, x in zip(povms, combo)])
        block = np.einsum("iajb,ba->ij", t, e)
        total += trace_norm(block, validate=False)
    return total


def _posterior(log_prior, counts, log_lik):
    logits = log_prior[None, :] + counts @ log_lik.T
    logits -= logits.max(axis=1, keepdims=True)
    post = np.exp(logits)
    return post / post.sum(axis=1, keepdims=True)


class _SymmetricEngine:
    """Batched sampler for site-symmetric product mixtures.

    Every branch carries one factor on all sites, so the posterior after
    measuring any set of sites depends only on how often each distinct
    effect was observed.
    """

    def __init__(self, state, family):
        self.state = state
        self.family = family
        self.d = state.site_dim
        self.F = state.site_factors
        self.Fflat = self.F.reshape(self.F.shape[0], -1)
        self.lik = np.clip(np.einsum("bij,uji->bu", self.F, family.unique_effects).real, 0.0, None)
        with np.errstate(divide="ignore"):
            self.log_lik = np.log(np.maximum(self.lik, 1e-300))
            self.log_prior = np.log(np.maximum(state.weights, 1e-300))
        self.idx = family.effect_index_array
        self.n_out = self.idx.shape[1]

    def sample_counts(self, rng, branch, m):
        T, U = branch.size, self.lik.shape[1]
        counts = np.zeros((T, U))
        M = int(m.max()) if T else 0
        if M == 0:
            return counts
        r = rng.choice(len(self.family), size=(T, M), p=self.family.probs)
        probs = self.lik[branch[:, None, None], self.idx[r]]
        probs /= probs.sum(axis=2, keepdims=True)
        u = rng.random((T, M, 1))
        x = np.minimum((np.cumsum(probs, axis=2) < u).sum(axis=2), self.n_out - 1)
        eff = self.idx[r, x]
        mask = np.arange(M)[None, :] < m[:, None]
        rows = np.broadcast_to(np.arange(T)[:, None], (T, M))
        np.add.at(counts, (rows[mask], eff[mask]), 1.0)
        return counts

    def posterior(self, counts):
        return _posterior(self.log_prior, counts, self.log_lik)

    def draw_branches(self, rng, T):
        return rng.choice(self.F.shape[0], size=T, p=self.state.weights)

    def randomized_block(self, rng, T, k, N, intro_form=False):
        half = N // 2
        l = rng.integers(k + 1, k + half + 1, size=T)
        if intro_form:
            m = l - k
        else:
            m = k + half - l
        branch = self.draw_branches(rng, T)
        post = self.posterior(self.sample_counts(rng, branch, m))
        n_meas = k - 1 if intro_form else k
        return self._image_lhs(rng, post, n_meas)

    def _image_lhs(self, rng, post, n_meas):
        T, d = post.shape[0], self.d
        rho_bar = post @ self.Fflat
        if n_meas == 0:
            return np.zeros(T)
        r = rng.choice(len(self.family), size=(T, n_meas), p=self.family.probs)
        gathered = [[self.lik[:, self.idx[r[:, i], x]].T for x in range(self.n_out)] for i in range(n_meas)]
        total = np.zeros(T)
        for combo in itertools.product(range(self.n_out), repeat=n_meas):
            coef = post.copy()
            pbar = np.ones(T)
            for i, x in enumerate(combo):
                li = gathered[i][x]
                coef *= li
                pbar *= (post * li).sum(axis=1)
            a = coef @ self.Fflat - rho_bar * pbar[:, None]
            total += trace_norms(a.reshape(T, d, d))
        return total

    def gf_block(self, rng, T, k, N):
        half = N // 2
        l = rng.integers(k + 1, k + half + 1, size=T)
        branch = self.draw_branches(rng, T)
        post = self.posterior(self.sample_counts(rng, branch, l - k))
        return self._product_gap(post, k)

    def _product_gap(self, post, k):
        T, d = post.shape[0], self.d
        B = self.F.shape[0]
        D = d**k
        joint = np.zeros((T, D * D), dtype=complex)
        step = max(1, MAX_BRANCH_TENSOR // (D * D))
        for s in range(0, B, step):
            fk = np.stack([tensor_power(f, k).reshape(-1) for f in self.F[s : s + step]])
            joint += post[:, s : s + step] @ fk
        rho_bar = (post @ self.Fflat).reshape(T, d, d)
        prod = rho_bar
        for _ in range(k - 1):
            prod = np.einsum("tij,tkl->tikjl", prod, rho_bar).reshape(T, prod.shape[1] * d, prod.shape[1] * d)
        return trace_norms(joint.reshape(T, D, D) - prod)


def _measure_block(state, sites, povms, rng):
    """Measure ``sites`` (any order) and return the conditioned remainder."""
    cur = state
    # descending order keeps the indices of unmeasured lower sites valid
    for site, povm in sorted(zip(sites, povms), key=lambda t: -t[0]):
        _, res = sample_outcome(povm, cur, site, rng)
        cur = res.post_state
    return cur


def _randomized_trial_generic(state, family, k, rng, shuffle, intro_form):
    N, d = state.n_sites, state.site_dim
    half = N // 2
    if shuffle:
        state, _ = permute_random(state, rng)
    l = int(rng.integers(k + 1, k + half + 1))
    r = family.sample_indices(N, rng)
    if intro_form:
        sites = list(range(k, l))
        keep = k
    else:
        sites = list(range(l, k + half))
        keep = k + 1
    cur = _measure_block(state, sites, [family.povms[r[s]] for s in sites], rng)
    joint = cur.marginal(range(keep))
    if shuffle:
        margs = [cur.reduced(i) for i in range(keep)]
    else:
        ref = cur.reduced(0 if intro_form else cur.n_sites - 1)
        margs = [ref] * keep
    diff = joint - tensor(*margs)
    return measured_image_norm(diff, d, [family.povms[r[i]] for i in range(1, keep)])


def _needs_shuffle(state, shuffle, rng):
    if shuffle == "auto":
        if isinstance(state, ProductMixture) and state.symmetric:
            return False
        return not is_permutation_invariant(state, trials=8, rng=rng)
    return bool(shuffle)


def _estimate(samples, bound, N, k, d, family_id, seed, image=None):
    s = np.asarray(samples, dtype=float)
    err = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
    return DefinettiEstimate(float(s.mean()), err, bound, int(s.size), N, k, d, family_id, seed, s, image)


def _run_blocks(seed, trials, fn):
    base = master_entropy(seed)
    sizes = block_sizes(trials, BLOCK)

    def one(i):
        rng = np.random.default_rng(np.random.SeedSequence([base, i]))
        return fn(rng, sizes[i])

    return np.concatenate(parallel_map(one, range(len(sizes)))), base


def randomized_definetti_lhs(state, family, k, trials, rng=None, shuffle="auto", intro_form=False):
    """Estimate the randomized local de Finetti left side.

    Parameters
    ----------
    state : MultipartiteState
        Input on ``N`` sites.
    family : MeasurementFamily, Povm or sequence of Povm
        Local measurement devices and their sampling law.
    k : int
        Number of kept copies besides the first; ``1 <= k < N/2``.
    trials : int
        Monte Carlo samples of ``(l, r, w)``.
    rng : int or Generator
        Master seed; blocks of trials use derived streams.
    shuffle : bool or "auto"
        Apply a fresh random permutation per trial and compare against the
        product of the kept sites' own marginals. ``"auto"`` shuffles only
        inputs that fail the permutation-invariance check.
    intro_form : bool
        Use the variant with ``k`` kept sites and outcomes from sites
        ``k+1 .. l`` instead of ``k + 1`` kept sites and outcomes from
        sites ``l+1 .. k + N/2``.
    """
    family = _as_family(family)
    N, d = state.n_sites, state.site_dim
    check_k_range(N, k)
    bound = randomized_definetti_bound(N, k, d)
    fid = family.name or "custom"
    if isinstance(state, ProductMixture) and state.symmetric and family.uniform_outcomes:
        eng = _SymmetricEngine(state, family)
        samples, base = _run_blocks(rng, trials, lambda g, t: eng.randomized_block(g, t, k, N, intro_form))
        return _estimate(samples, bound, N, k, d, fid, base)
    gen = as_generator(rng)
    do_shuffle = _needs_shuffle(state, shuffle, gen)
    samples = [_randomized_trial_generic(state, family, k, gen, do_shuffle, intro_form) for _ in range(trials)]
    return _estimate(samples, bound, N, k, d, fid, None)


def _gf_trial_generic(state, m_dist, k, rng, shuffle, image_povm):
    N, d = state.n_sites, state.site_dim
    if shuffle:
        state, _ = permute_random(state, rng)
    l = int(rng.integers(k + 1, k + N // 2 + 1))
    sites = list(range(k, l))
    cur = _measure_block(state, sites, [m_dist] * len(sites), rng)
    joint = cur.marginal(range(k))
    diff = joint - tensor_power(cur.reduced(0), k)
    full = trace_norm(diff, validate=False)
    img = measured_image_norm(diff, d, [image_povm] * (k - 1)) if image_povm is not None else np.nan
    return full, img


def gf_lhs(state, m_dist, k, trials, rng=None, shuffle="auto", image_povm=None):
    """Estimate the general (full trace norm) de Finetti left side.

    ``image_povm`` optionally records, per trial, the same difference after
    measuring sites ``2 .. k`` with that POVM; data processing makes it a
    lower bound of the full-norm sample.
    """
    if not is_informationally_complete(m_dist):
        raise ValidationError("the projection measurement must be informationally complete")
    N, d = state.n_sites, state.site_dim
    check_k_range(N, k)
    if d ** (2 * k) > 4096 * 4096:
        raise CapacityError("k-site conditional state too large for dense evaluation")
    bound = gf_bound(N, k, d)
    fid = m_dist.name or "m_dist"
    if isinstance(state, ProductMixture) and state.symmetric and image_povm is None:
        eng = _SymmetricEngine(state, MeasurementFamily([m_dist], name=fid))
        samples, base = _run_blocks(rng, trials, lambda g, t: eng.gf_block(g, t, k, N))
        return _estimate(samples, bound, N, k, d, fid, base)
    gen = as_generator(rng)
    do_shuffle = _needs_shuffle(state, shuffle, gen)
    pairs = np.array([_gf_trial_generic(state, m_dist, k, gen, do_shuffle, image_povm) for _ in range(trials)])
    image = pairs[:, 1] if image_povm is not None else None
    return _estimate(pairs[:, 0], bound, N, k, d, fid, None, image)


def _entropy(p, axis):
    return -xlogy(p, p).sum(axis=axis)


def conditional_mutual_information(joint, tol=1e-10):
    """Multipartite mutual information ``sum_i H(X_i|C) - H(X_1..X_k|C)`` in nats.

    Parameters
    ----------
    joint : array_like, shape (|X_1|, ..., |X_k|, |C|)
        Probability table with the conditioning variable on the last axis.
    """
    p = np.asarray(joint, dtype=float)
    if p.ndim < 2:
        raise ValidationError("table needs at least one variable axis and a conditioning axis")
    if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValidationError("table must be a probability distribution")
    p = np.clip(p, 0.0, None)
    k = p.ndim - 1
    pc = p.reshape(-1, p.shape[-1]).sum(axis=0)
    total = 0.0
    for c in np.nonzero(pc > 0)[0]:
        cond = p[..., c] / pc[c]
        h_joint = _entropy(cond.reshape(-1), 0)
        h_marg = 0.0
        for i in range(k):
            axes = tuple(j for j in range(k) if j != i)
            h_marg += _entropy(cond.sum(axis=axes), 0)
        total += pc[c] * (h_marg - h_joint)
    return max(0.0, float(total))


@dataclass(frozen=True)
class AppendixBRecord:
    """Haar-mixture example: closed form and quadrature values."""

    l: int
    w_weight: int
    k: int
    p_star: float
    analytic_reduced: np.ndarray
    analytic_bound: float
    numeric_reduced: np.ndarray = None
    lhs_numeric: float = None


def _check_lw(l, w_weight):
    if l < 1 or not 0 <= w_weight <= l:
        raise ValidationError("need l >= 1 and 0 <= |w| <= l")


def appendix_b_analytic(l, w_weight, k):
    """Closed-form conditional marginal ``diag(1 - p*, p*)`` and the bound."""
    _check_lw(l, w_weight)
    ps = (w_weight + 1) / (l + 2)
    return AppendixBRecord(
        l, w_weight, k, ps, np.diag([1 - ps, ps]).astype(complex), math.sqrt(9 * k * math.log(l + 1) / l)
    )


@functools.lru_cache(maxsize=8)
def leggauss(n):
    """Cached Gauss-Legendre nodes and weights (read-only arrays)."""
    x, w = _leggauss(n)
    x.flags.writeable = w.flags.writeable = False
    return x, w


def _posterior_density(p, l, w_weight):
    logc = math.log(l + 1) + gammaln(l + 1) - gammaln(w_weight + 1) - gammaln(l - w_weight + 1)
    return np.exp(logc + xlogy(l - w_weight, 1 - p) + xlogy(w_weight, p))


def appendix_b_numeric(l, w_weight, k, quad_points=512):
    """Quadrature evaluation of the Haar-mixture conditional states.

    The measured image of the ``k``-site conditional state is diagonal, so
    its trace norm against ``diag(1 - p*, p*)^{x k}`` is a sum over
    Hamming weights.
    """
    if quad_points < 64:
        raise ValidationError("quad_points must be at least 64")
    rec = appendix_b_analytic(l, w_weight, k)
    x, wq = leggauss(int(quad_points))
    p = 0.5 * (x + 1)
    wq = 0.5 * wq * _posterior_density(p, l, w_weight)
    mean_p = float(np.dot(wq, p))
    mass = float(wq.sum())
    numeric = np.diag([mass - mean_p, mean_p]).astype(complex)
    ps = rec.p_star
    lhs = 0.0
    for j in range(k + 1):
        moment = float(np.dot(wq, (1 - p) ** (k - j) * p**j))
        lhs += math.comb(k, j) * abs(moment - (1 - ps) ** (k - j) * ps**j)
    return AppendixBRecord(l, w_weight, k, ps, rec.analytic_reduced, rec.analytic_bound, numeric, lhs)


def appendix_b_expected_lhs(N, k, quad_points=512):
    """Average of ``lhs_numeric`` over ``l ~ unif{1..N/2}`` and the Haar law of ``|w|``.

    Under the Haar mixture, ``|w|`` is uniform on ``0..l``.
    """
    half = N // 2
    total = 0.0
    for l in range(1, half + 1):
        total += np.mean([appendix_b_numeric(l, j, k, quad_points).lhs_numeric for j in range(l + 1)])
    return total / half
