"""Wrappers that run i.i.d. learners on permutation-invariant inputs.

Sites are 0-based. With ``K`` the size of the learning block, a run of the
non-adaptive wrapper measures sites ``K .. l-1`` for the calibration record
``w``, then sites ``0 .. K-1`` for the learning record ``v``; the test copy
is the last site.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..linalg import CapacityError, DimensionError, ValidationError, as_generator, as_square, partial_trace
from ..measurements import Povm
from ..states import ZERO_PROBABILITY, DenseState, ProductMixture, permute_random
from .predictions import CoverageFailure, as_prediction

TABLE_LIMIT = 50_000_000
LOG_FLOOR = 1e-300


def coverage_block(k_a, delta_a):
    """Learning-block size ``k_a * ceil(ln(k_a / delta_a))``."""
    k_a = int(k_a)
    if k_a < 1:
        raise ValidationError("k_A must be at least 1")
    if not 0.0 < delta_a < 1.0:
        raise ValidationError("delta_A must lie in (0, 1)")
    return k_a * math.ceil(math.log(k_a / delta_a))


def coverage_failure_probability(k_a, K):
    """Exact probability that ``K`` uniform draws miss one of ``k_a`` values."""
    k_a, K = int(k_a), int(K)
    return float(sum((-1) ** (j + 1) * math.comb(k_a, j) * (1.0 - j / k_a) ** K for j in range(1, k_a + 1)))


def coverage_failure_bound(k_a, K):
    return k_a * math.exp(-K / k_a)


def max_k_a(N, delta_a):
    """Largest ``k_A`` with ``N > 2 (K + 1)``; 0 if none."""
    best, k = 0, 1
    while 2 * (coverage_block(k, delta_a) + 1) < N:
        best, k = k, k + 1
    return best


def first_hits(r, k_a):
    """Position of the first occurrence of each value ``0 .. k_a-1`` in ``r`` (-1 if absent)."""
    r = np.asarray(r)
    hit = np.full(k_a, -1)
    present, pos = np.unique(r, return_index=True)
    hit[present] = pos
    return hit


def _pad_pool(elements):
    pool = [np.asarray(e, dtype=complex) for e in elements]
    X = max(p.shape[0] for p in pool)
    d = pool[0].shape[-1]
    out = np.zeros((len(pool), X, d, d), dtype=complex)
    for i, p in enumerate(pool):
        if p.shape[-1] != d:
            raise DimensionError("all measurements must act on the same dimension")
        out[i, : p.shape[0]] = p
    return out


class IidAlgorithmSpec:
    """A non-adaptive single-copy learner.

    Parameters
    ----------
    pool : sequence
        Candidate measurements: ``Povm`` objects or arrays of effects.
    predictor : callable
        ``predictor(ids, outcomes, rng)`` maps the pool indices of the
        ``k_A`` measurements and their outcome indices (in order) to a
        prediction.
    k_a : int
        Number of copies used by the learner.
    delta_a : float
        Target failure probability; sets the learning-block size.
    draw : callable, optional
        ``draw(rng)`` returns the pool indices of the ``k_A`` measurements
        for one run. The default uses ``pool[0 .. k_A-1]`` as listed, or
        ``pool[0]`` repeated when the pool has a single member. A draw may
        return a different number of indices than ``k_a``; the block size
        then follows the realized count.
    """

    def __init__(self, pool, predictor, k_a, delta_a, draw=None, name=None):
        elems = [p.elements if isinstance(p, Povm) else p for p in pool]
        self.pool = _pad_pool(elems)
        self.n_outcomes = np.array([len(e) for e in elems])
        self.predictor = predictor
        self.k_a = int(k_a)
        self.delta_a = float(delta_a)
        coverage_block(self.k_a, self.delta_a)
        if draw is None:
            if len(elems) == 1:
                fixed = np.zeros(self.k_a, dtype=int)
            elif len(elems) == self.k_a:
                fixed = np.arange(self.k_a)
            else:
                raise ValidationError("pool size must be 1 or k_A when no draw function is given")
            draw = lambda rng: fixed
        self.draw = draw
        self.name = name

    @property
    def dim(self):
        return self.pool.shape[-1]

    def measurements(self, rng):
        """Draw the measurement list of one run as ``Povm`` objects."""
        ids = np.asarray(self.draw(as_generator(rng)))
        return [Povm(self.pool[i, : self.n_outcomes[i]], validate=False) for i in ids]

    def predict(self, ids, outcomes, rng):
        return as_prediction(self.predictor(np.asarray(ids), np.asarray(outcomes), rng))


def run_iid(alg, sigma, rng):
    """One run of the learner on i.i.d. copies of ``sigma``.

    Returns ``(prediction, ids, outcomes)``.
    """
    rng = as_generator(rng)
    ids = np.asarray(alg.draw(rng))
    probs = np.einsum("mxij,ji->mx", alg.pool[ids], as_square(sigma)).real
    outcomes = _inverse_cdf(probs, rng)
    return alg.predict(ids, outcomes, rng), ids, outcomes


def _inverse_cdf(probs, rng):
    p = np.clip(probs, 0.0, None)
    c = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1]) * c[..., -1]
    out = (c < u[..., None]).sum(axis=-1)
    return np.minimum(out, p.shape[-1] - 1)


class MeasurementEngine:
    """Samples local measurements on a state and tracks the test copy.

    For product mixtures a branch is drawn first and outcomes are sampled
    from that branch; branch posteriors give the conditional state of any
    unmeasured site. Dense states are conditioned site by site.
    """

    def __init__(self, state, pool):
        self.state = state
        self.pool = np.asarray(pool, dtype=complex)
        if self.pool.shape[-1] != state.site_dim:
            raise DimensionError("measurement and site dimensions differ")
        self.table = None
        if isinstance(state, ProductMixture):
            self.log_prior = np.log(np.maximum(state.weights, LOG_FLOOR))
            P, X = self.pool.shape[:2]
            if state.symmetric and P * state.n_branches * X <= TABLE_LIMIT:
                t = np.einsum("bij,pxji->pbx", state.site_factors, self.pool).real
                self.table = np.clip(t, 0.0, None)
        elif not isinstance(state, DenseState):
            raise ValidationError(f"unsupported state type {type(state).__name__}")

    def _lik(self, sites, pids):
        """Array (m, B, X) of outcome probabilities per measured site and branch."""
        if self.table is not None:
            return self.table[pids]
        f = self.state.site_factors if self.state.symmetric else None
        out = []
        for s, p in zip(sites, pids):
            fac = f if f is not None else self.state.site_factor(s)
            out.append(np.einsum("bij,xji->bx", fac, self.pool[p]).real)
        return np.clip(np.stack(out), 0.0, None) if out else np.zeros((0, self.state.n_branches, self.pool.shape[1]))

    def run(self, rng, groups, test_site=None):
        """Measure ``groups = [(sites, pids), ...]`` in order.

        Returns ``(outcomes, test_states, branch)`` where ``test_states[g]``
        is the test site conditioned on groups ``0 .. g``.
        """
        test_site = self.state.n_sites - 1 if test_site is None else test_site
        if isinstance(self.state, DenseState):
            return self._run_dense(rng, groups, test_site)
        st = self.state
        b = int(rng.choice(st.n_branches, p=st.weights / st.weights.sum()))
        logpost = self.log_prior.copy()
        outs, tests = [], []
        test_f = st.site_factor(test_site)
        for sites, pids in groups:
            sites, pids = np.asarray(sites, dtype=int), np.asarray(pids, dtype=int)
            lik = self._lik(sites, pids)
            x = _inverse_cdf(lik[:, b, :], rng) if len(sites) else np.zeros(0, dtype=int)
            if len(sites):
                chosen = lik[np.arange(len(sites)), :, x]
                logpost = logpost + np.log(np.maximum(chosen, LOG_FLOOR)).sum(axis=0)
            post = np.exp(logpost - logpost.max())
            post /= post.sum()
            outs.append(x)
            tests.append(np.einsum("b,bij->ij", post, test_f))
        return outs, tests, b

    def _run_dense(self, rng, groups, test_site):
        st = self.state
        alive = list(range(st.n_sites))
        rho = st.matrix
        d = st.site_dim
        outs, tests = [], []
        for sites, pids in groups:
            xs = []
            for s, p in zip(sites, pids):
                pos = alive.index(int(s))
                elems = self.pool[p]
                cur = DenseState(rho, d, validate=False)
                probs = np.einsum("xij,ji->x", elems, cur.reduced(pos)).real
                x = int(_inverse_cdf(probs[None], rng)[0])
                res = cur.condition(pos, elems[x])
                rho = res.post_state.matrix
                alive.pop(pos)
                xs.append(x)
            outs.append(np.array(xs, dtype=int))
            tests.append(partial_trace(rho, [d] * len(alive), [alive.index(test_site)]))
        return outs, tests, None


@dataclass
class RunRecord:
    """One wrapper run.

    ``r`` and the measurement indices are 0-based. ``v`` holds learning
    outcomes for sites ``0 .. K-1`` and ``w`` calibration outcomes for
    sites ``K .. l-1``. ``conditional_test_state`` conditions on both;
    ``test_state_given_w`` on ``w`` only.
    """

    l: int
    r: np.ndarray
    w: np.ndarray
    v: np.ndarray
    p: object
    conditional_test_state: np.ndarray
    test_state_given_w: np.ndarray = None
    coverage_ok: bool = True
    branch: int = None
    K: int = 0
    measurement_ids: np.ndarray = None
    extra: dict = field(default_factory=dict)


def _check_sites(state, K):
    N = state.n_sites
    if N <= 2 * (K + 1):
        raise ValidationError(f"need N > 2(K+1) sites: N={N}, K={K}")
    return N


def _maybe_shuffle(state, shuffle, rng):
    if shuffle == "auto":
        shuffle = not (isinstance(state, ProductMixture) and state.symmetric)
    if shuffle:
        state, _ = permute_random(state, rng)
    return state


def _algorithm1(engine, alg, rng, state):
    ids = np.asarray(alg.draw(rng), dtype=int)
    k_a = ids.size
    K = coverage_block(k_a, alg.delta_a)
    N = _check_sites(state, K)
    l = int(rng.integers(K + 1, K + N // 2 + 1))
    r = rng.integers(k_a, size=l)
    pids = ids[r]
    cal = np.arange(K, l)
    learn = np.arange(K)
    (w, v), (given_w, given_all), branch = engine.run(rng, [(cal, pids[K:]), (learn, pids[:K])])
    hits = first_hits(r[:K], k_a)
    ok = bool(np.all(hits >= 0))
    p = alg.predict(ids, v[hits], rng) if ok else CoverageFailure()
    return RunRecord(l, r, w, v, p, given_all, given_w, ok, branch, K, ids)


def algorithm1_run(state, alg, rng=None, shuffle="auto", engine=None):
    """Run the calibrated non-adaptive wrapper once.

    Parameters
    ----------
    state : DenseState or ProductMixture
        Input with ``N > 2 (K + 1)`` sites.
    alg : IidAlgorithmSpec
    shuffle : bool or "auto"
        Apply a uniformly random site permutation first. "auto" shuffles
        unless the state is a site-symmetric mixture.
    """
    rng = as_generator(rng)
    state = _maybe_shuffle(state, shuffle, rng)
    if engine is None or engine.state is not state:
        engine = MeasurementEngine(state, alg.pool)
    return _algorithm1(engine, alg, rng, state)


def algorithm3_run(state, alg, rng=None, shuffle="auto", reservoir=2000, exact=False):
    """Wrapper without calibration output.

    Returns ``(p, state_given_p)``. The conditional state given ``p``
    alone is the average of per-run conditionals over runs with the same
    prediction; it is estimated from ``reservoir`` extra runs, or computed
    exactly with ``exact=True`` (see ``conditional_on_prediction``).
    """
    rng = as_generator(rng)
    state = _maybe_shuffle(state, shuffle, rng)
    engine = MeasurementEngine(state, alg.pool)
    rec = _algorithm1(engine, alg, rng, state)
    if exact:
        return rec.p, conditional_on_prediction(state, alg, rec.p)
    key = rec.p.key()
    acc, count = rec.conditional_test_state.copy(), 1
    for _ in range(int(reservoir)):
        other = _algorithm1(engine, alg, rng, state)
        if other.p.key() == key:
            acc += other.conditional_test_state
            count += 1
    return rec.p, acc / count


def conditional_on_prediction(state, alg, p, max_outcomes=1_000_000):
    """Exact test-copy state given the prediction alone.

    Requires a site-symmetric product mixture, a fixed measurement list
    and a predictor that ignores its random generator. Given a branch, the
    learner sees ``k_A`` independent outcomes, so the prediction law per
    branch is obtained by enumerating outcome tuples; coverage failure
    enters with its exact probability.
    """
    if not (isinstance(state, ProductMixture) and state.symmetric):
        raise ValidationError("exact conditioning needs a site-symmetric product mixture")
    ids = np.asarray(alg.draw(np.random.default_rng(0)), dtype=int)
    if not np.array_equal(ids, np.asarray(alg.draw(np.random.default_rng(1)), dtype=int)):
        raise ValidationError("exact conditioning needs a fixed measurement list")
    sizes = alg.n_outcomes[ids]
    if np.prod(sizes.astype(float)) > max_outcomes:
        raise CapacityError("too many outcome tuples to enumerate")
    p = as_prediction(p)
    key = p.key()
    K = coverage_block(ids.size, alg.delta_a)
    fail = coverage_failure_probability(ids.size, K)
    lik = np.einsum("bij,mxji->bmx", state.site_factors, alg.pool[ids]).real
    prob_p = np.zeros(state.n_branches)
    if not isinstance(p, CoverageFailure):
        for combo in itertools.product(*[range(s) for s in sizes]):
            out = np.array(combo)
            if alg.predict(ids, out, None).key() == key:
                prob_p += np.prod(lik[:, np.arange(ids.size), out], axis=1)
        prob_p *= 1.0 - fail
    else:
        prob_p[:] = fail
    joint = state.weights * prob_p
    if joint.sum() <= ZERO_PROBABILITY:
        raise ValidationError("prediction has zero probability")
    return np.einsum("b,bij->ij", joint / joint.sum(), state.site_factors)


def _joint_condition_dense(state, sites, effect):
    """Probability and remaining dense matrix after a joint effect on ``sites``."""
    n, d = state.n_sites, state.site_dim
    sites = list(sites)
    rest = [s for s in range(n) if s not in sites]
    order = sites + rest
    t = state.matrix.reshape([d] * (2 * n)).transpose(order + [n + s for s in order])
    dk, dr = d ** len(sites), d ** len(rest)
    m = t.reshape(dk, dr, dk, dr)
    un = np.einsum("yx,xayb->ab", effect, m)
    prob = float(np.real(np.trace(un)))
    return prob, un, rest


def algorithm2_run(state, general_povm, predictor, m_dist, k, rng=None, shuffle="auto", prose_order=False):
    """Wrapper for a general measurement on ``k`` copies.

    ``general_povm`` acts jointly on sites ``0 .. k-1`` (dimension
    ``d**k``); ``predictor(outcome_index)`` maps its outcome to a
    prediction. Then ``l`` is drawn from ``k+1 .. k+N/2`` and sites
    ``k .. l-1`` are measured with ``m_dist`` to give ``w``. With
    ``prose_order`` the ``m_dist`` block is measured first; the joint law
    of ``(l, w, p)`` is the same either way.

    Only dense inputs are supported (general measurements are entangled).
    """
    rng = as_generator(rng)
    N = state.n_sites
    if not 1 <= k < N / 2:
        raise ValidationError("the number of copies must satisfy 1 <= k < N/2")
    if isinstance(state, ProductMixture):
        state = DenseState(state.to_dense(), state.site_dim, validate=False)
    state = _maybe_shuffle(state, shuffle, rng)
    d = state.site_dim
    if general_povm.dim != d ** k:
        raise CapacityError(f"general measurement must act on dimension {d ** k}")
    l = int(rng.integers(k + 1, k + N // 2 + 1))
    m_pool = m_dist.elements[None]

    def general(st, sites):
        probs = []
        for e in general_povm.elements:
            probs.append(max(_joint_condition_dense(st, sites, e)[0], 0.0))
        x = int(_inverse_cdf(np.array(probs)[None], rng)[0])
        prob, un, rest = _joint_condition_dense(st, sites, general_povm.elements[x])
        dim = d ** len(rest)
        mat = un / prob if prob > ZERO_PROBABILITY else np.eye(dim) / dim
        return x, DenseState(mat, d, validate=False), rest

    def projection(st, sites):
        eng = MeasurementEngine(st, m_pool)
        (w,), (test,), _ = eng.run(rng, [(sites, np.zeros(len(sites), dtype=int))])
        return w, test

    if not prose_order:
        x, rest_state, rest = general(state, list(range(k)))
        pos = [rest.index(s) for s in range(k, l)]
        w, test = projection(rest_state, pos)
    else:
        pos = list(range(k, l))
        rho = state.matrix
        alive = list(range(N))
        w = []
        for s in pos:
            at = alive.index(s)
            cur = DenseState(rho, d, validate=False)
            probs = np.einsum("xij,ji->x", m_dist.elements, cur.reduced(at)).real
            xo = int(_inverse_cdf(probs[None], rng)[0])
            rho = cur.condition(at, m_dist.elements[xo]).post_state.matrix
            alive.pop(at)
            w.append(xo)
        w = np.array(w, dtype=int)
        x, rest_state, _ = general(DenseState(rho, d, validate=False), list(range(k)))
        test = partial_trace(rest_state.matrix, rest_state.dims, [rest_state.n_sites - 1])
    given_w = _condition_product_effects(state, list(range(k, l)), m_dist.elements[w])
    p = as_prediction(predictor(x))
    rec = RunRecord(l, np.zeros(0, dtype=int), w, np.array([x]), p, test, given_w, True, None, k)
    rec.extra["outcome"] = x
    return rec


def _condition_product_effects(state, sites, effects):
    """Last site of a dense state after the product effect on ``sites``."""
    rho = state.matrix
    d = state.site_dim
    alive = list(range(state.n_sites))
    for s, e in zip(sites, effects):
        at = alive.index(s)
        rho = DenseState(rho, d, validate=False).condition(at, e).post_state.matrix
        alive.pop(at)
    return partial_trace(rho, [d] * len(alive), [len(alive) - 1])


class NonIidWrapper(BaseEstimator):
    """Calibrated wrapper around an i.i.d. learner.

    ``fit(state)`` only precomputes measurement likelihood tables for the
    given input; ``run`` and ``predict`` execute independent wrapper runs.
    There is no training in the statistical sense.

    Parameters
    ----------
    algorithm : IidAlgorithmSpec
    shuffle : bool or "auto"
    calibration : bool
        When false ``predict`` reports the no-calibration variant (the
        prediction only).
    """

    def __init__(self, algorithm=None, shuffle="auto", calibration=True):
        self.algorithm = algorithm
        self.shuffle = shuffle
        self.calibration = calibration

    def fit(self, state, y=None):
        if self.algorithm is None:
            raise ValidationError("an IidAlgorithmSpec is required")
        self.state_ = state
        self.engine_ = None
        if self.shuffle is False or (
            self.shuffle == "auto" and isinstance(state, ProductMixture) and state.symmetric
        ):
            self.engine_ = MeasurementEngine(state, self.algorithm.pool)
        return self

    def _check(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("NonIidWrapper is not fitted yet")

    def run(self, rng=None, state=None):
        """One run; ``state`` overrides the fitted input for this call."""
        rng = as_generator(rng)
        if state is not None:
            return algorithm1_run(state, self.algorithm, rng, self.shuffle)
        self._check()
        if self.engine_ is not None:
            return _algorithm1(self.engine_, self.algorithm, rng, self.state_)
        return algorithm1_run(self.state_, self.algorithm, rng, self.shuffle)

    def predict(self, X=None, rng=None):
        """Predictions of ``X`` independent runs (``X`` an int, default 1)."""
        n = 1 if X is None else int(X)
        rng = as_generator(rng)
        return [self.run(rng).p for _ in range(n)]


class GeneralWrapper(BaseEstimator):
    """Wrapper for a general (possibly entangled) measurement on ``k`` copies."""

    def __init__(self, general_povm=None, predictor=None, m_dist=None, k=1, prose_order=False, shuffle="auto"):
        self.general_povm = general_povm
        self.predictor = predictor
        self.m_dist = m_dist
        self.k = k
        self.prose_order = prose_order
        self.shuffle = shuffle

    def fit(self, state, y=None):
        self.state_ = state
        return self

    def run(self, rng=None, state=None):
        st = state if state is not None else getattr(self, "state_", None)
        if st is None:
            raise NotFittedError("GeneralWrapper is not fitted yet")
        return algorithm2_run(
            st, self.general_povm, self.predictor, self.m_dist, self.k, rng, self.shuffle, self.prose_order
        )

    def predict(self, X=None, rng=None):
        n = 1 if X is None else int(X)
        rng = as_generator(rng)
        return [self.run(rng).p for _ in range(n)]
