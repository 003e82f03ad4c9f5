import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare
from sklearn.exceptions import NotFittedError

from noniid_qlearn.linalg import (
    ValidationError,
    ket,
    maximally_mixed,
    projector,
    random_density_matrix,
    tensor,
    trace_norm,
)
from noniid_qlearn.measurements import Povm, computational_povm, pauli6_povm
from noniid_qlearn.noniid import (
    Bit,
    CoverageFailure,
    ExpectationTuple,
    FidelityEst,
    GeneralWrapper,
    IidAlgorithmSpec,
    Mixedness,
    MixednessD,
    NonIidWrapper,
    Scalar,
    ShadowMax,
    ShadowTomography,
    StateDescription,
    Tomography,
    TraceDist,
    VerifyD,
    VerifyPure,
    algorithm1_run,
    algorithm2_run,
    algorithm3_run,
    appendix_a_distribution_check,
    appendix_a_experiment,
    as_prediction,
    clifford_pool,
    conditional_on_prediction,
    coverage_block,
    coverage_failure_bound,
    coverage_failure_probability,
    delta_prime,
    error_probability_with_calibration,
    error_probability_without_calibration,
    first_hits,
    flammia_liu_estimates,
    iid_error_probability,
    shift_probability_bound,
    max_k_a,
    mixedness_spec,
    pauli_sampling_law,
    run_iid,
    shadow_spec,
    shift_frequency,
    wrapper_error_bound,
    tomography_spec,
    verification_expectation,
    verify_pure_protocol,
    verify_spec,
    wrapper_for,
)
from noniid_qlearn.noniid.appendix_a import training_distribution, two_strings
from noniid_qlearn.noniid.errors import wilson
from noniid_qlearn.states import DenseState, basis_mixture, ghz_pure, iid_state

P0, P1 = projector(ket(0, 2)), projector(ket(1, 2))
PLUS = np.array([1, 1]) / np.sqrt(2)
seeds = st.integers(0, 2**32 - 1)


def computational_spec(k_a=1, delta_a=0.5, predictor=None):
    """Learner that reports its first computational-basis outcome."""
    pred = predictor or (lambda ids, out, rng: Bit(int(out[0])))
    return IidAlgorithmSpec([computational_povm()] * k_a, pred, k_a, delta_a)


class TestPredictions:
    def test_ranges(self):
        with pytest.raises(ValidationError):
            ExpectationTuple((1.2,))
        with pytest.raises(ValidationError):
            Bit(2)
        with pytest.raises(ValidationError):
            Scalar(float("nan"))
        with pytest.raises(ValidationError):
            StateDescription(np.eye(2))

    def test_coercion_and_keys(self):
        assert as_prediction(1) == Bit(1)
        assert as_prediction(0.25).key() == Scalar(0.25).key()
        assert ExpectationTuple([0.5, 0.25]).key() == ExpectationTuple((0.5, 0.25)).key()
        assert StateDescription(P0).key() != StateDescription(P1).key()


class TestPredicates:
    def test_verify_examples(self):
        eps = 0.2
        v = VerifyPure([ket(0, 2)], eps)
        sigma = np.diag([1 - 1.5 * eps, 1.5 * eps])
        assert v.evaluate(Bit(0), sigma)
        assert v.evaluate(Bit(1), sigma)
        assert not v.evaluate(Bit(1), P0)
        assert not v.evaluate(Bit(0), P1)

    def test_tomography_and_shadow_exact(self, rng):
        rho = random_density_matrix(2, rng)
        assert Tomography(1e-9).evaluate(StateDescription(rho), rho)
        obs = [P0, projector(PLUS)]
        exact = ExpectationTuple([np.trace(o @ rho).real for o in obs])
        assert ShadowTomography(obs, 1e-12).evaluate(exact, rho)

    def test_mixedness_full_norm(self):
        m = Mixedness(0.4)
        assert m.evaluate(Bit(1), P0)  # distance 1 > 0.4
        assert not m.evaluate(Bit(0), P0)  # distance 1 >= 0.8
        assert m.evaluate(Bit(0), maximally_mixed(2))

    def test_fidelity(self):
        assert FidelityEst(ket(0, 2), 0.1).evaluate(Scalar(0.95), P0)
        assert not FidelityEst(ket(0, 2), 0.1).evaluate(Scalar(0.8), P0)

    def test_coverage_failure_is_error(self):
        assert not Tomography(2.0).evaluate(CoverageFailure(), P0)

    def test_wrong_type(self):
        with pytest.raises(ValidationError):
            VerifyPure([ket(0, 2)], 0.1).evaluate(Scalar(0.3), P0)

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.floats(0.01, 0.3), st.floats(0.001, 0.3))
    def test_robust_variants(self, seed, eps, eps2):
        rng = np.random.default_rng(seed)
        sigma = random_density_matrix(2, rng)
        delta = random_density_matrix(2, rng) - random_density_matrix(2, rng)
        xi = sigma + delta * eps2 / max(trace_norm(delta), 1e-12)
        obs = [P0, projector(PLUS)]
        exact = [np.trace(o @ sigma).real for o in obs]
        p = ExpectationTuple(np.clip(np.array(exact) + rng.uniform(-eps, eps, 2), 0, 1))
        cases = [
            (ShadowTomography(obs, eps), p),
            (Tomography(eps), StateDescription(random_density_matrix(2, rng))),
            (FidelityEst(ket(0, 2), eps), Scalar(exact[0] + rng.uniform(-eps, eps))),
            (VerifyPure([ket(0, 2)], eps), Bit(0)),
            (Mixedness(eps), Bit(0)),
        ]
        for pred, pr in cases:
            if pred.evaluate(pr, sigma):
                assert pred.with_epsilon(eps + eps2).evaluate(pr, xi)


class TestDFunctions:
    def test_examples(self, rng):
        psi = ket(0, 2)
        assert VerifyD(psi)(Bit(0), P0) == 0.0
        assert VerifyD(psi)(Bit(1), random_density_matrix(2, rng)) == 1.0
        a, b = random_density_matrix(2, rng), random_density_matrix(2, rng)
        td = TraceDist()
        assert td(StateDescription(a), b) == pytest.approx(td(StateDescription(b), a))
        assert td(StateDescription(P0), P1) == pytest.approx(1.0)
        assert MixednessD()(Bit(0), P0) == pytest.approx(0.5)

    def test_success_wrapper(self):
        pred = TraceDist().success(0.1)
        assert pred.evaluate(StateDescription(P0), P0)
        assert not pred.evaluate(StateDescription(P0), P1)

    def test_coverage_failure_costs_bound(self):
        assert MixednessD()(CoverageFailure(), P0) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(0.0, 1.0))
    def test_conditions(self, seed, alpha):
        rng = np.random.default_rng(seed)
        s, r = random_density_matrix(2, rng), random_density_matrix(2, rng)
        obs = [P0, projector(PLUS)]
        variants = [
            (TraceDist(), StateDescription(random_density_matrix(2, rng))),
            (ShadowMax(obs), ExpectationTuple(rng.random(2))),
            (VerifyD(ket(0, 2)), Bit(int(rng.integers(2)))),
            (MixednessD(), Bit(int(rng.integers(2)))),
        ]
        for d, p in variants:
            ds, dr = d(p, s), d(p, r)
            assert -1e-9 <= ds <= d.bound + 1e-9
            assert abs(ds - dr) <= 0.5 * trace_norm(s - r) + 1e-9
            assert alpha * ds + (1 - alpha) * dr >= d(p, alpha * s + (1 - alpha) * r) - 1e-9


class TestCoverage:
    def test_block(self):
        assert coverage_block(4, 0.1) == 4 * math.ceil(math.log(40))
        assert coverage_block(4, 1e-4) == 44

    def test_first_hits(self):
        np.testing.assert_array_equal(first_hits([2, 0, 2, 1], 4), [1, 3, 0, -1])

    def test_exact_small_case(self):
        assert coverage_failure_probability(2, 3) == pytest.approx(0.25)
        assert coverage_failure_probability(1, 5) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 60))
    def test_exact_below_bound(self, k_a, K):
        assert coverage_failure_probability(k_a, K) <= coverage_failure_bound(k_a, K) + 1e-12

    def test_max_k_a(self):
        k = max_k_a(200, 0.1)
        assert 200 > 2 * (coverage_block(k, 0.1) + 1)
        assert 200 <= 2 * (coverage_block(k + 1, 0.1) + 1)


class TestAlgorithm1:
    def test_iid_test_state_unchanged(self, rng):
        sigma = random_density_matrix(2, rng)
        alg = tomography_spec(4, 0.2)
        for _ in range(20):
            rec = algorithm1_run(iid_state(sigma, 60), alg, rng)
            np.testing.assert_allclose(rec.conditional_test_state, sigma, atol=1e-12)

    def test_basis_mixture_branch(self, rng):
        st_ = basis_mixture(2, 12)
        for _ in range(50):
            rec = algorithm1_run(st_, computational_spec(), rng)
            np.testing.assert_allclose(rec.conditional_test_state, P1 if rec.branch else P0, atol=1e-12)
            assert rec.p == Bit(rec.branch)
            assert rec.K + 1 <= rec.l <= rec.K + 6

    def test_insufficient_sites(self, rng):
        with pytest.raises(ValidationError):
            algorithm1_run(basis_mixture(2, 4), computational_spec(), rng)

    def test_coverage_failure_frequency(self):
        alg = computational_spec(4, 0.5)
        K = coverage_block(4, 0.5)
        wrapper = wrapper_for(alg, basis_mixture(2, 2 * K + 10))
        rng = np.random.default_rng(5)
        fails = sum(not wrapper.run(rng).coverage_ok for _ in range(10_000))
        bound = coverage_failure_bound(4, K)
        assert fails / 10_000 <= bound + 3 * math.sqrt(bound * (1 - bound) / 10_000)

    def test_dense_path_matches_mixture(self):
        mix = basis_mixture(2, 8)
        dense = DenseState(mix.to_dense(), 2)
        alg = computational_spec()
        rng = np.random.default_rng(1)
        a = sum(algorithm1_run(mix, alg, rng).p.value for _ in range(2000))
        b = sum(algorithm1_run(dense, alg, rng).p.value for _ in range(2000))
        assert abs(a - b) / 2000 < 0.06


class TestAlgorithm3:
    def test_constant_predictor(self, rng):
        st_ = basis_mixture(2, 12)
        alg = computational_spec(predictor=lambda ids, out, rng: Bit(0))
        p, cond = algorithm3_run(st_, alg, rng, reservoir=400)
        np.testing.assert_allclose(cond, np.eye(2) / 2, atol=0.08)
        exact = conditional_on_prediction(st_, alg, p)
        np.testing.assert_allclose(exact, np.eye(2) / 2, atol=1e-12)

    def test_weight_example(self, rng):
        # n=3 bits per site; predicting the Hamming weight mixes all strings of that weight
        n, d = 3, 8
        st_ = basis_mixture(d, 16)
        alg = IidAlgorithmSpec([computational_povm(d)], lambda ids, out, r: Scalar(bin(int(out[0])).count("1")), 1, 0.5)
        for weight in range(n + 1):
            cond = conditional_on_prediction(st_, alg, Scalar(weight))
            strings = [x for x in range(d) if bin(x).count("1") == weight]
            want = np.zeros((d, d))
            for x in strings:
                want[x, x] = 1 / math.comb(n, weight)
            np.testing.assert_allclose(cond, want, atol=1e-12)
        rec = algorithm1_run(st_, alg, rng)
        with_c = rec.conditional_test_state
        without = conditional_on_prediction(st_, alg, rec.p)
        w = int(rec.p.value)
        assert trace_norm(with_c - without) == pytest.approx(2 * (1 - 1 / math.comb(n, w)), abs=1e-12)

    def test_iid_agrees_with_algorithm1(self, rng):
        sigma = random_density_matrix(2, rng)
        p, cond = algorithm3_run(iid_state(sigma, 40), tomography_spec(4, 0.3), rng, reservoir=10)
        np.testing.assert_allclose(cond, sigma, atol=1e-12)


def _swap_test():
    swap = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            swap[2 * i + j, 2 * j + i] = 1
    sym = (np.eye(4) + swap) / 2
    return Povm(np.stack([sym, np.eye(4) - sym]))


def _bell_povm():
    vecs = np.array([[1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0]]) / np.sqrt(2)
    return Povm(np.stack([np.outer(v, v) for v in vecs]))


class TestAlgorithm2:
    def test_ghz_swap_test(self, rng):
        for _ in range(20):
            rec = algorithm2_run(ghz_pure(6), _swap_test(), lambda x: Bit(x), pauli6_povm(), 2, rng)
            # the two-site GHZ marginal lives in the symmetric subspace
            assert rec.extra["outcome"] == 0
            assert abs(np.trace(rec.conditional_test_state) - 1) < 1e-12

    def test_k1_single_copy(self, rng):
        rec = algorithm2_run(iid_state(P0, 5), computational_povm(), lambda x: Bit(x), pauli6_povm(), 1, rng)
        assert rec.p == Bit(0)
        assert 2 <= rec.l <= 3

    def test_iid_prediction_law(self):
        sigma = random_density_matrix(2, np.random.default_rng(7))
        povm = _bell_povm()
        want = povm.probabilities(tensor(sigma, sigma))
        rng = np.random.default_rng(8)
        for prose in (False, True):
            counts = np.zeros(4)
            for _ in range(1500):
                rec = algorithm2_run(iid_state(sigma, 6), povm, lambda x: Scalar(x), pauli6_povm(), 2, rng, prose_order=prose)
                counts[rec.extra["outcome"]] += 1
            keep = want > 1e-9
            assert chisquare(counts[keep], want[keep] / want[keep].sum() * counts.sum()).pvalue > 0.01

    def test_k_range(self, rng):
        with pytest.raises(ValidationError):
            algorithm2_run(ghz_pure(4), _swap_test(), lambda x: Bit(x), pauli6_povm(), 2, rng)

    def test_wrapper(self, rng):
        w = GeneralWrapper(_swap_test(), lambda x: Bit(x), pauli6_povm(), k=2).fit(ghz_pure(6))
        assert w.predict(3, rng) == [Bit(0)] * 3


class TestErrorProbabilities:
    def test_perfect_oracle(self):
        sigma = random_density_matrix(2, np.random.default_rng(3))
        alg = IidAlgorithmSpec([pauli6_povm()], lambda ids, out, r: StateDescription(sigma), 2, 0.5)
        st_ = iid_state(sigma, 20)
        est = error_probability_with_calibration(st_, wrapper_for(alg, st_), Tomography(1e-9), 4000, rng=1)
        # the only errors left are coverage misses: 2 * (1/2)**4 for K = 4
        assert est.ci_low <= coverage_failure_probability(2, 4) <= est.ci_high

    def test_random_guess_verify(self):
        st_ = basis_mixture(2, 12)
        alg = computational_spec(predictor=lambda ids, out, rng: Bit(int(rng.integers(2))))
        est = error_probability_with_calibration(st_, wrapper_for(alg, st_), VerifyPure([ket(0, 2)], 0.2), 4000, rng=2)
        # either branch fails for exactly one of the two guesses
        assert est.ci_low <= 0.5 <= est.ci_high

    def test_shadow_wrapper_on_basis_mixture(self):
        k_a, delta_a = 1000, 0.1
        K = coverage_block(k_a, delta_a)
        st_ = basis_mixture(2, 2 * (K + 1) + 2)
        alg = shadow_spec([P0], k_a, delta_a)
        est = error_probability_with_calibration(st_, wrapper_for(alg, st_), ShadowTomography([P0], 0.1), 400, rng=3)
        assert est.delta_hat <= 0.1

    def test_without_calibration_iid(self):
        sigma = random_density_matrix(2, np.random.default_rng(4))
        alg = tomography_spec(16, 0.3)
        st_ = iid_state(sigma, 2 * (coverage_block(16, 0.3) + 1) + 2)
        a = error_probability_without_calibration(st_, alg, Tomography(0.5), 4000, rng=5)
        b = iid_error_probability(sigma, alg, Tomography(0.5), 4000, rng=6)
        # coverage misses are independent of the estimate and count as errors
        miss = coverage_failure_probability(16, coverage_block(16, 0.3))
        want = miss + (1 - miss) * b.delta_hat
        assert abs(a.delta_hat - want) <= a.ci_halfwidth + b.ci_halfwidth

    def test_delta_prime_invariant_input(self):
        st_ = basis_mixture(2, 12)
        alg = computational_spec()
        pred = VerifyPure([ket(0, 2)], 0.2)
        a = delta_prime(st_, alg, pred, 2000, rng=7)
        b = error_probability_with_calibration(st_, wrapper_for(alg, st_), pred, 2000, rng=8)
        assert a.delta_hat == 0.0 and b.delta_hat == 0.0

    def test_wilson(self):
        lo, hi = wilson(0, 100)
        assert lo == 0.0 and 0.03 < hi < 0.04

    def test_reproducible(self):
        st_ = basis_mixture(2, 12)
        alg = computational_spec(predictor=lambda ids, out, rng: Bit(int(rng.integers(2))))
        pred = VerifyPure([ket(0, 2)], 0.2)
        a = error_probability_with_calibration(st_, wrapper_for(alg, st_), pred, 600, rng=11)
        b = error_probability_with_calibration(st_, wrapper_for(alg, st_), pred, 600, rng=11)
        assert a == b

    def test_test_state_shift(self):
        alg = tomography_spec(2, 0.5)
        K = coverage_block(2, 0.5)
        st_ = basis_mixture(2, 40)
        _, recs = error_probability_with_calibration(st_, wrapper_for(alg, st_), Tomography(1.0), 2000, rng=9, return_records=True)
        est = shift_frequency(recs, 0.5)
        assert est.delta_hat <= shift_probability_bound(40, K, 2, 0.5) + 3 * est.ci_halfwidth

    def test_wrapper_error_bound_form(self):
        val = wrapper_error_bound(1000, 4, 0.1, 2, 0.1, 0.05)
        want = 0.1 + 6 * math.sqrt(16 * math.log(40) ** 2 * math.log(2) / (1000 * 0.01))
        assert val == pytest.approx(want)


class TestAppendixA:
    def test_distributions_equal(self):
        assert appendix_a_distribution_check(4)
        assert appendix_a_distribution_check(6)

    def test_unconditioned_laws_differ(self):
        a, b = two_strings(6)
        assert training_distribution(a) != training_distribution(b)

    def test_experiment(self):
        res = appendix_a_experiment(6, 0.1)
        assert res.passed
        assert res.delta_prime_lower >= Fraction(1, 4)

    def test_odd_rejected(self):
        with pytest.raises(ValidationError):
            appendix_a_distribution_check(5)


class TestProtocols:
    def test_clifford_pool_shapes(self):
        eff, snaps = clifford_pool(1)
        assert eff.shape == (24, 2, 2, 2)
        np.testing.assert_allclose(eff.sum(axis=1), np.broadcast_to(np.eye(2), (24, 2, 2)), atol=1e-12)
        eff2, _ = clifford_pool(2, "local")
        assert eff2.shape == (576, 4, 4, 4)

    def test_verify_completeness_and_rejection(self):
        targets = [ket(0, 4)]
        k_a, delta_a = 300, 0.01
        K = coverage_block(k_a, delta_a)
        N = 2 * (K + 1) + 2
        rng = np.random.default_rng(2)
        good = [verify_pure_protocol(iid_state(projector(ket(0, 4)), N), targets, 0.2, 0.1, rng=rng, k_a=k_a, delta_a=delta_a) for _ in range(100)]
        bad = [verify_pure_protocol(iid_state(projector(ket(1, 4)), N), targets, 0.2, 0.1, rng=rng, k_a=k_a, delta_a=delta_a) for _ in range(100)]
        assert np.mean([r.p == Bit(0) for r in good]) >= 0.9
        assert np.mean([r.p == Bit(0) for r in bad]) <= 0.1

    def test_verify_local_mode(self):
        alg = verify_spec([ket(0, 4)], 0.2, 4, 0.5, mode="local")
        assert alg.pool.shape[0] == 576

    def test_expectation_orthogonal(self):
        psi = ket(0, 2)
        res = verification_expectation(iid_state(P1, 300), psi, 0.25, 120, trials=200, rng=1)
        assert res.completeness <= 0.02

    def test_fidelity_law(self):
        chi, law = pauli_sampling_law(ket(0, 2))
        np.testing.assert_allclose(law, [0.5, 0, 0, 0.5])

    def test_fidelity_unbiased(self, rng):
        rho = random_density_matrix(2, rng)
        est = flammia_liu_estimates(rho, PLUS, 0.2, 100_000, rng)
        truth = np.real(PLUS @ rho @ PLUS)
        assert abs(est.mean() - truth) <= 3 * est.std(ddof=1) / math.sqrt(est.size)

    def test_tomography_sqrt_scaling(self):
        plus = projector(PLUS)
        med = {}
        for k_a in (100, 400):
            alg = tomography_spec(k_a, 0.1)
            rng = np.random.default_rng(k_a)
            errs = [trace_norm(run_iid(alg, plus, rng)[0].matrix - plus) for _ in range(3000)]
            med[k_a] = np.median(errs)
        assert 1.7 <= med[100] / med[400] <= 2.3

    def test_tomography_tracks_branch(self):
        k_a, delta_a = 30, 0.01
        st_ = basis_mixture(2, 2 * (coverage_block(k_a, delta_a) + 1) + 2)
        w = wrapper_for(tomography_spec(k_a, delta_a), st_)
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(500):
            rec = w.run(rng)
            if not rec.coverage_ok:
                continue
            est = rec.p.matrix
            hits += trace_norm(est - rec.conditional_test_state) < trace_norm(est - maximally_mixed(2))
        assert hits / 500 >= 0.95

    def test_mixedness_iid(self):
        rng = np.random.default_rng(3)
        alg = mixedness_spec(0.3, 400, 0.1)
        zero_rate = np.mean([run_iid(alg, maximally_mixed(2), rng)[0] == Bit(0) for _ in range(500)])
        one_rate = np.mean([run_iid(alg, P0, rng)[0] == Bit(1) for _ in range(500)])
        assert zero_rate >= 0.9 and one_rate >= 0.9


class TestEstimatorApi:
    def test_params_and_clone(self):
        from sklearn.base import clone

        w = NonIidWrapper(computational_spec(), shuffle=False)
        assert set(w.get_params()) == {"algorithm", "shuffle", "calibration"}
        assert clone(w).shuffle is False

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            NonIidWrapper(computational_spec()).run(0)

    def test_predict(self):
        w = NonIidWrapper(computational_spec()).fit(basis_mixture(2, 12))
        preds = w.predict(5, rng=0)
        assert len(preds) == 5 and all(isinstance(p, Bit) for p in preds)
