import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from noniid_qlearn.definetti import (
    appendix_b_analytic,
    appendix_b_expected_lhs,
    appendix_b_numeric,
    check_k_range,
    conditional_mutual_information,
    gf_bound,
    gf_lhs,
    measured_image_norm,
    randomized_definetti_lhs,
    randomized_definetti_bound,
)
from noniid_qlearn.linalg import ValidationError, random_density_matrix, tensor
from noniid_qlearn.measurements import (
    clifford_family,
    computational_family,
    computational_povm,
    pauli3_family,
    pauli6_povm,
)
from noniid_qlearn.states import DenseState, basis_mixture, haar_mixture, iid_state


def test_bounds():
    assert randomized_definetti_bound(8, 1, 2) == pytest.approx(math.sqrt(4 * math.log(2) / 8))
    assert randomized_definetti_bound(8, 1, 2) == pytest.approx(0.5887, abs=1e-4)
    assert gf_bound(64, 2, 2) == pytest.approx(2 * math.sqrt(2 * 8 * 4 * math.log(2) / 64))


def test_k_range():
    check_k_range(8, 3)
    for k in (0, 4, 5):
        with pytest.raises(ValidationError, match="1 <= k < N/2"):
            check_k_range(8, k)


class TestRandomizedBound:
    def test_iid_vanishes(self, rng):
        st_ = iid_state(random_density_matrix(2, rng), 16)
        for fam in (computational_family(), pauli3_family(), clifford_family(1)):
            est = randomized_definetti_lhs(st_, fam, 2, 500, rng=1)
            assert est.lhs_mean <= 1e-10

    def test_basis_mixture_clifford(self):
        est = randomized_definetti_lhs(basis_mixture(2, 8), clifford_family(1), 1, 10_000, rng=3)
        assert est.lhs_mean + 3 * est.std_error <= randomized_definetti_bound(8, 1, 2)
        assert est.lhs_mean > 0.01

    def test_basis_mixture_computational_exact(self):
        # measured-site count is uniform on 0..N/2-1; zero sites leave a gap
        # of exactly 1, any measurement identifies the branch, so the mean is 2/N
        est = randomized_definetti_lhs(basis_mixture(2, 16), computational_family(), 1, 20_000, rng=4)
        assert abs(est.lhs_mean - 2 / 16) <= 3 * est.std_error

    def test_fast_path_matches_dense_oracle(self):
        # symmetric-mixture engine versus explicit dense conditioning
        mix = basis_mixture(2, 6)
        dense = DenseState(mix.to_dense(), 2)
        fast = randomized_definetti_lhs(mix, pauli3_family(), 1, 4000, rng=5)
        slow = randomized_definetti_lhs(dense, pauli3_family(), 1, 1500, rng=6, shuffle=False)
        tol = 3 * math.hypot(fast.std_error, slow.std_error) + 1e-3
        assert abs(fast.lhs_mean - slow.lhs_mean) <= tol

    def test_deterministic(self):
        a = randomized_definetti_lhs(basis_mixture(2, 8), pauli3_family(), 1, 2000, rng=9)
        b = randomized_definetti_lhs(basis_mixture(2, 8), pauli3_family(), 1, 2000, rng=9)
        assert a.lhs_mean == b.lhs_mean

    def test_haar_mixture(self, rng):
        est = randomized_definetti_lhs(haar_mixture(16, rng, 2000), pauli3_family(), 2, 3000, rng=2)
        assert est.lhs_mean + 3 * est.std_error <= randomized_definetti_bound(16, 2, 2)


class TestGeneralForm:
    def test_iid_vanishes(self, rng):
        est = gf_lhs(iid_state(random_density_matrix(2, rng), 12), pauli6_povm(), 2, 300, rng=1)
        assert est.lhs_mean <= 1e-10

    def test_basis_mixture_below_bound(self):
        est = gf_lhs(basis_mixture(2, 64), pauli6_povm(), 2, 2000, rng=2)
        assert est.lhs_mean <= gf_bound(64, 2, 2)

    def test_data_processing_witness(self):
        dense = DenseState(basis_mixture(2, 8).to_dense(), 2)
        est = gf_lhs(dense, pauli6_povm(), 2, 200, rng=3, image_povm=pauli6_povm())
        assert np.all(est.samples >= est.image_samples - 1e-12)

    def test_requires_ic(self):
        with pytest.raises(ValidationError):
            gf_lhs(basis_mixture(2, 8), computational_povm(), 1, 10)


def test_measured_image_norm_of_product_difference(rng):
    a, b = random_density_matrix(2, rng), random_density_matrix(2, rng)
    op = tensor(a, a) - tensor(b, a)
    # measuring the second site leaves the first-site difference intact
    assert measured_image_norm(op, 2, [computational_povm()]) == pytest.approx(
        np.abs(np.linalg.eigvalsh(a - b)).sum(), abs=1e-12
    )


class TestMutualInformation:
    def test_independent(self):
        assert conditional_mutual_information(np.full((2, 2, 3), 1 / 12)) == pytest.approx(0.0, abs=1e-14)

    def test_correlated(self):
        joint = np.array([[0.5, 0.0], [0.0, 0.5]])[..., None]
        assert conditional_mutual_information(joint) == pytest.approx(math.log(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_chain_rule(self, seed):
        p = np.random.default_rng(seed).random((2, 2, 2, 3))
        p /= p.sum()
        total = conditional_mutual_information(p)
        first = conditional_mutual_information(p.sum(axis=2))
        rest = conditional_mutual_information(p.reshape(4, 2, 3))
        assert total == pytest.approx(first + rest, abs=1e-10)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            conditional_mutual_information(np.full((2, 2), 0.3))


class TestAppendixB:
    def test_examples(self):
        rec = appendix_b_analytic(4, 2, 2)
        assert rec.p_star == 0.5
        np.testing.assert_allclose(rec.analytic_reduced, np.diag([0.5, 0.5]))
        rec = appendix_b_analytic(1, 0, 2)
        assert rec.p_star == pytest.approx(1 / 3)
        assert appendix_b_analytic(1000, 3, 2).analytic_bound == pytest.approx(0.3527, abs=1e-4)

    def test_quadrature_matches_closed_form(self):
        for l in (1, 7, 50):
            for w in range(l + 1):
                rec = appendix_b_numeric(l, w, 2)
                assert np.max(np.abs(rec.numeric_reduced - rec.analytic_reduced)) <= 1e-10

    def test_k1_zero(self):
        assert appendix_b_numeric(9, 4, 1).lhs_numeric == pytest.approx(0.0, abs=1e-12)

    def test_lhs_against_scipy_quad(self):
        # independent oracle: adaptive quadrature of the Beta posterior moments
        l, w, k = 6, 2, 3
        dens = lambda p: (l + 1) * math.comb(l, w) * p**w * (1 - p) ** (l - w)
        ps = (w + 1) / (l + 2)
        want = 0.0
        for j in range(k + 1):
            m = quad(lambda p: dens(p) * (1 - p) ** (k - j) * p**j, 0, 1)[0]
            want += math.comb(k, j) * abs(m - (1 - ps) ** (k - j) * ps**j)
        assert appendix_b_numeric(l, w, k).lhs_numeric == pytest.approx(want, abs=1e-10)

    def test_expected_lhs_small(self):
        assert 0 < appendix_b_expected_lhs(16, 2) < randomized_definetti_bound(16, 2, 2)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            appendix_b_analytic(3, 4, 2)
