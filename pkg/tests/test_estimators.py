import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_params
from whcpd.estimators import (
    METHODS,
    CalsOptions,
    cals_iterate,
    cptoep,
    estimate,
    ls_objective_and_gradient,
    ls_weights,
    n_cals,
    objective_jy,
    quasi_newton_refine,
    random_init,
)
from whcpd.montecarlo import draw_noise
from whcpd.multilinear import (
    DimensionError,
    cpd_reconstruct,
    full_indices,
    khatri_rao_power,
    multiset_domain,
    scatter_symmetric,
    vec,
)
from whcpd.whmodel import WhParams, build_factor, volterra_kernel


@pytest.fixture(scope="module")
def noisy_ref(ref_tensor):
    return ref_tensor + np.sqrt(1e-3) * draw_noise(7, 3, 11)


class TestObjective:
    def test_zero_at_truth(self, ref_params, ref_tensor):
        assert objective_jy(ref_tensor, ref_params) == pytest.approx(0.0, abs=1e-20)

    def test_orbit_multiplicity(self, ref_params, ref_tensor):
        D = multiset_domain(7, 3)
        e = np.zeros(D.size)
        e[D.as_tuples().index((1, 1, 2))] = 1.0
        delta = 0.01
        Y = ref_tensor + delta * scatter_symmetric(e, D)
        assert objective_jy(Y, ref_params) == pytest.approx(3 * delta**2, rel=1e-9)

    def test_matches_brute_force(self, ref_params, ref_tensor):
        Y = ref_tensor + draw_noise(7, 3, 5)
        X = ref_tensor
        brute = sum((Y[i, j, k] - X[i, j, k]) ** 2
                    for i in range(7) for j in range(7) for k in range(7))
        assert objective_jy(Y, ref_params) == pytest.approx(brute, rel=1e-12)

    def test_shape_mismatch(self, ref_params):
        with pytest.raises(DimensionError):
            objective_jy(np.zeros((6, 6, 6)), ref_params)


class TestCals:
    def test_fixed_point(self, ref_params, ref_tensor):
        res = cals_iterate(ref_tensor, ref_params.w, ref_params.h)
        assert res.status == "converged" and res.iterations <= 2
        assert np.max(np.abs(res.eta_hat - ref_params.eta)) < 1e-10

    def test_scaled_w_is_normalized(self, ref_params, ref_tensor):
        res = cals_iterate(ref_tensor, 5 * ref_params.w, ref_params.h)
        assert res.w_hat[0] == 1.0
        assert np.max(np.abs(res.eta_hat - ref_params.eta)) < 1e-10

    def test_ls_step_at_truth(self, ref_params, ref_tensor):
        K = khatri_rao_power(build_factor(ref_params), 3)
        np.testing.assert_allclose(K @ ref_params.h, vec(ref_tensor), atol=1e-12)
        np.testing.assert_allclose(ls_weights(ref_tensor, ref_params.w), ref_params.h,
                                   atol=1e-10)

    def test_w0_stays_one(self, ref_params, noisy_ref):
        w, h = random_init(np.random.default_rng(0), 5, 3)
        for iters in (1, 2, 7):
            res = cals_iterate(noisy_ref, w, h, CalsOptions(max_iters=iters))
            if not res.failed:
                assert res.w_hat[0] == 1.0
                assert res.iterations <= iters

    def test_max_iters_status(self, ref_params, noisy_ref):
        w, h = random_init(np.random.default_rng(3), 5, 3)
        res = cals_iterate(noisy_ref, w, h, CalsOptions(max_iters=1))
        assert res.status in ("max_iters", "failed")

    def test_singular_h_init(self, ref_params, ref_tensor):
        with pytest.raises(ValueError):
            cals_iterate(ref_tensor, ref_params.w, [1.0, 0.0, 1.0])

    def test_single_start_equals_direct_call(self, noisy_ref):
        seed = np.random.SeedSequence(42)
        w, h = random_init(np.random.default_rng(seed.spawn(1)[0]), 5, 3)
        direct = cals_iterate(noisy_ref, w, h)
        best = n_cals(noisy_ref, 1, 42, 5, 3)
        np.testing.assert_array_equal(best.eta_hat, direct.eta_hat)

    def test_ten_starts_noiseless(self, ref_params, ref_tensor):
        res = n_cals(ref_tensor, 10, 0, 5, 3)
        assert res.objective < 1e-15 * np.sum(ref_tensor**2)
        assert np.max(np.abs(res.eta_hat - ref_params.eta)) < 1e-6

    def test_spurious_fixed_point(self):
        # every start lands on the same non-zero-residual fixed point of the CALS map,
        # which is not a least-squares minimum: quasi-Newton from there finds the truth
        params = WhParams([1.0, 1.60001909, 0.20288244], [-1.73213484, -0.3, -1.16322597], 1.0, 3)
        Y = volterra_kernel(params)
        res = n_cals(Y, 10, 2, 3, 3)
        assert res.status == "converged" and res.objective > 1.0
        again = cals_iterate(Y, res.w_hat, res.h_hat)
        np.testing.assert_allclose(again.eta_hat, res.eta_hat, atol=1e-6)
        refined = quasi_newton_refine(Y, res.eta_hat, 3)
        assert refined.objective < 1e-3 * res.objective

    def test_n_cals_reproducible(self, noisy_ref):
        a, b = n_cals(noisy_ref, 3, 9, 5, 3), n_cals(noisy_ref, 3, 9, 5, 3)
        np.testing.assert_array_equal(a.eta_hat, b.eta_hat)

    def test_random_init(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w, h = random_init(rng, 4, 3)
            assert w[0] == 1.0 and np.all(np.abs(h) >= 0.1)

    def test_options_validation(self):
        with pytest.raises(ValueError):
            CalsOptions(max_iters=0)
        with pytest.raises(ValueError):
            CalsOptions(rel_tol=0.0)


class TestCptoep:
    def test_noiseless_reference(self, ref_params, ref_tensor):
        res = cptoep(ref_tensor, 5, 3)
        assert res.status == "converged"
        assert np.max(np.abs(res.eta_hat - ref_params.eta)) < 1e-6

    def test_deterministic(self, noisy_ref):
        a, b = cptoep(noisy_ref, 5, 3), cptoep(noisy_ref.copy(), 5, 3)
        np.testing.assert_array_equal(a.eta_hat, b.eta_hat)

    def test_rank_one(self):
        params = WhParams([1.0, -0.7, 0.4], [2.0], 1.0, 3)
        res = cptoep(volterra_kernel(params), 3, 1)
        np.testing.assert_allclose(res.w_hat, params.w, atol=1e-12)
        np.testing.assert_allclose(res.h_hat, params.h, atol=1e-12)

    def test_rank_deficient(self):
        Y = volterra_kernel(WhParams([1.0, 0.5], [1.0, 0.0], 1.0, 3))
        assert cptoep(Y, 2, 2).reason == "rank_deficient"

    def test_order_two_rejected(self):
        with pytest.raises(DimensionError):
            cptoep(np.eye(3), 2, 2)

    def test_dimension_mismatch(self, ref_tensor):
        with pytest.raises(DimensionError):
            cptoep(ref_tensor, 4, 3)


class TestQuasiNewton:
    def test_truth_is_stationary(self, ref_params, ref_tensor):
        res = quasi_newton_refine(ref_tensor, ref_params.eta, 5)
        np.testing.assert_allclose(res.eta_hat, ref_params.eta, atol=1e-12)
        _, g = ls_objective_and_gradient(ref_params.eta, vec(ref_tensor), 5, 3,
                                         full_indices(7, 3))
        assert np.linalg.norm(g) < 1e-10

    def test_gradient_finite_differences(self, noisy_ref):
        rng = np.random.default_rng(7)
        y, idx = vec(noisy_ref), full_indices(7, 3)

        def F(eta):
            p = WhParams.from_eta(eta, 5, 3)
            r = y - vec(cpd_reconstruct(build_factor(p), p.h, 1.0, 3))
            return r @ r

        for _ in range(20):
            eta = rng.standard_normal(7)
            _, g = ls_objective_and_gradient(eta, y, 5, 3, idx)
            fd = np.array([(F(eta + 1e-6 * e) - F(eta - 1e-6 * e)) / 2e-6 for e in np.eye(7)])
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_objective_matches_jy(self, noisy_ref):
        eta = np.random.default_rng(8).standard_normal(7)
        F, _ = ls_objective_and_gradient(eta, vec(noisy_ref), 5, 3, full_indices(7, 3))
        assert F == pytest.approx(objective_jy(noisy_ref, WhParams.from_eta(eta, 5, 3)),
                                  rel=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0))
    def test_never_increases(self, ref_params, noisy_ref, seed, scale):
        rng = np.random.default_rng(seed)
        eta0 = ref_params.eta + scale * rng.standard_normal(7)
        F0, _ = ls_objective_and_gradient(eta0, vec(noisy_ref), 5, 3, full_indices(7, 3))
        res = quasi_newton_refine(noisy_ref, eta0, 5, max_iters=50)
        assert res.objective <= F0 + 1e-12

    def test_nonfinite_init(self, ref_tensor):
        with pytest.raises(ValueError):
            quasi_newton_refine(ref_tensor, np.full(7, np.nan), 5)


class TestEstimate:
    def test_cptoep_dispatch(self, noisy_ref):
        np.testing.assert_array_equal(estimate(noisy_ref, "cptoep", 5, 3).eta_hat,
                                      cptoep(noisy_ref, 5, 3).eta_hat)

    def test_unknown_method(self, ref_tensor):
        with pytest.raises(ValueError):
            estimate(ref_tensor, "als", 5, 3)

    @pytest.mark.parametrize("method", ["cptoep", "cptoep_cals", "cptoep_qn"])
    def test_noiseless_random_draws(self, method):
        rng = np.random.default_rng(20240)
        for i in range(20):
            L_w, R = int(rng.integers(2, 6)), int(rng.integers(2, 5))
            params = random_params(rng, L_w, R, 3)
            res = estimate(volterra_kernel(params), method, L_w, R, seed=i)
            assert not res.failed
            assert np.max(np.abs(res.eta_hat - params.eta)) < 1e-6

    def test_refinement_improves_on_cptoep(self, noisy_ref):
        first = estimate(noisy_ref, "cptoep", 5, 3)
        refined = estimate(noisy_ref, "cptoep_qn", 5, 3)
        assert refined.objective <= first.objective

    def test_result_dict(self, noisy_ref):
        d = estimate(noisy_ref, "cptoep_qn", 5, 3).to_dict()
        assert set(d) == {"eta_hat", "objective", "iterations", "status", "reason", "message"}
        assert len(d["eta_hat"]) == 7
