import numpy as np
import pytest

from smlfilter.mse_surface import (
    MomentSet,
    empirical_mse,
    estimate_moments,
    grad,
    load_moments,
    mse,
    normal_residual,
    save_moments,
)
from smlfilter.sml_model import delay_line
from smlfilter.tensor_kron import kron_power, simple_tensor

from .oracles import fd_gradient


def planted(rng, M=4, K=2, n=2000, noise=0.0):
    H = rng.standard_normal((K, M)) / np.sqrt(M)
    U = delay_line(rng.standard_normal(n), M)
    d = np.prod(U @ H.T, axis=1) + noise * rng.standard_normal(n)
    return H, U, d


def random_moments(rng, M, K, n=30):
    return estimate_moments(rng.standard_normal((n, M)), rng.standard_normal(n), K)


class TestEstimateMoments:
    def test_single_sample(self):
        mom = estimate_moments([[1.0]], [2.0], 1)
        np.testing.assert_array_equal(mom.R_uK, [[1.0]])
        np.testing.assert_array_equal(mom.R_uKd, [2.0])
        assert mom.R_d == 4.0
        assert mom.sample_count == 1

    def test_zero_desired(self, rng):
        mom = estimate_moments(rng.standard_normal((50, 3)), np.zeros(50), 2)
        assert not mom.R_uKd.any()
        assert mom.R_d == 0

    def test_matches_outer_product_loop(self, rng):
        U = rng.standard_normal((20, 3))
        d = rng.standard_normal(20)
        R = sum(np.outer(kron_power(u, 2), kron_power(u, 2)) for u in U) / 20
        r = sum(di * kron_power(u, 2) for u, di in zip(U, d)) / 20
        mom = estimate_moments(U, d, 2, chunk_size=7)
        np.testing.assert_allclose(mom.R_uK, R, rtol=1e-13)
        np.testing.assert_allclose(mom.R_uKd, r, rtol=1e-13, atol=1e-15)

    def test_white_gaussian_is_identity(self, rng):
        mom = estimate_moments(rng.standard_normal((100_000, 4)), np.zeros(100_000), 1)
        assert np.max(np.abs(mom.R_uK - np.eye(4))) < 5e-2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            estimate_moments(np.zeros((0, 3)), [], 1)

    def test_symmetric_psd_and_singular(self, rng):
        for M, K in [(2, 2), (3, 2), (2, 3), (3, 3)]:
            mom = random_moments(rng, M, K, n=200)
            np.testing.assert_array_equal(mom.R_uK, mom.R_uK.T)
            ev = np.linalg.eigvalsh(mom.R_uK)
            assert ev[0] >= -1e-8 * ev[-1]
            assert ev[0] <= 1e-8 * ev[-1]

    def test_linear_case_not_forced_singular(self, rng):
        mom = random_moments(rng, 3, 1, n=200)
        assert mom.min_eigenvalue_ratio() > 1e-3


class TestMse:
    def test_zero_weights_give_desired_power(self, rng):
        mom = random_moments(rng, 3, 2)
        assert mse(np.zeros((2, 3)), mom) == mom.R_d

    def test_plant_exact_arithmetic(self):
        # dyadic inputs and taps keep every product and sum exact in float64
        x = np.array([1, -1, 2, 0, 1, 1, -2, 1, 0, -1, 1, 2, -1, 0, 1, -1], dtype=float)
        H = np.array([[1.0, 0.5, -0.25], [0.5, -1.0, 0.25]])
        U = delay_line(x, 3)
        d = np.prod(U @ H.T, axis=1)
        mom = estimate_moments(U, d, 2)
        assert abs(mse(H, mom)) <= 1e-18

    def test_plant_generic_data(self, rng):
        H, U, d = planted(rng)
        mom = estimate_moments(U, d, 2)
        # cancellation of O(R_d) terms leaves a few ulps
        assert abs(mse(H, mom)) <= 50 * np.finfo(float).eps * max(mom.R_d, 1.0)

    def test_matches_empirical_average(self, rng):
        for K in (1, 2, 3):
            U = rng.standard_normal((500, 3))
            d = rng.standard_normal(500)
            mom = estimate_moments(U, d, K)
            W = rng.standard_normal((K, 3))
            assert mse(W, mom) == pytest.approx(empirical_mse(W, U, d), rel=1e-9)

    def test_dimension_mismatch(self, rng):
        mom = random_moments(rng, 3, 2)
        with pytest.raises(ValueError):
            mse(np.ones((2, 4)), mom)
        with pytest.raises(ValueError):
            mse(np.ones((3, 3)), mom)

    def test_balanced_rescaling_invariance(self, rng):
        mom = random_moments(rng, 3, 3)
        W = rng.standard_normal((3, 3))
        V = W.copy()
        V[0] *= 3.7
        V[1] /= 3.7
        assert mse(V, mom) == pytest.approx(mse(W, mom), rel=1e-10)

    @pytest.mark.parametrize("K", [2, 3])
    def test_degree_2k_along_lines(self, rng, K):
        for _ in range(5):
            mom = random_moments(rng, 3, K)
            W = rng.standard_normal((K, 3))
            D = rng.standard_normal((K, 3))
            ts = np.linspace(-1, 1, 2 * K + 1)
            coeffs = np.polyfit(ts, [mse(W + t * D, mom) for t in ts], 2 * K)
            t6 = 1.37
            actual = mse(W + t6 * D, mom)
            assert abs(np.polyval(coeffs, t6) - actual) <= 1e-8 * abs(actual)
            # one degree fewer cannot reproduce the curve
            low = np.polyfit(ts[:-1], [mse(W + t * D, mom) for t in ts[:-1]], 2 * K - 1)
            assert abs(np.polyval(low, t6) - actual) > 1e-6 * abs(actual)


class TestGrad:
    def test_finite_differences(self, rng):
        worst = 0.0
        for _ in range(200):
            M = int(rng.integers(1, 5))
            K = int(rng.integers(1, 4))
            mom = random_moments(rng, M, K)
            W = rng.standard_normal((K, M))
            g = grad(W, mom)
            fd = fd_gradient(lambda V: mse(V, mom), W)
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
        assert worst < 1e-5

    def test_two_zero_factors(self, rng):
        mom = random_moments(rng, 3, 3)
        W = rng.standard_normal((3, 3))
        W[0] = 0
        W[2] = 0
        assert not grad(W, mom).any()

    def test_zero_at_plant(self, rng):
        H, U, d = planted(rng)
        mom = estimate_moments(U, d, 2)
        assert np.max(np.abs(grad(H, mom))) <= 1e-10

    def test_zero_at_rescaled_plant(self, rng):
        H, U, d = planted(rng, K=3, M=3)
        mom = estimate_moments(U, d, 3)
        V = H.copy()
        V[0] *= 2.5
        V[2] /= 2.5
        assert np.max(np.abs(grad(V, mom))) <= 1e-8

    def test_linear_case_is_wiener_gradient(self, rng):
        mom = random_moments(rng, 4, 1)
        w = rng.standard_normal(4)
        expected = 2 * (mom.R_uK @ w - mom.R_uKd)
        np.testing.assert_allclose(grad(w[None, :], mom)[0], expected, rtol=1e-13)


class TestNormalResidual:
    def test_planted_plant(self, rng):
        H, U, d = planted(rng)
        mom = estimate_moments(U, d, 2)
        assert normal_residual(H, mom) <= 1e-12
        np.testing.assert_allclose(mom.R_uKd, mom.R_uK @ simple_tensor(H), rtol=1e-12, atol=1e-15)

    def test_zero_weights(self, rng):
        mom = random_moments(rng, 3, 2)
        assert normal_residual(np.zeros((2, 3)), mom) == pytest.approx(np.linalg.norm(mom.R_uKd))

    def test_noisy_residual_shrinks_like_root_n(self):
        sizes = [1_000, 10_000, 100_000]
        means = []
        for n in sizes:
            vals = []
            for seed in range(8):
                H, U, d = planted(np.random.default_rng(seed), M=3, K=2, n=n, noise=0.3)
                vals.append(normal_residual(H, estimate_moments(U, d, 2)))
            means.append(np.mean(vals))
        slope = np.polyfit(np.log10(sizes), np.log10(means), 1)[0]
        assert -0.7 < slope < -0.3


def test_moment_file_round_trip(rng, tmp_path):
    mom = random_moments(rng, 3, 2)
    path = tmp_path / "mom.txt"
    save_moments(mom, path)
    assert path.read_text().splitlines()[0] == "3 2 30"
    back = load_moments(path)
    np.testing.assert_array_equal(back.R_uK, mom.R_uK)
    np.testing.assert_array_equal(back.R_uKd, mom.R_uKd)
    assert back.R_d == mom.R_d
    assert (back.M, back.K, back.sample_count) == (3, 2, 30)


def test_moment_file_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 x\n1\n1 2 3\n")
    with pytest.raises(ValueError):
        load_moments(path)


def test_moment_set_shape_check():
    with pytest.raises(ValueError):
        MomentSet(R_uK=np.eye(3), R_uKd=np.zeros(4), R_d=0.0, M=2, K=2)
