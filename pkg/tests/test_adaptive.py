import math

import numpy as np
import pytest

from smlfilter.adaptive import (
    DivergenceError,
    ErrorTrace,
    SmlLmsState,
    initial_factors,
    instantaneous_gradient,
    monomial_basis,
    published_sml_mults_per_iter,
    run_filter,
    sml_init,
    sml_mults_per_iter,
    sml_step,
    sml_step_matches_gradient,
    volterra_coeffs_from_factors,
    volterra_init,
    volterra_mults_per_iter,
    volterra_step,
)
from smlfilter.mse_surface import Plant
from smlfilter.sml_model import delay_line, output

from .oracles import separable_kernel, volterra_sum


class TestInit:
    def test_order_two(self):
        state = sml_init(2, 3)
        np.testing.assert_array_equal(state.W, [[1, 0, 0], [0, 0, 0]])
        assert state.iter == 0

    def test_order_three(self):
        np.testing.assert_array_equal(sml_init(3, 2).W, [[1, 0], [0.5, 0], [0, 0]])

    def test_order_one_starts_at_zero(self):
        np.testing.assert_array_equal(sml_init(1, 4).W, np.zeros((1, 4)))

    def test_text_variant(self):
        np.testing.assert_array_equal(initial_factors(3, 4, "text"), [[1, 0, 0, 1], [0.5, 0, 0, 1], [0, 0, 0, 0]])

    @pytest.mark.parametrize("K, M", [(0, 3), (2, 0), (-1, 2)])
    def test_rejects_nonpositive(self, K, M):
        with pytest.raises(ValueError):
            sml_init(K, M)

    def test_rejects_bad_mu(self):
        with pytest.raises(ValueError):
            sml_init(2, 3, mu=0.0)


class TestSmlStep:
    def test_hand_simulation(self):
        state = sml_init(2, 2, mu=0.1)
        e, y = sml_step(state, [1.0, 1.0], 1.0)
        assert (e, y) == (1.0, 0.0)
        np.testing.assert_array_equal(state.W, [[1.0, 0.0], [0.1, 0.1]])
        assert state.iter == 1

    def test_zero_is_fixed_point(self, rng):
        state = SmlLmsState(W=np.zeros((3, 4)), mu=0.2)
        for _ in range(100):
            d = float(rng.standard_normal())
            e, y = sml_step(state, rng.standard_normal(4), d)
            assert e == d and y == 0
        assert not state.W.any()

    def test_order_one_is_lms(self, rng):
        state = sml_init(1, 5, mu=0.05)
        w = np.zeros(5)
        for _ in range(200):
            u = rng.standard_normal(5)
            d = float(rng.standard_normal())
            e_ref = d - w @ u
            w = w + 0.05 * e_ref * u
            e, _ = sml_step(state, u, d)
            assert e == pytest.approx(e_ref, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(state.W[0], w, rtol=1e-12, atol=1e-14)

    def test_updates_use_old_weights(self, rng):
        W = rng.standard_normal((3, 4))
        u = rng.standard_normal(4)
        state = SmlLmsState(W=W.copy(), mu=0.1)
        e, _ = sml_step(state, u, 0.5)
        y_o = W @ u
        for s in range(3):
            loo = np.prod(np.delete(y_o, s))
            np.testing.assert_allclose(state.W[s], W[s] + 0.1 * e * loo * u, rtol=1e-12)

    def test_matches_instantaneous_gradient(self, rng):
        for _ in range(100):
            K = int(rng.integers(1, 4))
            M = int(rng.integers(1, 5))
            state = SmlLmsState(W=rng.standard_normal((K, M)), mu=float(rng.uniform(0.01, 1)))
            assert sml_step_matches_gradient(state, rng.standard_normal(M), float(rng.standard_normal()))

    @pytest.mark.parametrize("K, M", [(2, 3), (3, 2)])
    def test_gradient_oracle_examples(self, rng, K, M):
        state = SmlLmsState(W=rng.standard_normal((K, M)), mu=0.3)
        W0 = state.W.copy()
        assert sml_step_matches_gradient(state, rng.standard_normal(M), 0.4)
        np.testing.assert_array_equal(state.W, W0)

    def test_gradient_oracle_zero_weights(self, rng):
        state = SmlLmsState(W=np.zeros((2, 3)), mu=0.3)
        assert sml_step_matches_gradient(state, rng.standard_normal(3), 1.0)
        assert not instantaneous_gradient(state.W, rng.standard_normal(3), 1.0).any()

    def test_gradient_oracle_detects_wrong_step(self, rng, monkeypatch):
        import smlfilter.adaptive as mod

        real = mod.evaluate

        def skewed(u, W, counter=None):
            fo = real(u, W, counter)
            return type(fo)(y_o=fo.y_o, y_loo=fo.y_loo * 1.01, y=fo.y)

        monkeypatch.setattr(mod, "evaluate", skewed)
        state = SmlLmsState(W=rng.standard_normal((2, 3)), mu=0.3)
        assert not sml_step_matches_gradient(state, rng.standard_normal(3), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sml_step(sml_init(2, 3), np.ones(4), 0.0)

    def test_divergence_names_iteration(self):
        state = SmlLmsState(W=np.full((2, 2), 1e200), mu=1.0)
        with pytest.raises(DivergenceError) as info:
            sml_step(state, [1e100, 1e100], 0.0)
        assert info.value.iteration == 1
        assert "iteration 1" in str(info.value)


class TestCensus:
    def test_headline_value(self):
        state = sml_init(2, 10)
        sml_step(state, np.ones(10), 1.0)
        assert state.mult_count_last == 44 == published_sml_mults_per_iter(10, 2)

    def test_closed_form_on_grid(self, rng):
        for M in range(2, 11):
            for K in range(2, 5):
                state = SmlLmsState(W=rng.standard_normal((K, M)), mu=0.01)
                sml_step(state, rng.standard_normal(M), 0.1)
                assert state.mult_count_last == sml_mults_per_iter(M, K) == 2 * M * K + K * K - K + 2

    def test_published_count_agrees_at_order_two(self):
        for M in range(1, 30):
            assert sml_mults_per_iter(M, 2) == published_sml_mults_per_iter(M, 2)

    def test_volterra_count(self, rng):
        state = volterra_init(2, 10)
        volterra_step(state, rng.standard_normal(10), 1.0)
        assert state.mult_count_last == volterra_mults_per_iter(10, 2) == 3 * 55 + 1


class TestVolterra:
    def test_basis_size(self):
        for M in range(1, 7):
            for K in range(1, 4):
                assert len(monomial_basis(M, K)) == math.comb(M + K - 1, K)

    def test_zero_coefficients(self, rng):
        state = volterra_init(2, 3)
        e, y = volterra_step(state, rng.standard_normal(3), 0.7)
        assert y == 0 and e == 0.7

    def test_coefficients_from_separable_kernel(self, rng):
        for K in (1, 2, 3):
            W = rng.standard_normal((K, 3))
            state = volterra_init(K, 3, coeffs=volterra_coeffs_from_factors(W))
            u = rng.standard_normal(3)
            expected = volterra_sum(u, separable_kernel(W))
            assert state.predict(u) == pytest.approx(expected, rel=1e-12)
            assert output(u, W) == pytest.approx(expected, rel=1e-12)

    def test_order_one_matches_sml_bitwise(self, rng):
        sml = sml_init(1, 6, mu=0.03)
        vol = volterra_init(1, 6, mu=0.03)
        for _ in range(500):
            u = rng.standard_normal(6)
            d = float(rng.standard_normal())
            e1, y1 = sml_step(sml, u, d)
            e2, y2 = volterra_step(vol, u, d)
            assert abs(e1 - e2) <= 1e-14
            np.testing.assert_allclose(sml.W[0], vol.coeffs, rtol=0, atol=1e-14)

    def test_converges_on_separable_plant(self, rng):
        H = np.array([[0.9, -0.4], [0.3, 0.8]])
        x = rng.standard_normal(5000)
        U = delay_line(x, 2)
        d = np.prod(U @ H.T, axis=1)
        state = volterra_init(2, 2, mu=0.02)
        errs = [volterra_step(state, u, di)[0] for u, di in zip(U, d)]
        assert abs(errs[-1]) < 1e-3
        np.testing.assert_allclose(state.coeffs, volterra_coeffs_from_factors(H), atol=1e-3)

    def test_wrong_coefficient_length(self):
        with pytest.raises(ValueError):
            volterra_init(2, 3, coeffs=np.zeros(5))


class TestRunFilter:
    def test_empty(self):
        trace = run_filter(sml_init(2, 3), [], [])
        assert len(trace) == 0

    def test_zero_input_freezes_weights(self, rng):
        state = sml_init(2, 3, mu=0.5)
        W0 = state.W.copy()
        d = rng.standard_normal(50)
        trace = run_filter(state, np.zeros(50), d)
        np.testing.assert_array_equal(trace.e, d)
        np.testing.assert_array_equal(state.W, W0)
        assert np.isnan(trace.excess_err).all()

    def test_excess_error_is_a_priori(self, rng):
        plant = Plant(factors=rng.standard_normal((2, 3)))
        x = rng.standard_normal(30)
        d = np.prod(delay_line(x, 3) @ plant.factors.T, axis=1)
        state = sml_init(2, 3, mu=0.05)
        U = delay_line(x, 3)
        expected = []
        probe = sml_init(2, 3, mu=0.05)
        for u, di in zip(U, d):
            expected.append(output(u, plant.factors) - output(u, probe.W))
            sml_step(probe, u, di)
        trace = run_filter(state, x, d, plant)
        np.testing.assert_allclose(trace.excess_err, expected, rtol=1e-12, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            run_filter(sml_init(2, 3), np.ones(4), np.ones(5))

    def test_propagates_divergence(self):
        state = sml_init(2, 2, mu=1e3)
        x = np.full(200, 10.0)
        with pytest.raises(DivergenceError):
            run_filter(state, x, 5 * x)

    def test_csv_round_trip(self, rng, tmp_path):
        plant = Plant(factors=rng.standard_normal((2, 4)))
        x = rng.standard_normal(100)
        d = rng.standard_normal(100)
        trace = run_filter(sml_init(2, 4, mu=0.01), x, d, plant)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        assert path.read_text().splitlines()[0] == "iter,e,y,excess_err"
        assert ErrorTrace.from_csv(path).equals(trace)

    def test_csv_round_trip_without_plant(self, rng, tmp_path):
        trace = run_filter(volterra_init(2, 3, mu=0.01), rng.standard_normal(20), rng.standard_normal(20))
        trace.to_csv(tmp_path / "t.csv")
        assert ErrorTrace.from_csv(tmp_path / "t.csv").equals(trace)
