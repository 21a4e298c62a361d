"""Fourier pricer: oracles, parity, no-arbitrage shape, implied vols."""
import math

import numpy as np
import pytest

from aimm.errors import ContourError, NoSolution
from aimm.fourier import (
    ContourSpec,
    OptionQuote,
    black_price,
    cpi_call,
    cpi_calls_grid,
    cpi_put,
    fourier_call,
    fourier_calls_detailed,
    implied_vol_black,
    implied_vol_shifted_black,
    inflation_caplet,
    inflation_caplets_grid,
    inflation_floorlet,
    ir_caplet,
    ir_caplets_grid,
    ir_floorlet,
    pick_damping,
)
from aimm.model import ModelConfig, forward_cpi, forward_inflation, forward_rate, martingale


def gaussian_mgf(forward, vol, expiry):
    def mgf(z):
        return np.exp(z * math.log(forward) + 0.5 * vol**2 * expiry * z * (z - 1.0))

    return mgf


class TestFourierCall:
    def test_black_scholes_oracle(self):
        mgf = gaussian_mgf(100.0, 0.2, 1.0)
        for strike in (60.0, 90.0, 100.0, 110.0, 160.0):
            ref = black_price(100.0, strike, 1.0, 0.2)
            assert fourier_call(mgf, strike, 2.0) == pytest.approx(ref, abs=1e-9)

    def test_atm_value_matches_quoted_figure(self):
        assert black_price(100.0, 100.0, 1.0, 0.2) == pytest.approx(7.9656, abs=5e-5)

    def test_point_mass_intrinsic(self):
        # degenerate transform of a deterministic payoff; slow oscillatory tail
        def mgf(z):
            return np.exp(z * math.log(100.0))

        loose = ContourSpec(rel_tol=1e-9, tail_tol=1e-8, tail_abs=1e-7)
        assert fourier_call(mgf, 80.0, 2.0, loose) == pytest.approx(20.0, abs=1e-4)

    def test_contour_invariance(self):
        mgf = gaussian_mgf(100.0, 0.2, 1.0)
        assert fourier_call(mgf, 110.0, 1.5) == pytest.approx(
            fourier_call(mgf, 110.0, 3.5), abs=1e-8
        )

    def test_rejects_bad_inputs(self):
        mgf = gaussian_mgf(100.0, 0.2, 1.0)
        with pytest.raises(ContourError):
            fourier_call(mgf, 100.0, 0.9)
        with pytest.raises(ValueError):
            fourier_call(mgf, -1.0, 2.0)

    def test_grid_matches_single_strike(self):
        mgf = gaussian_mgf(100.0, 0.2, 1.0)
        strikes = np.array([80.0, 100.0, 125.0])
        grid, _ = fourier_calls_detailed(mgf, strikes, 2.0)
        for strike, value in zip(strikes, grid):
            assert value == pytest.approx(fourier_call(mgf, float(strike), 2.0), abs=1e-9)


class TestCpiOptions:
    def test_zero_strike_limit(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_cpi(toy_config, k, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        # deep in the money the transform kernel K^{-R} is huge: damp gently
        contour = ContourSpec(damping=1.05, rel_tol=1e-8, tail_tol=1e-8, tail_abs=1e-8)
        assert cpi_call(toy_config, k, 1e-8, contour=contour) == pytest.approx(df * fwd, abs=1e-6)

    def test_put_call_parity(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_cpi(toy_config, k, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        for strike in (0.9 * fwd, fwd, 1.2 * fwd):
            call = cpi_call(toy_config, k, strike)
            put = cpi_put(toy_config, k, strike)
            assert call - put == pytest.approx(df * (fwd - strike), abs=1e-9)

    def test_above_intrinsic_and_nonnegative(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_cpi(toy_config, k, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        for strike in (0.8 * fwd, 1.1 * fwd):
            value = cpi_call(toy_config, k, strike)
            assert value >= max(df * (fwd - strike), 0.0) - 1e-12

    def test_monotone_and_convex_in_strike(self, toy_config):
        k = toy_config.tenor.n
        fwd = forward_cpi(toy_config, k, toy_config.initial_state())
        strikes = fwd * np.linspace(0.8, 1.3, 11)
        prices, _ = cpi_calls_grid(toy_config, k, strikes)
        assert np.all(np.diff(prices) < 1e-12)
        assert np.min(prices[:-2] - 2 * prices[1:-1] + prices[2:]) > -1e-9


class TestInflationOptions:
    def test_deep_otm_limit(self, toy_config):
        k = toy_config.tenor.n
        tight = ContourSpec(rel_tol=1e-12, tail_tol=1e-12, tail_abs=1e-12)
        assert inflation_caplet(toy_config, k, 2, 3.0, contour=tight) == pytest.approx(0.0, abs=1e-10)

    def test_caplet_floorlet_parity(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_inflation(toy_config, k, 2, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        span = 2 * toy_config.tenor.delta
        for strike in (0.0, 0.02, 0.05):
            cap = inflation_caplet(toy_config, k, 2, strike)
            flr = inflation_floorlet(toy_config, k, 2, strike)
            assert cap - flr == pytest.approx(df * span * (fwd - strike), abs=1e-9)

    def test_monotone_convex_strike_grid(self, toy_config):
        k = toy_config.tenor.n
        strikes = np.linspace(-0.02, 0.06, 9)
        prices, _ = inflation_caplets_grid(toy_config, k, 2, strikes)
        assert np.all(np.diff(prices) < 1e-12)
        assert np.min(prices[:-2] - 2 * prices[1:-1] + prices[2:]) > -1e-9

    def test_first_period_reaches_to_time_zero(self, toy_config):
        # k = j = 2: the observation starts at T_0 where the index is pinned
        value = inflation_caplet(toy_config, 2, 2, 0.02)
        assert value >= 0.0

    def test_contour_invariance_and_node_doubling(self, toy_config):
        k = toy_config.tenor.n
        fwd = forward_inflation(toy_config, k, 2, toy_config.initial_state())
        base = inflation_caplet(toy_config, k, 2, fwd)
        alt = inflation_caplet(toy_config, k, 2, fwd, contour=ContourSpec(damping=2.0))
        tight = inflation_caplet(
            toy_config, k, 2, fwd, contour=ContourSpec(rel_tol=1e-12, tail_tol=1e-12, tail_abs=1e-12)
        )
        assert abs(base - alt) < 1e-8
        assert abs(base - tight) < 1e-9


class TestIrCaplets:
    def test_zero_vol_degenerate(self):
        import conftest

        n, years = 8, 4
        from aimm.model import TenorStructure

        u_tilde = np.array([0.03, 0.03, 0.022, 0.018, 0.014, 0.010, 0.006, 0.0])
        u_bar = np.array([0.04, 0.04, 0.03, 0.026, 0.022, 0.018, 0.014, 0.01])
        cfg = ModelConfig(
            tenor=TenorStructure(n=n),
            process=conftest.small_process(years),
            u_tilde=u_tilde,
            u_bar=u_bar,
            v_tilde=u_tilde.copy(),
            v_bar=np.zeros(n),
            numeraire_df=0.8,
        )
        # u_1 = u_2: the period forward is deterministic zero
        assert ir_caplet(cfg, 2, 0.01) == 0.0

    def test_caplet_floorlet_parity(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_rate(toy_config, k, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        delta = toy_config.tenor.delta
        for strike in (0.01, 0.03):
            cap = ir_caplet(toy_config, k, strike)
            flr = ir_floorlet(toy_config, k, strike)
            assert cap - flr == pytest.approx(df * delta * (fwd - strike), abs=1e-9)

    def test_monotone_convex(self, toy_config):
        k = toy_config.tenor.n
        strikes = np.linspace(0.005, 0.06, 10)
        prices, _ = ir_caplets_grid(toy_config, k, strikes)
        assert np.all(np.diff(prices) < 1e-12)
        assert np.min(prices[:-2] - 2 * prices[1:-1] + prices[2:]) > -1e-9

    def test_needs_prior_tenor_date(self, toy_config):
        with pytest.raises(ValueError):
            ir_caplet(toy_config, 1, 0.02)


class TestDampingSelection:
    def test_midpoint_of_interval(self):
        def mgf(z):
            z = np.asarray(z)
            out = np.where(np.real(z) < 5.0, np.exp(z * 0.01), np.inf + 0j)
            return out

        damping = pick_damping(mgf)
        assert 2.5 < damping < 3.5  # midpoint of (1, 5)

    def test_no_admissible_damping(self):
        def mgf(z):
            return np.full(np.asarray(z).shape, np.inf + 0j)

        with pytest.raises(ContourError):
            pick_damping(mgf)


class TestImpliedVols:
    def test_round_trip(self):
        for vol in (0.05, 0.2, 0.8):
            price = black_price(100.0, 110.0, 1.0, vol) * 0.97
            assert implied_vol_black(100.0, 110.0, 1.0, price, 0.97) == pytest.approx(vol, abs=1e-9)

    def test_put_round_trip(self):
        price = black_price(100.0, 90.0, 2.0, 0.3, kind="put")
        assert implied_vol_black(100.0, 90.0, 2.0, price, kind="put") == pytest.approx(0.3, abs=1e-9)

    def test_intrinsic_gives_zero(self):
        assert implied_vol_black(100.0, 80.0, 1.0, 20.0) == 0.0

    def test_out_of_band_raises(self):
        with pytest.raises(NoSolution):
            implied_vol_black(100.0, 80.0, 1.0, 101.0)
        with pytest.raises(NoSolution):
            implied_vol_black(100.0, 80.0, 1.0, 19.0)

    def test_shifted_black_admits_negative_strikes(self):
        fwd, strike = 0.02, -0.01
        vol = 0.03
        price = black_price(1.0 + fwd, 1.0 + strike, 5.0, vol)
        out = implied_vol_shifted_black(fwd, strike, 5.0, price)
        assert out == pytest.approx(vol, abs=1e-9)

    def test_model_caplet_vols_finite_across_grid(self, toy_config):
        k = toy_config.tenor.n
        state = toy_config.initial_state()
        fwd = forward_inflation(toy_config, k, 2, state)
        df = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(k), state))
        strikes = np.linspace(-0.02, 0.06, 9)
        prices, _ = inflation_caplets_grid(toy_config, k, 2, strikes)
        for strike, price in zip(strikes, prices):
            vol = implied_vol_shifted_black(fwd, float(strike), toy_config.tenor.date(k), float(price) / df)
            assert 0.0 < vol < 2.0


class TestOptionQuote:
    def test_validation(self):
        OptionQuote("CPI_CALL", 4, 1.05, 0.01)
        with pytest.raises(ValueError):
            OptionQuote("CPI_CALL", 4, -1.0, 0.01)
        with pytest.raises(ValueError):
            OptionQuote("WHATEVER", 4, 1.0, 0.01)
        with pytest.raises(ValueError):
            OptionQuote("IR_CAPLET", 4, 0.02, -0.5)
