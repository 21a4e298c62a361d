"""Bundled synthetic market snapshot and its reference model.

The package ships no real market data: the fixture below mimics the shape
of a late-2011 euro dataset (rising yield curve, 1-10y ZCIIS around 2%,
caplet vols 1%-6% strikes, inflation options -2%..6%) but every number is
generated from the reference model configuration, so calibration round
trips have an exact target.
"""
from __future__ import annotations

import math

import numpy as np

from .calibrate import (
    CalibrationSettings,
    fit_ubar,
    fit_utilde,
    fit_vbar,
    fit_vtilde,
)
from .fourier import implied_vol_black, inflation_caplets_grid, ir_caplets_grid
from .market_data import MarketSnapshot, ilb_curve, save_snapshot
from .model import ModelConfig, TenorStructure, forward_inflation, forward_rate, martingale, zciis_rate
from .processes import CIRJump, OUJump, ProductProcess

YEARS = 10
CAPLET_STRIKES = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
INFLATION_STRIKES = (-0.02, -0.01, 0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
FLOORLET_BELOW = 0.015  # floorlets quoted for strikes up to 1%, caplets from 2%


def discount_curve(n: int = 2 * YEARS, delta: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Rising zero curve from ~1.3% to ~2.6%, semiannual pillars."""
    times = delta * np.arange(1, n + 1)
    zeros = 0.013 + 0.016 * (1.0 - np.exp(-times / 4.0))
    return times, np.exp(-zeros * times)


def zciis_curve(years: int = YEARS) -> np.ndarray:
    """Annual ZCIIS rates easing from ~1.6% to ~2.1%."""
    m = np.arange(1, years + 1)
    return 0.016 + 0.006 * (1.0 - np.exp(-m / 5.0))


def nominal_processes(years: int = YEARS) -> list[CIRJump]:
    """Reference per-year nominal drivers: slow mean reversion, mild skew."""
    out = []
    for i in range(years):
        w = i / max(years - 1, 1)
        out.append(
            CIRJump(
                lam=0.10 + 0.03 * w,
                theta=0.30 + 0.10 * w,
                eta=0.28 + 0.06 * math.sin(1.0 + 2.0 * w),
                x0=0.55 - 0.15 * w,
                alpha=22.0 + 6.0 * w,
                beta=0.45 + 0.25 * math.cos(2.5 * w),
            )
        )
    return out


def inflation_processes(years: int = YEARS) -> list[OUJump]:
    """Reference per-year inflation drivers: two-sided jumps, OU diffusion.

    Only the calibrator's free parameters vary across years; the drift level
    and jump-size scales stay at the template values.
    """
    out = []
    for i in range(years):
        w = i / max(years - 1, 1)
        out.append(
            OUJump(
                lam=0.10 + 0.03 * w,
                theta=0.45,
                sigma=0.030 + 0.012 * w,
                x0=0.04 - 0.06 * w,
                alpha_plus=40.0,
                beta_plus=0.30 + 0.10 * math.sin(2.0 * w),
                beta_minus=0.24 + 0.08 * math.cos(1.5 * w),
                alpha_minus=36.0,
            )
        )
    return out


def reference_config(settings: CalibrationSettings | None = None) -> ModelConfig:
    """The model the bundled snapshot is generated from.

    Term-structure loadings are produced by the same fitting machinery the
    calibrator uses, so recalibrating the snapshot has an exactly attainable
    optimum.
    """
    settings = settings or CalibrationSettings()
    tenor = TenorStructure(n=2 * YEARS)
    times, dfs = discount_curve(tenor.n, tenor.delta)
    ratios = dfs / dfs[-1]
    common = settings.common
    nominal = nominal_processes(YEARS)
    inflation = inflation_processes(YEARS)

    u_tilde = fit_utilde(common, ratios, tenor.horizon)
    u_bar = fit_ubar(nominal, common, u_tilde, ratios, tenor.horizon)
    v_tilde = fit_vtilde(u_tilde, settings.tilt_c)

    zciis = zciis_curve(YEARS)
    snap_stub = MarketSnapshot(
        as_of="2011-09-29",
        discount_times=times,
        discounts=dfs,
        caplet_vols=[],
        zciis_years=np.arange(1, YEARS + 1),
        zciis_rates=zciis,
        infl_options=[],
    )
    ilb_ratios = np.array([r for _, r in ilb_curve(snap_stub)])
    v_bar, _ = fit_vbar(
        inflation,
        common,
        nominal,
        v_tilde,
        u_bar,
        ilb_ratios,
        tenor.horizon,
        settings.two_root_policy,
    )

    process = ProductProcess(tuple([common] + nominal + inflation), horizon=tenor.horizon)
    return ModelConfig(
        tenor=tenor,
        process=process,
        u_tilde=u_tilde,
        u_bar=u_bar,
        v_tilde=v_tilde,
        v_bar=v_bar,
        numeraire_df=float(dfs[-1]),
        tilt_c=settings.tilt_c,
    )


def synthetic_snapshot(cfg: ModelConfig | None = None) -> MarketSnapshot:
    """Quote grid priced on the reference model (vols for caplets, bp for inflation)."""
    cfg = cfg or reference_config()
    tenor = cfg.tenor
    state = cfg.initial_state()
    times = tenor.dates
    dfs = np.array(
        [cfg.numeraire_df * float(martingale(cfg, cfg.u_row(k), state)) for k in range(1, tenor.n + 1)]
    )

    caplet_rows = []
    for year in range(1, tenor.years + 1):
        k = 2 * year
        strikes = np.array(CAPLET_STRIKES)
        prices, _ = ir_caplets_grid(cfg, k, strikes)
        fwd = forward_rate(cfg, k, state)
        df = dfs[k - 1]
        expiry = tenor.date(k - 1)
        for strike, price in zip(strikes, prices):
            vol = implied_vol_black(fwd, float(strike), expiry, float(price) / (df * tenor.delta))
            caplet_rows.append((float(year), float(strike), float(vol)))

    zciis = np.array([zciis_rate(cfg, m) for m in range(1, tenor.years + 1)])

    infl_rows = []
    for year in range(1, tenor.years + 1):
        k = 2 * year
        strikes = np.array(INFLATION_STRIKES)
        caps, _ = inflation_caplets_grid(cfg, k, 2, strikes)
        fwd = forward_inflation(cfg, k, 2, state)
        df = dfs[k - 1]
        span = 2 * tenor.delta
        for strike, cap in zip(strikes, caps):
            if strike < FLOORLET_BELOW:
                price = float(cap) - df * span * (fwd - float(strike))
                kind = "floorlet"
            else:
                price = float(cap)
                kind = "caplet"
            infl_rows.append((float(year), float(strike), kind, max(price, 0.0) * 1e4))

    return MarketSnapshot(
        as_of="2011-09-29",
        discount_times=times,
        discounts=dfs,
        caplet_vols=caplet_rows,
        zciis_years=np.arange(1, tenor.years + 1),
        zciis_rates=zciis,
        infl_options=infl_rows,
    )


def write_bundled_snapshot(out_dir: str) -> None:
    """Regenerate the packaged snapshot files."""
    save_snapshot(synthetic_snapshot(), out_dir)
