"""Snapshot I/O, validation and table emission."""
import json
import math

import numpy as np
import pytest

from aimm.errors import SchemaError, ValidationError
from aimm.market_data import (
    MarketSnapshot,
    emit_tables,
    ilb_curve,
    load_snapshot,
    save_snapshot,
    snapshot_digest,
)


def make_snapshot(n=8, zciis=True, options=True) -> MarketSnapshot:
    times = 0.5 * np.arange(1, n + 1)
    dfs = np.exp(-0.02 * times)
    years = n // 2
    vols = [(float(y), s, 0.3 + 0.01 * y) for y in range(1, years + 1) for s in (0.01, 0.02, 0.03)]
    zy = np.arange(1, years + 1) if zciis else np.array([], dtype=int)
    zr = 0.02 * np.ones(years) if zciis else np.array([])
    opts = (
        [(float(y), s, "caplet" if s >= 0.015 else "floorlet", 25.0) for y in range(1, years + 1) for s in (0.0, 0.02, 0.04)]
        if options
        else []
    )
    return MarketSnapshot(
        as_of="2011-09-29",
        discount_times=times,
        discounts=dfs,
        caplet_vols=vols,
        zciis_years=zy,
        zciis_rates=zr,
        infl_options=opts,
    )


class TestRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        snap = make_snapshot()
        save_snapshot(snap, tmp_path)
        loaded = load_snapshot(tmp_path)
        np.testing.assert_array_equal(loaded.discount_times, snap.discount_times)
        np.testing.assert_array_equal(loaded.discounts, snap.discounts)
        assert loaded.caplet_vols == [tuple(map(float, r)) for r in snap.caplet_vols]
        np.testing.assert_array_equal(loaded.zciis_rates, snap.zciis_rates)
        assert loaded.infl_options == snap.infl_options
        # second emit-load cycle is also exact
        save_snapshot(loaded, tmp_path / "again")
        again = load_snapshot(tmp_path / "again")
        np.testing.assert_array_equal(again.discounts, snap.discounts)
        assert snapshot_digest(again) == snapshot_digest(snap)

    def test_nominal_only_flag(self, tmp_path):
        snap = make_snapshot(zciis=False, options=False)
        save_snapshot(snap, tmp_path)
        loaded = load_snapshot(tmp_path)
        assert loaded.nominal_only and not loaded.has_inflation

    def test_quotes_grouped_by_year(self):
        snap = make_snapshot()
        by_year = snap.caplet_quotes_by_year()
        assert sorted(by_year) == [1, 2, 3, 4]
        assert all(len(v) == 3 for v in by_year.values())


class TestValidation:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError):
            load_snapshot(tmp_path / "nope")

    def test_nonmonotone_discounts_name_pillar(self, tmp_path):
        snap = make_snapshot()
        dfs = snap.discounts.copy()
        dfs[3] = dfs[2] * 1.01
        bad = MarketSnapshot(
            as_of=snap.as_of,
            discount_times=snap.discount_times,
            discounts=dfs,
            caplet_vols=[],
            zciis_years=np.array([], dtype=int),
            zciis_rates=np.array([]),
            infl_options=[],
        )
        save_snapshot(bad, tmp_path)
        with pytest.raises(ValidationError, match="2.0"):
            load_snapshot(tmp_path)

    def test_off_grid_maturity(self, tmp_path):
        snap = make_snapshot()
        save_snapshot(snap, tmp_path)
        pillars = (tmp_path / "discounts.csv").read_text().replace("1.5", "1.4")
        (tmp_path / "discounts.csv").write_text(pillars)
        with pytest.raises(ValidationError, match="tenor date"):
            load_snapshot(tmp_path)

    def test_bad_header(self, tmp_path):
        snap = make_snapshot()
        save_snapshot(snap, tmp_path)
        content = (tmp_path / "zciis.csv").read_text().replace("years,rate", "year,rate")
        (tmp_path / "zciis.csv").write_text(content)
        with pytest.raises(SchemaError, match="columns"):
            load_snapshot(tmp_path)

    def test_negative_price_rejected(self, tmp_path):
        snap = make_snapshot()
        save_snapshot(snap, tmp_path)
        content = (tmp_path / "infl_options.csv").read_text().replace("25", "-25", 1)
        (tmp_path / "infl_options.csv").write_text(content)
        with pytest.raises(ValidationError, match="nonnegative"):
            load_snapshot(tmp_path)

    def test_options_without_zciis_rejected(self):
        # construction alone does not validate; the loader's validation does
        from aimm.market_data import _validate

        snap = MarketSnapshot(
            as_of="x",
            discount_times=0.5 * np.arange(1, 5),
            discounts=np.exp(-0.02 * 0.5 * np.arange(1, 5)),
            caplet_vols=[],
            zciis_years=np.array([], dtype=int),
            zciis_rates=np.array([]),
            infl_options=[(1.0, 0.02, "caplet", 10.0)],
        )
        with pytest.raises(ValidationError, match="ZCIIS"):
            _validate(snap)
        assert _validate(make_snapshot()) is not None


class TestIlbCurve:
    def test_zero_rates_give_nominal_curve(self):
        snap = make_snapshot()
        zero = MarketSnapshot(
            as_of=snap.as_of,
            discount_times=snap.discount_times,
            discounts=snap.discounts,
            caplet_vols=[],
            zciis_years=snap.zciis_years,
            zciis_rates=np.zeros(len(snap.zciis_years)),
            infl_options=[],
        )
        pillars = ilb_curve(zero)
        ratios = snap.discounts / snap.discounts[-1]
        for (t, value), ratio in zip(pillars, ratios):
            assert value == pytest.approx(ratio, rel=1e-15)

    def test_annual_pillar_arithmetic(self):
        snap = make_snapshot()
        pillars = dict(ilb_curve(snap))
        ratios = snap.discounts / snap.discounts[-1]
        assert pillars[1.0] == pytest.approx(1.02 * ratios[1], rel=1e-14)
        assert pillars[2.0] == pytest.approx(1.02**2 * ratios[3], rel=1e-14)

    def test_interpolated_pillars_between_neighbors_in_log_space(self):
        snap = make_snapshot()
        years = len(snap.zciis_years)
        rates = 0.01 + 0.003 * np.arange(1, years + 1)
        snap = MarketSnapshot(
            as_of=snap.as_of,
            discount_times=snap.discount_times,
            discounts=snap.discounts,
            caplet_vols=[],
            zciis_years=snap.zciis_years,
            zciis_rates=rates,
            infl_options=[],
        )
        pillars = dict(ilb_curve(snap))
        ratios = snap.discounts / snap.discounts[-1]
        log_i = {t: math.log(v / r) for (t, v), r in zip(sorted(pillars.items()), ratios)}
        log_i[0.0] = 0.0
        for k in range(1, 2 * years, 2):
            t = 0.5 * k
            low, high = sorted((log_i[t - 0.5], log_i[t + 0.5]))
            assert low - 1e-15 <= log_i[t] <= high + 1e-15

    def test_requires_zciis(self):
        with pytest.raises(ValidationError):
            ilb_curve(make_snapshot(zciis=False, options=False))


class TestEmitTables:
    def test_deterministic_file_set(self, tmp_path, reference_cfg):
        from aimm.calibrate import CalibrationReport

        report = CalibrationReport(
            config=reference_cfg,
            curve_residuals=[(1, 1.2, 1.2, 0.0)],
            nominal_years=[],
            zciis_residuals=[(1, 0.02, 0.02, 0.0)],
            inflation_years=[],
            two_root_events=[],
            stages_run=["term_structure"],
            settings_echo={},
            warnings=[],
        )
        files = emit_tables(report, tmp_path, header_meta={"digest": "abc"})
        names = sorted(f.name for f in files)
        assert names == [
            "curve_residuals.csv",
            "forward_inflation.csv",
            "inflation_grid.csv",
            "vol_surface.csv",
            "zciis_residuals.csv",
        ]
        text = (tmp_path / "curve_residuals.csv").read_text()
        assert text.startswith("# digest=abc")
        again = emit_tables(report, tmp_path, header_meta={"digest": "abc"})
        assert (tmp_path / "curve_residuals.csv").read_text() == text

    def test_forward_inflation_table_close_to_ratio(self, tmp_path, reference_cfg):
        from aimm.calibrate import CalibrationReport

        report = CalibrationReport(
            config=reference_cfg,
            curve_residuals=[],
            nominal_years=[],
            zciis_residuals=[],
            inflation_years=[],
            two_root_events=[],
            stages_run=[],
            settings_echo={},
            warnings=[],
        )
        emit_tables(report, tmp_path)
        rows = (tmp_path / "forward_inflation.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == reference_cfg.tenor.years
        for row in rows:
            _, fi, approx, diff = row.split(",")
            assert abs(float(diff)) < 0.005  # the convexity gap stays within 50 bp
