"""Command-line front end: exit codes, outputs, determinism."""
import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aimm.cli import main
from aimm.market_data import save_snapshot
from test_calibrate import tiny_snapshot


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    snap, truth = tiny_snapshot()
    save_snapshot(snap, root / "snapshot")
    settings = {"max_iter": 250, "presearch": 8}
    (root / "settings.json").write_text(json.dumps(settings))
    code = main(
        [
            "calibrate",
            "--snapshot",
            str(root / "snapshot"),
            "--settings",
            str(root / "settings.json"),
            "--out",
            str(root / "fit"),
        ]
    )
    assert code == 0
    return root


class TestCalibrateCommand:
    def test_outputs_written(self, workdir):
        out = workdir / "fit"
        for name in ("model.json", "report.json", "vol_surface.csv", "curve_residuals.csv"):
            assert (out / name).exists()
        report = json.loads((out / "report.json").read_text())
        assert max(r[3] for r in report["curve_residuals"]) < 1e-10
        for fit in report["nominal_years"] + report["inflation_years"]:
            assert fit["objective"] < 1e-8

    def test_nominal_only_snapshot(self, tmp_path):
        snap, _ = tiny_snapshot(with_inflation=False)
        save_snapshot(snap, tmp_path / "snap")
        code = main(
            [
                "calibrate",
                "--snapshot",
                str(tmp_path / "snap"),
                "--settings",
                str(_write_fast_settings(tmp_path)),
                "--out",
                str(tmp_path / "fit"),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "fit" / "report.json").read_text())
        assert "inflation_options" not in report["stages_run"]

    def test_nonmonotone_curve_exits_3(self, tmp_path):
        snap, _ = tiny_snapshot(with_inflation=False)
        save_snapshot(snap, tmp_path / "snap")
        text = (tmp_path / "snap" / "discounts.csv").read_text().splitlines()
        parts = text[2].split(",")
        text[2] = f"{parts[0]},1.5"  # df above 1 and above the prior pillar
        (tmp_path / "snap" / "discounts.csv").write_text("\n".join(text) + "\n")
        code = main(
            ["calibrate", "--snapshot", str(tmp_path / "snap"), "--out", str(tmp_path / "fit")]
        )
        assert code == 3

    def test_missing_snapshot_exits_1(self, tmp_path):
        code = main(
            ["calibrate", "--snapshot", str(tmp_path / "missing"), "--out", str(tmp_path / "fit")]
        )
        assert code == 1


def _write_fast_settings(tmp_path: Path) -> Path:
    p = tmp_path / "fast_settings.json"
    p.write_text(json.dumps({"max_iter": 150, "presearch": 4, "n_restarts": 1}))
    return p


class TestPriceCommand:
    def test_price_rows(self, workdir, tmp_path):
        instruments = tmp_path / "instruments.csv"
        instruments.write_text(
            "kind,k,j,strike\n"
            "CPI_CALL,4,0,1.03\n"
            "INFL_CAPLET,4,2,0.02\n"
            "IR_CAPLET,4,0,0.02\n"
            "IR_FLOORLET,4,0,0.02\n"
        )
        code = main(
            [
                "price",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--instruments",
                str(instruments),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        with (tmp_path / "out" / "prices.csv").open() as fh:
            rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
        assert len(rows) == 4
        for row in rows:
            assert row["error"] == ""
            assert float(row["price"]) >= 0.0

    def test_bad_row_flagged_and_exit_3(self, workdir, tmp_path):
        instruments = tmp_path / "instruments.csv"
        instruments.write_text("kind,k,j,strike\nINFL_CAPLET,4,2,-1.5\n")
        code = main(
            [
                "price",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--instruments",
                str(instruments),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 3
        with (tmp_path / "out" / "prices.csv").open() as fh:
            rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
        assert rows[0]["error"] != ""

    def test_empty_file_header_only(self, workdir, tmp_path):
        instruments = tmp_path / "instruments.csv"
        instruments.write_text("kind,k,j,strike\n")
        code = main(
            [
                "price",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--instruments",
                str(instruments),
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        lines = [
            r
            for r in (tmp_path / "out" / "prices.csv").read_text().splitlines()
            if not r.startswith("#")
        ]
        assert len(lines) == 1


class TestSurfaceCommand:
    def test_surfaces_written(self, workdir, tmp_path):
        code = main(
            [
                "surface",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--snapshot",
                str(workdir / "snapshot"),
                "--out",
                str(tmp_path / "surf"),
            ]
        )
        assert code == 0
        for name in ("caplet_surface.csv", "inflation_surface.csv", "forward_inflation.csv"):
            assert (tmp_path / "surf" / name).exists()
        with (tmp_path / "surf" / "caplet_surface.csv").open() as fh:
            rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
        # self-consistent fit: model vols reproduce market vols tightly
        for row in rows:
            assert abs(float(row["market_vol"]) - float(row["model_vol"])) < 1e-3


class TestValidateCommand:
    def test_validate_passes_on_calibrated_model(self, workdir, tmp_path):
        code = main(
            [
                "validate",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--out",
                str(tmp_path / "val"),
                "--seed",
                "7",
                "--paths",
                "60000",
            ]
        )
        assert code == 0
        text = (tmp_path / "val" / "validation.csv").read_text()
        assert "FAIL" not in text

    def test_tiny_paths_inconclusive(self, workdir, tmp_path):
        code = main(
            [
                "validate",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--out",
                str(tmp_path / "val2"),
                "--seed",
                "7",
                "--paths",
                "500",
            ]
        )
        assert code == 0
        assert "INCONCLUSIVE" in (tmp_path / "val2" / "validation.csv").read_text()

    def test_seed_required(self, workdir, tmp_path):
        code = main(
            [
                "validate",
                "--model",
                str(workdir / "fit" / "model.json"),
                "--out",
                str(tmp_path / "val3"),
            ]
        )
        assert code == 1

    def test_corrupted_ordering_fails_validation(self, workdir, tmp_path):
        model = json.loads((workdir / "fit" / "model.json").read_text())
        model["u_tilde"] = sorted(model["u_tilde"])  # increasing: negative forwards
        bad = tmp_path / "bad_model.json"
        bad.write_text(json.dumps(model))
        code = main(
            ["validate", "--model", str(bad), "--out", str(tmp_path / "val4"), "--seed", "7"]
        )
        assert code in (1, 3)
