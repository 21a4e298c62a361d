"""Market snapshot ingestion, validation and result-table emission.

A snapshot is a manifest JSON naming four CSV files: the discount curve on
the semiannual tenor grid, the caplet implied-vol grid, annual zero-coupon
inflation swap rates and the annual inflation option price grid (prices in
basis points of notional).  All rates are decimals (0.02 means 2%).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, SchemaError, ValidationError


def _fmt(x: float) -> str:
    """17-significant-digit decimal form: round-trips IEEE doubles exactly."""
    return f"{float(x):.17g}"


def _read_csv(path: Path, columns: list[str]) -> list[list[str]]:
    if not path.exists():
        raise SchemaError(f"missing file {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise SchemaError(f"{path.name}: empty file")
    header = [c.strip() for c in rows[0]]
    if header != columns:
        raise SchemaError(f"{path.name}: expected columns {columns}, found {header}")
    return rows[1:]


def _parse_float(path: Path, row_no: int, value: str, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"{path.name} row {row_no}: {what} is not a number: {value!r}") from None


@dataclass(frozen=True)
class MarketSnapshot:
    """Validated market data for one calibration date."""

    as_of: str
    discount_times: np.ndarray
    discounts: np.ndarray
    caplet_vols: list  # (expiry_yr, strike, vol)
    zciis_years: np.ndarray
    zciis_rates: np.ndarray
    infl_options: list  # (maturity_yr, strike, kind, price_bp)
    source: str = ""

    @property
    def has_inflation(self) -> bool:
        return self.zciis_years.size > 0

    @property
    def nominal_only(self) -> bool:
        return not self.has_inflation

    def caplet_quotes_by_year(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for expiry, strike, vol in self.caplet_vols:
            out.setdefault(int(round(expiry)), []).append((strike, vol))
        return out

    def inflation_quotes_by_year(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for maturity, strike, kind, bp in self.infl_options:
            out.setdefault(int(round(maturity)), []).append((strike, kind, bp))
        return out


def _validate(snap: MarketSnapshot) -> MarketSnapshot:
    times = snap.discount_times
    dfs = snap.discounts
    n = len(times)
    if n < 2 or n % 2:
        raise ValidationError(f"need an even number (>= 2) of discount pillars, found {n}")
    grid = 0.5 * np.arange(1, n + 1)
    for i, (t, g) in enumerate(zip(times, grid), start=1):
        if abs(t - g) > 1e-9:
            raise ValidationError(f"discounts row {i}: maturity {t} is not the tenor date {g}")
    for i, df in enumerate(dfs, start=1):
        if not 0.0 < df <= 1.0:
            raise ValidationError(f"discounts row {i}: df {df} outside (0, 1]")
    bad = np.nonzero(np.diff(dfs) >= 0)[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise ValidationError(
            f"discounts row {i + 1}: df not strictly decreasing at pillar {times[i]} "
            "(negative forward rate)"
        )
    years = n // 2
    by_year: dict[int, list[float]] = {}
    for i, (expiry, strike, vol) in enumerate(snap.caplet_vols, start=1):
        year = int(round(expiry))
        if abs(expiry - year) > 1e-9 or not 1 <= year <= years:
            raise ValidationError(f"caplet_vols row {i}: expiry {expiry} not a whole tenor year")
        if vol <= 0:
            raise ValidationError(f"caplet_vols row {i}: vol must be positive")
        if strike <= 0:
            raise ValidationError(f"caplet_vols row {i}: strike must be positive")
        by_year.setdefault(year, []).append(strike)
    for year, strikes in by_year.items():
        if any(b <= a for a, b in zip(strikes, strikes[1:])):
            raise ValidationError(f"caplet strikes for year {year} must be strictly increasing")
    zy = snap.zciis_years
    if zy.size:
        expected = np.arange(1, years + 1)
        if zy.size != years or np.any(zy != expected):
            raise ValidationError(f"zciis years must be exactly 1..{years}, found {zy.tolist()}")
        for i, rate in enumerate(snap.zciis_rates, start=1):
            if rate <= -1.0:
                raise ValidationError(f"zciis row {i}: rate {rate} at or below -100%")
    by_year = {}
    for i, (maturity, strike, kind, bp) in enumerate(snap.infl_options, start=1):
        year = int(round(maturity))
        if abs(maturity - year) > 1e-9 or not 1 <= year <= years:
            raise ValidationError(f"infl_options row {i}: maturity {maturity} not a whole year")
        if kind not in ("caplet", "floorlet"):
            raise ValidationError(f"infl_options row {i}: kind must be caplet or floorlet")
        if bp < 0:
            raise ValidationError(f"infl_options row {i}: price must be nonnegative")
        if strike <= -1.0:
            raise ValidationError(f"infl_options row {i}: strike at or below -100%")
        by_year.setdefault(year, []).append(strike)
    for year, strikes in by_year.items():
        if any(b <= a for a, b in zip(strikes, strikes[1:])):
            raise ValidationError(f"inflation strikes for year {year} must be strictly increasing")
    if snap.infl_options and not zy.size:
        raise ValidationError("inflation options quoted without a ZCIIS curve")
    return snap


def load_snapshot(path: str | Path) -> MarketSnapshot:
    """Load and validate a snapshot from its manifest (file or directory)."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise SchemaError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path.name}: invalid JSON ({exc})") from None
    for key in ("as_of", "discounts"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path.name}: missing key {key!r}")
    base = manifest_path.parent

    rows = _read_csv(base / manifest["discounts"], ["maturity_yr", "df"])
    times = []
    dfs = []
    for i, row in enumerate(rows, start=1):
        if len(row) != 2:
            raise SchemaError(f"discounts row {i}: expected 2 fields")
        times.append(_parse_float(base / manifest["discounts"], i, row[0], "maturity"))
        dfs.append(_parse_float(base / manifest["discounts"], i, row[1], "df"))

    caplet_vols = []
    if manifest.get("caplet_vols"):
        p = base / manifest["caplet_vols"]
        for i, row in enumerate(_read_csv(p, ["expiry_yr", "strike", "vol"]), start=1):
            if len(row) != 3:
                raise SchemaError(f"{p.name} row {i}: expected 3 fields")
            caplet_vols.append(tuple(_parse_float(p, i, v, c) for v, c in zip(row, ("expiry", "strike", "vol"))))

    zciis_years: list[int] = []
    zciis_rates: list[float] = []
    if manifest.get("zciis"):
        p = base / manifest["zciis"]
        for i, row in enumerate(_read_csv(p, ["years", "rate"]), start=1):
            if len(row) != 2:
                raise SchemaError(f"{p.name} row {i}: expected 2 fields")
            year = _parse_float(p, i, row[0], "years")
            if abs(year - round(year)) > 1e-9:
                raise ValidationError(f"{p.name} row {i}: years must be integers")
            zciis_years.append(int(round(year)))
            zciis_rates.append(_parse_float(p, i, row[1], "rate"))

    infl_options = []
    if manifest.get("infl_options"):
        p = base / manifest["infl_options"]
        for i, row in enumerate(_read_csv(p, ["maturity_yr", "strike", "kind", "price_bp"]), start=1):
            if len(row) != 4:
                raise SchemaError(f"{p.name} row {i}: expected 4 fields")
            infl_options.append(
                (
                    _parse_float(p, i, row[0], "maturity"),
                    _parse_float(p, i, row[1], "strike"),
                    row[2].strip(),
                    _parse_float(p, i, row[3], "price_bp"),
                )
            )

    snap = MarketSnapshot(
        as_of=str(manifest["as_of"]),
        discount_times=np.asarray(times),
        discounts=np.asarray(dfs),
        caplet_vols=caplet_vols,
        zciis_years=np.asarray(zciis_years, dtype=int),
        zciis_rates=np.asarray(zciis_rates, dtype=float),
        infl_options=infl_options,
        source=str(manifest_path),
    )
    return _validate(snap)


def save_snapshot(snap: MarketSnapshot, out_dir: str | Path) -> list[Path]:
    """Write the snapshot as manifest + CSVs; numbers keep full precision."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def write(name: str, header: list[str], rows: list[list]) -> str:
        p = out / name
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
        written.append(p)
        return name

    manifest = {
        "as_of": snap.as_of,
        "discounts": write(
            "discounts.csv",
            ["maturity_yr", "df"],
            [[float(t), float(d)] for t, d in zip(snap.discount_times, snap.discounts)],
        ),
    }
    if snap.caplet_vols:
        manifest["caplet_vols"] = write(
            "caplet_vols.csv",
            ["expiry_yr", "strike", "vol"],
            [[float(a), float(b), float(c)] for a, b, c in snap.caplet_vols],
        )
    if snap.zciis_years.size:
        manifest["zciis"] = write(
            "zciis.csv",
            ["years", "rate"],
            [[int(y), float(r)] for y, r in zip(snap.zciis_years, snap.zciis_rates)],
        )
    if snap.infl_options:
        manifest["infl_options"] = write(
            "infl_options.csv",
            ["maturity_yr", "strike", "kind", "price_bp"],
            [[float(m), float(k), kind, float(bp)] for m, k, kind, bp in snap.infl_options],
        )
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mp)
    return written


def ilb_curve(snap: MarketSnapshot) -> list[tuple[float, float]]:
    """Normalized inflation-linked pillars P_ILB(0, T_k) / P(0, T).

    Annual pillars are exact from the ZCIIS quotes; semiannual ones come
    from log-linear interpolation of the log forward CPI.
    """
    if not snap.has_inflation:
        raise ValidationError("snapshot has no ZCIIS curve")
    n = len(snap.discounts)
    ratios = snap.discounts / snap.discounts[-1]
    log_i = np.zeros(n + 1)  # log forward CPI at T_0..T_N, T_0 pinned at 0
    for year, rate in zip(snap.zciis_years, snap.zciis_rates):
        log_i[2 * year] = year * math.log1p(rate)
    for k in range(1, n, 2):
        log_i[k] = 0.5 * (log_i[k - 1] + log_i[k + 1])
    return [(0.5 * k, float(np.exp(log_i[k]) * ratios[k - 1])) for k in range(1, n + 1)]


def snapshot_digest(snap: MarketSnapshot) -> str:
    """Stable content hash used in emitted table headers."""
    h = hashlib.sha256()
    h.update(snap.as_of.encode())
    for arr in (snap.discount_times, snap.discounts, snap.zciis_rates):
        h.update(np.asarray(arr, dtype=float).tobytes())
    for row in snap.caplet_vols:
        h.update(repr(tuple(row)).encode())
    for row in snap.infl_options:
        h.update(repr(tuple(row)).encode())
    return h.hexdigest()[:16]


def emit_tables(report, out_dir: str | Path, header_meta: dict | None = None) -> list[Path]:
    """Write plot-ready CSV tables for a calibration report.

    Emits the caplet vol surface, the inflation option price grid, the
    forward-inflation-vs-ratio-approximation table and the fit residuals.
    Deterministic file set and column order; numeric fields at 17
    significant digits.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from None
    meta = dict(header_meta or {})
    written: list[Path] = []

    def write(name: str, header: list[str], rows: list[list]) -> None:
        p = out / name
        try:
            with p.open("w", newline="") as fh:
                for key in sorted(meta):
                    fh.write(f"# {key}={meta[key]}\n")
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
        except OSError as exc:
            raise IoError(f"cannot write {p}: {exc}") from None
        written.append(p)

    rows = []
    for fit in report.nominal_years:
        for strike, label, market, model in fit.rows:
            rows.append([fit.year, float(strike), label, float(market), float(model)])
    write("vol_surface.csv", ["year", "strike", "quote_kind", "market", "model"], rows)

    rows = []
    for fit in report.inflation_years:
        for strike, kind, market, model in fit.rows:
            rows.append([fit.year, float(strike), kind, float(market), float(model)])
    write("inflation_grid.csv", ["year", "strike", "kind", "market", "model"], rows)

    rows = []
    if report.config is not None and report.config.has_inflation:
        from .model import forward_cpi, forward_inflation

        cfg = report.config
        state = cfg.initial_state()
        for year in range(1, cfg.tenor.years + 1):
            k = 2 * year
            fi = forward_inflation(cfg, k, 2, state)
            hi = forward_cpi(cfg, k, state)
            lo = forward_cpi(cfg, k - 2, state) if year > 1 else 1.0
            approx = hi / lo - 1.0
            rows.append([year, float(fi), float(approx), float(fi - approx)])
    write(
        "forward_inflation.csv",
        ["year", "forward_inflation", "cpi_ratio_approx", "difference"],
        rows,
    )

    rows = [[int(k), float(target), float(model), float(resid)] for k, target, model, resid in report.curve_residuals]
    write("curve_residuals.csv", ["pillar", "target_ratio", "model_ratio", "rel_error"], rows)

    rows = [[int(m), float(q), float(mod), float(resid)] for m, q, mod, resid in report.zciis_residuals]
    write("zciis_residuals.csv", ["years", "market_rate", "model_rate", "abs_error"], rows)

    return written
