"""Two-stage calibration to nominal and inflation market data.

Stage one (nominal): the common-factor loadings are chosen so the common
process explains about half of each normalized bond price, the remaining
loadings are solved by backwards iteration through the discount curve, and
each year's driving process is fitted to that year's caplet quotes, going
backwards from the terminal year so the iteration never touches quantities
already fitted.

Stage two (inflation): the common-factor tilts are an affine schedule on the
nominal ones, the inflation loadings are root-found on the inflation-linked
curve implied by the zero-coupon swap quotes, and each year's inflation
process is fitted forwards to that year's option quotes.

Exact-fit targets (curves) are solved to 1e-12 in log space; option fits
minimize mean squared errors with a derivative-free simplex search started
from deterministic seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.stats import qmc

from .errors import ContourError, DomainViolation, OptimizerFailure, QuadratureError, RootBracketError
from .fourier import (
    ContourSpec,
    implied_vol_black,
    implied_vol_shifted_black,
    inflation_caplets_grid,
    ir_caplets_grid,
)
from .model import ModelConfig, TenorStructure, forward_inflation, forward_rate, martingale
from .processes import CIR, CIRJump, OUJump, ProductProcess, DOMAIN_MARGIN

PENALTY = 1.0e6


def default_common_process() -> CIR:
    """Common factor, fixed rather than calibrated."""
    return CIR(lam=0.026, theta=0.65, eta=0.5, x0=3.45)


def default_nominal_template() -> CIRJump:
    # slow mean reversion keeps the year factor alive at the terminal horizon
    return CIRJump(lam=0.12, theta=0.30, eta=0.30, x0=0.5, alpha=25.0, beta=0.45)


def default_inflation_template() -> OUJump:
    # positive drift level theta lets moderate loadings carry the ILB curve
    return OUJump(
        lam=0.11,
        theta=0.45,
        sigma=0.035,
        x0=0.0,
        alpha_plus=40.0,
        beta_plus=0.30,
        alpha_minus=36.0,
        beta_minus=0.25,
    )


def default_nominal_bounds() -> dict[str, tuple[float, float]]:
    return {
        "lam": (0.02, 3.0),
        "theta": (1e-3, 3.0),
        "eta": (0.01, 1.5),
        "x0": (1e-3, 4.0),
        "alpha": (3.0, 200.0),
        "beta": (0.0, 4.0),
    }


def default_inflation_bounds() -> dict[str, tuple[float, float]]:
    return {
        "lam": (0.02, 3.0),
        "theta": (-0.5, 0.5),
        "sigma": (1e-4, 0.5),
        "x0": (-0.5, 0.5),
        "alpha_plus": (3.0, 200.0),
        "beta_plus": (0.0, 4.0),
        "alpha_minus": (3.0, 200.0),
        "beta_minus": (0.0, 4.0),
    }


@dataclass
class CalibrationSettings:
    """Optimizer, root-finder and parameterization controls."""

    root_tol: float = 1e-12
    tilt_c: float = 0.08
    use_half_variance_rule: bool = True
    nominal_objective: str = "IMPLIED_VOL_MSE"  # or PRICE_MSE
    inflation_objective: str = "PRICE_MSE"  # or IMPLIED_VOL_MSE
    two_root_policy: str = "SMALLEST_ABS"  # NEGATIVE | POSITIVE | SMALLEST_ABS
    max_iter: int = 500
    n_restarts: int = 3
    presearch: int = 16
    objective_target: float = 1e-9  # stop a year's search once reached
    restart_threshold: float = 1e-6  # skip remaining restarts below this fit quality
    nominal_free: tuple[str, ...] = ("lam", "theta", "eta", "x0", "alpha", "beta")
    inflation_free: tuple[str, ...] = ("lam", "sigma", "x0", "beta_plus", "beta_minus")
    common: CIR = field(default_factory=default_common_process)
    nominal_template: CIRJump = field(default_factory=default_nominal_template)
    inflation_template: OUJump = field(default_factory=default_inflation_template)
    nominal_bounds: dict = field(default_factory=default_nominal_bounds)
    inflation_bounds: dict = field(default_factory=default_inflation_bounds)
    # objective evaluations tolerate a looser quadrature than reported prices
    contour: ContourSpec = field(
        default_factory=lambda: ContourSpec(rel_tol=1e-9, tail_tol=1e-9, tail_abs=3e-9)
    )
    seed: int = 0

    def __post_init__(self):
        if self.two_root_policy not in ("NEGATIVE", "POSITIVE", "SMALLEST_ABS"):
            raise ValueError(f"unknown two-root policy {self.two_root_policy!r}")
        for name in ("nominal_objective", "inflation_objective"):
            if getattr(self, name) not in ("IMPLIED_VOL_MSE", "PRICE_MSE"):
                raise ValueError(f"unknown objective kind for {name}")


@dataclass
class YearFit:
    year: int
    objective: float
    evaluations: int
    params: dict
    rows: list  # per-quote (strike, kind, market, model)
    warning: str = ""


@dataclass
class CalibrationReport:
    """Everything needed to audit and reproduce a calibration run."""

    config: ModelConfig | None
    curve_residuals: list
    nominal_years: list
    zciis_residuals: list
    inflation_years: list
    two_root_events: list
    stages_run: list
    settings_echo: dict
    warnings: list

    def to_dict(self) -> dict:
        def year_rows(fits):
            return [
                {
                    "year": f.year,
                    "objective": f.objective,
                    "evaluations": f.evaluations,
                    "params": f.params,
                    "rows": [list(r) for r in f.rows],
                    "warning": f.warning,
                }
                for f in fits
            ]

        return {
            "config": None if self.config is None else self.config.to_dict(),
            "curve_residuals": [list(r) for r in self.curve_residuals],
            "nominal_years": year_rows(self.nominal_years),
            "zciis_residuals": [list(r) for r in self.zciis_residuals],
            "inflation_years": year_rows(self.inflation_years),
            "two_root_events": [list(e) for e in self.two_root_events],
            "stages_run": list(self.stages_run),
            "settings_echo": self.settings_echo,
            "warnings": list(self.warnings),
        }


# -- term-structure root solving ----------------------------------------------


def _log_mgf(comp, horizon: float) -> Callable[[float], float]:
    """w -> log E[exp(w X_T)] for one component, safe real evaluation."""

    def g(w: float) -> float:
        return float(np.real(comp.phi(horizon, w) + comp.psi(horizon, w) * comp.x0))

    return g


def _upper_edge(comp, horizon: float) -> float:
    _, hi = comp.bounds(horizon)
    return hi * DOMAIN_MARGIN if np.isfinite(hi) else np.inf


def _lower_edge(comp, horizon: float) -> float:
    lo, _ = comp.bounds(horizon)
    return lo * DOMAIN_MARGIN if np.isfinite(lo) else -np.inf


def _solve_increasing(g, target: float, hi_edge: float, tol: float, what: str) -> float:
    """Unique nonnegative root of the increasing map g(w) = target."""
    if target < -1e-10:
        raise RootBracketError(f"{what}: target {target:.3e} below the attainable range")
    if target <= 1e-14:
        return 0.0
    hi = min(0.25, hi_edge * 0.5) if np.isfinite(hi_edge) else 0.25
    while g(hi) < target:
        nxt = hi * 2.0 if not np.isfinite(hi_edge) else 0.5 * (hi + hi_edge)
        if (np.isfinite(hi_edge) and hi_edge - nxt < 1e-13) or nxt > 1e8:
            raise RootBracketError(f"{what}: target {target:.3e} not attainable inside the domain")
        hi = nxt
    return float(brentq(lambda w: g(w) - target, 0.0, hi, xtol=tol, rtol=8.9e-16, maxiter=200))


def fit_utilde(common, ratios: np.ndarray, horizon: float, tol: float = 1e-12) -> np.ndarray:
    """Common-factor loadings from E[exp(2 u X_T^0)] = P(0,T_k)/P(0,T).

    The doubled argument makes the common factor explain about half of each
    normalized bond price in log terms.
    """
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 1.0 - 1e-12) or np.any(np.diff(ratios) > 1e-12):
        raise RootBracketError("discount ratios must be decreasing and at least 1")
    g = _log_mgf(common, horizon)
    hi_edge = _upper_edge(common, horizon)
    out = np.empty(len(ratios))
    for k, ratio in enumerate(ratios):
        root2 = _solve_increasing(g, math.log(ratio), hi_edge, tol, f"u_tilde_{k + 1}")
        out[k] = 0.5 * root2
    return out


def fit_ubar(
    nominal: Sequence,
    common,
    u_tilde: np.ndarray,
    ratios: np.ndarray,
    horizon: float,
    tol: float = 1e-12,
    pair_only: int | None = None,
    current: np.ndarray | None = None,
) -> np.ndarray:
    """Per-year loadings by backwards iteration through the discount curve.

    nominal: the M year processes.  With pair_only = j, only the two rows
    loading process j are re-solved against the existing remainder.
    """
    n = len(ratios)
    years = len(nominal)
    if n != 2 * years or len(u_tilde) != n:
        raise ValueError("inconsistent generator lengths")
    g0 = _log_mgf(common, horizon)
    gs = [_log_mgf(c, horizon) for c in nominal]
    edges = [_upper_edge(c, horizon) for c in nominal]
    out = np.array(current, dtype=float) if current is not None else np.zeros(n)
    ks = (
        range(n, 0, -1)
        if pair_only is None
        else [k for k in (2 * pair_only, 2 * pair_only - 1) if 1 <= k <= n]
    )
    for k in ks:
        j = (k + 1) // 2
        rest = g0(u_tilde[k - 1])
        for l in range(j + 1, years + 1):
            rest += gs[l - 1](out[2 * l - 2])
        target = math.log(ratios[k - 1]) - rest
        try:
            out[k - 1] = _solve_increasing(gs[j - 1], target, edges[j - 1], tol, f"u_bar_{k}")
        except RootBracketError as exc:
            raise RootBracketError(f"pillar {k}: {exc}") from None
    return out


def fit_vtilde(u_tilde: np.ndarray, c: float) -> np.ndarray:
    """Inflation tilts v~_k = u~_k (1 + c k); c > 0 gives positive CPI-rate correlation."""
    k = np.arange(1, len(u_tilde) + 1)
    return np.asarray(u_tilde) * (1.0 + c * k)


def _convex_roots(g, lo_edge: float, hi_edge: float, target: float, tol: float) -> list[float]:
    """All roots of the convex map g(w) = target inside (lo_edge, hi_edge)."""

    def edge(side: float, limit: float) -> float:
        if np.isfinite(limit):
            return limit
        w = side
        for _ in range(60):
            if g(w) > target + 1.0:
                return w
            w *= 2.0
        return w

    left = edge(-1.0, lo_edge)
    right = edge(1.0, hi_edge)
    res = minimize_scalar(g, bounds=(left, right), method="bounded", options={"xatol": 1e-10})
    w_min, g_min = float(res.x), float(res.fun)
    if g_min > target + 1e-12:
        raise RootBracketError(f"target {target:.3e} below the convex minimum {g_min:.3e}")
    if g_min >= target - 1e-14:
        return [w_min]
    roots = []
    if g(left) >= target:
        roots.append(float(brentq(lambda w: g(w) - target, left, w_min, xtol=tol, rtol=8.9e-16)))
    if g(right) >= target:
        roots.append(float(brentq(lambda w: g(w) - target, w_min, right, xtol=tol, rtol=8.9e-16)))
    return roots


def _pick_root(roots: list[float], policy: str) -> float:
    if len(roots) == 1:
        return roots[0]
    neg = [r for r in roots if r < 0]
    pos = [r for r in roots if r >= 0]
    if policy == "NEGATIVE" and neg:
        return neg[0]
    if policy == "POSITIVE" and pos:
        return pos[0]
    ordered = sorted(roots, key=lambda r: (abs(r), -r))
    return ordered[0]


def fit_vbar(
    inflation: Sequence,
    common,
    nominal: Sequence,
    v_tilde: np.ndarray,
    u_bar: np.ndarray,
    ilb_ratios: np.ndarray,
    horizon: float,
    policy: str = "SMALLEST_ABS",
    tol: float = 1e-12,
    pair_only: int | None = None,
    current: np.ndarray | None = None,
) -> tuple[np.ndarray, list]:
    """Inflation loadings matching P_ILB(0,T_k)/P(0,T), with two-root handling.

    Nonnegative inflation processes give a unique root by monotonicity;
    real-valued ones may admit two roots of the convex log-MGF, resolved by
    the configured policy and reported as events (k, roots, chosen).
    """
    n = len(ilb_ratios)
    years = len(inflation)
    g0 = _log_mgf(common, horizon)
    g_nom = [_log_mgf(c, horizon) for c in nominal]
    g_inf = [_log_mgf(c, horizon) for c in inflation]
    out = np.array(current, dtype=float) if current is not None else np.zeros(n)
    events: list = []
    ks = (
        range(1, n + 1)
        if pair_only is None
        else [k for k in (2 * pair_only - 1, 2 * pair_only) if 1 <= k <= n]
    )
    for k in ks:
        j = (k + 1) // 2
        rest = g0(v_tilde[k - 1]) + g_nom[j - 1](u_bar[k - 1])
        for l in range(j + 1, years + 1):
            rest += g_nom[l - 1](u_bar[2 * l - 2])
        target = math.log(ilb_ratios[k - 1]) - rest
        comp = inflation[j - 1]
        try:
            if comp.nonnegative:
                out[k - 1] = _solve_increasing(
                    g_inf[j - 1], target, _upper_edge(comp, horizon), tol, f"v_bar_{k}"
                )
            else:
                roots = _convex_roots(
                    g_inf[j - 1],
                    _lower_edge(comp, horizon),
                    _upper_edge(comp, horizon),
                    target,
                    tol,
                )
                chosen = _pick_root(roots, policy)
                if len(roots) > 1:
                    events.append((k, roots, chosen, policy))
                out[k - 1] = chosen
        except RootBracketError as exc:
            raise RootBracketError(f"pillar {k}: {exc}") from None
    return out, events


# -- derivative-free search ----------------------------------------------------


class _TrackedObjective:
    """Wraps an objective, recording evaluations and the best-so-far value."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn
        self.count = 0
        self.best = math.inf
        self.best_trace: list[float] = []

    def __call__(self, x: np.ndarray) -> float:
        val = float(self.fn(np.asarray(x, dtype=float)))
        if not np.isfinite(val):
            val = PENALTY
        self.count += 1
        self.best = min(self.best, val)
        self.best_trace.append(self.best)
        return val


def _simplex_search(
    objective: Callable[[np.ndarray], float],
    template_point: np.ndarray,
    bounds: list[tuple[float, float]],
    settings: CalibrationSettings,
) -> tuple[np.ndarray, float, _TrackedObjective]:
    """Projected Nelder-Mead from deterministic seeds, best result kept.

    Seeds: the template point plus the best of an unscrambled Sobol lattice
    over the box; everything is deterministic for a given settings object.
    """
    tracked = _TrackedObjective(objective)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    dim = len(bounds)
    sob = qmc.Sobol(d=dim, scramble=False)
    lattice = lo + sob.random(max(settings.presearch, 2)) * (hi - lo)
    cands = [np.clip(template_point, lo, hi)] + [row for row in lattice]
    scored = sorted(((tracked(c), i) for i, c in enumerate(cands)), key=lambda t: t[0])
    starts = [cands[i] for _, i in scored[: max(settings.n_restarts, 1)]]
    def initial_simplex(x0: np.ndarray, frac: float) -> np.ndarray:
        # box-scaled steps; the scipy default barely moves coordinates near 0
        steps = frac * (hi - lo)
        verts = [x0]
        for i in range(dim):
            v = x0.copy()
            v[i] = v[i] + steps[i] if v[i] + steps[i] <= hi[i] else v[i] - steps[i]
            verts.append(v)
        return np.clip(np.array(verts), lo, hi)

    best_x, best_f = starts[0], scored[0][0]
    for i_start, x0 in enumerate(starts):
        if best_f <= settings.objective_target:
            break
        if i_start > 0 and best_f <= settings.restart_threshold:
            break
        res = minimize(
            tracked,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "maxiter": settings.max_iter,
                "maxfev": 2 * settings.max_iter,
                "xatol": 1e-10,
                "fatol": settings.objective_target / 100,
                "adaptive": True,
                "initial_simplex": initial_simplex(np.asarray(x0, dtype=float), 0.05),
            },
        )
        if res.fun < best_f:
            best_x, best_f = np.asarray(res.x), float(res.fun)
    if best_f > settings.objective_target:
        # final polish from the overall best point
        res = minimize(
            tracked,
            best_x,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "maxiter": settings.max_iter,
                "xatol": 1e-12,
                "fatol": 1e-16,
                "adaptive": True,
                "initial_simplex": initial_simplex(best_x, 0.005),
            },
        )
        if res.fun < best_f:
            best_x, best_f = np.asarray(res.x), float(res.fun)
    if np.diff(tracked.best_trace).max(initial=0.0) > 0:
        raise AssertionError("best-so-far objective must be non-increasing")
    return best_x, best_f, tracked


def _with_params(template, names: Sequence[str], values: np.ndarray):
    kwargs = dict(template.__dict__)
    kwargs.update({n: float(v) for n, v in zip(names, values)})
    return type(template)(**kwargs)


# -- per-year calibrations -------------------------------------------------------


@dataclass
class _Workspace:
    """Mutable state threaded through the calibration stages."""

    tenor: TenorStructure
    settings: CalibrationSettings
    ratios: np.ndarray
    numeraire_df: float
    nominal: list
    inflation: list
    u_tilde: np.ndarray | None = None
    u_bar: np.ndarray | None = None
    v_tilde: np.ndarray | None = None
    v_bar: np.ndarray | None = None
    ilb_ratios: np.ndarray | None = None
    two_root_events: list = field(default_factory=list)

    def build_config(self) -> ModelConfig:
        process = ProductProcess(
            tuple([self.settings.common] + self.nominal + self.inflation),
            horizon=self.tenor.horizon,
        )
        v_tilde = self.v_tilde if self.v_tilde is not None else self.u_tilde.copy()
        v_bar = self.v_bar if self.v_bar is not None else np.zeros(self.tenor.n)
        return ModelConfig(
            tenor=self.tenor,
            process=process,
            u_tilde=self.u_tilde,
            u_bar=self.u_bar,
            v_tilde=v_tilde,
            v_bar=v_bar,
            numeraire_df=self.numeraire_df,
            tilt_c=self.settings.tilt_c,
        )


def calibrate_nominal_year(work: _Workspace, year: int, quotes: list) -> YearFit:
    """Fit the year's process to its caplet quotes, re-solving the curve pair.

    quotes: (strike, black_vol) pairs for the caplet fixing at year - 1/2.
    """
    settings = work.settings
    names = settings.nominal_free
    bounds = [settings.nominal_bounds[n] for n in names]
    template = work.nominal[year - 1]
    strikes = np.array([q[0] for q in quotes])
    market_vols = np.array([q[1] for q in quotes])
    k_pay = 2 * year
    expiry = work.tenor.date(k_pay - 1)
    delta = work.tenor.delta
    # curve-implied quantities; every candidate refits the curve exactly
    fwd_curve = (work.ratios[k_pay - 2] / work.ratios[k_pay - 1] - 1.0) / delta
    df_curve = work.ratios[k_pay - 1] * work.numeraire_df
    if settings.nominal_objective == "IMPLIED_VOL_MSE":
        market_target = market_vols
    else:
        from .fourier import black_price

        market_target = np.array(
            [
                black_price(fwd_curve, float(kk), expiry, float(vv)) * df_curve * delta * 1e4
                for kk, vv in zip(strikes, market_vols)
            ]
        )
    damping_cache: list[float | None] = [None]

    def evaluate(params: np.ndarray, capture: bool = False):
        try:
            candidate = _with_params(template, names, params)
        except ValueError:
            return PENALTY if not capture else (PENALTY, None)
        nominal = list(work.nominal)
        nominal[year - 1] = candidate
        try:
            u_bar = fit_ubar(
                nominal,
                settings.common,
                work.u_tilde,
                work.ratios,
                work.tenor.horizon,
                settings.root_tol,
                pair_only=year,
                current=work.u_bar,
            )
            probe = _Workspace(
                tenor=work.tenor,
                settings=settings,
                ratios=work.ratios,
                numeraire_df=work.numeraire_df,
                nominal=nominal,
                inflation=work.inflation,
                u_tilde=work.u_tilde,
                u_bar=u_bar,
            )
            cfg = probe.build_config()
            contour = settings.contour
            if damping_cache[0] is not None:
                contour = replace(contour, damping=damping_cache[0])
            try:
                prices, diag = ir_caplets_grid(cfg, k_pay, strikes, contour=contour)
            except (ContourError, DomainViolation, QuadratureError):
                prices, diag = ir_caplets_grid(cfg, k_pay, strikes, contour=settings.contour)
            damping_cache[0] = diag.damping if diag.nodes else None
            fwd = forward_rate(cfg, k_pay, cfg.initial_state())
            df = work.numeraire_df * float(martingale(cfg, cfg.u_row(k_pay), cfg.initial_state()))
            if settings.nominal_objective == "IMPLIED_VOL_MSE":
                model_vals = np.array(
                    [
                        _vol_or_zero(fwd, float(kk), expiry, float(pr) / (df * delta))
                        for kk, pr in zip(strikes, prices)
                    ]
                )
            else:
                model_vals = prices * 1e4
            mse = float(np.mean((model_vals - market_target) ** 2))
        except (RootBracketError, ContourError, DomainViolation, QuadratureError, ValueError):
            return PENALTY if not capture else (PENALTY, None)
        if capture:
            return mse, model_vals
        return mse

    template_point = np.array([getattr(template, n) for n in names])
    best_x, best_f, tracked = _simplex_search(evaluate, template_point, bounds, settings)
    fitted = _with_params(template, names, best_x)
    work.nominal[year - 1] = fitted
    work.u_bar = fit_ubar(
        work.nominal,
        settings.common,
        work.u_tilde,
        work.ratios,
        work.tenor.horizon,
        settings.root_tol,
        pair_only=year,
        current=work.u_bar,
    )
    _, model_vals = evaluate(best_x, capture=True)
    label = "IR_CAPLET_VOL" if settings.nominal_objective == "IMPLIED_VOL_MSE" else "IR_CAPLET_BP"
    rows = [
        (float(kk), label, float(mv), float(md))
        for kk, mv, md in zip(strikes, market_target, model_vals)
    ]
    warning = ""
    if best_f >= PENALTY:
        warning = "no admissible candidate found"
    return YearFit(year, best_f, tracked.count, fitted.__dict__ | {}, rows, warning)


def _vol_or_zero(forward, strike, expiry, undiscounted_price) -> float:
    from .errors import NoSolution

    intrinsic = max(forward - strike, 0.0)
    if undiscounted_price <= intrinsic + 1e-300:
        return 0.0
    try:
        return implied_vol_black(forward, strike, expiry, undiscounted_price)
    except NoSolution:
        return 0.0


def calibrate_inflation_year(work: _Workspace, year: int, quotes: list) -> YearFit:
    """Fit the year's inflation process to its annual option quotes.

    quotes: (strike, kind, price_bp) with kind in {caplet, floorlet}.
    """
    settings = work.settings
    names = settings.inflation_free
    bounds = [settings.inflation_bounds[n] for n in names]
    template = work.inflation[year - 1]
    strikes = np.array([q[0] for q in quotes])
    kinds = [q[1] for q in quotes]
    market_bp = np.array([q[2] for q in quotes])
    k_pay = 2 * year
    j_lag = 2
    span = 2 * work.tenor.delta  # annual inflation observation
    expiry = work.tenor.date(k_pay)
    df_curve = work.ratios[k_pay - 1] * work.numeraire_df
    if settings.inflation_objective == "PRICE_MSE":
        market_target = market_bp
    else:
        # market practice: invert prices with the curve-implied forward ratio
        i_hi = work.ilb_ratios[k_pay - 1] / work.ratios[k_pay - 1]
        i_lo = (
            work.ilb_ratios[k_pay - 3] / work.ratios[k_pay - 3] if k_pay > 2 else 1.0
        )
        fwd_approx = i_hi / i_lo - 1.0
        market_target = np.array(
            [
                _shifted_vol_or_zero(fwd_approx, float(kk), expiry, float(bp) / 1e4 / df_curve, kd)
                for kk, kd, bp in zip(strikes, kinds, market_bp)
            ]
        )
    damping_cache: list[float | None] = [None]

    def evaluate(params: np.ndarray, capture: bool = False):
        try:
            candidate = _with_params(template, names, params)
        except ValueError:
            return PENALTY if not capture else (PENALTY, None)
        inflation = list(work.inflation)
        inflation[year - 1] = candidate
        try:
            v_bar, _ = fit_vbar(
                inflation,
                settings.common,
                work.nominal,
                work.v_tilde,
                work.u_bar,
                work.ilb_ratios,
                work.tenor.horizon,
                settings.two_root_policy,
                settings.root_tol,
                pair_only=year,
                current=work.v_bar,
            )
            probe = _Workspace(
                tenor=work.tenor,
                settings=settings,
                ratios=work.ratios,
                numeraire_df=work.numeraire_df,
                nominal=work.nominal,
                inflation=inflation,
                u_tilde=work.u_tilde,
                u_bar=work.u_bar,
                v_tilde=work.v_tilde,
                v_bar=v_bar,
            )
            cfg = probe.build_config()
            contour = settings.contour
            if damping_cache[0] is not None:
                contour = replace(contour, damping=damping_cache[0])
            try:
                caps, diag = inflation_caplets_grid(cfg, k_pay, j_lag, strikes, contour=contour)
            except (ContourError, DomainViolation, QuadratureError):
                caps, diag = inflation_caplets_grid(
                    cfg, k_pay, j_lag, strikes, contour=settings.contour
                )
            damping_cache[0] = diag.damping if diag.nodes else None
            state = cfg.initial_state()
            fwd = forward_inflation(cfg, k_pay, j_lag, state)
            df = work.numeraire_df * float(martingale(cfg, cfg.u_row(k_pay), state))
            prices = np.where(
                [kd == "caplet" for kd in kinds],
                caps,
                caps - df * span * (fwd - strikes),
            )
            if settings.inflation_objective == "PRICE_MSE":
                model_vals = prices * 1e4
            else:
                model_vals = np.array(
                    [
                        _shifted_vol_or_zero(fwd, float(kk), expiry, float(pr) / df, kd)
                        for kk, pr, kd in zip(strikes, prices, kinds)
                    ]
                )
            mse = float(np.mean((model_vals - market_target) ** 2))
        except (RootBracketError, ContourError, DomainViolation, QuadratureError, ValueError):
            return PENALTY if not capture else (PENALTY, None)
        if capture:
            return mse, model_vals
        return mse

    template_point = np.array([getattr(template, n) for n in names])
    best_x, best_f, tracked = _simplex_search(evaluate, template_point, bounds, settings)
    fitted = _with_params(template, names, best_x)
    work.inflation[year - 1] = fitted
    work.v_bar, events = fit_vbar(
        work.inflation,
        settings.common,
        work.nominal,
        work.v_tilde,
        work.u_bar,
        work.ilb_ratios,
        work.tenor.horizon,
        settings.two_root_policy,
        settings.root_tol,
        pair_only=year,
        current=work.v_bar,
    )
    work.two_root_events.extend(events)
    _, model_vals = evaluate(best_x, capture=True)
    rows = [
        (float(kk), kd, float(mv), float(md))
        for kk, kd, mv, md in zip(strikes, kinds, market_target, model_vals)
    ]
    warning = "no admissible candidate found" if best_f >= PENALTY else ""
    return YearFit(year, best_f, tracked.count, fitted.__dict__ | {}, rows, warning)


def _shifted_vol_or_zero(fwd, strike, expiry, undiscounted_price, kind) -> float:
    from .errors import NoSolution

    opt_kind = "call" if kind == "caplet" else "put"
    intrinsic = max(fwd - strike, 0.0) if kind == "caplet" else max(strike - fwd, 0.0)
    if undiscounted_price <= intrinsic + 1e-300:
        return 0.0
    try:
        return implied_vol_shifted_black(fwd, strike, expiry, undiscounted_price, kind=opt_kind)
    except NoSolution:
        return 0.0


# -- orchestration --------------------------------------------------------------


def calibrate(snapshot, settings: CalibrationSettings | None = None) -> CalibrationReport:
    """Run the full two-stage calibration against a market snapshot."""
    from .market_data import ilb_curve

    settings = settings or CalibrationSettings()
    tenor = TenorStructure(n=len(snapshot.discount_times))
    expected = tenor.dates
    if not np.allclose(snapshot.discount_times, expected, atol=1e-9):
        raise ValueError("discount pillars must coincide with the semiannual tenor dates")
    dfs = np.asarray(snapshot.discounts, dtype=float)
    numeraire_df = float(dfs[-1])
    ratios = dfs / numeraire_df
    years = tenor.years

    work = _Workspace(
        tenor=tenor,
        settings=settings,
        ratios=ratios,
        numeraire_df=numeraire_df,
        nominal=[settings.nominal_template for _ in range(years)],
        inflation=[settings.inflation_template for _ in range(years)],
    )
    warnings: list[str] = []
    stages = ["term_structure"]

    if settings.use_half_variance_rule:
        work.u_tilde = fit_utilde(settings.common, ratios, tenor.horizon, settings.root_tol)
    else:
        work.u_tilde = np.zeros(tenor.n)
    work.u_bar = fit_ubar(
        work.nominal, settings.common, work.u_tilde, ratios, tenor.horizon, settings.root_tol
    )

    nominal_fits: list[YearFit] = []
    caplet_years = snapshot.caplet_quotes_by_year()
    if caplet_years:
        stages.append("nominal_options")
        for year in range(years, 0, -1):
            quotes = caplet_years.get(year)
            if not quotes:
                warnings.append(f"no caplet quotes for year {year}; process left at template")
                continue
            fit = calibrate_nominal_year(work, year, quotes)
            if fit.warning:
                warnings.append(f"nominal year {year}: {fit.warning}")
            nominal_fits.append(fit)
        nominal_fits.sort(key=lambda f: f.year)
    # final full backwards pass for a consistent curve fit
    work.u_bar = fit_ubar(
        work.nominal, settings.common, work.u_tilde, ratios, tenor.horizon, settings.root_tol
    )

    zciis_residuals: list = []
    inflation_fits: list[YearFit] = []
    if snapshot.has_inflation:
        stages.append("inflation_curve")
        work.v_tilde = fit_vtilde(work.u_tilde, settings.tilt_c)
        work.ilb_ratios = np.array([r for _, r in ilb_curve(snapshot)])
        work.v_bar, events = fit_vbar(
            work.inflation,
            settings.common,
            work.nominal,
            work.v_tilde,
            work.u_bar,
            work.ilb_ratios,
            tenor.horizon,
            settings.two_root_policy,
            settings.root_tol,
        )
        work.two_root_events.extend(events)
        infl_years = snapshot.inflation_quotes_by_year()
        if infl_years:
            stages.append("inflation_options")
            for year in range(1, years + 1):
                quotes = infl_years.get(year)
                if not quotes:
                    warnings.append(f"no inflation quotes for year {year}; process left at template")
                    continue
                fit = calibrate_inflation_year(work, year, quotes)
                if fit.warning:
                    warnings.append(f"inflation year {year}: {fit.warning}")
                inflation_fits.append(fit)
        # final forwards pass so every pillar reflects the fitted processes
        work.v_bar, events = fit_vbar(
            work.inflation,
            settings.common,
            work.nominal,
            work.v_tilde,
            work.u_bar,
            work.ilb_ratios,
            tenor.horizon,
            settings.two_root_policy,
            settings.root_tol,
        )
        work.two_root_events.extend(events)

    cfg = work.build_config()
    state = cfg.initial_state()

    curve_residuals = []
    for k in range(1, tenor.n + 1):
        model = float(martingale(cfg, cfg.u_row(k), state))
        curve_residuals.append((k, ratios[k - 1], model, abs(model / ratios[k - 1] - 1.0)))

    if snapshot.has_inflation:
        from .model import zciis_rate

        for m, quoted in zip(snapshot.zciis_years, snapshot.zciis_rates):
            model = zciis_rate(cfg, int(m))
            zciis_residuals.append((int(m), float(quoted), model, abs(model - float(quoted))))

    return CalibrationReport(
        config=cfg,
        curve_residuals=curve_residuals,
        nominal_years=nominal_fits,
        zciis_residuals=zciis_residuals,
        inflation_years=inflation_fits,
        two_root_events=work.two_root_events,
        stages_run=stages,
        settings_echo={
            "root_tol": settings.root_tol,
            "tilt_c": settings.tilt_c,
            "use_half_variance_rule": settings.use_half_variance_rule,
            "nominal_objective": settings.nominal_objective,
            "inflation_objective": settings.inflation_objective,
            "two_root_policy": settings.two_root_policy,
            "max_iter": settings.max_iter,
            "n_restarts": settings.n_restarts,
            "presearch": settings.presearch,
            "nominal_free": list(settings.nominal_free),
            "inflation_free": list(settings.inflation_free),
            "seed": settings.seed,
        },
        warnings=warnings,
    )
