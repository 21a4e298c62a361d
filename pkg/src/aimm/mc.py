"""Monte Carlo oracle: terminal-measure simulation with exact reweighting.

Paths of the driving product process are simulated under the terminal
forward measure and reweighted to any payment-date forward measure with the
closed-form exponential density, giving an independent cross-check for every
analytic price and moment generating function in the package.

Schemes: the square-root kinds use full-truncation Euler (the positivity
clamp sits inside the drift and diffusion arguments); the Gaussian OU kind
is exact in distribution per step, so it only steps between observation
times.  Compound-Poisson jumps are exact: per-segment Poisson counts,
uniform placement, exponential marks, with the in-step mean-reversion decay
applied to each mark.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .model import ModelConfig, ab_pair
from .processes import CIR, CIRJump, OUJump, AffineComponent, ProductProcess, phi_product, psi_product


@dataclass(frozen=True)
class SimulationPlan:
    """Path count, step density and the mandatory seed."""

    paths: int
    seed: int
    steps_per_year: int = 64
    block_size: int = 65536

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("need at least one path")
        if self.steps_per_year < 1 or self.block_size < 1:
            raise ValueError("invalid plan")


def _segment_grid(obs_times: np.ndarray, steps_per_year: int, fine: bool):
    """Per-segment step grids covering (0, t_max], aligned on the obs times."""
    grids = []
    t_prev = 0.0
    for t_obs in obs_times:
        span = t_obs - t_prev
        if span <= 0:
            grids.append(np.array([]))
            t_prev = t_obs
            continue
        n = max(1, int(round(span * steps_per_year))) if fine else 1
        grids.append(t_prev + span * np.arange(1, n + 1) / n)
        t_prev = t_obs
    return grids


def _jump_batches(rng, rate: float, span: float, n_paths: int, alpha: float):
    """Poisson arrival times (uniform on the segment), marks and path ids."""
    counts = rng.poisson(rate * span, n_paths)
    total = int(counts.sum())
    if total == 0:
        return None
    path_idx = np.repeat(np.arange(n_paths), counts)
    times = rng.random(total) * span
    marks = rng.exponential(1.0 / alpha, total)
    order = np.argsort(times, kind="stable")
    return path_idx[order], times[order], marks[order]


def _add_step_jumps(x: np.ndarray, batch, lo: float, hi: float, lam: float, sign: float = 1.0) -> None:
    """Scatter marks arriving in (lo, hi] onto x, decayed by exp(-lam (hi - s))."""
    if batch is None:
        return
    path_idx, times, marks = batch
    i0, i1 = np.searchsorted(times, (lo, hi), side="right")
    if i0 == i1:
        return
    sl = slice(i0, i1)
    decayed = sign * marks[sl] * np.exp(-lam * (hi - times[sl]))
    np.add.at(x, path_idx[sl], decayed)


def simulate_component(
    comp: AffineComponent,
    obs_times,
    n_paths: int,
    rng: np.random.Generator,
    steps_per_year: int = 64,
) -> dict[float, np.ndarray]:
    """Simulate one component, returning state arrays at the observation times.

    Observation values of the square-root kinds are clamped at zero; the
    evolving Euler state itself is left untruncated per the scheme.
    """
    obs_times = np.sort(np.asarray(obs_times, dtype=float))
    if obs_times.size == 0 or obs_times[0] < 0:
        raise ValueError("need nonnegative observation times")
    exact = isinstance(comp, OUJump)
    grids = _segment_grid(obs_times, steps_per_year, fine=not exact)
    x = np.full(n_paths, comp.x0, dtype=float)
    out: dict[float, np.ndarray] = {}
    scratch = np.empty(n_paths)
    t_prev = 0.0
    for t_obs, grid in zip(obs_times, grids):
        span = t_obs - t_prev
        if span > 0:
            if isinstance(comp, (CIR, CIRJump)):
                rate = comp.lam * comp.beta if isinstance(comp, CIRJump) else 0.0
                batch = (
                    _jump_batches(rng, rate, span, n_paths, comp.alpha)
                    if rate > 0
                    else None
                )
                lo = 0.0
                normals = np.empty(n_paths)
                for t_step in grid:
                    hi = t_step - t_prev  # segment-relative step end
                    dt = hi - lo
                    # x += lam (theta - x+) dt + 2 eta sqrt(x+ dt) Z (+ jumps)
                    rng.standard_normal(out=normals)
                    xp = np.maximum(x, 0.0, out=scratch)
                    x += comp.lam * dt * (comp.theta - xp)
                    np.sqrt(xp, out=xp)
                    xp *= normals
                    x += (2.0 * comp.eta * math.sqrt(dt)) * xp
                    _add_step_jumps(x, batch, lo, hi, comp.lam)
                    lo = hi
            else:  # OUJump: exact transition over the whole segment
                s = math.exp(-comp.lam * span)
                sd = comp.sigma * math.sqrt(-math.expm1(-2 * comp.lam * span) / (2 * comp.lam))
                z = rng.standard_normal(n_paths)
                x = comp.theta + (x - comp.theta) * s + sd * z
                for rate, alpha, sign in (
                    (comp.lam * comp.beta_plus, comp.alpha_plus, 1.0),
                    (comp.lam * comp.beta_minus, comp.alpha_minus, -1.0),
                ):
                    if rate > 0:
                        batch = _jump_batches(rng, rate, span, n_paths, alpha)
                        _add_step_jumps(x, batch, 0.0, span, comp.lam, sign)
        obs = np.maximum(x, 0.0) if comp.nonnegative else x.copy()
        out[float(t_obs)] = obs
        t_prev = t_obs
    return out


def iter_blocks(
    process: ProductProcess,
    plan: SimulationPlan,
    obs_times,
) -> Iterator[dict[float, np.ndarray]]:
    """Yield per-block ensembles {t: (n_block, dim)} with counter-based seeding."""
    obs_times = np.sort(np.asarray(obs_times, dtype=float))
    n_blocks = (plan.paths + plan.block_size - 1) // plan.block_size
    root = np.random.SeedSequence(plan.seed)
    block_seeds = root.spawn(n_blocks)
    done = 0
    for b in range(n_blocks):
        n_pb = min(plan.block_size, plan.paths - done)
        done += n_pb
        comp_seeds = block_seeds[b].spawn(process.dim)
        block = {float(t): np.empty((n_pb, process.dim)) for t in obs_times}
        for i, comp in enumerate(process.components):
            rng = np.random.default_rng(comp_seeds[i])
            states = simulate_component(comp, obs_times, n_pb, rng, plan.steps_per_year)
            for t, arr in states.items():
                block[t][:, i] = arr
        yield block


def simulate(
    process: ProductProcess, plan: SimulationPlan, obs_times
) -> dict[float, np.ndarray]:
    """Full path ensemble at the observation times; use for moderate path counts."""
    obs_times = np.sort(np.asarray(obs_times, dtype=float))
    out = {float(t): np.empty((plan.paths, process.dim)) for t in obs_times}
    row = 0
    for block in iter_blocks(process, plan, obs_times):
        n_pb = next(iter(block.values())).shape[0]
        for t, arr in block.items():
            out[t][row : row + n_pb] = arr
        row += n_pb
    return out


def mc_estimate(
    process: ProductProcess,
    plan: SimulationPlan,
    obs_times,
    payoff: Callable[[dict[float, np.ndarray]], np.ndarray],
) -> tuple[float, float]:
    """Streaming mean and standard error of payoff(block states) per path."""
    n = 0
    acc = 0.0
    acc2 = 0.0
    for block in iter_blocks(process, plan, obs_times):
        vals = np.asarray(payoff(block), dtype=float)
        n += vals.size
        acc += float(vals.sum())
        acc2 += float((vals * vals).sum())
    mean = acc / n
    var = max(acc2 / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def transform_estimate(
    comp: AffineComponent,
    t: float,
    u,
    paths: int,
    seed: int,
    steps_per_year: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample estimates of E[exp(u X_t)] for a single component.

    u may be an array; all entries share one path ensemble.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n_blocks = (paths + 65536 - 1) // 65536
    seeds = np.random.SeedSequence(seed).spawn(n_blocks)
    n = 0
    acc = np.zeros(u.shape)
    acc2 = np.zeros(u.shape)
    done = 0
    for b in range(n_blocks):
        n_pb = min(65536, paths - done)
        done += n_pb
        rng = np.random.default_rng(seeds[b])
        x = simulate_component(comp, [t], n_pb, rng, steps_per_year)[float(t)]
        vals = np.exp(np.outer(u, x))
        n += n_pb
        acc += vals.sum(axis=1)
        acc2 += (vals * vals).sum(axis=1)
    mean = acc / n
    var = np.maximum(acc2 / n - mean * mean, 0.0)
    return mean, np.sqrt(var / n)


# -- model-aware pricing -------------------------------------------------------


def reweight_to_forward_measure(cfg: ModelConfig, k: int, t: float, states: np.ndarray) -> np.ndarray:
    """Per-path forward-measure density dQ^{T_k}/dQ^T read off the states at t.

    Uses the martingale property: for payoffs measurable at t <= T_k the
    density can be evaluated at t instead of T_k.
    """
    if t > cfg.tenor.date(k):
        raise ValueError("reweighting time after the payment date")
    p = cfg.process
    tau = cfg.tenor.horizon - t
    u_k = cfg.u_row(k)
    log_m_t = np.real(phi_product(p, tau, u_k)) + states @ np.real(psi_product(p, tau, u_k))
    log_m_0 = np.real(phi_product(p, cfg.tenor.horizon, u_k)) + np.real(
        psi_product(p, cfg.tenor.horizon, u_k)
    ) @ p.x0
    return np.exp(log_m_t - log_m_0)


def _log_index(cfg: ModelConfig, k: int, states: np.ndarray) -> np.ndarray:
    """log I(T_k) per path from the frozen forward-CPI coefficients."""
    a, b = ab_pair(cfg, cfg.tenor.date(k), cfg.v_row(k), cfg.u_row(k))
    return float(np.real(a)) + states @ np.real(b)


def _log_gross_rate(cfg: ModelConfig, k: int, states: np.ndarray) -> np.ndarray:
    """log(1 + delta F^k(T_{k-1})) per path at the fixing date."""
    a, b = ab_pair(cfg, cfg.tenor.date(k - 1), cfg.u_row(k - 1), cfg.u_row(k))
    return float(np.real(a)) + states @ np.real(b)


def mc_price(cfg: ModelConfig, instrument, plan: SimulationPlan) -> tuple[float, float]:
    """Monte Carlo price and standard error of a supported instrument.

    instrument: an OptionQuote-like object with fields kind, k, strike and j
    (ignored price), or the pair ("YYIIS", years, fixed_rate) for a swap NPV.
    """
    tenor = cfg.tenor
    if isinstance(instrument, tuple) and instrument[0] == "YYIIS":
        _, years, fixed = instrument
        obs_all = [tenor.date(2 * m) for m in range(1, years + 1)]

        def payoff(block):
            total = 0.0
            for m in range(1, years + 1):
                t_pay = tenor.date(2 * m)
                t_prev = tenor.date(2 * m - 2)
                log_i = _log_index(cfg, 2 * m, block[t_pay])
                if m == 1:
                    ratio = np.exp(log_i)
                else:
                    ratio = np.exp(log_i - _log_index(cfg, 2 * m - 2, block[t_prev]))
                w = reweight_to_forward_measure(cfg, 2 * m, t_pay, block[t_pay])
                p_m = cfg.numeraire_df * math.exp(
                    float(np.real(phi_product(cfg.process, tenor.horizon, cfg.u_row(2 * m))))
                    + float(np.real(psi_product(cfg.process, tenor.horizon, cfg.u_row(2 * m))) @ cfg.process.x0)
                )
                total = total + p_m * w * ((ratio - 1.0) - fixed)
            return total

        return mc_estimate(cfg.process, plan, obs_all, payoff)

    kind, k, strike, j = instrument.kind, instrument.k, instrument.strike, instrument.j
    t_pay = tenor.date(k)
    p_k = cfg.numeraire_df * math.exp(
        float(np.real(phi_product(cfg.process, tenor.horizon, cfg.u_row(k))))
        + float(np.real(psi_product(cfg.process, tenor.horizon, cfg.u_row(k))) @ cfg.process.x0)
    )

    if kind in ("CPI_CALL", "CPI_PUT"):
        obs = [t_pay]

        def payoff(block):
            idx = np.exp(_log_index(cfg, k, block[t_pay]))
            w = reweight_to_forward_measure(cfg, k, t_pay, block[t_pay])
            intrinsic = idx - strike if kind == "CPI_CALL" else strike - idx
            return p_k * w * np.maximum(intrinsic, 0.0)

    elif kind in ("INFL_CAPLET", "INFL_FLOORLET"):
        span = tenor.date(k) - tenor.date(k - j)
        gross_strike = 1.0 + span * strike
        t_first = tenor.date(k - j)
        obs = [t_pay] if j == k else [t_first, t_pay]

        def payoff(block):
            log_ratio = _log_index(cfg, k, block[t_pay])
            if j != k:
                log_ratio = log_ratio - _log_index(cfg, k - j, block[t_first])
            ratio = np.exp(log_ratio)
            w = reweight_to_forward_measure(cfg, k, t_pay, block[t_pay])
            intrinsic = ratio - gross_strike if kind == "INFL_CAPLET" else gross_strike - ratio
            return p_k * w * np.maximum(intrinsic, 0.0)

    elif kind in ("IR_CAPLET", "IR_FLOORLET"):
        t_fix = tenor.date(k - 1)
        gross_strike = 1.0 + tenor.delta * strike
        obs = [t_fix]

        def payoff(block):
            gross = np.exp(_log_gross_rate(cfg, k, block[t_fix]))
            w = reweight_to_forward_measure(cfg, k, t_fix, block[t_fix])
            intrinsic = gross - gross_strike if kind == "IR_CAPLET" else gross_strike - gross
            return p_k * w * np.maximum(intrinsic, 0.0)

    else:
        raise ValueError(f"unsupported instrument kind {kind!r}")

    return mc_estimate(cfg.process, plan, obs, payoff)
