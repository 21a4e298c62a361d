"""One-dimensional Fourier inversion pricing and implied-vol conversion.

Prices CPI calls/puts, year-on-year inflation caplets/floorlets and nominal
interest-rate caplets/floorlets from the model's extended moment generating
functions through the damped inversion formula

    E[(e^X - K)_+] = (K/pi) Int_0^oo Re( M(iu + R) K^{-(iu+R)}
                                         / ((iu+R)(iu+R-1)) ) du,   R > 1.

Puts and floorlets are obtained by parity, which is exact in-model and keeps
only one set of domain conditions per instrument.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from .errors import ContourError, NoSolution, QuadratureError
from .model import ModelConfig, StateVector, ab_pair, forward_cpi, forward_inflation, martingale, mgf_log_cpi, mgf_state, mgf_yoy
from .processes import phi_product, psi_product

_GL_ORDER = 24
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)


@dataclass(frozen=True)
class ContourSpec:
    """Damping and quadrature controls for the inversion integral.

    Truncation stops once the estimated tail of each strike's price is below
    tail_abs (absolute, unit notional) or tail_tol relative to its scale.
    """

    damping: float | None = None  # None: midpoint of the admissible interval
    max_damping: float = 8.0
    rel_tol: float = 1e-10
    tail_tol: float = 1e-10
    tail_abs: float = 3e-10
    max_panels: int = 512


@dataclass(frozen=True)
class PriceDiagnostics:
    damping: float
    truncation: float
    nodes: int


@dataclass(frozen=True)
class OptionQuote:
    """A single market quote on one of the supported instrument families."""

    kind: str  # CPI_CALL, CPI_PUT, INFL_CAPLET, INFL_FLOORLET, IR_CAPLET, IR_FLOORLET
    k: int
    strike: float
    price: float
    j: int = 0  # inflation lag in tenor steps; 0 for non-inflation kinds

    def __post_init__(self):
        kinds = {"CPI_CALL", "CPI_PUT", "INFL_CAPLET", "INFL_FLOORLET", "IR_CAPLET", "IR_FLOORLET"}
        if self.kind not in kinds:
            raise ValueError(f"unknown quote kind {self.kind!r}")
        if self.kind.startswith("CPI") and self.strike <= 0:
            raise ValueError("CPI strikes must be positive")
        if self.price < 0:
            raise ValueError("quoted prices must be nonnegative")


class _MgfCache:
    """Evaluates the MGF along the contour once per node batch."""

    def __init__(self, mgf, damping: float):
        self.mgf = mgf
        self.damping = damping
        self.nodes = 0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        self.nodes += u.size
        return np.asarray(self.mgf(self.damping + 1j * u))


def _integrate_octave(
    cache: _MgfCache, log_k: np.ndarray, a: float, b: float, tol: float, freq: float = 0.0
):
    """Adaptive quadrature of one octave, shared MGF values for all strikes.

    The octave is pre-split so a Gauss panel never spans more than a few
    integrand oscillations, then each panel is refined by bisection.
    Returns the per-strike integral of Re(M(z) e^{-z log K} / (z (z-1))).
    """
    damping = cache.damping

    def panel(lo: float, hi: float) -> np.ndarray:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        u = mid + half * _GL_NODES
        z = damping + 1j * u
        vals = cache(u) / (z * (z - 1.0))
        re = np.real(vals[None, :] * np.exp(-np.outer(log_k, z)))
        return half * (re @ _GL_WEIGHTS)

    n0 = max(1, min(4096, int(np.ceil((b - a) * freq / 25.0))))
    edges = np.linspace(a, b, n0 + 1)
    stack = [(lo, hi, panel(lo, hi), 0) for lo, hi in zip(edges[:-1], edges[1:])]
    total = np.zeros(len(log_k))
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = panel(lo, mid)
        right = panel(mid, hi)
        err = float(np.max(np.abs(left + right - whole)))
        if err <= tol or depth >= 26:
            total += left + right
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    return total


def fourier_calls_detailed(
    mgf, strikes, damping: float, contour: ContourSpec | None = None
):
    """Undiscounted damped-inversion call values on a strike grid.

    mgf must accept a complex ndarray; it is evaluated once per quadrature
    node and shared across all strikes.  Truncation proceeds octave by
    octave until the envelope bound, improved by the empirical decay rate
    and the oscillation frequency of the transform, clears ``tail_tol``.
    """
    contour = contour or ContourSpec()
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(strikes <= 0):
        raise ValueError("strikes must be positive")
    if damping <= 1.0:
        raise ContourError(f"damping {damping} must exceed 1")
    log_k = np.log(strikes)
    cache = _MgfCache(mgf, damping)

    def envelope(u: float) -> np.ndarray:
        z = damping + 1j * u
        m = abs(complex(cache(np.array([u]))[0]))
        return m * strikes**-damping / abs(z * (z - 1.0))

    def phase_rate(u: float) -> float:
        du = max(1e-3 * u, 1e-3)
        v = cache(np.array([u, u + du]))
        ratio = complex(v[1] / v[0]) if v[0] != 0 else 1.0
        return float(np.angle(ratio)) / du

    n_strikes = len(strikes)
    total = np.zeros(n_strikes)
    active = np.ones(n_strikes, dtype=bool)
    a = 0.0
    width = 1.0
    scale = None
    freq_active = 0.0
    for _ in range(contour.max_panels):
        b = a + width
        tol = contour.rel_tol * (scale if scale is not None else 1.0)
        total[active] += _integrate_octave(cache, log_k[active], a, b, tol, freq_active)
        env_b = envelope(b)
        if scale is None:
            scale = float(max(np.max(np.abs(total)), np.max(env_b), 1e-300))
        # decay exponent across the octave and oscillation of M e^{-iu log K}
        mid = a + 0.5 * width
        ratio = np.max(envelope(mid)) / max(np.max(env_b), 1e-300)
        p = math.log(max(ratio, 1e-300)) / math.log(b / mid)
        # integrand phase grows ~ (theta - log K) u: cancellation shortens the tail
        theta = phase_rate(b)
        freq = np.maximum(np.abs(theta - log_k), 1e-300)
        span = b / max(p - 1.0, 0.1)
        tail_price = env_b * np.minimum(span, 1.0 / freq) * strikes / math.pi
        tol_price = np.maximum(contour.tail_abs, contour.tail_tol * scale * strikes / math.pi)
        active = tail_price > tol_price
        if cache.nodes > 4_000_000:
            raise QuadratureError(f"node budget exhausted at U={b:.3g}")
        if not active.any():
            prices = np.maximum(total * strikes / math.pi, 0.0)
            return prices, PriceDiagnostics(damping, b, cache.nodes)
        freq_active = float(np.max(freq[active]))
        a = b
        width *= 2.0
    raise QuadratureError(
        f"truncation tail above tolerance after {contour.max_panels} octaves (U={a:.3g})"
    )


def fourier_call_detailed(mgf, strike: float, damping: float, contour: ContourSpec | None = None):
    vals, diag = fourier_calls_detailed(mgf, [strike], damping, contour)
    return float(vals[0]), diag


def fourier_call(mgf, strike: float, damping: float, contour: ContourSpec | None = None) -> float:
    val, _ = fourier_call_detailed(mgf, strike, damping, contour)
    return val


def pick_damping(mgf, contour: ContourSpec | None = None) -> float:
    """Midpoint of the admissible damping interval inside (1, max_damping].

    Admissibility is probed by evaluating the MGF at real arguments, which
    runs exactly the instrument's printed domain conditions.
    """
    contour = contour or ContourSpec()
    if contour.damping is not None:
        return contour.damping

    def ok(r: float) -> bool:
        try:
            val = mgf(np.array([r + 0.0j]))
        except Exception:
            return False
        return bool(np.all(np.isfinite(val)))

    lo = 1.0 + 1e-9
    hi = contour.max_damping
    grid = np.linspace(lo + 1e-6, hi, 33)
    flags = np.array([ok(float(r)) for r in grid])
    if not flags.any():
        raise ContourError("no admissible damping parameter in (1, max_damping]")
    idx = np.nonzero(flags)[0]
    r_lo, r_hi = grid[idx[0]], grid[idx[-1]]
    # tighten the interval edges by bisection before taking the midpoint
    left, right = r_lo, r_hi
    if idx[0] > 0:
        a, b = grid[idx[0] - 1], r_lo
        for _ in range(25):
            m = 0.5 * (a + b)
            if ok(m):
                b = m
            else:
                a = m
        left = b
    elif ok(lo):
        left = lo
    if idx[-1] < len(grid) - 1:
        a, b = r_hi, grid[idx[-1] + 1]
        for _ in range(25):
            m = 0.5 * (a + b)
            if ok(m):
                a = m
            else:
                b = m
        right = a
    return 0.5 * (left + right)


# -- sparse transform closures -------------------------------------------------
#
# Instrument MGFs involve the argument base + z * loading, where the loading
# vector is zero on all but two or three components; contributions of the
# unloaded components cancel exactly against the normalizing terms.  The
# closures below evaluate only the loaded components, matching the reference
# implementations in aimm.model to round-off; the printed domain conditions
# are still enforced by one reference-path call at the damping before any
# contour is integrated.


def _sparse_cpi_mgf(cfg: ModelConfig, k: int, state: StateVector):
    """Fast path for E[I(T_k)^z | F_s] under the payment-date measure."""
    p = cfg.process
    horizon = cfg.tenor.horizon
    t_k = cfg.tenor.date(k)
    s = state.t
    pu = np.real(psi_product(p, horizon - t_k, cfg.u_row(k)))
    pv = np.real(psi_product(p, horizon - t_k, cfg.v_row(k)))
    bload = pv - pu
    loaded = np.nonzero(bload != 0.0)[0]
    phi_u = float(np.real(phi_product(p, horizon - t_k, cfg.u_row(k))))
    phi_v = float(np.real(phi_product(p, horizon - t_k, cfg.v_row(k))))
    log_m_s = float(
        np.real(phi_product(p, horizon - s, cfg.u_row(k)))
        + np.real(psi_product(p, horizon - s, cfg.u_row(k))) @ state.x
    )
    # z-independent part of phi_{T_k - s}(w) + psi_{T_k - s}(w) . x
    base_terms = 0.0
    for i in range(p.dim):
        if i in loaded:
            continue
        c = p.components[i]
        base_terms += float(
            np.real(c.phi(t_k - s, pu[i]) + c.psi(t_k - s, pu[i]) * state.x[i])
        )
    const0 = phi_u + base_terms - log_m_s
    const1 = phi_v - phi_u

    def mgf(z):
        z = np.asarray(z)
        expo = const0 + z * const1
        for i in loaded:
            c = p.components[i]
            w = pu[i] + z * bload[i]
            expo = expo + c.phi(t_k - s, w) + c.psi(t_k - s, w) * state.x[i]
        return np.exp(expo)

    return mgf


def _sparse_yoy_mgf(cfg: ModelConfig, k: int, j: int, state: StateVector):
    """Fast path for the year-on-year MGF (j < k)."""
    p = cfg.process
    horizon = cfg.tenor.horizon
    t_hi = cfg.tenor.date(k)
    t_lo = cfg.tenor.date(k - j)
    s = state.t
    a_k, b_k = ab_pair(cfg, t_hi, cfg.v_row(k), cfg.u_row(k))
    a_kj, b_kj = ab_pair(cfg, t_lo, cfg.v_row(k - j), cfg.u_row(k - j))
    a_k, a_kj = float(np.real(a_k)), float(np.real(a_kj))
    b_k, b_kj = np.real(b_k), np.real(b_kj)
    base_hi = np.real(psi_product(p, horizon - t_hi, cfg.u_row(k)))
    base_lo = np.real(psi_product(p, horizon - t_lo, cfg.u_row(k)))
    loaded = np.nonzero((b_k != 0.0) | (b_kj != 0.0))[0]
    # z-independent: -phi_{T_hi - s}(psi_{T-T_hi}(u_k)) - psi_{T-s}(u_k) . x
    const0 = -float(
        np.real(phi_product(p, t_hi - s, base_hi))
        + np.real(psi_product(p, horizon - s, cfg.u_row(k))) @ state.x
    )
    # unloaded components of the two nested phi applications and the psi dot
    for i in range(p.dim):
        if i in loaded:
            continue
        c = p.components[i]
        inner = complex(c.psi(t_hi - t_lo, base_hi[i])).real
        const0 += float(
            np.real(
                c.phi(t_hi - t_lo, base_hi[i])
                + c.phi(t_lo - s, inner)
                + c.psi(t_lo - s, inner) * state.x[i]
            )
        )
    const1 = a_k - a_kj

    def mgf(z):
        z = np.asarray(z)
        expo = const0 + z * const1
        for i in loaded:
            c = p.components[i]
            a1 = base_hi[i] + z * b_k[i]
            inner = c.psi(t_hi - t_lo, a1) - z * b_kj[i]
            expo = (
                expo
                + c.phi(t_hi - t_lo, a1)
                + c.phi(t_lo - s, inner)
                + c.psi(t_lo - s, inner) * state.x[i]
            )
        return np.exp(expo)

    return mgf


def _sparse_ir_mgf(cfg: ModelConfig, k: int, state: StateVector):
    """Fast path for the MGF of log(1 + delta F^k(T_{k-1})) under Q^{T_k}."""
    p = cfg.process
    horizon = cfg.tenor.horizon
    t_fix = cfg.tenor.date(k - 1)
    s = state.t
    a_fix, b_fix = ab_pair(cfg, t_fix, cfg.u_row(k - 1), cfg.u_row(k))
    a_fix = float(np.real(a_fix))
    b_fix = np.real(b_fix)
    base = np.real(psi_product(p, horizon - t_fix, cfg.u_row(k)))
    loaded = np.nonzero(b_fix != 0.0)[0]

    def mgf(z):
        z = np.asarray(z)
        expo = z * a_fix + 0.0j
        for i in loaded:
            c = p.components[i]
            arg = base[i] + z * b_fix[i]
            expo = (
                expo
                + c.phi(t_fix - s, arg)
                - c.phi(t_fix - s, base[i])
                + (c.psi(t_fix - s, arg) - c.psi(t_fix - s, base[i])) * state.x[i]
            )
        return np.exp(expo)

    return mgf, a_fix, b_fix


# -- instrument pricers -------------------------------------------------------


def _state_or_initial(cfg: ModelConfig, state: StateVector | None) -> StateVector:
    return cfg.initial_state() if state is None else state


def _discount(cfg: ModelConfig, k: int, state: StateVector) -> float:
    """P(t, T_k) with the numeraire bond marked at its time-0 quote."""
    return cfg.numeraire_df * float(martingale(cfg, cfg.u_row(k), state))


def cpi_calls_grid(cfg, k: int, strikes, state=None, contour=None):
    """CPI call prices on a strike grid, sharing the transform evaluations."""
    state = _state_or_initial(cfg, state)
    contour = contour or ContourSpec()
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(strikes <= 0):
        raise ValueError("CPI strikes must be positive")

    def mgf_ref(z):
        return mgf_log_cpi(cfg, k, z, state)

    damping = pick_damping(mgf_ref, contour)
    mgf_ref(np.array([complex(damping)]))  # printed domain conditions at the contour base
    values, diag = fourier_calls_detailed(_sparse_cpi_mgf(cfg, k, state), strikes, damping, contour)
    return _discount(cfg, k, state) * values, diag


def cpi_call_detailed(cfg, k: int, strike: float, state=None, contour=None):
    values, diag = cpi_calls_grid(cfg, k, [strike], state, contour)
    return float(values[0]), diag


def cpi_call(cfg, k: int, strike: float, state=None, contour=None) -> float:
    return cpi_call_detailed(cfg, k, strike, state, contour)[0]


def cpi_put(cfg, k: int, strike: float, state=None, contour=None) -> float:
    state = _state_or_initial(cfg, state)
    call = cpi_call(cfg, k, strike, state, contour)
    fwd = forward_cpi(cfg, k, state)
    return call - _discount(cfg, k, state) * (fwd - strike)


def inflation_caplets_grid(cfg, k: int, j: int, strikes, state=None, contour=None):
    """Inflation caplet prices on a rate-strike grid, shared transform values."""
    state = _state_or_initial(cfg, state)
    contour = contour or ContourSpec()
    span = cfg.tenor.date(k) - cfg.tenor.date(k - j)
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    gross = 1.0 + span * strikes
    if np.any(gross <= 0):
        raise ValueError("inflation strike below the attainable floor")

    def mgf_ref(z):
        return mgf_yoy(cfg, k, j, z, state)

    damping = pick_damping(mgf_ref, contour)
    mgf_ref(np.array([complex(damping)]))  # printed domain conditions at the contour base
    fast = _sparse_cpi_mgf(cfg, k, state) if j == k else _sparse_yoy_mgf(cfg, k, j, state)
    values, diag = fourier_calls_detailed(fast, gross, damping, contour)
    return _discount(cfg, k, state) * values, diag


def inflation_caplet_detailed(cfg, k: int, j: int, strike: float, state=None, contour=None):
    """Caplet on the annualized inflation over [T_{k-j}, T_k], paid at T_k."""
    values, diag = inflation_caplets_grid(cfg, k, j, [strike], state, contour)
    return float(values[0]), diag


def inflation_caplet(cfg, k: int, j: int, strike: float, state=None, contour=None) -> float:
    return inflation_caplet_detailed(cfg, k, j, strike, state, contour)[0]


def inflation_floorlet(cfg, k: int, j: int, strike: float, state=None, contour=None) -> float:
    state = _state_or_initial(cfg, state)
    cap = inflation_caplet(cfg, k, j, strike, state, contour)
    span = cfg.tenor.date(k) - cfg.tenor.date(k - j)
    fwd = forward_inflation(cfg, k, j, state)
    return cap - _discount(cfg, k, state) * span * (fwd - strike)


def _ir_mgf(cfg, k: int, state: StateVector):
    """MGF of log(1 + delta F^k(T_{k-1})) under Q^{T_k} given the state."""
    t_fix = cfg.tenor.date(k - 1)
    a_fix, b_fix = ab_pair(cfg, t_fix, cfg.u_row(k - 1), cfg.u_row(k))
    a_fix = float(np.real(a_fix))
    b_fix = np.real(b_fix)

    def mgf(z):
        z = np.asarray(z)
        w = z[..., None] * b_fix
        return np.exp(z * a_fix) * mgf_state(cfg, k, w, t_fix, state)

    return mgf, a_fix, b_fix


def ir_caplets_grid(cfg, k: int, strikes, state=None, contour=None):
    """Interest-rate caplet prices on a rate-strike grid."""
    if k < 2:
        raise ValueError("interest-rate caplets need k >= 2")
    state = _state_or_initial(cfg, state)
    contour = contour or ContourSpec()
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    gross = 1.0 + cfg.tenor.delta * strikes
    if np.any(gross <= 0):
        raise ValueError("strike below the attainable floor")
    mgf_ref, a_fix, b_fix = _ir_mgf(cfg, k, state)
    if float(np.max(np.abs(b_fix))) < 1e-14:
        # deterministic forward: payoffs collapse to their intrinsic values
        values = np.maximum(math.exp(a_fix) - gross, 0.0)
        return _discount(cfg, k, state) * values, PriceDiagnostics(0.0, 0.0, 0)
    damping = pick_damping(mgf_ref, contour)
    mgf_ref(np.array([complex(damping)]))  # printed domain conditions at the contour base
    fast, _, _ = _sparse_ir_mgf(cfg, k, state)
    values, diag = fourier_calls_detailed(fast, gross, damping, contour)
    return _discount(cfg, k, state) * values, diag


def ir_caplet_detailed(cfg, k: int, strike: float, state=None, contour=None):
    """Caplet on F^k: fixing at T_{k-1}, payment at T_k, unit notional."""
    values, diag = ir_caplets_grid(cfg, k, [strike], state, contour)
    return float(values[0]), diag


def ir_caplet(cfg, k: int, strike: float, state=None, contour=None) -> float:
    return ir_caplet_detailed(cfg, k, strike, state, contour)[0]


def ir_floorlet(cfg, k: int, strike: float, state=None, contour=None) -> float:
    state = _state_or_initial(cfg, state)
    cap = ir_caplet(cfg, k, strike, state, contour)
    from .model import forward_rate

    fwd = forward_rate(cfg, k, state)
    delta = cfg.tenor.delta
    return cap - _discount(cfg, k, state) * delta * (fwd - strike)


# -- Black / shifted-Black implied volatilities -------------------------------


def _ncdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def black_price(forward: float, strike: float, expiry: float, vol: float, kind: str = "call") -> float:
    """Undiscounted Black value of a call or put on the forward."""
    if vol <= 0 or expiry <= 0:
        intrinsic = forward - strike if kind == "call" else strike - forward
        return max(intrinsic, 0.0)
    sd = vol * math.sqrt(expiry)
    d1 = (math.log(forward / strike) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if kind == "call":
        return forward * _ncdf(d1) - strike * _ncdf(d2)
    return strike * _ncdf(-d2) - forward * _ncdf(-d1)


def implied_vol_black(
    forward: float,
    strike: float,
    expiry: float,
    price: float,
    discount: float = 1.0,
    kind: str = "call",
) -> float:
    """Unique Black vol matching the discounted price, by bisection to 1e-10."""
    if forward <= 0 or strike <= 0 or expiry <= 0 or discount <= 0:
        raise ValueError("forward, strike, expiry and discount must be positive")
    target = price / discount
    intrinsic = max(forward - strike if kind == "call" else strike - forward, 0.0)
    upper = forward if kind == "call" else strike
    if target < intrinsic - 1e-12 or target >= upper:
        raise NoSolution(
            f"price {target:.6g} outside the no-arbitrage band [{intrinsic:.6g}, {upper:.6g})"
        )
    if target <= intrinsic + 1e-300:
        return 0.0
    lo, hi = 0.0, 1.0
    while black_price(forward, strike, expiry, hi, kind) < target:
        hi *= 2.0
        if hi > 1e4:
            raise NoSolution("implied volatility above 1e4")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if black_price(forward, strike, expiry, mid, kind) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def implied_vol_shifted_black(
    forward_infl: float,
    strike: float,
    expiry: float,
    price: float,
    discount: float = 1.0,
    shift: float = 1.0,
    kind: str = "call",
) -> float:
    """Shifted-lognormal vol: Black on (shift + rate), admitting negative strikes."""
    return implied_vol_black(shift + forward_infl, shift + strike, expiry, price, discount, kind)
