"""Arbitrage-free market model built on exponential-affine bond martingales.

Normalized nominal and inflation-linked bond prices are modeled as

    P(t, T_k) / P(t, T)     = M_t^{u_k},
    P_ILB(t, T_k) / P(t, T) = M_t^{v_k},

where M_t^w = exp(phi_{T-t}(w) + psi_{T-t}(w) . X_t) for a product process X
under the terminal forward measure.  Everything observable (forward rates,
forward CPI, forward inflation, swap rates, correlations) and the extended
moment generating functions under every forward measure follow in closed
form from the transform kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainViolation
from .processes import (
    CIR,
    CIRJump,
    OUJump,
    AffineComponent,
    DomainBound,
    ProductProcess,
    component_variance,
    domain_bound,
    phi_product,
    psi_product,
)

_KIND_TAGS = {"cir": CIR, "cir_jump": CIRJump, "ou_jump": OUJump}


@dataclass(frozen=True)
class TenorStructure:
    """Semiannual payment grid T_k = k * delta, k = 1..n, horizon T = T_n."""

    n: int
    delta: float = 0.5

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ValueError("n must be even and at least 2")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    @property
    def years(self) -> int:
        return self.n // 2

    def date(self, k: int) -> float:
        if not 0 <= k <= self.n:
            raise ValueError(f"tenor index {k} outside 0..{self.n}")
        return k * self.delta

    @property
    def dates(self) -> np.ndarray:
        return self.delta * np.arange(1, self.n + 1)


def build_u_vectors(u_tilde: np.ndarray, u_bar: np.ndarray, years: int) -> np.ndarray:
    """Assemble the nominal parameter rows from their generators.

    Row k (1-based) carries u_tilde_k on the common component, u_bar_k on
    nominal component ceil(k/2) and u_bar_{2l-1} on nominal components
    l > ceil(k/2); inflation components are zero.
    """
    n = len(u_tilde)
    if len(u_bar) != n or n != 2 * years:
        raise ValueError("generator lengths must equal the tenor count")
    d = 1 + 2 * years
    rows = np.zeros((n, d))
    for k in range(1, n + 1):
        j = (k + 1) // 2  # ceil(k/2)
        rows[k - 1, 0] = u_tilde[k - 1]
        rows[k - 1, j] = u_bar[k - 1]
        for l in range(j + 1, years + 1):
            rows[k - 1, l] = u_bar[2 * l - 2]  # u_bar_{2l-1}, 1-based
    return rows


def build_v_vectors(
    v_tilde: np.ndarray, u_bar: np.ndarray, v_bar: np.ndarray, years: int
) -> np.ndarray:
    """Inflation parameter rows: nominal entries shared with u, one extra
    loading v_bar_k on inflation component M + ceil(k/2)."""
    rows = build_u_vectors(v_tilde, u_bar, years)
    n = len(v_tilde)
    for k in range(1, n + 1):
        j = (k + 1) // 2
        rows[k - 1, years + j] = v_bar[k - 1]
    return rows


@dataclass(frozen=True)
class StateVector:
    """Driver state at a point in time."""

    t: float
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.t < 0:
            raise ValueError("time must be nonnegative")


@dataclass(frozen=True)
class ModelConfig:
    """Immutable model: tenor grid, driving processes and parameter rows.

    The process carries 1 + 2M components ordered as the common factor, M
    nominal factors (one per year) and M inflation factors.  numeraire_df is
    the market discount factor P(0, T) of the numeraire bond.
    """

    tenor: TenorStructure
    process: ProductProcess
    u_tilde: np.ndarray
    u_bar: np.ndarray
    v_tilde: np.ndarray
    v_bar: np.ndarray
    numeraire_df: float
    tilt_c: float = 0.0
    u: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m_years = self.tenor.years
        if self.process.dim != 1 + 2 * m_years:
            raise ValueError("process must have 1 + 2M components")
        if self.process.m != 1 + m_years or self.process.n != m_years:
            raise ValueError("expected 1+M nonnegative and M real-valued components")
        if abs(self.process.horizon - self.tenor.horizon) > 1e-12:
            raise ValueError("process horizon must equal the tenor horizon")
        if not 0 < self.numeraire_df <= 1:
            raise ValueError("numeraire discount factor must be in (0, 1]")
        for name in ("u_tilde", "u_bar", "v_tilde", "v_bar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        u = build_u_vectors(self.u_tilde, self.u_bar, m_years)
        v = build_v_vectors(self.v_tilde, self.u_bar, self.v_bar, m_years)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if np.any(u < -1e-12):
            raise ValueError("nominal parameter rows must be nonnegative")
        if np.any(np.diff(u, axis=0) > 1e-12):
            raise ValueError("nominal parameter rows must be componentwise decreasing")
        bound = domain_bound(self.process, self.tenor.horizon)
        for k in range(self.tenor.n):
            for row, tag in ((u[k], "u"), (v[k], "v")):
                if not bound.contains(row):
                    i = bound.violation_index(row)
                    raise DomainViolation(i, bound.upper[i], float(row[i]), f"{tag}_{k + 1}")

    @property
    def has_inflation(self) -> bool:
        return bool(np.any(self.v != self.u))

    def u_row(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.tenor.n:
            raise ValueError(f"tenor index {k} outside 1..{self.tenor.n}")
        return self.u[k - 1]

    def v_row(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.tenor.n:
            raise ValueError(f"tenor index {k} outside 1..{self.tenor.n}")
        return self.v[k - 1]

    def initial_state(self) -> StateVector:
        return StateVector(0.0, self.process.x0)

    def bound_at_horizon(self) -> DomainBound:
        return domain_bound(self.process, self.tenor.horizon)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        comps = []
        for c in self.process.components:
            tag = {CIR: "cir", CIRJump: "cir_jump", OUJump: "ou_jump"}[type(c)]
            entry = {"kind": tag}
            entry.update({k: float(v) for k, v in c.__dict__.items()})
            comps.append(entry)
        return {
            "tenor": {"n": self.tenor.n, "delta": self.tenor.delta},
            "components": comps,
            "u_tilde": self.u_tilde.tolist(),
            "u_bar": self.u_bar.tolist(),
            "v_tilde": self.v_tilde.tolist(),
            "v_bar": self.v_bar.tolist(),
            "numeraire_df": self.numeraire_df,
            "tilt_c": self.tilt_c,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        tenor = TenorStructure(n=int(data["tenor"]["n"]), delta=float(data["tenor"]["delta"]))
        comps = []
        for entry in data["components"]:
            entry = dict(entry)
            kind = _KIND_TAGS[entry.pop("kind")]
            comps.append(kind(**entry))
        process = ProductProcess(tuple(comps), horizon=tenor.horizon)
        return cls(
            tenor=tenor,
            process=process,
            u_tilde=np.asarray(data["u_tilde"]),
            u_bar=np.asarray(data["u_bar"]),
            v_tilde=np.asarray(data["v_tilde"]),
            v_bar=np.asarray(data["v_bar"]),
            numeraire_df=float(data["numeraire_df"]),
            tilt_c=float(data.get("tilt_c", 0.0)),
        )


def _require_in_V(cfg: ModelConfig, vec, what: str) -> None:
    """Eager admissibility check against the horizon-T strip."""
    bound = cfg.bound_at_horizon()
    if not bound.contains(vec):
        i = bound.violation_index(vec)
        re = np.atleast_2d(np.real(np.asarray(vec)))
        raise DomainViolation(i, bound.upper[i], float(np.max(re[..., i])), what)


# -- basic quantities -------------------------------------------------------


def martingale(cfg: ModelConfig, w, state: StateVector):
    """M_t^w = E[exp(w . X_T) | F_t] in exponential-affine closed form."""
    tau = cfg.tenor.horizon - state.t
    if tau < 0:
        raise ValueError("state time beyond the model horizon")
    expo = phi_product(cfg.process, tau, w) + psi_product(cfg.process, tau, w) @ state.x
    out = np.exp(expo)
    return out if np.iscomplexobj(out) else np.real(out)


def ab_pair(cfg: ModelConfig, t: float, w1, w2):
    """Log-ratio coefficients of M_t^{w1} / M_t^{w2}."""
    tau = cfg.tenor.horizon - t
    a = phi_product(cfg.process, tau, w1) - phi_product(cfg.process, tau, w2)
    b = psi_product(cfg.process, tau, w1) - psi_product(cfg.process, tau, w2)
    return a, b


def forward_rate(cfg: ModelConfig, k: int, state: StateVector) -> float:
    """Simple forward rate for the accrual [T_{k-1}, T_k]."""
    delta = cfg.tenor.delta
    if k == 1:
        # against the spot date: only quoted at t = 0 where P(0, T_0) = 1
        if state.t != 0.0:
            raise ValueError("the first forward rate is only defined at t = 0")
        m1 = float(martingale(cfg, cfg.u_row(1), state))
        return (1.0 / (cfg.numeraire_df * m1) - 1.0) / delta
    a, b = ab_pair(cfg, state.t, cfg.u_row(k - 1), cfg.u_row(k))
    return (float(np.exp(a + b @ state.x)) - 1.0) / delta


def forward_cpi(cfg: ModelConfig, k: int, state: StateVector) -> float:
    """Forward CPI for maturity T_k; strictly positive."""
    a, b = ab_pair(cfg, state.t, cfg.v_row(k), cfg.u_row(k))
    return float(np.exp(a + b @ state.x))


def real_bond(cfg: ModelConfig, k: int) -> float:
    """Time-0 real zero-coupon bond price, I(0) = 1."""
    state = cfg.initial_state()
    p_k = cfg.numeraire_df * float(martingale(cfg, cfg.u_row(k), state))
    return forward_cpi(cfg, k, state) * p_k


# -- extended moment generating functions -----------------------------------


def mgf_state(cfg: ModelConfig, k: int, w, r: float, state: StateVector):
    """E^{Q^{T_k}}[exp(w . X_r) | F_s] for s <= r <= T_k (measure-change MGF)."""
    s = state.t
    t_k = cfg.tenor.date(k)
    if not s <= r <= t_k:
        raise ValueError("need state time <= r <= T_k")
    p = cfg.process
    horizon = cfg.tenor.horizon
    base = psi_product(p, horizon - r, cfg.u_row(k))
    arg = base + np.asarray(w)
    _require_in_V(cfg, arg, "psi(u_k) + w")
    expo = (
        phi_product(p, r - s, arg)
        - phi_product(p, r - s, base)
        + (psi_product(p, r - s, arg) - psi_product(p, r - s, base)) @ state.x
    )
    return np.exp(expo)


def mgf_log_cpi(cfg: ModelConfig, k: int, z, state: StateVector):
    """E^{Q^{T_k}}[I(T_k)^z | F_s]; z may be a complex scalar or array."""
    s = state.t
    t_k = cfg.tenor.date(k)
    if s > t_k:
        raise ValueError("observation time after the CPI fixing")
    p = cfg.process
    horizon = cfg.tenor.horizon
    z = np.asarray(z)
    zc = z[..., None]
    pu = psi_product(p, horizon - t_k, cfg.u_row(k))
    pv = psi_product(p, horizon - t_k, cfg.v_row(k))
    w = zc * pv + (1.0 - zc) * pu
    _require_in_V(cfg, w, "z psi(v_k) + (1-z) psi(u_k)")
    phi_u = phi_product(p, horizon - t_k, cfg.u_row(k))
    phi_v = phi_product(p, horizon - t_k, cfg.v_row(k))
    log_m_s = phi_product(p, horizon - s, cfg.u_row(k)) + psi_product(
        p, horizon - s, cfg.u_row(k)
    ) @ state.x
    expo = (
        z * phi_v
        + (1.0 - z) * phi_u
        + phi_product(p, t_k - s, w)
        + psi_product(p, t_k - s, w) @ state.x
        - log_m_s
    )
    return np.exp(expo)


def mgf_two_time(cfg: ModelConfig, k: int, u, w, r: float, t: float, state: StateVector):
    """E^{Q^{T_k}}[exp(u . X_r + w . X_t) | F_s] for s <= r <= t <= T."""
    s = state.t
    if not s <= r <= t <= cfg.tenor.horizon:
        raise ValueError("need state time <= r <= t <= horizon")
    p = cfg.process
    horizon = cfg.tenor.horizon
    u = np.asarray(u)
    w = np.asarray(w)
    u_k = cfg.u_row(k)
    a1 = psi_product(p, horizon - t, u_k) + w
    _require_in_V(cfg, a1, "psi_{T-t}(u_k) + w")
    inner = psi_product(p, t - r, a1)
    _require_in_V(
        cfg, inner - psi_product(p, horizon - r, u_k) + u, "two-time second condition"
    )
    a2 = inner + u
    expo = (
        phi_product(p, t - r, a1)
        + phi_product(p, r - s, a2)
        - phi_product(p, t - s, psi_product(p, horizon - t, u_k))
        + (psi_product(p, r - s, a2) - psi_product(p, horizon - s, u_k)) @ state.x
    )
    return np.exp(expo)


def _ab_at_fixing(cfg: ModelConfig, k: int):
    """A_I^k, B_I^k: log forward-CPI coefficients frozen at the fixing T_k."""
    return ab_pair(cfg, cfg.tenor.date(k), cfg.v_row(k), cfg.u_row(k))


def mgf_yoy(cfg: ModelConfig, k: int, j: int, z, state: StateVector):
    """MGF of Y^k = log(I(T_k) / I(T_{k-j})) under Q^{T_k} given F_s.

    j = k reaches back to T_0 = 0 where the index is pinned at I(0) = 1.
    """
    if not 1 <= j <= k:
        raise ValueError("need 1 <= j <= k")
    if j == k:
        return mgf_log_cpi(cfg, k, z, state)
    z = np.asarray(z)
    zc = z[..., None]
    a_k, b_k = _ab_at_fixing(cfg, k)
    a_kj, b_kj = _ab_at_fixing(cfg, k - j)
    val = mgf_two_time(
        cfg,
        k,
        u=-zc * b_kj,
        w=zc * b_k,
        r=cfg.tenor.date(k - j),
        t=cfg.tenor.date(k),
        state=state,
    )
    return np.exp(z * (a_k - a_kj)) * val


def forward_inflation(cfg: ModelConfig, k: int, j: int, state: StateVector) -> float:
    """Annualized forward inflation rate F_I(t, T_{k-j}, T_k).

    Evaluated through the closed z = 1 reduction of the year-on-year MGF,
    which the martingale-identity tests pin against mgf_yoy(1).
    """
    if not 1 <= j <= k:
        raise ValueError("need 1 <= j <= k")
    span = cfg.tenor.date(k) - cfg.tenor.date(k - j)
    if j == k:
        return (forward_cpi(cfg, k, state) - 1.0) / span
    p = cfg.process
    horizon = cfg.tenor.horizon
    t = state.t
    t_kj = cfg.tenor.date(k - j)
    if t > t_kj:
        raise ValueError("state time after the first fixing is not supported")
    _, b_kj = _ab_at_fixing(cfg, k - j)
    q = psi_product(p, horizon - t_kj, cfg.v_row(k)) - b_kj
    _require_in_V(cfg, q, "psi(v_k) - B_I^{k-j}")
    scal = (
        phi_product(p, horizon - t_kj, cfg.u_row(k - j))
        - phi_product(p, horizon - t_kj, cfg.v_row(k - j))
        + phi_product(p, horizon - t_kj, cfg.v_row(k))
        + phi_product(p, t_kj - t, q)
        - phi_product(p, horizon - t, cfg.u_row(k))
    )
    vec = psi_product(p, t_kj - t, q) - psi_product(p, horizon - t, cfg.u_row(k))
    gross = float(np.real(np.exp(scal + vec @ state.x)))
    return (gross - 1.0) / span


# -- swap rates --------------------------------------------------------------


def zciis_rate(cfg: ModelConfig, years: int) -> float:
    """Fair fixed rate of a zero-coupon inflation swap of the given maturity."""
    if not 1 <= 2 * years <= cfg.tenor.n:
        raise ValueError("maturity beyond the tenor grid")
    state = cfg.initial_state()
    return forward_cpi(cfg, 2 * years, state) ** (1.0 / years) - 1.0


def yyiis_rate(cfg: ModelConfig, years: int) -> float:
    """Fair fixed rate of a year-on-year inflation swap (annual legs)."""
    if not 1 <= 2 * years <= cfg.tenor.n:
        raise ValueError("maturity beyond the tenor grid")
    state = cfg.initial_state()
    num = 0.0
    den = 0.0
    for m in range(1, years + 1):
        p_m = float(martingale(cfg, cfg.u_row(2 * m), state))
        num += p_m * forward_inflation(cfg, 2 * m, min(2, 2 * m), state)
        den += p_m
    return num / den


# -- correlation structure ---------------------------------------------------


def quantity_loadings(cfg: ModelConfig, selector: Sequence, t: float) -> np.ndarray:
    """State loadings of a log-quantity at time t.

    Selectors: ("forward_rate", k) for log(1 + delta F^k), ("log_cpi", k) for
    log of the forward CPI, ("yoy_inflation", k, j) for the year-on-year rate.
    """
    p = cfg.process
    horizon = cfg.tenor.horizon
    kind = selector[0]
    if kind == "forward_rate":
        k = selector[1]
        if k < 2:
            raise ValueError("forward-rate loadings need k >= 2")
        _, b = ab_pair(cfg, t, cfg.u_row(k - 1), cfg.u_row(k))
        return np.real(b)
    if kind == "log_cpi":
        k = selector[1]
        _, b = ab_pair(cfg, t, cfg.v_row(k), cfg.u_row(k))
        return np.real(b)
    if kind == "yoy_inflation":
        k, j = selector[1], selector[2]
        t_kj = cfg.tenor.date(k - j)
        if t > t_kj:
            raise ValueError("loadings only defined up to the first fixing")
        if j == k:
            _, b = ab_pair(cfg, t, cfg.v_row(k), cfg.u_row(k))
            return np.real(b)
        _, b_kj = _ab_at_fixing(cfg, k - j)
        q = psi_product(p, horizon - t_kj, cfg.v_row(k)) - b_kj
        vec = psi_product(p, t_kj - t, q) - psi_product(p, horizon - t, cfg.u_row(k))
        return np.real(vec)
    raise ValueError(f"unknown quantity selector {selector!r}")


def correlation(cfg: ModelConfig, qa: Sequence, qb: Sequence, t: float) -> float:
    """Model correlation of two log-quantities at time t under Q^T."""
    if t <= 0:
        raise ValueError("correlation requires t > 0")
    if tuple(qa) == tuple(qb):
        return 1.0
    b_a = quantity_loadings(cfg, qa, t)
    b_b = quantity_loadings(cfg, qb, t)
    var = np.array([component_variance(c, t) for c in cfg.process.components])
    cov = float(np.sum(b_a * b_b * var))
    va = float(np.sum(b_a**2 * var))
    vb = float(np.sum(b_b**2 * var))
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return min(1.0, max(-1.0, cov / np.sqrt(va * vb)))
