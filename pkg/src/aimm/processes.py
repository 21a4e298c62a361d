"""Closed-form transforms for the three driving processes and their products.

Each driving process is an affine process on its one-dimensional state space
with known coefficient functions ``phi_t(u)`` and ``psi_t(u)`` such that

    E[exp(u * X_t) | X_0 = x] = exp(phi_t(u) + psi_t(u) * x).

Three kinds are shipped: a square-root diffusion (:class:`CIR`), the same
diffusion with exponentially distributed positive jumps (:class:`CIRJump`),
and a mean-reverting Gaussian process with two-sided exponential jumps
(:class:`OUJump`).  Independent components combine into a
:class:`ProductProcess` whose phi sums and whose psi acts componentwise.

All transform evaluations broadcast over numpy arrays of complex arguments,
which the Fourier pricing layer relies on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainViolation

# Safety margin keeping evaluations strictly interior to the printed bounds.
DOMAIN_MARGIN = 0.999


def _log1p(z):
    """log(1 + z) with full relative accuracy, also for complex z.

    numpy's complex log1p loses the real part of tiny arguments; a short
    series fixes that.  Principal branch throughout; every call site
    guarantees the argument path never crosses the cut.
    """
    z = np.asarray(z)
    if not np.iscomplexobj(z):
        return np.log1p(z)
    out = np.log(1.0 + z)
    small = np.abs(z) < 1e-4
    if np.any(small):
        zs = np.where(small, z, 0.0)
        series = zs * (1 + zs * (-1 / 2 + zs * (1 / 3 + zs * (-1 / 4 + zs / 5))))
        out = np.where(small, series, out)
    return out


@dataclass(frozen=True)
class CIR:
    """Square-root diffusion dX = -lam (X - theta) dt + 2 eta sqrt(X) dW."""

    lam: float
    theta: float
    eta: float
    x0: float

    nonnegative = True

    def __post_init__(self):
        if self.lam <= 0 or self.theta < 0 or self.eta <= 0 or self.x0 < 0:
            raise ValueError(f"invalid CIR parameters: {self}")

    @property
    def strictly_positive(self) -> bool:
        return self.lam * self.theta / 2 > self.eta**2

    def _c(self, t: float) -> float:
        return (2 * self.eta**2 / self.lam) * -np.expm1(-self.lam * t)

    def bounds(self, t: float) -> tuple[float, float]:
        if t == 0.0:
            return (-np.inf, np.inf)
        return (-np.inf, 1.0 / self._c(t))

    def phi(self, t: float, u):
        if t == 0.0:
            return np.zeros_like(np.asarray(u))
        coef = self.lam * self.theta / (2 * self.eta**2)
        return -coef * _log1p(-self._c(t) * np.asarray(u))

    def psi(self, t: float, u):
        u = np.asarray(u)
        if t == 0.0:
            return u + 0.0
        return np.exp(-self.lam * t) * u / (1.0 - self._c(t) * u)


@dataclass(frozen=True)
class CIRJump:
    """CIR diffusion plus compound-Poisson jumps, exponential marks.

    Jumps have mean size 1/alpha and arrive at rate lam * beta; beta = 0
    reduces exactly to :class:`CIR`.
    """

    lam: float
    theta: float
    eta: float
    x0: float
    alpha: float
    beta: float

    nonnegative = True

    def __post_init__(self):
        if self.lam <= 0 or self.theta < 0 or self.eta <= 0 or self.x0 < 0:
            raise ValueError(f"invalid CIRJump parameters: {self}")
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError(f"invalid CIRJump jump parameters: {self}")

    @property
    def strictly_positive(self) -> bool:
        return self.lam * self.theta / 2 > self.eta**2

    def _diffusion(self) -> CIR:
        return CIR(self.lam, self.theta, self.eta, self.x0)

    def _g(self, t: float) -> float:
        q = 2 * self.eta**2 * self.alpha / self.lam
        return np.exp(-self.lam * t) + -np.expm1(-self.lam * t) * q

    def bounds(self, t: float) -> tuple[float, float]:
        if t == 0.0:
            return (-np.inf, np.inf)
        _, b_diff = self._diffusion().bounds(t)
        return (-np.inf, min(b_diff, self.alpha / self._g(t), self.alpha))

    def phi(self, t: float, u):
        u = np.asarray(u)
        if t == 0.0:
            return np.zeros_like(u)
        base = self._diffusion().phi(t, u)
        if self.beta == 0.0:
            return base
        q = 2 * self.eta**2 * self.alpha / self.lam
        em = -np.expm1(-self.lam * t)  # 1 - exp(-lam t)
        if q == 1.0:
            jump = self.beta * u * em / (self.alpha - u)
        else:
            # (beta/(1-q)) * log((alpha - u g)/(alpha - u)), cancellation-free
            x = u * (q - 1.0) * em / (self.alpha - u)
            jump = (self.beta / (1.0 - q)) * _log1p(-x)
        return base + jump

    def psi(self, t: float, u):
        return self._diffusion().psi(t, u)


@dataclass(frozen=True)
class OUJump:
    """Gaussian OU process with two-sided compound-Poisson jumps.

    dX = -lam (X - theta) dt + sigma dW + dL, where L has positive jumps of
    mean 1/alpha_plus at rate lam * beta_plus and negative jumps of mean
    1/alpha_minus at rate lam * beta_minus.  Real-valued state.
    """

    lam: float
    theta: float
    sigma: float
    x0: float
    alpha_plus: float = 30.0
    beta_plus: float = 0.0
    alpha_minus: float = 30.0
    beta_minus: float = 0.0

    nonnegative = False

    def __post_init__(self):
        if self.lam <= 0 or self.sigma < 0:
            raise ValueError(f"invalid OUJump parameters: {self}")
        if self.alpha_plus <= 0 or self.alpha_minus <= 0:
            raise ValueError(f"invalid OUJump jump parameters: {self}")
        if self.beta_plus < 0 or self.beta_minus < 0:
            raise ValueError(f"invalid OUJump jump parameters: {self}")

    def bounds(self, t: float) -> tuple[float, float]:
        if t == 0.0:
            return (-np.inf, np.inf)
        lo = -self.alpha_minus if self.beta_minus > 0 else -np.inf
        hi = self.alpha_plus if self.beta_plus > 0 else np.inf
        return (lo, hi)

    def phi(self, t: float, u):
        u = np.asarray(u)
        if t == 0.0:
            return np.zeros_like(u)
        s = np.exp(-self.lam * t)
        em = -np.expm1(-self.lam * t)
        out = (
            self.sigma**2 * u**2 / (4 * self.lam) * -np.expm1(-2 * self.lam * t)
            + self.theta * u * em
        )
        if self.beta_plus > 0:
            out = out + self.beta_plus * _log1p(u * em / (self.alpha_plus - u))
        if self.beta_minus > 0:
            out = out + self.beta_minus * _log1p(-u * em / (self.alpha_minus + u))
        return out

    def psi(self, t: float, u):
        u = np.asarray(u)
        if t == 0.0:
            return u + 0.0
        return np.exp(-self.lam * t) * u


AffineComponent = Union[CIR, CIRJump, OUJump]


def _check_domain(c: AffineComponent, t: float, u, index: int = -1) -> None:
    lo, hi = c.bounds(t)
    re = np.real(np.asarray(u))
    hi_eff = hi * DOMAIN_MARGIN if np.isfinite(hi) else hi
    lo_eff = lo * DOMAIN_MARGIN if np.isfinite(lo) else lo
    worst_hi = float(np.max(re)) if re.size else 0.0
    worst_lo = float(np.min(re)) if re.size else 0.0
    if worst_hi >= hi_eff:
        raise DomainViolation(index, hi, worst_hi)
    if worst_lo <= lo_eff:
        raise DomainViolation(index, lo, worst_lo)


def phi_component(c: AffineComponent, t: float, u, index: int = -1):
    """phi_t(u) of a single component, with domain check."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_domain(c, t, u, index)
    return c.phi(t, u)


def psi_component(c: AffineComponent, t: float, u, index: int = -1):
    """psi_t(u) of a single component, with domain check."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_domain(c, t, u, index)
    return c.psi(t, u)


@dataclass(frozen=True)
class DomainBound:
    """Componentwise admissible strip for the real part of transform arguments."""

    lower: np.ndarray
    upper: np.ndarray

    def contains(self, u, margin: float = DOMAIN_MARGIN) -> bool:
        re = np.real(np.asarray(u))
        lo = np.where(np.isfinite(self.lower), self.lower * margin, self.lower)
        hi = np.where(np.isfinite(self.upper), self.upper * margin, self.upper)
        return bool(np.all(re < hi) and np.all(re > lo))

    def violation_index(self, u, margin: float = DOMAIN_MARGIN) -> int:
        """Index of the first violating component, or -1 if admissible."""
        re = np.atleast_2d(np.real(np.asarray(u)))
        lo = np.where(np.isfinite(self.lower), self.lower * margin, self.lower)
        hi = np.where(np.isfinite(self.upper), self.upper * margin, self.upper)
        bad = np.any(re >= hi, axis=0) | np.any(re <= lo, axis=0)
        idx = np.nonzero(bad)[0]
        return int(idx[0]) if idx.size else -1


class _StackedParams:
    """Per-kind parameter arrays so product transforms evaluate in bulk."""

    def __init__(self, components: tuple[AffineComponent, ...]):
        sq = [(i, c) for i, c in enumerate(components) if isinstance(c, (CIR, CIRJump))]
        ou = [(i, c) for i, c in enumerate(components) if isinstance(c, OUJump)]
        self.sq_idx = np.array([i for i, _ in sq], dtype=int)
        self.ou_idx = np.array([i for i, _ in ou], dtype=int)
        get = lambda items, name, default: np.array(
            [getattr(c, name, default) for _, c in items], dtype=float
        )
        self.sq_lam = get(sq, "lam", 0.0)
        self.sq_theta = get(sq, "theta", 0.0)
        self.sq_eta = get(sq, "eta", 1.0)
        self.sq_alpha = get(sq, "alpha", 1.0)
        self.sq_beta = get(sq, "beta", 0.0)
        self.ou_lam = get(ou, "lam", 1.0)
        self.ou_theta = get(ou, "theta", 0.0)
        self.ou_sigma = get(ou, "sigma", 0.0)
        self.ou_ap = get(ou, "alpha_plus", 1.0)
        self.ou_bp = get(ou, "beta_plus", 0.0)
        self.ou_am = get(ou, "alpha_minus", 1.0)
        self.ou_bm = get(ou, "beta_minus", 0.0)
        with np.errstate(divide="ignore"):
            self.sq_q = 2.0 * self.sq_eta**2 * self.sq_alpha / self.sq_lam
        self._bounds_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def bounds(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        cached = self._bounds_cache.get(t)
        if cached is not None:
            return cached
        d = len(self.sq_idx) + len(self.ou_idx)
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        if t == 0.0:
            return lo, hi
        if self.sq_idx.size:
            em = -np.expm1(-self.sq_lam * t)
            c = (2.0 * self.sq_eta**2 / self.sq_lam) * em
            b = 1.0 / c
            jumpy = self.sq_beta > 0
            g = np.exp(-self.sq_lam * t) + em * self.sq_q
            b = np.where(jumpy, np.minimum(b, np.minimum(self.sq_alpha / g, self.sq_alpha)), b)
            hi[self.sq_idx] = b
        if self.ou_idx.size:
            hi[self.ou_idx] = np.where(self.ou_bp > 0, self.ou_ap, np.inf)
            lo[self.ou_idx] = np.where(self.ou_bm > 0, -self.ou_am, -np.inf)
        if len(self._bounds_cache) < 4096:
            self._bounds_cache[t] = (lo, hi)
        return lo, hi

    def phi(self, t: float, u: np.ndarray) -> np.ndarray:
        """Componentwise phi, u of shape (..., d); no domain checks."""
        out = np.zeros(u.shape, dtype=u.dtype if np.iscomplexobj(u) else float)
        if t == 0.0:
            return out
        if self.sq_idx.size:
            ug = u[..., self.sq_idx]
            em = -np.expm1(-self.sq_lam * t)
            c = (2.0 * self.sq_eta**2 / self.sq_lam) * em
            vals = -(self.sq_lam * self.sq_theta / (2.0 * self.sq_eta**2)) * _log1p(-c * ug)
            jumpy = self.sq_beta > 0
            if jumpy.any():
                qm1 = self.sq_q - 1.0
                safe = np.where(qm1 == 0.0, 1.0, qm1)
                x = ug * safe * em / (self.sq_alpha - ug)
                with np.errstate(divide="ignore", invalid="ignore"):
                    jump = (self.sq_beta / -safe) * _log1p(-x)
                limit = self.sq_beta * ug * em / (self.sq_alpha - ug)
                jump = np.where(qm1 == 0.0, limit, jump)
                vals = vals + np.where(jumpy, jump, 0.0)
            out[..., self.sq_idx] = vals
        if self.ou_idx.size:
            ug = u[..., self.ou_idx]
            s = np.exp(-self.ou_lam * t)
            em = -np.expm1(-self.ou_lam * t)
            vals = (
                self.ou_sigma**2 * ug**2 / (4.0 * self.ou_lam) * -np.expm1(-2.0 * self.ou_lam * t)
                + self.ou_theta * ug * em
            )
            if (self.ou_bp > 0).any():
                term = self.ou_bp * _log1p(ug * em / (self.ou_ap - ug))
                vals = vals + np.where(self.ou_bp > 0, term, 0.0)
            if (self.ou_bm > 0).any():
                term = self.ou_bm * _log1p(-ug * em / (self.ou_am + ug))
                vals = vals + np.where(self.ou_bm > 0, term, 0.0)
            out[..., self.ou_idx] = vals
        return out

    def psi(self, t: float, u: np.ndarray) -> np.ndarray:
        if t == 0.0:
            return u + 0.0
        out = np.empty(u.shape, dtype=u.dtype if np.iscomplexobj(u) else float)
        if self.sq_idx.size:
            ug = u[..., self.sq_idx]
            em = -np.expm1(-self.sq_lam * t)
            c = (2.0 * self.sq_eta**2 / self.sq_lam) * em
            out[..., self.sq_idx] = np.exp(-self.sq_lam * t) * ug / (1.0 - c * ug)
        if self.ou_idx.size:
            out[..., self.ou_idx] = np.exp(-self.ou_lam * t) * u[..., self.ou_idx]
        return out


@dataclass(frozen=True)
class ProductProcess:
    """Ordered product of independent components, nonnegative kinds first."""

    components: tuple[AffineComponent, ...]
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        seen_real = False
        for c in self.components:
            if c.nonnegative and seen_real:
                raise ValueError("nonnegative components must precede real-valued ones")
            seen_real = seen_real or not c.nonnegative
        if self.m < 1:
            raise ValueError("at least one nonnegative component required")
        object.__setattr__(self, "_stacked", _StackedParams(self.components))

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def m(self) -> int:
        return sum(1 for c in self.components if c.nonnegative)

    @property
    def n(self) -> int:
        return self.dim - self.m

    @property
    def x0(self) -> np.ndarray:
        return np.array([c.x0 for c in self.components], dtype=float)


def domain_bound(p: ProductProcess, t: float) -> DomainBound:
    """Componentwise admissible strip at horizon t.

    Each printed per-kind bound is non-increasing in the horizon, so the
    fixed-t evaluation coincides with the infimum over [0, t].
    """
    lo, hi = p._stacked.bounds(t)
    return DomainBound(lo, hi)


def _checked_argument(p: ProductProcess, t: float, u) -> np.ndarray:
    u = np.asarray(u)
    if u.shape[-1] != p.dim:
        raise ValueError(f"argument has {u.shape[-1]} components, process has {p.dim}")
    lo, hi = p._stacked.bounds(t)
    re = np.real(u)
    hi_eff = np.where(np.isfinite(hi), hi * DOMAIN_MARGIN, hi)
    lo_eff = np.where(np.isfinite(lo), lo * DOMAIN_MARGIN, lo)
    bad = (re >= hi_eff) | (re <= lo_eff)
    if bad.any():
        flat = np.atleast_2d(bad.reshape(-1, p.dim))
        i = int(np.nonzero(flat.any(axis=0))[0][0])
        col = np.atleast_2d(re.reshape(-1, p.dim))[:, i]
        worst = float(np.max(col)) if np.max(col) >= hi_eff[i] else float(np.min(col))
        bound = hi[i] if np.max(col) >= hi_eff[i] else lo[i]
        raise DomainViolation(i, float(bound), worst)
    return u


def phi_product(p: ProductProcess, t: float, u):
    """Sum of component phis; u has shape (..., dim)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    u = _checked_argument(p, t, u)
    return p._stacked.phi(t, u).sum(axis=-1)


def psi_product(p: ProductProcess, t: float, u):
    """Componentwise psi; u has shape (..., dim), result the same shape."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    u = _checked_argument(p, t, u)
    return p._stacked.psi(t, u)


def component_variance(c: AffineComponent, t: float, x0: float | None = None) -> float:
    """Var[X_t] from the second u-derivative of phi_t(u) + psi_t(u) x0 at 0.

    Central finite differences with one Richardson extrapolation; the step is
    scaled by the domain bound so both evaluation points stay interior.
    """
    if t == 0.0:
        return 0.0
    if x0 is None:
        x0 = c.x0
    lo, hi = c.bounds(t)
    scale = min(hi if np.isfinite(hi) else 1.0, -lo if np.isfinite(lo) else 1.0, 1.0)
    h = 1e-5 * scale

    def f(u: float) -> float:
        return float(np.real(c.phi(t, u) + c.psi(t, u) * x0))

    def second_diff(step: float) -> float:
        return (f(step) - 2.0 * f(0.0) + f(-step)) / step**2

    d1 = second_diff(h)
    d2 = second_diff(h / 2)
    return (4.0 * d2 - d1) / 3.0


def component_mean(c: AffineComponent, t: float, x0: float | None = None) -> float:
    """E[X_t] from the first u-derivative at 0 (central differences)."""
    if x0 is None:
        x0 = c.x0
    if t == 0.0:
        return float(x0)
    lo, hi = c.bounds(t)
    scale = min(hi if np.isfinite(hi) else 1.0, -lo if np.isfinite(lo) else 1.0, 1.0)
    h = 1e-6 * scale

    def f(u: float) -> float:
        return float(np.real(c.phi(t, u) + c.psi(t, u) * x0))

    return (f(h) - f(-h)) / (2 * h)
