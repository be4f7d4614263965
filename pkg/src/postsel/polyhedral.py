"""Polyhedral conditioning and truncated-Gaussian pivots.

For ``y ~ N(mu, Sigma)`` and a polyhedron ``{A y <= b}``, the event is
equivalent to ``vlo <= gamma'y <= vhi`` (plus ``v0 >= 0``) where the limits
depend on ``y`` only through ``r = (I - c gamma') y`` with
``c = Sigma gamma / (gamma' Sigma gamma)``. Conditional on the event,
``gamma'y`` is Gaussian truncated to ``[vlo, vhi]``.

The CDF is evaluated through log tail probabilities so truncation intervals
deep in either tail keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import DegenerateError, InputError

FEASIBILITY_TOL = 1e-8
ZERO_ROW_RTOL = 1e-11
ROOT_TOL = 1e-8
MAX_BRACKET_SD = 1e6

Alternative = Literal["two_sided", "greater", "less"]


@dataclass(frozen=True)
class PolyhedralConstraint:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.size == 0:
            A = A.reshape(0, A.shape[1] if A.ndim == 2 else 0)
        if A.shape[0] != b.shape[0]:
            raise InputError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("constraints must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def slack(self, y) -> np.ndarray:
        return self.b - self.A @ np.asarray(y, dtype=float)

    def holds(self, y, tol: float = FEASIBILITY_TOL) -> bool:
        return bool(np.all(self.slack(y) >= -tol))


@dataclass(frozen=True)
class TruncationBounds:
    vlo: float
    vhi: float
    v0: float


@dataclass(frozen=True)
class TruncatedGaussian:
    mu: float
    sigma2: float
    vlo: float = -math.inf
    vhi: float = math.inf

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InputError("sigma2 must be positive")
        if not self.vlo < self.vhi:
            raise InputError(f"empty truncation interval [{self.vlo}, {self.vhi}]")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def cdf(self, x: float) -> float:
        return tg_cdf(self, x)


def truncation_bounds(constr: PolyhedralConstraint, Sigma, gamma, y,
                      tol: float = FEASIBILITY_TOL) -> TruncationBounds:
    """Truncation limits of ``gamma'y`` implied by ``{A y <= b}``."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    gamma = np.asarray(gamma, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    s_gamma = Sigma @ gamma
    v = float(gamma @ s_gamma)
    if not v > 0:
        raise InputError("gamma' Sigma gamma must be positive")
    if constr.m == 0:
        return TruncationBounds(-math.inf, math.inf, math.inf)
    slack = constr.slack(y)
    if np.any(slack < -tol):
        raise InputError(
            f"constraints violated at the observed point (max violation {-slack.min():.3g})"
        )
    c = s_gamma / v
    r = y - c * (gamma @ y)
    Ac = constr.A @ c
    resid = constr.b - constr.A @ r
    thresh = ZERO_ROW_RTOL * np.linalg.norm(c) * np.linalg.norm(constr.A, axis=1)
    neg = Ac < -thresh
    pos = Ac > thresh
    zero = ~(neg | pos)
    vlo = float(np.max(resid[neg] / Ac[neg])) if neg.any() else -math.inf
    vhi = float(np.min(resid[pos] / Ac[pos])) if pos.any() else math.inf
    v0 = float(np.min(resid[zero])) if zero.any() else math.inf
    # rounding in the feasibility slack can push the observed value just outside
    obs = float(gamma @ y)
    vlo = min(vlo, obs)
    vhi = max(vhi, obs)
    return TruncationBounds(vlo, vhi, v0)


def _log_mass(lo: float, hi: float) -> float:
    """log P(lo < Z < hi) for standard normal Z, accurate in both tails."""
    if not lo < hi:
        return -math.inf
    if lo >= 0.0:
        # upper tail: Q(lo) - Q(hi) with Q(t) = Phi(-t)
        a = float(log_ndtr(-lo))
        bq = float(log_ndtr(-hi)) if hi < math.inf else -math.inf
    elif hi <= 0.0:
        a = float(log_ndtr(hi))
        bq = float(log_ndtr(lo)) if lo > -math.inf else -math.inf
    else:
        # straddles zero: both omitted tails are at most 1/2
        return math.log1p(-float(ndtr(lo)) - float(ndtr(-hi)))
    if not math.isfinite(a):
        return -math.inf
    frac = -math.expm1(bq - a)
    return a + math.log(frac) if frac > 0.0 else -math.inf


def _standardize(tg: TruncatedGaussian, x: float):
    s = tg.sigma
    return (tg.vlo - tg.mu) / s, (tg.vhi - tg.mu) / s, (x - tg.mu) / s


def tg_cdf(tg: TruncatedGaussian, x: float) -> float:
    """CDF of the truncated Gaussian at ``x``."""
    x = float(x)
    if math.isnan(x):
        raise InputError("x must not be NaN")
    if x <= tg.vlo:
        return 0.0
    if x >= tg.vhi:
        return 1.0
    a, b, z = _standardize(tg, x)
    den = _log_mass(a, b)
    if not math.isfinite(den):
        raise DegenerateError("degenerate truncation: interval has no Gaussian mass")
    return min(1.0, max(0.0, math.exp(_log_mass(a, z) - den)))


def tg_sf(tg: TruncatedGaussian, x: float) -> float:
    """Survival function ``1 - F(x)``, computed directly for accuracy near 1."""
    x = float(x)
    if x <= tg.vlo:
        return 1.0
    if x >= tg.vhi:
        return 0.0
    a, b, z = _standardize(tg, x)
    den = _log_mass(a, b)
    if not math.isfinite(den):
        raise DegenerateError("degenerate truncation: interval has no Gaussian mass")
    return min(1.0, max(0.0, math.exp(_log_mass(z, b) - den)))


def tg_pvalue(tg: TruncatedGaussian, x: float, alternative: Alternative = "two_sided") -> float:
    """P-value of the observation ``x`` under the mean ``tg.mu``."""
    if alternative == "greater":
        return tg_sf(tg, x)
    if alternative == "less":
        return tg_cdf(tg, x)
    if alternative != "two_sided":
        raise InputError(f"unknown alternative {alternative!r}")
    return min(1.0, 2.0 * min(tg_cdf(tg, x), tg_sf(tg, x)))


def _solve_mu(sigma2, vlo, vhi, x, target):
    """Find mu with F_mu(x) = target; F is decreasing in mu."""
    sigma = math.sqrt(sigma2)

    def f(mu):
        tg = TruncatedGaussian(mu, sigma2, vlo, vhi)
        # compare on the smaller tail for precision
        if target > 0.5:
            return (1.0 - target) - tg_sf(tg, x)
        return tg_cdf(tg, x) - target

    limit = MAX_BRACKET_SD * sigma
    lo = hi = x
    step = sigma
    # F_mu(x) - target is decreasing in mu for target < 0.5; for target > 0.5 the
    # comparison (1 - target) - sf is also decreasing
    flo = f(lo)
    fhi = flo
    while flo < 0:
        hi, fhi = lo, flo
        lo = x - step
        step *= 2.0
        if abs(lo - x) > limit:
            return -math.inf
        flo = f(lo)
    step = sigma
    while fhi > 0:
        lo, flo = hi, fhi
        hi = x + step
        step *= 2.0
        if abs(hi - x) > limit:
            return math.inf
        fhi = f(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(mid)) + 1e-14 * sigma:
            break
    return 0.5 * (lo + hi)


def tg_interval(sigma2: float, vlo: float, vhi: float, x: float,
                level: float = 0.9) -> tuple[float, float]:
    """Confidence interval for the mean by inverting the truncated-Gaussian pivot.

    Returns ``{mu : alpha/2 <= F_mu(x) <= 1 - alpha/2}``. An endpoint that
    would lie beyond ``1e6 * sigma`` from ``x`` is reported as infinite.
    """
    if not 0.0 < level < 1.0:
        raise InputError("level must be in (0, 1)")
    if not vlo < x < vhi:
        raise InputError(f"x={x} must lie strictly inside ({vlo}, {vhi})")
    alpha = 1.0 - level
    if math.isinf(vlo) and math.isinf(vhi):
        q = float(ndtri(1.0 - alpha / 2.0)) * math.sqrt(sigma2)
        return x - q, x + q
    lower = _solve_mu(sigma2, vlo, vhi, x, 1.0 - alpha / 2.0)
    upper = _solve_mu(sigma2, vlo, vhi, x, alpha / 2.0)
    return lower, upper
