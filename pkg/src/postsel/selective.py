"""Selective inference for lasso-penalized GLM and Cox fits.

Starting from a penalized fit with active set ``M`` and signs ``s``, the
one-step estimator takes a single Newton step in the selected model,

    theta_bar = theta_hat + I(theta_hat)^{-1} (0, lam * s),

where ``theta = (alpha, beta_M)`` stacks the unpenalized block first. The
sign event ``sign(beta_hat_M) = s`` becomes the polyhedron
``-diag(s) beta_bar <= -diag(s) [I^{-1}(0, lam s)]_M`` and each coordinate is
tested with the truncated-Gaussian pivot.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateError, DegenerateWarning, EmptySelectionError, InputError, NumericalError
from .families import Dataset, FamilySpec, information_rank, observation_scores, observed_information, score_eta
from .lasso import LassoFit
from .polyhedral import (
    PolyhedralConstraint,
    TruncatedGaussian,
    tg_interval,
    tg_pvalue,
    truncation_bounds,
)

CovarianceMethod = Literal["plugin", "pairs_bootstrap", "sandwich"]


@dataclass(frozen=True)
class OneStepEstimate:
    theta_hat: np.ndarray
    theta_bar: np.ndarray
    step: np.ndarray
    information: np.ndarray
    covariance: np.ndarray
    cols: tuple[int, ...]
    n_unpenalized: int
    active: tuple[int, ...]
    signs: np.ndarray
    lam: float
    dispersion: float
    covariance_method: str = "plugin"

    @property
    def alpha_bar(self) -> np.ndarray:
        return self.theta_bar[: self.n_unpenalized]

    @property
    def beta_bar(self) -> np.ndarray:
        return self.theta_bar[self.n_unpenalized:]

    @property
    def active_slice(self) -> slice:
        return slice(self.n_unpenalized, len(self.cols))

    def with_covariance(self, cov: np.ndarray, method: str) -> "OneStepEstimate":
        cov = np.asarray(cov, dtype=float)
        return OneStepEstimate(
            self.theta_hat, self.theta_bar, self.step, self.information, 0.5 * (cov + cov.T),
            self.cols, self.n_unpenalized, self.active, self.signs, self.lam, self.dispersion,
            method,
        )


@dataclass(frozen=True)
class SelectiveRow:
    name: str
    column: int
    penalized: bool
    beta_bar: float
    stderr: float
    vlo: float
    vhi: float
    naive_pvalue: float
    pvalue: float
    ci_lo: float
    ci_hi: float
    status: str = "ok"


@dataclass(frozen=True)
class SelectiveReport:
    rows: tuple[SelectiveRow, ...]
    lam: float
    family: str
    covariance_method: str
    level: float
    dispersion: float
    estimate: Optional[OneStepEstimate] = field(default=None, repr=False)

    def selected(self) -> tuple[SelectiveRow, ...]:
        return tuple(r for r in self.rows if r.penalized)

    @property
    def naive_pvalues(self) -> np.ndarray:
        return np.array([r.naive_pvalue for r in self.selected()])

    @property
    def pvalues(self) -> np.ndarray:
        return np.array([r.pvalue for r in self.selected()])


def estimate_sigma2(data: Dataset, cols: Sequence[int]) -> float:
    """Mean squared residual of the OLS fit on ``cols`` (degrees-of-freedom corrected).

    Requires n > p; for n <= p the noise variance must be supplied.
    """
    if data.n <= data.p:
        raise InputError("n <= p: supply sigma^2 for the gaussian family")
    Xc = data.X[:, list(cols)]
    coef, *_ = np.linalg.lstsq(Xc, data.y, rcond=None)
    r = data.y - Xc @ coef
    return float(r @ r / (data.n - len(cols)))


def _selected_cols(fit: LassoFit) -> list[int]:
    return list(fit.unpenalized) + list(fit.active)


def _solve_information(info, what="selected information"):
    rank = information_rank(info)
    if rank < info.shape[0]:
        raise DegenerateError(f"degenerate {what} (rank {rank} of {info.shape[0]})")
    return np.linalg.inv(info)


def one_step(family: FamilySpec, data: Dataset, fit: LassoFit) -> OneStepEstimate:
    """One Newton step in the selected model from the penalized solution.

    The covariance is the plug-in inverse information (times the noise
    variance for the gaussian family, estimated from the selected-model OLS
    residuals when not supplied).
    """
    if not fit.active:
        raise EmptySelectionError("nothing selected")
    cols = _selected_cols(fit)
    k = len(fit.unpenalized)
    theta_hat = fit.coef[cols]
    info = observed_information(family.unit(), data, cols, theta_hat)
    inv = _solve_information(info)
    rhs = np.concatenate([np.zeros(k), fit.lam * fit.signs])
    step = inv @ rhs
    if family.kind == "gaussian":
        sigma2 = family.dispersion if family.dispersion is not None else estimate_sigma2(data, cols)
    else:
        sigma2 = 1.0
    cov = sigma2 * inv
    return OneStepEstimate(
        theta_hat=theta_hat,
        theta_bar=theta_hat + step,
        step=step,
        information=info,
        covariance=0.5 * (cov + cov.T),
        cols=tuple(cols),
        n_unpenalized=k,
        active=fit.active,
        signs=np.asarray(fit.signs, dtype=float),
        lam=fit.lam,
        dispersion=float(sigma2),
    )


def active_constraints(est: OneStepEstimate) -> PolyhedralConstraint:
    """Sign constraints ``A theta_bar <= b`` with ``A = -diag(s) E_M``."""
    k, m = est.n_unpenalized, len(est.active)
    E = np.zeros((m, k + m))
    E[:, k:] = np.eye(m)
    D = np.diag(est.signs)
    return PolyhedralConstraint(A=-D @ E, b=-D @ (E @ est.step))


def pairs_bootstrap_cov(family: FamilySpec, data: Dataset, fit: LassoFit, B: int = 1000,
                        seed=0) -> np.ndarray:
    """Pairs-bootstrap covariance of the one-step estimator.

    Rows are resampled with replacement and, with (M, s) fixed, the one-step
    estimator is recomputed on each resample as a Newton step from the
    original penalized solution. Replicates whose selected information is
    singular are dropped; more than 10% dropped is an error.
    """
    if B < 100:
        raise InputError("pairs bootstrap needs B >= 100")
    if not fit.active:
        raise EmptySelectionError("nothing selected")
    fam = family.unit()
    cols = _selected_cols(fit)
    theta_hat = fit.coef[cols]
    seeds = np.random.SeedSequence(seed).spawn(B)
    reps = []
    dropped = 0
    for ss in seeds:
        rows = np.random.default_rng(ss).integers(0, data.n, data.n)
        sub = data.subset(rows)
        info = observed_information(fam, sub, cols, theta_hat)
        if information_rank(info) < info.shape[0]:
            dropped += 1
            continue
        Xc = sub.X[:, cols]
        grad = Xc.T @ score_eta(fam, sub, Xc @ theta_hat)
        reps.append(theta_hat + np.linalg.solve(info, grad))
    if dropped > 0.1 * B:
        raise DegenerateError(f"{dropped} of {B} bootstrap replicates had singular information")
    reps = np.asarray(reps)
    return np.atleast_2d(np.cov(reps, rowvar=False))


def sandwich_cov(family: FamilySpec, data: Dataset, fit: LassoFit,
                 est: OneStepEstimate | None = None) -> np.ndarray:
    """``I^{-1} (sum_i g_i g_i') I^{-1}`` with per-observation scores at theta_bar."""
    est = est or one_step(family, data, fit)
    fam = family.unit()
    cols = list(est.cols)
    info = observed_information(fam, data, cols, est.theta_bar)
    inv = _solve_information(info)
    G = observation_scores(fam, data, cols, est.theta_bar)
    meat = G.T @ G
    cov = inv @ meat @ inv
    cov = 0.5 * (cov + cov.T)
    if data.n <= len(cols) or np.abs(meat).max() <= 1e-20 * max(1.0, np.abs(info).max()) ** 2:
        warnings.warn("sandwich covariance is degenerate (scores vanish)", DegenerateWarning)
    return cov


def naive_pvalue(estimate: float, stderr: float, null: float = 0.0) -> float:
    return float(2.0 * ndtr(-abs(estimate - null) / stderr))


def naive_interval(estimate: float, stderr: float, level: float) -> tuple[float, float]:
    q = float(ndtri(0.5 + level / 2.0)) * stderr
    return estimate - q, estimate + q


def infer_estimate(est: OneStepEstimate, names: Sequence[str], level: float = 0.9,
                   null_value=0.0, family: str = "", constraints=None) -> SelectiveReport:
    """Per-coordinate selective p-values and intervals for a one-step estimate."""
    constr = constraints if constraints is not None else active_constraints(est)
    Sigma = est.covariance
    d = len(est.cols)
    nulls = np.broadcast_to(np.asarray(null_value, dtype=float), (len(est.active),))
    rows = []
    for i, col in enumerate(est.cols):
        val = float(est.theta_bar[i])
        var = float(Sigma[i, i])
        se = math.sqrt(var) if var > 0 else math.nan
        if i < est.n_unpenalized:
            lo, hi = naive_interval(val, se, level) if var > 0 else (math.nan, math.nan)
            p = naive_pvalue(val, se) if var > 0 else math.nan
            rows.append(SelectiveRow(names[col], col, False, val, se, -math.inf, math.inf,
                                     p, p, lo, hi, "unpenalized"))
            continue
        null = float(nulls[i - est.n_unpenalized])
        naive = naive_pvalue(val, se, null) if var > 0 else math.nan
        try:
            if not var > 0:
                raise DegenerateError("zero variance")
            gamma = np.zeros(d)
            gamma[i] = 1.0
            tb = truncation_bounds(constr, Sigma, gamma, est.theta_bar)
            tg = TruncatedGaussian(null, var, tb.vlo, tb.vhi)
            p = tg_pvalue(tg, val)
            if tb.vlo < val < tb.vhi:
                ci = tg_interval(var, tb.vlo, tb.vhi, val, level)
            else:
                raise DegenerateError("observed value on the truncation boundary")
            rows.append(SelectiveRow(names[col], col, True, val, se, tb.vlo, tb.vhi,
                                     naive, p, ci[0], ci[1]))
        except (NumericalError, InputError) as exc:
            rows.append(SelectiveRow(names[col], col, True, val, se, math.nan, math.nan,
                                     naive, math.nan, math.nan, math.nan,
                                     f"degenerate: {exc}"))
    return SelectiveReport(tuple(rows), est.lam, family, est.covariance_method, level,
                           est.dispersion, est)


def infer(family: FamilySpec, data: Dataset, fit: LassoFit, level: float = 0.9,
          covariance_method: CovarianceMethod = "plugin", null_value=0.0, B: int = 1000,
          seed=0) -> SelectiveReport:
    """Selective inference for every selected coefficient.

    Unpenalized coefficients get naive Wald inference only. A coordinate
    whose truncation is degenerate is flagged in its ``status`` and the
    others are still reported.
    """
    if not 0.0 < level < 1.0:
        raise InputError("level must be in (0, 1)")
    est = one_step(family, data, fit)
    if covariance_method == "pairs_bootstrap":
        est = est.with_covariance(pairs_bootstrap_cov(family, data, fit, B, seed), covariance_method)
    elif covariance_method == "sandwich":
        est = est.with_covariance(sandwich_cov(family, data, fit, est), covariance_method)
    elif covariance_method != "plugin":
        raise InputError(f"unknown covariance method {covariance_method!r}")
    return infer_estimate(est, data.names, level, null_value, family.kind)
