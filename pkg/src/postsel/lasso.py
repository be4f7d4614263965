"""Lasso-penalized likelihood fitting by penalized IRLS.

The objective is ``J(alpha, beta) = -loglik + lam * sum_j |beta_j|`` with the
log-likelihood on the total (unscaled) scale. Gaussian fits use unit
dispersion, i.e. ``0.5 * ||y - eta||^2``; the noise variance only enters
inference. Each outer step forms the local quadratic model ``X^T W X`` and
``X^T W z`` and solves the weighted lasso by coordinate descent, with
step-halving on ``J``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import cd_gram
from .errors import ConvergenceError, DegenerateError, InputError
from .families import (
    Dataset,
    FamilySpec,
    check_data,
    deviance,
    information_rank,
    log_likelihood,
    score_eta,
    xwx,
)

logger = logging.getLogger(__name__)

ACTIVE_THRESHOLD = 1e-9
SATURATION_DEV_RATIO = 1e-3


@dataclass(frozen=True)
class PenaltySpec:
    lam: float
    penalized_cols: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise InputError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.penalized_cols is not None:
            object.__setattr__(
                self, "penalized_cols", tuple(sorted(int(j) for j in self.penalized_cols))
            )

    def resolve(self, data: Dataset) -> tuple[int, ...]:
        if self.penalized_cols is None:
            return data.penalized
        bad = set(self.penalized_cols) & set(data.unpenalized)
        if bad:
            raise InputError(f"columns {sorted(bad)} are both penalized and unpenalized")
        if any(j < 0 or j >= data.p for j in self.penalized_cols):
            raise InputError("penalized column index out of range")
        return self.penalized_cols


@dataclass(frozen=True)
class SolverControls:
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    max_outer: int = 100
    max_sweeps: int = 20000
    max_halvings: int = 30
    kkt_tol: float = 1e-6


# held-out deviance needs far less precision than inference does
CV_CONTROLS = SolverControls(inner_tol=1e-8, outer_tol=1e-6)


@dataclass(frozen=True)
class KKTReport:
    active_residuals: np.ndarray
    inactive_max_abs: float
    unpenalized_residuals: np.ndarray
    lam: float
    tol: float

    @property
    def scale(self) -> float:
        return max(1.0, self.lam)

    @property
    def violation(self) -> float:
        """Largest violation, divided by max(1, lam)."""
        parts = [0.0, max(0.0, self.inactive_max_abs - self.lam)]
        if self.active_residuals.size:
            parts.append(float(np.abs(self.active_residuals).max()))
        if self.unpenalized_residuals.size:
            parts.append(float(np.abs(self.unpenalized_residuals).max()))
        return max(parts) / self.scale

    @property
    def passed(self) -> bool:
        return self.violation <= self.tol


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    active: tuple[int, ...]
    signs: np.ndarray
    penalized: tuple[int, ...]
    unpenalized: tuple[int, ...]
    inactive_subgrad: np.ndarray
    lam: float
    family: str
    iterations: int
    max_kkt_violation: float
    objective_history: tuple[float, ...] = field(repr=False)

    @property
    def beta_hat(self) -> np.ndarray:
        return self.coef[list(self.penalized)]

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.coef[list(self.unpenalized)]

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def objective(family: FamilySpec, data: Dataset, coef, lam: float, penalized=None) -> float:
    """Penalized objective J at unit dispersion."""
    coef = np.asarray(coef, dtype=float)
    pen = data.penalized if penalized is None else penalized
    return -log_likelihood(family.unit(), data, data.X @ coef) + lam * np.abs(coef[list(pen)]).sum()


def _penalty_vector(data, penalized, lam):
    pen = np.full(data.p, np.inf)
    pen[list(data.unpenalized)] = 0.0
    pen[list(penalized)] = lam
    return pen


def _gradient(family, data, coef):
    return data.X.T @ score_eta(family, data, data.X @ coef)


def kkt_check(family: FamilySpec, data: Dataset, penalty: PenaltySpec, fit: LassoFit,
              tol: float = 1e-6) -> KKTReport:
    """Stationarity residuals of a fit: active, inactive and unpenalized blocks."""
    fam = family.unit()
    g = _gradient(fam, data, fit.coef)
    act = list(fit.active)
    mask = np.zeros(data.p, dtype=bool)
    mask[list(penalty.resolve(data))] = True
    mask[act] = False
    inactive = np.flatnonzero(mask)
    return KKTReport(
        active_residuals=g[act] - penalty.lam * fit.signs,
        inactive_max_abs=float(np.abs(g[inactive]).max()) if inactive.size else 0.0,
        unpenalized_residuals=g[list(data.unpenalized)],
        lam=penalty.lam,
        tol=tol,
    )


def _check_unpenalized(family, data):
    if family.kind == "cox":
        for j in data.unpenalized:
            col = data.X[:, j]
            if np.ptp(col) == 0:
                raise InputError(
                    f"column {data.names[j]!r} is constant; the cox model has no intercept"
                )


def fit_lasso(family: FamilySpec, data: Dataset, penalty: PenaltySpec,
              controls: SolverControls | None = None, init=None) -> LassoFit:
    """Minimize ``-loglik + lam * ||beta_pen||_1`` by penalized IRLS.

    Parameters
    ----------
    init : array, optional
        Warm start for the full coefficient vector (defaults to zeros).

    Raises
    ------
    ConvergenceError
        No convergence within ``controls.max_outer`` outer steps.
    DegenerateError
        ``lam == 0`` with a rank-deficient information matrix.
    """
    controls = controls or SolverControls()
    fam = family.unit()
    check_data(fam, data)
    _check_unpenalized(fam, data)
    penalized = penalty.resolve(data)
    lam = float(penalty.lam)
    X = data.X
    pen = _penalty_vector(data, penalized, lam)
    free = np.isfinite(pen)

    coef = np.zeros(data.p) if init is None else np.array(init, dtype=float)
    coef[~free] = 0.0

    pen_idx = np.array(penalized, dtype=int)

    def J(b):
        return -log_likelihood(fam, data, X @ b) + lam * np.abs(b[pen_idx]).sum()

    Jc = J(coef)
    history = [Jc]
    converged = False
    it = 0
    for it in range(1, controls.max_outer + 1):
        eta = X @ coef
        H = xwx(fam, data, eta, X)
        if it == 1 and lam == 0.0:
            Hf = H[np.ix_(free, free)]
            if information_rank(Hf) < Hf.shape[0]:
                raise DegenerateError("lambda = 0 with rank-deficient design: no unique minimizer")
        g = X.T @ score_eta(fam, data, eta)
        c = H @ coef + g
        b = coef.copy()
        cd_gram(H, c, pen, b, controls.inner_tol, controls.max_sweeps)
        d = b - coef
        t = 1.0
        accepted = False
        slack = 1e-13 * (1.0 + abs(Jc))
        for _ in range(controls.max_halvings + 1):
            cand = coef + t * d
            Jn = J(cand)
            if Jn <= Jc + slack:
                accepted = True
                break
            t *= 0.5
        step = float(np.abs(t * d).max()) if d.size else 0.0
        if not accepted:
            # no decrease even for tiny steps: already at the minimum to rounding
            if np.abs(d).max() < 1e3 * controls.outer_tol:
                converged = True
                break
            raise ConvergenceError("step-halving failed to decrease the objective",
                                   last_iterate=coef, violation=step)
        coef = cand
        Jc = Jn
        history.append(Jc)
        if step < controls.outer_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {controls.max_outer} iterations",
            last_iterate=coef, violation=step,
        )

    dust = pen_idx[np.abs(coef[pen_idx]) <= ACTIVE_THRESHOLD]
    coef[dust] = 0.0
    active = tuple(int(j) for j in pen_idx if coef[j] != 0.0)
    signs = np.sign(coef[list(active)])
    fit = LassoFit(
        coef=coef,
        active=active,
        signs=signs,
        penalized=tuple(penalized),
        unpenalized=data.unpenalized,
        inactive_subgrad=np.zeros(0),
        lam=lam,
        family=fam.kind,
        iterations=it,
        max_kkt_violation=0.0,
        objective_history=tuple(history),
    )
    rep = kkt_check(fam, data, penalty, fit, controls.kkt_tol)
    g = _gradient(fam, data, coef)
    inactive = pen_idx[coef[pen_idx] == 0.0]
    u = g[inactive] / lam if lam > 0 else np.zeros(len(inactive))
    object.__setattr__(fit, "inactive_subgrad", u)
    object.__setattr__(fit, "max_kkt_violation", rep.violation)
    if not rep.passed:
        logger.warning("KKT violation %.3g exceeds tolerance %.3g", rep.violation, controls.kkt_tol)
    return fit


def null_fit(family: FamilySpec, data: Dataset, controls: SolverControls | None = None) -> np.ndarray:
    """Coefficients with every penalized column at zero (unpenalized-block MLE)."""
    fam = family.unit()
    check_data(fam, data)
    if not data.unpenalized:
        return np.zeros(data.p)
    if fam.kind == "logistic":
        y = data.y
        if y.min() == y.max():
            raise DegenerateError("unpenalized-block MLE does not exist: response is constant")
    fit = fit_lasso(fam, data, PenaltySpec(0.0, penalized_cols=()), controls)
    return fit.coef


def lambda_max(family: FamilySpec, data: Dataset, penalty: PenaltySpec | None = None,
               controls: SolverControls | None = None) -> float:
    """Smallest lambda at which no penalized coefficient is active."""
    fam = family.unit()
    penalized = (penalty or PenaltySpec(0.0)).resolve(data)
    if not penalized:
        return 0.0
    coef0 = null_fit(fam, data, controls)
    g = _gradient(fam, data, coef0)
    return float(np.abs(g[list(penalized)]).max())


@dataclass(frozen=True)
class CVResult:
    lambda_cv: float
    lambdas: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    valid: np.ndarray  # folds x grid
    folds: np.ndarray  # fold label per observation


def lambda_grid(lmax: float, n_lambda: int = 50, min_ratio: float = 0.01) -> np.ndarray:
    if n_lambda == 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, np.log10(min_ratio), n_lambda)


def _fold_deviance(fam, train, test, full, test_idx, coef):
    if fam.kind == "cox":
        # Verweij & van Houwelingen: full-data minus training partial likelihood
        if test.status.sum() == 0:
            return np.nan
        return -2.0 * (log_likelihood(fam, full, full.X @ coef)
                       - log_likelihood(fam, train, train.X @ coef))
    return deviance(fam, test, test.X @ coef)


def _saturated(family, data, fit, first_dev) -> bool:
    if len(fit.active) + len(fit.unpenalized) >= data.n:
        return True
    if family.kind == "cox" or first_dev is None:
        return False
    return deviance(family, data, data.X @ fit.coef) <= SATURATION_DEV_RATIO * first_dev


def fit_path(family: FamilySpec, data: Dataset, lambdas: Sequence[float],
             penalized=None, controls: SolverControls | None = None,
             stop_saturated: bool = False) -> list:
    """Warm-started fits along a decreasing lambda sequence; failed fits are None.

    With ``stop_saturated`` the path ends (remaining entries None) once a fit
    has as many free coefficients as observations or its deviance falls
    below ``SATURATION_DEV_RATIO`` times the deviance of the first fit.
    """
    out = []
    init = None
    first_dev = None
    for k, lam in enumerate(lambdas):
        try:
            fit = fit_lasso(family, data, PenaltySpec(lam, penalized), controls, init=init)
        except ConvergenceError:
            out.append(None)
            continue
        init = fit.coef
        out.append(fit)
        if stop_saturated:
            if k == 0 and family.kind != "cox":
                first_dev = deviance(family.unit(), data, data.X @ fit.coef)
            if _saturated(family.unit(), data, fit, first_dev):
                out.extend([None] * (len(lambdas) - k - 1))
                break
    return out


def cross_validate_lambda(family: FamilySpec, data: Dataset, penalty_grid=None, folds: int = 10,
                          seed=0, n_lambda: int = 50, min_ratio: float = 0.01,
                          controls: SolverControls | None = None) -> CVResult:
    """K-fold CV over a lambda grid, choosing the minimum mean held-out deviance.

    Grid values refer to the full data; training fits use ``lam * n_train / n``
    so the per-observation penalty is the same in every fold. A fold whose
    training part loses all cases or controls (logistic), or whose held-out
    part has no events (cox), is invalid for every grid point. Fits that fail
    to converge, or that lie beyond a saturated fit on the training path, are
    invalid for that grid point only. The minimum is taken over grid points
    scored by every usable fold.
    """
    if folds < 2:
        raise InputError("need at least 2 folds")
    fam = family.unit()
    if penalty_grid is None:
        grid = lambda_grid(lambda_max(fam, data, controls=controls), n_lambda, min_ratio)
    else:
        grid = np.sort(np.asarray(penalty_grid, dtype=float))[::-1]
    if grid.size == 0:
        raise InputError("empty lambda grid")
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.zeros(1), np.zeros(1),
                        np.ones((folds, 1), dtype=bool), np.zeros(data.n, dtype=int))
    rng = np.random.default_rng(seed)
    labels = np.arange(data.n) % folds
    rng.shuffle(labels)
    dev = np.full((folds, grid.size), np.nan)
    for k in range(folds):
        test_idx = np.flatnonzero(labels == k)
        train_idx = np.flatnonzero(labels != k)
        train, test = data.subset(train_idx), data.subset(test_idx)
        if fam.kind == "logistic" and train.y.min() == train.y.max():
            continue
        if fam.kind == "cox" and (test.status.sum() == 0 or train.status.sum() == 0):
            continue
        scale = train.n / data.n
        fits = fit_path(fam, train, grid * scale, None, controls or CV_CONTROLS,
                        stop_saturated=True)
        for i, fit in enumerate(fits):
            if fit is not None:
                dev[k, i] = _fold_deviance(fam, train, test, data, test_idx, fit.coef)
    valid = np.isfinite(dev)
    counts = valid.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, np.nansum(dev, axis=0) / np.maximum(counts, 1), np.nan)
        sq = np.nansum((dev - mean) ** 2, axis=0)
        se = np.sqrt(sq / np.maximum(counts - 1, 1) / np.maximum(counts, 1))
    if not np.any(counts > 0):
        raise DegenerateError("no valid cross-validation fold")
    # compare only grid points scored by every usable fold
    best = int(np.nanargmin(np.where(counts == counts.max(), mean, np.nan)))
    return CVResult(float(grid[best]), grid, mean, se, valid, labels)
