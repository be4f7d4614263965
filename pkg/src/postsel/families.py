"""Likelihood families: Gaussian, logistic and Cox (Breslow ties).

Every family is described through the linear predictor ``eta``: the
log-likelihood, its gradient ``g = dl/deta`` and the negative Hessian
``W = -d2l/deta deta^T``. Regression-level quantities (``X^T W X`` and
per-observation scores) are derived from these.

Additive constants that do not depend on the coefficients are dropped in
every family, so log-likelihood values are only comparable within a family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import InputError

FamilyKind = Literal["gaussian", "logistic", "cox"]

PROB_CLAMP = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus a response.

    ``X`` holds every column, including unpenalized ones such as an intercept
    (listed in ``unpenalized``). For survival data ``y`` holds the times and
    ``status`` the event indicators.
    """

    X: np.ndarray
    y: np.ndarray
    status: Optional[np.ndarray] = None
    unpenalized: tuple[int, ...] = ()
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise InputError("X must be a 2-d array")
        n, p = X.shape
        if n < 2:
            raise InputError(f"need at least 2 observations, got {n}")
        if y.shape[0] != n:
            raise InputError(f"response has {y.shape[0]} entries, X has {n} rows")
        if not np.all(np.isfinite(X)):
            raise InputError("X contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise InputError("response contains non-finite entries")
        status = self.status
        if status is not None:
            status = np.asarray(status, dtype=float).ravel()
            if status.shape[0] != n:
                raise InputError("status length does not match X")
            if not np.all(np.isin(status, (0.0, 1.0))):
                raise InputError("status must be 0/1")
        unpen = tuple(sorted(int(j) for j in self.unpenalized))
        if len(set(unpen)) != len(unpen) or any(j < 0 or j >= p for j in unpen):
            raise InputError(f"unpenalized columns {unpen} out of range for p={p}")
        names = self.names
        if names is None:
            names = tuple(f"X{j + 1}" for j in range(p))
        elif len(names) != p:
            raise InputError("names length does not match number of columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "unpenalized", unpen)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def penalized(self) -> tuple[int, ...]:
        u = set(self.unpenalized)
        return tuple(j for j in range(self.p) if j not in u)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            X=self.X[rows],
            y=self.y[rows],
            status=None if self.status is None else self.status[rows],
            unpenalized=self.unpenalized,
            names=self.names,
        )

    def select_columns(self, cols: Sequence[int]) -> "Dataset":
        cols = list(cols)
        pos = {c: i for i, c in enumerate(cols)}
        return Dataset(
            X=self.X[:, cols],
            y=self.y,
            status=self.status,
            unpenalized=tuple(pos[j] for j in self.unpenalized if j in pos),
            names=tuple(self.names[c] for c in cols),
        )


@dataclass(frozen=True)
class FamilySpec:
    kind: FamilyKind = "gaussian"
    dispersion: Optional[float] = None
    tie_method: Literal["breslow"] = "breslow"

    def __post_init__(self):
        if self.kind not in ("gaussian", "logistic", "cox"):
            raise InputError(f"unknown family {self.kind!r}")
        if self.tie_method != "breslow":
            raise InputError("only Breslow ties are supported")
        if self.dispersion is not None and not self.dispersion > 0:
            raise InputError("dispersion must be positive")

    @property
    def scale(self) -> float:
        """Dispersion actually used in the likelihood (1 unless gaussian with sigma^2)."""
        if self.kind == "gaussian" and self.dispersion is not None:
            return float(self.dispersion)
        return 1.0

    def unit(self) -> "FamilySpec":
        """Same family at unit dispersion; the lasso is always fit on this scale."""
        if self.kind == "gaussian":
            return FamilySpec("gaussian", None)
        return self

    def with_dispersion(self, sigma2: float) -> "FamilySpec":
        return FamilySpec(self.kind, sigma2, self.tie_method)


@dataclass(frozen=True)
class LocalQuadratic:
    W: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    loglik: float


def check_data(family: FamilySpec, data: Dataset) -> None:
    """Family-specific response checks."""
    if family.kind == "logistic":
        if not np.all(np.isin(data.y, (0.0, 1.0))):
            raise InputError("logistic response must be 0/1")
    elif family.kind == "cox":
        if data.status is None:
            raise InputError("cox family requires a status vector")
        if np.any(data.y <= 0):
            raise InputError("survival times must be strictly positive")
        if data.status.sum() == 0:
            raise InputError("no events in survival data")


def _check_eta(eta, n):
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.shape[0] != n:
        raise InputError(f"eta has length {eta.shape[0]}, expected {n}")
    if not np.all(np.isfinite(eta)):
        raise InputError("eta contains non-finite entries")
    return eta


# ---------------------------------------------------------------------------
# Cox partial likelihood pieces. Rows are sorted by time; with Breslow ties
# the risk set of sorted row i is every sorted row from ``start[i]`` onward.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CoxState:
    order: np.ndarray
    start: np.ndarray
    d: np.ndarray  # status in sorted order
    w: np.ndarray  # exp(eta - shift), sorted
    S: np.ndarray  # risk-set sums of w at each sorted row's start
    shift: float


def _cox_state(data: Dataset, eta: np.ndarray) -> _CoxState:
    order = np.argsort(data.y, kind="mergesort")
    t = data.y[order]
    start = np.searchsorted(t, t, side="left")
    d = data.status[order]
    e = eta[order]
    shift = float(e.max())
    w = np.exp(e - shift)
    rc = np.cumsum(w[::-1])[::-1]
    return _CoxState(order, start, d, w, rc[start], shift)


def _cox_cumulative(st: _CoxState, values: np.ndarray) -> np.ndarray:
    """sum over events i with start[i] <= k of values[i], for each sorted k."""
    acc = np.zeros((st.d.shape[0],) + values.shape[1:])
    np.add.at(acc, st.start, values)
    return np.cumsum(acc, axis=0)


def _cox_loglik(data, eta):
    st = _cox_state(data, eta)
    e = eta[st.order]
    ev = st.d > 0
    return float(np.sum(e[ev] - (np.log(st.S[ev]) + st.shift)))


def _cox_grad(data, eta):
    st = _cox_state(data, eta)
    A = _cox_cumulative(st, st.d / st.S)
    g_sorted = st.d - st.w * A
    g = np.empty_like(g_sorted)
    g[st.order] = g_sorted
    return g


def _cox_W(data, eta):
    st = _cox_state(data, eta)
    A = _cox_cumulative(st, st.d / st.S)
    B = _cox_cumulative(st, st.d / st.S**2)
    n = st.d.shape[0]
    idx = np.arange(n)
    Bmin = B[np.minimum.outer(idx, idx)]
    Ws = -np.outer(st.w, st.w) * Bmin
    Ws[idx, idx] += st.w * A
    W = np.empty_like(Ws)
    W[np.ix_(st.order, st.order)] = Ws
    return W


def _cox_xwx(data, eta, X):
    st = _cox_state(data, eta)
    Xs = X[st.order]
    A = _cox_cumulative(st, st.d / st.S)
    first = (Xs * (st.w * A)[:, None]).T @ Xs
    M = np.cumsum((Xs * st.w[:, None])[::-1], axis=0)[::-1]
    ev = st.d > 0
    Mi = M[st.start[ev]]
    c = 1.0 / st.S[ev] ** 2
    second = (Mi * c[:, None]).T @ Mi
    H = first - second
    return 0.5 * (H + H.T)


def _cox_scores(data, eta, X):
    st = _cox_state(data, eta)
    Xs = X[st.order]
    M = np.cumsum((Xs * st.w[:, None])[::-1], axis=0)[::-1]
    xbar = M[st.start] / st.S[:, None]
    A = _cox_cumulative(st, st.d / st.S)
    C = _cox_cumulative(st, xbar * (st.d / st.S)[:, None])
    U_sorted = st.d[:, None] * (Xs - xbar) - st.w[:, None] * (Xs * A[:, None] - C)
    U = np.empty_like(U_sorted)
    U[st.order] = U_sorted
    return U


# ---------------------------------------------------------------------------
# Public interface
# ---------------------------------------------------------------------------


def log_likelihood(family: FamilySpec, data: Dataset, eta) -> float:
    """Log-likelihood at the linear predictor ``eta`` (constants dropped).

    Gaussian returns ``-0.5 * ||y - eta||^2 / sigma^2``; logistic the
    Bernoulli log-likelihood; cox the Breslow log partial likelihood.
    """
    eta = _check_eta(eta, data.n)
    if family.kind == "gaussian":
        r = data.y - eta
        return float(-0.5 * (r @ r) / family.scale)
    if family.kind == "logistic":
        return float(data.y @ eta - np.logaddexp(0.0, eta).sum())
    return _cox_loglik(data, eta)


def score_eta(family: FamilySpec, data: Dataset, eta) -> np.ndarray:
    """Gradient of the log-likelihood with respect to ``eta``."""
    eta = _check_eta(eta, data.n)
    if family.kind == "gaussian":
        return (data.y - eta) / family.scale
    if family.kind == "logistic":
        return data.y - expit(eta)
    return _cox_grad(data, eta)


def _logistic_weights(eta):
    pi = np.clip(expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return pi, pi * (1.0 - pi)


def weight_matrix(family: FamilySpec, data: Dataset, eta) -> np.ndarray:
    """Negative Hessian of the log-likelihood in ``eta`` (dense n x n)."""
    eta = _check_eta(eta, data.n)
    if family.kind == "gaussian":
        return np.eye(data.n) / family.scale
    if family.kind == "logistic":
        return np.diag(_logistic_weights(eta)[1])
    return _cox_W(data, eta)


def local_quadratic(family: FamilySpec, data: Dataset, eta) -> LocalQuadratic:
    """IRLS quantities ``(W, z, eta, loglik)`` with ``z = eta + W^- g``.

    For the Cox model W is the full negative Hessian; it is singular along
    the constant direction, so ``z`` uses the Moore-Penrose pseudo-inverse.
    """
    eta = _check_eta(eta, data.n)
    ll = log_likelihood(family, data, eta)
    if family.kind == "gaussian":
        W = np.eye(data.n) / family.scale
        z = data.y.copy()
    elif family.kind == "logistic":
        pi, w = _logistic_weights(eta)
        W = np.diag(w)
        z = eta + (data.y - pi) / w
    else:
        W = _cox_W(data, eta)
        g = _cox_grad(data, eta)
        z = eta + np.linalg.pinv(W, rcond=1e-12, hermitian=True) @ g
    return LocalQuadratic(W=W, z=z, eta=eta, loglik=ll)


def xwx(family: FamilySpec, data: Dataset, eta, X: np.ndarray) -> np.ndarray:
    """``X^T W X`` without forming W for the diagonal families."""
    eta = _check_eta(eta, data.n)
    if family.kind == "gaussian":
        return (X.T @ X) / family.scale
    if family.kind == "logistic":
        w = _logistic_weights(eta)[1]
        return (X * w[:, None]).T @ X
    return _cox_xwx(data, eta, X)


def observed_information(family: FamilySpec, data: Dataset, cols, beta) -> np.ndarray:
    """Observed information of the submodel using columns ``cols`` at ``beta``.

    Symmetric positive semidefinite. Rank deficiency is not an error here;
    use :func:`information_rank` and let the caller decide.
    """
    cols = list(cols)
    if not cols:
        raise InputError("cols must be nonempty")
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != len(cols) or not np.all(np.isfinite(beta)):
        raise InputError("beta must be finite with one entry per column")
    Xc = data.X[:, cols]
    return xwx(family, data, Xc @ beta, Xc)


def information_rank(info: np.ndarray, rtol: float = 1e-10) -> int:
    ev = np.linalg.eigvalsh(info)
    top = max(abs(ev).max(), 1e-300)
    return int(np.sum(ev > rtol * top))


def observation_scores(family: FamilySpec, data: Dataset, cols, beta) -> np.ndarray:
    """Per-observation score contributions (n x |cols|); rows sum to the gradient.

    For the Cox model these are the Breslow score residuals.
    """
    cols = list(cols)
    beta = np.asarray(beta, dtype=float).ravel()
    Xc = data.X[:, cols]
    eta = Xc @ beta
    if family.kind == "cox":
        return _cox_scores(data, eta, Xc)
    return Xc * score_eta(family, data, eta)[:, None]


def deviance(family: FamilySpec, data: Dataset, eta) -> float:
    """-2 log-likelihood (at unit dispersion for gaussian, i.e. the RSS)."""
    return -2.0 * log_likelihood(family.unit(), data, eta)
