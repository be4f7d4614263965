"""Graphical lasso fitting and selective inference on selected edges.

The fit maximizes ``log det Theta - tr(S Theta) - lam * sum_{j != k} |Theta_jk|``
with the diagonal unpenalized, so the KKT conditions read
``Theta^{-1} - S - lam * sign(Theta) = 0`` off the diagonal and
``diag(Theta^{-1}) = diag(S)``.

Inference works in the upper-triangular coordinates ``Delta`` with
``Theta = Delta + Delta'`` (so ``Theta_ij = Delta_ij`` off the diagonal and
``Theta_ii = 2 Delta_ii``). In these coordinates the Hessian of
``-log det Theta`` is ``R = 2 (Sigma_il Sigma_jk + Sigma_ik Sigma_jl)`` and
the penalized score on a selected edge is ``2 lam s``. The diagonal forms
the unpenalized block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import glasso_bcd
from .errors import ConvergenceError, DegenerateError, EmptySelectionError, InputError
from .families import information_rank
from .selective import OneStepEstimate, SelectiveReport, active_constraints, infer_estimate

EDGE_THRESHOLD = 1e-9


@dataclass(frozen=True)
class GlassoControls:
    tol: float = 1e-11
    max_outer: int = 2000
    inner_tol: float = 1e-13
    max_inner: int = 100000
    kkt_tol: float = 1e-6


@dataclass(frozen=True)
class PrecisionFit:
    Theta: np.ndarray
    Sigma: np.ndarray
    S: np.ndarray
    n: int
    lam: float
    edges: tuple[tuple[int, int], ...]
    signs: np.ndarray
    iterations: int
    kkt_violation: float
    names: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class GlassoHessian:
    R: np.ndarray
    pairs: tuple[tuple[int, int], ...]

    def index(self, i: int, j: int) -> int:
        i, j = min(i, j), max(i, j)
        p = int((math.isqrt(8 * len(self.pairs) + 1) - 1) // 2)
        return i * p - i * (i - 1) // 2 + (j - i)


def upper_pairs(p: int) -> tuple[tuple[int, int], ...]:
    """Row-major upper triangle including the diagonal: (0,0), (0,1), ..., (1,1), ..."""
    return tuple((i, j) for i in range(p) for j in range(i, p))


def sample_covariance(X) -> np.ndarray:
    """``X'X / n`` (data assumed mean zero, no centering)."""
    X = np.asarray(X, dtype=float)
    return X.T @ X / X.shape[0]


def glasso_objective(Theta, S, lam) -> float:
    """Penalized log-likelihood to be maximized (off-diagonal penalty)."""
    sign, logdet = np.linalg.slogdet(Theta)
    if sign <= 0:
        return -math.inf
    off = np.abs(Theta).sum() - np.abs(np.diag(Theta)).sum()
    return float(logdet - np.sum(S * Theta) - lam * off)


def glasso_kkt(Theta, S, lam) -> float:
    """Largest KKT violation of a fit, divided by max(1, lam)."""
    Sigma = np.linalg.inv(Theta)
    G = Sigma - S
    p = S.shape[0]
    off = ~np.eye(p, dtype=bool)
    on = off & (Theta != 0)
    zero = off & (Theta == 0)
    v = [np.abs(np.diag(G)).max()]
    if on.any():
        v.append(np.abs(G[on] - lam * np.sign(Theta[on])).max())
    if zero.any():
        v.append(max(0.0, np.abs(G[zero]).max() - lam))
    return float(max(v)) / max(1.0, lam)


def _check_S(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InputError("S must be a square matrix")
    if not np.all(np.isfinite(S)):
        raise InputError("S contains non-finite entries")
    if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise InputError("S must be symmetric")
    ev = np.linalg.eigvalsh(S)
    if ev.min() < -1e-10 * max(1.0, ev.max()):
        raise InputError("S is not positive semidefinite")
    if np.any(np.diag(S) <= 0):
        raise InputError("S must have a positive diagonal")
    return 0.5 * (S + S.T)


def fit_glasso(S, n: int, lam: float, controls: GlassoControls | None = None,
               penalty_matrix=None, names=None) -> PrecisionFit:
    """Graphical lasso by block coordinate descent over rows/columns.

    Parameters
    ----------
    S : (p, p) sample covariance.
    n : sample size behind ``S`` (used only for inference).
    lam : off-diagonal penalty (> 0).
    penalty_matrix : optional (p, p) matrix of per-entry penalties overriding
        ``lam`` (``np.inf`` forces an entry to zero).
    """
    controls = controls or GlassoControls()
    S = _check_S(S)
    p = S.shape[0]
    if penalty_matrix is None:
        if not lam > 0:
            raise InputError("lambda must be positive")
        Lam = np.full((p, p), float(lam))
    else:
        Lam = np.array(penalty_matrix, dtype=float)
        if Lam.shape != S.shape or np.any(Lam < 0):
            raise InputError("penalty_matrix must be a nonnegative (p, p) matrix")
        Lam = np.minimum(Lam, Lam.T)
    np.fill_diagonal(Lam, 0.0)
    W = S.copy()
    B, it, converged = glasso_bcd(S, Lam, W, controls.tol, controls.max_outer,
                                  controls.inner_tol, controls.max_inner)
    Theta = np.zeros((p, p))
    for j in range(p):
        others = [k for k in range(p) if k != j]
        b = B[others, j]
        tjj = 1.0 / (W[j, j] - W[others, j] @ b)
        Theta[j, j] = tjj
        Theta[others, j] = -b * tjj
    Theta = 0.5 * (Theta + Theta.T)
    Theta[np.abs(Theta) <= EDGE_THRESHOLD] = 0.0
    if not converged:
        raise ConvergenceError(f"graphical lasso did not converge in {it} sweeps",
                               last_iterate=Theta)
    if np.linalg.eigvalsh(Theta).min() <= 0:
        raise ConvergenceError("graphical lasso returned a non positive-definite estimate",
                               last_iterate=Theta)
    lam_eff = float(lam) if penalty_matrix is None else 0.0
    kkt = glasso_kkt(Theta, S, lam_eff) if penalty_matrix is None else 0.0
    edges = tuple((i, j) for i in range(p) for j in range(i + 1, p) if Theta[i, j] != 0.0)
    signs = np.array([np.sign(Theta[i, j]) for i, j in edges])
    if names is None:
        names = tuple(f"X{j + 1}" for j in range(p))
    return PrecisionFit(Theta, np.linalg.inv(Theta), S, int(n), float(lam), edges, signs,
                        int(it), kkt, tuple(names))


def glasso_hessian(fit_or_theta) -> GlassoHessian:
    """Hessian of ``-log det Theta(Delta)`` in the upper-triangular coordinates."""
    Theta = fit_or_theta.Theta if isinstance(fit_or_theta, PrecisionFit) else np.asarray(fit_or_theta)
    Sigma = np.linalg.inv(Theta)
    pairs = upper_pairs(Theta.shape[0])
    I = np.array([a for a, _ in pairs])
    J = np.array([b for _, b in pairs])
    # rows index (i, j), columns index (k, l)
    R = 2.0 * (Sigma[np.ix_(I, J)] * Sigma[np.ix_(J, I)] + Sigma[np.ix_(I, I)] * Sigma[np.ix_(J, J)])
    return GlassoHessian(0.5 * (R + R.T), pairs)


def glasso_one_step(fit: PrecisionFit) -> OneStepEstimate:
    """One Newton step over (diagonal, selected edges) from the penalized fit."""
    if not fit.edges:
        raise EmptySelectionError("no edges selected")
    p = fit.p
    hess = glasso_hessian(fit)
    block = [(i, i) for i in range(p)] + list(fit.edges)
    idx = [hess.index(i, j) for i, j in block]
    RB = hess.R[np.ix_(idx, idx)]
    if information_rank(RB) < RB.shape[0]:
        raise DegenerateError("degenerate edge information")
    RB_inv = np.linalg.inv(RB)
    delta_hat = np.array([fit.Theta[i, i] / 2.0 for i in range(p)]
                         + [fit.Theta[i, j] for i, j in fit.edges])
    rhs = np.concatenate([np.zeros(p), 2.0 * fit.lam * fit.signs])
    step = RB_inv @ rhs
    cov = (2.0 / fit.n) * RB_inv
    return OneStepEstimate(
        theta_hat=delta_hat,
        theta_bar=delta_hat + step,
        step=step,
        information=0.5 * fit.n * RB,
        covariance=0.5 * (cov + cov.T),
        cols=tuple(range(len(block))),
        n_unpenalized=p,
        active=tuple(range(p, len(block))),
        signs=fit.signs.astype(float),
        lam=fit.lam,
        dispersion=1.0,
    )


def one_step_matrix(fit: PrecisionFit, est: OneStepEstimate | None = None) -> np.ndarray:
    """The one-step estimate as a symmetric precision matrix."""
    est = est or glasso_one_step(fit)
    p = fit.p
    T = np.zeros((p, p))
    for i in range(p):
        T[i, i] = 2.0 * est.theta_bar[i]
    for m, (i, j) in enumerate(fit.edges):
        T[i, j] = T[j, i] = est.theta_bar[p + m]
    return T


def edge_names(fit: PrecisionFit) -> list[str]:
    return [f"{fit.names[i]}-{fit.names[j]}" for i, j in fit.edges]


def glasso_infer(fit: PrecisionFit, level: float = 0.9, null_value=0.0) -> SelectiveReport:
    """Selective p-values and intervals for every selected edge."""
    est = glasso_one_step(fit)
    names = [f"{fit.names[i]}-{fit.names[i]}" for i in range(fit.p)] + edge_names(fit)
    rep = infer_estimate(est, names, level, null_value, "glasso", active_constraints(est))
    return SelectiveReport(rep.selected(), rep.lam, "glasso", "plugin", level, 1.0, est)
