"""Compiled inner loops (coordinate descent) shared by the solvers."""

import numpy as np
from numba import njit


@njit(cache=True)
def _sweep(H, c, pen, b, Hb, only_active):
    p = c.shape[0]
    maxd = 0.0
    for j in range(p):
        if only_active and b[j] == 0.0:
            continue
        hjj = H[j, j]
        if hjj <= 0.0:
            continue
        bj = b[j]
        r = c[j] - Hb[j] + hjj * bj
        pj = pen[j]
        if r > pj:
            new = (r - pj) / hjj
        elif r < -pj:
            new = (r + pj) / hjj
        else:
            new = 0.0
        dlt = new - bj
        if dlt != 0.0:
            b[j] = new
            for k in range(p):
                Hb[k] += H[k, j] * dlt
            ad = abs(dlt)
            if ad > maxd:
                maxd = ad
    return maxd


@njit(cache=True)
def cd_gram(H, c, pen, b, tol, max_sweeps):
    """Minimize 0.5 b'Hb - c'b + sum_j pen_j |b_j| by cyclic coordinate descent.

    ``b`` is the warm start and is updated in place. Sweeps alternate between
    full passes and passes over the current nonzeros. Returns the number of
    full sweeps and whether the coefficient-change tolerance was met.
    """
    Hb = H @ b
    sweeps = 0
    while sweeps < max_sweeps:
        maxd = _sweep(H, c, pen, b, Hb, False)
        sweeps += 1
        if maxd < tol:
            return sweeps, True
        inner = 0
        while inner < max_sweeps:
            maxd = _sweep(H, c, pen, b, Hb, True)
            inner += 1
            if maxd < tol:
                break
    return sweeps, False


@njit(cache=True)
def glasso_bcd(S, Lam, W, tol, max_outer, inner_tol, max_inner):
    """Block coordinate descent for the graphical lasso (diagonal unpenalized).

    ``W`` (the running estimate of Sigma) is updated in place; its diagonal is
    held at ``diag(S)``. ``Lam`` is a symmetric matrix of off-diagonal
    penalties. Returns (B, outer_iterations, converged) where column j of B
    holds the lasso coefficients of column j regressed on the others.
    """
    p = S.shape[0]
    B = np.zeros((p, p))
    it = 0
    converged = False
    while it < max_outer:
        it += 1
        maxchange = 0.0
        for j in range(p):
            idx = np.empty(p - 1, dtype=np.int64)
            m = 0
            for k in range(p):
                if k != j:
                    idx[m] = k
                    m += 1
            W11 = np.empty((p - 1, p - 1))
            s12 = np.empty(p - 1)
            pen = np.empty(p - 1)
            b = np.empty(p - 1)
            for a in range(p - 1):
                s12[a] = S[idx[a], j]
                pen[a] = Lam[idx[a], j]
                b[a] = B[idx[a], j]
                for c in range(p - 1):
                    W11[a, c] = W[idx[a], idx[c]]
            cd_gram(W11, s12, pen, b, inner_tol, max_inner)
            w12 = W11 @ b
            for a in range(p - 1):
                B[idx[a], j] = b[a]
                ch = abs(w12[a] - W[idx[a], j])
                if ch > maxchange:
                    maxchange = ch
                W[idx[a], j] = w12[a]
                W[j, idx[a]] = w12[a]
        if maxchange < tol:
            converged = True
            break
    return B, it, converged
