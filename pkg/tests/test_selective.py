import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import ndtr

from postsel.errors import EmptySelectionError, InputError
from postsel.families import Dataset, FamilySpec, local_quadratic
from postsel.lasso import PenaltySpec, fit_lasso, lambda_max
from postsel.polyhedral import PolyhedralConstraint, TruncatedGaussian, tg_pvalue, truncation_bounds
from postsel.selective import (
    DegenerateWarning,
    active_constraints,
    infer,
    infer_estimate,
    one_step,
    pairs_bootstrap_cov,
    sandwich_cov,
)


def make(kind, seed, n=40, p=6, intercept=True, signal=1.0, rho=0.2):
    rng = np.random.default_rng(seed)
    X = np.sqrt(rho) * rng.normal(size=(n, 1)) + np.sqrt(1 - rho) * rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[:2] = signal
    eta = X @ beta
    status = None
    if kind == "gaussian":
        y = eta + rng.normal(size=n)
    elif kind == "logistic":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.exponential(size=n) * np.exp(-eta)
        status = (rng.random(n) < 0.7).astype(float)
        intercept = False
    if intercept:
        X = np.column_stack([np.ones(n), X])
    return Dataset(X, y, status=status, unpenalized=(0,) if intercept else ())


def fitted(kind, seed, frac=0.4, **kw):
    d = make(kind, seed, **kw)
    fam = FamilySpec(kind)
    fit = fit_lasso(fam, d, PenaltySpec(frac * lambda_max(fam, d)))
    return fam, d, fit


def rel_frob(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_gaussian_one_step_is_ols_on_selected():
    fam, d, fit = fitted("gaussian", 0, intercept=False)
    est = one_step(fam.with_dispersion(1.0), d, fit)
    Xm = d.X[:, list(fit.active)]
    ols = np.linalg.solve(Xm.T @ Xm, Xm.T @ d.y)
    assert np.allclose(est.beta_bar, ols, atol=1e-10)


def test_one_step_approaches_fit_as_lambda_vanishes():
    d = make("logistic", 1, n=60, p=4, signal=1.0)
    fam = FamilySpec("logistic")
    gaps = []
    for lam in (1e-1, 1e-2, 1e-3):
        fit = fit_lasso(fam, d, PenaltySpec(lam))
        assert len(fit.active) == 4
        est = one_step(fam, d, fit)
        gaps.append(np.abs(est.theta_bar - est.theta_hat).max())
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-3


@pytest.mark.parametrize("kind", ["gaussian", "logistic", "cox"])
@pytest.mark.parametrize("seed", range(5))
def test_one_step_dual_forms(kind, seed):
    fam, d, fit = fitted(kind, 10 + seed)
    if not fit.active:
        pytest.skip("empty selection")
    est = one_step(fam.with_dispersion(1.0) if kind == "gaussian" else fam, d, fit)
    cols = list(est.cols)
    Xm = d.X[:, cols]
    # Newton form
    info = Xm.T @ local_quadratic(fam.unit(), d, Xm @ est.theta_hat).W @ Xm
    rhs = np.concatenate([np.zeros(est.n_unpenalized), fit.lam * fit.signs])
    newton = est.theta_hat + np.linalg.solve(info, rhs)
    # weighted least squares on the adjusted response
    lq = local_quadratic(fam.unit(), d, Xm @ est.theta_hat)
    wls = np.linalg.solve(Xm.T @ lq.W @ Xm, Xm.T @ lq.W @ lq.z)
    assert np.allclose(est.theta_bar, newton, atol=1e-10, rtol=1e-10)
    assert np.allclose(est.theta_bar, wls, atol=1e-10, rtol=1e-10)


def test_constraint_scalar_case():
    rng = np.random.default_rng(2)
    x = rng.normal(size=30)
    x /= np.linalg.norm(x)
    y = 5 * x + 0.1 * rng.normal(size=30)
    d = Dataset(x[:, None], y)
    lam = 1.0
    fit = fit_lasso(FamilySpec("gaussian"), d, PenaltySpec(lam))
    assert fit.active == (0,) and fit.signs[0] == 1
    c = active_constraints(one_step(FamilySpec("gaussian", dispersion=1.0), d, fit))
    assert np.allclose(c.A, [[-1.0]]) and np.allclose(c.b, [-lam / (x @ x)])


def test_constraint_all_positive_signs():
    fam, d, fit = fitted("logistic", 3, signal=2.0)
    est = one_step(fam, d, fit)
    if np.all(est.signs > 0):
        E = np.zeros((len(est.active), len(est.cols)))
        E[:, est.n_unpenalized:] = np.eye(len(est.active))
        assert np.array_equal(active_constraints(est).A, -E)
    # general signs: A = -diag(s) E_M
    E = np.zeros((len(est.active), len(est.cols)))
    E[:, est.n_unpenalized:] = np.eye(len(est.active))
    assert np.array_equal(active_constraints(est).A, -np.diag(est.signs) @ E)


@given(kind=st.sampled_from(["gaussian", "logistic", "cox"]), seed=st.integers(0, 100_000),
       frac=st.floats(0.1, 0.9))
@settings(max_examples=60)
def test_observed_point_is_feasible(kind, seed, frac):
    fam, d, fit = fitted(kind, seed, frac=frac)
    if not fit.active:
        return
    est = one_step(fam, d, fit)
    c = active_constraints(est)
    assert c.holds(est.theta_bar, tol=1e-8)
    assert np.all(np.diag(est.signs) @ (est.beta_bar - est.step[est.n_unpenalized:]) >= -1e-8)
    ev = np.linalg.eigvalsh(est.covariance)
    assert np.allclose(est.covariance, est.covariance.T) and ev.min() > -1e-12 * ev.max()
    rep = infer(fam, d, fit)
    for r in rep.selected():
        if r.status == "ok":
            assert r.vlo <= r.beta_bar <= r.vhi
            assert 0.0 <= r.pvalue <= 1.0 and r.ci_lo < r.ci_hi


def test_orthonormal_design():
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.normal(size=(50, 3)))
    y = Q @ np.array([4.0, -3.0, 0.0]) + rng.normal(size=50)
    d = Dataset(Q, y)
    lam = 1.5
    fam = FamilySpec("gaussian", dispersion=1.0)
    fit = fit_lasso(fam, d, PenaltySpec(lam))
    rep = infer(fam, d, fit)
    for r in rep.selected():
        s = np.sign(r.beta_bar)
        x = abs(r.beta_bar)
        expected = (lam, math.inf) if s > 0 else (-math.inf, -lam)
        assert (r.vlo, r.vhi) == pytest.approx(expected, rel=1e-12)
        F = (ndtr(x) - ndtr(lam)) / (1 - ndtr(lam))
        assert r.pvalue == pytest.approx(2 * min(F, 1 - F), rel=1e-10)


def test_selection_widens_one_sided_pvalues():
    lam = 1.0
    for x in np.linspace(1.01, 6, 50):
        sel = tg_pvalue(TruncatedGaussian(0.0, 1.0, lam, math.inf), x, "greater")
        naive = 1 - ndtr(x)
        assert sel >= naive


def test_permutation_invariance():
    fam, d, fit = fitted("logistic", 5, n=60, p=6, signal=1.5)
    rep = infer(fam, d, fit)
    perm = [0, 4, 2, 6, 1, 3, 5]
    d2 = Dataset(d.X[:, perm], d.y, unpenalized=(0,), names=tuple(d.names[j] for j in perm))
    fit2 = fit_lasso(fam, d2, PenaltySpec(fit.lam))
    rep2 = infer(fam, d2, fit2)
    by_name = {r.name: r for r in rep2.rows}
    assert set(by_name) == {r.name for r in rep.rows}
    for r in rep.rows:
        r2 = by_name[r.name]
        for a, b in [(r.pvalue, r2.pvalue), (r.ci_lo, r2.ci_lo), (r.ci_hi, r2.ci_hi)]:
            assert a == pytest.approx(b, abs=1e-10, rel=1e-10)


def test_rejection_sampling_pivot():
    """Two-coordinate gaussian event; the pivot is uniform given the event."""
    rng = np.random.default_rng(6)
    Sigma = np.array([[1.0, 0.4], [0.4, 0.8]])
    s = np.array([1.0, -1.0])
    offset = np.array([0.3, -0.2])
    constr = PolyhedralConstraint(-np.diag(s), -np.diag(s) @ offset)
    L = np.linalg.cholesky(Sigma)
    accepted = []
    while sum(len(a) for a in accepted) < 100_000:
        z = rng.normal(size=(200_000, 2)) @ L.T
        ok = (z[:, 0] >= 0.3) & (z[:, 1] <= -0.2)
        accepted.append(z[ok])
    draws = np.concatenate(accepted)[:100_000]
    gamma = np.array([1.0, 0.0])
    pv = np.empty(len(draws))
    for i, y in enumerate(draws):
        tb = truncation_bounds(constr, Sigma, gamma, y)
        pv[i] = tg_pvalue(TruncatedGaussian(0.0, Sigma[0, 0], tb.vlo, tb.vhi), y[0], "less")
    assert stats.kstest(pv, "uniform").statistic < 0.02


# ---- covariance estimators

def _homoskedastic(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = X @ np.array([1.0, -1.0, 0.5, 0.0, 0.0]) + rng.normal(size=n)
    d = Dataset(np.column_stack([np.ones(n), X]), y, unpenalized=(0,))
    fam = FamilySpec("gaussian")
    fit = fit_lasso(fam, d, PenaltySpec(0.3 * lambda_max(fam, d)))
    return fam, d, fit


def test_bootstrap_matches_plugin_when_homoskedastic():
    fam, d, fit = _homoskedastic(2000, 7)
    plug = one_step(fam, d, fit).covariance
    boot = pairs_bootstrap_cov(fam, d, fit, B=1000, seed=1)
    assert rel_frob(boot, plug) < 0.15


def test_sandwich_matches_plugin_when_homoskedastic():
    fam, d, fit = _homoskedastic(2000, 8)
    plug = one_step(fam, d, fit).covariance
    assert rel_frob(sandwich_cov(fam, d, fit), plug) < 0.15


def test_sandwich_and_bootstrap_agree_under_heteroskedasticity():
    rng = np.random.default_rng(9)
    n = 2000
    X = rng.normal(size=(n, 5))
    sd = np.exp(0.5 * X[:, 4])
    y = X @ np.array([1.0, -1.0, 0.5, 0.0, 0.0]) + sd * rng.normal(size=n)
    d = Dataset(np.column_stack([np.ones(n), X]), y, unpenalized=(0,))
    fam = FamilySpec("gaussian")
    fit = fit_lasso(fam, d, PenaltySpec(0.05 * lambda_max(fam, d)))
    boot = pairs_bootstrap_cov(fam, d, fit, B=1000, seed=2)
    sand = sandwich_cov(fam, d, fit)
    assert rel_frob(sand, boot) < 0.20


def test_bootstrap_needs_replicates():
    fam, d, fit = fitted("gaussian", 11)
    with pytest.raises(InputError):
        pairs_bootstrap_cov(fam, d, fit, B=1)


def test_bootstrap_is_seeded():
    fam, d, fit = fitted("logistic", 12, n=80, signal=1.5)
    a = pairs_bootstrap_cov(fam, d, fit, B=200, seed=5)
    b = pairs_bootstrap_cov(fam, d, fit, B=200, seed=5)
    assert np.array_equal(a, b)


def test_sandwich_exact_fit_is_flagged():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(3, 3))
    d = Dataset(X, X @ np.array([3.0, -2.0, 4.0]))
    fam = FamilySpec("gaussian", dispersion=1.0)
    fit = fit_lasso(fam, d, PenaltySpec(1e-3))
    assert len(fit.active) == 3
    with pytest.warns(DegenerateWarning):
        cov = sandwich_cov(fam, d, fit)
    assert np.abs(cov).max() < 1e-6


# ---- reports

def test_empty_selection_is_error():
    d = make("gaussian", 14)
    fam = FamilySpec("gaussian")
    fit = fit_lasso(fam, d, PenaltySpec(2 * lambda_max(fam, d)))
    with pytest.raises(EmptySelectionError):
        infer(fam, d, fit)


def test_unpenalized_rows_get_wald_inference():
    fam, d, fit = fitted("logistic", 15, n=60, signal=1.5)
    rep = infer(fam, d, fit)
    row = rep.rows[0]
    assert not row.penalized and row.status == "unpenalized"
    assert row.pvalue == row.naive_pvalue
    assert row.pvalue == pytest.approx(2 * ndtr(-abs(row.beta_bar) / row.stderr))


def test_degenerate_row_is_flagged_not_fatal():
    fam, d, fit = fitted("logistic", 16, n=60, signal=1.5)
    est = one_step(fam, d, fit)
    cov = est.covariance.copy()
    k = est.n_unpenalized
    cov[k, :] = cov[:, k] = 0.0
    rep = infer_estimate(est.with_covariance(cov, "plugin"), d.names)
    rows = rep.selected()
    assert rows[0].status.startswith("degenerate")
    assert all(r.status == "ok" for r in rows[1:])


def test_gaussian_n_le_p_requires_sigma2():
    rng = np.random.default_rng(17)
    d = Dataset(rng.normal(size=(10, 20)), rng.normal(size=10))
    fam = FamilySpec("gaussian")
    fit = fit_lasso(fam, d, PenaltySpec(0.5 * lambda_max(fam, d)))
    with pytest.raises(InputError):
        infer(fam, d, fit)
    rep = infer(FamilySpec("gaussian", dispersion=1.0), d, fit)
    assert rep.dispersion == 1.0
