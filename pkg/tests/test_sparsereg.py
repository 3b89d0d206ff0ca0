import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from daesparse.errors import DegenerateTarget, NumericalError
from daesparse.sparsereg import (
    SparseFitConfig,
    fit_lasso,
    fit_ols,
    fit_stlsq,
    fit_stols,
    kkt_residuals,
    lasso_objective,
    score_aic,
    score_bic,
    score_r2,
    selection_score,
)


def _normalised(X):
    return X / np.sqrt(np.mean(X ** 2, axis=0))


def _orthonormal(n, j, seed=0):
    # columns with X^T X / n = I, the scaling under which the LASSO closed form is exact
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, j)))
    return q * np.sqrt(n)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def test_r2_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert score_r2(y, y) == 1.0
    assert score_r2(y, np.full(3, y.mean())) == 0.0
    assert score_r2(y, np.array([1.0, 2.0, 4.0])) == pytest.approx(0.5)


def test_r2_errors():
    with pytest.raises(DegenerateTarget):
        score_r2(np.ones(4), np.ones(4))
    with pytest.raises(ValueError):
        score_r2(np.ones(1), np.ones(1))


def test_information_criteria():
    y = np.array([1.0, 2.0, 3.0, 5.0])
    yhat = np.array([1.0, 2.5, 3.0, 4.0])
    rss = 1.25
    assert score_aic(y, yhat, 2) == pytest.approx(4 * np.log(rss / 4) + 4)
    assert score_bic(y, yhat, 2) == pytest.approx(4 * np.log(rss / 4) + 2 * np.log(4))
    assert selection_score("aic", y, yhat, 2) == -score_aic(y, yhat, 2)
    with pytest.raises(ValueError):
        selection_score("mse", y, yhat, 2)


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------

def test_ols_single_column():
    y = np.random.default_rng(0).normal(size=20)
    res = fit_ols(y[:, None], y)
    assert res.coefficients[0] == pytest.approx(1.0)
    assert res.r2 == pytest.approx(1.0)


def test_ols_orthogonal_target():
    X = np.array([[1.0], [1.0], [0.0], [0.0]])
    y = np.array([1.0, -1.0, 2.0, -2.0])
    res = fit_ols(X, y)
    assert res.coefficients[0] == pytest.approx(0.0, abs=1e-15)
    assert res.r2 <= 0


def test_ols_normal_equations():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 5))
    y = rng.normal(size=50)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(fit_ols(X, y).coefficients, ref, atol=1e-8)


def test_ols_rank_deficient_is_min_norm():
    rng = np.random.default_rng(2)
    a = rng.normal(size=30)
    X = np.column_stack([a, a])
    res = fit_ols(X, 2 * a)
    assert np.allclose(res.coefficients, [1.0, 1.0])


def test_ols_rejects_non_finite():
    with pytest.raises(NumericalError):
        fit_ols(np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# LASSO
# ---------------------------------------------------------------------------

def test_lasso_alpha_zero_is_ols():
    rng = np.random.default_rng(3)
    X = _normalised(rng.normal(size=(80, 4)))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.normal(size=80)
    assert np.allclose(fit_lasso(X, y, 0.0).coefficients, fit_ols(X, y).coefficients, atol=1e-6)


def test_lasso_deadzone():
    rng = np.random.default_rng(4)
    X = _normalised(rng.normal(size=(60, 3)))
    y = rng.normal(size=60)
    amax = np.max(np.abs(X.T @ y)) / len(y)
    assert np.all(fit_lasso(X, y, amax).coefficients == 0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2), st.integers(0, 1000))
def test_lasso_orthonormal_closed_form(b1, b2, alpha, seed):
    X = _orthonormal(40, 2, seed)
    y = X @ np.array([b1, b2])
    beta = X.T @ y / len(y)
    expected = np.sign(beta) * np.maximum(np.abs(beta) - alpha, 0.0)
    assert np.allclose(fit_lasso(X, y, alpha).coefficients, expected, rtol=0, atol=1e-8)


def test_lasso_kkt_on_random_instances():
    rng = np.random.default_rng(5)
    tol = 1e-10
    for _ in range(100):
        n, j = int(rng.integers(20, 80)), int(rng.integers(2, 12))
        X = _normalised(rng.normal(size=(n, j)))
        y = X @ (rng.normal(size=j) * (rng.random(j) < 0.5)) + 0.1 * rng.normal(size=n)
        alpha = float(rng.uniform(0.001, 0.3))
        res = fit_lasso(X, y, alpha, tol=tol)
        assert res.converged
        assert np.max(kkt_residuals(X, y, res.coefficients, alpha)) <= tol


def test_lasso_objective_matches_reference_minimum():
    from scipy.optimize import minimize

    rng = np.random.default_rng(6)
    X = _normalised(rng.normal(size=(50, 3)))
    y = X @ np.array([1.0, 0.0, -0.5]) + 0.05 * rng.normal(size=50)
    res = fit_lasso(X, y, 0.05)

    # independent oracle: split p = u - v with u, v >= 0 and use a bounded quasi-Newton solver
    def f(z):
        p = z[:3] - z[3:]
        return lasso_objective(X, y, p, 0.05)

    ref = minimize(f, np.zeros(6), bounds=[(0, None)] * 6, method="L-BFGS-B", options={"ftol": 1e-15})
    assert lasso_objective(X, y, res.coefficients, 0.05) <= ref.fun + 1e-10


def test_lasso_reports_non_convergence():
    rng = np.random.default_rng(7)
    X = _normalised(rng.normal(size=(40, 6)))
    res = fit_lasso(X, rng.normal(size=40), 1e-4, max_iter=1, tol=1e-14)
    assert not res.converged
    assert res.extra["kkt_violation"] > 1e-14


# ---------------------------------------------------------------------------
# thresholded solvers
# ---------------------------------------------------------------------------

@given(st.integers(0, 2 ** 31 - 1))
def test_stlsq_zero_threshold_equals_ols(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 5))
    y = rng.normal(size=40)
    assert np.allclose(fit_stlsq(X, y, 0.0, 0.0).coefficients, fit_ols(X, y).coefficients, rtol=0, atol=1e-10)


@given(st.integers(0, 2 ** 31 - 1))
def test_stols_zero_threshold_is_ols_exactly(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    assert np.array_equal(fit_stols(X, y, 0.0).coefficients, fit_ols(X, y).coefficients)


def test_stlsq_planted_model():
    rng = np.random.default_rng(8)
    X = _normalised(rng.normal(size=(200, 11)))
    y = 2.0 * X[:, 0] + 0.001 * rng.normal(size=200)
    for alpha in (0.0, 1e-3):
        res = fit_stlsq(X, y, alpha, 0.1)
        assert res.support == (0,)
        assert res.coefficients[0] == pytest.approx(2.0, rel=0.01)


def test_stlsq_orthonormal_hard_threshold():
    X = _orthonormal(50, 6, 9)
    beta = np.array([1.0, 0.05, -0.3, 0.09, 2.0, -0.01])
    y = X @ beta
    res = fit_stlsq(X, y, 0.0, 0.1)
    assert set(res.support) == {j for j in range(6) if abs(beta[j]) >= 0.1}


def test_stlsq_support_monotone():
    rng = np.random.default_rng(10)
    X = _normalised(rng.normal(size=(100, 8)))
    y = X[:, :3] @ np.array([1.0, 0.3, 0.12]) + 0.2 * rng.normal(size=100)
    hist = fit_stlsq(X, y, 1e-3, 0.15).extra["support_history"]
    assert all(a >= b for a, b in zip(hist, hist[1:]))


def test_stlsq_empty_support():
    rng = np.random.default_rng(11)
    X = _normalised(rng.normal(size=(50, 3)))
    res = fit_stlsq(X, 1e-3 * rng.normal(size=50), 0.0, 0.5)
    assert res.empty and np.all(res.coefficients == 0)


def test_stols_two_column_oracle():
    # orthogonal columns so OLS gives (0.05, 3.0) exactly
    X = _orthonormal(20, 2, 12)
    y = X @ np.array([0.05, 3.0])
    res = fit_stols(X, y, 0.1)
    assert res.support == (1,)
    single = np.linalg.lstsq(X[:, [1]], y, rcond=None)[0][0]
    assert res.coefficients[1] == pytest.approx(single)


def test_stols_orthonormal_survivors():
    X = _orthonormal(60, 5, 13)
    beta = np.array([0.5, -0.11, 0.09, 0.0, 1.0])
    res = fit_stols(X, X @ beta, 0.1)
    assert set(res.support) == {j for j in range(5) if abs(beta[j]) > 0.1}


@given(st.sampled_from(["lasso_stlsq", "stlsq", "stols", "ols"]), st.integers(0, 2 ** 31 - 1))
def test_stored_r2_matches_score(solver, seed):
    rng = np.random.default_rng(seed)
    X = _normalised(rng.normal(size=(40, 4)))
    y = X[:, 0] - 0.5 * X[:, 2] + 0.3 * rng.normal(size=40)
    res = SparseFitConfig(solver=solver).fit(X, y)
    assert abs(score_r2(y, X @ res.coefficients) - res.r2) <= 1e-12
    assert res.r2 <= 1.0
    assert res.support == tuple(np.flatnonzero(res.coefficients))


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 10))
def test_stlsq_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    X = _normalised(rng.normal(size=(60, 5)))
    y = X @ np.array([1.0, 0.0, 0.4, 0.0, -0.2]) + 0.1 * rng.normal(size=60)
    a = fit_stlsq(X, y, 0.01, 0.15)
    b = fit_stlsq(X, c * y, 0.01 * c, 0.15 * c)
    assert a.support == b.support


def test_solvers_deterministic():
    rng = np.random.default_rng(14)
    X = _normalised(rng.normal(size=(50, 6)))
    y = rng.normal(size=50)
    for solver in ("lasso_stlsq", "stlsq", "stols", "ols"):
        cfg = SparseFitConfig(solver=solver)
        assert np.array_equal(cfg.fit(X, y).coefficients, cfg.fit(X, y).coefficients)


def test_config_validation():
    with pytest.raises(ValueError):
        SparseFitConfig(solver="sr3")
    with pytest.raises(ValueError):
        SparseFitConfig(max_iter=0)
    with pytest.raises(ValueError):
        SparseFitConfig(tol=0.0)
    with pytest.raises(ValueError):
        SparseFitConfig(alpha=-1.0)


def test_lasso_objective_non_increasing_over_sweeps():
    rng = np.random.default_rng(15)
    X = _normalised(rng.normal(size=(60, 8)))
    X[:, 1] = 0.9 * X[:, 0] + 0.1 * X[:, 1]
    y = X @ rng.normal(size=8) + 0.1 * rng.normal(size=60)
    # truncated runs reproduce the first k sweeps of a longer run exactly
    objs = [lasso_objective(X, y, fit_lasso(X, y, 0.02, max_iter=k, tol=1e-300).coefficients, 0.02)
            for k in range(1, 30)]
    assert all(b <= a + 1e-15 for a, b in zip(objs, objs[1:]))
