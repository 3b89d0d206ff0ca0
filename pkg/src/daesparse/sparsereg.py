"""Sparse linear solvers and fit scores.

All solvers work on a design matrix whose columns are already normalised
(RMS 1), so a single coefficient threshold is meaningful across terms of
very different magnitude.  There is no implicit intercept; a constant
column plays that role.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DegenerateTarget, NumericalError

SOLVERS = ("lasso_stlsq", "stlsq", "stols", "ols")


@dataclass(frozen=True)
class SparseFitConfig:
    solver: str = "lasso_stlsq"
    alpha: float = 1e-3
    threshold: float = 0.1
    max_iter: int = 20
    tol: float = 1e-10
    lasso_max_iter: int = 20000

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if self.alpha < 0 or self.threshold < 0:
            raise ValueError("alpha and threshold must be non-negative")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")

    def fit(self, X: np.ndarray, y: np.ndarray) -> "FitResult":
        if self.solver == "ols":
            return fit_ols(X, y)
        if self.solver == "stols":
            return fit_stols(X, y, self.threshold)
        alpha = self.alpha if self.solver == "lasso_stlsq" else 0.0
        return fit_stlsq(X, y, alpha, self.threshold, self.max_iter,
                         tol=self.tol, lasso_max_iter=self.lasso_max_iter)


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    support: tuple[int, ...]
    r2: float
    residual_norm: float
    converged: bool = True
    n_iter: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.support


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def score_r2(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    Negative values are returned as computed.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) < 2:
        raise ValueError("score_r2 needs at least two samples")
    r2 = _r2(y, yhat)
    if np.isnan(r2):
        raise DegenerateTarget("target has zero variance", module="sparsereg", op="score_r2")
    return r2


def score_aic(y, yhat, k: int) -> float:
    y, yhat = np.asarray(y, float), np.asarray(yhat, float)
    n = len(y)
    rss = max(float(np.sum((y - yhat) ** 2)), np.finfo(float).tiny)
    return n * np.log(rss / n) + 2 * k


def score_bic(y, yhat, k: int) -> float:
    y, yhat = np.asarray(y, float), np.asarray(yhat, float)
    n = len(y)
    rss = max(float(np.sum((y - yhat) ** 2)), np.finfo(float).tiny)
    return n * np.log(rss / n) + k * np.log(n)


def selection_score(name: str, y: np.ndarray, yhat: np.ndarray, k: int) -> float:
    """Higher-is-better score used to rank candidate fits."""
    if name == "r2":
        return _r2(y, yhat)
    if np.var(y) == 0:
        return float("nan")
    if name == "aic":
        return -score_aic(y, yhat, k)
    if name == "bic":
        return -score_bic(y, yhat, k)
    raise ValueError(f"unknown score function {name!r}")


def _check_finite(X, y, op):
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite entries in regression inputs", module="sparsereg", op=op)


def _result(X, y, coef, **kw) -> FitResult:
    yhat = X @ coef
    return FitResult(
        coefficients=coef,
        support=tuple(int(j) for j in np.flatnonzero(coef)),
        r2=_r2(y, yhat),
        residual_norm=float(np.linalg.norm(y - yhat)),
        **kw,
    )


def _lstsq(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(X, y, rcond=None)[0]


def fit_ols(X, y) -> FitResult:
    """Minimum-norm least squares via the SVD pseudo-inverse."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1 or X.shape[0] != len(y):
        raise ValueError("fit_ols needs an N x J matrix with N, J >= 1 and len(y) == N")
    _check_finite(X, y, "fit_ols")
    return _result(X, y, _lstsq(X, y))


def _refit(X, y, keep: np.ndarray) -> np.ndarray:
    coef = np.zeros(X.shape[1])
    if keep.any():
        coef[keep] = _lstsq(X[:, keep], y)
    return coef


# ---------------------------------------------------------------------------
# LASSO by cyclic coordinate descent on the Gram matrix
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _cd_gram(G, c, alpha, p, max_iter, tol):
    J = G.shape[0]
    q = c - G @ p  # q_j = x_j^T r / N
    viol = np.inf
    for it in range(max_iter):
        for j in range(J):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = q[j] + gjj * p[j]
            if rho > alpha:
                new = (rho - alpha) / gjj
            elif rho < -alpha:
                new = (rho + alpha) / gjj
            else:
                new = 0.0
            delta = new - p[j]
            if delta != 0.0:
                for k in range(J):
                    q[k] -= G[k, j] * delta
                p[j] = new
        viol = 0.0
        for j in range(J):
            if G[j, j] <= 0.0:
                continue
            if p[j] > 0.0:
                v = abs(q[j] - alpha)
            elif p[j] < 0.0:
                v = abs(q[j] + alpha)
            else:
                v = max(abs(q[j]) - alpha, 0.0)
            if v > viol:
                viol = v
        if viol <= tol:
            return p, it + 1, viol
    return p, max_iter, viol


def lasso_objective(X, y, p, alpha) -> float:
    r = y - X @ p
    return 0.5 * float(r @ r) / len(y) + alpha * float(np.abs(p).sum())


def kkt_residuals(X, y, p, alpha) -> np.ndarray:
    """Per-coordinate KKT violation of the LASSO optimality conditions."""
    q = X.T @ (y - X @ p) / len(y)
    return np.where(p > 0, np.abs(q - alpha),
                    np.where(p < 0, np.abs(q + alpha), np.maximum(np.abs(q) - alpha, 0.0)))


def fit_lasso(X, y, alpha: float, max_iter: int = 20000, tol: float = 1e-10) -> FitResult:
    """Minimise ``0.5 * ||y - X p||^2 / N + alpha * ||p||_1``.

    Stops when every KKT condition holds to ``tol``.  If ``max_iter`` sweeps
    are not enough the last iterate is returned with ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    _check_finite(X, y, "fit_lasso")
    n = X.shape[0]
    G = X.T @ X / n
    c = X.T @ y / n
    p, n_iter, viol = _cd_gram(G, c, float(alpha), np.zeros(X.shape[1]), int(max_iter), float(tol))
    return _result(X, y, p, converged=bool(viol <= tol), n_iter=int(n_iter),
                   extra={"kkt_violation": float(viol)})


# ---------------------------------------------------------------------------
# thresholded solvers
# ---------------------------------------------------------------------------

def fit_stlsq(X, y, alpha: float, threshold: float, max_iter: int = 20,
              tol: float = 1e-10, lasso_max_iter: int = 20000) -> FitResult:
    """Sequentially thresholded least squares.

    Each pass fits the surviving columns (LASSO when ``alpha > 0``, OLS
    otherwise), drops coefficients smaller than ``threshold`` in magnitude
    and stops once the support no longer shrinks.  The returned
    coefficients are an OLS refit on the final support.  An empty final
    support is returned as an all-zero fit.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y, "fit_stlsq")
    active = np.ones(X.shape[1], dtype=bool)
    converged = True
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        Xa = X[:, idx]
        if alpha > 0:
            res = fit_lasso(Xa, y, alpha, lasso_max_iter, tol)
            converged = converged and res.converged
            p = res.coefficients
        else:
            p = _lstsq(Xa, y)
        keep = np.abs(p) >= threshold
        new_active = np.zeros_like(active)
        new_active[idx[keep]] = True
        history.append(int(new_active.sum()))
        if np.array_equal(new_active, active) or not new_active.any():
            active = new_active
            break
        active = new_active
    coef = _refit(X, y, active)
    return _result(X, y, coef, converged=converged, n_iter=it, extra={"support_history": history})


def fit_stols(X, y, threshold: float) -> FitResult:
    """OLS, soft-threshold every coefficient by ``threshold``, OLS refit on survivors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y, "fit_stols")
    p = _lstsq(X, y)
    soft = np.sign(p) * np.maximum(np.abs(p) - threshold, 0.0)
    keep = soft != 0
    if keep.all():
        return _result(X, y, p)
    return _result(X, y, _refit(X, y, keep))
