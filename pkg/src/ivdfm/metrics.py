"""Factor-recovery, impulse-response and forecast metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, subspace_angles
from scipy.optimize import linear_sum_assignment

QUANTILES = (0.1, 0.5, 0.9)
SIGN_ZERO = 1e-12


@dataclass
class MatchResult:
    permutation: np.ndarray  # permutation[i] = column of F_hat matched to true column i
    correlations: np.ndarray  # signed correlation of each matched pair
    mcc: float

    @property
    def signs(self):
        return np.where(self.correlations < 0, -1.0, 1.0)


def _standardize(X):
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    sd = Xc.std(axis=0)
    zero = sd == 0
    if np.any(zero):
        warnings.warn(f"zero-variance columns {np.flatnonzero(zero).tolist()}; correlations set to 0",
                      RuntimeWarning, stacklevel=3)
    return np.where(zero, 0.0, Xc / np.where(zero, 1.0, sd)), zero


def cross_correlation(A, B):
    """Pearson correlations between columns of A (rows) and B (columns)."""
    Za, _ = _standardize(A)
    Zb, _ = _standardize(B)
    return Za.T @ Zb / len(Za)


def mcc(F_true, F_hat):
    """Mean absolute correlation under the best one-to-one column matching."""
    C = cross_correlation(F_true, F_hat)
    rows, cols = linear_sum_assignment(-np.abs(C))
    perm = np.empty(C.shape[0], dtype=int)
    perm[rows] = cols
    corr = C[rows, cols]
    return MatchResult(perm, corr, float(np.mean(np.abs(corr))))


def _orth_basis(X, tol=1e-10):
    X = np.asarray(X, dtype=np.float64)
    Q, R, _ = qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d[0])) if d.size and d[0] > 0 else 0
    if rank < X.shape[1]:
        warnings.warn(f"rank-deficient input ({rank} < {X.shape[1]}); using reduced rank",
                      RuntimeWarning, stacklevel=3)
    return Q[:, :rank]


def subspace_distance(F_true, F_hat):
    """Mean principal angle (radians) between the column spans."""
    Qa, Qb = _orth_basis(F_true), _orth_basis(F_hat)
    if Qa.shape[1] == 0 or Qb.shape[1] == 0:
        raise ValueError("subspace distance needs at least one non-zero column on each side")
    # sine-based for small angles: arccos alone loses ~1e-8 near zero
    return float(np.mean(subspace_angles(Qa, Qb)))


def smoothness(F_hat):
    """Mean Euclidean step size of the per-column standardised trajectory."""
    F = np.asarray(F_hat, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    Fc = F - F.mean(axis=0)
    sd = Fc.std(axis=0)
    Z = np.where(sd > 0, Fc / np.where(sd > 0, sd, 1.0), F)
    return float(np.mean(np.linalg.norm(np.diff(Z, axis=0), axis=1)))


def trace_r2(F_true, F_hat):
    """Share of centred true-factor variance explained by regression on F_hat."""
    Ft = np.asarray(F_true, dtype=np.float64)
    Fh = np.asarray(F_hat, dtype=np.float64)
    Ftc = Ft - Ft.mean(axis=0)
    X = np.column_stack([np.ones(len(Fh)), Fh])
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < XtX.shape[0]:
        warnings.warn("singular design in trace_r2; ridge 1e-8 fallback", RuntimeWarning, stacklevel=2)
        beta = np.linalg.solve(XtX + 1e-8 * np.eye(len(XtX)), X.T @ Ftc)
    else:
        beta = np.linalg.lstsq(X, Ftc, rcond=None)[0]
    resid = Ftc - X @ beta
    total = np.sum(Ftc**2)
    if total == 0:
        return 0.0
    return float(np.clip(1.0 - np.sum(resid**2) / total, 0.0, 1.0))


def _sign(x):
    return np.where(np.abs(x) < SIGN_ZERO, 0.0, np.sign(x))


def irf_metrics(irf_true, irf_hat):
    """MSE, MAE, sign accuracy and Pearson correlation over an IRF grid."""
    a = np.asarray(irf_true, dtype=np.float64)
    b = np.asarray(irf_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"IRF grids differ in shape: {a.shape} vs {b.shape}")
    diff = b - a
    sign_acc = float(np.mean(_sign(a) == _sign(b)))
    fa, fb = a.ravel() - a.mean(), b.ravel() - b.mean()
    denom = np.sqrt(np.sum(fa**2) * np.sum(fb**2))
    if denom == 0:
        warnings.warn("constant IRF grid; correlation set to 0", RuntimeWarning, stacklevel=2)
        corr = 0.0
    else:
        corr = float(np.sum(fa * fb) / denom)
    return {"mse": float(np.mean(diff**2)), "mae": float(np.mean(np.abs(diff))),
            "sign_acc": sign_acc, "corr": corr}


def pinball(tau, q, y):
    d = np.asarray(y) - np.asarray(q)
    return np.maximum(tau * d, (tau - 1.0) * d)


def crps_quantile(q_forecasts, y, quantiles=QUANTILES):
    """Quantile-based CRPS: twice the mean pinball loss over levels and cells."""
    q = np.asarray(q_forecasts, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if q.shape[:-1] != y.shape or q.shape[-1] != len(quantiles):
        raise ValueError(f"quantile array {q.shape} does not match targets {y.shape}")
    if np.any(np.diff(q, axis=-1) < 0):
        raise ValueError("quantile forecasts are not monotone in the level")
    losses = [pinball(tau, q[..., i], y) for i, tau in enumerate(quantiles)]
    return float(2.0 * np.mean(np.stack(losses, axis=-1)))


def mse_standardized(y_hat_median, y):
    d = np.asarray(y_hat_median, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.mean(d**2))
