"""PCA + OLS dynamic factor model baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ols_ar


@dataclass
class PcaDfm:
    loadings: np.ndarray  # (N, r), orthonormal columns
    ar_coeffs: np.ndarray  # (p, r)
    mean: np.ndarray
    std: np.ndarray
    factors: np.ndarray  # fit-time scores (T, r)
    explained: float


def fit_pca_dfm(Y, r, p=1):
    """Standardise, take the top-r principal component scores, fit AR(p) per factor."""
    Y = np.asarray(Y, dtype=np.float64)
    T, N = Y.shape
    if r > N:
        raise ValueError(f"r={r} exceeds the number of series N={N}")
    if T <= p + 1:
        raise ValueError(f"need more than p+1={p + 1} rows, got {T}")
    mean = Y.mean(axis=0)
    std = Y.std(axis=0)
    std[std == 0] = 1.0
    Z = (Y - mean) / std
    U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    if S[0] == 0 or S.size < r or S[r - 1] <= 1e-12 * S[0]:
        raise ValueError("degenerate covariance: fewer than r non-zero principal components")
    scores = U[:, :r] * S[:r]
    explained = float(np.sum(S[:r] ** 2) / np.sum(S**2))
    return PcaDfm(Vt[:r].T.copy(), ols_ar(scores, p), mean, std, scores, explained)


def baseline_factors(model, Y):
    """Project standardised observations onto the loadings."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[1] != model.loadings.shape[0]:
        raise ValueError(f"expected {model.loadings.shape[0]} series, got {Y.shape[1]}")
    return ((Y - model.mean) / model.std) @ model.loadings
