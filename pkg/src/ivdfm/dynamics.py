"""Diagonal AR(p) factor dynamics, companion form and impulse responses.

Each factor follows its own AR(p) recursion driven by its own innovation
component. Transition coefficients are parameterised through partial
autocorrelations squashed by ``tanh``, which keeps every per-regime AR
polynomial stationary; for p = 1 this is just ``tanh(raw)``.

State layout is factor-major: ``s = (f1_t, f1_{t-1}, ..., f2_t, ...)`` so the
companion matrix is block-diagonal with one p x p block per factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


class DynamicsError(ValueError):
    pass


# ---------------------------------------------------------------- coefficient maps

def pacf_to_ar(kappa):
    """Durbin-Levinson map from partial autocorrelations (p, r) to AR coefficients (p, r)."""
    kappa = np.atleast_2d(np.asarray(kappa, dtype=np.float64))
    p = kappa.shape[0]
    phi = kappa[:1].copy()
    for k in range(1, p):
        prev = phi
        phi = np.vstack([prev - kappa[k] * prev[::-1], kappa[k:k + 1]])
    return phi


def ar_to_pacf(phi):
    """Inverse of :func:`pacf_to_ar` (step-down recursion)."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64)).copy()
    p = phi.shape[0]
    kappa = np.empty_like(phi)
    for k in range(p - 1, -1, -1):
        kk = phi[k].copy()
        kappa[k] = kk
        if k == 0:
            break
        head = phi[:k]
        phi = (head + kk * head[::-1]) / (1.0 - kk**2)
    return kappa


def pacf_to_ar_tensor(raw):
    """Differentiable version of ``pacf_to_ar(tanh(raw))`` for a (p, r) tensor."""
    kappa = dc.tanh(raw)
    p = raw.shape[0]
    rows = [dc.take_rows(kappa, slice(0, 1))]
    for k in range(1, p):
        kk = dc.take_rows(kappa, slice(k, k + 1))
        rows = [dc.sub(rows[j], dc.mul(kk, rows[k - 1 - j])) for j in range(k)] + [kk]
    return dc.concat(rows, axis=0) if p > 1 else rows[0]


# ---------------------------------------------------------------- fused recurrence

def _ar_forward(phi, b, etas, s0):
    p, r = phi.shape
    T = etas.shape[0]
    ext = np.empty((p + T, r))
    ext[:p] = s0[::-1]
    drive = etas * b
    for t in range(T):
        acc = drive[t].copy()
        for j in range(p):
            acc += phi[j] * ext[p + t - 1 - j]
        ext[p + t] = acc
    return ext


def ar_filter(phi, b, etas, s0):
    """Run ``f_t = sum_j phi_j * f_{t-1-j} + b * eta_t`` for t = 1..T.

    Parameters are tensors: ``phi`` (p, r), ``b`` (r,), ``etas`` (T, r) and
    ``s0`` (p, r) with ``s0[0] = f_0``, ``s0[1] = f_{-1}``, ... Returns the
    (T, r) factor tensor. The backward pass runs the adjoint recurrence.
    """
    phi, b, etas, s0 = (dc._lift(x) for x in (phi, b, etas, s0))
    p, r = phi.shape
    if b.shape != (r,) or s0.shape != (p, r) or etas.value.ndim != 2 or etas.shape[1] != r:
        raise DynamicsError(
            f"ar_filter: shapes phi{phi.shape} b{b.shape} etas{etas.shape} s0{s0.shape} do not conform")
    ext = _ar_forward(phi.value, b.value, etas.value, s0.value)
    T = etas.shape[0]

    def grad_fn(G):
        lam = np.zeros((T + p, r))
        pv = phi.value
        for t in range(T - 1, -1, -1):
            acc = G[t].copy()
            for j in range(p):
                acc += pv[j] * lam[t + 1 + j]
            lam[t] = acc
        lam = lam[:T]
        g_eta = lam * b.value
        g_b = (lam * etas.value).sum(axis=0)
        g_phi = np.empty((p, r))
        for j in range(p):
            g_phi[j] = (lam * ext[p - 1 - j:p - 1 - j + T]).sum(axis=0)
        g_s0 = np.zeros((p, r))
        for i in range(p):
            for j in range(i, p):
                if j - i < T:
                    g_s0[i] += pv[j] * lam[j - i]
        return g_phi, g_b, g_eta, g_s0

    return dc.Tensor(ext[p:].copy(), (phi, b, etas, s0), grad_fn, "ar_filter")


def scalar_ar_loop(phi, b, etas, s0):
    """Plain scalar-loop simulator used as an independent reference."""
    phi = np.atleast_2d(phi)
    p, r = phi.shape
    T = len(etas)
    out = np.zeros((T, r))
    for i in range(r):
        hist = [float(s0[j][i]) for j in range(p)]
        for t in range(T):
            val = float(b[i]) * float(etas[t][i])
            for j in range(p):
                val += float(phi[j][i]) * hist[j]
            hist = [val] + hist[:-1]
            out[t, i] = val
    return out


# ---------------------------------------------------------------- learnable dynamics

class DiagonalDynamics:
    """Per-regime diagonal AR(p) coefficients mixed by frozen regime weights.

    ``raw`` has shape (K, p, r) and maps through tanh/Durbin-Levinson to AR
    coefficients; ``b`` has shape (K, r). ``s0`` (p, r) is the initial state,
    most recent lag first.
    """

    def __init__(self, r, p=1, K=1, raw=None, b=None, s0=None):
        if p < 1:
            raise DynamicsError(f"AR order must be >= 1, got p={p}")
        self.r, self.p, self.K = r, p, K
        if raw is None:
            raw = np.zeros((K, p, r))
            raw[:, 0, :] = np.arctanh(0.5)
        b = np.ones((K, r)) if b is None else b
        self.raw = dc.param(np.reshape(raw, (K, p, r)), name="dyn.raw")
        self.b = dc.param(np.reshape(b, (K, r)), name="dyn.b")
        self.s0 = dc.param(np.zeros((p, r)) if s0 is None else np.reshape(s0, (p, r)), name="dyn.s0")

    def parameters(self):
        return [self.raw, self.b, self.s0]

    def coefficients(self, pi=None):
        """Mixed ``(phi (p, r), b (r,))`` tensors for frozen weights ``pi`` (K,)."""
        pi = np.ones(1) if pi is None else np.asarray(pi, dtype=np.float64)
        if pi.shape != (self.K,):
            raise DynamicsError(f"regime weights have shape {pi.shape}, expected ({self.K},)")
        if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
            raise DynamicsError("regime weights are not on the simplex")
        phis = []
        for k in range(self.K):
            raw_k = dc.reshape(dc.take_rows(self.raw, k), (self.p, self.r))
            phis.append(dc.mul(pacf_to_ar_tensor(raw_k), float(pi[k])))
        phi = phis[0]
        for extra in phis[1:]:
            phi = dc.add(phi, extra)
        b = dc.sum_(dc.mul(self.b, pi[:, None]), axis=0)
        return phi, b

    def coefficients_numpy(self, pi=None):
        phi, b = self.coefficients(pi)
        return phi.value, b.value

    def rollout(self, etas, pi=None, s0=None):
        """Factor tensor (T, r); ``s0`` overrides the stored initial state."""
        etas = dc._lift(etas)
        if not np.all(np.isfinite(etas.value)):
            bad = np.argwhere(~np.isfinite(etas.value))[0]
            raise DynamicsError(f"non-finite innovation at index {tuple(int(i) for i in bad)}")
        phi, b = self.coefficients(pi)
        return ar_filter(phi, b, etas, self.s0 if s0 is None else s0)

    def step(self, state, eta, pi=None):
        """One update. ``state`` is f (r,) for p = 1 or the (p, r) lag stack."""
        phi, b = self.coefficients_numpy(pi)
        state = np.asarray(state, dtype=np.float64)
        stack = state[None, :] if state.ndim == 1 else state
        new = (phi * stack).sum(axis=0) + b * np.asarray(eta)
        if state.ndim == 1:
            return new
        return np.vstack([new, stack[:-1]])

    def companion(self, pi=None):
        phi, b = self.coefficients_numpy(pi)
        return build_companion(phi.T, b, s0=self.s0.value)


def step(A_diag, B_diag, f, eta):
    """``f_next = A f + B eta`` for diagonal A and B given as vectors."""
    return np.asarray(A_diag) * np.asarray(f) + np.asarray(B_diag) * np.asarray(eta)


def rollout(dynamics, etas, pi=None):
    """Numpy rollout of a :class:`DiagonalDynamics`."""
    return dynamics.rollout(np.asarray(etas, dtype=np.float64), pi).value


# ---------------------------------------------------------------- companion form

@dataclass
class CompanionSystem:
    p: int
    r: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    s0: np.ndarray

    def blocks(self):
        return [self.A[i * self.p:(i + 1) * self.p, i * self.p:(i + 1) * self.p] for i in range(self.r)]


def build_companion(ar_coeffs, b, s0=None):
    """Assemble the block-diagonal companion system.

    ``ar_coeffs`` is (r, p): row i holds factor i's lag coefficients. ``s0``
    may be a (p, r) lag stack (most recent first) or a flat (rp,) state.
    """
    ar_coeffs = np.atleast_2d(np.asarray(ar_coeffs, dtype=np.float64))
    r, p = ar_coeffs.shape
    if p < 1:
        raise DynamicsError("AR order must be >= 1")
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), (r,))
    A = np.zeros((r * p, r * p))
    B = np.zeros((r * p, r))
    C = np.zeros((r, r * p))
    for i in range(r):
        o = i * p
        A[o, o:o + p] = ar_coeffs[i]
        for j in range(1, p):
            A[o + j, o + j - 1] = 1.0
        B[o, i] = b[i]
        C[i, o] = 1.0
    if s0 is None:
        state = np.zeros(r * p)
    else:
        s0 = np.asarray(s0, dtype=np.float64)
        state = s0.T.reshape(-1) if s0.ndim == 2 else s0.reshape(-1)
    return CompanionSystem(p, r, A, B, C, state.copy())


def unroll_companion(sys, etas):
    """Factors (T, r) from ``s_t = A s_{t-1} + B eta_t``, ``f_t = C s_t``."""
    etas = np.asarray(etas, dtype=np.float64)
    if etas.ndim != 2 or etas.shape[1] != sys.r:
        raise DynamicsError(f"innovations shape {etas.shape} does not match r={sys.r}")
    s = sys.s0.copy()
    out = np.empty((etas.shape[0], sys.r))
    for t, eta in enumerate(etas):
        s = sys.A @ s + sys.B @ eta
        out[t] = sys.C @ s
    return out


def impulse_response(sys, j):
    """``H_j = C A^j B`` (r x r)."""
    if j < 0:
        raise DynamicsError("lag must be non-negative")
    return sys.C @ np.linalg.matrix_power(sys.A, j) @ sys.B


def spectral_radius(M, squarings=40):
    """Spectral radius via repeated squaring of the normalised matrix.

    Uses Gelfand's formula ``rho = lim ||M^k||^(1/k)`` with k = 2^squarings,
    rescaling at each squaring to avoid overflow.
    """
    M = np.asarray(M, dtype=np.float64)
    norm = np.linalg.norm(M, 2)
    if norm == 0.0:
        return 0.0
    X = M / norm
    log_rho = np.log(norm)
    k = 1.0
    for _ in range(squarings):
        X = X @ X
        k *= 2.0
        n = np.linalg.norm(X, 2)
        if n == 0.0:
            return 0.0
        log_rho += np.log(n) / k
        X = X / n
    return float(np.exp(log_rho))


def is_stable(sys):
    return all(spectral_radius(block) < 1.0 for block in sys.blocks())


# ---------------------------------------------------------------- initialisation helpers

def pca_factors(Y, r):
    """Scores (T, r) and loadings (N, r) of the centred data matrix."""
    Y = np.asarray(Y, dtype=np.float64)
    Yc = Y - Y.mean(axis=0)
    U, S, Vt = np.linalg.svd(Yc, full_matrices=False)
    return U[:, :r] * S[:r], Vt[:r].T


def ols_ar(F, p):
    """Per-column OLS AR(p) coefficients, shape (p, r). Rows are lags 1..p.

    A column whose design is singular (or too short) is left as NaN.
    """
    F = np.asarray(F, dtype=np.float64)
    T, r = F.shape
    out = np.full((p, r), np.nan)
    if T <= 2 * p:
        return out
    for i in range(r):
        x = F[:, i] - F[:, i].mean()
        X = np.column_stack([x[p - 1 - j:T - 1 - j] for j in range(p)])
        target = x[p:]
        XtX = X.T @ X
        if np.linalg.cond(XtX) > 1e12:
            continue
        out[:, i] = np.linalg.solve(XtX, X.T @ target)
    return out
