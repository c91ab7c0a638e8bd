"""Synthetic data: factor-recovery DGPs and structural causal models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import pacf_to_ar, spectral_radius, build_companion, scalar_ar_loop

LEAK = 0.2
NOISE_STD = 0.1
N_SEGMENTS = 5


class SynthError(ValueError):
    pass


@dataclass
class SyntheticDataset:
    Y: np.ndarray
    F_true: np.ndarray
    U: np.ndarray
    seed: int
    kind: str
    segments: np.ndarray = None
    innovations: np.ndarray = None
    ar_coeffs: np.ndarray = None


def segment_index(T, n_segments=N_SEGMENTS):
    return np.minimum(np.arange(T) * n_segments // T, n_segments - 1)


def _random_orthogonal(rng, n, m=None):
    m = n if m is None else m
    q, rr = np.linalg.qr(rng.standard_normal((n, m)))
    return q * np.sign(np.diag(rr))


def mixing_network(r, N, rng):
    """Random two-layer leaky-ReLU map with orthogonal weights."""
    W1 = _random_orthogonal(rng, N, r)
    W2 = _random_orthogonal(rng, N)

    def mix(F):
        # unit-variance inputs: no variance ordering for PCA to exploit
        sd = F.std(axis=0)
        h = (F / np.where(sd > 0, sd, 1.0)) @ W1.T
        h = np.where(h > 0, h, LEAK * h)
        return h @ W2.T

    return mix


def _segment_laws(rng, r, n_segments):
    loc = rng.uniform(-1.0, 1.0, size=(n_segments, r))
    scale = np.exp(rng.uniform(np.log(0.2), np.log(1.5), size=(n_segments, r)))
    return loc, scale


def _check_sizes(r, N):
    if r > N:
        raise SynthError(f"need r <= N, got r={r}, N={N}")


def gen_static_dgp(T=200, N=20, r=5, seed=0):
    """Latents independent over time given the segment, nonlinearly mixed."""
    _check_sizes(r, N)
    rng = np.random.default_rng(seed)
    seg = segment_index(T)
    loc, scale = _segment_laws(rng, r, N_SEGMENTS)
    F = loc[seg] + scale[seg] * rng.laplace(size=(T, r))
    mix = mixing_network(r, N, rng)
    Y = mix(F) + NOISE_STD * rng.standard_normal((T, N))
    return SyntheticDataset(Y, F, np.eye(N_SEGMENTS)[seg], seed, "static", segments=seg)


def draw_ar_coeffs(rng, r, p, max_tries=100):
    """Stable per-factor AR(p) coefficients (p, r) from tanh-squashed partial autocorrelations."""
    for _ in range(max_tries):
        kappa = np.empty((p, r))
        kappa[0] = np.tanh(rng.uniform(np.arctanh(0.4), np.arctanh(0.9), size=r))
        if p > 1:
            kappa[1:] = np.tanh(rng.uniform(-0.3, 0.3, size=(p - 1, r)))
        phi = pacf_to_ar(kappa)
        comp = build_companion(phi.T, np.ones(r))
        if all(spectral_radius(b) < 1.0 for b in comp.blocks()):
            return phi
    raise SynthError(f"could not draw stable AR coefficients in {max_tries} tries")


def gen_dynamic_dgp(T=200, N=20, r=5, p=1, seed=0, innovations=None):
    """Diagonal AR(p) factors driven by segment-dependent Laplace innovations.

    ``innovations`` (T, r) overrides the random draw, e.g. zeros.
    """
    _check_sizes(r, N)
    rng = np.random.default_rng(seed)
    seg = segment_index(T)
    loc, scale = _segment_laws(rng, r, N_SEGMENTS)
    eta = loc[seg] + scale[seg] * rng.laplace(size=(T, r))
    if innovations is not None:
        eta = np.asarray(innovations, dtype=np.float64)
    phi = draw_ar_coeffs(rng, r, p)
    F = simulate_ar(phi, eta)
    mix = mixing_network(r, N, rng)
    Y = mix(F) + NOISE_STD * rng.standard_normal((T, N))
    return SyntheticDataset(Y, F, np.eye(N_SEGMENTS)[seg], seed, "dynamic", segments=seg,
                            innovations=eta, ar_coeffs=phi)


def gen_forecast_dgp(T=1500, N=8, r=2, p=1, seed=0, noise_std=NOISE_STD):
    """Stationary linear factor model: diagonal AR(p) factors, fixed Laplace innovations.

    No segment shifts, so a held-out tail is predictable from the past.
    """
    _check_sizes(r, N)
    rng = np.random.default_rng(seed)
    phi = draw_ar_coeffs(rng, r, p)
    eta = rng.laplace(scale=1.0 / np.sqrt(2.0), size=(T, r))
    F = simulate_ar(phi, eta)
    C = rng.standard_normal((N, r)) / np.sqrt(r)
    Y = F @ C.T + noise_std * rng.standard_normal((T, N))
    return SyntheticDataset(Y, F, np.zeros((T, 0)), seed, "forecast", innovations=eta, ar_coeffs=phi)


def simulate_ar(phi, eta):
    """Vectorised diagonal AR(p) from a zero initial state."""
    phi = np.atleast_2d(phi)
    p, r = phi.shape
    T = len(eta)
    ext = np.zeros((T + p, r))
    for t in range(T):
        ext[t + p] = (phi * ext[t:t + p][::-1]).sum(axis=0) + eta[t]
    return ext[p:]


# ---------------------------------------------------------------- SCMs

SCM_VARIANTS = ("base", "regime", "chain")


@dataclass
class ScmSpec:
    """Linear time-series SCM ``f_t = A_t f_{t-1} + eps_t``, ``y_t = C f_t``.

    ``A`` is the transition for base/chain; the regime variant switches
    between ``rho * I`` for the values in ``regime_rhos`` every
    ``regime_period`` steps.
    """

    variant: str = "base"
    r: int = 3
    N: int = 10
    rho: float = 0.7
    chain_diag: float = 0.6
    chain_super: float = 0.3
    regime_rhos: tuple = (0.4, 0.8)
    regime_period: int = 50
    shock_scale: float = 1.0
    nonlinear: bool = False
    seed: int = 0
    C: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in SCM_VARIANTS:
            raise SynthError(f"unknown SCM variant {self.variant!r}")
        if self.C is None:
            rng = np.random.default_rng(self.seed + 10_000)
            self.C = rng.standard_normal((self.N, self.r)) / np.sqrt(self.r)
        self.C = np.asarray(self.C, dtype=np.float64)
        for A in self.matrices():
            if spectral_radius(A) >= 1.0:
                raise SynthError(f"{self.variant} SCM transition is not stable")

    @property
    def A(self):
        if self.variant == "base":
            return self.rho * np.eye(self.r)
        if self.variant == "chain":
            return (self.chain_diag * np.eye(self.r)
                    + self.chain_super * np.eye(self.r, k=-1))
        return self.regime_rhos[0] * np.eye(self.r)

    def matrices(self):
        if self.variant == "regime":
            return [rho * np.eye(self.r) for rho in self.regime_rhos]
        return [self.A]

    def transition(self, t):
        """Matrix producing row ``t`` from row ``t - 1``."""
        if self.variant != "regime":
            return self.A
        idx = (t // self.regime_period) % len(self.regime_rhos)
        return self.regime_rhos[idx] * np.eye(self.r)

    def observe(self, F):
        Y = F @ self.C.T
        if self.nonlinear:
            Y = np.tanh(Y) + 0.1 * Y
        return Y


def gen_scm(spec, T, seed, shocks=None):
    """Simulate ``(Y, F, E)``; ``shocks`` (T, r) replays stored innovations."""
    rng = np.random.default_rng(seed)
    E = spec.shock_scale * rng.laplace(size=(T, spec.r)) if shocks is None else np.asarray(shocks, dtype=np.float64)
    F = np.empty((T, spec.r))
    prev = np.zeros(spec.r)
    for t in range(T):
        prev = spec.transition(t) @ prev + E[t]
        F[t] = prev
    return spec.observe(F), F, E


def true_irf(spec, k, c, H, t0=0):
    """Rows h = 0..H of ``c C (A_{t0+h} ... A_{t0+1}) e_k``."""
    if spec.nonlinear:
        raise SynthError("analytic IRF needs a linear observation map; use paired simulation")
    resp = np.zeros(spec.r)
    resp[k] = c
    out = np.empty((H + 1, spec.N))
    for h in range(H + 1):
        if h:
            resp = spec.transition(t0 + h) @ resp
        out[h] = spec.C @ resp
    return out


def simulated_irf(spec, k, c, H, t0, T, seed):
    """IRF by paired simulation: shock (t0, k) set to c versus set to 0."""
    _, _, E = gen_scm(spec, T, seed)
    E_do, E_null = E.copy(), E.copy()
    E_do[t0, k] = c
    E_null[t0, k] = 0.0
    Y_do, _, _ = gen_scm(spec, T, seed, shocks=E_do)
    Y_null, _, _ = gen_scm(spec, T, seed, shocks=E_null)
    return (Y_do - Y_null)[t0:t0 + H + 1]


__all__ = [
    "SyntheticDataset", "ScmSpec", "SynthError", "gen_static_dgp", "gen_dynamic_dgp",
    "gen_forecast_dgp", "gen_scm", "true_irf", "simulated_irf", "simulate_ar", "draw_ar_coeffs",
    "mixing_network", "segment_index", "scalar_ar_loop",
]
