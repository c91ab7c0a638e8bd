"""Conditional innovation prior and regime embeddings.

The prior over innovations factorises over components. Each component has a
location ``m`` and a log-scale ``log b`` produced by a small network from the
auxiliary features ``u`` and the expected regime embedding ``e``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from . import diffcore as dc
from .nn import MLP

FAMILIES = ("laplace", "gaussian", "studentt")
LOG2PI = math.log(2.0 * math.pi)


class PriorError(ValueError):
    pass


def _as_2d(u):
    u = np.asarray(u, dtype=np.float64)
    return u[None, :] if u.ndim == 1 else u


class RegimeBank:
    """K learnable regime embeddings mixed by ``softmax(RegimeNet(u) / tau)``."""

    def __init__(self, K, d, d_u, rng, tau=0.2, hidden=32):
        if K < 1:
            raise PriorError(f"need at least one regime, got K={K}")
        if tau <= 0:
            raise PriorError(f"temperature must be positive, got {tau}")
        self.K, self.d, self.tau = K, d, tau
        self.embeddings = dc.param(rng.normal(0.0, 1.0, size=(K, d)), name="regime.embeddings")
        self.net = MLP([d_u, hidden, K], rng, name="regime.net")

    def parameters(self):
        return [self.embeddings] + self.net.parameters()

    def __call__(self, u):
        """Return ``(pi, e)`` as tensors of shape (T, K) and (T, d)."""
        u = _as_2d(u)
        logits = self.net(dc.constant(u))
        if not np.all(np.isfinite(logits.value)):
            raise PriorError("RegimeNet produced non-finite logits")
        pi = dc.softmax(logits, self.tau, axis=-1)
        e = dc.matmul(pi, self.embeddings)
        return pi, e

    def embed(self, u):
        """Numpy ``(pi, e)``; a single ``u`` vector returns 1-d arrays."""
        pi, e = self(u)
        if np.ndim(u) == 1:
            return pi.value[0], e.value[0]
        return pi.value, e.value


def regime_embedding(bank, u):
    return bank.embed(u)


class ConstantNet:
    """Prior network stand-in returning fixed ``(m, log b)`` for every row."""

    def __init__(self, m, log_b):
        self.out = np.concatenate([np.atleast_1d(m), np.atleast_1d(log_b)]).astype(np.float64)

    def __call__(self, x):
        return dc.constant(np.tile(self.out, (x.shape[0], 1)))


def _log_density(family, eta, m, log_b, nu):
    """Elementwise log-density tensor for the chosen family."""
    z = dc.mul(dc.sub(eta, m), dc.exp(dc.neg(log_b)))
    if family == "laplace":
        return dc.sub(dc.neg(dc.abs_(z)), dc.add(log_b, math.log(2.0)))
    if family == "gaussian":
        return dc.sub(dc.mul(dc.square(z), -0.5), dc.add(log_b, 0.5 * LOG2PI))
    const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
    tail = dc.mul(dc.log(dc.add(dc.mul(dc.square(z), 1.0 / nu), 1.0)), -(nu + 1) / 2)
    return dc.add(dc.sub(tail, log_b), const)


class InnovationPrior:
    """Factorised conditional prior ``p(eta | u, e)``.

    Parameters
    ----------
    family : {"laplace", "gaussian", "studentt"}
    r : int
        Innovation dimension.
    d_in : int
        Width of the conditioning input ``concat(u, e)``.
    net : callable, optional
        Maps a (T, d_in) tensor to (T, 2r) tensor ``[m, log b]``. Defaults to a
        one-hidden-layer ReLU MLP.
    nu : float
        Student-t degrees of freedom (must exceed 2).
    mixture : bool
        With a regime bank of K > 1, evaluate ``sum_k pi_k p_k(eta | u)``.
    """

    def __init__(self, family, r, d_in, rng=None, hidden=64, net=None, nu=4.0, mixture=False):
        family = family.lower()
        if family not in FAMILIES:
            raise PriorError(f"unknown family {family!r}; expected one of {FAMILIES}")
        if family == "studentt" and nu <= 2:
            raise PriorError(f"Student-t prior needs nu > 2, got {nu}")
        self.family, self.r, self.nu, self.mixture = family, r, float(nu), mixture
        self.d_in = d_in
        if net is None:
            net = MLP([d_in, hidden, 2 * r], rng, name="prior.net")
            # start near a unit-scale prior
            net.weights[-1].value *= 0.1
        self.net = net

    def parameters(self):
        return self.net.parameters() if hasattr(self.net, "parameters") else []

    def params(self, u, e):
        """Location and log-scale tensors, each (T, r)."""
        u = u if isinstance(u, dc.Tensor) else dc.constant(_as_2d(u))
        e = e if isinstance(e, dc.Tensor) else dc.constant(_as_2d(e))
        out = self.net(dc.concat([u, e], axis=-1))
        return dc.take_cols(out, slice(0, self.r)), dc.take_cols(out, slice(self.r, 2 * self.r))

    def log_prob_terms(self, eta, u, e, bank=None, pi=None):
        """Per-step log-density tensor (T,), summed over components."""
        eta = eta if isinstance(eta, dc.Tensor) else dc.constant(_as_2d(eta))
        if self.mixture and bank is not None and bank.K > 1:
            u = u if isinstance(u, dc.Tensor) else dc.constant(_as_2d(u))
            T = eta.shape[0]
            if pi is None:
                pi, _ = bank(u.value)
            comps = []
            for k in range(bank.K):
                e_k = dc.matmul(dc.constant(np.ones((T, 1))),
                                dc.take_rows(bank.embeddings, slice(k, k + 1)))
                m, log_b = self.params(u, e_k)
                comps.append(dc.reshape(dc.sum_(_log_density(self.family, eta, m, log_b, self.nu), axis=1), (T, 1)))
            stacked = dc.add(dc.concat(comps, axis=1), dc.log(pi))
            return dc.logsumexp(stacked, axis=1)
        m, log_b = self.params(u, e)
        return dc.sum_(_log_density(self.family, eta, m, log_b, self.nu), axis=1)

    def log_prob(self, eta, u, e, bank=None):
        """Total log-density (float) of one or more innovation vectors."""
        return float(self.log_prob_terms(eta, u, e, bank=bank).value.sum())

    def sample(self, u, e, rng):
        """Draw one innovation per row of ``u``; shape (T, r), or (r,) for a single u."""
        single = np.ndim(u) == 1
        m, log_b = self.params(u, e)
        m, b = m.value, np.exp(log_b.value)
        if self.family == "laplace":
            draw = rng.laplace(0.0, 1.0, size=m.shape)
        elif self.family == "gaussian":
            draw = rng.standard_normal(m.shape)
        else:
            draw = rng.standard_t(self.nu, size=m.shape)
        out = m + b * draw
        return out[0] if single else out

    def kl_estimate(self, q_mu, q_sigma, u, e, n_samples, rng, exact=False, bank=None):
        """``E_q[log q - log p]`` for ``q = N(q_mu, diag q_sigma^2)``.

        Monte Carlo with reparameterised samples; ``exact=True`` uses the
        closed form (Gaussian family, single regime only).
        """
        q_mu = np.atleast_1d(np.asarray(q_mu, dtype=np.float64))
        q_sigma = np.atleast_1d(np.asarray(q_sigma, dtype=np.float64))
        if np.any(q_sigma <= 0):
            raise PriorError("q_sigma must be positive")
        if exact:
            if self.family != "gaussian" or (self.mixture and bank is not None and bank.K > 1):
                raise PriorError("closed-form KL exists only for the Gaussian family with K=1")
            m, log_b = self.params(np.atleast_1d(u), np.atleast_1d(e))
            m, b = m.value[0], np.exp(log_b.value[0])
            return float(np.sum(np.log(b / q_sigma) + (q_sigma**2 + (q_mu - m) ** 2) / (2 * b**2) - 0.5))
        if n_samples < 1:
            raise PriorError("n_samples must be at least 1")
        eps = rng.standard_normal((n_samples, q_mu.size))
        eta = q_mu + q_sigma * eps
        log_q = np.sum(-0.5 * LOG2PI - np.log(q_sigma) - 0.5 * eps**2, axis=1)
        U = np.repeat(_as_2d(u), n_samples, axis=0)
        E = np.repeat(_as_2d(e), n_samples, axis=0)
        log_p = self.log_prob_terms(eta, U, E, bank=bank).value
        return float(np.mean(log_q - log_p))

    def natural_params(self, u, e):
        """Per-component natural-parameter coordinates, shape (T, 2r).

        Gaussian and Student-t use ``(m / b^2, -1 / (2 b^2))``; Laplace uses
        ``(m / b, -1 / b)``.
        """
        m, log_b = self.params(u, e)
        m, b = m.value, np.exp(log_b.value)
        if self.family == "laplace":
            return np.concatenate([m / b, -1.0 / b], axis=1)
        return np.concatenate([m / b**2, -0.5 / b**2], axis=1)


def numerical_rank(M, rtol=1e-8):
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def lambda_rank(prior, us, bank=None, rtol=1e-8):
    """Rank of natural-parameter variation across auxiliary values.

    Rows are ``lambda(u_i, e(u_i)) - lambda(u_0, e(u_0))``; the identifiability
    condition asks for full rank over at least r+1 distinct contexts.
    """
    us = _as_2d(us)
    if us.shape[0] < 2:
        raise PriorError("lambda_rank needs at least two auxiliary values")
    if bank is not None:
        _, e = bank.embed(us)
    else:
        e = np.zeros((us.shape[0], prior.d_in - us.shape[1]))
    lam = prior.natural_params(us, e)
    return numerical_rank(lam[1:] - lam[0], rtol)


# ---------------------------------------------------------------- Gaussian degeneracy

def random_rotation(rng, r):
    q, rr = np.linalg.qr(rng.standard_normal((r, r)))
    return q * np.sign(np.diag(rr))


def _innovation_logpdf(family, eta, loc, scale):
    z = (eta - loc) / scale
    if family == "gaussian":
        return np.sum(-0.5 * LOG2PI - np.log(scale) - 0.5 * z**2)
    if family == "laplace":
        return np.sum(-np.log(2.0 * scale) - np.abs(z))
    raise PriorError(f"degeneracy demo supports gaussian/laplace, got {family!r}")


def _linear_model_loglik(y, A, C, f0, loc, scale, family):
    """Exact log p(y_{1:T}) for f_t = A f_{t-1} + eta_t, y_t = C f_t (C square, invertible).

    Innovations are recovered exactly from y, so the likelihood is the
    innovation density plus the change-of-variables term.
    """
    Cinv = np.linalg.inv(C)
    f = y @ Cinv.T
    prev = np.vstack([f0, f[:-1]])
    eta = f - prev @ A.T
    _, logdet = np.linalg.slogdet(C)
    return _innovation_logpdf(family, eta, loc, scale) - y.shape[0] * logdet


def gaussian_degeneracy_demo(seed, family="gaussian", r=2, T=20, R=None):
    """Likelihood of one observed sequence under a model and its rotated twin.

    The base model has innovations ``eta_t ~ family(mu_t, s_t I)`` with
    time-varying location and isotropic scale, transition ``A`` and square
    decoder ``C``. The twin uses ``R mu_t``, the same scales, ``R A R^T`` and
    ``C R^T``. For Gaussian innovations the two likelihoods coincide.
    """
    rng = np.random.default_rng(seed)
    if R is None:
        R = random_rotation(rng, r)
    R = np.asarray(R, dtype=np.float64)
    if np.linalg.norm(R.T @ R - np.eye(r)) > 1e-10:
        raise PriorError("rotation matrix is not orthogonal")
    A = np.diag(rng.uniform(0.2, 0.8, size=r))
    C = rng.standard_normal((r, r)) + 2.0 * np.eye(r)
    f0 = rng.standard_normal(r)
    t = np.arange(T)
    mu = np.stack([np.sin(2 * np.pi * t / T + i) for i in range(r)], axis=1)
    s = np.exp(0.5 * np.cos(2 * np.pi * t / T))[:, None] * np.ones((1, r))

    # simulate observations from the base model
    if family == "gaussian":
        eta = mu + s * rng.standard_normal((T, r))
    else:
        eta = mu + s * rng.laplace(size=(T, r))
    f = np.empty((T, r))
    prev = f0
    for i in range(T):
        prev = A @ prev + eta[i]
        f[i] = prev
    y = f @ C.T

    ll_original = _linear_model_loglik(y, A, C, f0, mu, s, family)
    ll_rotated = _linear_model_loglik(y, R @ A @ R.T, C @ R.T, R @ f0, mu @ R.T, s, family)
    return ll_original, ll_rotated
