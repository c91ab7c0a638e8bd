"""Variational model: encoder, decoder, ELBO, training loop and forecasting."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .dynamics import DiagonalDynamics, ar_to_pacf, ols_ar, pca_factors
from .nn import MLP, Adam
from .prior import InnovationPrior, PriorError, RegimeBank

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)
CONTEXTS = ("timestep", "segment", "constant")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    r: int = 5
    p: int = 3
    K: int = 7
    tau: float = 0.2
    family: str = "laplace"
    nu: float = 4.0
    mixture_prior: bool = False
    sigma2: float = 0.03
    beta_kl: float = 1.0
    lr: float = 0.002
    max_epochs: int = 200
    window: int = 200
    stride: int = 25
    seed: int = 0
    enc_hidden: int = 128
    enc_layers: int = 2
    dec_hidden: int = 128
    dec_layers: int = 1
    dropout: float = 0.08
    prior_hidden: int = 64
    regime_hidden: int = 32
    d_embed: int = 8
    n_lags: int | None = 1
    context: str = "timestep"
    period: float | None = None
    n_segments: int = 5
    pca_init: bool = True

    def __post_init__(self):
        for name in ("r", "p", "K", "window", "stride", "enc_hidden", "dec_hidden", "d_embed"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("tau", "sigma2", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_epochs < 0 or self.beta_kl < 0 or not 0 <= self.dropout < 1:
            raise ValueError("max_epochs and beta_kl must be >= 0 and dropout in [0, 1)")
        if self.context not in CONTEXTS:
            raise ValueError(f"context must be one of {CONTEXTS}, got {self.context!r}")

    @property
    def lags(self):
        return self.p if self.n_lags is None else self.n_lags

    def to_dict(self):
        return dataclasses.asdict(self)


def context_features(t, kind="timestep", period=1.0, n_segments=5):
    """Auxiliary features for (global) time indices ``t``.

    ``timestep`` gives ``[t/P, sin(2 pi t/P), cos(2 pi t/P)]``; ``segment`` a
    one-hot of ``n_segments`` equal blocks of ``[0, P)``; ``constant`` repeats
    the timestep features of t = 0.
    """
    t = np.asarray(t, dtype=np.float64)
    if kind == "segment":
        idx = np.clip((t * n_segments / period).astype(int), 0, n_segments - 1)
        return np.eye(n_segments)[idx]
    if kind == "constant":
        t = np.zeros_like(t)
    ang = 2.0 * np.pi * t / period
    return np.column_stack([t / period, np.sin(ang), np.cos(ang)])


class IVDFM:
    """Identifiable variational dynamic factor model.

    Parameters are grouped as the decoder, the innovation prior (with the
    regime bank), the dynamics and the initial-state projection on the
    generative side, and the encoder on the inference side. The observation
    variance ``sigma2`` is a fixed float, never a parameter.
    """

    def __init__(self, n_series, config=None, rng=None):
        self.config = config = config or TrainConfig()
        self.N = n_series
        rng = np.random.default_rng(config.seed) if rng is None else rng
        r, d = config.r, config.d_embed
        self.d_u = config.n_segments if config.context == "segment" else 3
        self.period = config.period
        self.initialised = False
        self.bank = RegimeBank(config.K, d, self.d_u, rng, tau=config.tau, hidden=config.regime_hidden)
        self.prior = InnovationPrior(config.family, r, self.d_u + d, rng, hidden=config.prior_hidden,
                                     nu=config.nu, mixture=config.mixture_prior)
        self.dynamics = DiagonalDynamics(r, config.p, config.K)
        enc_in = n_series * (config.lags + 2) + self.d_u + d
        self.encoder = MLP([enc_in] + [config.enc_hidden] * config.enc_layers + [2 * r], rng,
                           layer_norm=True, dropout=config.dropout, name="encoder")
        self.encoder.weights[-1].value *= 0.1
        self.decoder = MLP([r] + [config.dec_hidden] * config.dec_layers + [n_series], rng, name="decoder")
        self.init_w = dc.param(rng.normal(0.0, 1.0 / math.sqrt(n_series), size=(n_series, r)), name="init.w")
        self.init_b = dc.param(np.zeros(r), name="init.b")

    # ------------------------------------------------------------ bookkeeping

    @property
    def sigma2(self):
        return self.config.sigma2

    def named_parameters(self):
        groups = [("regime", self.bank.parameters()), ("prior", self.prior.parameters()),
                  ("dynamics", [self.dynamics.raw, self.dynamics.b]),
                  ("init", [self.init_w, self.init_b]),
                  ("encoder", self.encoder.parameters()), ("decoder", self.decoder.parameters())]
        out = {}
        for group, params in groups:
            for i, p in enumerate(params):
                out[p.name or f"{group}.{i}"] = p
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def context(self, t):
        cfg = self.config
        period = self.period if self.period is not None else 1.0
        return context_features(t, cfg.context, period, cfg.n_segments)

    def initialise(self, Y):
        """Data-driven start: PCA initial-state map and OLS AR coefficients."""
        cfg = self.config
        Y = np.asarray(Y, dtype=np.float64)
        self.initialised = True
        if self.period is None:
            self.period = float(len(Y))
        if not cfg.pca_init:
            return
        W = Y[:min(len(Y), cfg.window)]
        scores, loadings = pca_factors(W, cfg.r)
        scale = scores.std(axis=0)
        # short or rank-deficient windows give fewer usable components; the rest keep random init
        k = int(np.sum(scale > 1e-8 * scale.max())) if scale.size and scale.max() > 0 else 0
        scores, loadings, scale = scores[:, :k], loadings[:, :k], scale[:k]
        proj = loadings / scale
        self.init_w.value[:, :k] = proj
        self.init_b.value[:k] = -W.mean(axis=0) @ proj
        coeffs = ols_ar(scores, cfg.p)
        raw = self.dynamics.raw.value
        for i in range(k):
            if not np.all(np.isfinite(coeffs[:, i])):
                continue
            kappa = np.clip(ar_to_pacf(coeffs[:, i:i + 1])[:, 0], -0.95, 0.95)
            if np.all(np.isfinite(kappa)):
                raw[:, :, i] = np.arctanh(kappa)[None, :]

    # ------------------------------------------------------------ graph pieces

    def window_weights(self, u):
        """Regime weights frozen for a window, from its first auxiliary row."""
        pi, _ = self.bank(np.asarray(u)[:1])
        return pi.value[0]

    def initial_state(self, y_first):
        f0 = dc.add(dc.matmul(dc.constant(np.asarray(y_first)[None, :]), self.init_w), self.init_b)
        return dc.concat([f0] * self.config.p, axis=0)

    def encoder_inputs(self, y):
        y = np.asarray(y, dtype=np.float64)
        T = len(y)
        cols = []
        for lag in range(self.config.lags + 1):
            shifted = np.vstack([np.repeat(y[:1], lag, axis=0), y[:T - lag]]) if lag else y
            cols.append(shifted)
        cols.append(np.repeat(y.mean(axis=0, keepdims=True), T, axis=0))
        return np.hstack(cols)

    def encode(self, y, u, e=None, train=False, rng=None):
        """Posterior ``(mu, sigma)`` tensors, each (T, r)."""
        y = np.asarray(y, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            bad = np.argwhere(~np.isfinite(y))[0]
            raise TrainingError(f"non-finite observation at index {tuple(int(i) for i in bad)}")
        if e is None:
            _, e = self.bank(u)
        x = dc.concat([dc.constant(self.encoder_inputs(y)), dc.constant(u), e], axis=1)
        out = self.encoder(x, train=train, rng=rng)
        r = self.config.r
        mu = dc.take_cols(out, slice(0, r))
        log_sigma = dc.take_cols(out, slice(r, 2 * r))
        return mu, dc.exp(log_sigma)

    def decode(self, F):
        return self.decoder(F)

    def elbo(self, y, u, rng, train=True, eps=None):
        """Negative ELBO tensor and its parts for one window.

        ``eps`` fixes the reparameterisation noise (T, r); dropout masks come
        from ``rng``.
        """
        cfg = self.config
        y = np.asarray(y, dtype=np.float64)
        T, N = y.shape
        pi_win = self.window_weights(u)
        _, e = self.bank(u)
        mu, sigma = self.encode(y, u, e, train=train, rng=rng)
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        eta = dc.add(mu, dc.mul(sigma, eps))
        F = self.dynamics.rollout(eta, pi_win, s0=self.initial_state(y[0]))
        resid = dc.sub(dc.constant(y), self.decode(F))
        recon = dc.sub(-0.5 * T * N * math.log(2.0 * math.pi * cfg.sigma2),
                       dc.mul(dc.sum_(dc.square(resid)), 1.0 / (2.0 * cfg.sigma2)))
        log_q = dc.sum_(dc.sub(-0.5 * LOG2PI - 0.5 * np.square(eps), dc.log(sigma)))
        log_p = dc.sum_(self.prior.log_prob_terms(eta, dc.constant(u), e, bank=self.bank))
        kl = dc.sub(log_q, log_p)
        loss = dc.neg(dc.sub(recon, dc.mul(kl, cfg.beta_kl)))
        if not np.isfinite(loss.value):
            raise TrainingError("non-finite ELBO")
        return loss, {"recon": float(recon.value), "kl": float(kl.value)}

    # ------------------------------------------------------------ inference helpers

    def infer_innovations(self, y, u):
        """Posterior-mean innovations (T, r), deterministic."""
        mu, _ = self.encode(y, u)
        return mu.value

    def propagate(self, etas, y, u):
        """Factors (T, r) driven by ``etas`` from the window's initial state."""
        pi = self.window_weights(u)
        return self.dynamics.rollout(etas, pi, s0=self.initial_state(np.asarray(y)[0])).value

    def decode_numpy(self, F):
        return self.decode(dc.constant(np.atleast_2d(F))).value

    def factors(self, y, u):
        """Posterior-mean factor trajectory (T, r)."""
        return self.propagate(self.infer_innovations(y, u), y, u)

    def innovation_mean(self, u):
        """Prior location of the innovations at auxiliary rows ``u`` (T, r)."""
        u = np.atleast_2d(u)
        _, e = self.bank.embed(u)
        m, _ = self.prior.params(u, e)
        return m.value


def encode(model, y, u, e=None):
    mu, sigma = model.encode(y, u, dc.constant(e) if e is not None else None)
    return mu.value, sigma.value


def reparameterize(mu, sigma, rng, eps=None):
    """``eta = mu + sigma * eps`` with ``eps ~ N(0, I)`` unless supplied."""
    mu_t, sigma_t = dc._lift(mu), dc._lift(sigma)
    if np.any(sigma_t.value < 0):
        raise ValueError("sigma must be non-negative")
    if eps is None:
        eps = rng.standard_normal(mu_t.shape)
    return dc.add(mu_t, dc.mul(sigma_t, eps))


def elbo(model, y, u, rng, train=True, eps=None):
    return model.elbo(y, u, rng, train=train, eps=eps)


# ---------------------------------------------------------------- training

def make_windows(T, window, stride):
    """Start indices of sequential training windows."""
    if T <= window:
        return [0]
    starts = list(range(0, T - window + 1, stride))
    return starts


@dataclass
class TrainResult:
    model: IVDFM
    losses: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def train(model, Y, config=None, rng=None, t_offset=0, constant_context=False):
    """Fit ``model`` on series ``Y`` (T, N) by maximising the ELBO with Adam.

    Each epoch visits the sequential windows once, one optimiser step per
    window. The per-epoch loss is the mean negative ELBO over windows.
    """
    cfg = config or model.config
    Y = np.asarray(Y, dtype=np.float64)
    T = len(Y)
    if T < cfg.p + 1:
        raise TrainingError(f"series of length {T} is too short for AR order {cfg.p}")
    if not np.all(np.isfinite(Y)):
        bad = np.argwhere(~np.isfinite(Y))[0]
        raise TrainingError(f"non-finite observation at index {tuple(int(i) for i in bad)}")
    rng =np.random.default_rng(cfg.seed + 1) if rng is None else rng
    if not model.initialised:
        model.initialise(Y)
    U = model.context(np.arange(T) + t_offset)
    if constant_context:
        U = np.repeat(U[:1], T, axis=0)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    result = TrainResult(model)
    starts = make_windows(T, cfg.window, cfg.stride)
    for epoch in range(cfg.max_epochs):
        total, rec, kls = 0.0, 0.0, 0.0
        for s in starts:
            sl = slice(s, s + cfg.window)
            try:
                loss, parts = model.elbo(Y[sl], U[sl], rng, train=True)
            except (TrainingError, PriorError, FloatingPointError) as exc:
                last = epoch - 1
                raise TrainingError(f"training diverged at epoch {epoch} (last finite epoch {last}): {exc}") from exc
            grads = dc.backward(loss, params)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch} (last finite epoch {epoch - 1})")
            opt.step(grads)
            total += float(loss.value)
            rec += parts["recon"]
            kls += parts["kl"]
        n = len(starts)
        result.losses.append(total / n)
        result.recon.append(rec / n)
        result.kl.append(kls / n)
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.4f", epoch, total / n)
    return result


def train_window(y_window, u, config, rng):
    """Build and train a model on a single window with explicit auxiliary rows."""
    y_window = np.asarray(y_window, dtype=np.float64)
    model = IVDFM(y_window.shape[1], config)
    model.initialise(y_window)
    u = np.asarray(u, dtype=np.float64)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    losses = []
    for epoch in range(config.max_epochs):
        loss, _ = model.elbo(y_window, u, rng, train=True)
        grads = dc.backward(loss, params)
        opt.step(grads)
        losses.append(float(loss.value))
    return model, losses


# ---------------------------------------------------------------- forecasting

def simulate_paths(model, y_context, t0, horizon, n_paths, rng):
    """Sample future observation paths (S, H, N) from the generative model."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if n_paths < 2:
        raise ValueError("need at least two sample paths")
    cfg = model.config
    y_context = np.asarray(y_context, dtype=np.float64)
    L = len(y_context)
    u_ctx = model.context(np.arange(L) + t0)
    pi = model.window_weights(u_ctx)
    etas = model.infer_innovations(y_context, u_ctx)
    F = model.propagate(etas, y_context, u_ctx)
    p = cfg.p
    hist = F[::-1][:p]
    if len(hist) < p:
        s0 = model.initial_state(y_context[0]).value
        hist = np.vstack([hist, s0[:p - len(hist)]])
    phi, b = model.dynamics.coefficients_numpy(pi)
    u_fut = model.context(np.arange(L, L + horizon) + t0)
    state = np.repeat(hist[None], n_paths, axis=0)  # (S, p, r)
    out = np.empty((n_paths, horizon, model.N))
    for h in range(horizon):
        u_h = np.repeat(u_fut[h:h + 1], n_paths, axis=0)
        _, e_h = model.bank.embed(u_h)
        eta = model.prior.sample(u_h, e_h, rng)
        new = (phi[None] * state).sum(axis=1) + b * eta
        state = np.concatenate([new[:, None, :], state[:, :-1]], axis=1)
        mean = model.decode_numpy(new)
        out[:, h] = mean + math.sqrt(cfg.sigma2) * rng.standard_normal(mean.shape)
    return out


def predict_quantiles(model, y_context, horizon, n_paths=200, quantiles=(0.1, 0.5, 0.9), rng=None, t0=0):
    """Empirical predictive quantiles, shape (H, N, len(quantiles))."""
    rng = np.random.default_rng(0) if rng is None else rng
    paths = simulate_paths(model, y_context, t0, horizon, n_paths, rng)
    q = np.quantile(paths, list(quantiles), axis=0)
    return np.moveaxis(q, 0, -1)


# ---------------------------------------------------------------- gradient check

def random_check_config(rng):
    """Small random architecture for finite-difference checks (r<=5, N<=20, T<=50)."""
    r = int(rng.integers(1, 6))
    p = int(rng.integers(1, 4))
    return TrainConfig(
        r=r, p=p, K=int(rng.integers(1, 4)),
        family=str(rng.choice(["laplace", "gaussian", "studentt"])),
        mixture_prior=bool(rng.integers(0, 2)),
        enc_hidden=8, dec_hidden=8, prior_hidden=8, regime_hidden=4, d_embed=3,
        context=str(rng.choice(["timestep", "segment"])), dropout=0.08,
        seed=int(rng.integers(0, 2**31)),
    )


def elbo_gradient_check(seed, eps=1e-5):
    """Full-ELBO analytic vs central-difference gradient, fixed noise and masks.

    Returns ``(config, N, T, max_relative_error)``.
    """
    rng = np.random.default_rng(seed)
    cfg = random_check_config(rng)
    N = int(rng.integers(cfg.r, 21))
    T = int(rng.integers(cfg.p + 2, 51))
    y = rng.standard_normal((T, N))
    model = IVDFM(N, cfg)
    model.initialise(y)
    u = model.context(np.arange(T))
    noise = rng.standard_normal((T, cfg.r))
    mask_seed = int(rng.integers(0, 2**31))

    def loss():
        return model.elbo(y, u, np.random.default_rng(mask_seed), train=True, eps=noise)[0]

    return cfg, N, T, dc.check_gradients(loss, model.parameters(), eps=eps)
