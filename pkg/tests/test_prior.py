import math

import numpy as np
import pytest
from scipy import integrate, stats

from ivdfm import diffcore as dc
from ivdfm.prior import (
    ConstantNet, InnovationPrior, PriorError, RegimeBank, gaussian_degeneracy_demo, lambda_rank,
    numerical_rank, random_rotation, regime_embedding,
)


def fixed_prior(family, m, log_b, **kw):
    m, log_b = np.atleast_1d(m), np.atleast_1d(log_b)
    return InnovationPrior(family, m.size, 1, net=ConstantNet(m, log_b), **kw)


U0 = np.zeros((1, 1))
E0 = np.zeros((1, 0))


# ------------------------------------------------------------------ regime bank

def test_single_regime_returns_its_embedding():
    bank = RegimeBank(1, 4, 3, np.random.default_rng(0))
    pi, e = regime_embedding(bank, np.array([0.1, 0.2, 0.3]))
    np.testing.assert_array_equal(pi, [1.0])
    np.testing.assert_allclose(e, bank.embeddings.value[0])


def test_equal_logits_give_uniform_weights_and_mean_embedding():
    bank = RegimeBank(4, 3, 2, np.random.default_rng(1))
    for w in bank.net.weights:
        w.value[:] = 0.0
    pi, e = bank.embed(np.array([0.5, -1.0]))
    np.testing.assert_allclose(pi, 0.25)
    np.testing.assert_allclose(e, bank.embeddings.value.mean(axis=0), atol=1e-15)


def test_temperature_sharpens_softmax():
    bank = RegimeBank(2, 2, 1, np.random.default_rng(2), tau=0.2)
    for w in bank.net.weights:
        w.value[:] = 0.0
    bank.net.biases[-1].value[:] = [1.0, 0.0]
    pi, _ = bank.embed(np.array([0.0]))
    np.testing.assert_allclose(pi, [0.993307, 0.006693], atol=1e-6)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_regime_bank_is_deterministic_and_validates():
    bank = RegimeBank(3, 2, 2, np.random.default_rng(3))
    u = np.random.default_rng(4).standard_normal((5, 2))
    a, b = bank.embed(u), bank.embed(u)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    np.testing.assert_allclose(a[0].sum(axis=1), 1.0)
    with pytest.raises(PriorError):
        bank.embed(np.array([np.inf, 0.0]))
    with pytest.raises(PriorError):
        RegimeBank(0, 2, 2, np.random.default_rng(0))


# ------------------------------------------------------------------ densities

def test_laplace_closed_form_values():
    assert fixed_prior("laplace", 0.3, math.log(0.5)).log_prob(np.array([0.3]), U0, E0) == pytest.approx(0.0, abs=1e-15)
    assert fixed_prior("laplace", 0.0, 0.0).log_prob(np.array([1.0]), U0, E0) == pytest.approx(-math.log(2) - 1, abs=1e-12)


@pytest.mark.parametrize("family,ref", [
    ("laplace", lambda x, m, b: stats.laplace.logpdf(x, m, b)),
    ("gaussian", lambda x, m, b: stats.norm.logpdf(x, m, b)),
    ("studentt", lambda x, m, b: stats.t.logpdf(x, 4.0, m, b)),
])
def test_log_density_matches_scipy(family, ref):
    m, b = np.array([0.4, -1.0]), np.array([0.7, 1.9])
    prior = fixed_prior(family, m, np.log(b))
    x = np.random.default_rng(5).standard_normal((6, 2))
    got = prior.log_prob_terms(x, np.zeros((6, 1)), np.zeros((6, 0))).value
    np.testing.assert_allclose(got, ref(x, m, b).sum(axis=1), rtol=1e-12)


@pytest.mark.parametrize("family", ["laplace", "gaussian", "studentt"])
def test_density_integrates_to_one(family):
    prior = fixed_prior(family, 0.2, math.log(0.8))
    f = lambda x: math.exp(prior.log_prob(np.array([x]), U0, E0))  # noqa: E731
    total = integrate.quad(f, -np.inf, np.inf, limit=200)[0]
    assert 0.999 <= total <= 1.001


def test_product_form_over_components():
    m, lb = np.array([0.1, -0.4]), np.array([0.2, -0.3])
    joint = fixed_prior("laplace", m, lb).log_prob(np.array([0.5, 0.9]), U0, E0)
    parts = sum(fixed_prior("laplace", m[i], lb[i]).log_prob(np.array([[0.5, 0.9][i]]), U0, E0) for i in range(2))
    assert joint == pytest.approx(parts, abs=1e-14)


def test_student_t_requires_nu_above_two():
    with pytest.raises(PriorError):
        InnovationPrior("studentt", 2, 3, np.random.default_rng(0), nu=2.0)
    with pytest.raises(PriorError):
        InnovationPrior("cauchy", 2, 3, np.random.default_rng(0))


def test_mixture_with_identical_components_collapses():
    rng = np.random.default_rng(6)
    bank = RegimeBank(3, 2, 1, rng)
    bank.embeddings.value[:] = bank.embeddings.value[0]
    mix = InnovationPrior("laplace", 2, 3, np.random.default_rng(7), mixture=True)
    single = InnovationPrior("laplace", 2, 3, np.random.default_rng(7), mixture=False)
    u = rng.standard_normal((5, 1))
    eta = rng.standard_normal((5, 2))
    _, e = bank(u)
    np.testing.assert_allclose(mix.log_prob_terms(eta, u, e, bank=bank).value,
                               single.log_prob_terms(eta, u, e).value, atol=1e-12)


# ------------------------------------------------------------------ sampling and KL

def test_sampling_degenerate_scale_and_determinism():
    prior = fixed_prior("laplace", [1.0, -2.0], [math.log(1e-12)] * 2)
    np.testing.assert_allclose(prior.sample(U0, E0, np.random.default_rng(0))[0], [1.0, -2.0], atol=1e-10)
    p2 = fixed_prior("laplace", 0.0, 0.0)
    a = p2.sample(np.zeros((10, 1)), np.zeros((10, 0)), np.random.default_rng(3))
    b = p2.sample(np.zeros((10, 1)), np.zeros((10, 0)), np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_laplace_sample_moments():
    n = 100_000
    x = fixed_prior("laplace", 0.0, 0.0).sample(np.zeros((n, 1)), np.zeros((n, 0)), np.random.default_rng(8))[:, 0]
    assert abs(x.mean()) < 3 * math.sqrt(2.0 / n)
    # var of the sample variance for Laplace(b=1): (mu4 - sigma^4) / n with mu4 = 24
    assert abs(x.var() - 2.0) < 3 * math.sqrt((24.0 - 4.0) / n)


def test_gaussian_kl_exact_and_monte_carlo():
    same = fixed_prior("gaussian", 0.0, 0.0)
    assert same.kl_estimate([0.0], [1.0], U0, E0, 1, None, exact=True) == pytest.approx(0.0, abs=1e-15)
    shifted = fixed_prior("gaussian", 1.0, 0.0)
    assert shifted.kl_estimate([0.0], [1.0], U0, E0, 1, None, exact=True) == pytest.approx(0.5)
    mc = shifted.kl_estimate([0.0], [1.0], U0, E0, 10_000, np.random.default_rng(9))
    assert mc == pytest.approx(0.5, abs=0.05)
    with pytest.raises(PriorError):
        shifted.kl_estimate([0.0], [1.0], U0, E0, 0, np.random.default_rng(0))


def test_laplace_kl_matches_quadrature():
    prior = fixed_prior("laplace", 0.0, 0.0)

    def integrand(x):
        q = stats.norm.pdf(x)
        return q * (stats.norm.logpdf(x) - stats.laplace.logpdf(x)) if q > 0 else 0.0

    oracle = integrate.quad(integrand, -12, 12)[0]
    mc = prior.kl_estimate([0.0], [1.0], U0, E0, 100_000, np.random.default_rng(10))
    assert mc == pytest.approx(oracle, abs=0.05)


# ------------------------------------------------------------------ rank condition

def test_lambda_rank_constant_context_is_zero():
    prior = InnovationPrior("laplace", 3, 3, np.random.default_rng(11))
    assert lambda_rank(prior, np.tile([0.1, 0.2, 0.3], (5, 1))) == 0
    with pytest.raises(PriorError):
        lambda_rank(prior, np.zeros((1, 3)))


class OneHotLocation:
    """Location equals the one-hot input, unit scale."""

    def __call__(self, x):
        v = x.value
        return dc.constant(np.hstack([v, np.zeros_like(v)]))


def test_lambda_rank_full_on_one_hot_sweep():
    r = 4
    prior = InnovationPrior("laplace", r, r, net=OneHotLocation())
    us = np.vstack([np.zeros(r), np.eye(r)])
    assert lambda_rank(prior, us) == r


def test_lambda_rank_matches_svd_oracle_for_random_network():
    r = 3
    bank = RegimeBank(4, 2, 3, np.random.default_rng(12))
    prior = InnovationPrior("laplace", r, 5, np.random.default_rng(13))
    t = np.linspace(0, 1, r + 1)
    us = np.column_stack([t, np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)])
    _, e = bank.embed(us)
    m, lb = prior.params(us, e)
    b = np.exp(lb.value)
    lam = np.hstack([m.value / b, -1.0 / b])
    s = np.linalg.svd(lam[1:] - lam[0], compute_uv=False)
    assert lambda_rank(prior, us, bank=bank) == int(np.sum(s > 1e-8 * s[0]))
    assert numerical_rank(np.zeros((3, 3))) == 0


# ------------------------------------------------------------------ degeneracy demo

def test_identity_rotation_is_exact():
    a, b = gaussian_degeneracy_demo(0, "gaussian", R=np.eye(2))
    assert a == b


def test_gaussian_invariant_laplace_not():
    for seed in range(20):
        a, b = gaussian_degeneracy_demo(seed, "gaussian")
        assert abs(a - b) < 1e-8
    diffs = [abs(np.subtract(*gaussian_degeneracy_demo(s, "laplace"))) for s in range(20)]
    assert sum(d > 1e-3 for d in diffs) >= 18


def test_non_orthogonal_rotation_rejected():
    with pytest.raises(PriorError):
        gaussian_degeneracy_demo(0, R=np.array([[1.0, 0.1], [0.0, 1.0]]))
    R = random_rotation(np.random.default_rng(0), 3)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
