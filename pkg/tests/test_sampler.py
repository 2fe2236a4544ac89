import numpy as np
import pytest
from scipy import stats

from pescov.sampler import (
    Diagnostics,
    SamplerConfig,
    SamplerError,
    ess,
    sample,
    split_rhat,
)


class Normal:
    def __init__(self, scale):
        self.scale = np.asarray(scale, dtype=float)
        self.dim = len(self.scale)

    def logp_grad(self, q):
        return float(-0.5 * np.sum((q / self.scale) ** 2)), -q / self.scale ** 2


class Funnel:
    """Neal's funnel in non-centered coordinates (v, z): x = exp(v / 2) z."""

    dim = 2

    def logp_grad(self, q):
        v, z = q
        return -v ** 2 / 18 - z ** 2 / 2, np.array([-v / 9, -z])

    @staticmethod
    def x(draws):
        return np.exp(draws[..., 0] / 2) * draws[..., 1]


class Broken:
    dim = 3

    def logp_grad(self, q):
        return float("nan"), np.full(3, np.nan)


@pytest.fixture(scope="module")
def normal5():
    return sample(Normal(np.ones(5)), SamplerConfig(n_chains=3, n_iter=4000, seed=11))


def test_standard_normal_moments(normal5):
    flat = normal5.flat()
    assert flat.shape == (6000, 5)
    assert np.all(np.abs(flat.mean(axis=0)) <= 0.05)
    cov = np.cov(flat.T)
    assert np.all(np.abs(np.diag(cov) - 1) <= 0.1)


def test_no_divergences_on_normal(normal5):
    assert normal5.divergent.dtype == bool
    assert normal5.divergent.sum() == 0


def test_warmup_discards_configured_fraction(normal5):
    assert normal5.n_warmup == 2000 and normal5.n_kept == 2000


def test_adapted_metric_near_identity(normal5):
    assert np.all(np.abs(normal5.inv_metric - 1) < 0.3)


def test_noncentered_funnel_converges():
    s = sample(Funnel(), SamplerConfig(n_chains=3, n_iter=2000, seed=5))
    d = s.diagnostics()
    assert d.max_rhat < 1.01
    assert split_rhat(Funnel.x(s.draws)) < 1.01


def test_ks_one_dimensional():
    s = sample(Normal([2.0]), SamplerConfig(n_chains=2, n_iter=4000, seed=3))
    x = s.draws[:, ::5, 0].ravel()
    assert stats.kstest(x, stats.norm(scale=2).cdf).pvalue > 0.01


def test_reproducible_stream():
    cfg = SamplerConfig(n_chains=2, n_iter=200, seed=9)
    a, b = sample(Normal([1.0, 3.0]), cfg), sample(Normal([1.0, 3.0]), cfg)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws[0], a.draws[1])
    c = sample(Normal([1.0, 3.0]), SamplerConfig(n_chains=2, n_iter=200, seed=10))
    assert not np.array_equal(a.draws, c.draws)


@pytest.mark.parametrize("bad", [dict(n_iter=0), dict(n_chains=0), dict(warmup_fraction=1.0),
                                 dict(target_accept=1.0)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        sample(Normal([1.0]), SamplerConfig(**bad))


def test_non_finite_start_aborts():
    with pytest.raises(SamplerError, match="100"):
        sample(Broken(), SamplerConfig(n_chains=1, n_iter=10))


def test_rhat_iid_null():
    x = np.random.default_rng(0).normal(size=(4, 10_000))
    assert 0.999 <= split_rhat(x) <= 1.005


def test_rhat_separated_means():
    r = np.random.default_rng(1)
    x = np.stack([r.normal(0, 1, 1000), r.normal(10, 1, 1000)])
    assert split_rhat(x) > 2


def test_rhat_constant_is_undefined():
    assert split_rhat(np.ones((3, 50))) is None
    arr = split_rhat(np.ones((3, 50, 2)))
    assert np.isnan(arr).all()
    assert ess(np.ones((3, 50))) is None


def test_rhat_vector_mixes_defined_and_undefined():
    x = np.random.default_rng(2).normal(size=(3, 50, 2))
    x[..., 1] = 4.0
    d = Diagnostics.from_chains(x)
    assert np.isfinite(d.rhat[0]) and np.isnan(d.rhat[1])
    assert d.max_rhat == pytest.approx(d.rhat[0])
    assert d.to_dict()["undefined"] == 1


def test_rhat_needs_enough_draws():
    with pytest.raises(ValueError):
        split_rhat(np.zeros((1, 3)))


def test_ess_iid():
    S = 4 * 5000
    x = np.random.default_rng(3).normal(size=(4, 5000))
    assert 0.8 * S <= ess(x) <= 1.2 * S


def test_ess_ar1():
    rho, C, N = 0.9, 4, 25_000
    r = np.random.default_rng(4)
    x = np.empty((C, N))
    x[:, 0] = r.normal(size=C) / np.sqrt(1 - rho ** 2)
    e = r.normal(size=(C, N))
    for t in range(1, N):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    ratio = ess(x) / (C * N)
    expected = (1 - rho) / (1 + rho)
    assert abs(ratio / expected - 1) <= 0.3


def test_ess_bounded_by_draws_for_positive_correlation():
    x = np.cumsum(np.random.default_rng(5).normal(size=(2, 500)), axis=1)
    assert ess(x) <= 1000
