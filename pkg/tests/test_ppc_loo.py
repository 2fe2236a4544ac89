import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit, logsumexp

from pescov.loo import K_BIN_LABELS, K_FLOOR, gpd_fit, k_bins, loo_report, pointwise_matrix, psis_smooth, tail_length
from pescov.ppc import (
    LEVELS,
    PpcError,
    expected_counts_self,
    group_by_demographics,
    group_by_stratum,
    group_by_ta,
    interval_flags,
    ppc_report,
    replicate,
    simulate_outcomes,
)


@pytest.fixture(scope="module")
def draws(small_model):
    U = np.random.default_rng(0).normal(scale=0.3, size=(40, small_model.dim))
    U[:, small_model.layout["log_sigma"]] = np.log(0.5)
    return small_model.constrain(U)


def _persons(rows):
    cols = ("eth_m", "eth_p", "eth_a", "eth_o", "sex", "nz_born", "maori_descent")
    return pd.DataFrame([dict(zip(cols, r)) for r in rows])


# ---------------------------------------------------------------- groupings

def test_identical_persons_form_one_group():
    g = group_by_demographics(_persons([(1, 0, 0, 0, 1, 1, 1)] * 5))
    assert g.n_groups == 1 and g.sizes.tolist() == [5]
    assert g.labels == ["M+F+NZb+Md"]


def test_two_combinations_sorted_by_size():
    g = group_by_demographics(_persons([(0, 0, 0, 1, 0, 1, 0)] * 2 + [(0, 0, 1, 0, 1, 0, 0)] * 3))
    assert g.sizes.tolist() == [3, 2]
    assert g.labels == ["A+F", "O+NZb"]


def test_category_bound(small_ds):
    g = group_by_demographics(small_ds.persons)
    assert g.n_groups <= 81
    assert g.sizes.sum() == len(small_ds.persons)
    assert np.all(np.diff(g.sizes) <= 0)


def test_top_k_drops_small_groups(small_ds):
    g = group_by_demographics(small_ds.persons)
    t = g.top(3)
    assert t.n_groups == 3
    y = np.ones(len(small_ds.persons))
    np.testing.assert_array_equal(t.counts(y), g.sizes[:3])


def test_missing_demographic_field():
    with pytest.raises(PpcError):
        group_by_demographics(pd.DataFrame({"eth_m": [1]}))


def test_ta_and_stratum_groupings():
    assert group_by_ta([0, 1, 1, 2]).labels == ["TA1", "TA0", "TA2"]
    assert group_by_stratum([3, 3, 0]).labels == ["S3", "S0"]


# ---------------------------------------------------------------- replication

@pytest.mark.parametrize("level", LEVELS)
def test_zero_probability_gives_zero_counts(small_model, draws, level):
    d = small_model.data
    zero = type(draws)(**{k: np.asarray(v).copy() for k, v in vars(draws).items()})
    zero.mu = np.full(40, -1e3)
    zero.alpha_hh = np.full_like(zero.alpha_hh, -1e3)
    zero.sigma_hh = np.full(40, 1e-3)
    zero.sigma_psu = np.full(40, 1e-3)
    g = group_by_ta(d.ta_of_person)
    assert replicate(zero.take(slice(0, 5)), d, level, g, np.random.default_rng(0)).sum() == 0


def test_self_level_expected_counts(small_model, draws):
    d = small_model.data
    g = group_by_ta(d.ta_of_person)
    one = draws.take(slice(0, 1))
    reps = np.vstack([replicate(one, d, "self", g, np.random.default_rng(r)) for r in range(1000)])
    expected = expected_counts_self(one, d, g)[0]
    p = expit(one.alpha_hh[0][d.hh_of_person] + d.x_ind @ one.beta[0])
    se = np.sqrt(g.counts(p * (1 - p)) / 1000)
    assert np.all(np.abs(reps.mean(axis=0) - expected) < 3 * se)


@pytest.mark.parametrize("mode", ["clustered", "marginal"])
def test_level_widths_increase(small_model, draws, mode):
    d = small_model.data
    g = group_by_ta(d.ta_of_person)
    # one parameter draw repeated: self-level spread is Bernoulli noise only
    fixed = draws.take([0] * 1000)
    rep = ppc_report(fixed, d, [g, group_by_stratum(d.stratum_of_person)], np.random.default_rng(1),
                     levels=("self", "new_household"), mode=mode)
    assert rep.mean_width("new_household") >= rep.mean_width("self")


def test_replicate_validation(small_model, draws):
    d = small_model.data
    g = group_by_ta(d.ta_of_person)
    with pytest.raises(PpcError):
        replicate(draws, d, "bogus", g, np.random.default_rng(0))
    with pytest.raises(PpcError):
        replicate(draws, d, "self", group_by_ta([0, 1]), np.random.default_rng(0))


def test_simulate_outcomes(small_model, draws):
    d = small_model.data
    one = draws.take(0)
    y = simulate_outcomes(one, d, "new_household", np.random.default_rng(3))
    assert y.shape == (d.n_persons,) and set(np.unique(y)) <= {0.0, 1.0}
    g = group_by_ta(d.ta_of_person)
    again = replicate(draws.take([0]), d, "new_household", g, np.random.default_rng(3))
    np.testing.assert_array_equal(again[0], g.counts(y))
    with pytest.raises(PpcError):
        simulate_outcomes(draws, d)


# ---------------------------------------------------------------- flags

def test_interval_flags():
    reps = np.arange(1000.0)[:, None] * np.ones((1, 2))
    lo, hi, inside = interval_flags(np.array([np.median(reps[:, 0]), 5000.0]), reps)
    assert inside.tolist() == [True, False]
    assert lo[0] == pytest.approx(np.quantile(reps[:, 0], 0.05))
    assert np.all(lo <= hi)


def test_few_replicates_warn():
    with pytest.warns(RuntimeWarning, match="replicates"):
        interval_flags(np.zeros(1), np.zeros((50, 1)))


def test_report_flags_consistent(small_model, draws):
    d = small_model.data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = ppc_report(draws, d, [group_by_ta(d.ta_of_person)], np.random.default_rng(2))
    t = rep.table
    assert set(t["level"]) == set(LEVELS)
    assert np.array_equal(t["inside"], (t["observed"] >= t["q05"]) & (t["observed"] <= t["q95"]))
    assert list(rep.to_csv().columns) == ["group", "kind", "size", "observed", "level", "q05", "q95", "flag"]


# ---------------------------------------------------------------- PSIS-LOO

def test_tail_length():
    assert tail_length(100) == 20
    assert tail_length(10_000) == 300


def test_constant_ratios_give_uniform_weights():
    lw, k = psis_smooth(np.full(400, 2.5))
    np.testing.assert_allclose(lw, -math.log(400), atol=1e-14)
    assert k == K_FLOOR
    ll = np.tile(np.array([[-0.3, -1.2, -2.0]]), (400, 1))
    rep = loo_report(ll)
    np.testing.assert_array_equal(rep.pointwise_elpd, ll[0])
    assert rep.p_loo == 0.0


def test_gpd_shape_recovered():
    x = stats.genpareto.rvs(0.3, size=10_000, random_state=0)
    k, sigma = gpd_fit(x)
    assert abs(k - 0.3) <= 0.1 and abs(sigma - 1) <= 0.1
    # PSIS fits only the largest ceil(3 sqrt(S)) ratios, so a single estimate has sd ~0.07;
    # the average over replicates must still land within 0.1
    ks = [psis_smooth(np.log(stats.genpareto.rvs(0.3, size=10_000, random_state=s)))[1] for s in range(20)]
    assert abs(np.mean(ks) - 0.3) <= 0.1


def test_heavy_tail_in_top_bin():
    x = stats.genpareto.rvs(1.2, size=10_000, random_state=3)
    _, k = psis_smooth(np.log(x))
    assert k > 1.0
    assert k_bins([k])["(1, Inf)"] == 1.0


def test_smoothed_weights_truncated_at_raw_max():
    lr = np.log(stats.genpareto.rvs(0.8, size=2000, random_state=4))
    lw, _ = psis_smooth(lr)
    assert logsumexp(lw) == pytest.approx(0.0, abs=1e-12)
    # the tail is replaced by values between the cutoff and the raw maximum
    assert np.ptp(lw) <= np.ptp(lr) + 1e-12
    assert np.argmax(lw) in np.flatnonzero(lw == lw.max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_elpd_bounded_by_lpd_and_looic(seed, spread):
    r = np.random.default_rng(seed)
    ll = -np.abs(r.normal(1.0, spread, size=(200, 8)))
    rep = loo_report(ll)
    lpd = logsumexp(ll, axis=0) - math.log(200)
    assert np.all(rep.pointwise_elpd <= lpd + 1e-8)
    assert rep.looic == -2 * rep.elpd_loo
    assert sum(rep.bin_shares().values()) == pytest.approx(1.0)
    assert list(rep.bin_shares()) == list(K_BIN_LABELS)


def test_bins_boundaries():
    shares = k_bins([-0.5, 0.5, 0.6, 0.7, 1.0, 1.5, math.inf, 0.1])
    assert shares == {"(-Inf, 0.5]": 3 / 8, "(0.5, 0.7]": 2 / 8, "(0.7, 1]": 1 / 8, "(1, Inf)": 2 / 8}


def test_pointwise_matrix_matches_model(small_model):
    U = np.random.default_rng(5).normal(scale=0.2, size=(3, small_model.dim))
    M = pointwise_matrix(small_model, U, batch=2)
    for s in range(3):
        assert M[s].sum() == pytest.approx(small_model.log_likelihood(U[s]), abs=1e-9)
