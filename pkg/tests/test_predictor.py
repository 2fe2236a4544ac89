import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import expit

from pescov.covariates import build_occurrence_maps
from pescov.model import ParamDraw
from pescov.predictor import (
    Cells,
    PredictionError,
    check_equivalence,
    erp_weight,
    integrate_household,
    p_under_cell,
    p_under_cells,
    predict_cells,
    q_psu,
    q_strat,
    score_records,
    stratum_table,
)


def make_draw(rng=None, n_ind=5, n_hh=1, n_strata=3, n_psu=4, scale=1.0, sigmas=(0.8, 0.5, 0.3, 0.2), mu=-1.0):
    rng = rng or np.random.default_rng(0)
    return ParamDraw(
        mu=np.float64(mu), beta=scale * rng.normal(size=n_ind), beta_hh=scale * rng.normal(size=n_hh),
        beta_psu=scale * rng.normal(size=3), beta_ta=np.zeros(4), alpha_ta=np.zeros(2),
        alpha_strat=rng.normal(size=n_strata), alpha_psu=rng.normal(size=n_psu), alpha_hh=np.zeros(1),
        sigma_hh=np.float64(sigmas[0]), sigma_psu=np.float64(sigmas[1]),
        sigma_strat=np.float64(sigmas[2]), sigma_ta=np.float64(sigmas[3]),
    )


def make_cells(rng, n, n_ind=5, n_hh=1, n_ta=2):
    return Cells(rng.normal(size=(n, n_ind)), rng.integers(0, 2, (n, n_hh)), rng.normal(size=(n, 3)),
                 rng.integers(0, n_ta, n))


MAPS = build_occurrence_maps([[10, 0], [5, 5], [0, 20]])


def adaptive_oracle(m, v, xb=0.0):
    s = math.sqrt(v)
    f = lambda a: expit(a + xb) * math.exp(-0.5 * ((a - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    return integrate.quad(f, m - 40 * s, m + 40 * s, epsabs=1e-14, epsrel=1e-13, limit=500)[0]


def test_zero_variance_is_expit():
    assert integrate_household(0.7, 0.0, 0.2) == expit(0.9)


@pytest.mark.parametrize("v", [0.0, 0.3, 4.0, 25.0, 64.0])
def test_symmetric_integrand_gives_half(v):
    assert integrate_household(0.0, v) == pytest.approx(0.5, abs=1e-14)


def test_adaptive_quadrature_oracle():
    assert integrate_household(1.0, 4.0) == pytest.approx(adaptive_oracle(1.0, 4.0), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 8.0))
def test_trapezoid_accuracy(m, s):
    assert integrate_household(m, s * s) == pytest.approx(adaptive_oracle(m, s * s), abs=1e-9)


def test_gauss_hermite_is_available_but_coarser():
    gh = integrate_household(1.0, 4.0, method="gauss-hermite")
    assert abs(gh - adaptive_oracle(1.0, 4.0)) < 1e-3


def test_monte_carlo_method():
    mc = integrate_household(1.0, 4.0, method="mc", n_nodes=200_000, rng=np.random.default_rng(1))
    assert mc == pytest.approx(adaptive_oracle(1.0, 4.0), abs=5e-3)


def test_negative_variance():
    with pytest.raises(PredictionError):
        integrate_household(0.0, -1.0)


def test_erp_weights():
    assert erp_weight(0.0) == 1.0
    assert erp_weight(0.5) == 2.0
    assert erp_weight(0.35) == pytest.approx(1 / 0.65, abs=1e-15)
    assert erp_weight(0.35) == pytest.approx(1.5, abs=0.04)
    with pytest.raises(PredictionError):
        erp_weight(1.0)


def test_single_stratum_symmetric_cell():
    maps = build_occurrence_maps([[1]])
    d = make_draw(mu=0.0, n_strata=1)
    d.alpha_strat = np.zeros(1)
    cell = Cells(np.zeros((1, 5)), np.zeros((1, 1)), np.zeros((1, 3)), [0])
    assert p_under_cell(cell, d, maps) == pytest.approx(0.5, abs=1e-14)
    assert check_equivalence(cell, d, maps) < 1e-12


def test_degenerate_mixture_equals_stratum_value():
    rng = np.random.default_rng(2)
    d = make_draw(rng)
    cells = make_cells(rng, 6)
    cells.ta[:] = 0  # TA 0 lives only in stratum 0
    maps = build_occurrence_maps([[10, 0], [0, 5], [0, 5]])
    np.testing.assert_array_equal(p_under_cells(cells, d, maps), stratum_table(cells, d)[:, 0])


def test_stratum_mixing_is_affine():
    rng = np.random.default_rng(3)
    d = make_draw(rng)
    cells = make_cells(rng, 20)
    table = stratum_table(cells, d)
    expected = np.sum(table * MAPS.p_strat_given_ta[:, cells.ta].T, axis=1)
    np.testing.assert_allclose(p_under_cells(cells, d, MAPS), expected, atol=1e-15)


def test_nested_mc_oracle():
    rng = np.random.default_rng(4)
    d = make_draw(rng)
    cell = make_cells(rng, 1)
    p = p_under_cell(cell, d, MAPS)
    n = 1_000_000
    t = int(cell.ta[0])
    s = rng.choice(3, size=n, p=MAPS.p_strat_given_ta[:, t])
    base = float(d.mu) + cell.x_ind[0] @ d.beta + cell.x_hh[0] @ d.beta_hh + cell.x_psu[0] @ d.beta_psu
    delta = d.alpha_strat[s] + float(d.sigma_psu) * rng.standard_normal(n)
    lam = delta + float(d.sigma_hh) * rng.standard_normal(n)
    y = rng.random(n) < expit(base + lam)
    se = math.sqrt(p * (1 - p) / n)
    assert abs(y.mean() - p) < 3 * se


def test_probabilities_and_weights_bounded():
    rng = np.random.default_rng(5)
    draws = [make_draw(rng, scale=2.0) for _ in range(5)]
    cells = make_cells(rng, 50)
    for d in draws:
        p = p_under_cells(cells, d, MAPS)
        assert np.all((p > 0) & (p < 1))
        assert np.all(erp_weight(p) >= 1)


def test_monotone_in_mu():
    rng = np.random.default_rng(6)
    cells = make_cells(rng, 10)
    prev = None
    for mu in np.linspace(-4, 4, 9):
        p = p_under_cells(cells, make_draw(np.random.default_rng(7), mu=mu), MAPS)
        if prev is not None:
            assert np.all(p > prev)
        prev = p


def test_q_psu_zero_sigma_is_expit():
    d = make_draw(sigmas=(0.0, 0.5, 0.3, 0.2))
    x_ind, x_hh = np.ones(5), np.ones(1)
    expected = expit(float(d.mu) + d.alpha_psu[2] + x_hh @ d.beta_hh + x_ind @ d.beta)
    assert q_psu(x_ind, x_hh, d, 2) == pytest.approx(expected, abs=1e-15)


def test_q_strat_collapses_to_q_psu():
    d = make_draw(sigmas=(0.7, 0.0, 0.3, 0.2))
    x_ind, x_hh, x_psu = np.ones(5), np.zeros(1), np.array([0.2, 1.0, 0.0])
    d.alpha_psu = d.alpha_psu.copy()
    d.alpha_psu[1] = d.alpha_strat[2] + x_psu @ d.beta_psu
    assert q_strat(x_ind, x_hh, x_psu, d, 2) == pytest.approx(q_psu(x_ind, x_hh, d, 1), abs=1e-14)


def test_q_psu_mc_oracle():
    rng = np.random.default_rng(8)
    d = make_draw(rng)
    x_ind, x_hh = rng.normal(size=5), np.ones(1)
    q = q_psu(x_ind, x_hh, d, 0)
    n = 1_000_000
    lam = float(d.mu) + d.alpha_psu[0] + x_hh @ d.beta_hh + float(d.sigma_hh) * rng.standard_normal(n)
    y = rng.random(n) < expit(lam + x_ind @ d.beta)
    assert abs(y.mean() - q) < 3 * math.sqrt(q * (1 - q) / n)


def test_index_errors():
    d = make_draw()
    with pytest.raises(PredictionError):
        q_psu(np.zeros(5), np.zeros(1), d, 9)
    with pytest.raises(PredictionError):
        q_strat(np.zeros(5), np.zeros(1), np.zeros(3), d, 3)
    with pytest.raises(PredictionError):
        p_under_cells(Cells(np.zeros((1, 5)), np.zeros((1, 1)), np.zeros((1, 3)), [2]), d, MAPS)


def test_equivalence_sweep():
    rng = np.random.default_rng(9)
    cells = make_cells(rng, 100, n_hh=16)
    worst = max(check_equivalence(cells, make_draw(rng, n_hh=16, sigmas=tuple(rng.uniform(0.05, 2, 4))), MAPS)
                for _ in range(10))
    assert worst <= 1e-8


def test_mixture_identity():
    # integrating N(lam | delta, s_hh^2) N(delta | a, s_psu^2) over delta gives N(lam | a, s_hh^2 + s_psu^2)
    a, s_hh, s_psu = 0.3, 0.8, 0.6
    from scipy.stats import norm
    for lam in np.linspace(-4, 4, 9):
        val = integrate.quad(lambda dl: norm.pdf(lam, dl, s_hh) * norm.pdf(dl, a, s_psu), -np.inf, np.inf,
                             epsabs=1e-14, epsrel=1e-13)[0]
        assert val == pytest.approx(norm.pdf(lam, a, math.hypot(s_hh, s_psu)), abs=1e-10)


def test_predict_cells_batched():
    rng = np.random.default_rng(10)
    draws = [make_draw(rng) for _ in range(3)]
    batched = ParamDraw(**{k: np.stack([np.asarray(getattr(d, k)) for d in draws]) for k in draws[0].__dict__})
    cells = make_cells(rng, 7)
    out = predict_cells(cells, batched, MAPS)
    assert out.shape == (3, 7)
    for i, d in enumerate(draws):
        np.testing.assert_array_equal(out[i], p_under_cells(cells, d, MAPS))


def test_score_records_caches_distinct_cells(small_ds):
    from pescov.model import ModelSpec
    df = pd.concat([small_ds.persons.head(30)] * 3, ignore_index=True)
    d = make_draw(np.random.default_rng(0), n_ind=55, n_strata=small_ds.occurrence_counts.shape[0])
    maps = small_ds.maps()
    pred, inverse = score_records(df, d, maps, ModelSpec())
    assert pred.p.shape[1] <= 30
    assert len(inverse) == 90
    np.testing.assert_array_equal(inverse[:30], inverse[30:60])
    np.testing.assert_allclose(pred.weight, 1 / (1 - pred.p))


def test_nested_normal_density_collapses():
    from scipy.stats import norm
    from pescov.predictor import nested_normal_density
    grid = np.linspace(-6, 6, 25)
    np.testing.assert_allclose(nested_normal_density(grid, 0.4, 0.3, 1.7), norm.pdf(grid, 0.4, math.hypot(0.3, 1.7)),
                               atol=1e-13)
    with pytest.raises(PredictionError):
        nested_normal_density(grid, 0.0, 0.0, 1.0)


def test_quadrature_kernels_agree():
    from pescov import backend
    from pescov.predictor import normal_grid
    rng = np.random.default_rng(11)
    loc, sigma = rng.normal(-1, 3, 500), rng.uniform(0, 4, 500)
    z, w = normal_grid(4.0)
    a, b = np.empty(500), np.empty(500)
    backend.kernels.normal_expit_mean(loc, sigma, z, w, a)
    backend.python_kernels.normal_expit_mean(loc, sigma, z, w, b)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-16)
