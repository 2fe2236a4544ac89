"""Marginal under-coverage probabilities for covariate-TA cells.

A cell's probability integrates the household and PSU effects out of the
logistic model and mixes over the strata its TA overlaps::

    p(x, t) = sum_s Pr(s | t) E[expit(a + x_ind beta)],  a ~ N(m_s, sigma_hh^2 + sigma_psu^2)
    m_s     = mu + x_hh beta_hh + x_psu beta_psu + alpha_strat[s]

The one-dimensional normal expectation is computed by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from .covariates import (
    OccurrenceMaps,
    build_spline_basis,
    encode_households,
    encode_persons,
    encode_psus,
)
from .backend import kernels
from .model import ModelSpec, ParamDraw

METHODS = ("trapezoid", "gauss-hermite", "mc")

_Z_MAX = 9.0
_GH_NODES = 20


class PredictionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# household integral

def normal_grid(sigma_max: float, method: str = "trapezoid", n_nodes: int | None = None,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal nodes and weights accurate for integrands ``expit(m + sigma z)``.

    The trapezoid step shrinks with ``sigma_max`` so that the logistic's complex
    poles (distance ``pi / sigma`` from the real axis in z) stay resolved.
    """
    if method == "trapezoid":
        h = min(0.6, 0.7 / sigma_max) if sigma_max > 0 else 0.6
        k = int(math.ceil(2 * _Z_MAX / h)) + 1
        if n_nodes is not None:
            k = max(k, n_nodes)
        z = np.linspace(-_Z_MAX, _Z_MAX, k)
        w = np.exp(-0.5 * z * z)
        return z, w / w.sum()
    if method == "gauss-hermite":
        x, w = hermgauss(n_nodes or _GH_NODES)
        return math.sqrt(2.0) * x, w / math.sqrt(math.pi)
    if method == "mc":
        rng = rng if rng is not None else np.random.default_rng(0)
        n = n_nodes or 100_000
        return rng.standard_normal(n), np.full(n, 1.0 / n)
    raise PredictionError(f"unknown integration method {method!r}; expected one of {METHODS}")


def integrate_household(m, v, xb=0.0, method: str = "trapezoid", n_nodes: int | None = None,
                        rng: np.random.Generator | None = None):
    """E[expit(a + xb)] for a ~ N(m, v), elementwise over broadcast inputs.

    Parameters
    ----------
    m, v, xb : array_like
        Mean and variance of the effect, and the fixed part of the linear predictor.
    method : {'trapezoid', 'gauss-hermite', 'mc'}
        Trapezoid rule on a variance-adapted grid (default), 20-node Gauss-Hermite,
        or plain Monte Carlo with ``n_nodes`` draws.

    Returns
    -------
    float or ndarray
    """
    m, v, xb = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (m, v, xb)))
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise PredictionError("variance must be non-negative")
    sigma = np.sqrt(v)
    loc = m + xb
    smax = float(sigma.max()) if sigma.size else 0.0
    if smax == 0.0:
        out = expit(loc)
    else:
        z, w = normal_grid(smax, method, n_nodes, rng)
        flat = np.empty(loc.size)
        kernels.normal_expit_mean(np.ascontiguousarray(loc, dtype=float).ravel(),
                                  np.ascontiguousarray(sigma, dtype=float).ravel(),
                                  np.ascontiguousarray(z, dtype=float), np.ascontiguousarray(w, dtype=float), flat)
        out = np.where(sigma == 0, expit(loc), flat.reshape(loc.shape))
    return float(out) if out.ndim == 0 else out


def nested_normal_density(lam, alpha, sigma_hh: float, sigma_psu: float) -> np.ndarray:
    """Density of ``lam = delta + sigma_hh e`` with ``delta ~ N(alpha, sigma_psu^2)``, by quadrature over delta.

    This is the nesting the predictor collapses into a single normal of variance
    ``sigma_hh^2 + sigma_psu^2``; it exists so that collapse can be checked numerically.
    """
    if sigma_hh <= 0 or sigma_psu < 0:
        raise PredictionError("sigma_hh must be positive and sigma_psu non-negative")
    # the integrand in z has width ~ sigma_hh / sigma_psu, so refine the grid accordingly
    z, w = normal_grid(2.0 * max(1.0, sigma_psu / sigma_hh))
    lam = np.asarray(lam, dtype=float)[..., None]
    e = (lam - alpha - sigma_psu * z) / sigma_hh
    vals = np.exp(-0.5 * e * e) / (sigma_hh * math.sqrt(2 * math.pi))
    return (vals * w).sum(axis=-1)


def erp_weight(p):
    """Inverse coverage weight ``1 / (1 - p)``."""
    p = np.asarray(p, dtype=float)
    if np.any(p >= 1) or np.any(p < 0) or np.any(np.isnan(p)):
        raise PredictionError("under-coverage probability must lie in [0, 1)")
    w = 1.0 / (1.0 - p)
    return float(w) if w.ndim == 0 else w


# ---------------------------------------------------------------------------
# cells

@dataclass
class Cells:
    """Covariate-TA cells: one row per cell."""

    x_ind: np.ndarray
    x_hh: np.ndarray
    x_psu: np.ndarray
    ta: np.ndarray

    def __post_init__(self):
        self.x_ind = np.atleast_2d(np.asarray(self.x_ind, dtype=float))
        self.x_hh = np.atleast_2d(np.asarray(self.x_hh, dtype=float))
        self.x_psu = np.atleast_2d(np.asarray(self.x_psu, dtype=float))
        self.ta = np.atleast_1d(np.array(self.ta, dtype=int))
        n = len(self.ta)
        if not (self.x_ind.shape[0] == self.x_hh.shape[0] == self.x_psu.shape[0] == n):
            raise PredictionError("cell blocks have different row counts")

    def __len__(self) -> int:
        return len(self.ta)

    def take(self, idx) -> "Cells":
        return Cells(self.x_ind[idx], self.x_hh[idx], self.x_psu[idx], self.ta[idx])

    def key_matrix(self) -> np.ndarray:
        return np.hstack([self.x_ind, self.x_hh, self.x_psu, self.ta[:, None]])

    def unique(self) -> tuple["Cells", np.ndarray]:
        """Distinct cells and the inverse index mapping rows onto them."""
        _, first, inverse = np.unique(self.key_matrix(), axis=0, return_index=True, return_inverse=True)
        return self.take(first), inverse.ravel()


def cells_from_records(df: pd.DataFrame, variant: str, basis=None) -> Cells:
    """Cells for person records in the survey/census CSV schema."""
    basis = basis or build_spline_basis()
    return Cells(
        x_ind=encode_persons(df, basis),
        x_hh=encode_households(df, variant),
        x_psu=encode_psus(df["psu_pacific_prop"].to_numpy(), df["psu_size_cat"].to_numpy()),
        ta=df["ta_id"].to_numpy(),
    )


def _psu_coef(draw: ParamDraw, x_psu: np.ndarray) -> np.ndarray:
    b = np.asarray(draw.beta_psu, dtype=float)
    return x_psu[:, : b.shape[-1]] @ b


def _check_ta(cells: Cells, maps: OccurrenceMaps):
    if len(cells) and (cells.ta.min() < 0 or cells.ta.max() >= maps.n_ta):
        raise PredictionError(f"TA index out of range [0, {maps.n_ta})")


def fixed_part(cells: Cells, draw: ParamDraw) -> np.ndarray:
    """mu + x_ind beta + x_hh beta_hh + x_psu beta_psu for a single draw."""
    return (float(draw.mu) + cells.x_ind @ draw.beta + cells.x_hh @ draw.beta_hh
            + _psu_coef(draw, cells.x_psu))


def stratum_table(cells: Cells, draw: ParamDraw, method: str = "trapezoid") -> np.ndarray:
    """Probability of each cell placed in each stratum, shape ``(n_cells, n_strata)``.

    Multiplying by ``Pr(stratum | TA)`` gives the cell probability in every TA.
    """
    a = fixed_part(cells, draw)
    v = float(draw.sigma_hh) ** 2 + float(draw.sigma_psu) ** 2
    return integrate_household(a[:, None] + np.asarray(draw.alpha_strat)[None, :], v, 0.0, method)


def p_under_cells(cells: Cells, draw: ParamDraw, maps: OccurrenceMaps, method: str = "trapezoid",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Marginal under-coverage probability of each cell for one draw."""
    _check_ta(cells, maps)
    a = fixed_part(cells, draw)
    v = float(draw.sigma_hh) ** 2 + float(draw.sigma_psu) ** 2
    P = maps.p_strat_given_ta[:, cells.ta].T  # cells x strata
    used = np.flatnonzero(P.any(axis=0))
    vals = integrate_household(a[:, None] + np.asarray(draw.alpha_strat)[None, used], v, 0.0, method, rng=rng)
    return np.sum(vals * P[:, used], axis=1)


def p_under_cell(cell: Cells, draw: ParamDraw, maps: OccurrenceMaps, method: str = "trapezoid") -> float:
    if len(cell) != 1:
        raise PredictionError("expected a single cell")
    return float(p_under_cells(cell, draw, maps, method)[0])


def predict_cells(cells: Cells, draws: ParamDraw, maps: OccurrenceMaps, method: str = "trapezoid") -> np.ndarray:
    """Per-draw cell probabilities, shape ``(n_draws, n_cells)``."""
    n = draws.n_draws
    if n is None:
        return p_under_cells(cells, draws, maps, method)[None, :]
    out = np.empty((n, len(cells)))
    for i in range(n):
        out[i] = p_under_cells(cells, draws.take(i), maps, method)
    return out


def q_psu(x_ind, x_hh, draw: ParamDraw, psu_index, method: str = "trapezoid"):
    """Probability for a new household in an observed PSU (household effect integrated out)."""
    psu_index = np.asarray(psu_index)
    a_psu = np.asarray(draw.alpha_psu)
    if np.any(psu_index < 0) or np.any(psu_index >= a_psu.shape[-1]):
        raise PredictionError("PSU index out of range")
    m = float(draw.mu) + a_psu[psu_index] + np.asarray(x_hh) @ draw.beta_hh
    return integrate_household(m, float(draw.sigma_hh) ** 2, np.asarray(x_ind) @ draw.beta, method)


def q_strat(x_ind, x_hh, x_psu, draw: ParamDraw, stratum_index, method: str = "trapezoid"):
    """Probability for a new household in a new PSU of an observed stratum."""
    stratum_index = np.asarray(stratum_index)
    a_st = np.asarray(draw.alpha_strat)
    if np.any(stratum_index < 0) or np.any(stratum_index >= a_st.shape[-1]):
        raise PredictionError("stratum index out of range")
    x_psu = np.atleast_2d(np.asarray(x_psu, dtype=float))
    m = (float(draw.mu) + a_st[stratum_index] + np.asarray(x_hh) @ draw.beta_hh
         + _psu_coef(draw, x_psu).reshape(np.shape(stratum_index) or ()))
    v = float(draw.sigma_hh) ** 2 + float(draw.sigma_psu) ** 2
    return integrate_household(m, v, np.asarray(x_ind) @ draw.beta, method)


# ---------------------------------------------------------------------------
# covariate placement equivalence

def _nested_natural(cells: Cells, draw: ParamDraw, maps: OccurrenceMaps) -> np.ndarray:
    """Natural-placement probability by nested quadrature over the PSU then household effect."""
    s_hh, s_psu = float(draw.sigma_hh), float(draw.sigma_psu)
    z_p, w_p = normal_grid(s_psu) if s_psu > 0 else (np.zeros(1), np.ones(1))
    z_h, w_h = normal_grid(s_hh) if s_hh > 0 else (np.zeros(1), np.ones(1))
    xb = cells.x_ind @ draw.beta
    hh_loc = float(draw.mu) + cells.x_hh @ draw.beta_hh
    psu_loc = _psu_coef(draw, cells.x_psu)
    P = maps.p_strat_given_ta[:, cells.ta].T
    out = np.zeros(len(cells))
    for s in np.flatnonzero(P.any(axis=0)):
        alpha_psu = (float(draw.alpha_strat[s]) + psu_loc)[:, None] + s_psu * z_p[None, :]
        alpha_hh = (hh_loc[:, None, None] + alpha_psu[:, :, None]) + s_hh * z_h[None, None, :]
        inner = expit(alpha_hh + xb[:, None, None]) @ w_h
        out += P[:, s] * (inner @ w_p)
    return out


def _collapsed_individual(cells: Cells, draw: ParamDraw, maps: OccurrenceMaps) -> np.ndarray:
    """Individual-placement probability: deviations lambda ~ N(alpha_strat, sigma_hh^2 + sigma_psu^2)."""
    return p_under_cells(cells, draw, maps)


def check_equivalence(cells: Cells, draw: ParamDraw, maps: OccurrenceMaps) -> float:
    """Largest |p_natural - p_individual| over ``cells`` for one draw."""
    return float(np.max(np.abs(_nested_natural(cells, draw, maps) - _collapsed_individual(cells, draw, maps))))


# ---------------------------------------------------------------------------
# census scoring

@dataclass
class CellPrediction:
    """Per-draw probabilities and ERP weights for a set of cells."""

    p: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_probs(cls, p: np.ndarray) -> "CellPrediction":
        return cls(p, erp_weight(p))

    def summary(self, probs=(0.05, 0.5, 0.95)) -> np.ndarray:
        """Quantiles over draws, shape ``(len(probs), n_cells)``."""
        return np.quantile(self.p, probs, axis=0)


def score_records(df: pd.DataFrame, draws: ParamDraw, maps: OccurrenceMaps, spec: ModelSpec,
                  method: str = "trapezoid") -> tuple[CellPrediction, np.ndarray]:
    """Score census-style records, evaluating each distinct cell once.

    Returns the prediction for the distinct cells and, for each record, the
    index of its cell.
    """
    cells = cells_from_records(df, spec.variant)
    uniq, inverse = cells.unique()
    return CellPrediction.from_probs(predict_cells(uniq, draws, maps, method)), inverse
