"""Standardized and marginal under-coverage summaries.

The standard population is the model-corrected census: each census cell is
weighted by its count times the inverse coverage weight ``1 / (1 - p)``, so
the standard distribution changes from draw to draw. Summaries are taken
across draws (median and equal-tailed 90% interval), never across cells.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .covariates import OccurrenceMaps
from .model import ModelSpec, ParamDraw
from .predictor import Cells, cells_from_records, erp_weight, stratum_table

ETHNICITY_COLUMNS = {"maori": "eth_m", "pacific": "eth_p", "asian": "eth_a", "other": "eth_o"}


class StandardizationError(ValueError):
    pass


@dataclass
class StandardDistribution:
    """Per-draw probability mass over cells, shape ``(n_draws, n_cells)``."""

    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.atleast_2d(np.asarray(self.mass, dtype=float))


def _as_draws(p) -> np.ndarray:
    return np.atleast_2d(np.asarray(p, dtype=float))


def build_standard(counts, p) -> StandardDistribution:
    """Mass proportional to ``count * 1 / (1 - p)`` per draw.

    Parameters
    ----------
    counts : array, shape (n_cells,)
        Census counts per cell.
    p : array, shape (n_draws, n_cells) or (n_cells,)
        Cell under-coverage probabilities.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0 or counts.sum() <= 0:
        raise StandardizationError("empty census input")
    p = _as_draws(p)
    if p.shape[1] != counts.size:
        raise StandardizationError("probabilities do not cover every census cell")
    w = counts[None, :] * erp_weight(p)
    return StandardDistribution(w / w.sum(axis=1, keepdims=True))


def _convex(values, weights, out) -> np.ndarray:
    """Clamp rounding so a weighted mean never leaves the range of the weighted values."""
    v = np.where(weights > 0, values, np.nan)
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = np.nanmin(v, axis=-1), np.nanmax(v, axis=-1)
    return np.where(np.isnan(lo), out, np.clip(out, lo, hi))


def _weighted(p_t, weights) -> np.ndarray:
    p_t = _as_draws(p_t)
    weights = _as_draws(weights)
    if p_t.shape[1] != weights.shape[1]:
        raise StandardizationError("probability table does not cover every standard cell")
    p_t, w = np.broadcast_arrays(p_t, weights)
    return _convex(p_t, w, np.sum(p_t * w, axis=1))


def standardized_ta(p_t, std: StandardDistribution) -> np.ndarray:
    """sum_x p(x, t) Pr_std(x) per draw, for one TA's cell probabilities ``p_t``."""
    return _weighted(p_t, std.mass)


def marginal_ta(p_t, ta_distribution) -> np.ndarray:
    """sum_x p(x, t) Pr(x | t) per draw, with the TA's own covariate distribution."""
    return _weighted(p_t, ta_distribution)


def summarize(values, probs=(0.05, 0.5, 0.95)) -> np.ndarray:
    """Quantiles over draws (axis 0)."""
    return np.quantile(_as_draws(values), probs, axis=0)


def summary_frame(values, index, name: str = "unit") -> pd.DataFrame:
    q05, med, q95 = summarize(values)
    return pd.DataFrame({name: list(index), "median": med, "q05": q05, "q95": q95})


# ---------------------------------------------------------------------------
# census driver

@dataclass
class CensusCells:
    """Census records collapsed to distinct covariate cells and (cell, TA) pairs."""

    cells: Cells
    pair_cell: np.ndarray
    pair_ta: np.ndarray
    pair_count: np.ndarray
    record_pair: np.ndarray
    n_ta: int

    @classmethod
    def from_records(cls, census: pd.DataFrame, spec: ModelSpec, n_ta: int) -> "CensusCells":
        if len(census) == 0:
            raise StandardizationError("empty census input")
        c = cells_from_records(census, spec.variant)
        # cells are covariate patterns; the TA is tracked per pair
        cells = Cells(c.x_ind, c.x_hh, c.x_psu, np.zeros(len(c), dtype=int))
        uniq, inv = cells.unique()
        ta = census["ta_id"].to_numpy(dtype=int).copy()
        if ta.min() < 0 or ta.max() >= n_ta:
            raise StandardizationError("census TA out of range")
        pairs, record_pair, counts = np.unique(np.column_stack([inv, ta]), axis=0,
                                               return_inverse=True, return_counts=True)
        return cls(uniq, pairs[:, 0], pairs[:, 1], counts.astype(float), record_pair.ravel(), n_ta)


@dataclass
class StandardizationResult:
    standardized: np.ndarray
    marginal: np.ndarray
    overall: np.ndarray
    n_draws: int

    def frames(self) -> dict[str, pd.DataFrame]:
        tas = [f"TA{t}" for t in range(self.standardized.shape[1])]
        return {
            "standardized": summary_frame(self.standardized, tas, "ta"),
            "marginal": summary_frame(self.marginal, tas, "ta"),
            "overall": summary_frame(self.overall[:, None], ["all"], "unit"),
        }


def _cell_ta_table(cc: CensusCells, draw: ParamDraw, maps: OccurrenceMaps, method: str) -> np.ndarray:
    return stratum_table(cc.cells, draw, method) @ maps.p_strat_given_ta


def standardize_census(census: pd.DataFrame, draws: ParamDraw, maps: OccurrenceMaps, spec: ModelSpec,
                       method: str = "trapezoid") -> StandardizationResult:
    """Standardized and marginal TA under-coverage for every draw."""
    cc = CensusCells.from_records(census, spec, maps.n_ta)
    S = draws.n_draws or 1
    T = maps.n_ta
    std_out = np.empty((S, T))
    marg_out = np.empty((S, T))
    overall = np.empty(S)
    for i in range(S):
        d = draws.take(i) if draws.n_draws else draws
        p_xt = _cell_ta_table(cc, d, maps, method)
        p_pair = p_xt[cc.pair_cell, cc.pair_ta]
        w_pair = cc.pair_count * erp_weight(p_pair)
        std_x = np.bincount(cc.pair_cell, weights=w_pair, minlength=len(cc.cells)) / w_pair.sum()
        std_out[i] = _convex(p_xt.T, np.broadcast_to(std_x, p_xt.T.shape), std_x @ p_xt)
        ta_tot = np.bincount(cc.pair_ta, weights=w_pair, minlength=T)
        num = np.bincount(cc.pair_ta, weights=w_pair * p_pair, minlength=T)
        with np.errstate(invalid="ignore", divide="ignore"):
            marg = num / ta_tot
        lo = np.full(T, np.inf)
        hi = np.full(T, -np.inf)
        np.minimum.at(lo, cc.pair_ta, p_pair)
        np.maximum.at(hi, cc.pair_ta, p_pair)
        marg_out[i] = np.where(ta_tot > 0, np.clip(marg, lo, hi), np.nan)
        overall[i] = (w_pair * p_pair).sum() / w_pair.sum()
    return StandardizationResult(std_out, marg_out, overall, S)


def _apply_profile(census: pd.DataFrame, assignment: dict) -> pd.DataFrame:
    df = census.copy()
    for var, value in assignment.items():
        if var == "ethnicity":
            if value not in ETHNICITY_COLUMNS:
                raise StandardizationError(f"unknown ethnicity {value!r}")
            for col in ETHNICITY_COLUMNS.values():
                df[col] = 0
            df[ETHNICITY_COLUMNS[value]] = 1
        elif var in df.columns:
            df[var] = value
        else:
            raise StandardizationError(f"profiled variable {var!r} is absent from the census")
    return df


def profile_by(census: pd.DataFrame, profile: dict, draws: ParamDraw, maps: OccurrenceMaps,
               spec: ModelSpec, method: str = "trapezoid") -> pd.DataFrame:
    """Standardized curves over the categories of the profiled variables.

    Every census record is moved to each profiled category in turn, keeping its
    other covariates and TA, and the resulting probabilities are averaged with
    the draw's corrected-census weights.

    Parameters
    ----------
    profile : dict
        Variable name -> list of values. ``"ethnicity"`` takes values from
        ``ETHNICITY_COLUMNS`` and sets the four indicators one-hot.
    """
    if not profile:
        raise StandardizationError("nothing to profile")
    for var in profile:
        if var != "ethnicity" and var not in census.columns:
            raise StandardizationError(f"profiled variable {var!r} is absent from the census")
    base = CensusCells.from_records(census, spec, maps.n_ta)
    S = draws.n_draws or 1
    names = list(profile)
    combos = list(itertools.product(*(profile[k] for k in names)))
    shifted = [CensusCells.from_records(_apply_profile(census, dict(zip(names, c))), spec, maps.n_ta)
               for c in combos]
    values = np.empty((S, len(combos)))
    for i in range(S):
        d = draws.take(i) if draws.n_draws else draws
        p_xt = _cell_ta_table(base, d, maps, method)
        w_rec = erp_weight(p_xt[base.pair_cell, base.pair_ta])[base.record_pair]
        w_rec = w_rec / w_rec.sum()
        for j, cc in enumerate(shifted):
            q = _cell_ta_table(cc, d, maps, method)[cc.pair_cell, cc.pair_ta][cc.record_pair]
            values[i, j] = w_rec @ q
    q05, med, q95 = summarize(values)
    out = pd.DataFrame(combos, columns=names)
    out["median"], out["q05"], out["q95"] = med, q05, q95
    return out
