"""Posterior and mixed predictive checks on grouped under-coverage counts.

Replicated outcomes are drawn at four integration levels:

``self``
    the fitted household effects;
``new_household``
    fresh household effects inside the fitted PSUs;
``new_household_psu``
    fresh household and PSU effects inside the fitted strata;
``new_household_psu_stratum``
    fresh household and PSU effects with each PSU's stratum drawn from Pr(stratum | TA).

In the default ``marginal`` mode every person gets an independent Bernoulli
draw at the integrated probability (q_psu, q_strat or the cell probability).
``clustered`` mode instead samples the fresh effects once per unit, so members
of a household share their draw.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .model import ModelData, ParamDraw
from .predictor import integrate_household

log = logging.getLogger(__name__)

LEVELS = ("self", "new_household", "new_household_psu", "new_household_psu_stratum")
MODES = ("clustered", "marginal")
DEMOGRAPHIC_FIELDS = ("eth_m", "eth_p", "eth_a", "eth_o", "sex", "nz_born", "maori_descent")
_SHORT = {"eth_m": "M", "eth_p": "P", "eth_a": "A", "eth_o": "O", "sex": "F", "nz_born": "NZb",
          "maori_descent": "Md"}


class PpcError(ValueError):
    pass


@dataclass
class Grouping:
    """Assignment of persons to groups; groups are ordered by descending size."""

    labels: list[str]
    index: np.ndarray
    kind: str = "demographic"

    @property
    def n_groups(self) -> int:
        return len(self.labels)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.index, minlength=self.n_groups)

    def counts(self, y: np.ndarray) -> np.ndarray:
        """Group totals of ``y`` (last axis indexes persons)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return np.bincount(self.index, weights=y, minlength=self.n_groups)
        onehot = np.zeros((y.shape[-1], self.n_groups))
        onehot[np.arange(y.shape[-1]), self.index] = 1.0
        return y @ onehot

    def top(self, k: int) -> "Grouping":
        """Keep the ``k`` largest groups; other persons get index -1 and are dropped by :meth:`counts`."""
        keep = min(k, self.n_groups)
        idx = np.where(self.index < keep, self.index, -1)
        return _Subset(self.labels[:keep], idx, self.kind)


class _Subset(Grouping):
    def counts(self, y):
        mask = self.index >= 0
        y = np.asarray(y, dtype=float)
        return Grouping(self.labels, self.index[mask], self.kind).counts(y[..., mask])


def _ordered(keys: np.ndarray, labeler, kind: str) -> Grouping:
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    # descending size, ties broken by key order for determinism
    order = np.lexsort((np.arange(len(uniq)), -counts))
    rank = np.empty(len(uniq), dtype=int)
    rank[order] = np.arange(len(uniq))
    return Grouping([labeler(uniq[i]) for i in order], rank[inverse], kind)


def group_by_demographics(persons: pd.DataFrame | dict) -> Grouping:
    """Groups formed by every observed combination of the seven binary demographics."""
    try:
        keys = np.column_stack([np.asarray(persons[f], dtype=int) for f in DEMOGRAPHIC_FIELDS])
    except KeyError as e:
        raise PpcError(f"missing demographic field {e}") from None

    def label(row):
        on = [_SHORT[f] for f, v in zip(DEMOGRAPHIC_FIELDS, row) if v]
        return "+".join(on) if on else "none"

    return _ordered(keys, label, "demographic")


def group_by_ta(ta_of_person) -> Grouping:
    ta = np.asarray(ta_of_person, dtype=int)
    return _ordered(ta[:, None], lambda r: f"TA{int(r[0])}", "ta")


def group_by_stratum(stratum_of_person) -> Grouping:
    s = np.asarray(stratum_of_person, dtype=int)
    return _ordered(s[:, None], lambda r: f"S{int(r[0])}", "stratum")


# ---------------------------------------------------------------------------
# replication

def _one_draw(d: ModelData, p: ParamDraw, level: str, mode: str, rng: np.random.Generator) -> np.ndarray:
    xb = d.x_ind @ p.beta
    mu = float(p.mu)
    s_hh, s_psu = float(p.sigma_hh), float(p.sigma_psu)
    hh_fix = mu + d.x_hh @ p.beta_hh
    b_psu = np.asarray(p.beta_psu)
    psu_fix = d.x_psu[:, : b_psu.shape[0]] @ b_psu
    if level == "self":
        prob = expit(p.alpha_hh[d.hh_of_person] + xb)
    elif mode == "marginal":
        if level == "new_household":
            m = (hh_fix + p.alpha_psu[d.psu_of_hh])[d.hh_of_person]
            prob = integrate_household(m, s_hh ** 2, xb)
        elif level == "new_household_psu":
            m = (hh_fix[d.hh_of_person] + (p.alpha_strat[d.stratum_of_psu] + psu_fix)[d.psu_of_person])
            prob = integrate_household(m, s_hh ** 2 + s_psu ** 2, xb)
        else:
            base = hh_fix[d.hh_of_person] + psu_fix[d.psu_of_person]
            P = d.p_strat_given_ta[:, d.ta_of_person].T
            used = np.flatnonzero(P.any(axis=0))
            vals = integrate_household(base[:, None] + p.alpha_strat[None, used], s_hh ** 2 + s_psu ** 2, xb[:, None])
            prob = np.sum(vals * P[:, used], axis=1)
    else:
        if level == "new_household":
            a_psu = p.alpha_psu
        else:
            if level == "new_household_psu":
                strat = d.stratum_of_psu
            else:
                cdf = np.cumsum(d.p_strat_given_ta[:, d.ta_of_psu], axis=0)
                u = rng.random(d.n_psus)
                strat = np.minimum((u[None, :] > cdf).sum(axis=0), d.n_strata - 1)
            a_psu = p.alpha_strat[strat] + psu_fix + s_psu * rng.standard_normal(d.n_psus)
        a_hh = hh_fix + a_psu[d.psu_of_hh] + s_hh * rng.standard_normal(d.n_households)
        prob = expit(a_hh[d.hh_of_person] + xb)
    return (rng.random(d.n_persons) < prob).astype(float)


def simulate_outcomes(draw: ParamDraw, data: ModelData, level: str = "self",
                      rng: np.random.Generator | None = None, mode: str = "marginal") -> np.ndarray:
    """Person-level 0/1 outcomes replicated from one parameter draw at ``level``."""
    if level not in LEVELS:
        raise PpcError(f"unknown level {level!r}; expected one of {LEVELS}")
    if mode not in MODES:
        raise PpcError(f"unknown mode {mode!r}; expected one of {MODES}")
    if draw.n_draws is not None:
        raise PpcError("simulate_outcomes takes a single draw")
    return _one_draw(data, draw, level, mode, rng if rng is not None else np.random.default_rng())


def replicate(draws: ParamDraw, data: ModelData, level: str, groups: Grouping,
              rng: np.random.Generator, mode: str = "marginal") -> np.ndarray:
    """Simulated group undercounts, one row per draw."""
    if level not in LEVELS:
        raise PpcError(f"unknown level {level!r}; expected one of {LEVELS}")
    if mode not in MODES:
        raise PpcError(f"unknown mode {mode!r}; expected one of {MODES}")
    if groups.index.shape[0] != data.n_persons:
        raise PpcError("grouping does not match the data")
    n = draws.n_draws
    if n is None:
        draws = ParamDraw(**{k: np.asarray(v)[None] for k, v in vars(draws).items()})
        n = 1
    if np.shape(draws.alpha_hh)[-1] != data.n_households:
        raise PpcError("draws do not match the data's household count")
    out = np.empty((n, groups.n_groups))
    for i in range(n):
        out[i] = groups.counts(_one_draw(data, draws.take(i), level, mode, rng))
    return out


def expected_counts_self(draws: ParamDraw, data: ModelData, groups: Grouping) -> np.ndarray:
    """Mean self-level undercount per group: the sum of fitted probabilities."""
    p = expit(np.asarray(draws.alpha_hh)[..., data.hh_of_person] + np.asarray(draws.beta) @ data.x_ind.T)
    return groups.counts(p)


# ---------------------------------------------------------------------------
# reporting

@dataclass
class PpcReport:
    """Observed group counts against predictive 5%/95% quantiles per level."""

    table: pd.DataFrame

    def inside_rate(self, level: str | None = None) -> float:
        t = self.table if level is None else self.table[self.table["level"] == level]
        return float(t["inside"].mean())

    def mean_width(self, level: str) -> float:
        t = self.table[self.table["level"] == level]
        return float((t["q95"] - t["q05"]).mean())

    def to_csv(self) -> pd.DataFrame:
        t = self.table.copy()
        t["flag"] = np.where(t["inside"], "inside", "outside")
        return t[["group", "kind", "size", "observed", "level", "q05", "q95", "flag"]]


def interval_flags(observed: np.ndarray, replicates: np.ndarray, lower: float = 0.05, upper: float = 0.95):
    """Empirical (type-7) quantiles and whether each observation lies inside them."""
    replicates = np.asarray(replicates, dtype=float)
    if replicates.shape[0] < 100:
        warnings.warn(f"only {replicates.shape[0]} replicates; predictive quantiles will be noisy",
                      RuntimeWarning, stacklevel=2)
    lo, hi = np.quantile(replicates, [lower, upper], axis=0)
    obs = np.asarray(observed, dtype=float)
    return lo, hi, (obs >= lo) & (obs <= hi)


def ppc_report(draws: ParamDraw, data: ModelData, groupings: list[Grouping], rng: np.random.Generator,
               levels=LEVELS, mode: str = "marginal") -> PpcReport:
    rows = []
    for g in groupings:
        obs = g.counts(data.y)
        sizes = g.sizes if not isinstance(g, _Subset) else np.bincount(g.index[g.index >= 0], minlength=g.n_groups)
        for level in levels:
            reps = replicate(draws, data, level, g, rng, mode)
            lo, hi, inside = interval_flags(obs, reps)
            for j, label in enumerate(g.labels):
                rows.append({"group": label, "kind": g.kind, "size": int(sizes[j]), "observed": obs[j],
                             "level": level, "q05": lo[j], "q95": hi[j], "inside": bool(inside[j])})
    return PpcReport(pd.DataFrame(rows))
