"""Synthetic populations, census inclusion and the two-stage PES design.

A population is a strict tree TA/stratum -> PSU -> household -> person. Census
under-coverage is simulated from a known set of coverage-model parameters, and
a PES sample is then drawn by PPS systematic selection of PSUs within strata,
one panel of dwellings per selected PSU, and household response.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from . import rng as _rng
from .covariates import (
    HH_PRESENCE,
    build_occurrence_maps,
    build_spline_basis,
    encode_households,
    encode_persons,
    encode_psus,
    psu_size_category,
    x_hh_names,
    x_ind_names,
)

ETH_PROFILES = ("O", "M", "P", "A", "MO", "MP")
_PROFILE_FLAGS = {
    "O": (0, 0, 0, 1),
    "M": (1, 0, 0, 0),
    "P": (0, 1, 0, 0),
    "A": (0, 0, 1, 0),
    "MO": (1, 0, 0, 1),
    "MP": (1, 1, 0, 0),
}
DEFAULT_HH_SIZE_PROBS = (0.23, 0.33, 0.16, 0.14, 0.08, 0.035, 0.015, 0.01)
DEFAULT_ETH_WEIGHTS = {"O": 0.55, "M": 0.1, "P": 0.07, "A": 0.15, "MO": 0.09, "MP": 0.04}


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class DesignError(RuntimeError):
    """The sampling design cannot be carried out on this population."""


@dataclass
class PopulationConfig:
    n_ta: int = 10
    n_strata: int = 20
    psus_per_stratum: int | list[int] = 20
    households_per_psu_mean: float = 80.0
    households_per_psu_dispersion: float = 8.0
    household_size_probs: tuple[float, ...] = DEFAULT_HH_SIZE_PROBS
    ethnicity_weights: dict | list[dict] = field(default_factory=lambda: dict(DEFAULT_ETH_WEIGHTS))
    ethnicity_concordance: float = 0.85
    psu_ethnicity_concentration: float | None = 20.0
    child_share: float = 0.35
    female_prob: float = 0.51
    nz_born_rate: float = 0.8
    asian_nz_born_rate: float = 0.3
    maori_descent_given_maori: float = 0.95
    maori_descent_given_other: float = 0.03
    frame_undercoverage_beta: tuple[float, float] | None = (1.0, 12.0)
    seed: int = 0

    def validate(self) -> None:
        counts = [self.n_ta, self.n_strata, self.households_per_psu_mean]
        pps = self.psus_per_stratum
        counts += list(pps) if isinstance(pps, (list, tuple)) else [pps]
        if any(c < 1 for c in counts):
            raise ConfigError("all counts must be >= 1")
        if isinstance(pps, (list, tuple)) and len(pps) != self.n_strata:
            raise ConfigError("psus_per_stratum list must have one entry per stratum")
        probs = np.asarray(self.household_size_probs, dtype=float)
        if probs.shape != (8,) or np.any(probs < 0) or probs.sum() <= 0:
            raise ConfigError("household_size_probs must be 8 non-negative weights")
        for name in (
            "ethnicity_concordance", "child_share", "female_prob", "nz_born_rate",
            "asian_nz_born_rate", "maori_descent_given_maori", "maori_descent_given_other",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        for w in self._eth_weight_list():
            if set(w) - set(ETH_PROFILES):
                raise ConfigError(f"unknown ethnicity profiles {sorted(set(w) - set(ETH_PROFILES))}")
            vals = np.array(list(w.values()), dtype=float)
            if np.any((vals < 0) | (vals > 1)) or vals.sum() <= 0:
                raise ConfigError("ethnicity mixture weights must lie in [0, 1]")
        if self.frame_undercoverage_beta is not None:
            a, b = self.frame_undercoverage_beta
            if a <= 0 or b <= 0:
                raise ConfigError("frame_undercoverage_beta parameters must be positive")

    def _eth_weight_list(self) -> list[dict]:
        w = self.ethnicity_weights
        if isinstance(w, dict):
            return [w] * self.n_ta
        if len(w) != self.n_ta:
            raise ConfigError("ethnicity_weights list must have one entry per TA")
        return list(w)

    def eth_weight_matrix(self) -> np.ndarray:
        rows = []
        for w in self._eth_weight_list():
            r = np.array([float(w.get(p, 0.0)) for p in ETH_PROFILES])
            rows.append(r / r.sum())
        return np.array(rows)


@dataclass
class TruthParams:
    """Ground-truth coverage-model parameters (unit effects are drawn from them)."""

    mu: float
    beta: np.ndarray
    beta_hh: np.ndarray
    beta_psu: np.ndarray
    beta_ta: np.ndarray
    sigma_hh: float
    sigma_psu: float
    sigma_strat: float
    sigma_ta: float
    variant: str = "model1"

    def __post_init__(self):
        for name in ("beta", "beta_hh", "beta_psu", "beta_ta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if min(self.sigma_hh, self.sigma_psu, self.sigma_strat, self.sigma_ta) < 0:
            raise ConfigError("truth scales must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TruthParams":
        return cls(**d)


@dataclass
class InclusionConfig:
    psu_sampling_fraction: float | list[float] = 0.5
    panel_size: int = 11
    pps_size_measure: str = "households"
    pps_pacific_adjustment: float = 1.0
    response_rate: float = 0.85
    response_coefs: dict = field(default_factory=dict)
    person_response_rate: float = 1.0
    informative: bool = False
    informative_strength: float = 0.0
    seed: int | None = None

    def validate(self, n_strata: int) -> None:
        f = self.psu_sampling_fraction
        fr = list(f) if isinstance(f, (list, tuple)) else [f] * n_strata
        if len(fr) != n_strata or any(not 0 < x <= 1 for x in fr):
            raise ConfigError("psu_sampling_fraction must be in (0, 1] for every stratum")
        if self.panel_size < 1:
            raise ConfigError("panel_size must be >= 1")
        if self.pps_size_measure not in ("households", "equal", "pacific_adjusted"):
            raise ConfigError(f"unknown pps_size_measure {self.pps_size_measure!r}")
        for name in ("response_rate", "person_response_rate"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in (0, 1]")
        unknown = set(self.response_coefs) - set(HH_PRESENCE) - {"htf", "size"}
        if unknown:
            raise ConfigError(f"unknown household response covariates {sorted(unknown)}")

    def fractions(self, n_strata: int) -> np.ndarray:
        f = self.psu_sampling_fraction
        return np.asarray(f if isinstance(f, (list, tuple)) else [f] * n_strata, dtype=float)


@dataclass(frozen=True)
class Population:
    """Immutable synthetic population.

    Unit tables are indexed by position: PSU ``j`` has ``stratum_of_psu[j]``,
    household ``h`` has ``psu_of_household[h]``, person ``i`` has
    ``household_of_person[i]``. Census fields are ``None`` until
    :func:`gen_census_inclusion` has been applied.
    """

    seed: int
    n_ta: int
    n_strata: int
    ta_covariates: np.ndarray
    stratum_of_psu: np.ndarray
    ta_of_psu: np.ndarray
    psu_of_household: np.ndarray
    in_frame: np.ndarray
    household_of_person: np.ndarray
    persons: pd.DataFrame
    frame_ratio: np.ndarray
    psu_pacific_prop: np.ndarray
    psu_size_cat: np.ndarray
    y: np.ndarray | None = None
    effects: dict | None = None

    @property
    def n_persons(self) -> int:
        return len(self.household_of_person)

    @property
    def n_households(self) -> int:
        return len(self.psu_of_household)

    @property
    def n_psus(self) -> int:
        return len(self.stratum_of_psu)

    def occurrence_counts(self) -> np.ndarray:
        psu = self.psu_of_household[self.household_of_person]
        counts = np.zeros((self.n_strata, self.n_ta))
        np.add.at(counts, (self.stratum_of_psu[psu], self.ta_of_psu[psu]), 1.0)
        return counts

    def htf(self) -> np.ndarray:
        return make_htf(self)

    def household_table(self) -> pd.DataFrame:
        """Presence indicators per household plus HTF."""
        g = self.persons.groupby(self.household_of_person, sort=True)
        pres = pd.DataFrame({
            "hh_m": g["eth_m"].max(),
            "hh_p": g["eth_p"].max(),
            "hh_a": g["eth_a"].max(),
            "hh_o": g["eth_o"].max(),
            "hh_female": g["sex"].max(),
            "hh_maori_descent": g["maori_descent"].max(),
            "hh_nz_born": g["nz_born"].max(),
        })
        pres = pres.reindex(np.arange(self.n_households), fill_value=0).astype(float)
        pres["htf"] = self.htf()[self.psu_of_household].astype(float)
        return pres


@dataclass
class InclusionRecord:
    psu: np.ndarray
    household: np.ndarray
    person: np.ndarray
    psu_inclusion_prob: np.ndarray


@dataclass
class SurveyDataset:
    """Linked PES records plus the auxiliary geography needed by the model.

    ``persons`` follows the survey CSV schema (see :mod:`pescov.io`).
    ``occurrence_counts`` is a strata x TA population count matrix.
    """

    persons: pd.DataFrame
    ta_covariates: np.ndarray
    occurrence_counts: np.ndarray
    inclusion: InclusionRecord | None = None

    @property
    def n_ta(self) -> int:
        return self.ta_covariates.shape[0]

    @property
    def n_strata(self) -> int:
        return self.occurrence_counts.shape[0]

    def maps(self):
        return build_occurrence_maps(self.occurrence_counts)


# ---------------------------------------------------------------------------
# population

def _assign_ta(n_psu_by_stratum: np.ndarray, n_ta: int) -> np.ndarray:
    # contiguous blocks over the stratum-major PSU list: strata straddle
    # neighbouring TAs and every TA gets at least one PSU
    total = int(n_psu_by_stratum.sum())
    if total < n_ta:
        raise ConfigError("need at least as many PSUs as TAs")
    g = np.arange(total)
    return (g * n_ta) // total


def gen_population(config: PopulationConfig) -> Population:
    config.validate()
    rng = _rng.stream(config.seed, _rng.SIMULATE)
    S, T = config.n_strata, config.n_ta
    pps = config.psus_per_stratum
    n_psu_s = np.asarray(pps if isinstance(pps, (list, tuple)) else [pps] * S, dtype=int)
    stratum_of_psu = np.repeat(np.arange(S), n_psu_s)
    ta_of_psu = _assign_ta(n_psu_s, T)
    n_psu = len(stratum_of_psu)

    ta_cov = rng.standard_normal((T, 4))

    # households per PSU: negative binomial with the configured mean, at least
    # one; dispersion 0 gives a fixed count
    mean, disp = config.households_per_psu_mean, config.households_per_psu_dispersion
    if not disp:
        n_hh = np.full(n_psu, int(round(mean)))
    else:
        n_hh = np.maximum(1, rng.negative_binomial(disp, disp / (disp + mean), size=n_psu))
    psu_of_household = np.repeat(np.arange(n_psu), n_hh)
    H = len(psu_of_household)

    if config.frame_undercoverage_beta is None:  # complete frame
        in_frame = np.ones(H, dtype=bool)
    else:
        fa, fb = config.frame_undercoverage_beta
        frame_rate = rng.beta(fa, fb, size=n_psu)
        in_frame = rng.random(H) >= frame_rate[psu_of_household]
    n_missing = np.bincount(psu_of_household, weights=(~in_frame).astype(float), minlength=n_psu)
    frame_ratio = n_missing / n_hh

    probs = np.asarray(config.household_size_probs, dtype=float)
    hh_size = rng.choice(np.arange(1, 9), size=H, p=probs / probs.sum())
    household_of_person = np.repeat(np.arange(H), hh_size)
    N = len(household_of_person)

    # ethnicity: household profile from a PSU-perturbed TA mixture; members
    # copy it with probability `ethnicity_concordance`
    eth_w = config.eth_weight_matrix()[ta_of_psu]
    if config.psu_ethnicity_concentration:
        alpha = np.maximum(eth_w * config.psu_ethnicity_concentration, 1e-3)
        eth_w = np.array([rng.dirichlet(a) for a in alpha])
    hh_w = eth_w[psu_of_household]
    hh_profile = _categorical(rng, hh_w)
    own_profile = _categorical(rng, hh_w[household_of_person])
    copy = rng.random(N) < config.ethnicity_concordance
    profile = np.where(copy, hh_profile[household_of_person], own_profile)
    flags = np.array([_PROFILE_FLAGS[p] for p in ETH_PROFILES], dtype=float)[profile]

    first = np.ones(N, dtype=bool)
    first[1:] = household_of_person[1:] != household_of_person[:-1]
    child = (~first) & (rng.random(N) < config.child_share)
    age = np.where(child, rng.uniform(0, 18, N), rng.uniform(18, 90, N))
    age = np.floor(age)
    sex = (rng.random(N) < config.female_prob).astype(float)
    nz_rate = np.where(flags[:, 2] == 1, config.asian_nz_born_rate, config.nz_born_rate)
    nz_rate = np.where(flags[:, 0] == 1, np.maximum(nz_rate, 0.97), nz_rate)
    nz_born = (rng.random(N) < nz_rate).astype(float)
    md_rate = np.where(flags[:, 0] == 1, config.maori_descent_given_maori, config.maori_descent_given_other)
    maori_descent = (rng.random(N) < md_rate).astype(float)

    persons = pd.DataFrame({
        "sex": sex,
        "age": age,
        "eth_m": flags[:, 0],
        "eth_p": flags[:, 1],
        "eth_a": flags[:, 2],
        "eth_o": flags[:, 3],
        "nz_born": nz_born,
        "maori_descent": maori_descent,
    })

    psu_of_person = psu_of_household[household_of_person]
    adult = age >= 18
    pac_adults = np.bincount(psu_of_person, weights=flags[:, 1] * adult, minlength=n_psu)
    n_adults = np.bincount(psu_of_person, weights=adult.astype(float), minlength=n_psu)
    pac_all = np.bincount(psu_of_person, weights=flags[:, 1], minlength=n_psu)
    n_all = np.bincount(psu_of_person, minlength=n_psu).astype(float)
    pacific_prop = np.where(n_adults > 0, pac_adults / np.maximum(n_adults, 1), pac_all / n_all)

    return Population(
        seed=config.seed,
        n_ta=T,
        n_strata=S,
        ta_covariates=ta_cov,
        stratum_of_psu=stratum_of_psu,
        ta_of_psu=ta_of_psu,
        psu_of_household=psu_of_household,
        in_frame=in_frame,
        household_of_person=household_of_person,
        persons=persons,
        frame_ratio=frame_ratio,
        psu_pacific_prop=pacific_prop,
        psu_size_cat=psu_size_category(n_hh),
    )


def _categorical(rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), weights.shape[1] - 1)


def make_htf(pop: Population, threshold: float = 0.2) -> np.ndarray:
    """Hard-to-find flag per PSU: dwelling undercoverage ratio strictly above 0.2."""
    return htf_from_ratio(pop.frame_ratio, threshold)


def htf_from_ratio(ratio, threshold: float = 0.2) -> np.ndarray:
    return (np.asarray(ratio, dtype=float) > threshold).astype(float)


# ---------------------------------------------------------------------------
# census

def _population_design(pop: Population, variant: str):
    x_ind = encode_persons(pop.persons, build_spline_basis())
    hh = pop.household_table()
    x_hh = encode_households(hh, variant)
    x_psu = encode_psus(pop.psu_pacific_prop, pop.psu_size_cat)
    return x_ind, x_hh, x_psu


def gen_census_inclusion(pop: Population, truth: TruthParams, seed: int | None = None) -> Population:
    """Draw unit effects from ``truth`` and census misses ``y`` (1 = missed)."""
    x_ind, x_hh, x_psu = _population_design(pop, truth.variant)
    for name, X, b in (
        ("beta", x_ind, truth.beta),
        ("beta_hh", x_hh, truth.beta_hh),
        ("beta_psu", x_psu, truth.beta_psu),
        ("beta_ta", pop.ta_covariates, truth.beta_ta),
    ):
        if X.shape[1] != b.shape[0]:
            raise ValueError(f"truth {name} has length {b.shape[0]}, covariates need {X.shape[1]}")
    rng = _rng.stream(pop.seed if seed is None else seed, _rng.CENSUS)
    maps = build_occurrence_maps(pop.occurrence_counts())
    alpha_ta = pop.ta_covariates @ truth.beta_ta + truth.sigma_ta * rng.standard_t(3, pop.n_ta)
    alpha_strat = maps.W @ alpha_ta + truth.sigma_strat * rng.standard_normal(pop.n_strata)
    alpha_psu = (alpha_strat[pop.stratum_of_psu] + x_psu @ truth.beta_psu
                 + truth.sigma_psu * rng.standard_normal(pop.n_psus))
    alpha_hh = (truth.mu + alpha_psu[pop.psu_of_household] + x_hh @ truth.beta_hh
                + truth.sigma_hh * rng.standard_normal(pop.n_households))
    eta = alpha_hh[pop.household_of_person] + x_ind @ truth.beta
    p = expit(eta)
    y = (rng.random(pop.n_persons) < p).astype(np.int8)
    effects = {
        "alpha_ta": alpha_ta,
        "alpha_strat": alpha_strat,
        "alpha_psu": alpha_psu,
        "alpha_hh": alpha_hh,
        "p_under": p,
    }
    return _replace(pop, y=y, effects=effects)


def _replace(pop: Population, **changes) -> Population:
    d = {f: getattr(pop, f) for f in pop.__dataclass_fields__}
    d.update(changes)
    return Population(**d)


# ---------------------------------------------------------------------------
# PES sample

def size_measure(pop: Population, incl: InclusionConfig) -> np.ndarray:
    n_frame = np.bincount(pop.psu_of_household, weights=pop.in_frame.astype(float), minlength=pop.n_psus)
    if incl.pps_size_measure == "equal":
        return (n_frame > 0).astype(float)
    if incl.pps_size_measure == "households":
        return n_frame
    return n_frame * (1.0 + incl.pps_pacific_adjustment * pop.psu_pacific_prop)


def pps_inclusion_probs(size: np.ndarray, n: int) -> np.ndarray:
    """First-order inclusion probabilities for PPS without replacement.

    Units whose probability would exceed one are taken with certainty and the
    remainder re-allocated.
    """
    size = np.asarray(size, dtype=float)
    pi = np.zeros_like(size)
    take = np.zeros(size.shape, dtype=bool)
    n_left = n
    while True:
        rest = (~take) & (size > 0)
        if n_left <= 0 or not rest.any():
            break
        pi_rest = n_left * size[rest] / size[rest].sum()
        if np.all(pi_rest <= 1.0):
            pi[rest] = pi_rest
            break
        idx = np.flatnonzero(rest)[pi_rest > 1.0]
        take[idx] = True
        n_left -= len(idx)
    pi[take] = 1.0
    return pi


def pps_systematic(size: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices selected by systematic PPS on a randomly rotated list."""
    pi = pps_inclusion_probs(size, n)
    m = len(pi)
    shift = rng.integers(m)
    order = np.roll(np.arange(m), -shift)
    cum = np.concatenate([[0.0], np.cumsum(pi[order])])
    total = cum[-1]
    k = int(round(total))
    start = rng.random()
    points = start + np.arange(k)
    # unit j is hit when a point falls in [cum[j], cum[j+1])
    hit = np.searchsorted(cum, points, side="right") - 1
    hit = hit[(hit >= 0) & (hit < m)]
    return np.sort(order[np.unique(hit)])


def _select_panel(hh_ids: np.ndarray, panel_size: int, rng: np.random.Generator) -> np.ndarray:
    if len(hh_ids) <= panel_size:
        return hh_ids
    start = rng.integers(len(hh_ids))
    return hh_ids[(start + np.arange(panel_size)) % len(hh_ids)]


def sample_pes(pop: Population, incl: InclusionConfig) -> SurveyDataset:
    if pop.y is None:
        raise ValueError("population has no census indicators; run gen_census_inclusion first")
    incl.validate(pop.n_strata)
    rng = _rng.stream(pop.seed if incl.seed is None else incl.seed, _rng.SAMPLE)
    size = size_measure(pop, incl)
    frac = incl.fractions(pop.n_strata)

    I_psu = np.zeros(pop.n_psus, dtype=bool)
    pi_psu = np.zeros(pop.n_psus)
    for s in range(pop.n_strata):
        idx = np.flatnonzero(pop.stratum_of_psu == s)
        eligible = idx[size[idx] > 0]
        if len(eligible) == 0:
            raise DesignError(f"stratum {s} has no PSU with households on the sampling frame")
        n = max(1, int(round(frac[s] * len(eligible))))
        pi_psu[eligible] = pps_inclusion_probs(size[eligible], n)
        chosen = eligible[pps_systematic(size[eligible], n, rng)]
        I_psu[chosen] = True

    hh_order = np.argsort(pop.psu_of_household, kind="stable")
    bounds = np.searchsorted(pop.psu_of_household[hh_order], np.arange(pop.n_psus + 1))
    selected = np.zeros(pop.n_households, dtype=bool)
    for j in np.flatnonzero(I_psu):
        hh = hh_order[bounds[j]:bounds[j + 1]]
        hh = hh[pop.in_frame[hh]]
        selected[_select_panel(hh, incl.panel_size, rng)] = True

    hh_table = pop.household_table()
    hh_size = np.bincount(pop.household_of_person, minlength=pop.n_households).astype(float)
    logit = np.full(pop.n_households, _logit(incl.response_rate))
    for name, coef in incl.response_coefs.items():
        covariate = hh_size if name == "size" else hh_table[name].to_numpy()
        logit = logit + coef * covariate
    if incl.informative and incl.informative_strength:
        any_missed = np.bincount(pop.household_of_person, weights=pop.y.astype(float),
                                 minlength=pop.n_households) > 0
        logit = logit - incl.informative_strength * any_missed
    u_resp = rng.random(pop.n_households)
    respond = u_resp < expit(logit)
    I_hh = selected & respond

    u_person = rng.random(pop.n_persons)
    I_ind = I_hh[pop.household_of_person] & (u_person < incl.person_response_rate)

    persons = _survey_frame(pop, I_ind)
    return SurveyDataset(
        persons=persons,
        ta_covariates=pop.ta_covariates.copy(),
        occurrence_counts=pop.occurrence_counts(),
        inclusion=InclusionRecord(psu=I_psu, household=I_hh, person=I_ind, psu_inclusion_prob=pi_psu),
    )


def _logit(p: float) -> float:
    if p >= 1.0:
        return np.inf
    return float(np.log(p) - np.log1p(-p))


def _survey_frame(pop: Population, mask: np.ndarray) -> pd.DataFrame:
    """Person records in the survey CSV schema for the persons in ``mask``."""
    idx = np.flatnonzero(mask)
    hh = pop.household_of_person[idx]
    psu = pop.psu_of_household[hh]
    df = pd.DataFrame({
        "person_id": idx,
        "household_id": hh,
        "psu_id": psu,
        "stratum_id": pop.stratum_of_psu[psu],
        "ta_id": pop.ta_of_psu[psu],
        "y": pop.y[idx].astype(int),
    })
    for c in pop.persons.columns:
        df[c] = pop.persons[c].to_numpy()[idx]
    # presence indicators use responding members only, as observed in the survey
    sub = df.groupby("household_id", sort=False)
    for k, src in (("hh_m", "eth_m"), ("hh_p", "eth_p"), ("hh_a", "eth_a"), ("hh_o", "eth_o"),
                   ("hh_female", "sex"), ("hh_maori_descent", "maori_descent"),
                   ("hh_nz_born", "nz_born")):
        df[k] = sub[src].transform("max").to_numpy()
    df["psu_pacific_prop"] = pop.psu_pacific_prop[psu]
    df["psu_size_cat"] = pop.psu_size_cat[psu]
    df["htf"] = make_htf(pop)[psu]
    return df.reset_index(drop=True)


def census_file(pop: Population) -> pd.DataFrame:
    """Census-style records: every person the census counted (y == 0)."""
    if pop.y is None:
        raise ValueError("population has no census indicators")
    df = _survey_frame(pop, pop.y == 0)
    # household aggregates on the census file use all enumerated members
    return df.drop(columns=["y"])


def exhaustive_inclusion(**overrides) -> InclusionConfig:
    """Design that takes every PSU, every in-frame dwelling and every person."""
    cfg = InclusionConfig(psu_sampling_fraction=1.0, panel_size=10**9, response_rate=1.0)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


# planted main effects; everything else gets small seeded noise
_PLANTED_IND = {"female": -0.2, "age2": 0.7, "age3": 0.9, "age4": 0.4, "maori": 0.6, "pacific": 0.5,
                "asian": 0.2, "nz_born": -0.3}
_PLANTED_HH = {"htf": 0.5, "hh_m": 0.3, "hh_p": 0.4, "hh_female": -0.3, "hh_nz_born": -0.2}


def default_truth(variant: str = "model1", seed: int = 0, noise: float = 0.15, mu: float = -2.4,
                  sigmas=(0.6, 0.3, 0.2, 0.15)) -> TruthParams:
    """Ground truth with an elevated young-adult band and planted household effects."""
    rng = _rng.stream(seed, _rng.SIMULATE, 99)
    ind = x_ind_names()
    hh = x_hh_names(variant)
    beta = np.array([_PLANTED_IND.get(n, 0.0) for n in ind]) + noise * rng.standard_normal(len(ind))
    beta_hh = np.array([_PLANTED_HH.get(n, 0.0) for n in hh]) + noise * rng.standard_normal(len(hh))
    s_hh, s_psu, s_st, s_ta = sigmas
    return TruthParams(mu=mu, beta=beta, beta_hh=beta_hh, beta_psu=np.array([0.5, 0.1, -0.1]),
                       beta_ta=np.array([0.1, -0.1, 0.05, 0.0]), sigma_hh=s_hh, sigma_psu=s_psu,
                       sigma_strat=s_st, sigma_ta=s_ta, variant=variant)
