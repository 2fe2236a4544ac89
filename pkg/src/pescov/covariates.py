"""Design-vector encoding for persons, households, PSUs and TAs.

The column layouts defined here are part of the file-format contract: fitted
draws store coefficients in exactly this order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

AGE_KNOTS = (10.0, 20.0, 30.0, 40.0, 51.0, 61.0, 71.0, 81.0)
AGE_BOUNDARY = (0.0, 115.0)

ETHNICITIES = ("eth_m", "eth_p", "eth_a", "eth_o")
PERSON_FIELDS = ("sex", "age", "eth_m", "eth_p", "eth_a", "eth_o", "nz_born", "maori_descent")

# presence indicators aggregated over household members, in x_hh order
HH_PRESENCE = ("hh_m", "hh_p", "hh_a", "hh_o", "hh_female", "hh_maori_descent", "hh_nz_born")
_PRESENCE_SOURCE = {
    "hh_m": "eth_m",
    "hh_p": "eth_p",
    "hh_a": "eth_a",
    "hh_o": "eth_o",
    "hh_female": "sex",
    "hh_maori_descent": "maori_descent",
    "hh_nz_born": "nz_born",
}
PSU_SIZE_CATEGORIES = ("S", "M", "L")


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class SplineBasis:
    """Clamped quadratic B-spline basis on the age range.

    The full basis has ``len(internal_knots) + degree + 1`` functions; the
    first is dropped so the retained block is not collinear with an intercept.
    """

    degree: int = 2
    internal_knots: tuple[float, ...] = AGE_KNOTS
    boundary: tuple[float, float] = AGE_BOUNDARY
    n_dropped: int = 1

    def __post_init__(self):
        k = np.asarray(self.internal_knots, dtype=float)
        lo, hi = self.boundary
        if np.any(np.diff(k) <= 0) or k[0] <= lo or k[-1] >= hi:
            raise ValueError("knots must be strictly increasing and inside the boundary")

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        p = self.degree
        return np.concatenate([[lo] * (p + 1), self.internal_knots, [hi] * (p + 1)]).astype(float)

    @property
    def n_full(self) -> int:
        return len(self.internal_knots) + self.degree + 1

    @property
    def n_basis(self) -> int:
        return self.n_full - self.n_dropped

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "internal_knots": list(self.internal_knots),
            "boundary": list(self.boundary),
            "n_dropped": self.n_dropped,
            "n_basis": self.n_basis,
        }


def build_spline_basis() -> SplineBasis:
    return SplineBasis()


def eval_full_basis(basis: SplineBasis, age) -> np.ndarray:
    """Evaluate every basis function (including dropped ones) at ``age``.

    Uses the triangular Cox-de Boor scheme on the active knot span. Ages are
    clamped to the boundary with a warning.

    Returns
    -------
    ndarray of shape ``(n_ages, n_full)``
    """
    a = np.atleast_1d(np.asarray(age, dtype=float))
    lo, hi = basis.boundary
    if np.any((a < lo) | (a > hi)) or np.any(~np.isfinite(a)):
        if np.any(np.isnan(a)):
            raise EncodingError("age is NaN")
        warnings.warn(f"ages outside [{lo}, {hi}] clamped to the boundary", stacklevel=2)
        a = np.clip(a, lo, hi)
    t = basis.knot_vector
    p = basis.degree
    n = basis.n_full
    # span index i with t[i] <= a < t[i+1]; the right boundary belongs to the last span
    span = np.searchsorted(t, a, side="right") - 1
    span = np.clip(span, p, n - 1)

    m = a.shape[0]
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    rows = np.arange(m)
    for j in range(1, p + 1):
        left[:, j] = a - t[span + 1 - j]
        right[:, j] = t[span + j] - a
        saved = np.zeros(m)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved

    out = np.zeros((m, n))
    for r in range(p + 1):
        out[rows, span - p + r] = N[:, r]
    return out


def eval_splines(basis: SplineBasis, age) -> np.ndarray:
    """Retained spline values, shape ``(n_ages, n_basis)`` (or ``(n_basis,)`` for a scalar)."""
    full = eval_full_basis(basis, age)
    out = full[:, basis.n_dropped:]
    return out[0] if np.ndim(age) == 0 else out


# ---------------------------------------------------------------------------
# individual design vector

def x_ind_names(basis: SplineBasis | None = None) -> list[str]:
    basis = basis or build_spline_basis()
    nb = basis.n_basis
    ages = [f"age{j + 1}" for j in range(nb)]
    names = ["female"] + ages
    names += ["maori", "pacific", "asian", "other", "nz_born", "maori_descent"]
    names += ["maori_x_other", "maori_x_pacific"]
    names += [f"female_x_{a}" for a in ages]
    names += ["asian_x_nz_born"]
    for e in ("maori", "pacific", "asian", "other", "maori_x_other"):
        names += [f"{e}_x_{a}" for a in ages[:5]]
    return names


def _column(table: Mapping, name: str) -> np.ndarray:
    try:
        col = table[name]
    except KeyError:
        raise EncodingError(f"missing covariate: {name}") from None
    arr = np.asarray(col, dtype=float)
    if np.any(np.isnan(arr)):
        raise EncodingError(f"missing covariate: {name}")
    return arr


def encode_persons(table: Mapping, basis: SplineBasis | None = None) -> np.ndarray:
    """Encode person records (a mapping of equal-length columns) into x_ind rows."""
    basis = basis or build_spline_basis()
    cols = {f: np.atleast_1d(_column(table, f)) for f in PERSON_FIELDS}
    n = cols["sex"].shape[0]
    S = eval_full_basis(basis, cols["age"])[:, basis.n_dropped:]
    f = cols["sex"][:, None]
    m, p, a, o = (cols[e] for e in ETHNICITIES)
    mo = m * o
    mp = m * p
    blocks = [
        f,
        S,
        np.column_stack([m, p, a, o, cols["nz_born"], cols["maori_descent"], mo, mp]),
        f * S,
        (a * cols["nz_born"])[:, None],
    ]
    S5 = S[:, :5]
    for e in (m, p, a, o, mo):
        blocks.append(e[:, None] * S5)
    X = np.hstack(blocks)
    assert X.shape == (n, len(x_ind_names(basis)))
    return X


def encode_person(person: Mapping, basis: SplineBasis | None = None) -> np.ndarray:
    return encode_persons({k: [v] for k, v in person.items()}, basis)[0]


# ---------------------------------------------------------------------------
# household design vector

def x_hh_names(variant: str) -> list[str]:
    if variant == "model1":
        return ["htf"]
    if variant != "model2":
        raise ValueError(f"unknown household variant {variant!r}")
    eth = ["hh_m", "hh_p", "hh_a", "hh_o"]
    pairs = [f"{eth[i]}_x_{eth[j]}" for i in range(4) for j in range(i + 1, 4)]
    return list(HH_PRESENCE) + ["htf"] + pairs + ["hh_eth_x_female", "hh_eth_x_nz_born"]


def household_presence(members: Mapping) -> dict[str, float]:
    """Presence indicators (elementwise OR) over the members of one household."""
    cols = {f: np.atleast_1d(_column(members, f)) for f in _PRESENCE_SOURCE.values()}
    if cols["sex"].size == 0:
        raise EncodingError("empty household")
    return {k: float(np.any(cols[src] > 0)) for k, src in _PRESENCE_SOURCE.items()}


def encode_households(table: Mapping, variant: str) -> np.ndarray:
    """Encode household rows from presence columns (``hh_*``) and ``htf``."""
    htf = np.atleast_1d(_column(table, "htf"))
    if variant == "model1":
        return htf[:, None].copy()
    pres = np.column_stack([np.atleast_1d(_column(table, k)) for k in HH_PRESENCE])
    eth = pres[:, :4]
    pairs = [eth[:, i] * eth[:, j] for i in range(4) for j in range(i + 1, 4)]
    # "ethnicity" in the single-parameter interactions means any non-Other ethnicity present
    any_eth = np.max(eth[:, :3], axis=1)
    X = np.column_stack([pres, htf, *pairs, any_eth * pres[:, 4], any_eth * pres[:, 6]])
    return X


def aggregate_household(members: Mapping, htf: float, variant: str = "model2") -> np.ndarray:
    row = household_presence(members)
    row["htf"] = htf
    return encode_households({k: [v] for k, v in row.items()}, variant)[0]


# ---------------------------------------------------------------------------
# PSU and TA design vectors

X_PSU_NAMES = ["psu_pacific_prop", "psu_size_m", "psu_size_l"]
X_TA_NAMES = ["ta_communication", "ta_income", "ta_qualification", "ta_internet_response"]


def encode_psus(pacific_prop, size_cat: Sequence[str]) -> np.ndarray:
    pp = np.atleast_1d(np.asarray(pacific_prop, dtype=float))
    cats = np.atleast_1d(np.asarray(size_cat, dtype=str))
    bad = set(cats) - set(PSU_SIZE_CATEGORIES)
    if bad:
        raise EncodingError(f"unknown PSU size category: {sorted(bad)}")
    return np.column_stack([pp, (cats == "M").astype(float), (cats == "L").astype(float)])


def psu_size_category(n_dwellings) -> np.ndarray:
    n = np.asarray(n_dwellings)
    return np.where(n < 50, "S", np.where(n <= 100, "M", "L"))


# ---------------------------------------------------------------------------
# occurrence maps

@dataclass(frozen=True)
class OccurrenceMaps:
    """Stratum x TA population shares.

    ``W[s, t]`` is the share of stratum ``s`` lying in TA ``t`` (rows sum to 1);
    ``p_strat_given_ta[s, t]`` is Pr(stratum = s | TA = t) (columns sum to 1).
    """

    W: np.ndarray
    p_strat_given_ta: np.ndarray
    counts: np.ndarray = field(repr=False)

    @property
    def n_strata(self) -> int:
        return self.W.shape[0]

    @property
    def n_ta(self) -> int:
        return self.W.shape[1]


def build_occurrence_maps(counts) -> OccurrenceMaps:
    c = np.asarray(counts, dtype=float)
    if c.ndim != 2:
        raise ValueError("counts must be a strata x TA matrix")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("counts must be finite and non-negative")
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    if np.any(rows == 0):
        raise ValueError(f"empty stratum: {np.flatnonzero(rows == 0).tolist()}")
    if np.any(cols == 0):
        raise ValueError(f"empty TA: {np.flatnonzero(cols == 0).tolist()}")
    return OccurrenceMaps(W=c / rows[:, None], p_strat_given_ta=c / cols[None, :], counts=c)
