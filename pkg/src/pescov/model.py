"""Hierarchical logistic under-coverage model.

Unit effects are non-centered::

    alpha_ta    = X_ta beta_ta + sigma_ta z_ta            z_ta ~ t3
    alpha_strat = W alpha_ta + sigma_strat z_strat
    alpha_psu   = alpha_strat[s] + X_psu beta_psu + sigma_psu z_psu
    alpha_hh    = mu + alpha_psu[p] + X_hh beta_hh + sigma_hh z_hh
    eta         = alpha_hh[h] + x_ind beta

The sampler works on the flat unconstrained vector laid out by :class:`Layout`.
Two covariate placements are supported. ``natural`` attaches covariates at the
level where they are measured; ``individual`` moves the household and PSU
covariates into each person's linear predictor and keeps zero-mean deviations
``lambda_h`` and ``delta_p`` as the unit effects. Both define the same
distribution for ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import gammaln

from . import backend
from .covariates import (
    X_PSU_NAMES,
    X_TA_NAMES,
    build_occurrence_maps,
    build_spline_basis,
    encode_households,
    encode_persons,
    encode_psus,
    x_hh_names,
    x_ind_names,
)

PLACEMENTS = ("individual", "natural")
VARIANTS = ("model1", "model2")
SIGMA_NAMES = ("sigma_hh", "sigma_psu", "sigma_strat", "sigma_ta")

_LOG_2PI = math.log(2 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Model variant, covariate placement and prior constants."""

    placement: str = "individual"
    variant: str = "model1"
    psu_covariates: bool = True
    mu_scale: float = 2.5
    beta_scale: float = 1.0
    sigma_scale: float = 2.5
    ta_df: float = 3.0

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ModelError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.variant not in VARIANTS:
            raise ModelError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for k in ("mu_scale", "beta_scale", "sigma_scale", "ta_df"):
            if not getattr(self, k) > 0:
                raise ModelError(f"{k} must be positive")


# ---------------------------------------------------------------------------
# data

@dataclass
class ModelData:
    """Arrays the likelihood needs, with compact 0-based unit indices."""

    y: np.ndarray
    x_ind: np.ndarray
    x_hh: np.ndarray
    x_psu: np.ndarray
    x_ta: np.ndarray
    W: np.ndarray
    p_strat_given_ta: np.ndarray
    hh_of_person: np.ndarray
    psu_of_hh: np.ndarray
    stratum_of_psu: np.ndarray
    ta_of_psu: np.ndarray
    household_ids: np.ndarray
    psu_ids: np.ndarray
    variant: str = "model1"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        for k in ("hh_of_person", "psu_of_hh", "stratum_of_psu", "ta_of_psu"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.intc))
        n, H, P = len(self.y), self.x_hh.shape[0], self.x_psu.shape[0]
        S, T = self.W.shape
        checks = [
            (self.x_ind.shape[0] == n, "x_ind rows"),
            (len(self.hh_of_person) == n, "hh_of_person length"),
            (len(self.psu_of_hh) == H, "psu_of_hh length"),
            (len(self.stratum_of_psu) == P and len(self.ta_of_psu) == P, "PSU index lengths"),
            (self.x_ta.shape[0] == T, "x_ta rows"),
            (n == 0 or (self.hh_of_person.min() >= 0 and self.hh_of_person.max() < H), "household index range"),
            (H == 0 or (self.psu_of_hh.min() >= 0 and self.psu_of_hh.max() < P), "PSU index range"),
            (P == 0 or (self.stratum_of_psu.max() < S and self.ta_of_psu.max() < T), "stratum/TA index range"),
            (np.all((self.y == 0) | (self.y == 1)), "y must be 0/1"),
        ]
        for ok, what in checks:
            if not ok:
                raise ModelError(f"inconsistent model data: {what}")

    @property
    def n_persons(self) -> int:
        return len(self.y)

    @property
    def n_households(self) -> int:
        return self.x_hh.shape[0]

    @property
    def n_psus(self) -> int:
        return self.x_psu.shape[0]

    @property
    def n_strata(self) -> int:
        return self.W.shape[0]

    @property
    def n_ta(self) -> int:
        return self.W.shape[1]

    @property
    def psu_of_person(self) -> np.ndarray:
        return self.psu_of_hh[self.hh_of_person]

    @property
    def stratum_of_person(self) -> np.ndarray:
        return self.stratum_of_psu[self.psu_of_person]

    @property
    def ta_of_person(self) -> np.ndarray:
        return self.ta_of_psu[self.psu_of_person]

    def without_person_covariates(self) -> "ModelData":
        """Copy with an empty person-level design, leaving mu identified by the unit effects alone."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["x_ind"] = np.zeros((self.x_ind.shape[0], 0))
        return ModelData(**d)

    def with_y(self, y) -> "ModelData":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["y"] = np.asarray(y, dtype=float)
        return ModelData(**d)


def build_model_data(persons: pd.DataFrame, ta_covariates, occurrence_counts,
                     variant: str = "model1", basis=None) -> ModelData:
    """Encode survey person records (CSV schema) into :class:`ModelData`."""
    if variant not in VARIANTS:
        raise ModelError(f"unknown variant {variant!r}")
    basis = basis or build_spline_basis()
    df = persons
    hh_ids, hh_of_person = np.unique(df["household_id"].to_numpy(), return_inverse=True)
    first = np.zeros(len(hh_ids), dtype=np.int64)
    first[hh_of_person[::-1]] = np.arange(len(df))[::-1]
    hh_rows = df.iloc[first]
    psu_ids, psu_of_hh = np.unique(hh_rows["psu_id"].to_numpy(), return_inverse=True)
    pfirst = np.zeros(len(psu_ids), dtype=np.int64)
    pfirst[psu_of_hh[::-1]] = np.arange(len(hh_rows))[::-1]
    psu_rows = hh_rows.iloc[pfirst]
    maps = build_occurrence_maps(occurrence_counts)
    return ModelData(
        y=df["y"].to_numpy(dtype=float),
        x_ind=encode_persons(df, basis),
        x_hh=encode_households(hh_rows, variant),
        x_psu=encode_psus(psu_rows["psu_pacific_prop"].to_numpy(), psu_rows["psu_size_cat"].to_numpy()),
        x_ta=np.asarray(ta_covariates, dtype=float),
        W=maps.W,
        p_strat_given_ta=maps.p_strat_given_ta,
        hh_of_person=hh_of_person,
        psu_of_hh=psu_of_hh,
        stratum_of_psu=psu_rows["stratum_id"].to_numpy(),
        ta_of_psu=psu_rows["ta_id"].to_numpy(),
        household_ids=hh_ids,
        psu_ids=psu_ids,
        variant=variant,
    )


def dataset_model_data(ds, variant: str = "model1") -> ModelData:
    """:func:`build_model_data` for a :class:`pescov.survey_sim.SurveyDataset`."""
    return build_model_data(ds.persons, ds.ta_covariates, ds.occurrence_counts, variant)


# ---------------------------------------------------------------------------
# parameter layout

class Layout:
    """Slices of the flat unconstrained vector."""

    ORDER = ("mu", "beta", "beta_hh", "beta_psu", "beta_ta", "log_sigma",
             "z_ta", "z_strat", "z_psu", "z_hh")

    def __init__(self, data: ModelData, spec: ModelSpec):
        sizes = {
            "mu": 1,
            "beta": data.x_ind.shape[1],
            "beta_hh": data.x_hh.shape[1],
            "beta_psu": data.x_psu.shape[1] if spec.psu_covariates else 0,
            "beta_ta": data.x_ta.shape[1],
            "log_sigma": 4,
            "z_ta": data.n_ta,
            "z_strat": data.n_strata,
            "z_psu": data.n_psus,
            "z_hh": data.n_households,
        }
        self.sizes = sizes
        self.slices = {}
        start = 0
        for k in self.ORDER:
            self.slices[k] = slice(start, start + sizes[k])
            start += sizes[k]
        self.dim = start
        # mu, beta, beta_hh, beta_psu are contiguous: the person-level coefficient block
        self.theta = slice(0, self.slices["beta_psu"].stop)

    def __getitem__(self, key: str) -> slice:
        return self.slices[key]

    def names(self, data: ModelData) -> list[str]:
        hh_names = x_hh_names(data.variant)
        out = ["mu"]
        out += [f"beta[{n}]" for n in x_ind_names()][: self.sizes["beta"]]
        out += [f"beta_hh[{n}]" for n in hh_names]
        out += [f"beta_psu[{n}]" for n in X_PSU_NAMES][: self.sizes["beta_psu"]]
        out += [f"beta_ta[{n}]" for n in X_TA_NAMES][: self.sizes["beta_ta"]]
        out += [f"log_{s}" for s in SIGMA_NAMES]
        out += [f"z_ta[{i}]" for i in range(self.sizes["z_ta"])]
        out += [f"z_strat[{i}]" for i in range(self.sizes["z_strat"])]
        out += [f"z_psu[{i}]" for i in range(self.sizes["z_psu"])]
        out += [f"z_hh[{i}]" for i in range(self.sizes["z_hh"])]
        if len(out) != self.dim:
            raise ModelError("parameter names do not match the layout")
        return out


# ---------------------------------------------------------------------------
# constrained parameters

@dataclass
class ParamDraw:
    """Constrained parameters at the natural levels.

    Every field may carry a leading draw axis; scalars then become vectors.
    """

    mu: np.ndarray
    beta: np.ndarray
    beta_hh: np.ndarray
    beta_psu: np.ndarray
    beta_ta: np.ndarray
    alpha_ta: np.ndarray
    alpha_strat: np.ndarray
    alpha_psu: np.ndarray
    alpha_hh: np.ndarray
    sigma_hh: np.ndarray
    sigma_psu: np.ndarray
    sigma_strat: np.ndarray
    sigma_ta: np.ndarray

    @property
    def n_draws(self) -> int | None:
        mu = np.asarray(self.mu)
        return None if mu.ndim == 0 else mu.shape[0]

    def take(self, i) -> "ParamDraw":
        """Select draw(s) ``i`` from a batched draw."""
        return ParamDraw(**{f.name: np.asarray(getattr(self, f.name))[i] for f in fields(self)})

    def sigmas(self) -> np.ndarray:
        return np.stack([np.asarray(getattr(self, s), dtype=float) for s in SIGMA_NAMES], axis=-1)


def _mv(X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """X @ b for b with an optional leading draw axis."""
    return b @ X.T


def _x_psu(spec: ModelSpec, data: ModelData) -> np.ndarray:
    return data.x_psu if spec.psu_covariates else data.x_psu[:, :0]


def constrain(u, data: ModelData, spec: ModelSpec, layout: Layout | None = None) -> ParamDraw:
    """Map unconstrained vector(s) ``u`` (shape ``(dim,)`` or ``(S, dim)``) to :class:`ParamDraw`."""
    L = layout or Layout(data, spec)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != L.dim:
        raise ModelError(f"expected {L.dim} unconstrained coordinates, got {u.shape[-1]}")
    sig = np.exp(u[..., L["log_sigma"]])
    s_hh, s_psu, s_st, s_ta = (sig[..., i] for i in range(4))
    mu = u[..., 0]
    beta_psu = u[..., L["beta_psu"]]
    a_ta = _mv(data.x_ta, u[..., L["beta_ta"]]) + s_ta[..., None] * u[..., L["z_ta"]]
    a_st = _mv(data.W, a_ta) + s_st[..., None] * u[..., L["z_strat"]]
    a_psu = (a_st[..., data.stratum_of_psu] + _mv(_x_psu(spec, data), beta_psu)
             + s_psu[..., None] * u[..., L["z_psu"]])
    a_hh = (mu[..., None] + a_psu[..., data.psu_of_hh] + _mv(data.x_hh, u[..., L["beta_hh"]])
            + s_hh[..., None] * u[..., L["z_hh"]])
    return ParamDraw(
        mu=mu, beta=u[..., L["beta"]], beta_hh=u[..., L["beta_hh"]], beta_psu=beta_psu,
        beta_ta=u[..., L["beta_ta"]], alpha_ta=a_ta, alpha_strat=a_st, alpha_psu=a_psu,
        alpha_hh=a_hh, sigma_hh=s_hh, sigma_psu=s_psu, sigma_strat=s_st, sigma_ta=s_ta,
    )


def unconstrain(p: ParamDraw, data: ModelData, spec: ModelSpec, layout: Layout | None = None) -> np.ndarray:
    """Inverse of :func:`constrain`."""
    L = layout or Layout(data, spec)
    sig = p.sigmas()
    if np.any(~(sig > 0)):
        raise ModelError("all scales must be positive")
    s_hh, s_psu, s_st, s_ta = (sig[..., i] for i in range(4))
    mu = np.asarray(p.mu, dtype=float)
    beta_psu = np.asarray(p.beta_psu, dtype=float)
    z_ta = (p.alpha_ta - _mv(data.x_ta, p.beta_ta)) / s_ta[..., None]
    z_st = (p.alpha_strat - _mv(data.W, p.alpha_ta)) / s_st[..., None]
    z_psu = (p.alpha_psu - p.alpha_strat[..., data.stratum_of_psu]
             - _mv(_x_psu(spec, data), beta_psu)) / s_psu[..., None]
    z_hh = (p.alpha_hh - mu[..., None] - p.alpha_psu[..., data.psu_of_hh]
            - _mv(data.x_hh, p.beta_hh)) / s_hh[..., None]
    u = np.empty(mu.shape + (L.dim,))
    u[..., 0] = mu
    u[..., L["beta"]] = p.beta
    u[..., L["beta_hh"]] = p.beta_hh
    u[..., L["beta_psu"]] = beta_psu
    u[..., L["beta_ta"]] = p.beta_ta
    u[..., L["log_sigma"]] = np.log(sig)
    u[..., L["z_ta"]] = z_ta
    u[..., L["z_strat"]] = z_st
    u[..., L["z_psu"]] = z_psu
    u[..., L["z_hh"]] = z_hh
    return u


def individual_effects(p: ParamDraw, data: ModelData, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Household and PSU deviations ``(lambda_h, delta_p)`` of the individual-level placement.

    ``lambda_h = delta_p + sigma_hh z_hh`` and ``delta_p = alpha_strat + sigma_psu z_psu``,
    so ``alpha_hh = mu + x_hh beta_hh + x_psu beta_psu + lambda_h``.
    """
    delta = p.alpha_psu - _mv(_x_psu(spec, data), p.beta_psu)
    lam = (p.alpha_hh - np.asarray(p.mu)[..., None] - _mv(data.x_hh, p.beta_hh)
           - _mv(_x_psu(spec, data), p.beta_psu)[..., data.psu_of_hh])
    return lam, delta


def linear_predictor(p: ParamDraw, data: ModelData) -> np.ndarray:
    """Person-level log-odds at the draw's own household effects."""
    return p.alpha_hh[..., data.hh_of_person] + _mv(data.x_ind, p.beta)


def loglik_pointwise(p: ParamDraw, data: ModelData) -> np.ndarray:
    """Per-person Bernoulli log-likelihood; shape ``(n,)`` or ``(S, n)`` for batched draws."""
    eta = linear_predictor(p, data)
    return data.y * eta - np.logaddexp(0.0, eta)


# ---------------------------------------------------------------------------
# densities

def log_cauchy(x, scale):
    return -math.log(math.pi * scale) - np.log1p((x / scale) ** 2)


def log_half_cauchy(x, scale):
    return math.log(2.0 / (math.pi * scale)) - np.log1p((x / scale) ** 2)


def log_normal(x, scale=1.0):
    return -0.5 * _LOG_2PI - math.log(scale) - 0.5 * (x / scale) ** 2


def log_student_t(x, df, scale=1.0):
    c = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi) - math.log(scale)
    return c - (df + 1) / 2 * np.log1p((x / scale) ** 2 / df)


def log_density_centered(p: ParamDraw, data: ModelData, spec: ModelSpec, placement: str | None = None) -> float:
    """Joint log density of ``y`` and all parameters in centered coordinates.

    For ``natural`` the unit effects are the alphas; for ``individual`` the household
    and PSU effects are replaced by ``lambda_h`` and ``delta_p``. The two coordinate
    systems differ by a translation, so the densities agree exactly.
    """
    placement = placement or spec.placement
    s_hh, s_psu, s_st, s_ta = (float(v) for v in p.sigmas())
    x_psu = _x_psu(spec, data)
    lp = log_cauchy(float(p.mu), spec.mu_scale)
    for b in (p.beta, p.beta_hh, p.beta_psu, p.beta_ta):
        lp += np.sum(log_normal(np.asarray(b), spec.beta_scale))
    lp += np.sum(log_half_cauchy(p.sigmas(), spec.sigma_scale))
    lp += np.sum(log_student_t(p.alpha_ta - data.x_ta @ p.beta_ta, spec.ta_df, s_ta))
    lp += np.sum(log_normal(p.alpha_strat - data.W @ p.alpha_ta, s_st))
    if placement == "natural":
        lp += np.sum(log_normal(p.alpha_psu - p.alpha_strat[data.stratum_of_psu] - x_psu @ p.beta_psu, s_psu))
        lp += np.sum(log_normal(p.alpha_hh - p.mu - p.alpha_psu[data.psu_of_hh] - data.x_hh @ p.beta_hh, s_hh))
        eta = p.alpha_hh[data.hh_of_person] + data.x_ind @ p.beta
    elif placement == "individual":
        lam, delta = individual_effects(p, data, spec)
        lp += np.sum(log_normal(delta - p.alpha_strat[data.stratum_of_psu], s_psu))
        lp += np.sum(log_normal(lam - delta[data.psu_of_hh], s_hh))
        eta = (p.mu + data.x_ind @ p.beta + (data.x_hh @ p.beta_hh)[data.hh_of_person]
               + (x_psu @ p.beta_psu)[data.psu_of_person] + lam[data.hh_of_person])
    else:
        raise ModelError(f"unknown placement {placement!r}")
    lp += np.sum(data.y * eta - np.logaddexp(0.0, eta))
    return float(lp)


def _csr_arrays(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = sparse.csr_matrix(X)
    X.eliminate_zeros()
    X.sort_indices()
    return (np.ascontiguousarray(X.indptr, dtype=np.intc),
            np.ascontiguousarray(X.indices, dtype=np.intc),
            np.ascontiguousarray(X.data, dtype=float))


class CoverageModel:
    """Log posterior and gradient in unconstrained coordinates.

    Parameters
    ----------
    data : ModelData
    spec : ModelSpec
    kernels : module, optional
        Kernel implementation; defaults to the backend chosen at import.
    """

    def __init__(self, data: ModelData, spec: ModelSpec | None = None, kernels=None):
        self.data = data
        self.spec = spec = spec or ModelSpec(variant=data.variant)
        if spec.variant != data.variant:
            raise ModelError(f"spec variant {spec.variant!r} does not match data variant {data.variant!r}")
        L = self.layout = Layout(data, spec)
        self.dim = L.dim
        self.kernels = kernels or backend.kernels
        d = data
        x_psu = np.ascontiguousarray(_x_psu(spec, data))
        natural = spec.placement == "natural"
        if natural:
            dense, t0 = d.x_ind, L["beta"].start
        else:
            # person rows of [1 | x_ind | x_hh | x_psu] against (mu, beta, beta_hh, beta_psu)
            dense = np.hstack([np.ones((d.n_persons, 1)), d.x_ind, d.x_hh[d.hh_of_person],
                               x_psu[d.psu_of_person]])
            t0 = 0
        layout = (t0, dense.shape[1], L["beta_hh"].start, L["beta_psu"].start, L["beta_ta"].start,
                  L["log_sigma"].start, L["z_ta"].start, L["z_strat"].start, L["z_psu"].start,
                  L["z_hh"].start)
        priors = (spec.mu_scale, spec.beta_scale, spec.sigma_scale, spec.ta_df,
                  float(log_student_t(0.0, spec.ta_df)))
        c = np.ascontiguousarray
        self._post = self.kernels.HierarchicalPosterior(
            *_csr_arrays(dense), c(d.y), c(d.hh_of_person, dtype=np.intc),
            c(d.psu_of_hh, dtype=np.intc), c(d.stratum_of_psu, dtype=np.intc),
            c(d.x_hh, dtype=float), x_psu, c(d.x_ta, dtype=float), c(d.W, dtype=float),
            layout, natural, priors,
        )
        self.n_evals = 0

    def param_names(self) -> list[str]:
        return self.layout.names(self.data)

    def constrain(self, u) -> ParamDraw:
        return constrain(u, self.data, self.spec, self.layout)

    def unconstrain(self, p: ParamDraw) -> np.ndarray:
        return unconstrain(p, self.data, self.spec, self.layout)

    def _check(self, u) -> np.ndarray:
        u = np.ascontiguousarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ModelError(f"expected shape ({self.dim},), got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ModelError("non-finite unconstrained input")
        return u

    def _eval(self, u):
        grad = np.empty(self.dim)
        lp, ll = self._post.logp_grad(self._check(u), grad)
        self.n_evals += 1
        if not math.isfinite(lp):
            raise FloatingPointError("log posterior is not finite")
        return lp, ll, grad

    def logp_grad(self, u) -> tuple[float, np.ndarray]:
        """Log posterior and its gradient at ``u``."""
        lp, _, grad = self._eval(u)
        return lp, grad

    def log_posterior(self, u) -> float:
        return self._eval(u)[0]

    def grad_log_posterior(self, u) -> np.ndarray:
        return self._eval(u)[2]

    def log_likelihood(self, u) -> float:
        return self._eval(u)[1]

    def log_prior(self, u) -> float:
        """Prior block in unconstrained coordinates (includes the log-sigma Jacobian)."""
        lp, ll, _ = self._eval(u)
        return lp - ll

    def loglik_pointwise(self, p: ParamDraw) -> np.ndarray:
        return loglik_pointwise(p, self.data)


def log_posterior(u, data: ModelData, spec: ModelSpec) -> float:
    return CoverageModel(data, spec).log_posterior(u)


def grad_log_posterior(u, data: ModelData, spec: ModelSpec) -> np.ndarray:
    return CoverageModel(data, spec).grad_log_posterior(u)
