"""Fitting helpers and the ignorability simulation experiment."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import rng as _rng
from .model import CoverageModel, ModelSpec, dataset_model_data
from .sampler import Diagnostics, PosteriorSample, SamplerConfig, sample
from .survey_sim import (
    InclusionConfig,
    PopulationConfig,
    default_truth,
    gen_census_inclusion,
    gen_population,
    sample_pes,
)

log = logging.getLogger(__name__)


@dataclass
class Fit:
    model: CoverageModel
    sample: PosteriorSample
    diagnostics: Diagnostics

    @property
    def max_rhat(self) -> float | None:
        return self.diagnostics.max_rhat

    def draws(self, thin_to: int | None = None):
        """Constrained draws, optionally thinned evenly to about ``thin_to``."""
        U = self.sample.flat()
        if thin_to and thin_to < len(U):
            U = U[np.linspace(0, len(U) - 1, thin_to).round().astype(int)]
        return self.model.constrain(U)


def fixed_effect_mask(model: CoverageModel) -> np.ndarray:
    """Coordinates holding mu, the regression coefficients and the log scales."""
    L = model.layout
    mask = np.zeros(model.dim, dtype=bool)
    mask[: L["log_sigma"].stop] = True
    return mask


def fit_dataset(ds, spec: ModelSpec, config: SamplerConfig, person_covariates: bool = True) -> Fit:
    data = dataset_model_data(ds, spec.variant)
    if not person_covariates:
        data = data.without_person_covariates()
    model = CoverageModel(data, spec)
    s = sample(model, config)
    return Fit(model, s, s.diagnostics())


# ---------------------------------------------------------------------------
# ignorability experiment

@dataclass
class Arm:
    """One inclusion regime paired with one model."""

    name: str
    informative_strength: float = 0.0
    design_covariates: bool = True


@dataclass
class IgnorabilityConfig:
    replicates: int = 20
    seed: int = 0
    arms: list[Arm] = field(default_factory=lambda: [
        Arm("uninformative", 0.0, True),
        Arm("informative", 2.0, False),
    ])
    population: PopulationConfig = field(default_factory=lambda: PopulationConfig(
        n_ta=12, n_strata=12, psus_per_stratum=10, households_per_psu_mean=40))
    inclusion: InclusionConfig = field(default_factory=lambda: InclusionConfig(
        psu_sampling_fraction=0.5, pps_size_measure="pacific_adjusted", pps_pacific_adjustment=3.0,
        response_rate=0.9))
    variant: str = "model1"
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_chains=2, n_iter=1000))
    rhat_threshold: float = 1.05


@dataclass
class IgnorabilityReport:
    rows: pd.DataFrame

    def summary(self) -> pd.DataFrame:
        ok = self.rows[~self.rows["excluded"]]
        g = ok.groupby("arm", sort=False)
        out = pd.DataFrame({
            "n_used": g.size(),
            "bias_mu": g["bias"].mean(),
            "coverage_mu": g["covered"].mean(),
        })
        out["n_excluded"] = self.rows.groupby("arm", sort=False)["excluded"].sum().astype(int)
        return out.reset_index()

    def coverage(self, arm: str) -> float:
        s = self.summary().set_index("arm")
        return float(s.loc[arm, "coverage_mu"])


def _replicate(cfg: IgnorabilityConfig, r: int) -> list[dict]:
    seed = int(_rng.stream(cfg.seed, _rng.EXPERIMENT, r).integers(2**31))
    pop_cfg = dataclasses.replace(cfg.population, seed=seed)
    truth = default_truth(cfg.variant, seed=seed)
    # no person-level effects: the person design is nearly collinear with mu,
    # which would leave mu identified only through its prior
    truth.beta = np.zeros_like(truth.beta)
    pop = gen_census_inclusion(gen_population(pop_cfg), truth)
    rows = []
    for arm in cfg.arms:
        incl = dataclasses.replace(cfg.inclusion, informative=arm.informative_strength != 0,
                                   informative_strength=arm.informative_strength, seed=seed)
        ds = sample_pes(pop, incl)
        spec = ModelSpec(variant=cfg.variant, psu_covariates=arm.design_covariates)
        fit = fit_dataset(ds, spec, dataclasses.replace(cfg.sampler, seed=seed), person_covariates=False)
        mask = fixed_effect_mask(fit.model)
        rhat = fit.diagnostics.rhat[mask]
        max_rhat = float(np.nanmax(rhat)) if np.isfinite(rhat).any() else float("nan")
        mu = fit.sample.flat()[:, 0]
        lo, hi = np.quantile(mu, [0.05, 0.95])
        rows.append({
            "replicate": r, "arm": arm.name, "n_persons": len(ds.persons), "truth_mu": truth.mu,
            "mean_mu": float(mu.mean()), "q05": float(lo), "q95": float(hi),
            "bias": float(mu.mean() - truth.mu), "covered": bool(lo <= truth.mu <= hi),
            "max_rhat": max_rhat, "excluded": not (max_rhat < cfg.rhat_threshold),
        })
        log.info("replicate %d arm %s: mu %.3f [%.3f, %.3f], truth %.2f, rhat %.3f",
                 r, arm.name, mu.mean(), lo, hi, truth.mu, max_rhat)
    return rows


def ignorability_experiment(cfg: IgnorabilityConfig) -> IgnorabilityReport:
    """Paired simulations: each replicate population is sampled and fitted once per arm."""
    rows = []
    for r in range(cfg.replicates):
        rows.extend(_replicate(cfg, r))
    return IgnorabilityReport(pd.DataFrame(rows))
