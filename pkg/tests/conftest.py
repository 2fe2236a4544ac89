import numpy as np
import pytest

from pescov.model import CoverageModel, ModelSpec, dataset_model_data
from pescov.survey_sim import (
    InclusionConfig,
    PopulationConfig,
    default_truth,
    gen_census_inclusion,
    gen_population,
    sample_pes,
)


def small_population(seed=0, variant="model1", **overrides):
    cfg = dict(n_ta=3, n_strata=4, psus_per_stratum=4, households_per_psu_mean=15, seed=seed)
    cfg.update(overrides)
    pop = gen_population(PopulationConfig(**cfg))
    return gen_census_inclusion(pop, default_truth(variant, seed))


@pytest.fixture(scope="session")
def small_pop():
    return small_population(0)


@pytest.fixture(scope="session")
def small_ds(small_pop):
    return sample_pes(small_pop, InclusionConfig(psu_sampling_fraction=0.75, response_rate=0.95))


@pytest.fixture(scope="session")
def small_model(small_ds):
    return CoverageModel(dataset_model_data(small_ds), ModelSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
