import json
import shutil

import numpy as np
import pandas as pd
import pytest

from pescov import io as pio
from pescov.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA, EXIT_OK, main
from pescov.experiments import Arm, IgnorabilityConfig, ignorability_experiment
from pescov.model import CoverageModel, ModelSpec, dataset_model_data
from pescov.predictor import score_records
from pescov.sampler import SamplerConfig
from pescov.survey_sim import InclusionConfig, PopulationConfig

TINY = {
    "seed": 4,
    "simulate": {"population": {"n_ta": 3, "n_strata": 3, "psus_per_stratum": 4, "households_per_psu_mean": 15}},
    "fit": {"sampler": {"n_chains": 2, "n_iter": 300}, "rhat_threshold": 2.0},
    "predict": {"draws": 40},
    "check": {"draws": 100},
    "standardize": {"draws": 20, "profile": {"ethnicity": ["maori", "other"]}},
}

ONE_PERSON = {
    "simulate": {
        "population": {"n_ta": 1, "n_strata": 1, "psus_per_stratum": 1, "households_per_psu_mean": 1,
                       "households_per_psu_dispersion": 0, "household_size_probs": [1, 0, 0, 0, 0, 0, 0, 0],
                       "frame_undercoverage_beta": None},
        "inclusion": {"psu_sampling_fraction": 1.0, "response_rate": 1.0},
    },
    "fit": {"sampler": {"n_chains": 2, "n_iter": 200}, "rhat_threshold": 10.0},
}

STAGES = ("simulate", "fit", "predict", "check", "loo", "standardize", "adjust", "report")


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(cmd, cfg_path, out, *extra):
    return main([cmd, "--config", cfg_path, "--output", str(out), *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = write_config(root / "cfg.json", TINY)
    out = root / "out"
    codes = {s: run(s, cfg, out) for s in STAGES}
    return cfg, out, codes


def test_all_stages_succeed(pipeline):
    _, out, codes = pipeline
    assert codes == {s: EXIT_OK for s in STAGES}
    for f in ("survey.csv", "survey.json", "census.csv", "census.json", "truth.json", "draws.csv", "draws.json",
              "fit.json", "predictions.csv", "ppc.csv", "loo.json", "loo_k.csv", "standardized.csv",
              "marginal.csv", "overall.csv", "profile.csv", "adjusted.csv", "report.json"):
        assert (out / f).exists(), f


def test_dataset_round_trip_is_exact(small_ds, tmp_path):
    pio.write_dataset(small_ds, tmp_path)
    back = pio.read_dataset(tmp_path)
    pd.testing.assert_frame_equal(back.persons, small_ds.persons, check_exact=True)
    assert np.array_equal(back.occurrence_counts, small_ds.occurrence_counts)
    assert np.array_equal(back.ta_covariates, small_ds.ta_covariates)


def test_corrupted_dataset_detected(small_ds, tmp_path):
    pio.write_dataset(small_ds, tmp_path)
    csv = tmp_path / "survey.csv"
    good = csv.read_text()
    csv.write_text(good.replace("\n1,", "\n0,", 1))  # duplicate person id
    with pytest.raises(pio.DataError, match="person_id"):
        pio.read_dataset(tmp_path)
    csv.write_text(good)
    df = pio.read_csv(csv, dtype={"psu_size_cat": str})
    df.loc[0, "y"] = 2
    pio.write_csv(csv, df)
    with pytest.raises(pio.DataError, match="y must"):
        pio.read_dataset(tmp_path)


def test_csv_format_is_fixed_precision(tmp_path):
    pio.write_csv(tmp_path / "x.csv", pd.DataFrame({"a": [0.1, 1 / 3]}))
    assert (tmp_path / "x.csv").read_text().splitlines()[1:] == ["0.10000000000000001", "0.33333333333333331"]


def test_draws_round_trip(pipeline):
    _, out, _ = pipeline
    U, manifest = pio.read_draws(out)
    assert U.shape[:2] == (2, 150)
    assert manifest["names"][0] == "mu"


def test_rescoring_from_draws_is_identical(pipeline):
    cfg_path, out, _ = pipeline
    cfg = pio.load_config(cfg_path)
    ds = pio.read_dataset(out)
    model = CoverageModel(dataset_model_data(ds), cfg.fit.model)
    U, _ = pio.read_draws(out)
    flat = U.reshape(-1, U.shape[-1])
    flat = flat[np.linspace(0, len(flat) - 1, 40).round().astype(int)]
    census = pio.read_census(out / "census.csv")
    pred, inverse = score_records(census, model.constrain(flat), ds.maps(), model.spec)
    table = pio.read_csv(out / "predictions.csv")
    np.testing.assert_array_equal(np.quantile(pred.p, 0.5, axis=0), table["median"].to_numpy())


def test_fit_rerun_is_byte_identical(pipeline, tmp_path):
    cfg, out, _ = pipeline
    other = tmp_path / "again"
    other.mkdir()
    for f in ("survey.csv", "survey.json"):
        shutil.copy(out / f, other / f)
    assert run("fit", cfg, other) == EXIT_OK
    for f in ("draws.csv", "draws.json", "fit.json"):
        assert pio.file_sha256(other / f) == pio.file_sha256(out / f)


def test_adjust_with_half_probability(pipeline, tmp_path):
    cfg, out, _ = pipeline
    census = pio.read_census(out / "census.csv")
    census["p_under"] = 0.5
    pio.write_csv(tmp_path / "c.csv", census)
    assert main(["adjust", "--config", cfg, "--output", str(tmp_path), "--input", str(tmp_path / "c.csv")]) == EXIT_OK
    summary = pio.read_json(tmp_path / "adjust.json")
    assert summary["total_weight"] == 2 * len(census)


def test_unknown_config_key_is_exit_2(tmp_path):
    cfg = write_config(tmp_path / "bad.json", {**TINY, "colour": "blue"})
    assert run("simulate", cfg, tmp_path) == EXIT_CONFIG
    nested = write_config(tmp_path / "bad2.json", {"fit": {"sampler": {"n_chain": 3}}})
    assert run("simulate", nested, tmp_path) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["fit", "--iter", "0", "--output", str(tmp_path)]) == EXIT_CONFIG


def test_missing_artifact_is_exit_3(tmp_path):
    assert main(["fit", "--output", str(tmp_path / "empty")]) == EXIT_DATA
    assert main(["report", "--output", str(tmp_path / "empty")]) == EXIT_DATA


def test_manifest_mismatch_is_exit_3(pipeline, tmp_path):
    cfg, out, _ = pipeline
    for f in ("survey.csv", "survey.json", "census.csv", "census.json", "draws.csv", "draws.json"):
        shutil.copy(out / f, tmp_path / f)
    m = json.loads((tmp_path / "draws.json").read_text())
    m["survey_sha256"] = "0" * 64
    (tmp_path / "draws.json").write_text(json.dumps(m))
    assert run("predict", cfg, tmp_path) == EXIT_DATA
    natural = write_config(tmp_path / "nat.json", {**TINY, "fit": {**TINY["fit"], "model": {"placement": "natural"}}})
    shutil.copy(out / "draws.json", tmp_path / "draws.json")
    assert run("predict", natural, tmp_path) == EXIT_DATA


def test_nonconvergence_is_exit_4_but_writes_draws(tmp_path):
    cfg = write_config(tmp_path / "c.json", {**TINY, "fit": {"sampler": {"n_chains": 2, "n_iter": 20},
                                                             "rhat_threshold": 1.0001}})
    assert run("simulate", cfg, tmp_path) == EXIT_OK
    assert run("fit", cfg, tmp_path) == EXIT_CONVERGENCE
    assert (tmp_path / "draws.csv").exists()


def test_one_person_smoke(tmp_path):
    cfg = write_config(tmp_path / "one.json", ONE_PERSON)
    for stage in ("simulate", "fit", "predict"):
        assert run(stage, cfg, tmp_path) == EXIT_OK, stage
    assert len(pio.read_csv(tmp_path / "predictions.csv")) == 1


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path / "c.json", TINY)
    run("simulate", cfg, tmp_path / "a", "--seed", "11")
    run("simulate", cfg, tmp_path / "b")
    assert pio.file_sha256(tmp_path / "a" / "survey.csv") != pio.file_sha256(tmp_path / "b" / "survey.csv")


def test_config_round_trip():
    cfg = pio.PipelineConfig.from_dict(TINY)
    again = pio.PipelineConfig.from_dict(json.loads(pio.dumps_json(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_identical_arms_without_informative_response():
    cfg = IgnorabilityConfig(
        replicates=1, seed=2,
        arms=[Arm("a", 0.0, False), Arm("b", 0.0, False)],
        population=PopulationConfig(n_ta=2, n_strata=2, psus_per_stratum=4, households_per_psu_mean=10),
        inclusion=InclusionConfig(psu_sampling_fraction=0.5),
        sampler=SamplerConfig(n_chains=2, n_iter=200),
    )
    rows = ignorability_experiment(cfg).rows.set_index("arm")
    cols = ["n_persons", "mean_mu", "q05", "q95", "max_rhat"]
    pd.testing.assert_series_equal(rows.loc["a", cols], rows.loc["b", cols], check_names=False)
