"""Configuration, file formats and atomic persistence.

Every emitted CSV uses ``%.17g`` for floats, so files are byte-stable and
floats survive a round trip exactly. JSON is written with sorted keys and no
timestamps for the same reason.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .covariates import build_spline_basis
from .model import ModelSpec
from .ppc import LEVELS, MODES
from .predictor import METHODS
from .sampler import PosteriorSample, SamplerConfig
from .survey_sim import InclusionConfig, PopulationConfig, SurveyDataset

FLOAT_FORMAT = "%.17g"
FORMAT_VERSION = 1

SURVEY_COLUMNS = (
    "person_id", "household_id", "psu_id", "stratum_id", "ta_id", "y", "sex", "age",
    "eth_m", "eth_p", "eth_a", "eth_o", "nz_born", "maori_descent",
    "hh_m", "hh_p", "hh_a", "hh_o", "hh_female", "hh_maori_descent", "hh_nz_born",
    "psu_pacific_prop", "psu_size_cat", "htf",
)
CENSUS_COLUMNS = tuple(c for c in SURVEY_COLUMNS if c != "y")
GROUPINGS = ("demographic", "ta", "stratum")


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class DataError(ValueError):
    """Missing, malformed or mismatched input artifact."""


# ---------------------------------------------------------------------------
# atomic writes

def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None


def write_csv(path, df: pd.DataFrame) -> Path:
    text = df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, text)


def read_csv(path, **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# survey dataset

def _dtypes(df: pd.DataFrame) -> dict[str, str]:
    return {c: str(df[c].dtype) for c in df.columns}


def write_dataset(ds: SurveyDataset, directory, stem: str = "survey") -> dict:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the manifest."""
    directory = Path(directory)
    missing = [c for c in SURVEY_COLUMNS if c not in ds.persons.columns]
    if missing:
        raise DataError(f"survey records lack columns {missing}")
    persons = ds.persons[list(SURVEY_COLUMNS)]
    csv_path = write_csv(directory / f"{stem}.csv", persons)
    manifest = {
        "format_version": FORMAT_VERSION,
        "columns": list(SURVEY_COLUMNS),
        "dtypes": _dtypes(persons),
        "n_persons": len(persons),
        "spline": build_spline_basis().to_dict(),
        "ta_covariates": ds.ta_covariates,
        "occurrence_counts": ds.occurrence_counts,
        "csv_sha256": file_sha256(csv_path),
    }
    write_json(directory / f"{stem}.json", manifest)
    return manifest


def _restore(df: pd.DataFrame, dtypes: dict[str, str]) -> pd.DataFrame:
    for c, t in dtypes.items():
        if t == "object":
            df[c] = df[c].astype(str)
        else:
            df[c] = df[c].astype(t)
    return df


def read_dataset(directory, stem: str = "survey") -> SurveyDataset:
    directory = Path(directory)
    manifest = read_json(directory / f"{stem}.json")
    df = read_csv(directory / f"{stem}.csv", dtype={"psu_size_cat": str})
    if list(df.columns) != manifest.get("columns"):
        raise DataError(f"{stem}.csv column order does not match its manifest")
    if len(df) != manifest.get("n_persons"):
        raise DataError(f"{stem}.csv has {len(df)} rows, manifest says {manifest.get('n_persons')}")
    if df.empty:
        raise DataError(f"{stem}.csv has no records")
    if not set(np.unique(df["y"])) <= {0, 1}:
        raise DataError("y must be 0 or 1")
    if df["person_id"].duplicated().any():
        raise DataError("person_id values must be unique")
    for child, parent in (("household_id", "psu_id"), ("psu_id", "stratum_id"), ("psu_id", "ta_id")):
        if (df.groupby(child)[parent].nunique() > 1).any():
            raise DataError(f"each {child} must map to a single {parent}")
    ta = np.asarray(manifest["ta_covariates"], dtype=float)
    occ = np.asarray(manifest["occurrence_counts"], dtype=float)
    if occ.shape[1] != ta.shape[0] or df["ta_id"].max() >= ta.shape[0] or df["stratum_id"].max() >= occ.shape[0]:
        raise DataError("identifiers fall outside the manifest geography")
    return SurveyDataset(persons=_restore(df, manifest["dtypes"]), ta_covariates=ta, occurrence_counts=occ)


def write_census(df: pd.DataFrame, directory, stem: str = "census") -> dict:
    df = df[list(CENSUS_COLUMNS)]
    path = write_csv(Path(directory) / f"{stem}.csv", df)
    manifest = {"format_version": FORMAT_VERSION, "columns": list(CENSUS_COLUMNS), "dtypes": _dtypes(df),
                "n_records": len(df), "csv_sha256": file_sha256(path)}
    write_json(Path(directory) / f"{stem}.json", manifest)
    return manifest


def read_census(path) -> pd.DataFrame:
    """Census-style records; the companion manifest is used when present."""
    path = Path(path)
    df = read_csv(path, dtype={"psu_size_cat": str})
    missing = [c for c in CENSUS_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"census file lacks columns {missing}")
    man = path.with_suffix(".json")
    if man.exists():
        dtypes = read_json(man).get("dtypes", {})
        df = _restore(df, {c: t for c, t in dtypes.items() if c in df.columns})
    return df


# ---------------------------------------------------------------------------
# posterior draws

def write_draws(sample: PosteriorSample, directory, extra: dict | None = None) -> dict:
    """``draws.csv`` (one row per kept iteration) plus ``draws.json``."""
    directory = Path(directory)
    C, N, D = sample.draws.shape
    names = sample.names or [f"u[{i}]" for i in range(D)]
    df = pd.DataFrame(sample.flat(), columns=names)
    df.insert(0, "draw", np.tile(np.arange(N), C))
    df.insert(0, "chain", np.repeat(np.arange(C), N))
    df["lp__"] = sample.lp.ravel()
    df["divergent__"] = sample.divergent.ravel().astype(int)
    df["treedepth__"] = sample.treedepth.ravel()
    path = write_csv(directory / "draws.csv", df)
    manifest = {
        "format_version": FORMAT_VERSION,
        "names": names,
        "n_chains": C,
        "n_kept": N,
        "n_warmup": sample.n_warmup,
        "step_size": sample.step_size,
        "sampler": dataclasses.asdict(sample.config) if sample.config else None,
        "csv_sha256": file_sha256(path),
    }
    manifest.update(extra or {})
    write_json(directory / "draws.json", manifest)
    return manifest


def read_draws(directory) -> tuple[np.ndarray, dict]:
    """Unconstrained draws ``(chains, kept, dim)`` and the manifest."""
    directory = Path(directory)
    manifest = read_json(directory / "draws.json")
    df = read_csv(directory / "draws.csv")
    names = manifest["names"]
    if [c for c in df.columns if c in names] != names:
        raise DataError("draws.csv columns do not match draws.json")
    C, N = manifest["n_chains"], manifest["n_kept"]
    if len(df) != C * N:
        raise DataError("draws.csv row count does not match draws.json")
    return df[names].to_numpy().reshape(C, N, len(names)), manifest


# ---------------------------------------------------------------------------
# pipeline configuration

def _strict(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class TruthConfig:
    """Ground truth for simulation: planted defaults, optionally overridden."""

    variant: str = "model1"
    mu: float = -2.4
    sigmas: list[float] = field(default_factory=lambda: [0.6, 0.3, 0.2, 0.15])
    noise: float = 0.15
    beta: list[float] | None = None
    beta_hh: list[float] | None = None
    beta_psu: list[float] | None = None
    beta_ta: list[float] | None = None


@dataclass
class SimulateSection:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    inclusion: InclusionConfig = field(default_factory=InclusionConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)


@dataclass
class FitSection:
    model: ModelSpec = field(default_factory=ModelSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    rhat_threshold: float = 1.05


@dataclass
class PredictSection:
    method: str = "trapezoid"
    draws: int | None = 200


@dataclass
class CheckSection:
    levels: list[str] = field(default_factory=lambda: ["self", "new_household", "new_household_psu",
                                                        "new_household_psu_stratum"])
    mode: str = "marginal"
    groupings: list[str] = field(default_factory=lambda: ["demographic", "ta", "stratum"])
    draws: int | None = 1000


@dataclass
class LooSection:
    draws: int | None = None


@dataclass
class StandardizeSection:
    method: str = "trapezoid"
    draws: int | None = 200
    profile: dict = field(default_factory=lambda: {"ethnicity": ["maori", "pacific", "asian", "other"],
                                                   "age": [5, 15, 25, 35, 45, 55, 65, 75, 85]})


@dataclass
class IgnorabilitySection:
    replicates: int = 20
    strength: float = 2.0
    n_iter: int = 1000
    n_chains: int = 2
    population: dict = field(default_factory=dict)
    inclusion: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    seed: int = 0
    output: str = "out"
    simulate: SimulateSection = field(default_factory=SimulateSection)
    fit: FitSection = field(default_factory=FitSection)
    predict: PredictSection = field(default_factory=PredictSection)
    check: CheckSection = field(default_factory=CheckSection)
    loo: LooSection = field(default_factory=LooSection)
    standardize: StandardizeSection = field(default_factory=StandardizeSection)
    ignorability: IgnorabilitySection = field(default_factory=IgnorabilitySection)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        sim = d.get("simulate") or {}
        if not isinstance(sim, dict):
            raise ConfigError("simulate must be an object")
        bad = sorted(set(sim) - {"population", "inclusion", "truth"})
        if bad:
            raise ConfigError(f"unknown keys in simulate: {bad}")
        fit = d.get("fit") or {}
        if not isinstance(fit, dict):
            raise ConfigError("fit must be an object")
        bad = sorted(set(fit) - {"model", "sampler", "rhat_threshold"})
        if bad:
            raise ConfigError(f"unknown keys in fit: {bad}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        cfg = cls(
            seed=seed,
            output=str(d.get("output", "out")),
            simulate=SimulateSection(
                population=_strict(PopulationConfig, sim.get("population"), "simulate.population"),
                inclusion=_strict(InclusionConfig, sim.get("inclusion"), "simulate.inclusion"),
                truth=_strict(TruthConfig, sim.get("truth"), "simulate.truth"),
            ),
            fit=FitSection(
                model=_strict(ModelSpec, fit.get("model"), "fit.model"),
                sampler=_strict(SamplerConfig, fit.get("sampler"), "fit.sampler"),
                rhat_threshold=float(fit.get("rhat_threshold", 1.05)),
            ),
            predict=_strict(PredictSection, d.get("predict"), "predict"),
            check=_strict(CheckSection, d.get("check"), "check"),
            loo=_strict(LooSection, d.get("loo"), "loo"),
            standardize=_strict(StandardizeSection, d.get("standardize"), "standardize"),
            ignorability=_strict(IgnorabilitySection, d.get("ignorability"), "ignorability"),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.simulate.population.validate()
            self.simulate.inclusion.validate(self.simulate.population.n_strata)
            self.fit.sampler.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.simulate.truth.variant != self.fit.model.variant:
            raise ConfigError("simulate.truth.variant and fit.model.variant differ; "
                              "the truth must be expressible in the fitted model")
        if len(self.simulate.truth.sigmas) != 4:
            raise ConfigError("simulate.truth.sigmas needs four scales (hh, psu, strat, ta)")
        for name, sec in (("predict", self.predict), ("standardize", self.standardize)):
            if sec.method not in METHODS:
                raise ConfigError(f"{name}.method must be one of {METHODS}")
        if set(self.check.levels) - set(LEVELS):
            raise ConfigError(f"check.levels must be drawn from {LEVELS}")
        if self.check.mode not in MODES:
            raise ConfigError(f"check.mode must be one of {MODES}")
        if set(self.check.groupings) - set(GROUPINGS):
            raise ConfigError(f"check.groupings must be drawn from {GROUPINGS}")
        if self.ignorability.replicates < 1:
            raise ConfigError("ignorability.replicates must be at least 1")

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig.from_dict({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return PipelineConfig.from_dict(d)
