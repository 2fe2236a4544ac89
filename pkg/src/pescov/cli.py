"""Command-line pipeline.

Each subcommand reads its inputs from, and writes its outputs to, the output
directory. Exit codes: 0 success, 2 configuration error, 3 data error,
4 convergence failure, 5 internal invariant breach. Set ``PESCOV_LOG_LEVEL``
(e.g. ``INFO``) for progress messages on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import io as pio
from . import rng as _rng
from . import survey_sim
from .experiments import Arm, IgnorabilityConfig, ignorability_experiment
from .loo import loo_report, pointwise_matrix
from .model import CoverageModel, ModelError, dataset_model_data
from .ppc import group_by_demographics, group_by_stratum, group_by_ta, ppc_report
from .predictor import PredictionError, erp_weight, score_records
from .sampler import SamplerError, sample
from .standardize import StandardizationError, profile_by, standardize_census

log = logging.getLogger("pescov")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE, EXIT_INTERNAL = 0, 2, 3, 4, 5
LOG_ENV = "PESCOV_LOG_LEVEL"


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers

def _out(cfg) -> Path:
    return Path(cfg.output)


def _truth(cfg) -> survey_sim.TruthParams:
    t = cfg.simulate.truth
    truth = survey_sim.default_truth(t.variant, seed=cfg.seed, noise=t.noise, mu=t.mu, sigmas=tuple(t.sigmas))
    for name in ("beta", "beta_hh", "beta_psu", "beta_ta"):
        v = getattr(t, name)
        if v is not None:
            if len(v) != len(getattr(truth, name)):
                raise pio.ConfigError(f"simulate.truth.{name} needs {len(getattr(truth, name))} values")
            setattr(truth, name, np.asarray(v, dtype=float))
    return truth


def _load_model(cfg):
    ds = pio.read_dataset(_out(cfg))
    spec = cfg.fit.model
    return ds, CoverageModel(dataset_model_data(ds, spec.variant), spec)


def _load_draws(cfg, model, n_draws: int | None):
    U, manifest = pio.read_draws(_out(cfg))
    survey_hash = pio.read_json(_out(cfg) / "survey.json")["csv_sha256"]
    if manifest.get("survey_sha256") != survey_hash:
        raise pio.DataError("draws were fitted to a different survey file")
    if U.shape[-1] != model.dim or manifest.get("model") != dataclasses.asdict(model.spec):
        raise pio.DataError("draws do not match the configured model")
    flat = U.reshape(-1, U.shape[-1])
    if n_draws and n_draws < len(flat):
        flat = flat[np.linspace(0, len(flat) - 1, n_draws).round().astype(int)]
    return flat


def _census_path(cfg, args) -> Path:
    return Path(args.input) if getattr(args, "input", None) else _out(cfg) / "census.csv"


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg, args) -> int:
    sim = cfg.simulate
    pop_cfg = dataclasses.replace(sim.population, seed=cfg.seed)
    truth = _truth(cfg)
    pop = survey_sim.gen_census_inclusion(survey_sim.gen_population(pop_cfg), truth)
    ds = survey_sim.sample_pes(pop, dataclasses.replace(sim.inclusion, seed=cfg.seed))
    out = _out(cfg)
    pio.write_dataset(ds, out)
    pio.write_census(survey_sim.census_file(pop), out)
    pio.write_json(out / "truth.json", {
        "params": truth.to_dict(),
        "effects": {k: v for k, v in pop.effects.items() if k != "p_under"},
        "population": {"n_persons": pop.n_persons, "n_households": pop.n_households, "n_psus": pop.n_psus,
                       "under_coverage_rate": float(pop.y.mean())},
    })
    log.info("simulated %d persons, %d in the survey", pop.n_persons, len(ds.persons))
    return EXIT_OK


def cmd_fit(cfg, args) -> int:
    ds, model = _load_model(cfg)
    sc = dataclasses.replace(cfg.fit.sampler, seed=cfg.seed)
    s = sample(model, sc)
    diag = s.diagnostics()
    out = _out(cfg)
    pio.write_draws(s, out, extra={
        "survey_sha256": pio.read_json(out / "survey.json")["csv_sha256"],
        "model": dataclasses.asdict(model.spec),
    })
    pio.write_json(out / "fit.json", diag.to_dict())
    r = diag.max_rhat
    if r is None or r >= cfg.fit.rhat_threshold:
        raise ConvergenceError(f"max R-hat {r} is not below {cfg.fit.rhat_threshold}")
    return EXIT_OK


def cmd_predict(cfg, args) -> int:
    ds, model = _load_model(cfg)
    draws = model.constrain(_load_draws(cfg, model, cfg.predict.draws))
    census = pio.read_census(_census_path(cfg, args))
    pred, inverse = score_records(census, draws, ds.maps(), model.spec, cfg.predict.method)
    q05, med, q95 = pred.summary()
    first = np.unique(inverse, return_index=True)[1]
    table = pd.DataFrame({
        "cell": np.arange(pred.p.shape[1]),
        "ta_id": census["ta_id"].to_numpy()[first],
        "n_records": np.bincount(inverse, minlength=pred.p.shape[1]),
        "median": med, "q05": q05, "q95": q95,
        "weight_mean": pred.weight.mean(axis=0),
    })
    pio.write_csv(_out(cfg) / "predictions.csv", table)
    pio.write_json(_out(cfg) / "predict.json", {"n_cells": len(table), "n_records": len(census),
                                                "n_draws": pred.p.shape[0], "method": cfg.predict.method})
    return EXIT_OK


def _groupings(names, persons, data):
    out = []
    for g in names:
        if g == "demographic":
            out.append(group_by_demographics(persons))
        elif g == "ta":
            out.append(group_by_ta(data.ta_of_person))
        else:
            out.append(group_by_stratum(data.stratum_of_person))
    return out


def cmd_check(cfg, args) -> int:
    ds, model = _load_model(cfg)
    draws = model.constrain(_load_draws(cfg, model, cfg.check.draws))
    rng = _rng.stream(cfg.seed, _rng.PPC)
    rep = ppc_report(draws, model.data, _groupings(cfg.check.groupings, ds.persons, model.data), rng,
                     cfg.check.levels, cfg.check.mode)
    pio.write_csv(_out(cfg) / "ppc.csv", rep.to_csv())
    pio.write_json(_out(cfg) / "ppc.json", {
        "mode": cfg.check.mode,
        "n_groups": int(rep.table["group"].nunique()),
        "inside_rate": {lv: rep.inside_rate(lv) for lv in cfg.check.levels},
        "mean_width": {lv: rep.mean_width(lv) for lv in cfg.check.levels},
    })
    return EXIT_OK


def cmd_loo(cfg, args) -> int:
    _, model = _load_model(cfg)
    U = _load_draws(cfg, model, cfg.loo.draws)
    rep = loo_report(pointwise_matrix(model, U))
    pio.write_json(_out(cfg) / "loo.json", rep.to_dict())
    pio.write_csv(_out(cfg) / "loo_k.csv", pd.DataFrame({"observation": np.arange(rep.k_hat.size),
                                                         "k_hat": rep.k_hat, "elpd": rep.pointwise_elpd}))
    return EXIT_OK


def _profile_values(profile: dict) -> dict:
    return {k: list(v) for k, v in profile.items()}


def cmd_standardize(cfg, args) -> int:
    ds, model = _load_model(cfg)
    sc = cfg.standardize
    draws = model.constrain(_load_draws(cfg, model, sc.draws))
    census = pio.read_census(_census_path(cfg, args))
    maps = ds.maps()
    res = standardize_census(census, draws, maps, model.spec, sc.method)
    out = _out(cfg)
    for name, frame in res.frames().items():
        pio.write_csv(out / f"{name}.csv", frame)
    if sc.profile:
        pio.write_csv(out / "profile.csv", profile_by(census, _profile_values(sc.profile), draws, maps,
                                                      model.spec, sc.method))
    return EXIT_OK


def cmd_adjust(cfg, args) -> int:
    """Inverse-probability weights for census records.

    A ``p_under`` column in the input is used as given; otherwise each record
    is scored from the posterior draws and weighted by the posterior mean of
    ``1 / (1 - p)``.
    """
    census = pio.read_csv(_census_path(cfg, args), dtype={"psu_size_cat": str})
    if "p_under" in census.columns:
        p = census["p_under"].to_numpy(dtype=float)
        w = erp_weight(p)
    else:
        ds, model = _load_model(cfg)
        draws = model.constrain(_load_draws(cfg, model, cfg.predict.draws))
        pred, inverse = score_records(census, draws, ds.maps(), model.spec, cfg.predict.method)
        p = pred.p.mean(axis=0)[inverse]
        w = pred.weight.mean(axis=0)[inverse]
    id_col = "person_id" if "person_id" in census.columns else None
    table = pd.DataFrame({"record": census[id_col].to_numpy() if id_col else np.arange(len(census))})
    if "ta_id" in census.columns:
        table["ta_id"] = census["ta_id"].to_numpy()
    table["p_under"] = p
    table["weight"] = w
    out = _out(cfg)
    pio.write_csv(out / "adjusted.csv", table)
    summary = {"n_records": len(table), "total_weight": float(w.sum())}
    if "ta_id" in table:
        summary["total_weight_by_ta"] = {str(k): float(v) for k, v in table.groupby("ta_id")["weight"].sum().items()}
    pio.write_json(out / "adjust.json", summary)
    return EXIT_OK


REPORT_PARTS = ("truth.json", "fit.json", "predict.json", "ppc.json", "loo.json", "adjust.json",
                "ignorability.json")


def cmd_report(cfg, args) -> int:
    out = _out(cfg)
    parts = {}
    for name in REPORT_PARTS:
        if (out / name).exists():
            d = pio.read_json(out / name)
            if name == "fit.json":
                d = {k: d[k] for k in ("max_rhat", "min_ess", "n_divergent", "n_max_depth")}
            if name == "truth.json":
                d = d.get("population", {})
            parts[name[:-5]] = d
    if not parts:
        raise pio.DataError(f"no pipeline outputs in {out}")
    for name in ("standardized.csv", "overall.csv"):
        if (out / name).exists():
            parts[name[:-4]] = pio.read_csv(out / name).to_dict(orient="records")
    pio.write_json(out / "report.json", parts)
    return EXIT_OK


def cmd_ignorability(cfg, args) -> int:
    ic = cfg.ignorability
    base = IgnorabilityConfig()
    try:
        pop = dataclasses.replace(base.population, **ic.population)
        incl = dataclasses.replace(base.inclusion, **ic.inclusion)
    except TypeError as e:
        raise pio.ConfigError(f"ignorability: {e}") from None
    exp = IgnorabilityConfig(
        replicates=ic.replicates, seed=cfg.seed,
        arms=[Arm("uninformative", 0.0, True), Arm("informative", ic.strength, False)],
        population=pop, inclusion=incl, variant=cfg.fit.model.variant,
        sampler=dataclasses.replace(base.sampler, n_iter=ic.n_iter, n_chains=ic.n_chains),
        rhat_threshold=cfg.fit.rhat_threshold,
    )
    rep = ignorability_experiment(exp)
    out = _out(cfg)
    pio.write_csv(out / "ignorability.csv", rep.rows)
    pio.write_json(out / "ignorability.json", {"arms": rep.summary().to_dict(orient="records")})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "check": cmd_check,
    "loo": cmd_loo,
    "standardize": cmd_standardize,
    "adjust": cmd_adjust,
    "report": cmd_report,
    "ignorability": cmd_ignorability,
}

HELP = {
    "simulate": "simulate a population, census misses and a PES sample",
    "fit": "fit the coverage model by NUTS",
    "predict": "score census cells from the posterior draws",
    "check": "grouped predictive checks at every integration level",
    "loo": "PSIS-LOO summary and Pareto-k diagnostics",
    "standardize": "standardized and marginal TA under-coverage",
    "adjust": "inverse-probability weights for census records",
    "report": "collect stage summaries into report.json",
    "ignorability": "paired inclusion-regime simulation experiment",
}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pescov", description="Census under-coverage estimation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="pipeline configuration (JSON)")
        p.add_argument("--seed", type=int, help="global seed (overrides the config)")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--chains", type=int, help="number of chains")
        p.add_argument("--iter", type=int, help="iterations per chain, warmup included")
        p.add_argument("--draws", type=int, help="posterior draws used downstream of the fit")
        if name in ("predict", "standardize", "adjust"):
            p.add_argument("--input", help="census-style records (default: <output>/census.csv)")
    return parser


def _apply_overrides(cfg, args):
    if args.seed is not None:
        if args.seed < 0:
            raise pio.ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    if args.output is not None:
        cfg.output = args.output
    sc = cfg.fit.sampler
    if args.chains is not None:
        sc = dataclasses.replace(sc, n_chains=args.chains)
    if args.iter is not None:
        sc = dataclasses.replace(sc, n_iter=args.iter)
    cfg.fit.sampler = sc
    if args.draws is not None:
        if args.draws < 1:
            raise pio.ConfigError("--draws must be positive")
        for sec in (cfg.predict, cfg.check, cfg.loo, cfg.standardize):
            sec.draws = args.draws
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(pio.load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (pio.ConfigError, survey_sim.ConfigError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (pio.DataError, ModelError, PredictionError, StandardizationError, survey_sim.DesignError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, SamplerError) as e:
        print(f"convergence failure: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except Exception as e:  # anything else means a broken invariant
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
