"""Compare the compiled and pure-Python posterior kernels.

Run with ``python3 benchmarks/bench_kernels.py [--persons-scale S] [--repeats N]``.
Prints the time per log-posterior-and-gradient evaluation for each backend on
a simulated PES sample, then the time of the logistic-normal quadrature over a
batch of cells, each with the largest disagreement between backends.
"""

import argparse
import time

import numpy as np

from pescov import backend
from pescov.model import CoverageModel, ModelSpec, dataset_model_data
from pescov.predictor import normal_grid
from pescov.survey_sim import InclusionConfig, PopulationConfig, default_truth, gen_census_inclusion, gen_population, sample_pes


def _dataset(scale: float, seed: int):
    cfg = PopulationConfig(n_ta=10, n_strata=20, psus_per_stratum=20, households_per_psu_mean=80 * scale, seed=seed)
    pop = gen_census_inclusion(gen_population(cfg), default_truth("model1", seed))
    return sample_pes(pop, InclusionConfig(response_rate=0.97))


def _time(model, points, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for u in points:
            model.logp_grad(u)
        best = min(best, (time.perf_counter() - t0) / len(points))
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--persons-scale", type=float, default=1.0)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--points", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cells", type=int, default=200_000)
    args = ap.parse_args(argv)

    ds = _dataset(args.persons_scale, args.seed)
    rng = np.random.default_rng(args.seed)
    print(f"persons={len(ds.persons)}")
    for placement in ("individual", "natural"):
        spec = ModelSpec(placement=placement)
        data = dataset_model_data(ds, spec.variant)
        models = {"python": CoverageModel(data, spec, kernels=backend.python_kernels)}
        if backend.NAME == "cython":
            models["cython"] = CoverageModel(data, spec, kernels=backend.kernels)
        dim = models["python"].dim
        points = rng.normal(scale=0.5, size=(args.points, dim))
        times = {k: _time(m, points, args.repeats) for k, m in models.items()}
        line = f"{placement:>10}  dim={dim}  " + "  ".join(f"{k}={v * 1e6:8.1f} us" for k, v in times.items())
        if "cython" in times:
            diff = max(np.max(np.abs(models["cython"].grad_log_posterior(u) - models["python"].grad_log_posterior(u)))
                       for u in points[:5])
            line += f"  speedup={times['python'] / times['cython']:.2f}x  max|dgrad|={diff:.1e}"
        print(line)

    loc = rng.normal(-2.0, 1.5, args.cells)
    sigma = np.full(args.cells, 0.8)
    z, w = normal_grid(0.8)
    kernels = {"python": backend.python_kernels}
    if backend.NAME == "cython":
        kernels["cython"] = backend.kernels
    outs, times = {}, {}
    for k, mod in kernels.items():
        outs[k] = np.empty(args.cells)
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            mod.normal_expit_mean(loc, sigma, z, w, outs[k])
            best = min(best, time.perf_counter() - t0)
        times[k] = best
    line = f"{'quadrature':>10}  cells={args.cells} nodes={len(z)}  " + "  ".join(
        f"{k}={v * 1e3:8.1f} ms" for k, v in times.items())
    if "cython" in times:
        line += (f"  speedup={times['python'] / times['cython']:.2f}x"
                 f"  max|dp|={np.max(np.abs(outs['cython'] - outs['python'])):.1e}")
    print(line)


if __name__ == "__main__":
    main()
