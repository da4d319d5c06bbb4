"""Seed-sweep orchestration: every (seed, method) cell runs the full pipeline
and yields metric rows; cells share nothing but the config.

Output schema (``results.csv``)::

    experiment,method,d,n,seed,metric,value

Values are ``repr`` floats (``inf`` for unbounded coverage). A failing cell
contributes a single row with metric ``error`` and the message as its value.
Wall-clock seconds per cell go to ``timings.csv`` so that ``results.csv`` is
byte-identical across reruns.
"""
from __future__ import annotations

import csv
import datetime as _dt
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import scipy

from . import __version__
from .bench import (Benchmark, Dataset, clique_correlation, coverage_ratios, gen_quadratic_cycle,
                    gen_rbf_mixture, point_mass, transform_observable)
from .config import RunConfig
from .discovery import EmaPseudoHessian, edge_test, estimate_pseudo_hessian, whiten_fit
from .fgm import ged, maximal_cliques, unlabeled_ged
from .numkit import make_rng
from .optimize import (GaussianPolicy, argmax_discrete, ascend_policy, best_in_dataset, policy_value,
                       regret, rwr_baseline)
from .surrogate import MlpHyper, fit_masked_mlp, fit_full_mlp, fit_onehot
from .vae import VaeHyper, train_vae

HEADER = ("experiment", "method", "d", "n", "seed", "metric", "value")

# stream keys under make_rng(seed, key)
_DATA, _ASCENT, _DESIGNS, _STEIN = 1, 2, 3, 303


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _mlp_hyper(cfg: RunConfig, seed: int) -> MlpHyper:
    h = cfg.hyper
    return MlpHyper(hidden=tuple(h["hidden"]), lr=h["lr"], epochs=h["epochs"], batch=h["batch"],
                    seed=seed, holdout=h["holdout"], shared=h["shared"])


def _init_policy(cfg: RunConfig, data: Dataset, X: np.ndarray) -> GaussianPolicy:
    """Gaussian at the best row (optionally of the first ``init_batch`` rows)."""
    k = cfg.hyper["init_batch"]
    sub = Dataset(X[:k], data.y[:k]) if 0 < k < data.n else Dataset(X, data.y)
    x0, _ = best_in_dataset(sub)
    return GaussianPolicy.from_std(x0, cfg.hyper["init_std"] * X.std(axis=0))


def _ascend(cfg: RunConfig, model, init: GaussianPolicy, seed: int, oracle=None, on_step=None):
    h = cfg.hyper
    return ascend_policy(model, init, h["ascent_steps"], h["ascent_lr"], h["ascent_batch"],
                         make_rng(seed, _ASCENT), learn_std=h["learn_std"], oracle=oracle,
                         optimizer=h["ascent_optimizer"], on_step=on_step)


def _discover(cfg: RunConfig, X, y):
    ph = estimate_pseudo_hessian(X, y)
    return edge_test(ph, cfg.hyper["alpha"], cfg.hyper["unit_sigma"])


# -- per-kind cells --------------------------------------------------------

def _quadratic_cycle(cfg, seed, method):
    bench = gen_quadratic_cycle(cfg.d)
    data = bench.sample(cfg.n, make_rng(seed, _DATA))
    if method == "best-in-dataset":
        x, _ = best_in_dataset(data)
        return [("regret", regret(x, bench))]
    # binary inputs fall outside the Gaussian discovery regime, so the
    # structured model uses the known cycle cliques
    cliques = bench.cliques if method == "fgm" else [tuple(range(cfg.d))]
    lam = cfg.hyper["ridge_lambda"]
    model = fit_onehot(data, cliques, None if lam < 0 else lam)
    x = argmax_discrete(model, bench.cardinalities, rng=make_rng(seed, _ASCENT))
    rows = [("regret", regret(x, bench))]
    if method == "fgm":
        rows.append(("sigma_hat", clique_correlation(model, data.X).sigma_hat))
    return rows


def _rbf_bench(cfg, seed) -> Benchmark:
    return gen_rbf_mixture(cfg.d, cfg.hyper["pattern"], seed)


def _rbf_discovery(cfg, seed, method):
    bench = _rbf_bench(cfg, seed)
    data = bench.sample(cfg.n, make_rng(seed, _DATA))
    g = _discover(cfg, data.X, data.y)
    return [("ged", ged(bench.graph, g)), ("n_edges", len(g.edges))]


def _rbf_optimize(cfg, seed, method):
    bench = _rbf_bench(cfg, seed)
    data = bench.sample(cfg.n, make_rng(seed, _DATA))
    mc = cfg.hyper["mc_samples"]
    if method == "best-in-dataset":
        _, y = best_in_dataset(data)
        return [("value", y)]
    if method == "rwr":
        pol = rwr_baseline(data, cfg.hyper["rwr_temperature"])
        return [("value", policy_value(pol, bench, mc, seed))]
    rows = []
    if method == "fgm":
        g = _discover(cfg, data.X, data.y)
        cliques = maximal_cliques(g)
        rows.append(("ged", ged(bench.graph, g)))
        model = fit_masked_mlp(data, cliques, _mlp_hyper(cfg, seed))
        if len(cliques) >= 2:
            rows.append(("sigma_hat", clique_correlation(model, data.X).sigma_hat))
    else:
        model = fit_full_mlp(data, _mlp_hyper(cfg, seed))
    init = _init_policy(cfg, data, data.X)
    pol, trace = _ascend(cfg, model, init, seed)
    sv = trace.surrogate_values
    rows += [("surrogate_init", sv[0]), ("surrogate_final", sv[-1]),
             ("value_init", policy_value(init, bench, mc, seed)),
             ("value", policy_value(pol, bench, mc, seed))]
    return rows


def _transformed(cfg, seed, method):
    base = _rbf_bench(cfg, seed)
    tb = transform_observable(base, seed)
    tmap = tb.transform
    data = tb.sample(cfg.n, make_rng(seed, _DATA))
    h = cfg.hyper
    n_designs = h["designs"]
    bad_steps = []
    rows = []

    if method == "naive-full":
        model = fit_full_mlp(data, _mlp_hyper(cfg, seed))
        init = _init_policy(cfg, data, data.X)

        def watch(step, X):
            if not tmap.valid(X).all():
                bad_steps.append(step)

        pol, _ = _ascend(cfg, model, init, seed, on_step=watch)
        designs = pol.sample(n_designs, make_rng(seed, _DESIGNS))
    else:
        d_z = h["d_z"] or tb.d
        vh = VaeHyper(hidden=tuple(h["vae_hidden"]), lr=h["vae_lr"], epochs=h["vae_epochs"],
                      batch=h["vae_batch"], seed=seed, noise=h["vae_noise"])
        ema = EmaPseudoHessian(d_z, h["ema_momentum"]) if h["interleaved_discovery"] else None

        def track(vae, idx):
            ema.update(vae.encode(data.X[idx]), data.y[idx])

        vae = train_vae(data.X, d_z, vh, on_batch=track if ema is not None else None)
        Z = vae.encode(data.X)
        wt = whiten_fit(Z)
        W = wt.apply(Z)
        latent = Dataset(W, data.y)
        if method == "vae-fgm":
            if ema is not None and ema.updates >= h["ema_burn_in"]:
                # tracked on unwhitened encodings during training
                g = edge_test(ema.result(), h["alpha"], h["unit_sigma"])
            else:
                g = _discover(cfg, W, data.y)
            rows.append(("ged", unlabeled_ged(tb.graph, g)))
            model = fit_masked_mlp(latent, maximal_cliques(g), _mlp_hyper(cfg, seed))
        else:
            model = fit_full_mlp(latent, _mlp_hyper(cfg, seed))
        init = _init_policy(cfg, latent, W)

        def to_obs(Wb):
            return vae.decode(wt.invert(Wb))

        def watch(step, Wb):
            if not tmap.valid(to_obs(Wb)).all():
                bad_steps.append(step)

        pol, _ = _ascend(cfg, model, init, seed, on_step=watch)
        designs = to_obs(pol.sample(n_designs, make_rng(seed, _DESIGNS)))

    ok = tmap.valid(designs)
    vals = tb.oracle(designs[ok]) if ok.any() else np.array([np.nan])
    rows += [("valid_fraction", float(ok.mean())), ("invalid_batches", len(bad_steps)),
             ("value", float(np.mean(vals)))]
    return rows


def _coverage(cfg, seed, method):
    bench = gen_quadratic_cycle(cfg.d)
    data = bench.sample(cfg.n, make_rng(seed, _DATA))
    card = bench.cardinalities
    flat = np.ravel_multi_index(tuple(data.X.T), card)
    p = np.bincount(flat, minlength=int(np.prod(card))).reshape(card) / data.n
    pi = point_mass(card, bench.optimum[0])
    rep = coverage_ratios(pi, p, bench.cliques)
    if method == "fgm":
        return [("coverage_clique", rep.clique_max)]
    return [("coverage_full", rep.full)]


def stein_quadratic(d: int, seed: int) -> np.ndarray:
    """Random Q for the Stein check; f(x) = x^T Q x has Hessian Q + Q^T."""
    return make_rng(seed, _STEIN).standard_normal((d, d))


def _stein(cfg, seed, method):
    Q = stein_quadratic(cfg.d, seed)
    X = make_rng(seed, _DATA).standard_normal((cfg.n, cfg.d))
    y = np.einsum("ni,ij,nj->n", X, Q, X)
    ph = estimate_pseudo_hessian(X, y)
    target = Q + Q.T
    iu = np.triu_indices(cfg.d, 1)
    z = np.abs(ph.H - target)[iu] * np.sqrt(ph.M) / ph.sigma[iu]
    return [("zscore_max", float(z.max())), ("violations", int(np.sum(z > 4.0)))]


CELLS = {
    "quadratic-cycle-regret": _quadratic_cycle,
    "rbf-discovery": _rbf_discovery,
    "rbf-optimize": _rbf_optimize,
    "transformed-pipeline": _transformed,
    "coverage-demo": _coverage,
    "stein-check": _stein,
}


def run_cell(cfg: RunConfig, seed: int, method: str) -> tuple[list[tuple], float]:
    """Rows for one (seed, method) cell plus its wall-clock seconds; errors become a row."""
    t0 = time.perf_counter()
    try:
        metrics = CELLS[cfg.kind](cfg, seed, method)
    except Exception as exc:  # one failing cell never kills the sweep
        metrics = [("error", f"{type(exc).__name__}: {exc}")]
    rows = [(cfg.kind, method, cfg.d, cfg.n, seed, m, format_value(v)) for m, v in metrics]
    return rows, time.perf_counter() - t0


def _run_cell_args(args):
    return run_cell(*args)


def plan(cfg: RunConfig, seed_offset: int = 0) -> list[tuple[int, str]]:
    return [(s + seed_offset, m) for s in cfg.seeds for m in cfg.methods]


def run_pipeline(cfg: RunConfig, out_dir=None, workers: Optional[int] = None, seed_offset: int = 0) -> int:
    """Execute every cell and write results.csv, timings.csv and meta.txt.

    Returns the number of failed cells.
    """
    out = Path(out_dir or cfg.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers or os.cpu_count() or 1
    cells = plan(cfg, seed_offset)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    n_err = 0
    tmp = out / "results.csv.partial"
    with open(tmp, "w", newline="") as fh, open(out / "timings.csv", "w", newline="") as th:
        w = csv.writer(fh, lineterminator="\n")
        tw = csv.writer(th, lineterminator="\n")
        w.writerow(HEADER)
        tw.writerow(("method", "seed", "seconds"))
        args = [(cfg, s, m) for s, m in cells]
        if workers > 1 and len(cells) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
                results: Iterable = ex.map(_run_cell_args, args)
                n_err = _write(results, cells, w, tw, fh)
        else:
            n_err = _write(map(_run_cell_args, args), cells, w, tw, fh)
    tmp.replace(out / "results.csv")
    finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
    (out / "meta.txt").write_text(_meta(cfg, workers, seed_offset, started, finished, n_err))
    return n_err


def _write(results, cells, w, tw, fh) -> int:
    n_err = 0
    for (seed, method), (rows, secs) in zip(cells, results):
        w.writerows(rows)
        fh.flush()
        tw.writerow((method, seed, f"{secs:.3f}"))
        n_err += any(r[5] == "error" for r in rows)
    return n_err


def _meta(cfg, workers, seed_offset, started, finished, n_err) -> str:
    lines = [
        f"fgmddo {__version__}",
        f"python {platform.python_version()} numpy {np.__version__} scipy {scipy.__version__}",
        f"platform {sys.platform}",
        f"started {started}",
        f"finished {finished}",
        f"workers {workers}",
        f"seed_offset {seed_offset}",
        f"failed_cells {n_err}",
        "resolved hyper: " + ", ".join(f"{k}={v}" for k, v in sorted(cfg.hyper.items())),
        "--- config ---",
        cfg.text.rstrip(),
    ]
    return "\n".join(lines) + "\n"
