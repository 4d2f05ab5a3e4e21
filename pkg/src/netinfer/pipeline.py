"""End-to-end runs: generate data, infer the network, evaluate, and sweep grids.

Every run lives in its own directory::

    trajectory.csv(.json)   observed data (normalised; noisy/smoothed if configured)
    truth.csv(.json)        clean normalised data for evaluation
    coupling.csv            true coupling matrix
    nodes.json              per-node system parameters
    c_hat/iter_NNN.csv      coupling estimate after every refit iteration
    run_log.csv             loss, rate and training error per iteration
    epsilon_c.csv           weight error per iteration (n_refit + 1 rows)
    model_init.bin, model.bin   local model after initialisation and at the end
    report.json, report_init.json, mi_curves.csv, weight_hist.csv
"""
import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import metrics
from .config import config_hash, grid_points, run_seeds, to_ini
from .dynsys import DiffusiveCoupling, make_model
from .errors import ConfigError, InferenceDiverged
from .mlp import LocalModel
from .netgen import generate as generate_network
from .netgen import load_matrix_csv, perturb_params, save_matrix_csv
from .preprocess import smooth_trajectory
from .regression import run_inference
from .simulate import (add_noise, downsample, initial_conditions, integrate_rk4,
                       load_trajectory, normalize, save_trajectory)

__all__ = ["simulate_data", "generate_run", "infer_run", "evaluate_run", "run_all",
           "reproduce", "worker_count"]


def _stamp(cfg):
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


def _write_csv(path, header, rows, cfg):
    """CSV with a ``# config_hash=..., seed=...`` line above the header row."""
    with open(path, "w", newline="") as fh:
        st = _stamp(cfg)
        fh.write(f"# config_hash={st['config_hash']}, seed={st['seed']}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    return repr(float(v))


def node_models(cfg, rng):
    base = make_model(cfg.system, **cfg.system_params)
    n = cfg.network.n_nodes
    if cfg.network.hetero_xi_alpha > 0:
        return perturb_params(base, cfg.network.hetero_xi_alpha, rng, n)
    return [base] * n


def simulate_data(cfg, run_index=0):
    """Draw the network and produce ``(models, C, observed, truth)`` in memory.

    The observation pipeline is: integrate at ``dt / oversample``, normalise,
    add noise, smooth, then keep every ``oversample``-th sample.
    """
    rngs = run_seeds(cfg.seed, run_index)
    models = node_models(cfg, rngs["network"])
    C = generate_network(cfg.network, rngs["network"])
    sim = cfg.simulate
    k = sim.oversample
    x0 = initial_conditions(models, rngs["initial"])
    fine = integrate_rk4(models, C, x0, sim.dt / k, sim.washout * k + (sim.n_steps - 1) * k + 1,
                         washout=sim.washout * k,
                         coupling=DiffusiveCoupling(models[0].coupled_component))
    clean = normalize(fine)
    obs = add_noise(clean, sim.noise_xi, rngs["noise"])
    if cfg.preprocess.spline_lambda is not None:
        obs = smooth_trajectory(obs, cfg.preprocess.spline_lambda)
    return models, C, downsample(obs, k), downsample(clean, k)


def generate_run(cfg, out_dir, run_index=0):
    """Write the data files of one run into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    models, C, observed, truth = simulate_data(cfg, run_index)
    meta = {**_stamp(cfg), "run_index": run_index, "system": cfg.system}
    observed.meta.update(meta)
    truth.meta.update(meta)
    save_trajectory(out / "trajectory.csv", observed)
    save_trajectory(out / "truth.csv", truth)
    save_matrix_csv(out / "coupling.csv", C, _stamp(cfg))
    with open(out / "nodes.json", "w") as fh:
        json.dump({**meta, "params": [m.params for m in models]}, fh, indent=2, sort_keys=True,
                  default=float)
    with open(out / "config.ini", "w") as fh:
        fh.write(to_ini(cfg))
    return out


def _load_models(run_dir, cfg):
    path = Path(run_dir) / "nodes.json"
    if not path.exists():
        return None
    with open(path) as fh:
        nodes = json.load(fh)
    return [make_model(cfg.system, **p) for p in nodes["params"]]


def _require(path):
    if not Path(path).exists():
        raise ConfigError(f"missing input file {path}")
    return path


def infer_run(cfg, run_dir, run_index=0):
    """Run the regression on ``run_dir/trajectory.csv`` and write its outputs.

    Partial outputs are written before :class:`InferenceDiverged` propagates.
    """
    run = Path(run_dir)
    traj = load_trajectory(_require(run / "trajectory.csv"))
    c_true = None
    if (run / "coupling.csv").exists():
        c_true = load_matrix_csv(run / "coupling.csv").weights
    rngs = run_seeds(cfg.seed, run_index)
    (run / "c_hat").mkdir(exist_ok=True)
    coupling = DiffusiveCoupling(make_model(cfg.system).coupled_component)
    history = []

    def on_record(rec, state):
        history.append(rec)
        save_matrix_csv(run / "c_hat" / f"iter_{rec.iteration:03d}.csv", rec.c_hat, _stamp(cfg))
        if rec.iteration == 0:
            state.model.save(run / "model_init.bin", _stamp(cfg))
        if cfg.save_checkpoints:
            state.model.save(run / "c_hat" / f"model_{rec.iteration:03d}.bin", _stamp(cfg))

    result = None
    try:
        result = run_inference(traj, cfg.regression, cfg.train, rngs["inference"],
                               coupling, callback=on_record)
    except InferenceDiverged as exc:
        result = exc.result
        raise
    finally:
        if result is not None:
            _write_logs(cfg, run, history, c_true)
            result.state.model.save(run / "model.bin", _stamp(cfg))
    return result


def _write_logs(cfg, run, history, c_true):
    rows = [[r.iteration, _num(r.loss), _num(r.lr_scale), _num(r.train_mse), _num(r.grad_norm)]
            for r in history]
    _write_csv(run / "run_log.csv", ["iteration", "loss", "lr_scale", "train_mse", "grad_norm"],
               rows, cfg)
    if c_true is not None and np.any(c_true):
        _write_csv(run / "epsilon_c.csv", ["iteration", "epsilon_C"],
                   [[r.iteration, _num(metrics.weight_error(r.c_hat, c_true))] for r in history],
                   cfg)


def evaluate_run(cfg, run_dir, run_index=0):
    """Score the final model of a run against its clean data; returns the report."""
    run = Path(run_dir)
    truth = load_trajectory(_require(run / "truth.csv"))
    c_hat = load_matrix_csv(_require(run / "c_hat" / f"iter_{_last_iter(run):03d}.csv")).weights
    fhat = LocalModel.load(_require(run / "model.bin"))
    c_true = None
    if (run / "coupling.csv").exists():
        c_true = load_matrix_csv(run / "coupling.csv").weights
    if c_true is not None and not np.any(c_true):
        c_true = None
    models = _load_models(run, cfg)
    coupling = DiffusiveCoupling(make_model(cfg.system).coupled_component)
    rep = metrics.evaluate(fhat, c_hat, truth, models, c_true, cfg.metrics,
                           run_seeds(cfg.seed, run_index)["metrics"],
                           cfg.simulate.oversample, coupling)
    rep.config.update(_stamp(cfg))
    _save_report(rep, run / "report.json")
    metrics.save_curves_csv(run / "mi_curves.csv", rep)
    counts, edges = metrics.weight_histogram(c_hat, cfg.metrics.hist_bins)
    _write_csv(run / "weight_hist.csv", ["bin_lo", "bin_hi", "count"],
               [[_num(a), _num(b), int(c)] for a, b, c in zip(edges[:-1], edges[1:], counts)], cfg)
    if (run / "model_init.bin").exists():
        init_cfg = metrics.MetricsConfig(**{**cfg.metrics.__dict__, "n_control": 0})
        init = metrics.evaluate(LocalModel.load(run / "model_init.bin"), np.zeros_like(c_hat),
                                truth, models, c_true, init_cfg,
                                run_seeds(cfg.seed, run_index)["metrics"],
                                cfg.simulate.oversample, coupling)
        init.config.update(_stamp(cfg))
        _save_report(init, run / "report_init.json")
    return rep


def _last_iter(run):
    its = sorted(int(p.stem.split("_")[1]) for p in (run / "c_hat").glob("iter_*.csv"))
    if not its:
        raise ConfigError(f"no coupling snapshots in {run / 'c_hat'}")
    return its[-1]


def _save_report(rep, path):
    rep.save(path)
    with open(path) as fh:
        jsonschema.validate(json.load(fh), metrics.REPORT_SCHEMA)


def run_all(cfg, run_dir, run_index=0):
    """Generate, infer and evaluate one run; returns a summary row."""
    generate_run(cfg, run_dir, run_index)
    try:
        infer_run(cfg, run_dir, run_index)
    except InferenceDiverged as exc:
        return {"status": "diverged", "message": str(exc)}
    rep = evaluate_run(cfg, run_dir, run_index)
    init = {}
    if (Path(run_dir) / "report_init.json").exists():
        with open(Path(run_dir) / "report_init.json") as fh:
            init = json.load(fh)
    return {
        "status": "ok", "epsilon_C": rep.epsilon_C,
        "epsilon_C_thresholded": rep.epsilon_C_thresholded, "t_p": rep.t_p,
        "S_local": rep.S_local_total, "S_combined": rep.S_combined,
        "S_local_init": init.get("S_local_total"), "S_combined_init": init.get("S_combined"),
        "t_p_init": init.get("t_p"),
        "control_t_p": _median(rep.control_t_p),
        "control_S_local": _median(rep.control_S_local),
        "control_S_combined": _median(rep.control_S_combined),
    }


def _median(vals):
    return float(np.median(vals)) if vals else None


def worker_count():
    """Worker pool size from ``NETINFER_THREADS`` (default 1)."""
    raw = os.environ.get("NETINFER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NETINFER_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("NETINFER_THREADS must be >= 1")
    return n


def _job(args):
    label, cfg, index, run_dir = args
    row = run_all(cfg, run_dir, index)
    return label, index, row


SUMMARY_COLUMNS = ["label", "run_index", "status", "epsilon_C", "epsilon_C_thresholded", "t_p",
                   "S_local", "S_combined", "S_local_init", "S_combined_init", "t_p_init",
                   "control_t_p", "control_S_local", "control_S_combined"]


def reproduce(cfg, out_dir, workers=None):
    """Run every grid point of ``cfg`` and write ``summary.csv``.

    Runs are distributed over a process pool; results are collected in grid
    order so the summary does not depend on the worker count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.ini", "w") as fh:
        fh.write(to_ini(cfg))
    jobs = [(label, pcfg, idx, out / label) for label, pcfg, idx in grid_points(cfg)]
    workers = workers or worker_count()
    if workers == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    rows = []
    for label, index, row in results:
        rows.append([label, index] + [_cell(row.get(c)) for c in SUMMARY_COLUMNS[2:]])
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows, cfg)
    return results


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v
