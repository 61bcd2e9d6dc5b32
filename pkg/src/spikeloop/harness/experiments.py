"""Experiment orchestration: training runs, evaluation, and the four sweep
protocols (decalibration, sparsity, silencing, readout latency).

Layout: the output root gets a config echo and a summary CSV; every trained
point owns a nested run directory with its own config echo, metrics files,
checkpoint, and figures.  Sweep points run sequentially (each point already
parallelizes over samples); a failed point is recorded as an explicit error
row instead of aborting the sweep.
"""

from __future__ import annotations

import copy
import os

import numpy as np

from ..errors import ConfigError, DataMissingError, NumericalError
from ..rng import TAG_SILENCE, stream
from ..substrate import build_substrate, decalibrate, silence
from ..trainer import (
    evaluate,
    fit,
    latency_curve,
    load_checkpoint,
    save_checkpoint,
)
from .config import RunConfig, SWEEP_EXPERIMENTS, resolve_data_path
from .data import build_datasets
from .metrics import MetricsWriter, ensure_dir, write_csv
from . import report


def silence_mask(n_hidden: int, fraction: float, seed: int, rep: int = 0) -> np.ndarray:
    """Mask with round(fraction*n_hidden) units silenced, drawn without
    replacement from a dedicated stream."""
    if not 0 <= fraction < 1:
        raise ConfigError(f"silence fraction must be in [0, 1), got {fraction}")
    k = int(round(fraction * n_hidden))
    mask = np.zeros(n_hidden, dtype=bool)
    if k:
        idx = stream(seed, TAG_SILENCE, rep).choice(n_hidden, size=k, replace=False)
        mask[idx] = True
    return mask


def _build_substrate(rc: RunConfig, seed: int):
    sub = build_substrate(rc.substrate_config(seed), rc.neuron_targets())
    if rc.substrate.sigma_d > 0:
        sub = decalibrate(sub, rc.substrate.sigma_d, rc.substrate.decalib_groups, seed)
    if rc.substrate.silence_fraction > 0:
        silence(sub, silence_mask(sub.config.n_hidden, rc.substrate.silence_fraction, seed))
    return sub


def _point_config(rc: RunConfig, seed: int, **train_overrides) -> RunConfig:
    """A single-seed deep copy, optionally with train/loss fields replaced."""
    pt = copy.deepcopy(rc)
    pt.seeds = [seed]
    for key, value in train_overrides.items():
        section, _, name = key.partition(".")
        setattr(getattr(pt, section), name, value)
    return pt


def train_one(rc: RunConfig, seed: int, run_dir: str) -> dict:
    """Train a single seed into run_dir; returns the result summary.

    The returned dict carries the final-epoch metrics, the shadow weights,
    and the datasets, so callers (sweeps, ablations) can evaluate further
    without retraining.
    """
    ensure_dir(run_dir)
    pt = _point_config(rc, seed)
    echo = pt.echo_json()
    with open(os.path.join(run_dir, "config_echo.json"), "w", encoding="utf-8") as fh:
        fh.write(echo)
    train_ds, test_ds = build_datasets(rc, seed)
    sub = _build_substrate(rc, seed)
    cfg = rc.train_config(seed)
    with MetricsWriter(run_dir) as writer:
        weights, opt, history = fit(
            sub, train_ds, test_ds, cfg, log=writer.epoch_logger(seed)
        )
        final = history[-1]
        writer.record(
            "final",
            seed=seed,
            train_acc=final["train_acc"],
            test_acc=final["test_acc"],
            mean_hidden_spikes=final["mean_hidden_spikes"],
        )
        save_checkpoint(
            os.path.join(run_dir, "checkpoint.npz"), weights, opt, cfg.epochs, echo
        )
    report.training_curves([{"seed": seed, **row} for row in history], run_dir)
    return {
        "seed": seed,
        "train_acc": final["train_acc"],
        "test_acc": final["test_acc"],
        "mean_hidden_spikes": final["mean_hidden_spikes"],
        "history": history,
        "weights": weights,
        "substrate": sub,
        "train_ds": train_ds,
        "test_ds": test_ds,
        "config": cfg,
    }


def run_train(rc: RunConfig, out: str) -> list:
    rows = []
    all_epochs = []
    for seed in rc.seeds:
        res = train_one(rc, seed, os.path.join(out, f"seed{seed}"))
        rows.append(
            {
                "seed": seed,
                "train_acc": res["train_acc"],
                "test_acc": res["test_acc"],
                "mean_hidden_spikes": res["mean_hidden_spikes"],
            }
        )
        all_epochs.extend({"seed": seed, **r} for r in res["history"])
    write_csv(
        os.path.join(out, "summary.csv"),
        ("seed", "train_acc", "test_acc", "mean_hidden_spikes"),
        rows,
    )
    if len(rc.seeds) > 1:
        report.training_curves(all_epochs, out)
    return rows


def _load_weights_for(rc: RunConfig) -> dict:
    path = resolve_data_path(rc.checkpoint)
    if not os.path.exists(path):
        raise DataMissingError(f"checkpoint not found: {path}")
    weights, _opt, _epoch, _echo = load_checkpoint(path)
    return weights


def run_eval(rc: RunConfig, out: str) -> list:
    weights = _load_weights_for(rc)
    rows = []
    with MetricsWriter(out) as writer:
        for seed in rc.seeds:
            _train_ds, test_ds = build_datasets(rc, seed)
            sub = _build_substrate(rc, seed)
            res = evaluate(sub, weights, test_ds, rc.train_config(seed))
            row = {
                "seed": seed,
                "test_acc": res["accuracy"],
                "mean_hidden_spikes": res["mean_hidden_spikes"],
            }
            writer.record("eval", **row)
            rows.append(row)
    write_csv(
        os.path.join(out, "summary.csv"),
        ("seed", "test_acc", "mean_hidden_spikes"),
        rows,
    )
    return rows


def run_latency_sweep(rc: RunConfig, out: str) -> list:
    weights = _load_weights_for(rc)
    rows = []
    with MetricsWriter(out) as writer:
        for seed in rc.seeds:
            _train_ds, test_ds = build_datasets(rc, seed)
            sub = _build_substrate(rc, seed)
            grid = rc.sweep.restrict_t_grid
            if grid is None:
                grid = [test_ds.duration * f for f in np.linspace(0.1, 1.0, 10)]
            curve = latency_curve(sub, weights, test_ds, rc.train_config(seed), grid)
            for t, acc in curve:
                row = {"restrict_t": t, "seed": seed, "test_acc": acc}
                writer.record("latency_point", **row)
                rows.append(row)
    write_csv(
        os.path.join(out, "summary.csv"), ("restrict_t", "seed", "test_acc"), rows
    )
    report.latency_figure(rows, out)
    return rows


def run_decalib_sweep(rc: RunConfig, out: str) -> list:
    """Retrain at every (σ_d, parameter group, seed) grid point."""
    rows = []
    with MetricsWriter(out) as writer:
        for group in rc.sweep.groups:
            groups = (
                ["time_constants", "threshold_gap"] if group == "both" else [group]
            )
            for sigma_d in rc.sweep.sigma_d_grid:
                for seed in rc.seeds:
                    run_dir = os.path.join(out, group, f"sigma{sigma_d:g}", f"seed{seed}")
                    pt = _point_config(rc, seed)
                    pt.experiment = "train"
                    pt.substrate.sigma_d = float(sigma_d)
                    pt.substrate.decalib_groups = groups
                    row = {"sigma_d": float(sigma_d), "group": group, "seed": seed}
                    try:
                        res = train_one(pt, seed, run_dir)
                        row.update(test_acc=res["test_acc"], status="ok")
                    except NumericalError as exc:
                        row.update(test_acc=float("nan"), status="numerical_error")
                        writer.record("sweep_error", error=str(exc), **row)
                    writer.record("sweep_point", **row)
                    rows.append(row)
    write_csv(
        os.path.join(out, "summary.csv"),
        ("sigma_d", "group", "seed", "test_acc", "status"),
        rows,
    )
    report.decalib_figure(rows, out)
    return rows


def run_sparsity_sweep(rc: RunConfig, out: str) -> list:
    """Retrain at every (ρ_b, seed); fixed output schema."""
    rows = []
    with MetricsWriter(out) as writer:
        for rho_b in rc.sweep.rho_b_grid:
            for seed in rc.seeds:
                run_dir = os.path.join(out, f"rho{rho_b:g}", f"seed{seed}")
                pt = _point_config(rc, seed, **{"loss.rho_b": float(rho_b)})
                pt.experiment = "train"
                row = {"rho_b": float(rho_b), "seed": seed}
                try:
                    res = train_one(pt, seed, run_dir)
                    row.update(
                        test_acc=res["test_acc"], mean_spikes=res["mean_hidden_spikes"]
                    )
                    writer.record("sweep_point", status="ok", **row)
                except NumericalError as exc:
                    row.update(test_acc=float("nan"), mean_spikes=float("nan"))
                    writer.record(
                        "sweep_point", status="numerical_error", error=str(exc), **row
                    )
                rows.append(row)
    write_csv(
        os.path.join(out, "summary.csv"),
        ("rho_b", "seed", "test_acc", "mean_spikes"),
        rows,
    )
    report.sparsity_figure(rows, out)
    return rows


def run_silence_ablation(rc: RunConfig, out: str) -> list:
    """Train per dropout rate, then evaluate under growing silenced fractions."""
    rows = []
    with MetricsWriter(out) as writer:
        for dropout_p in rc.sweep.dropout_grid:
            for seed in rc.seeds:
                run_dir = os.path.join(out, f"dropout{dropout_p:g}", f"seed{seed}")
                pt = _point_config(rc, seed, **{"train.dropout_p": float(dropout_p)})
                pt.experiment = "train"
                try:
                    res = train_one(pt, seed, run_dir)
                except NumericalError as exc:
                    for fraction in rc.sweep.fractions:
                        row = {
                            "dropout_p": float(dropout_p),
                            "fraction": float(fraction),
                            "seed": seed,
                            "test_acc": float("nan"),
                            "test_err": float("nan"),
                            "status": "numerical_error",
                        }
                        writer.record("sweep_point", error=str(exc), **row)
                        rows.append(row)
                    continue
                for fraction in rc.sweep.fractions:
                    sub = build_substrate(rc.substrate_config(seed), rc.neuron_targets())
                    silence(
                        sub, silence_mask(sub.config.n_hidden, float(fraction), seed)
                    )
                    ev = evaluate(
                        sub, res["weights"], res["test_ds"], pt.train_config(seed)
                    )
                    row = {
                        "dropout_p": float(dropout_p),
                        "fraction": float(fraction),
                        "seed": seed,
                        "test_acc": ev["accuracy"],
                        "test_err": 1.0 - ev["accuracy"],
                        "status": "ok",
                    }
                    writer.record("sweep_point", **row)
                    rows.append(row)
    write_csv(
        os.path.join(out, "summary.csv"),
        ("dropout_p", "fraction", "seed", "test_acc", "test_err", "status"),
        rows,
    )
    report.silence_figure(rows, out)
    return rows


_RUNNERS = {
    "train": run_train,
    "eval": run_eval,
    "latency_sweep": run_latency_sweep,
    "decalib_sweep": run_decalib_sweep,
    "sparsity_sweep": run_sparsity_sweep,
    "silence_ablation": run_silence_ablation,
}


def run_experiment(rc: RunConfig, out: str | None = None) -> list:
    """Execute the configured experiment; returns its summary rows."""
    rc.validate()
    out = ensure_dir(out or rc.output_dir)
    with open(os.path.join(out, "config_echo.json"), "w", encoding="utf-8") as fh:
        fh.write(rc.echo_json())
    return _RUNNERS[rc.experiment](rc, out)
