"""Figure rendering: every experiment drops PNGs next to its metrics files."""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import ensure_dir


def _fig_path(run_dir: str, name: str) -> str:
    return os.path.join(ensure_dir(os.path.join(run_dir, "figures")), name)


def _save(fig, run_dir: str, name: str) -> str:
    path = _fig_path(run_dir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def training_curves(epoch_rows: list, run_dir: str) -> str:
    """Accuracy/loss/spike-count trajectories, one line per seed."""
    by_seed = defaultdict(list)
    for row in epoch_rows:
        by_seed[row["seed"]].append(row)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for seed, rows in sorted(by_seed.items()):
        rows = sorted(rows, key=lambda r: r["epoch"])
        ep = [r["epoch"] for r in rows]
        axes[0].plot(ep, [r["train_acc"] for r in rows], label=f"train s{seed}")
        axes[0].plot(ep, [r["test_acc"] for r in rows], "--", label=f"test s{seed}")
        axes[1].plot(ep, [r["train_loss"] for r in rows], label=f"s{seed}")
        axes[2].plot(ep, [r["mean_hidden_spikes"] for r in rows], label=f"s{seed}")
    axes[0].set_xlabel("epoch"); axes[0].set_ylabel("accuracy"); axes[0].legend(fontsize=7)
    axes[1].set_xlabel("epoch"); axes[1].set_ylabel("train loss")
    axes[2].set_xlabel("epoch"); axes[2].set_ylabel("hidden spikes / sample")
    fig.suptitle("training curves")
    return _save(fig, run_dir, "training_curves.png")


def latency_figure(rows: list, run_dir: str) -> str:
    """Accuracy vs readout horizon, one line per seed."""
    by_seed = defaultdict(list)
    for r in rows:
        by_seed[r["seed"]].append((r["restrict_t"], r["test_acc"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for seed, pts in sorted(by_seed.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"s{seed}")
    ax.set_xlabel("readout horizon (µs)"); ax.set_ylabel("test accuracy")
    ax.set_title("accuracy vs readout horizon"); ax.legend(fontsize=7)
    return _save(fig, run_dir, "latency_curve.png")


def decalib_figure(rows: list, run_dir: str) -> str:
    """Accuracy vs decalibration spread, one line per parameter group."""
    by_group = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.get("status", "ok") == "ok":
            by_group[r["group"]][r["sigma_d"]].append(r["test_acc"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for group, pts in sorted(by_group.items()):
        xs = sorted(pts)
        means = [sum(pts[x]) / len(pts[x]) for x in xs]
        ax.plot(xs, means, marker="o", label=group)
    ax.set_xlabel("decalibration spread σ_d"); ax.set_ylabel("test accuracy")
    ax.set_title("accuracy under decalibration (mean over seeds)"); ax.legend(fontsize=7)
    return _save(fig, run_dir, "decalibration.png")


def sparsity_figure(rows: list, run_dir: str) -> str:
    """Accuracy vs mean hidden spikes (log x), annotated with rho_b."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    pts = sorted(
        (r for r in rows if r.get("mean_spikes") == r.get("mean_spikes")),
        key=lambda r: r["mean_spikes"],
    )
    ax.plot([r["mean_spikes"] for r in pts], [r["test_acc"] for r in pts], marker="o")
    for r in pts:
        ax.annotate(f"ρ={r['rho_b']:g}", (r["mean_spikes"], r["test_acc"]), fontsize=6)
    if any(r["mean_spikes"] > 0 for r in pts):
        ax.set_xscale("log")
    ax.set_xlabel("hidden spikes / sample"); ax.set_ylabel("test accuracy")
    ax.set_title("accuracy vs activity (burst regularizer sweep)")
    return _save(fig, run_dir, "sparsity.png")


def silence_figure(rows: list, run_dir: str) -> str:
    """Test error vs silenced fraction, one line per dropout rate."""
    by_p = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.get("status", "ok") == "ok":
            by_p[r["dropout_p"]][r["fraction"]].append(r["test_err"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for p, pts in sorted(by_p.items()):
        xs = sorted(pts)
        means = [sum(pts[x]) / len(pts[x]) for x in xs]
        ax.plot(xs, means, marker="o", label=f"dropout {p:g}")
    ax.set_xlabel("silenced fraction of hidden units"); ax.set_ylabel("test error")
    ax.set_title("resilience to unit loss"); ax.legend(fontsize=7)
    return _save(fig, run_dir, "silence_ablation.png")
