"""Metrics emission: line-delimited JSON records plus CSV summaries.

Column names are part of the tool's contract and stay stable:

  metrics.csv (train runs, one row per epoch):
      seed, epoch, train_loss, train_acc, test_acc, mean_hidden_spikes, eta_t
  train summary.csv:      seed, train_acc, test_acc, mean_hidden_spikes
  eval summary.csv:       seed, test_acc, mean_hidden_spikes
  sparsity summary.csv:   rho_b, seed, test_acc, mean_spikes
  decalib summary.csv:    sigma_d, group, seed, test_acc, status
  silence summary.csv:    dropout_p, fraction, seed, test_acc, test_err, status
  latency summary.csv:    restrict_t, seed, test_acc

metrics.jsonl mirrors every row as one JSON object per line (sorted keys)
and additionally records failed sweep points as {"status": <error class>}
rows, so no configuration is ever silently skipped.  Nothing time- or
host-dependent is written: with fixed seeds, re-running a config reproduces
these files byte-for-byte regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import os

EPOCH_COLUMNS = (
    "seed",
    "epoch",
    "train_loss",
    "train_acc",
    "test_acc",
    "mean_hidden_spikes",
    "eta_t",
)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path: str, columns, rows) -> None:
    """rows: iterables or dicts; dicts are projected onto `columns`."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c, "") for c in columns]
            writer.writerow(list(row))


class MetricsWriter:
    """Single owner of one run directory's metrics files."""

    def __init__(self, run_dir: str):
        ensure_dir(run_dir)
        self.run_dir = run_dir
        self._jsonl = open(
            os.path.join(run_dir, "metrics.jsonl"), "w", encoding="utf-8", newline="\n"
        )
        self._epoch_rows = []

    def record(self, kind: str, **fields) -> None:
        self._jsonl.write(json.dumps({"kind": kind, **fields}, sort_keys=True) + "\n")
        self._jsonl.flush()

    def epoch_row(self, seed: int, row: dict) -> None:
        full = {"seed": seed, **row}
        self.record("epoch", **full)
        self._epoch_rows.append(full)

    def epoch_logger(self, seed: int):
        return lambda row: self.epoch_row(seed, row)

    def close(self) -> None:
        if self._epoch_rows:
            write_csv(
                os.path.join(self.run_dir, "metrics.csv"), EPOCH_COLUMNS, self._epoch_rows
            )
        self._jsonl.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
