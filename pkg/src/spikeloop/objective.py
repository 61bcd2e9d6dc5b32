"""Task losses and activity regularizers, with their seed adjoints.

Every operation returns (value, adjoints): the scalar loss term and the
derivative of that term with respect to the quantity it reads — readout
trace samples for the task loss and amplitude penalty, binned hidden spike
values for the burst and rate regularizers.  The adjoint arrays are exactly
what the graph's backward pass expects as seeds, and each term's adjoint is
the true derivative of its value, so sums of terms remain finite-difference
consistent.

Spike-count regularizers differentiate through the spike *variables*: the
derivative of (sum_t S[t])^2 is the same for every bin of the neuron whether
or not it spiked there, and the surrogate pathway decides how much of that
pressure reaches the membrane at each bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MODE_MAX = "max_over_time"
MODE_SUM = "sum_over_time"
MODES = (MODE_MAX, MODE_SUM)


@dataclass(frozen=True)
class LossConfig:
    """Loss composition; a strength of 0 disables that term."""

    mode: str = MODE_MAX
    rho_a: float = 4e-4     # amplitude penalty strength
    rho_b: float = 0.005    # burst (per-neuron squared count) strength
    rho_r: float = 0.0      # rate (total count above threshold) strength
    theta_r: float = 600.0  # rate threshold, spikes per sample

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"loss mode must be one of {MODES}, got {self.mode!r}")
        if min(self.rho_a, self.rho_b, self.rho_r) < 0:
            raise ConfigError("regularizer strengths must be >= 0")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def logits_of(output_traces: np.ndarray, mode: str) -> np.ndarray:
    """Per-class logits: max or sum of each readout trace over time."""
    if output_traces.ndim != 2 or output_traces.shape[0] == 0:
        raise ConfigError("output traces must be a non-empty [T, n_out] matrix")
    if mode == MODE_MAX:
        return output_traces.max(axis=0)
    if mode == MODE_SUM:
        return output_traces.sum(axis=0)
    raise ConfigError(f"unknown loss mode {mode!r}")


def task_loss(output_traces: np.ndarray, label: int, mode: str):
    """Softmax cross-entropy on max- or sum-over-time logits.

    Adjoints land on the argmax sample of each class (max mode, earliest
    sample on ties) or uniformly on every sample (sum mode).
    """
    traces = np.asarray(output_traces, dtype=np.float64)
    logits = logits_of(traces, mode)
    n_out = logits.shape[0]
    if not 0 <= label < n_out:
        raise ConfigError(f"label {label} out of range [0, {n_out})")
    p = _softmax(logits)
    loss = -float(np.log(p[label]))
    d_logits = p.copy()
    d_logits[label] -= 1.0
    adj = np.zeros_like(traces)
    if mode == MODE_MAX:
        t_star = traces.argmax(axis=0)
        adj[t_star, np.arange(n_out)] = d_logits
    else:
        adj[:] = d_logits[None, :]
    return loss, adj


def amplitude_penalty(output_traces: np.ndarray, rho_a: float):
    """rho_a * mean_i (max_t V_i[t])^2, discouraging readout saturation."""
    traces = np.asarray(output_traces, dtype=np.float64)
    if traces.ndim != 2 or traces.shape[0] == 0:
        raise ConfigError("output traces must be a non-empty [T, n_out] matrix")
    n_out = traces.shape[1]
    m = traces.max(axis=0)
    value = rho_a * float(np.mean(np.square(m)))
    adj = np.zeros_like(traces)
    adj[traces.argmax(axis=0), np.arange(n_out)] = 2.0 * rho_a * m / n_out
    return value, adj


def burst_regularizer(hidden_spikes: np.ndarray, rho_b: float, n_hidden: int | None = None):
    """rho_b/N_H * sum_i (count_i)^2 on binned hidden spikes [T, n_hidden]."""
    s = np.asarray(hidden_spikes, dtype=np.float64)
    if s.ndim != 2:
        raise ConfigError("hidden spikes must be a [T, n_hidden] matrix")
    n_h = s.shape[1] if n_hidden is None else n_hidden
    counts = s.sum(axis=0)
    value = rho_b * float(np.square(counts).sum()) / n_h
    adj = np.broadcast_to(2.0 * rho_b * counts / n_h, s.shape).copy()
    return value, adj


def rate_regularizer(hidden_spikes: np.ndarray, rho_r: float, theta_r: float):
    """One-sided penalty rho_r * max(0, total - theta_r)^2 on the total count."""
    s = np.asarray(hidden_spikes, dtype=np.float64)
    if s.ndim != 2:
        raise ConfigError("hidden spikes must be a [T, n_hidden] matrix")
    excess = s.sum() - theta_r
    if excess <= 0:
        return 0.0, np.zeros_like(s)
    value = rho_r * float(excess) ** 2
    adj = np.full_like(s, 2.0 * rho_r * excess)
    return value, adj


def combined_loss(output_traces: np.ndarray, hidden_spikes: np.ndarray, label: int, cfg: LossConfig):
    """Total loss and seed adjoints (on traces and on spikes) plus parts."""
    cfg.validate()
    total, seed_v = task_loss(output_traces, label, cfg.mode)
    parts = {"task": total}
    seed_s = np.zeros_like(np.asarray(hidden_spikes, dtype=np.float64))
    if cfg.rho_a > 0:
        v, adj = amplitude_penalty(output_traces, cfg.rho_a)
        parts["amplitude"] = v
        total += v
        seed_v = seed_v + adj
    if cfg.rho_b > 0:
        v, adj = burst_regularizer(hidden_spikes, cfg.rho_b)
        parts["burst"] = v
        total += v
        seed_s += adj
    if cfg.rho_r > 0:
        v, adj = rate_regularizer(hidden_spikes, cfg.rho_r, cfg.theta_r)
        parts["rate"] = v
        total += v
        seed_s += adj
    return total, seed_v, seed_s, parts
