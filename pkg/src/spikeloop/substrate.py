"""Virtual analog substrate: mismatched LIF neurons with quantized synapses.

The substrate emulates a small analog neuromorphic system in normalized model
units (leak potential 0, nominal threshold gap 1).  Dynamics per neuron:

    tau_m dV/dt = -(V - v_leak) + tau_m * I / dt_sample
    tau_s dI/dt = -I,   I jumps by w on each presynaptic spike

integrated at substep delta = dt_sample/substeps with exact exponential decay
factors and a first-order drive term:

    V[n+1] = v_leak + (V[n] - v_leak) e^(-delta/tau_m) + (delta/dt_sample) I[n]
    I[n+1] = I[n] e^(-delta/tau_s) + sum_j w_j S_j[n]

dt_sample acts as a fixed gain constant of the chip: with substeps = 1 the
update reduces exactly to the host model's per-step recursion, and finer
substepping integrates the same continuous physics with less error.  Spiking
units emit an event and reset when V >= v_thresh at a substep boundary;
readout units integrate without a threshold.  Membrane traces are sampled
every dt_sample (CADC-style), optionally with additive readout noise.

Per-sample noise comes from counter-based streams, so emulations of distinct
samples are deterministic and may run on any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import lif_substep_loop
from .errors import ConfigError
from .rng import TAG_DECALIB, stream

GROUP_TIME_CONSTANTS = "time_constants"
GROUP_THRESHOLD_GAP = "threshold_gap"
DECALIB_GROUPS = (GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP)

# Nudge for grid binning: events that land exactly on a grid boundary (the
# normal case when substeps align with the grid) must bin deterministically
# despite float rounding of t = n*delta.
_BIN_EPS = 1e-9


def grid_bin(times_us: np.ndarray, step_us: float) -> np.ndarray:
    """Map event times to grid bins: floor(t/step), robust at boundaries."""
    return np.floor(np.asarray(times_us, dtype=np.float64) / step_us + _BIN_EPS).astype(
        np.int64
    )


@dataclass(frozen=True)
class NeuronParams:
    """Calibration targets for one analog neuron population (model units, µs)."""

    tau_m: float = 5.7
    tau_s: float = 6.0
    v_leak: float = 0.0
    v_thresh: float = 1.0
    v_reset: float | None = None  # None: reset to v_leak
    noise_sigma: float = 0.02     # membrane noise density, units per sqrt(µs)
    is_spiking: bool = True
    refrac: float = 0.0           # refractory time, µs (0 disables)

    def validate(self) -> None:
        if not (self.tau_m > 0 and self.tau_s > 0):
            raise ConfigError(f"time constants must be positive: tau_m={self.tau_m} tau_s={self.tau_s}")
        if self.is_spiking and not (self.v_thresh > self.v_leak):
            raise ConfigError(f"spiking units need v_thresh > v_leak ({self.v_thresh} <= {self.v_leak})")
        if self.noise_sigma < 0 or self.refrac < 0:
            raise ConfigError("noise_sigma and refrac must be >= 0")

    @property
    def reset_value(self) -> float:
        return self.v_leak if self.v_reset is None else self.v_reset


@dataclass(frozen=True)
class SubstrateConfig:
    """Topology and fixed chip properties."""

    n_in: int
    n_hidden: int
    n_out: int
    recurrent: bool = False
    dt_sample: float = 1.7       # µs between trace samples
    substeps: int = 10           # integration substeps per dt_sample
    fan_in_limit: int = 256
    weight_max: int = 63
    seed: int = 0
    trace_noise_sigma: float = 0.01  # readout noise on sampled traces

    def validate(self) -> None:
        if min(self.n_in, self.n_hidden, self.n_out) < 1:
            raise ConfigError("layer sizes must be >= 1")
        if self.dt_sample <= 0 or self.substeps < 1:
            raise ConfigError("dt_sample must be > 0 and substeps >= 1")
        if self.trace_noise_sigma < 0:
            raise ConfigError("trace_noise_sigma must be >= 0")
        fan_hidden = self.n_in + (self.n_hidden if self.recurrent else 0)
        if fan_hidden > self.fan_in_limit:
            raise ConfigError(
                f"hidden layer fan-in {fan_hidden} exceeds limit {self.fan_in_limit}"
            )
        if self.n_hidden > self.fan_in_limit:
            raise ConfigError(
                f"output layer fan-in {self.n_hidden} exceeds limit {self.fan_in_limit}"
            )

    @property
    def delta(self) -> float:
        """Internal integration step, µs."""
        return self.dt_sample / self.substeps


@dataclass(frozen=True)
class QuantizedWeights:
    """Signed integer synapse matrix plus the scale mapping it to real weights."""

    values: np.ndarray  # integer matrix
    scale: float

    def real(self) -> np.ndarray:
        return np.ascontiguousarray(self.values.astype(np.float64) * self.scale)


@dataclass(frozen=True)
class SpikeEvents:
    """Parallel arrays of (unit, time µs) events."""

    unit: np.ndarray
    time: np.ndarray

    def __len__(self) -> int:
        return int(self.unit.shape[0])

    @staticmethod
    def empty() -> "SpikeEvents":
        return SpikeEvents(np.zeros(0, np.int32), np.zeros(0, np.float64))


@dataclass(frozen=True)
class EmulationRecord:
    """Observables of one emulation run."""

    input_spikes: SpikeEvents
    hidden_spikes: SpikeEvents   # times at substep resolution
    output_spikes: SpikeEvents   # empty while readout units are non-spiking
    hidden_traces: np.ndarray    # [T, n_hidden], sampled every dt_sample
    output_traces: np.ndarray    # [T, n_out]
    duration: float              # µs
    final_state: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


class Substrate:
    """A configured virtual chip.  Immutable during emulate().

    Mutating operations (set_weights, silence) are only legal between
    emulations; emulate() itself touches no shared state.
    """

    def __init__(self, config: SubstrateConfig, targets: NeuronParams):
        config.validate()
        targets.validate()
        self.config = config
        self.targets = targets
        nh, no = config.n_hidden, config.n_out
        # Actual per-neuron parameters; equal to targets until decalibrated.
        self.tau_m_h = np.full(nh, targets.tau_m)
        self.tau_s_h = np.full(nh, targets.tau_s)
        self.v_thresh_h = np.full(nh, targets.v_thresh)
        self.tau_m_o = np.full(no, targets.tau_m)
        self.tau_s_o = np.full(no, targets.tau_s)
        self.pathological = np.zeros(nh, bool)  # supra-threshold rest
        self.silence_mask = np.zeros(nh, bool)
        self.w_in: QuantizedWeights | None = None
        self.w_rec: QuantizedWeights | None = None
        self.w_out: QuantizedWeights | None = None
        self._w_in_real = np.zeros((config.n_in, nh))
        self._w_rec_real = np.zeros((nh, nh))
        self._w_out_real = np.zeros((nh, no))

    def _copy(self) -> "Substrate":
        dup = Substrate(self.config, self.targets)
        for name in ("tau_m_h", "tau_s_h", "v_thresh_h", "tau_m_o", "tau_s_o",
                     "pathological", "silence_mask",
                     "_w_in_real", "_w_rec_real", "_w_out_real"):
            setattr(dup, name, getattr(self, name).copy())
        dup.w_in, dup.w_rec, dup.w_out = self.w_in, self.w_rec, self.w_out
        return dup

    def rest_state(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        nh, no = self.config.n_hidden, self.config.n_out
        return (
            np.full(nh, self.targets.v_leak),
            np.zeros(nh),
            np.full(no, self.targets.v_leak),
            np.zeros(no),
        )


def build_substrate(config: SubstrateConfig, targets: NeuronParams) -> Substrate:
    """Bring up a calibrated substrate: parameters at target, weights zero."""
    return Substrate(config, targets)


def decalibrate(
    substrate: Substrate,
    sigma_d: float,
    groups: set[str] | frozenset[str] | tuple[str, ...] | list[str],
    seed: int,
) -> Substrate:
    """Redraw per-neuron parameters around their targets.

    Each parameter in a selected group is drawn from Normal(target,
    sigma_d*target).  Non-positive time constants are resampled; a threshold
    gap drawn <= 0 (supra-threshold rest) is permitted and flagged.
    """
    groups = set(groups)
    if sigma_d < 0:
        raise ConfigError("sigma_d must be >= 0")
    if not groups:
        raise ConfigError("decalibrate needs at least one parameter group")
    unknown = groups - set(DECALIB_GROUPS)
    if unknown:
        raise ConfigError(f"unknown decalibration groups: {sorted(unknown)}")

    out = substrate._copy()
    t = substrate.targets

    def redraw_positive(rng: np.random.Generator, target: float, n: int) -> np.ndarray:
        vals = rng.normal(target, sigma_d * target, n)
        while True:
            bad = vals <= 0
            if not bad.any():
                return vals
            vals[bad] = rng.normal(target, sigma_d * target, int(bad.sum()))

    if GROUP_TIME_CONSTANTS in groups:
        rng = stream(seed, TAG_DECALIB, 0)
        nh, no = substrate.config.n_hidden, substrate.config.n_out
        out.tau_m_h = redraw_positive(rng, t.tau_m, nh)
        out.tau_s_h = redraw_positive(rng, t.tau_s, nh)
        out.tau_m_o = redraw_positive(rng, t.tau_m, no)
        out.tau_s_o = redraw_positive(rng, t.tau_s, no)
    if GROUP_THRESHOLD_GAP in groups:
        rng = stream(seed, TAG_DECALIB, 1)
        gap_target = t.v_thresh - t.v_leak
        gaps = rng.normal(gap_target, sigma_d * gap_target, substrate.config.n_hidden)
        out.v_thresh_h = t.v_leak + gaps
        out.pathological = gaps <= 0
    return out


def _check_quantized(q: QuantizedWeights, shape: tuple[int, int], name: str, wmax: int) -> None:
    if q.values.shape != shape:
        raise ConfigError(f"{name} shape {q.values.shape} != expected {shape}")
    if not np.issubdtype(q.values.dtype, np.integer):
        raise ConfigError(f"{name} values must be integers")
    if np.abs(q.values).max(initial=0) > wmax:
        raise ConfigError(f"{name} entries exceed weight_max={wmax}")
    if not np.isfinite(q.scale):
        raise ConfigError(f"{name} scale must be finite")


def set_weights(
    substrate: Substrate,
    w_in: QuantizedWeights,
    w_rec: QuantizedWeights | None,
    w_out: QuantizedWeights,
) -> None:
    """Upload quantized weights; emulations then use values*scale."""
    cfg = substrate.config
    _check_quantized(w_in, (cfg.n_in, cfg.n_hidden), "w_in", cfg.weight_max)
    _check_quantized(w_out, (cfg.n_hidden, cfg.n_out), "w_out", cfg.weight_max)
    if cfg.recurrent:
        if w_rec is None:
            raise ConfigError("recurrent substrate needs w_rec")
        _check_quantized(w_rec, (cfg.n_hidden, cfg.n_hidden), "w_rec", cfg.weight_max)
        if np.any(np.diag(w_rec.values) != 0):
            # self-connections are excluded from the topology
            vals = w_rec.values.copy()
            np.fill_diagonal(vals, 0)
            w_rec = QuantizedWeights(vals, w_rec.scale)
        substrate.w_rec = w_rec
        substrate._w_rec_real = w_rec.real()
    elif w_rec is not None:
        raise ConfigError("w_rec given but substrate is not recurrent")
    substrate.w_in = w_in
    substrate.w_out = w_out
    substrate._w_in_real = w_in.real()
    substrate._w_out_real = w_out.real()


def silence(substrate: Substrate, mask: np.ndarray) -> None:
    """Clamp masked hidden units to v_leak; they never spike.  Reversible."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (substrate.config.n_hidden,):
        raise ConfigError(f"silence mask shape {mask.shape} != ({substrate.config.n_hidden},)")
    substrate.silence_mask = mask.copy()


def _as_events(inputs, n_in: int, duration: float) -> SpikeEvents:
    if isinstance(inputs, SpikeEvents):
        ch, ts = inputs.unit, inputs.time
    else:
        arr = np.asarray(list(inputs), dtype=np.float64).reshape(-1, 2)
        ch = arr[:, 0].astype(np.int32)
        ts = arr[:, 1].astype(np.float64)
        if arr.size and np.any(arr[:, 0] != ch):
            raise ConfigError("input channels must be integers")
    if len(ch) and (ch.min() < 0 or ch.max() >= n_in):
        raise ConfigError(f"input channel out of range [0, {n_in})")
    if len(ts) and (ts.min() < 0 or ts.max() >= duration):
        raise ConfigError(f"input spike time outside [0, {duration}) µs")
    return SpikeEvents(np.asarray(ch, np.int32), np.asarray(ts, np.float64))


def emulate(
    substrate: Substrate,
    inputs,
    duration: float,
    *,
    record_traces: bool = True,
    inter_sample_reset: bool = True,
    seed: int = 0,
    initial_state: tuple | None = None,
) -> EmulationRecord:
    """Run the substrate for `duration` µs on the given input events.

    `seed` selects the per-sample noise stream (combined with the substrate's
    own config.seed).  With inter_sample_reset (the default) the run starts
    at rest; otherwise it continues from `initial_state` (e.g. the
    final_state of a previous record) to emulate back-to-back streaming.
    """
    cfg = substrate.config
    if duration <= 0:
        raise ConfigError("duration must be > 0")
    events = _as_events(inputs, cfg.n_in, duration)

    t_steps = int(math.ceil(duration / cfg.dt_sample - _BIN_EPS))
    t_sub = t_steps * cfg.substeps
    delta = cfg.delta

    if inter_sample_reset or initial_state is None:
        v_h, i_h, v_o, i_o = substrate.rest_state()
    else:
        v_h, i_h, v_o, i_o = (np.array(x, dtype=np.float64) for x in initial_state)

    order = np.argsort(events.time, kind="stable") if len(events) else np.zeros(0, np.int64)
    in_bin = grid_bin(events.time[order], delta) if len(events) else np.zeros(0, np.int64)
    np.minimum(in_bin, t_sub - 1, out=in_bin)
    in_ch = events.unit[order].astype(np.int64)

    nh, no = cfg.n_hidden, cfg.n_out
    sigma = substrate.targets.noise_sigma
    # One counter-based stream per (substrate, sample): independent of how
    # many other samples run concurrently and in what order.
    rng = np.random.Generator(
        np.random.Philox(
            key=np.array([cfg.seed & (2**64 - 1), seed & (2**64 - 1)], dtype=np.uint64)
        )
    )
    if sigma > 0:
        scale = sigma * math.sqrt(delta)
        noise_h = rng.normal(0.0, scale, (t_sub, nh))
        noise_o = rng.normal(0.0, scale, (t_sub, no))
    else:
        noise_h = np.zeros((0, nh))
        noise_o = np.zeros((0, no))

    n_rec = t_steps if record_traces else 0
    traces_h = np.zeros((n_rec, nh))
    traces_o = np.zeros((n_rec, no))
    cap = nh * t_sub
    spk_unit = np.zeros(cap, np.int32)
    spk_step = np.zeros(cap, np.int64)

    refrac_steps = int(round(substrate.targets.refrac / delta))
    n_spk = lif_substep_loop(
        t_sub,
        cfg.substeps,
        1.0 / cfg.substeps,
        np.exp(-delta / substrate.tau_m_h),
        np.exp(-delta / substrate.tau_s_h),
        substrate.v_thresh_h,
        np.full(nh, substrate.targets.v_leak),
        np.full(nh, substrate.targets.reset_value),
        np.full(nh, refrac_steps, np.int64),
        np.full(nh, substrate.targets.is_spiking, np.bool_),
        substrate.silence_mask,
        np.exp(-delta / substrate.tau_m_o),
        np.exp(-delta / substrate.tau_s_o),
        np.full(no, substrate.targets.v_leak),
        substrate._w_in_real,
        substrate._w_rec_real,
        substrate._w_out_real,
        cfg.recurrent,
        in_bin,
        in_ch,
        noise_h,
        noise_o,
        v_h, i_h, v_o, i_o,
        traces_h, traces_o,
        spk_unit, spk_step,
    )

    if record_traces and cfg.trace_noise_sigma > 0:
        traces_h = traces_h + rng.normal(0.0, cfg.trace_noise_sigma, traces_h.shape)
        traces_o = traces_o + rng.normal(0.0, cfg.trace_noise_sigma, traces_o.shape)

    hidden = SpikeEvents(
        spk_unit[:n_spk].copy(), spk_step[:n_spk].astype(np.float64) * delta
    )
    return EmulationRecord(
        input_spikes=events,
        hidden_spikes=hidden,
        output_spikes=SpikeEvents.empty(),
        hidden_traces=traces_h,
        output_traces=traces_o,
        duration=float(duration),
        final_state=(v_h, i_h, v_o, i_o),
    )
