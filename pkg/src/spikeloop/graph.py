"""Differentiable time-step graph over recorded substrate observables.

The emulated network is rendered differentiable by unrolling an approximate
LIF model on a regular grid and *injecting* the measured data where it is
available.  Per neuron and grid step (normalized units, threshold = 1):

    V~[t+1] = f( V[t+1],  V~[t] * e^(-dt/tau_m) * (1 - S~[t]) + g * I~[t] )
    I~[t+1] = I~[t] * e^(-dt/tau_s) + sum_j W_j * S~_j[t]

f(x, x~) = x is the auxiliary injection identity: its value is the measured
quantity, but gradients flow exclusively through the model-estimate slot
(df/dx = 0, df/dx~ = 1).  Spikes are injected the same way: S~[t] has the
measured spike as its value and the surrogate derivative
(beta*|v - 1| + 1)^(-2), evaluated at the measured membrane, with respect to
the membrane estimate.  Synaptic currents are never measured, so I~ stays a
pure model estimate chained across time.  The reset factor (1 - S~[t]) uses
the measured spike and is detached from the gradient.

The grid step is dt/interp_factor; measured traces are linearly interpolated
onto finer grids.  g = 1/interp_factor scales the membrane drive so that the
integrated effect of a synaptic current is independent of grid refinement
(and so that graph currents match substrate currents entry-for-entry when the
grids align).  With interp_factor = 1 the recursions above reduce to the
plain forward-Euler-style model.

In self-consistent mode no measurements are injected: the model's own
estimates and threshold crossings take their place, which turns the graph
into a pure software simulation of the idealized network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import (
    scan_adj_coef,
    scan_adj_simple,
    scan_current,
    scan_forward_self,
    scan_hidden_backward,
)
from .errors import ConfigError, NumericalError
from .substrate import EmulationRecord, SpikeEvents, grid_bin

THRESH = 1.0  # normalized firing threshold of the model


@dataclass(frozen=True)
class ModelParams:
    """Homogeneous parameters of the graph's LIF model."""

    tau_m_model: float = 6.0
    tau_s_model: float = 6.0
    beta: float = 50.0
    dt: float = 1.7            # µs, trace sampling grid
    interp_factor: int = 1     # graph steps per trace sample

    def validate(self) -> None:
        if not (self.tau_m_model > 0 and self.tau_s_model > 0 and self.dt > 0):
            raise ConfigError("tau_m_model, tau_s_model, dt must be positive")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.interp_factor < 1:
            raise ConfigError("interp_factor must be >= 1")

    @property
    def dt_fine(self) -> float:
        return self.dt / self.interp_factor

    @property
    def lam_m(self) -> float:
        return math.exp(-self.dt_fine / self.tau_m_model)

    @property
    def lam_s(self) -> float:
        return math.exp(-self.dt_fine / self.tau_s_model)

    @property
    def g_drive(self) -> float:
        return 1.0 / self.interp_factor


@dataclass(frozen=True)
class GraphWeights:
    """Real-valued (dequantized) weight matrices used by the graph."""

    w_in: np.ndarray                 # [n_in, n_hidden]
    w_rec: np.ndarray | None         # [n_hidden, n_hidden] or None
    w_out: np.ndarray                # [n_hidden, n_out]

    def validate(self) -> None:
        if self.w_in.ndim != 2 or self.w_out.ndim != 2:
            raise ConfigError("weight matrices must be 2-D")
        if self.w_in.shape[1] != self.w_out.shape[0]:
            raise ConfigError(
                f"w_in maps to {self.w_in.shape[1]} hidden units but w_out "
                f"reads {self.w_out.shape[0]}"
            )
        nh = self.w_in.shape[1]
        if self.w_rec is not None and self.w_rec.shape != (nh, nh):
            raise ConfigError(f"w_rec shape {self.w_rec.shape} != ({nh}, {nh})")
        for name in ("w_in", "w_rec", "w_out"):
            w = getattr(self, name)
            if w is not None and not np.isfinite(w).all():
                raise ConfigError(f"{name} contains non-finite entries")

    @property
    def n_in(self) -> int:
        return int(self.w_in.shape[0])

    @property
    def n_hidden(self) -> int:
        return int(self.w_in.shape[1])

    @property
    def n_out(self) -> int:
        return int(self.w_out.shape[1])


@dataclass
class Adjoints:
    """Reverse-mode adjoints, stacked [T_grid, n_hidden + n_out]."""

    v_est: np.ndarray
    i_est: np.ndarray
    s_inj: np.ndarray
    v_inj: np.ndarray  # identically zero: the measured slot absorbs nothing


@dataclass
class GraphState:
    """Unrolled graph of one sample.  Columns: hidden block, then output."""

    v_est: np.ndarray    # [T_grid, N] model membrane estimates
    i_est: np.ndarray    # [T_grid, N] model current estimates
    s_inj: np.ndarray    # [T_grid, N] spike values on the grid (output cols 0)
    v_inj: np.ndarray    # [T_grid, N] injected membrane values
    weights: GraphWeights
    params: ModelParams
    n_hidden: int
    n_out: int
    n_steps_coarse: int
    self_consistent: bool
    in_ch: np.ndarray    # input event channels
    in_bin: np.ndarray   # input event grid bins
    adjoints: Adjoints | None = None

    @property
    def n_steps(self) -> int:
        return int(self.v_est.shape[0])

    @property
    def hidden(self) -> slice:
        return slice(0, self.n_hidden)

    @property
    def output(self) -> slice:
        return slice(self.n_hidden, self.n_hidden + self.n_out)

    def output_traces_model(self) -> np.ndarray:
        """Model readout membranes on the coarse grid (software mode)."""
        ipf = self.params.interp_factor
        return self.v_est[::ipf, self.output]


@dataclass(frozen=True)
class Gradients:
    d_w_in: np.ndarray
    d_w_rec: np.ndarray | None
    d_w_out: np.ndarray


def aux_identity(x: float, x_tilde: float) -> float:
    """Injection primitive f(x, x~) = x: measured value, estimate gradient."""
    return x


def aux_identity_vjp(adj: float) -> tuple[float, float]:
    """Adjoint rule of f: measured slot gets 0, estimate slot gets it all."""
    return 0.0, adj


def surrogate_grad(v, mp: ModelParams):
    """Smooth stand-in for dS/dV: (beta*|v - 1| + 1)^(-2)."""
    v = np.asarray(v, dtype=np.float64)
    out = 1.0 / np.square(mp.beta * np.abs(v - THRESH) + 1.0)
    return out if out.ndim else float(out)


def _as_event_arrays(inputs, n_in: int, duration: float):
    if isinstance(inputs, SpikeEvents):
        ch = np.asarray(inputs.unit, dtype=np.int64)
        ts = np.asarray(inputs.time, dtype=np.float64)
    else:
        arr = np.asarray(list(inputs), dtype=np.float64).reshape(-1, 2)
        ch = arr[:, 0].astype(np.int64)
        ts = arr[:, 1]
    if len(ch) and (ch.min() < 0 or ch.max() >= n_in):
        raise ConfigError(f"input channel out of range [0, {n_in})")
    if len(ts) and (ts.min() < 0 or ts.max() >= duration):
        raise ConfigError(f"input spike outside [0, {duration}) µs")
    return ch, ts


def _upsample(traces: np.ndarray, ipf: int) -> np.ndarray:
    """Linear interpolation from the coarse grid onto ipf-times-finer steps."""
    if ipf == 1:
        return np.ascontiguousarray(traces, dtype=np.float64)
    t_c = traces.shape[0]
    fine = np.arange(t_c * ipf, dtype=np.float64) / ipf
    k0 = np.minimum(fine.astype(np.int64), t_c - 1)
    k1 = np.minimum(k0 + 1, t_c - 1)
    frac = (fine - k0)[:, None]
    return (1.0 - frac) * traces[k0] + frac * traces[k1]


def _coarse_steps(duration: float, dt: float) -> int:
    return int(math.ceil(duration / dt - 1e-9))


def assemble(
    record: EmulationRecord | None,
    inputs,
    weights: GraphWeights,
    mp: ModelParams,
    *,
    self_consistent: bool = False,
    duration: float | None = None,
    v_leak_target: float = 0.0,
    v_thresh_target: float = 1.0,
) -> GraphState:
    """Unroll the model over one sample and inject the measured data.

    With a record, measured traces (normalized against the calibration
    targets) and spikes are injected.  With record=None (software mode,
    requires self_consistent=True and an explicit duration) the model runs on
    its own dynamics.
    """
    mp.validate()
    weights.validate()
    if record is None:
        if not self_consistent:
            raise ConfigError("a record is required unless self_consistent")
        if duration is None:
            raise ConfigError("duration is required without a record")
    else:
        duration = record.duration
        if len(record.output_spikes):
            raise ConfigError("the graph models a non-spiking readout")
    t_coarse = _coarse_steps(duration, mp.dt)
    if record is not None and record.hidden_traces.shape[0] != t_coarse:
        raise ConfigError(
            f"trace length {record.hidden_traces.shape[0]} inconsistent with "
            f"duration {duration} µs at dt {mp.dt} µs (expected {t_coarse})"
        )
    ipf = mp.interp_factor
    t_grid = t_coarse * ipf
    nh, no = weights.n_hidden, weights.n_out
    gap = v_thresh_target - v_leak_target
    if gap <= 0:
        raise ConfigError("v_thresh_target must exceed v_leak_target")

    in_ch, in_ts = _as_event_arrays(inputs, weights.n_in, duration)
    in_bin = np.minimum(grid_bin(in_ts, mp.dt_fine), t_grid - 1)

    lam_m, lam_s, g = mp.lam_m, mp.lam_s, mp.g_drive
    ext_h = np.zeros((t_grid, nh))
    np.add.at(ext_h, in_bin, weights.w_in[in_ch])

    if self_consistent:
        v_h = np.zeros((t_grid, nh))
        i_h = np.zeros((t_grid, nh))
        s_h = np.zeros((t_grid, nh))
        w_rec = weights.w_rec if weights.w_rec is not None else np.zeros((0, 0))
        scan_forward_self(
            lam_m, lam_s, g, THRESH, weights.w_rec is not None,
            np.ascontiguousarray(w_rec), ext_h, v_h, i_h, s_h,
        )
        v_inj_h = v_h
    else:
        # Measured spikes, binned; collisions within one bin merge to a 1.
        hs = record.hidden_spikes
        if len(hs) and (hs.time.min() < 0 or hs.time.max() >= duration):
            raise ConfigError("hidden spike outside duration")
        s_h = np.zeros((t_grid, nh))
        if len(hs):
            bins = np.minimum(grid_bin(hs.time, mp.dt_fine), t_grid - 1)
            s_h[bins, hs.unit] = 1.0
        v_inj_h = _upsample((record.hidden_traces - v_leak_target) / gap, ipf)
        tt, jj = np.nonzero(s_h)
        if weights.w_rec is not None:
            np.add.at(ext_h, tt, weights.w_rec[jj])
        i_h = np.zeros((t_grid, nh))
        scan_current(lam_s, ext_h, i_h)
        v_h = np.zeros((t_grid, nh))
        v_h[1:] = lam_m * (1.0 - s_h[:-1]) * v_inj_h[:-1] + g * i_h[:-1]

    # Readout block: driven by hidden spikes, no threshold, no reset.
    tt, jj = np.nonzero(s_h)
    ext_o = np.zeros((t_grid, no))
    np.add.at(ext_o, tt, weights.w_out[jj])
    i_o = np.zeros((t_grid, no))
    scan_current(lam_s, ext_o, i_o)
    v_o = np.zeros((t_grid, no))
    if self_consistent:
        scan_current(lam_m, g * i_o, v_o)
        v_inj_o = v_o
    else:
        v_inj_o = _upsample((record.output_traces - v_leak_target) / gap, ipf)
        v_o[1:] = lam_m * v_inj_o[:-1] + g * i_o[:-1]

    return GraphState(
        v_est=np.hstack([v_h, v_o]),
        i_est=np.hstack([i_h, i_o]),
        s_inj=np.hstack([s_h, np.zeros((t_grid, no))]),
        v_inj=np.hstack([v_inj_h, v_inj_o]),
        weights=weights,
        params=mp,
        n_hidden=nh,
        n_out=no,
        n_steps_coarse=t_coarse,
        self_consistent=self_consistent,
        in_ch=in_ch,
        in_bin=in_bin,
    )


def _expand_seed(seed, t_grid: int, t_coarse: int, ipf: int, n: int, name: str):
    """Seeds given on the coarse grid land on the sampled graph nodes."""
    if seed is None:
        return np.zeros((t_grid, n))
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape == (t_grid, n):
        return seed
    if seed.shape == (t_coarse, n):
        fine = np.zeros((t_grid, n))
        fine[::ipf] = seed
        return fine
    raise ConfigError(
        f"{name} shape {seed.shape} matches neither the grid ({t_grid}, {n}) "
        f"nor the sample grid ({t_coarse}, {n})"
    )


def _first_bad_step(*arrays: np.ndarray) -> int:
    t_bad = None
    for a in arrays:
        rows = ~np.isfinite(a).all(axis=1)
        if rows.any():
            t = int(np.argmax(rows))
            t_bad = t if t_bad is None else min(t_bad, t)
    return -1 if t_bad is None else t_bad


def backward(
    gs: GraphState,
    seed_v_out: np.ndarray | None = None,
    seed_s_hid: np.ndarray | None = None,
    seed_v_hid: np.ndarray | None = None,
) -> Gradients:
    """Reverse sweep: from loss adjoints on readout traces and hidden spikes
    to weight gradients.

    Adjoints propagate through the estimate slot of every injection node;
    the measured slot contributes nothing.  dS/dV uses the surrogate
    evaluated at the injected membrane values.
    """
    mp, w = gs.params, gs.weights
    t_grid, t_coarse, ipf = gs.n_steps, gs.n_steps_coarse, mp.interp_factor
    nh, no = gs.n_hidden, gs.n_out
    lam_m, lam_s, g = mp.lam_m, mp.lam_s, mp.g_drive

    seed_vo = _expand_seed(seed_v_out, t_grid, t_coarse, ipf, no, "seed_v_out")
    seed_sh = _expand_seed(seed_s_hid, t_grid, t_coarse, ipf, nh, "seed_s_hid")
    seed_vh = _expand_seed(seed_v_hid, t_grid, t_coarse, ipf, nh, "seed_v_hid")

    s_h = gs.s_inj[:, gs.hidden]
    sigma = surrogate_grad(gs.v_inj[:, gs.hidden], mp)

    # Readout adjoints: plain decaying chains.
    a_vo = np.zeros((t_grid, no))
    scan_adj_simple(lam_m, seed_vo, a_vo)
    drive_io = np.zeros((t_grid, no))
    drive_io[:-1] = g * a_vo[1:]
    a_io = np.zeros((t_grid, no))
    scan_adj_simple(lam_s, drive_io, a_io)

    # Spike adjoints: seeds plus everything the spike feeds at t+1.
    base_as = seed_sh.copy()
    base_as[:-1] += a_io[1:] @ w.w_out.T

    a_vh = np.zeros((t_grid, nh))
    a_ih = np.zeros((t_grid, nh))
    coef = lam_m * (1.0 - s_h)  # detached reset factor
    if w.w_rec is not None:
        a_s = np.zeros((t_grid, nh))
        scan_hidden_backward(
            lam_s, g, np.ascontiguousarray(w.w_rec), coef, sigma,
            seed_vh, base_as, a_s, a_vh, a_ih,
        )
    else:
        a_s = base_as
        scan_adj_coef(coef, seed_vh + sigma * a_s, a_vh)
        drive_ih = np.zeros((t_grid, nh))
        drive_ih[:-1] = g * a_vh[1:]
        scan_adj_simple(lam_s, drive_ih, a_ih)

    t_bad = _first_bad_step(a_vo, a_io, a_vh, a_ih)
    if t_bad >= 0:
        raise NumericalError(f"non-finite adjoint at grid step {t_bad}")

    # Weight gradients: presynaptic event values times the postsynaptic
    # current adjoint one step later.
    d_w_in = np.zeros(w.w_in.shape)
    live = gs.in_bin < t_grid - 1
    np.add.at(d_w_in, gs.in_ch[live], a_ih[gs.in_bin[live] + 1])
    tt, jj = np.nonzero(s_h[:-1])
    d_w_out = np.zeros(w.w_out.shape)
    np.add.at(d_w_out, jj, a_io[tt + 1])
    d_w_rec = None
    if w.w_rec is not None:
        d_w_rec = np.zeros(w.w_rec.shape)
        np.add.at(d_w_rec, jj, a_ih[tt + 1])

    gs.adjoints = Adjoints(
        v_est=np.hstack([a_vh, a_vo]),
        i_est=np.hstack([a_ih, a_io]),
        s_inj=np.hstack([a_s, np.zeros((t_grid, no))]),
        v_inj=np.zeros((t_grid, nh + no)),
    )
    for name, m in (("d_w_in", d_w_in), ("d_w_rec", d_w_rec), ("d_w_out", d_w_out)):
        if m is not None and not np.isfinite(m).all():
            raise NumericalError(f"non-finite gradient in {name}")
    return Gradients(d_w_in=d_w_in, d_w_rec=d_w_rec, d_w_out=d_w_out)
