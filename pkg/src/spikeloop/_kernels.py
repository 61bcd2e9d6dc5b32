"""Compiled inner loop of the substrate emulator.

The membrane/current recursion is sequential in time (threshold detection and
reset couple V back into the dynamics), so it is written as an explicit
substep loop and JIT-compiled.  No fastmath: results must be bitwise
reproducible.  nogil lets per-sample emulations run on real threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def scan_current(lam, drive, out):
    """out[t+1] = lam*out[t] + drive[t]; out[0] is taken as given."""
    t_n, n = out.shape
    for t in range(t_n - 1):
        for j in range(n):
            out[t + 1, j] = lam * out[t, j] + drive[t, j]


@njit(cache=True, nogil=True)
def scan_adj_simple(lam, drive, out):
    """Reverse scan out[t] = lam*out[t+1] + drive[t]; out[T-1] = drive[T-1]."""
    t_n, n = out.shape
    for j in range(n):
        out[t_n - 1, j] = drive[t_n - 1, j]
    for t in range(t_n - 2, -1, -1):
        for j in range(n):
            out[t, j] = lam * out[t + 1, j] + drive[t, j]


@njit(cache=True, nogil=True)
def scan_adj_coef(coef, drive, out):
    """Reverse scan out[t] = coef[t]*out[t+1] + drive[t]; out[T-1] = drive[T-1]."""
    t_n, n = out.shape
    for j in range(n):
        out[t_n - 1, j] = drive[t_n - 1, j]
    for t in range(t_n - 2, -1, -1):
        for j in range(n):
            out[t, j] = coef[t, j] * out[t + 1, j] + drive[t, j]


@njit(cache=True, nogil=True)
def scan_hidden_backward(
    lam_s, g, w_rec, coef, sigma, seed_v, base_as, a_s, a_v, a_i
):
    """Coupled reverse sweep over hidden adjoints with recurrent coupling.

    a_s[t] = base_as[t] + W_rec @ a_i[t+1]
    a_v[t] = seed_v[t] + sigma[t]*a_s[t] + coef[t]*a_v[t+1]
    a_i[t] = g*a_v[t+1] + lam_s*a_i[t+1]
    """
    t_n, n = a_v.shape
    for j in range(n):
        a_s[t_n - 1, j] = base_as[t_n - 1, j]
        a_v[t_n - 1, j] = seed_v[t_n - 1, j] + sigma[t_n - 1, j] * a_s[t_n - 1, j]
        a_i[t_n - 1, j] = 0.0
    for t in range(t_n - 2, -1, -1):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += w_rec[j, k] * a_i[t + 1, k]
            a_s[t, j] = base_as[t, j] + acc
            a_v[t, j] = seed_v[t, j] + sigma[t, j] * a_s[t, j] + coef[t, j] * a_v[t + 1, j]
            a_i[t, j] = g * a_v[t + 1, j] + lam_s * a_i[t + 1, j]


@njit(cache=True, nogil=True)
def scan_forward_self(lam_m, lam_s, g, thresh, recurrent, w_rec, ext, v, i, s):
    """Self-consistent spiking forward pass for the hidden block.

    s[t] = (v[t] >= thresh); i[t+1] = lam_s*i[t] + ext[t] + W_rec^T s[t];
    v[t+1] = lam_m*(1 - s[t])*v[t] + g*i[t].  v[0], i[0] given.
    """
    t_n, n = v.shape
    for t in range(t_n):
        for j in range(n):
            s[t, j] = 1.0 if v[t, j] >= thresh else 0.0
        if t == t_n - 1:
            break
        for j in range(n):
            i[t + 1, j] = lam_s * i[t, j] + ext[t, j]
        if recurrent:
            for j in range(n):
                if s[t, j] != 0.0:
                    for k in range(n):
                        i[t + 1, k] += w_rec[j, k]
        for j in range(n):
            v[t + 1, j] = lam_m * (1.0 - s[t, j]) * v[t, j] + g * i[t, j]


@njit(cache=True, nogil=True)
def lif_substep_loop(
    t_sub,            # total substeps
    substeps,         # substeps per trace sample
    drive_scale,      # delta / dt_sample
    # hidden population (per-neuron arrays)
    am_h, as_h,       # decay factors exp(-delta/tau_m), exp(-delta/tau_s)
    vth_h, vl_h, vr_h,
    refrac_h,         # refractory length in substeps (int64)
    spiking_h,        # bool: unit carries a threshold at all
    silenced_h,       # bool: unit clamped to leak, never fires
    # readout population
    am_o, as_o, vl_o,
    # weights (real-valued effective)
    w_in, w_rec, w_out, recurrent,
    # input events, sorted by substep bin
    in_bin, in_ch,
    # pre-drawn membrane noise, shape [t_sub, n] or [0, n] when disabled
    noise_h, noise_o,
    # state (mutated in place)
    v_h, i_h, v_o, i_o,
    # outputs
    traces_h, traces_o,   # [T, nh], [T, no]; T may be 0 when not recording
    spk_unit, spk_step,   # preallocated spike buffers
):
    nh = v_h.shape[0]
    no = v_o.shape[0]
    n_rec = traces_h.shape[0]
    have_noise = noise_h.shape[0] > 0
    n_ev = in_bin.shape[0]
    ev = 0
    n_spk = 0
    fired = np.zeros(nh, np.bool_)
    refrac_left = np.zeros(nh, np.int64)

    for n in range(t_sub):
        # Trace rows sample the state at the substep boundary, before this
        # substep's update, so row k, spike bin k and graph step k all
        # describe the same state.
        if n % substeps == 0:
            k = n // substeps
            if k < n_rec:
                for i in range(nh):
                    traces_h[k, i] = v_h[i]
                for j in range(no):
                    traces_o[k, j] = v_o[j]

        # Threshold detection on the pre-update state.
        for i in range(nh):
            f = False
            if (
                spiking_h[i]
                and not silenced_h[i]
                and refrac_left[i] == 0
                and v_h[i] >= vth_h[i]
            ):
                f = True
                spk_unit[n_spk] = i
                spk_step[n_spk] = n
                n_spk += 1
            fired[i] = f

        # Membrane update n -> n+1 using I[n].
        for i in range(nh):
            if silenced_h[i]:
                v_h[i] = vl_h[i]
            elif refrac_left[i] > 0:
                refrac_left[i] -= 1
                v_h[i] = vr_h[i]
            else:
                if fired[i]:
                    dev = vr_h[i] - vl_h[i]
                    if refrac_h[i] > 0:
                        refrac_left[i] = refrac_h[i]
                else:
                    dev = v_h[i] - vl_h[i]
                v = vl_h[i] + dev * am_h[i] + drive_scale * i_h[i]
                if have_noise:
                    v += noise_h[n, i]
                v_h[i] = v
        for j in range(no):
            v = vl_o[j] + (v_o[j] - vl_o[j]) * am_o[j] + drive_scale * i_o[j]
            if have_noise:
                v += noise_o[n, j]
            v_o[j] = v

        # Current update n -> n+1: decay, then spike-driven jumps of exactly
        # one weight per presynaptic event.
        for i in range(nh):
            i_h[i] = i_h[i] * as_h[i]
        for j in range(no):
            i_o[j] = i_o[j] * as_o[j]
        while ev < n_ev and in_bin[ev] == n:
            ch = in_ch[ev]
            for i in range(nh):
                i_h[i] += w_in[ch, i]
            ev += 1
        for i in range(nh):
            if fired[i]:
                if recurrent:
                    for k2 in range(nh):
                        i_h[k2] += w_rec[i, k2]
                for j in range(no):
                    i_o[j] += w_out[i, j]

    return n_spk
