"""Shared fixtures.

The emulation kernel is JIT-compiled on first use; the warmup fixture pays
that cost once per session so individual tests can carry wall-clock bounds.
"""

from __future__ import annotations

import numpy as np
import pytest

import spikeloop as sl


@pytest.fixture(scope="session", autouse=True)
def kernel_warmup():
    """Compile the emulation kernel before any timed test runs."""
    cfg = sl.SubstrateConfig(n_in=1, n_hidden=1, n_out=1, recurrent=True,
                             dt_sample=1.7, substeps=2, trace_noise_sigma=0.0)
    sub = sl.build_substrate(cfg, sl.NeuronParams(noise_sigma=0.0))
    one = sl.quantize(np.array([[1]], dtype=np.int64), scale=0.01)
    zero = sl.quantize(np.array([[0]], dtype=np.int64), scale=0.01)
    sl.set_weights(sub, one, zero, one)
    rec = sl.emulate(sub, [(0, 0.0)], 3.4, seed=0)
    gw = sl.GraphWeights(one.real(), zero.real(), one.real())
    mp = sl.ModelParams(dt=1.7, interp_factor=2)
    gs = sl.assemble(rec, [(0, 0.0)], gw, mp)
    sl.backward(gs, seed_v_out=np.ones_like(rec.output_traces))
    gs2 = sl.assemble(None, [(0, 0.0)], gw, mp, self_consistent=True, duration=3.4)
    sl.backward(gs2, seed_v_out=np.ones((gs2.v_est.shape[0], 1)))


def quiet_substrate(n_in, n_hidden, n_out, *, recurrent=False, dt_sample=1.7,
                    substeps=10, seed=0, **target_kw):
    """A noise-free substrate for deterministic dynamics tests."""
    cfg = sl.SubstrateConfig(n_in=n_in, n_hidden=n_hidden, n_out=n_out,
                             recurrent=recurrent, dt_sample=dt_sample,
                             substeps=substeps, seed=seed, trace_noise_sigma=0.0)
    target_kw.setdefault("noise_sigma", 0.0)
    return sl.build_substrate(cfg, sl.NeuronParams(**target_kw))
