"""In-the-loop training: quantize, upload, emulate, differentiate, update.

One batch step of the loop:

1. draw the dropout mask and build effective weights (dropped units lose all
   incoming and outgoing connections; survivors' outgoing weights are scaled
   by 1/(1-p) so the total drive stays comparable),
2. quantize — input and recurrent matrices on the fixed scale w_cap/63,
   output weights on a dynamic scale aligning max|w| with the integer limit,
3. upload to the substrate and silence the dropped units,
4. emulate every sample of the batch (concurrently; each sample owns a
   counter-based noise stream), assemble its graph, seed the loss adjoints,
   and run backward,
5. mean-reduce the per-sample gradients in fixed sample order, map them back
   through the dropout reparametrization, and apply one Adam step to the
   full-precision shadow weights.

Quantization is straight-through: gradients act on the shadow weights as if
the integer projection were the identity, so rounding error never
accumulates across steps.  In software mode the substrate is bypassed and
the graph runs self-consistently on its own model dynamics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .graph import GraphWeights, ModelParams, assemble, backward
from .objective import LossConfig, combined_loss, logits_of
from .rng import TAG_DROPOUT, TAG_INIT, TAG_SHUFFLE, stream
from .substrate import QuantizedWeights, Substrate, emulate, set_weights, silence

WEIGHT_KEYS = ("w_in", "w_rec", "w_out")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# Evaluation noise draws live in their own seed namespace so they can never
# collide with training-sample streams (epoch << 32 | index).
EVAL_SEED_BASE = 1 << 62

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1.5e-3
    gamma_eta: float = 0.03
    epochs: int = 30
    batch_size: int = 100
    dropout_p: float = 0.0
    sigma_w_hat: float = 0.24
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelParams = field(default_factory=ModelParams)
    w_cap: float = 1.0        # real weight mapped to the integer limit (in/rec)
    workers: int = 8
    software_mode: bool = False

    def validate(self) -> None:
        if self.eta <= 0:
            raise ConfigError("eta must be > 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if not 0.0 <= self.gamma_eta < 1.0:
            raise ConfigError("gamma_eta must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, workers >= 1")
        if self.sigma_w_hat < 0 or self.w_cap <= 0:
            raise ConfigError("sigma_w_hat >= 0 and w_cap > 0 required")
        self.loss.validate()
        self.model.validate()


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def for_weights(weights: dict) -> "OptimState":
        zeros = {
            k: (None if w is None else np.zeros_like(w)) for k, w in weights.items()
        }
        return OptimState(
            m={k: (None if z is None else z.copy()) for k, z in zeros.items()},
            v=zeros,
            step=0,
        )


def init_weights(cfg: TrainConfig, shapes: dict) -> dict:
    """Normal(0, (sigma_w_hat/sqrt(fan_in))^2) per matrix; fan_in = rows."""
    out = {}
    for idx, key in enumerate(WEIGHT_KEYS):
        shape = shapes.get(key)
        if shape is None:
            out[key] = None
            continue
        fan_in = shape[0]
        rng = stream(cfg.seed, TAG_INIT, idx)
        w = rng.normal(0.0, cfg.sigma_w_hat / math.sqrt(fan_in), shape)
        if key == "w_rec":
            np.fill_diagonal(w, 0.0)  # no self-connections in the topology
        out[key] = w
    return out


def quantize(w: np.ndarray, scale: float | None = None, weight_max: int = 63) -> QuantizedWeights:
    """Scale, round (half away from zero), and crop to signed integers.

    scale=None picks the dynamic scale max|w|/weight_max (1.0 if all zero).
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ConfigError("cannot quantize non-finite weights")
    if scale is None:
        peak = float(np.abs(w).max(initial=0.0))
        scale = peak / weight_max if peak > 0 else 1.0
    elif not (np.isfinite(scale) and scale > 0):
        raise ConfigError("quantization scale must be positive and finite")
    q = np.sign(w) * np.floor(np.abs(w) / scale + 0.5)
    q = np.clip(q, -weight_max, weight_max).astype(np.int32)
    return QuantizedWeights(values=q, scale=float(scale))


def lr_schedule(eta0: float, gamma_eta: float, epoch: int) -> float:
    """Multiplicative decay: eta0 * (1 - gamma_eta)^epoch."""
    if gamma_eta >= 1.0:
        raise ConfigError("gamma_eta must be < 1")
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return eta0 * (1.0 - gamma_eta) ** epoch


def adam_step(weights: dict, grads: dict, opt: OptimState, eta_t: float) -> dict:
    """Bias-corrected Adam on the shadow weights; mutates opt, returns new dict."""
    opt.step += 1
    c1 = 1.0 - ADAM_BETA1 ** opt.step
    c2 = 1.0 - ADAM_BETA2 ** opt.step
    new = {}
    for key in WEIGHT_KEYS:
        w = weights.get(key)
        if w is None:
            new[key] = None
            continue
        g = grads[key]
        if g is None or not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {key}")
        opt.m[key] = ADAM_BETA1 * opt.m[key] + (1.0 - ADAM_BETA1) * g
        opt.v[key] = ADAM_BETA2 * opt.v[key] + (1.0 - ADAM_BETA2) * g * g
        m_hat = opt.m[key] / c1
        v_hat = opt.v[key] / c2
        new[key] = w - eta_t * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new


def _clamp_shadow(weights: dict, w_cap: float) -> dict:
    """Keep input/recurrent shadow weights inside the representable range.

    The output matrix uses a dynamic scale and is never cropped, so it stays
    unclamped.  Without this, straight-through gradients can push shadow
    values arbitrarily far past the crop point they are already pinned to.
    """
    out = dict(weights)
    for key in ("w_in", "w_rec"):
        if out.get(key) is not None:
            out[key] = np.clip(out[key], -w_cap, w_cap)
    return out


def _dropout_mask(cfg: TrainConfig, n_hidden: int, epoch: int, batch_idx: int):
    if cfg.dropout_p <= 0:
        return None
    rng = stream(cfg.seed, TAG_DROPOUT, epoch, batch_idx)
    return rng.random(n_hidden) < cfg.dropout_p


def _effective_weights(weights: dict, mask, p: float) -> dict:
    """Dropout reparametrization: zero dropped units' rows/columns, rescale
    survivors' outgoing weights by 1/(1-p)."""
    if mask is None:
        return {k: (None if w is None else w.copy()) for k, w in weights.items()}
    r = np.where(mask, 0.0, 1.0 / (1.0 - p))
    eff = {}
    eff["w_in"] = weights["w_in"].copy()
    eff["w_in"][:, mask] = 0.0
    w_rec = weights.get("w_rec")
    if w_rec is not None:
        w_rec = w_rec * r[:, None]
        w_rec[:, mask] = 0.0
    eff["w_rec"] = w_rec
    eff["w_out"] = weights["w_out"] * r[:, None]
    return eff


def _shadow_grads(grads: dict, mask, p: float) -> dict:
    """Chain rule of _effective_weights: map effective-weight gradients back."""
    if mask is None:
        return grads
    r = np.where(mask, 0.0, 1.0 / (1.0 - p))
    out = dict(grads)
    out["w_in"] = grads["w_in"].copy()
    out["w_in"][:, mask] = 0.0
    if grads.get("w_rec") is not None:
        w = grads["w_rec"] * r[:, None]
        w[:, mask] = 0.0
        out["w_rec"] = w
    out["w_out"] = grads["w_out"] * r[:, None]
    return out


def quantize_weights(weights: dict, w_cap: float) -> dict:
    """Quantize all matrices: fixed scale w_cap/63 for w_in/w_rec, dynamic w_out."""
    s_fixed = w_cap / 63.0
    return {
        "w_in": quantize(weights["w_in"], scale=s_fixed),
        "w_rec": None if weights.get("w_rec") is None else quantize(weights["w_rec"], scale=s_fixed),
        "w_out": quantize(weights["w_out"]),
    }


def _graph_weights(qs: dict) -> GraphWeights:
    return GraphWeights(
        w_in=qs["w_in"].real(),
        w_rec=None if qs["w_rec"] is None else qs["w_rec"].real(),
        w_out=qs["w_out"].real(),
    )


def _upload(sub: Substrate, qs: dict, mask) -> None:
    """Push quantized weights; mask=None leaves any silencing already applied
    to the substrate (e.g. an ablation study's) untouched."""
    set_weights(sub, qs["w_in"], qs["w_rec"], qs["w_out"])
    if mask is not None:
        silence(sub, mask)


def _map_maybe_parallel(fn, items, pool):
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


def _train_sample_pass(sub, gw, cfg, dataset, idx, noise_seed):
    """Emulate (or software-simulate) one sample and return loss + gradients."""
    events, label = dataset.samples[idx]
    if cfg.software_mode:
        gs = assemble(
            None, events, gw, cfg.model,
            self_consistent=True, duration=dataset.duration,
        )
        out_traces = gs.output_traces_model()
        n_spikes = float(gs.s_inj[:, gs.hidden].sum())
    else:
        rec = emulate(sub, events, dataset.duration, seed=noise_seed)
        gs = assemble(rec, rec.input_spikes, gw, cfg.model)
        out_traces = rec.output_traces
        n_spikes = float(len(rec.hidden_spikes))
    s_binned = gs.s_inj[:, gs.hidden]
    loss, seed_v, seed_s, parts = combined_loss(out_traces, s_binned, label, cfg.loss)
    grads = backward(gs, seed_v_out=seed_v, seed_s_hid=seed_s)
    pred = int(np.argmax(logits_of(out_traces, cfg.loss.mode)))
    return loss, grads, pred == label, n_spikes


def batch_gradients(
    sub: Substrate,
    dataset,
    indices,
    weights: dict,
    cfg: TrainConfig,
    epoch: int,
    batch_idx: int,
    pool=None,
):
    """Run one batch through the loop; returns (grads, stats, mask).

    grads are mean-reduced over the batch in fixed sample order and already
    mapped back to shadow-weight coordinates.
    """
    mask = _dropout_mask(cfg, weights["w_in"].shape[1], epoch, batch_idx)
    eff = _effective_weights(weights, mask, cfg.dropout_p)
    qs = quantize_weights(eff, cfg.w_cap)
    gw = _graph_weights(qs)
    if not cfg.software_mode:
        _upload(sub, qs, mask)

    def run(idx):
        noise_seed = (epoch << 32) | int(idx)
        return _train_sample_pass(sub, gw, cfg, dataset, int(idx), noise_seed)

    results = _map_maybe_parallel(run, list(indices), pool)

    n = len(results)
    acc_grads = None
    losses = np.zeros(n)
    correct = 0
    spikes = np.zeros(n)
    for i, (loss, grads, ok, n_spk) in enumerate(results):
        losses[i] = loss
        correct += int(ok)
        spikes[i] = n_spk
        trio = {"w_in": grads.d_w_in, "w_rec": grads.d_w_rec, "w_out": grads.d_w_out}
        if acc_grads is None:
            acc_grads = trio
        else:
            for k, g in trio.items():
                if g is not None:
                    acc_grads[k] = acc_grads[k] + g
    mean_grads = {
        k: (None if g is None else g / n) for k, g in acc_grads.items()
    }
    mean_grads = _shadow_grads(mean_grads, mask, cfg.dropout_p)
    if mean_grads.get("w_rec") is not None:
        np.fill_diagonal(mean_grads["w_rec"], 0.0)
    stats = {
        "loss_sum": float(losses.sum()),
        "correct": correct,
        "spike_sum": float(spikes.sum()),
        "n": n,
    }
    return mean_grads, stats, mask


def train_epoch(
    sub: Substrate,
    dataset,
    weights: dict,
    opt: OptimState,
    cfg: TrainConfig,
    epoch: int,
    pool=None,
):
    """One pass over the dataset; returns (weights, opt, epoch_stats).

    A dataset may expose epoch_view(epoch) to serve freshly augmented samples
    each epoch; plain datasets are used as-is.
    """
    cfg.validate()
    if hasattr(dataset, "epoch_view"):
        dataset = dataset.epoch_view(epoch)
    n = len(dataset.samples)
    order = stream(cfg.seed, TAG_SHUFFLE, epoch).permutation(n)
    eta_t = lr_schedule(cfg.eta, cfg.gamma_eta, epoch)
    loss_sum = spike_sum = 0.0
    correct = 0
    for b in range(0, n, cfg.batch_size):
        indices = order[b : b + cfg.batch_size]
        grads, stats, _mask = batch_gradients(
            sub, dataset, indices, weights, cfg, epoch, b // cfg.batch_size, pool
        )
        weights = adam_step(weights, grads, opt, eta_t)
        weights = _clamp_shadow(weights, cfg.w_cap)
        loss_sum += stats["loss_sum"]
        correct += stats["correct"]
        spike_sum += stats["spike_sum"]
    if not cfg.software_mode and cfg.dropout_p > 0:
        # the last batch's dropout silencing must not leak into evaluation
        silence(sub, np.zeros(sub.config.n_hidden, bool))
    stats = {
        "train_loss": loss_sum / n,
        "train_acc": correct / n,
        "train_mean_spikes": spike_sum / n,
        "eta_t": eta_t,
    }
    return weights, opt, stats


def _restrict_rows(n_rows: int, dt: float, restrict_t: float | None) -> int:
    if restrict_t is None:
        return n_rows
    if restrict_t < 0:
        raise ConfigError("restrict_T must be >= 0")
    keep = 1 + int(math.floor(restrict_t / dt + 1e-9))
    return max(1, min(n_rows, keep))


def eval_outputs(sub: Substrate, weights: dict, dataset, cfg: TrainConfig, pool=None):
    """Emulate the dataset at inference settings; returns per-sample
    (output_traces, label, hidden_spike_count)."""
    cfg.validate()
    qs = quantize_weights(weights, cfg.w_cap)
    if not cfg.software_mode:
        _upload(sub, qs, None)
    gw = _graph_weights(qs)

    def run(idx):
        events, label = dataset.samples[idx]
        if cfg.software_mode:
            gs = assemble(
                None, events, gw, cfg.model,
                self_consistent=True, duration=dataset.duration,
            )
            return gs.output_traces_model(), label, float(gs.s_inj[:, gs.hidden].sum())
        rec = emulate(sub, events, dataset.duration, seed=EVAL_SEED_BASE + idx)
        return rec.output_traces, label, float(len(rec.hidden_spikes))

    return _map_maybe_parallel(run, range(len(dataset.samples)), pool)


def evaluate(
    sub: Substrate,
    weights: dict,
    dataset,
    cfg: TrainConfig,
    restrict_t: float | None = None,
    pool=None,
    outputs=None,
):
    """Accuracy (optionally with logits restricted to [0, restrict_t] µs) and
    mean hidden spikes per sample."""
    if outputs is None:
        outputs = eval_outputs(sub, weights, dataset, cfg, pool)
    correct = 0
    spike_sum = 0.0
    for traces, label, n_spk in outputs:
        rows = _restrict_rows(traces.shape[0], cfg.model.dt, restrict_t)
        pred = int(np.argmax(logits_of(traces[:rows], cfg.loss.mode)))
        correct += int(pred == label)
        spike_sum += n_spk
    n = len(outputs)
    return {
        "accuracy": correct / n,
        "mean_hidden_spikes": spike_sum / n,
        "n": n,
    }


def latency_curve(sub, weights: dict, dataset, cfg: TrainConfig, t_grid, pool=None):
    """accuracy(restrict_T) over a grid of horizons, from one emulation pass."""
    outputs = eval_outputs(sub, weights, dataset, cfg, pool)
    return [
        (float(t), evaluate(sub, weights, dataset, cfg, restrict_t=t, outputs=outputs)["accuracy"])
        for t in t_grid
    ]


def fit(
    sub: Substrate,
    train_ds,
    test_ds,
    cfg: TrainConfig,
    *,
    weights: dict | None = None,
    opt: OptimState | None = None,
    start_epoch: int = 0,
    log=None,
):
    """Full training run; returns (weights, opt, history rows)."""
    cfg.validate()
    scfg = sub.config
    if weights is None:
        shapes = {
            "w_in": (scfg.n_in, scfg.n_hidden),
            "w_rec": (scfg.n_hidden, scfg.n_hidden) if scfg.recurrent else None,
            "w_out": (scfg.n_hidden, scfg.n_out),
        }
        weights = init_weights(cfg, shapes)
    if opt is None:
        opt = OptimState.for_weights(weights)
    history = []
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            weights, opt, stats = train_epoch(
                sub, train_ds, weights, opt, cfg, epoch, pool
            )
            test = evaluate(sub, weights, test_ds, cfg, pool=pool)
            row = {
                "epoch": epoch,
                "train_loss": stats["train_loss"],
                "train_acc": stats["train_acc"],
                "test_acc": test["accuracy"],
                "mean_hidden_spikes": test["mean_hidden_spikes"],
                "eta_t": stats["eta_t"],
            }
            history.append(row)
            if log is not None:
                log(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return weights, opt, history


def save_checkpoint(path, weights: dict, opt: OptimState, epoch: int, config_echo: str = "") -> None:
    """Versioned npz: shadow weights, Adam moments, counters, config echo."""
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "epoch": np.int64(epoch),
        "step": np.int64(opt.step),
        "config_echo": np.str_(config_echo),
    }
    for key in WEIGHT_KEYS:
        if weights.get(key) is not None:
            payload[key] = weights[key]
            payload[f"m_{key}"] = opt.m[key]
            payload[f"v_{key}"] = opt.v[key]
    np.savez(path, **payload)


def load_checkpoint(path):
    """Returns (weights, opt, epoch, config_echo)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        weights = {}
        m = {}
        v = {}
        for key in WEIGHT_KEYS:
            if key in data:
                weights[key] = data[key].astype(np.float64)
                m[key] = data[f"m_{key}"].astype(np.float64)
                v[key] = data[f"v_{key}"].astype(np.float64)
            else:
                weights[key] = None
                m[key] = None
                v[key] = None
        opt = OptimState(m=m, v=v, step=int(data["step"]))
        return weights, opt, int(data["epoch"]), str(data["config_echo"])
