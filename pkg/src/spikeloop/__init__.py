"""spikeloop: in-the-loop surrogate-gradient training of spiking networks on
a virtual analog substrate.

The forward pass runs on an emulated mixed-signal chip — per-neuron parameter
spread, membrane noise, 7-bit signed synapses, a coarse membrane sampler —
while the backward pass runs on the host over a time-stepped estimator graph
that injects the recorded observables in place of its own state estimates.
Weight updates are applied to full-precision shadow weights and re-uploaded
quantized, closing the loop.

Layer map:

    substrate   the virtual chip: LIF dynamics, calibration, decalibration,
                silencing, quantized weight upload, emulation records
    graph       the host-side estimator: forward reconstruction from records
                (or self-consistent software mode) and exact BPTT with a
                surrogate spike derivative
    objective   max/sum-over-time softmax losses and activity regularizers,
                emitting adjoint seeds for the graph
    trainer     Adam on shadow weights, dropout-as-silencing, quantization,
                threaded batch runs, evaluation and latency probes
    encoding    image-to-latency-code and event-stream pipelines
    harness     configs, presets, experiment runners, metrics, figures, CLI
"""

from .errors import (
    ConfigError,
    DataMissingError,
    EventFormatError,
    NumericalError,
    SpikeloopError,
)
from .substrate import (
    EmulationRecord,
    NeuronParams,
    QuantizedWeights,
    SpikeEvents,
    Substrate,
    SubstrateConfig,
    build_substrate,
    decalibrate,
    emulate,
    grid_bin,
    set_weights,
    silence,
)
from .graph import (
    Adjoints,
    GraphState,
    GraphWeights,
    Gradients,
    ModelParams,
    assemble,
    aux_identity,
    aux_identity_vjp,
    backward,
    surrogate_grad,
)
from .objective import (
    LossConfig,
    MODE_MAX,
    MODE_SUM,
    amplitude_penalty,
    burst_regularizer,
    combined_loss,
    logits_of,
    rate_regularizer,
    task_loss,
)
from .trainer import (
    OptimState,
    TrainConfig,
    batch_gradients,
    evaluate,
    fit,
    init_weights,
    latency_curve,
    load_checkpoint,
    lr_schedule,
    quantize,
    quantize_weights,
    save_checkpoint,
    train_epoch,
)
from .encoding import (
    EventDataset,
    LatencyCoderParams,
    channel_jitter_augment,
    downscale_image,
    latency_encode,
    load_events,
    make_synthetic_speech,
    rotate_augment,
    rotate_image,
    save_events,
    subsample_and_scale,
)

__version__ = "0.1.0"

__all__ = [
    "Adjoints",
    "ConfigError",
    "DataMissingError",
    "EmulationRecord",
    "EventDataset",
    "EventFormatError",
    "GraphState",
    "GraphWeights",
    "Gradients",
    "LatencyCoderParams",
    "LossConfig",
    "MODE_MAX",
    "MODE_SUM",
    "ModelParams",
    "NeuronParams",
    "NumericalError",
    "OptimState",
    "QuantizedWeights",
    "SpikeEvents",
    "SpikeloopError",
    "Substrate",
    "SubstrateConfig",
    "TrainConfig",
    "amplitude_penalty",
    "assemble",
    "aux_identity",
    "aux_identity_vjp",
    "backward",
    "batch_gradients",
    "build_substrate",
    "burst_regularizer",
    "channel_jitter_augment",
    "combined_loss",
    "decalibrate",
    "downscale_image",
    "emulate",
    "evaluate",
    "fit",
    "grid_bin",
    "init_weights",
    "latency_curve",
    "latency_encode",
    "load_checkpoint",
    "load_events",
    "logits_of",
    "lr_schedule",
    "make_synthetic_speech",
    "quantize",
    "quantize_weights",
    "rate_regularizer",
    "rotate_augment",
    "rotate_image",
    "save_checkpoint",
    "save_events",
    "set_weights",
    "silence",
    "subsample_and_scale",
    "surrogate_grad",
    "task_loss",
    "train_epoch",
    "__version__",
]
