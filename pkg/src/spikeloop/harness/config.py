"""Experiment configuration: a strict, versioned JSON schema.

Every key is checked against the schema — unknown keys anywhere are hard
errors, so a typo cannot silently fall back to a default.  Presets provide
complete baseline configs per task at two scales: ``desk`` (reduced sample
counts and epochs, runnable on a laptop/CI) and ``paper`` (full-scale
parameters; the speech task then expects the real dataset on disk).  A user
config is deep-merged over the preset, user values winning.

The resolved config is echoed into each run directory as JSON; feeding that
echo back through the CLI reproduces the run bit-exactly.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..graph import ModelParams
from ..objective import MODE_MAX, MODE_SUM, LossConfig
from ..substrate import (
    GROUP_THRESHOLD_GAP,
    GROUP_TIME_CONSTANTS,
    NeuronParams,
    SubstrateConfig,
)
from ..trainer import TrainConfig

CONFIG_VERSION = 1

TASKS = ("mnist16", "shd")
EXPERIMENTS = (
    "train",
    "eval",
    "latency_sweep",
    "decalib_sweep",
    "sparsity_sweep",
    "silence_ablation",
)
SWEEP_EXPERIMENTS = EXPERIMENTS[2:]
DATA_ROOT_ENV = "SPIKELOOP_DATA_ROOT"


@dataclass
class DataSection:
    # image task
    n_train: int = 5000
    n_test: int = 1000
    augment_deg: float = 0.0     # training-time rotation; 0 disables
    duration: float = 60.0       # µs emulation window per image
    tau_in: float = 8.0
    theta_in: float = 0.2
    t_max: float = 30.0
    # event-stream task
    train_path: str | None = None   # real corpus; None -> synthetic generator
    test_path: str | None = None
    n_train_per_class: int = 75     # synthetic generator sizes
    n_test_per_class: int = 25
    channel_jitter_sigma: float = 0.0  # training-time augmentation, channels
    data_seed: int = 77             # corpus seed, fixed across run seeds


@dataclass
class NetworkSection:
    n_in: int = 256
    n_hidden: int = 246
    n_out: int = 10
    recurrent: bool = False


@dataclass
class SubstrateSection:
    dt_sample: float = 1.7
    substeps: int = 10
    tau_m: float = 5.7
    tau_s: float = 6.0
    refrac: float = 0.0
    noise_sigma: float = 0.02
    trace_noise_sigma: float = 0.01
    sigma_d: float = 0.0
    decalib_groups: list = field(
        default_factory=lambda: [GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP]
    )
    silence_fraction: float = 0.0


@dataclass
class ModelSection:
    tau_m: float = 6.0
    tau_s: float = 6.0
    beta: float = 50.0
    interp_factor: int = 1


@dataclass
class TrainSection:
    eta: float = 1.5e-3
    gamma_eta: float = 0.03
    epochs: int = 30
    batch_size: int = 100
    dropout_p: float = 0.0
    sigma_w_hat: float = 0.24
    w_cap: float = 1.0
    workers: int = 8
    software_mode: bool = False


@dataclass
class LossSection:
    mode: str = MODE_MAX
    rho_a: float = 4e-4
    rho_b: float = 0.005
    rho_r: float = 0.0
    theta_r: float = 600.0


@dataclass
class SweepSection:
    sigma_d_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.5])
    groups: list = field(default_factory=lambda: ["time_constants", "threshold_gap", "both"])
    rho_b_grid: list = field(default_factory=lambda: [0.0, 0.0005, 0.005, 0.05])
    fractions: list = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.15])
    dropout_grid: list = field(default_factory=lambda: [0.0, 0.4])
    restrict_t_grid: list | None = None  # None: 10 points, 10%..100% of window


@dataclass
class RunConfig:
    config_version: int = CONFIG_VERSION
    task: str = "mnist16"
    experiment: str = "train"
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs/out"
    checkpoint: str | None = None
    data: DataSection = field(default_factory=DataSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    substrate: SubstrateSection = field(default_factory=SubstrateSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(
                f"config_version {self.config_version} unsupported (expected {CONFIG_VERSION})"
            )
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.loss.mode not in (MODE_MAX, MODE_SUM):
            raise ConfigError(f"loss.mode must be {MODE_MAX!r} or {MODE_SUM!r}")
        for g in self.substrate.decalib_groups:
            if g not in (GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP):
                raise ConfigError(f"unknown decalibration group {g!r}")
        for g in self.sweep.groups:
            if g not in (GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP, "both"):
                raise ConfigError(f"unknown sweep group {g!r}")
        if self.experiment in ("eval", "latency_sweep") and not self.checkpoint:
            raise ConfigError(f"experiment {self.experiment!r} requires a checkpoint path")
        if self.substrate.silence_fraction > 0 and self.train.dropout_p > 0:
            raise ConfigError(
                "substrate.silence_fraction cannot be combined with train.dropout_p; "
                "use the silence_ablation experiment for that protocol"
            )

    # Bridges into the library's own config types -------------------------

    def substrate_config(self, seed: int) -> SubstrateConfig:
        net, sub = self.network, self.substrate
        return SubstrateConfig(
            n_in=net.n_in,
            n_hidden=net.n_hidden,
            n_out=net.n_out,
            recurrent=net.recurrent,
            dt_sample=sub.dt_sample,
            substeps=sub.substeps,
            seed=seed,
            trace_noise_sigma=sub.trace_noise_sigma,
        )

    def neuron_targets(self) -> NeuronParams:
        sub = self.substrate
        return NeuronParams(
            tau_m=sub.tau_m,
            tau_s=sub.tau_s,
            noise_sigma=sub.noise_sigma,
            refrac=sub.refrac,
        )

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(
            tau_m_model=m.tau_m,
            tau_s_model=m.tau_s,
            beta=m.beta,
            dt=self.substrate.dt_sample,
            interp_factor=m.interp_factor,
        )

    def loss_config(self) -> LossConfig:
        lc = self.loss
        return LossConfig(
            mode=lc.mode, rho_a=lc.rho_a, rho_b=lc.rho_b, rho_r=lc.rho_r, theta_r=lc.theta_r
        )

    def train_config(self, seed: int) -> TrainConfig:
        t = self.train
        return TrainConfig(
            eta=t.eta,
            gamma_eta=t.gamma_eta,
            epochs=t.epochs,
            batch_size=t.batch_size,
            dropout_p=t.dropout_p,
            sigma_w_hat=t.sigma_w_hat,
            seed=seed,
            loss=self.loss_config(),
            model=self.model_params(),
            w_cap=t.w_cap,
            workers=t.workers,
            software_mode=t.software_mode,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "data": DataSection,
    "network": NetworkSection,
    "substrate": SubstrateSection,
    "model": ModelSection,
    "train": TrainSection,
    "loss": LossSection,
    "sweep": SweepSection,
}

_SCALARS = ("config_version", "task", "experiment", "seeds", "output_dir", "checkpoint")


def _coerce(value, ftype, path: str):
    # json has no int/float distinction worth fighting over; bools are not numbers
    if ftype is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{path}' must be an integer, got {value!r}")
        return value
    if ftype is bool and not isinstance(value, bool):
        raise ConfigError(f"config key '{path}' must be a boolean, got {value!r}")
    return value


def _parse_section(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config section '{path}' must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in d.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{path}.{key}'")
        ftype = fields[key].type
        base = {"int": int, "float": float, "bool": bool, "str": str}.get(
            ftype if isinstance(ftype, str) else getattr(ftype, "__name__", "")
        )
        if base is not None:
            value = _coerce(value, base, f"{path}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(raw: dict) -> RunConfig:
    """Validate a plain dict (parsed JSON) into a RunConfig.  Strict."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _parse_section(_SECTIONS[key], value, key)
        elif key in _SCALARS:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")
    rc = RunConfig(**kwargs)
    if not isinstance(rc.seeds, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in rc.seeds
    ):
        raise ConfigError("seeds must be a list of integers")
    rc.validate()
    return rc


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file, optionally on top of a named preset."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if preset is not None:
        task = raw.get("task", "mnist16")
        raw = _deep_merge(preset_dict(task, preset), raw)
    if overrides:
        raw = _deep_merge(raw, overrides)
    return parse_config(raw)


def data_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, ".")


def resolve_data_path(path: str | None) -> str | None:
    """Paths in the data section resolve against the data-root env var."""
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(data_root(), path)


# ---------------------------------------------------------------------------
# Presets

def _mnist_desk() -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "task": "mnist16",
        "experiment": "train",
        "seeds": [0],
        "output_dir": "runs/mnist16-desk",
        "data": {
            "n_train": 5000,
            "n_test": 1000,
            "augment_deg": 0.0,
            "duration": 60.0,
            "tau_in": 8.0,
            "theta_in": 0.2,
            "t_max": 30.0,
        },
        "network": {"n_in": 256, "n_hidden": 246, "n_out": 10, "recurrent": False},
        "substrate": {
            "dt_sample": 1.7,
            "substeps": 10,
            "tau_m": 5.7,
            "tau_s": 6.0,
            "refrac": 0.0,
            "noise_sigma": 0.02,
            "trace_noise_sigma": 0.01,
            "sigma_d": 0.0,
            "decalib_groups": [GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP],
            "silence_fraction": 0.0,
        },
        "model": {"tau_m": 6.0, "tau_s": 6.0, "beta": 50.0, "interp_factor": 1},
        "train": {
            "eta": 1.5e-3,
            "gamma_eta": 0.03,
            "epochs": 30,
            "batch_size": 100,
            "dropout_p": 0.0,
            "sigma_w_hat": 0.24,
            "w_cap": 1.0,
            "workers": 8,
            "software_mode": False,
        },
        "loss": {
            "mode": MODE_MAX,
            "rho_a": 4e-4,
            "rho_b": 0.005,
            "rho_r": 0.0,
            "theta_r": 600.0,
        },
    }


def _mnist_paper() -> dict:
    d = _mnist_desk()
    d["output_dir"] = "runs/mnist16-paper"
    d["data"].update({"n_train": 60000, "n_test": 10000, "augment_deg": 15.0})
    return d


def _shd_desk() -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "task": "shd",
        "experiment": "train",
        "seeds": [0],
        "output_dir": "runs/shd-desk",
        "data": {
            "train_path": None,
            "test_path": None,
            "n_train_per_class": 75,
            "n_test_per_class": 25,
            "channel_jitter_sigma": 0.0,
            "data_seed": 77,
        },
        "network": {"n_in": 70, "n_hidden": 186, "n_out": 4, "recurrent": True},
        "substrate": {
            "dt_sample": 1.7,
            "substeps": 10,
            "tau_m": 10.0,
            "tau_s": 10.0,
            "refrac": 0.0,
            "noise_sigma": 0.02,
            "trace_noise_sigma": 0.01,
            "sigma_d": 0.0,
            "decalib_groups": [GROUP_TIME_CONSTANTS, GROUP_THRESHOLD_GAP],
            "silence_fraction": 0.0,
        },
        "model": {"tau_m": 10.0, "tau_s": 10.0, "beta": 50.0, "interp_factor": 1},
        "train": {
            "eta": 1.5e-3,
            "gamma_eta": 0.025,
            "epochs": 50,
            "batch_size": 10,
            "dropout_p": 0.0,
            "sigma_w_hat": 0.24,
            "w_cap": 1.0,
            "workers": 8,
            "software_mode": False,
        },
        "loss": {
            "mode": MODE_SUM,
            "rho_a": 4e-4,
            "rho_b": 0.0,
            "rho_r": 0.6e-3,
            "theta_r": 600.0,
        },
    }


def _shd_paper() -> dict:
    d = _shd_desk()
    d["output_dir"] = "runs/shd-paper"
    d["data"].update(
        {
            "train_path": "shd_train.events",
            "test_path": "shd_test.events",
            "channel_jitter_sigma": 1.0,
        }
    )
    d["network"]["n_out"] = 20
    return d


_PRESETS = {
    ("mnist16", "desk"): _mnist_desk,
    ("mnist16", "paper"): _mnist_paper,
    ("shd", "desk"): _shd_desk,
    ("shd", "paper"): _shd_paper,
}


def preset_dict(task: str, preset: str) -> dict:
    try:
        return _PRESETS[(task, preset)]()
    except KeyError:
        raise ConfigError(
            f"no preset {preset!r} for task {task!r}; available: "
            f"{sorted(set(p for _, p in _PRESETS))} for tasks {TASKS}"
        ) from None


def preset_config(task: str, preset: str) -> RunConfig:
    return parse_config(preset_dict(task, preset))
