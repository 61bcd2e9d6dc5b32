"""Dataset assembly for the two bundled tasks.

mnist16: a bundled 10 000-image subset of the handwritten digits, laid out
so both standard splits are class-balanced: the first 5 000 images are
strict round-robin by class (any train prefix up to 5 000 is balanced), and
the last 1 000 — the test tail — are strict round-robin again (100 per
class).  Images are cropped/downscaled to 16x16 and latency-encoded;
optional training-time rotation augmentation re-encodes each epoch.

shd: a 70-channel event-stream task.  If the config points at real event
files they are loaded, optionally channel-jittered (train split only) and
subsampled 700 -> 70; otherwise a synthetic spoken-word-like corpus is
generated, which follows the same 700-channel pipeline.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..encoding import (
    EventDataset,
    LatencyCoderParams,
    channel_jitter_augment,
    downscale_image,
    latency_encode,
    load_events,
    make_synthetic_speech,
    rotate_image,
    subsample_and_scale,
)
from ..errors import ConfigError, DataMissingError
from ..rng import TAG_AUGMENT, stream
from .config import RunConfig, resolve_data_path

MNIST_ASSET = "assets/mnist_subset.npz"
MNIST_TOTAL = 10000


def _load_mnist_asset():
    ref = resources.files("spikeloop").joinpath(MNIST_ASSET)
    with resources.as_file(ref) as path:
        with np.load(path) as data:
            images = data["images"].astype(np.float64) / 255.0
            labels = data["labels"].astype(np.int64)
    return images, labels


def _encode_image(img28: np.ndarray, coder: LatencyCoderParams) -> list:
    return latency_encode(downscale_image(img28), coder)


class RotatingMnist:
    """Training-set view that re-rotates and re-encodes every epoch.

    Duck-typed EventDataset: .samples/.n_channels/.n_classes/.duration plus
    epoch_view(epoch).  Angles are reproducible from (seed, epoch, index).
    """

    def __init__(self, images, labels, coder, duration, max_deg, seed):
        self._images = images
        self._labels = labels
        self._coder = coder
        self._max_deg = max_deg
        self._seed = seed
        self.n_channels = 256
        self.n_classes = 10
        self.duration = duration
        self.samples = [
            (_encode_image(img, coder), int(lab)) for img, lab in zip(images, labels)
        ]

    def epoch_view(self, epoch: int) -> EventDataset:
        samples = []
        for idx, (img, lab) in enumerate(zip(self._images, self._labels)):
            angle = stream(self._seed, TAG_AUGMENT, epoch, idx).uniform(
                -self._max_deg, self._max_deg
            )
            samples.append((_encode_image(rotate_image(img, angle), self._coder), int(lab)))
        return EventDataset(
            samples=samples,
            n_channels=self.n_channels,
            n_classes=self.n_classes,
            duration=self.duration,
        )


def _mnist_datasets(rc: RunConfig, run_seed: int):
    d = rc.data
    if rc.network.n_in != 256 or rc.network.n_out != 10:
        raise ConfigError(
            "mnist16 needs network.n_in=256 and network.n_out=10, got "
            f"{rc.network.n_in}/{rc.network.n_out}"
        )
    if d.n_train + d.n_test > MNIST_TOTAL:
        raise DataMissingError(
            f"bundled image subset holds {MNIST_TOTAL} samples; "
            f"n_train={d.n_train} + n_test={d.n_test} exceeds it (full-scale "
            "data is not shipped with the package)"
        )
    if d.t_max > d.duration:
        raise ConfigError("data.t_max must not exceed data.duration")
    images, labels = _load_mnist_asset()
    coder = LatencyCoderParams(tau_in=d.tau_in, theta_in=d.theta_in, t_max=d.t_max)
    train_imgs, train_labs = images[: d.n_train], labels[: d.n_train]
    test_imgs = images[MNIST_TOTAL - d.n_test :]
    test_labs = labels[MNIST_TOTAL - d.n_test :]
    test_ds = EventDataset(
        samples=[(_encode_image(i, coder), int(l)) for i, l in zip(test_imgs, test_labs)],
        n_channels=256,
        n_classes=10,
        duration=d.duration,
    )
    if d.augment_deg > 0:
        train_ds = RotatingMnist(
            train_imgs, train_labs, coder, d.duration, d.augment_deg, run_seed
        )
    else:
        train_ds = EventDataset(
            samples=[(_encode_image(i, coder), int(l)) for i, l in zip(train_imgs, train_labs)],
            n_channels=256,
            n_classes=10,
            duration=d.duration,
        )
    return train_ds, test_ds


def _load_event_file(path: str) -> EventDataset:
    resolved = resolve_data_path(path)
    try:
        return load_events(resolved)
    except FileNotFoundError:
        raise DataMissingError(
            f"event file not found: {resolved} (set SPIKELOOP_DATA_ROOT or fix the path)"
        ) from None


def _shd_datasets(rc: RunConfig, run_seed: int):
    d = rc.data
    if d.train_path:
        if not d.test_path:
            raise ConfigError("data.test_path is required when data.train_path is set")
        train_raw = _load_event_file(d.train_path)
        test_raw = _load_event_file(d.test_path)
    else:
        train_raw = make_synthetic_speech(
            d.n_train_per_class, seed=d.data_seed, n_classes=rc.network.n_out
        )
        test_raw = make_synthetic_speech(
            d.n_test_per_class, seed=d.data_seed + 1, n_classes=rc.network.n_out
        )
    if d.channel_jitter_sigma > 0:
        train_raw = channel_jitter_augment(train_raw, d.channel_jitter_sigma, d.data_seed + 2)
    train_ds = subsample_and_scale(train_raw)
    test_ds = subsample_and_scale(test_raw)
    if train_ds.n_classes != rc.network.n_out:
        raise ConfigError(
            f"dataset has {train_ds.n_classes} classes but network.n_out={rc.network.n_out}"
        )
    if rc.network.n_in != train_ds.n_channels:
        raise ConfigError(
            f"subsampled dataset has {train_ds.n_channels} channels but "
            f"network.n_in={rc.network.n_in}"
        )
    duration = max(train_ds.duration, test_ds.duration)
    train_ds.duration = duration
    test_ds.duration = duration
    return train_ds, test_ds


def build_datasets(rc: RunConfig, run_seed: int):
    """Returns (train_ds, test_ds) for the configured task."""
    if rc.task == "mnist16":
        return _mnist_datasets(rc, run_seed)
    if rc.task == "shd":
        return _shd_datasets(rc, run_seed)
    raise ConfigError(f"unknown task {rc.task!r}")
