"""Encoding tests: image downscaling, latency coding, rotation, the event
file format, channel subsampling, jitter augmentation, and the synthetic
speech-like corpus.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

import spikeloop as sl


# -------------------------------------------------------------- downscaling

def test_downscale_conserves_mean():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.0, 1.0, (28, 28))
    out = sl.downscale_image(img)
    assert out.shape == (16, 16)
    # area averaging over a uniform partition preserves the mean exactly
    assert abs(out.mean() - img[2:26, 2:26].mean()) <= 1e-12

    checker = np.indices((28, 28)).sum(axis=0) % 2
    out = sl.downscale_image(checker.astype(float))
    assert abs(out.mean() - checker[2:26, 2:26].mean()) <= 1e-12


def test_downscale_constant_image_is_fixed_point():
    out = sl.downscale_image(np.full((28, 28), 0.375))
    np.testing.assert_allclose(out, 0.375, rtol=1e-14)


def test_downscale_validation():
    with pytest.raises(sl.ConfigError, match="28x28"):
        sl.downscale_image(np.zeros((16, 16)))
    with pytest.raises(sl.ConfigError, match=r"\[0, 1\]"):
        sl.downscale_image(np.full((28, 28), 1.5))


# ------------------------------------------------------------ latency code

def test_latency_encode_times():
    p = sl.LatencyCoderParams()  # tau 8, theta 0.2, window 30
    img = np.array([[1.0, 0.0], [0.0, 0.5]])
    events = dict(sl.latency_encode(img, p))
    # constant-current threshold crossing: t = tau * ln(x / (x - theta))
    assert events[0] == pytest.approx(8.0 * math.log(1.0 / 0.8), rel=1e-15)
    assert events[3] == pytest.approx(8.0 * math.log(0.5 / 0.3), rel=1e-15)
    assert set(events) == {0, 3}  # channels are row-major pixel indices


def test_latency_encode_silences_dim_pixels():
    p = sl.LatencyCoderParams()
    # at threshold the crossing time diverges; below it the unit never fires
    assert sl.latency_encode(np.array([[0.2, 0.15]]), p) == []
    # just above threshold the crossing lands past the window and is dropped
    assert 8.0 * math.log(0.204 / 0.004) > 30.0
    assert sl.latency_encode(np.array([[0.204]]), p) == []
    assert len(sl.latency_encode(np.array([[0.21]]), sl.LatencyCoderParams(t_max=1e9))) == 1


def test_latency_params_validation():
    for bad in (
        dict(theta_in=0.0),
        dict(theta_in=1.0),
        dict(tau_in=0.0),
        dict(t_max=-1.0),
    ):
        with pytest.raises(sl.ConfigError):
            sl.LatencyCoderParams(**bad).validate()
    with pytest.raises(sl.ConfigError, match="2-D"):
        sl.latency_encode(np.zeros(4), sl.LatencyCoderParams())


@pytest.mark.properties
def test_latency_encode_brighter_is_earlier():
    p = sl.LatencyCoderParams(t_max=1e9)
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = np.sort(rng.uniform(0.201, 1.0, 2))
        ((_, tb),) = sl.latency_encode(np.array([[b]]), p)
        ((_, ta),) = sl.latency_encode(np.array([[a]]), p)
        if a < b:
            assert tb < ta
        assert ta > 0 and tb > 0


# ---------------------------------------------------------------- rotation

def _blob(h=28, w=28, sigma=5.0):
    ys, xs = np.indices((h, w))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    return np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma**2))


def test_rotate_zero_angle_is_identity():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (28, 28))
    np.testing.assert_array_equal(sl.rotate_image(img, 0.0), img)


def test_rotate_symmetric_image_is_invariant():
    img = _blob()
    for deg in (90.0, 37.0, -12.5):
        assert np.abs(sl.rotate_image(img, deg) - img).max() < 2e-2


def test_rotate_conserves_mass():
    img = _blob(sigma=4.0)
    rot = sl.rotate_image(img, 10.0)
    assert abs(rot.sum() - img.sum()) < 0.05 * img.sum()


def test_rotate_augment_deterministic():
    img = _blob()
    a = sl.rotate_augment(img, max_deg=15.0, seed=4)
    b = sl.rotate_augment(img, max_deg=15.0, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sl.rotate_augment(img, max_deg=15.0, seed=5))
    np.testing.assert_array_equal(sl.rotate_augment(img, max_deg=0.0, seed=4), img)


# ------------------------------------------------------------ event format

def _ragged_dataset():
    samples = [
        ([(0, 0.1 + 0.2), (699, 1.0 / 3.0), (42, 1e-9)], 0),
        ([], 2),
        ([(5, 0.0)], 1),
    ]
    return sl.EventDataset(samples=samples, n_channels=700, n_classes=3)


@pytest.mark.properties
def test_event_file_round_trip(tmp_path):
    path = tmp_path / "corpus.events"
    ds = _ragged_dataset()
    sl.save_events(path, ds)
    back = sl.load_events(path)
    assert back.n_channels == 700 and back.n_classes == 3
    assert back.samples == ds.samples  # float repr round-trips exactly


def test_event_file_parses_without_trailing_blank(tmp_path):
    path = tmp_path / "eof.events"
    path.write_text("channels=10 classes=2\nsample label=1\n0.25 3")
    ds = sl.load_events(path)
    assert ds.samples == [([(3, 0.25)], 1)]


def test_event_file_empty_sample_block(tmp_path):
    path = tmp_path / "empty.events"
    path.write_text("channels=10 classes=2\nsample label=0\n\n")
    assert sl.load_events(path).samples == [([], 0)]


@pytest.mark.parametrize(
    "body,line,needle",
    [
        ("junk\n", 1, "header"),
        ("channels=10 classes=2\n0.5 3\n", 2, "outside a sample"),
        ("channels=10 classes=2\nsample label=2\n", 2, "label 2 >= classes"),
        ("channels=10 classes=2\nsample label=0\nsample label=1\n", 3, "not blank-line terminated"),
        ("channels=10 classes=2\nsample label=0\nabc 3\n", 3, "bad event time"),
        ("channels=10 classes=2\nsample label=0\n-1.0 3\n", 3, "bad event time"),
        ("channels=10 classes=2\nsample label=0\n0.5 10\n", 3, "channel 10 >= channels"),
        ("channels=10 classes=2\nsample label=0\n0.5 3 7\n", 3, "unrecognized"),
    ],
)
def test_event_file_errors_carry_line_numbers(tmp_path, body, line, needle):
    path = tmp_path / "bad.events"
    path.write_text(body)
    with pytest.raises(sl.EventFormatError, match=needle) as exc_info:
        sl.load_events(path)
    assert exc_info.value.line == line
    assert f"line {line}:" in str(exc_info.value)


def test_event_file_channel_boundary(tmp_path):
    path = tmp_path / "edge.events"
    path.write_text("channels=700 classes=1\nsample label=0\n0.5 699\n\n")
    assert sl.load_events(path).samples == [([(699, 0.5)], 0)]


def test_event_dataset_validation():
    with pytest.raises(sl.ConfigError, match="label"):
        sl.EventDataset([([], 3)], n_channels=10, n_classes=3).validate()
    with pytest.raises(sl.ConfigError, match="channel"):
        sl.EventDataset([([(10, 0.0)], 0)], n_channels=10, n_classes=3).validate()
    with pytest.raises(sl.ConfigError, match="negative"):
        sl.EventDataset([([(0, -1.0)], 0)], n_channels=10, n_classes=3).validate()
    with pytest.raises(sl.ConfigError, match="outside duration"):
        sl.EventDataset(
            [([(0, 5.0)], 0)], n_channels=10, n_classes=3, duration=5.0
        ).validate()
    _ragged_dataset().validate()  # a healthy dataset passes


# ------------------------------------------------------------- subsampling

def test_subsample_keeps_every_ninth_channel():
    samples = [
        ([(70, 0.8), (79, 0.3), (71, 0.1), (69, 0.1), (691, 0.1), (699, 0.1)], 0),
        ([], 1),
    ]
    ds = sl.EventDataset(samples=samples, n_channels=700, n_classes=2)
    out = sl.subsample_and_scale(ds)
    assert out.n_channels == 70 and out.n_classes == 2
    # kept channels {70 + 9k} remap to 0..69; 0.8 s becomes 400 µs
    assert out.samples[0][0] == [(0, 400.0), (1, 150.0), (69, 50.0)]
    assert out.samples[1] == ([], 1)
    assert out.duration == 450.0  # ceil(max event time) + 50 µs of headroom


def test_subsample_needs_enough_channels():
    ds = sl.EventDataset([([], 0)], n_channels=691, n_classes=1)
    with pytest.raises(sl.ConfigError, match="692"):
        sl.subsample_and_scale(ds)
    quiet = sl.subsample_and_scale(
        sl.EventDataset([([], 0)], n_channels=692, n_classes=1)
    )
    assert quiet.duration == 50.0


# ------------------------------------------------------------------ jitter

def test_jitter_zero_sigma_is_passthrough():
    ds = _ragged_dataset()
    assert sl.channel_jitter_augment(ds, 0.0, seed=1) is ds
    with pytest.raises(sl.ConfigError, match="sigma"):
        sl.channel_jitter_augment(ds, -1.0, seed=1)


def test_jitter_statistics_and_determinism():
    n = 100_000
    events = [(350, float(i)) for i in range(n)]
    ds = sl.EventDataset([(events, 0), (list(events), 0)], n_channels=700, n_classes=1)
    out = sl.channel_jitter_augment(ds, 2.0, seed=6)
    moved, _ = out.samples[0]
    assert len(moved) == n
    assert [t for _, t in moved] == [t for _, t in events]  # times untouched
    shifts = np.array([ch for ch, _ in moved], float) - 350.0
    # round(Normal(0, sigma)) keeps the mean and widens the std by ~1/12
    assert abs(shifts.mean()) < 0.03
    assert abs(shifts.std() - 2.0) < 0.1
    # identical samples draw from distinct per-sample streams
    assert out.samples[0] != out.samples[1]
    again = sl.channel_jitter_augment(ds, 2.0, seed=6)
    assert again.samples == out.samples
    assert sl.channel_jitter_augment(ds, 2.0, seed=7).samples != out.samples


def test_jitter_clamps_to_channel_range():
    events = [(0, 0.0)] * 2000 + [(699, 0.0)] * 2000
    ds = sl.EventDataset([(events, 0)], n_channels=700, n_classes=1)
    out = sl.channel_jitter_augment(ds, 5.0, seed=8)
    chans = np.array([ch for ch, _ in out.samples[0][0]])
    assert chans.min() >= 0 and chans.max() <= 699


# --------------------------------------------------------------- synthetic

def test_synthetic_speech_structure():
    ds = sl.make_synthetic_speech(n_per_class=3, seed=9)
    assert ds.n_channels == 700 and ds.n_classes == 4
    assert len(ds.samples) == 12
    assert [label for _, label in ds.samples] == [i % 4 for i in range(12)]
    for events, _ in ds.samples:
        times = np.array([t for _, t in events])
        chans = np.array([ch for ch, _ in events])
        assert 1000 < len(events) < 2600  # three Poisson(600) segments
        assert np.all(np.diff(times) >= 0)
        assert times.min() >= 0.0 and times.max() <= 0.4  # seconds
        assert chans.min() >= 0 and chans.max() <= 699
        assert chans.dtype.kind == "i"


def test_synthetic_speech_deterministic():
    a = sl.make_synthetic_speech(2, seed=10)
    b = sl.make_synthetic_speech(2, seed=10)
    assert a.samples == b.samples
    assert a.samples != sl.make_synthetic_speech(2, seed=11).samples


def test_synthetic_speech_sweeps_differ_in_time_not_rate():
    # the ascending and descending classes share band statistics; only the
    # temporal order separates them
    ds = sl.make_synthetic_speech(n_per_class=4, seed=12)
    by_class = {label: events for events, label in ds.samples[:4][::-1]}

    def early_mean_channel(events):
        third = [ch for ch, t in events if t < 0.4 / 3]
        return np.mean(third)

    assert early_mean_channel(by_class[0]) < 250  # ascending: starts low
    assert early_mean_channel(by_class[1]) > 400  # descending: starts high
    all0 = np.mean([ch for ch, _ in by_class[0]])
    all1 = np.mean([ch for ch, _ in by_class[1]])
    assert abs(all0 - all1) < 60  # overall rate profile nearly matched


def test_synthetic_speech_validation():
    with pytest.raises(sl.ConfigError, match="n_classes"):
        sl.make_synthetic_speech(1, seed=0, n_classes=5)
    two = sl.make_synthetic_speech(1, seed=0, n_classes=2)
    assert len(two.samples) == 2


def test_synthetic_feeds_subsample_pipeline():
    ds = sl.make_synthetic_speech(n_per_class=1, seed=13)
    out = sl.subsample_and_scale(ds)
    out.validate()
    assert out.n_channels == 70
    assert out.duration == 250.0  # 0.4 s -> 200 µs window + 50 µs tail
    counts = [len(ev) for ev, _ in out.samples]
    # one channel in nine is kept
    assert all(100 < c < 350 for c in counts)
