"""Dataset-to-spike conversion.

Images: crop the 2-pixel border (28 -> 24), area-average down to 16x16, and
latency-encode each pixel — treating its gray value x as a constant current
into an integrate-and-fire unit that crosses threshold at

    t = tau_in * ln(x / (x - theta_in))    for x > theta_in,

so brighter pixels spike earlier and sub-threshold pixels stay silent.
Rotation augmentation resamples the image bilinearly about its center.

Event streams (speech-like data): a plain text format holds (time, channel)
events grouped into labeled samples.  The 700-channel stream is reduced to
70 channels by keeping every ninth channel starting at 70, time is divided
by 2000 (seconds in, microseconds out), and augmentation jitters each
event's channel with round(Normal(i, sigma)).  A synthetic generator builds
a small spoken-word-like corpus — per class, a fixed sequence of frequency-
band sweeps — for tests and desk-scale runs when no real corpus is on disk.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EventFormatError
from .rng import TAG_AUGMENT, TAG_SYNTH, stream


@dataclass(frozen=True)
class LatencyCoderParams:
    tau_in: float = 8.0     # µs
    theta_in: float = 0.2   # threshold on the normalized gray value
    t_max: float = 30.0     # µs, events at or beyond are dropped

    def validate(self) -> None:
        if not 0.0 < self.theta_in < 1.0:
            raise ConfigError("theta_in must lie in (0, 1)")
        if self.tau_in <= 0 or self.t_max <= 0:
            raise ConfigError("tau_in and t_max must be positive")


@dataclass
class EventDataset:
    """Labeled event-stream samples on a shared channel set.

    Each sample is (events, label) with events a list of (channel, time)
    pairs.  Times are in file units (seconds) straight after load_events and
    in microseconds after subsample_and_scale or the synthetic generator;
    `duration` (µs) is the emulation window, set once times are in µs.
    """

    samples: list
    n_channels: int
    n_classes: int
    duration: float | None = None

    def validate(self) -> None:
        if self.n_channels < 1 or self.n_classes < 1:
            raise ConfigError("n_channels and n_classes must be >= 1")
        for i, (events, label) in enumerate(self.samples):
            if not 0 <= label < self.n_classes:
                raise ConfigError(f"sample {i}: label {label} out of range")
            for ch, t in events:
                if not 0 <= ch < self.n_channels:
                    raise ConfigError(f"sample {i}: channel {ch} out of range")
                if t < 0:
                    raise ConfigError(f"sample {i}: negative event time {t}")
                if self.duration is not None and t >= self.duration:
                    raise ConfigError(
                        f"sample {i}: event at {t} outside duration {self.duration}"
                    )


def _downscale_matrix(n_src: int = 24, n_dst: int = 16) -> np.ndarray:
    """Row-stochastic area-average matrix: dst pixel i spans src interval
    [i*r, (i+1)*r) with r = n_src/n_dst, fractional edges weighted by overlap."""
    r = n_src / n_dst
    m = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        lo, hi = i * r, (i + 1) * r
        for j in range(int(math.floor(lo)), int(math.ceil(hi))):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap / r
    return m


_M16 = _downscale_matrix()


def downscale_image(img: np.ndarray) -> np.ndarray:
    """28x28 in [0, 1] -> crop 2-pixel border -> area-average 16x16."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (28, 28):
        raise ConfigError(f"expected a 28x28 image, got {img.shape}")
    if img.min() < -1e-9 or img.max() > 1 + 1e-9:
        raise ConfigError("image values must lie in [0, 1]")
    inner = img[2:26, 2:26]
    return _M16 @ inner @ _M16.T


def latency_encode(img16: np.ndarray, p: LatencyCoderParams) -> list:
    """One spike per sufficiently bright pixel, earlier for brighter ones.

    Channel = row-major pixel index; pixels with x <= theta_in stay silent;
    events at or past t_max are dropped.
    """
    p.validate()
    img16 = np.asarray(img16, dtype=np.float64)
    if img16.ndim != 2:
        raise ConfigError("latency_encode expects a 2-D image")
    x = img16.reshape(-1)
    events = []
    for ch in range(x.shape[0]):
        xi = x[ch]
        if xi <= p.theta_in:
            continue
        t = p.tau_in * math.log(xi / (xi - p.theta_in))
        if t < p.t_max:
            events.append((ch, t))
    return events


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear sampling, zero outside."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(degrees)
    c, s = math.cos(th), math.sin(th)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = ys - cy, xs - cx
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx, fy = src_x - x0, src_y - y0
    out = np.zeros_like(img)
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out[ok] += wgt[ok] * img[yy[ok], xx[ok]]
    return out


def rotate_augment(img: np.ndarray, max_deg: float = 15.0, seed: int = 0) -> np.ndarray:
    """Rotate by an angle drawn uniformly from [-max_deg, +max_deg]."""
    rng = stream(seed, TAG_AUGMENT)
    angle = rng.uniform(-max_deg, max_deg)
    return rotate_image(img, angle)


_HEADER_RE = re.compile(r"^channels=(\d+) classes=(\d+)$")
_SAMPLE_RE = re.compile(r"^sample label=(\d+)$")
_EVENT_RE = re.compile(r"^(\S+) (\d+)$")


def load_events(path) -> EventDataset:
    """Parse the text event format.

    Line 1: `channels=<n> classes=<k>`.  Each sample block starts with
    `sample label=<y>`, holds one `<time_seconds> <channel>` line per event,
    and is terminated by a blank line (or end of file).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not (m := _HEADER_RE.match(lines[0])):
        raise EventFormatError("expected header 'channels=<n> classes=<k>'", line=1)
    n_channels, n_classes = int(m.group(1)), int(m.group(2))
    samples = []
    events = None
    label = None
    for no, line in enumerate(lines[1:], start=2):
        if line == "":
            if events is not None:
                samples.append((events, label))
                events, label = None, None
            continue
        if m := _SAMPLE_RE.match(line):
            if events is not None:
                raise EventFormatError("sample block not blank-line terminated", line=no)
            label = int(m.group(1))
            if label >= n_classes:
                raise EventFormatError(f"label {label} >= classes {n_classes}", line=no)
            events = []
            continue
        if m := _EVENT_RE.match(line):
            if events is None:
                raise EventFormatError("event line outside a sample block", line=no)
            try:
                t = float(m.group(1))
            except ValueError:
                raise EventFormatError(f"bad event time {m.group(1)!r}", line=no) from None
            ch = int(m.group(2))
            if not math.isfinite(t) or t < 0:
                raise EventFormatError(f"bad event time {t!r}", line=no)
            if ch >= n_channels:
                raise EventFormatError(f"channel {ch} >= channels {n_channels}", line=no)
            events.append((ch, t))
            continue
        raise EventFormatError(f"unrecognized line {line!r}", line=no)
    if events is not None:
        samples.append((events, label))
    return EventDataset(samples=samples, n_channels=n_channels, n_classes=n_classes)


def save_events(path, ds: EventDataset) -> None:
    """Inverse of load_events (times written with round-trip precision)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"channels={ds.n_channels} classes={ds.n_classes}\n")
        for events, label in ds.samples:
            fh.write(f"sample label={label}\n")
            for ch, t in events:
                fh.write(f"{t!r} {ch}\n")
            fh.write("\n")


KEEP_FIRST = 70
KEEP_STRIDE = 9
KEEP_COUNT = 70


def subsample_and_scale(ds: EventDataset, scale_div: float = 2000.0, tail_us: float = 50.0) -> EventDataset:
    """Reduce 700 channels to 70 and convert seconds to microseconds.

    Keeps channels {70 + 9k}, remapped to 0..69; every other event is
    dropped.  New time = old / scale_div, in µs.  The emulation window is
    the largest event time rounded up plus tail_us of response headroom.
    """
    if ds.n_channels < KEEP_FIRST + KEEP_STRIDE * (KEEP_COUNT - 1) + 1:
        raise ConfigError(
            f"dataset has {ds.n_channels} channels; need at least "
            f"{KEEP_FIRST + KEEP_STRIDE * (KEEP_COUNT - 1) + 1} to subsample"
        )
    t_max = 0.0
    samples = []
    for events, label in ds.samples:
        out = []
        for ch, t in events:
            k, rem = divmod(ch - KEEP_FIRST, KEEP_STRIDE)
            if ch >= KEEP_FIRST and rem == 0 and k < KEEP_COUNT:
                t_us = t * 1e6 / scale_div
                out.append((k, t_us))
                t_max = max(t_max, t_us)
        samples.append((out, label))
    return EventDataset(
        samples=samples,
        n_channels=KEEP_COUNT,
        n_classes=ds.n_classes,
        duration=math.ceil(t_max) + tail_us,
    )


def channel_jitter_augment(ds: EventDataset, sigma: float, seed: int) -> EventDataset:
    """Redraw each event's channel as round(Normal(i, sigma)), clamped.

    Applied on the full 700-channel stream, before subsampling; times and
    event counts are untouched.  Reproducible per (seed, sample index).
    """
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return ds
    samples = []
    for idx, (events, label) in enumerate(ds.samples):
        rng = stream(seed, TAG_AUGMENT, idx)
        noise = rng.normal(0.0, sigma, len(events))
        out = [
            (int(min(max(round(ch + d), 0), ds.n_channels - 1)), t)
            for (ch, t), d in zip(events, noise)
        ]
        samples.append((out, label))
    return EventDataset(
        samples=samples,
        n_channels=ds.n_channels,
        n_classes=ds.n_classes,
        duration=ds.duration,
    )


# Synthetic spoken-word-like corpus: each class is a characteristic sequence
# of three frequency-band bursts (channel-space sweeps over a 700-channel
# cochleagram stand-in).  Times are seconds, matching the on-disk format.
SYNTH_CLASS_BANDS = (
    (120.0, 340.0, 560.0),  # ascending sweep
    (560.0, 340.0, 120.0),  # descending sweep
    (560.0, 120.0, 560.0),  # valley
    (120.0, 560.0, 120.0),  # peak
)
SYNTH_DURATION_S = 0.4
SYNTH_BAND_SIGMA = 35.0
SYNTH_EVENTS_PER_SEGMENT = 600.0
SYNTH_SPEAKER_SIGMA = 15.0


def make_synthetic_speech(
    n_per_class: int,
    seed: int,
    n_classes: int = 4,
    n_channels: int = 700,
) -> EventDataset:
    """Generate a labeled 700-channel event corpus (times in seconds).

    Class identity is the temporal order of the band bursts, so rate
    statistics alone cannot separate the sweep pair — temporal processing
    has to do it.  Per sample: a speaker-like global band offset, and per
    segment a Poisson number of events with Gaussian channel spread placed
    uniformly inside the segment's time window.
    """
    if not 1 <= n_classes <= len(SYNTH_CLASS_BANDS):
        raise ConfigError(f"n_classes must be in [1, {len(SYNTH_CLASS_BANDS)}]")
    samples = []
    for idx in range(n_per_class * n_classes):
        label = idx % n_classes
        rng = stream(seed, TAG_SYNTH, idx)
        offset = rng.normal(0.0, SYNTH_SPEAKER_SIGMA)
        bands = SYNTH_CLASS_BANDS[label]
        n_seg = len(bands)
        events = []
        for seg, center in enumerate(bands):
            t_lo = SYNTH_DURATION_S * seg / n_seg
            t_hi = SYNTH_DURATION_S * (seg + 1) / n_seg
            n_ev = rng.poisson(SYNTH_EVENTS_PER_SEGMENT)
            times = rng.uniform(t_lo, t_hi, n_ev)
            chans = rng.normal(center + offset, SYNTH_BAND_SIGMA, n_ev)
            for t, ch in zip(times, chans):
                ch_i = int(min(max(round(ch), 0), n_channels - 1))
                events.append((ch_i, float(t)))
        events.sort(key=lambda e: e[1])
        samples.append((events, label))
    return EventDataset(samples=samples, n_channels=n_channels, n_classes=n_classes)
