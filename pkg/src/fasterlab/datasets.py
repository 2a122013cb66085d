"""Synthetic video tasks and the on-disk dataset format.

Two tasks make temporal-aggregation claims testable at desk scale:

* order: every video shows an expanding square and a sweeping bar in two
  disjoint time windows; the label says which came first. The two windows are
  mirror images of each other inside the video and both classes contain the
  same two events, so the pooled frame statistics of the classes are
  identical and any classifier that averages per-clip scores is capped at
  chance. The gap between the windows is at least one clip length, so no
  clip ever spans both events.

* speed: a soft dot drifts across a wrapping frame at a slow or fast speed.
  Start position, direction and brightness are random, so any single frame
  is uninformative; only temporal structure separates the classes.

Datasets serialize to a raw little-endian container (magic "FVDS"): no codec,
bit-exact round trips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scheduler import sample_clips_eval
from .tensor import ShapeError


class DatasetFormatError(ValueError):
    """Bad magic or unsupported container version."""


class DatasetTruncatedError(ValueError):
    """The file ended before the declared samples were read."""


class LabelRangeError(ValueError):
    """A stored label falls outside the expected class range."""


@dataclass
class VideoSample:
    sample_id: int
    label: int
    frames: np.ndarray  # [T,H,W,3] uint8


@dataclass
class VideoDataset:
    samples: list[VideoSample]
    num_classes: int
    kind: str = "unknown"

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass(frozen=True)
class TaskSpec:
    kind: str                    # "order" | "speed"
    num_frames: int = 40
    resolution: int = 32
    num_classes: int = 2
    noise: float = 6.0           # sigma of per-pixel background noise (u8 scale)
    # order task
    event_len: int = 12
    min_gap: int = 8             # no clip of this length may span both events
    start_jitter: tuple[int, int] = (2, 4)
    # speed task
    dot_sigma: float = 1.3
    slow_speed: float = 0.75
    fast_speed: float = 2.0
    dot_peak: tuple[float, float] = (160.0, 240.0)

    def __post_init__(self):
        if self.kind not in ("order", "speed"):
            raise ShapeError(f"unknown task kind {self.kind!r}")
        if self.kind == "order" and self.num_classes != 2:
            raise ShapeError("the order task has exactly 2 classes")


def normalize_frames(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map u8 pixels to roughly zero-mean unit-range floats: (x/255 - 0.5)/0.25."""
    return ((frames.astype(dtype) / 255.0) - 0.5) / 0.25


# ---------------------------------------------------------------------------
# order task


@dataclass(frozen=True)
class OrderGeometry:
    """Event layout of one order-task video."""

    first_start: int
    second_start: int
    event_len: int
    square_first: bool           # label = 1 iff the square precedes the bar

    @property
    def label(self) -> int:
        return 1 if self.square_first else 0

    @property
    def square_window(self) -> tuple[int, int]:
        s = self.first_start if self.square_first else self.second_start
        return (s, s + self.event_len)

    @property
    def bar_window(self) -> tuple[int, int]:
        s = self.second_start if self.square_first else self.first_start
        return (s, s + self.event_len)


def swap_order_events(geom: OrderGeometry) -> OrderGeometry:
    """Exchange the contents of the two windows; flips the label."""
    return OrderGeometry(geom.first_start, geom.second_start, geom.event_len,
                         not geom.square_first)


def _check_order_feasible(spec: TaskSpec) -> None:
    lo, hi = spec.start_jitter
    d = spec.event_len
    t = spec.num_frames
    worst_gap = t - 2 * hi - 2 * d
    if lo < 0 or hi < lo:
        raise ShapeError(f"bad start jitter range {spec.start_jitter}")
    if worst_gap < spec.min_gap:
        raise ShapeError(
            f"order task infeasible: {t} frames leave a gap of {worst_gap} between "
            f"events (need >= {spec.min_gap}); shrink events or add frames")
    if spec.resolution < 12:
        raise ShapeError(f"order task needs resolution >= 12, got {spec.resolution}")


def sample_order_geometry(spec: TaskSpec, rng: np.random.Generator) -> OrderGeometry:
    _check_order_feasible(spec)
    lo, hi = spec.start_jitter
    a = int(rng.integers(lo, hi + 1))
    first = a
    second = spec.num_frames - spec.event_len - a   # mirrored placement
    square_first = bool(rng.integers(0, 2))
    return OrderGeometry(first, second, spec.event_len, square_first)


def _render_square(frame: np.ndarray, progress: float) -> None:
    """Expanding bright square centered in the frame."""
    h, w = frame.shape
    half = 1 + progress * (min(h, w) // 2 - 2)
    cy, cx = h // 2, w // 2
    y0, y1 = int(round(cy - half)), int(round(cy + half))
    x0, x1 = int(round(cx - half)), int(round(cx + half))
    frame[max(y0, 0):y1, max(x0, 0):x1] = 210


def _render_bar(frame: np.ndarray, progress: float) -> None:
    """Full-height bar sweeping left to right."""
    h, w = frame.shape
    bar_w = max(2, w // 8)
    x0 = int(round(progress * (w - bar_w)))
    frame[:, x0:x0 + bar_w] = 210


def render_order_video(spec: TaskSpec, geom: OrderGeometry,
                       noise_rng: np.random.Generator) -> np.ndarray:
    t, res = spec.num_frames, spec.resolution
    base = 28.0 + noise_rng.normal(0.0, spec.noise, size=(t, res, res))
    frames = np.clip(base, 0, 255)
    d = geom.event_len
    for name, (start, end) in (("square", geom.square_window), ("bar", geom.bar_window)):
        render = _render_square if name == "square" else _render_bar
        for i in range(start, end):
            progress = (i - start) / max(d - 1, 1)
            render(frames[i], progress)
    return np.repeat(frames.astype(np.uint8)[..., None], 3, axis=-1)


def gen_order_task(spec: TaskSpec, n_samples: int, rng: np.random.Generator) -> VideoDataset:
    if spec.kind != "order":
        raise ShapeError(f"gen_order_task got a {spec.kind!r} spec")
    _check_order_feasible(spec)
    samples = []
    for i in range(n_samples):
        geom = sample_order_geometry(spec, rng)
        frames = render_order_video(spec, geom, rng)
        samples.append(VideoSample(sample_id=i, label=geom.label, frames=frames))
    return VideoDataset(samples, num_classes=2, kind="order")


def clip_event_overlap(geom: OrderGeometry, start: int, length: int) -> tuple[int, int]:
    """Frames of a [start, start+length) clip inside the square/bar windows."""
    def overlap(win):
        a, b = win
        return max(0, min(start + length, b) - max(start, a))
    return overlap(geom.square_window), overlap(geom.bar_window)


def clairvoyant_avg_pool_accuracy(spec: TaskSpec, clip_len: int, num_clips: int,
                                  rng: np.random.Generator,
                                  n_train: int = 10_000, n_test: int = 10_000) -> float:
    """Upper bound witness for score averaging on the order task.

    A clairvoyant per-clip classifier is given the ground-truth event content
    of each clip (frames of square / frames of bar, the sufficient statistic
    of an unordered clip) and uses the empirically optimal posterior per
    content key; the per-clip posteriors are then averaged like any
    score-averaging pipeline. Because the two classes produce identical
    multisets of clip contents by construction, this lands at chance no
    matter how much training data the table sees.
    """
    def video_keys(geom):
        clips = sample_clips_eval(spec.num_frames, clip_len, num_clips)
        return [clip_event_overlap(geom, w.start, clip_len) for w in clips.windows]

    counts: dict[tuple[int, int], np.ndarray] = {}
    for _ in range(n_train):
        geom = sample_order_geometry(spec, rng)
        for key in video_keys(geom):
            counts.setdefault(key, np.zeros(2))[geom.label] += 1

    correct = 0
    for _ in range(n_test):
        geom = sample_order_geometry(spec, rng)
        posteriors = []
        for key in video_keys(geom):
            c = counts.get(key)
            if c is None or c.sum() == 0:
                posteriors.append(np.array([0.5, 0.5]))
            else:
                posteriors.append((c + 1.0) / (c.sum() + 2.0))
        avg = np.mean(posteriors, axis=0)
        pred = int(np.argmax(avg))   # ties break toward class 0
        correct += pred == geom.label
    return correct / n_test


# ---------------------------------------------------------------------------
# speed task


def gen_speed_task(spec: TaskSpec, n_samples: int, rng: np.random.Generator) -> VideoDataset:
    if spec.kind != "speed":
        raise ShapeError(f"gen_speed_task got a {spec.kind!r} spec")
    if spec.num_frames < 8:
        raise ShapeError(f"speed task needs >= 8 frames, got {spec.num_frames}")
    t, res = spec.num_frames, spec.resolution
    grid_y, grid_x = np.mgrid[0:res, 0:res].astype(np.float64)
    samples = []
    for i in range(n_samples):
        label = int(rng.integers(0, 2))
        speed = spec.fast_speed if label else spec.slow_speed
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vy, vx = speed * np.sin(angle), speed * np.cos(angle)
        py, px = rng.uniform(0, res), rng.uniform(0, res)
        peak = rng.uniform(*spec.dot_peak)
        frames = 28.0 + rng.normal(0.0, spec.noise, size=(t, res, res))
        for f in range(t):
            cy, cx = (py + vy * f) % res, (px + vx * f) % res
            # torus distance keeps the marginal frame distribution uniform
            dy = np.minimum(np.abs(grid_y - cy), res - np.abs(grid_y - cy))
            dx = np.minimum(np.abs(grid_x - cx), res - np.abs(grid_x - cx))
            blob = np.exp(-(dy * dy + dx * dx) / (2.0 * spec.dot_sigma ** 2))
            frames[f] += peak * blob
        frames = np.clip(frames, 0, 255).astype(np.uint8)
        samples.append(VideoSample(sample_id=i, label=label,
                                   frames=np.repeat(frames[..., None], 3, axis=-1)))
    return VideoDataset(samples, num_classes=2, kind="speed")


def make_task(kind: str, **overrides) -> TaskSpec:
    defaults = {"order": dict(num_frames=40, event_len=12),
                "speed": dict(num_frames=16, event_len=0, min_gap=0)}
    if kind not in defaults:
        raise ShapeError(f"unknown task kind {kind!r}")
    merged = {**defaults[kind], **overrides}
    return TaskSpec(kind=kind, **merged)


def generate(spec: TaskSpec, n_samples: int, rng: np.random.Generator) -> VideoDataset:
    if spec.kind == "order":
        return gen_order_task(spec, n_samples, rng)
    return gen_speed_task(spec, n_samples, rng)


# ---------------------------------------------------------------------------
# on-disk container

_MAGIC = b"FVDS"
_VERSION = 1
_HEADER = struct.Struct("<4sII")
_SAMPLE_HEADER = struct.Struct("<IHHHH")


def write_fvds(path, dataset: VideoDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, len(dataset.samples)))
        for s in dataset.samples:
            frames = np.ascontiguousarray(s.frames, dtype=np.uint8)
            t, h, w, c = frames.shape
            if c != 3:
                raise ShapeError(f"sample {s.sample_id}: frames must be [T,H,W,3]")
            fh.write(_SAMPLE_HEADER.pack(s.sample_id, s.label, t, h, w))
            fh.write(frames.tobytes())


def read_fvds(path, expected_classes: int | None = None) -> VideoDataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DatasetTruncatedError(f"{path}: file shorter than header")
        magic, version, count = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        samples = []
        for i in range(count):
            rec = fh.read(_SAMPLE_HEADER.size)
            if len(rec) < _SAMPLE_HEADER.size:
                raise DatasetTruncatedError(f"{path}: truncated at sample {i}")
            sid, label, t, h, w = _SAMPLE_HEADER.unpack(rec)
            nbytes = t * h * w * 3
            raw = fh.read(nbytes)
            if len(raw) < nbytes:
                raise DatasetTruncatedError(f"{path}: truncated frame data at sample {i}")
            if expected_classes is not None and label >= expected_classes:
                raise LabelRangeError(
                    f"{path}: sample {i} label {label} out of range [0,{expected_classes})")
            frames = np.frombuffer(raw, dtype=np.uint8).reshape(t, h, w, 3).copy()
            samples.append(VideoSample(sample_id=sid, label=label, frames=frames))
    labels = [s.label for s in samples]
    inferred = (max(labels) + 1) if labels else 0
    return VideoDataset(samples, num_classes=max(expected_classes or 0, inferred, 2))
