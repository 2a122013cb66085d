"""Two-stage training at miniature scale, evaluation, and checkpoint glue.

Stage one trains each clip backbone with its own head on clip-level labels.
Stage two freezes both backbones, extracts clip features per the schedule
pattern (eval-mode batch norm, nothing on the gradient tape) and trains an
aggregation cell plus a fresh head on the video labels. SGD with momentum,
weight decay on weights only, cosine learning-rate decay over all steps.

Metrics rows are (epoch, split, loss, top1); epoch 0 is a pre-update
measurement pass so the first row of a balanced run sits at ln(num_classes).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .aggregators import (ClassifierHead, ConcatCell, aggregate_sequence,
                          make_cell)
from .backbones import Backbone, BackboneConfig, build_backbone
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import VideoDataset, normalize_frames
from .scheduler import ClipSchedule, parse_pattern, sample_clips_eval, sample_clips_train
from .tensor import NumericError, ShapeError, Tape, Tensor


@dataclass
class TrainConfig:
    stage: str                       # "backbone" | "aggregator"
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    clip_len: int = 8
    num_clips: int = 8
    pattern: str = "1:7"             # aggregator stage only
    method: str = "fast-gru"         # aggregator stage only
    family: str = "r2d"              # backbone stage only
    resolution: int = 32
    channel_scale: float = 1.0 / 16
    num_classes: int = 2
    reduction: int = 4
    gate_bias: float = 0.0
    feature_cache: bool = False
    aggregator_lr: float | None = None

    def __post_init__(self):
        if self.stage not in ("backbone", "aggregator"):
            raise ShapeError(f"unknown stage {self.stage!r}")
        for name in ("epochs", "batch_size", "clip_len", "num_clips", "num_classes"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("base_lr",):
            if getattr(self, name) <= 0:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def frame_budget(self) -> int:
        return self.clip_len * self.num_clips

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    top1: float

    def as_csv(self) -> str:
        return f"{self.epoch},{self.split},{self.loss:.6f},{self.top1:.6f}"


METRICS_HEADER = "epoch,split,loss,top1"


def write_metrics(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr to zero over total_steps."""
    if not 0 <= step <= total_steps:
        raise ShapeError(f"cosine_lr: step {step} outside [0,{total_steps}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class SGD:
    """Momentum SGD; weight decay applies to weights/kernels, not biases or
    batch-norm affine parameters."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            if self.weight_decay and (name.endswith("weight") or name.endswith("kernel")):
                g = g + self.weight_decay * t.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data -= lr * v


# ---------------------------------------------------------------------------
# batch assembly


def _gather_clip(frames: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return frames[indices]


def _clip_batch(dataset: VideoDataset, video_idx, clip_sets, slot: int,
                dtype=np.float32) -> np.ndarray:
    """Normalized [B,L,H,W,3] array for clip ``slot`` of each chosen video."""
    clips = []
    for vi, cs in zip(video_idx, clip_sets):
        frames = dataset.samples[vi].frames
        clips.append(_gather_clip(frames, cs.frame_indices(slot)))
    return normalize_frames(np.stack(clips), dtype=dtype)


# ---------------------------------------------------------------------------
# stage one: clip backbones


def _batch_iter(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def train_backbone(config: TrainConfig, dataset: VideoDataset,
                   progress=None) -> tuple[Backbone, list[MetricsRow]]:
    if config.stage != "backbone":
        raise ShapeError("train_backbone needs a stage='backbone' config")
    if len(dataset) == 0:
        raise ShapeError("cannot train on an empty dataset")
    bb_config = BackboneConfig(
        family=config.family, preset="tiny", channel_scale=config.channel_scale,
        resolution=config.resolution, clip_len=config.clip_len,
        num_classes=config.num_classes, repeats=(1, 1, 1, 1))
    net = build_backbone(bb_config, seed=config.seed)
    params = net.named_params()
    opt = SGD(params, momentum=config.momentum, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    rows = [ _measure_backbone(net, dataset, config, epoch=0) ]
    step = 0
    for epoch in range(1, config.epochs + 1):
        losses, hits, seen = [], 0, 0
        for batch in _batch_iter(n, config.batch_size, rng):
            starts = [sample_clips_train(dataset.samples[vi].frames.shape[0],
                                         config.clip_len, 1, rng) for vi in batch]
            x = Tensor(_clip_batch(dataset, batch, starts, 0))
            labels = np.array([dataset.samples[vi].label for vi in batch])
            opt.zero_grad()
            with Tape() as tape:
                logits = net.logits(x, mode="train")
                loss = T.softmax_cross_entropy(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"train_backbone: loss went non-finite at epoch {epoch} step {step}")
            tape.backward(loss)
            opt.step(cosine_lr(step, total_steps, config.base_lr))
            step += 1
            losses.append(value)
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(batch)
        rows.append(MetricsRow(epoch, "train", float(np.mean(losses)), hits / seen))
        if progress:
            progress(f"backbone[{config.family}] epoch {epoch}/{config.epochs} "
                     f"loss {rows[-1].loss:.4f} top1 {rows[-1].top1:.3f}")
    return net, rows


def _measure_backbone(net: Backbone, dataset: VideoDataset, config: TrainConfig,
                      epoch: int) -> MetricsRow:
    """Loss/accuracy without updating parameters (train-mode batch norm so the
    pass works before any stats exist)."""
    losses, hits, seen = [], 0, 0
    for batch in _batch_iter(len(dataset), config.batch_size, None):
        sets = [sample_clips_eval(dataset.samples[vi].frames.shape[0],
                                  config.clip_len, 1) for vi in batch]
        x = Tensor(_clip_batch(dataset, batch, sets, 0))
        labels = np.array([dataset.samples[vi].label for vi in batch])
        logits = net.logits(x, mode="train")
        loss = T.softmax_cross_entropy(logits, labels)
        losses.append(float(loss.data) * len(batch))
        hits += int((logits.data.argmax(axis=1) == labels).sum())
        seen += len(batch)
    return MetricsRow(epoch, "train", float(np.sum(losses) / seen), hits / seen)


def evaluate_backbone_top1(net: Backbone, dataset: VideoDataset,
                           batch_size: int = 64) -> float:
    """Clip-level accuracy on centered single clips, eval-mode batch norm."""
    hits, seen = 0, 0
    L = net.config.clip_len
    for batch in _batch_iter(len(dataset), batch_size, None):
        sets = [sample_clips_eval(dataset.samples[vi].frames.shape[0], L, 1)
                for vi in batch]
        x = Tensor(_clip_batch(dataset, batch, sets, 0))
        labels = np.array([dataset.samples[vi].label for vi in batch])
        logits = net.logits(x, mode="eval")
        hits += int((logits.data.argmax(axis=1) == labels).sum())
        seen += len(batch)
    return hits / seen


# ---------------------------------------------------------------------------
# stage two: aggregation over frozen features


class FeatureCache:
    """Optional per-(video, start, source) cache of extracted clip features."""

    def __init__(self, enabled: bool = False):
        self.enabled = enabled
        self._store: dict[tuple, np.ndarray] = {}

    def get(self, key):
        return self._store.get(key) if self.enabled else None

    def put(self, key, value: np.ndarray):
        if self.enabled:
            self._store[key] = value


@dataclass
class AggregatorModel:
    expensive: Backbone
    cheap: Backbone
    cell: object
    head: ClassifierHead
    schedule: ClipSchedule
    config: TrainConfig

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.cell.named_params("agg"))
        out.update(self.head.named_params("head"))
        return out


def _extract_slot_features(model: AggregatorModel, dataset: VideoDataset,
                           video_idx, clip_sets, slot: int,
                           cache: FeatureCache) -> Tensor:
    src = model.schedule.assignments[slot]
    net = model.expensive if src == "E" else model.cheap
    feats = [None] * len(video_idx)
    missing = []
    ds_key = id(dataset)  # sample ids restart per dataset; avoid collisions
    for pos, (vi, cs) in enumerate(zip(video_idx, clip_sets)):
        key = (ds_key, int(dataset.samples[vi].sample_id),
               int(cs.windows[slot].start), src)
        hit = cache.get(key)
        if hit is None:
            missing.append(pos)
        else:
            feats[pos] = hit
    if missing:
        x = _clip_batch(dataset, [video_idx[p] for p in missing],
                        [clip_sets[p] for p in missing], slot)
        out = net.features(Tensor(x), mode="eval").data
        for row, pos in enumerate(missing):
            vi, cs = video_idx[pos], clip_sets[pos]
            key = (ds_key, int(dataset.samples[vi].sample_id),
                   int(cs.windows[slot].start), src)
            cache.put(key, out[row])
            feats[pos] = out[row]
    return Tensor(np.stack(feats))


def _sequence_logits(model: AggregatorModel, features: list[Tensor], mode: str) -> Tensor:
    return aggregate_sequence(features, model.cell, model.head, mode=mode)


def train_aggregator(config: TrainConfig, expensive: Backbone, cheap: Backbone,
                     dataset: VideoDataset, progress=None,
                     shared_cache: FeatureCache | None = None
                     ) -> tuple[AggregatorModel, list[MetricsRow]]:
    if config.stage != "aggregator":
        raise ShapeError("train_aggregator needs a stage='aggregator' config")
    if len(dataset) == 0:
        raise ShapeError("cannot train on an empty dataset")
    shape_e = expensive.feature_channels
    shape_c = cheap.feature_channels
    if shape_e != shape_c:
        raise ShapeError(
            f"backbone feature channels disagree: expensive {shape_e} vs cheap {shape_c}")
    if expensive.config.clip_len != config.clip_len:
        raise ShapeError(
            f"backbone clip length {expensive.config.clip_len} != config {config.clip_len}")
    schedule = parse_pattern(config.pattern, config.num_clips, config.clip_len)
    cell = make_cell(config.method, shape_e, reduction=config.reduction,
                     seed=config.seed, gate_bias=config.gate_bias)
    head = ClassifierHead(shape_e, config.num_classes, seed=config.seed + 1)
    model = AggregatorModel(expensive, cheap, cell, head, schedule, config)
    params = model.named_params()
    opt = SGD(params, momentum=config.momentum, weight_decay=config.weight_decay)
    cache = shared_cache if shared_cache is not None else FeatureCache(config.feature_cache)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    lr_base = config.aggregator_lr if config.aggregator_lr is not None else config.base_lr
    rows = [_measure_aggregator(model, dataset, config, cache, epoch=0)]
    step = 0
    for epoch in range(1, config.epochs + 1):
        losses, hits, seen = [], 0, 0
        for batch in _batch_iter(n, config.batch_size, rng):
            clip_sets = [sample_clips_train(dataset.samples[vi].frames.shape[0],
                                            config.clip_len, config.num_clips, rng)
                         for vi in batch]
            feats = [_extract_slot_features(model, dataset, batch, clip_sets, t, cache)
                     for t in range(config.num_clips)]
            labels = np.array([dataset.samples[vi].label for vi in batch])
            opt.zero_grad()
            with Tape() as tape:
                logits = _sequence_logits(model, feats, mode="train")
                loss = T.softmax_cross_entropy(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"train_aggregator: loss went non-finite at epoch {epoch} step {step}")
            tape.backward(loss)
            opt.step(cosine_lr(step, total_steps, lr_base))
            step += 1
            losses.append(value)
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(batch)
        rows.append(MetricsRow(epoch, "train", float(np.mean(losses)), hits / seen))
        if progress:
            progress(f"aggregator[{config.method}] epoch {epoch}/{config.epochs} "
                     f"loss {rows[-1].loss:.4f} top1 {rows[-1].top1:.3f}")
    return model, rows


def _measure_aggregator(model: AggregatorModel, dataset: VideoDataset,
                        config: TrainConfig, cache: FeatureCache,
                        epoch: int) -> MetricsRow:
    losses, hits, seen = [], 0, 0
    for batch in _batch_iter(len(dataset), config.batch_size, None):
        clip_sets = [sample_clips_eval(dataset.samples[vi].frames.shape[0],
                                       config.clip_len, config.num_clips)
                     for vi in batch]
        feats = [_extract_slot_features(model, dataset, batch, clip_sets, t, cache)
                 for t in range(config.num_clips)]
        labels = np.array([dataset.samples[vi].label for vi in batch])
        logits = _sequence_logits(model, feats, mode="train")
        loss = T.softmax_cross_entropy(logits, labels)
        losses.append(float(loss.data) * len(batch))
        hits += int((logits.data.argmax(axis=1) == labels).sum())
        seen += len(batch)
    return MetricsRow(epoch, "train", float(np.sum(losses) / seen), hits / seen)


def evaluate_topk(model: AggregatorModel, dataset: VideoDataset, k: int = 1,
                  batch_size: int = 32, schedule: ClipSchedule | None = None,
                  shared_cache: FeatureCache | None = None) -> float:
    """Video accuracy with uniformly sampled eval clips.

    Ties break toward the lowest class index (stable sort on negated logits).
    """
    if k < 1:
        raise ShapeError(f"evaluate_topk: k must be >= 1, got {k}")
    schedule = schedule or model.schedule
    cache = shared_cache if shared_cache is not None else FeatureCache(model.config.feature_cache)
    hits, seen = 0, 0
    saved_schedule = model.schedule
    model.schedule = schedule
    try:
        for batch in _batch_iter(len(dataset), batch_size, None):
            clip_sets = [sample_clips_eval(dataset.samples[vi].frames.shape[0],
                                           schedule.frames_per_clip, schedule.num_clips)
                         for vi in batch]
            feats = [_extract_slot_features(model, dataset, batch, clip_sets, t, cache)
                     for t in range(schedule.num_clips)]
            labels = np.array([dataset.samples[vi].label for vi in batch])
            logits = _sequence_logits(model, feats, mode="eval").data
            ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
            hits += int((ranked == labels[:, None]).any(axis=1).sum())
            seen += len(batch)
    finally:
        model.schedule = saved_schedule
    return hits / seen


# ---------------------------------------------------------------------------
# checkpoint glue


def _stats_tensors(net: Backbone, prefix: str) -> tuple[dict[str, np.ndarray], dict[str, bool]]:
    tensors, flags = {}, {}
    for name, stats in net.named_stats(prefix).items():
        tensors[f"{name}.mean"] = stats.mean
        tensors[f"{name}.var"] = stats.var
        flags[name] = stats.initialized
    return tensors, flags


def backbone_checkpoint(net: Backbone, config: TrainConfig, epoch: int,
                        rng_state=None) -> Checkpoint:
    tensors = {name: t.data for name, t in net.named_params().items()}
    stats, flags = _stats_tensors(net, "")
    tensors.update(stats)
    meta = {
        "stage": "backbone",
        "family": net.config.family,
        "backbone_config": asdict_backbone(net.config),
        "train_config": asdict(config),
        "config_hash": config.config_hash(),
        "epoch": epoch,
        "bn_initialized": flags,
        "rng_state": rng_state,
        "format": "fasterlab-backbone",
    }
    return Checkpoint(tensors=tensors, meta=meta)


def asdict_backbone(config: BackboneConfig) -> dict:
    d = asdict(config)
    d["repeats"] = list(config.repeats) if config.repeats else None
    return d


def backbone_from_checkpoint(ckpt: Checkpoint) -> Backbone:
    cfg_dict = dict(ckpt.meta["backbone_config"])
    if cfg_dict.get("repeats"):
        cfg_dict["repeats"] = tuple(cfg_dict["repeats"])
    net = build_backbone(BackboneConfig(**cfg_dict))
    _load_backbone_state(net, ckpt, prefix="")
    return net


def _load_backbone_state(net: Backbone, ckpt: Checkpoint, prefix: str) -> None:
    flags = ckpt.meta.get("bn_initialized", {})
    for name, t in net.named_params().items():
        key = f"{prefix}{name}"
        arr = ckpt.tensors[key]
        if arr.shape != t.data.shape:
            raise ShapeError(f"checkpoint tensor {key} shape {arr.shape} != {t.data.shape}")
        t.data = arr.astype(t.data.dtype, copy=True)
    for name, stats in net.named_stats(prefix="").items():
        key = f"{prefix}{name}"
        stats.mean = ckpt.tensors[f"{key}.mean"].astype(stats.mean.dtype, copy=True)
        stats.var = ckpt.tensors[f"{key}.var"].astype(stats.var.dtype, copy=True)
        stats.initialized = bool(flags.get(key, flags.get(name, True)))


def aggregator_checkpoint(model: AggregatorModel, epoch: int,
                          rng_state=None) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    for name, t in model.expensive.named_params().items():
        tensors[f"expensive.{name}"] = t.data
    for name, t in model.cheap.named_params().items():
        tensors[f"cheap.{name}"] = t.data
    stats_e, flags_e = _stats_tensors(model.expensive, "expensive")
    stats_c, flags_c = _stats_tensors(model.cheap, "cheap")
    tensors.update(stats_e)
    tensors.update(stats_c)
    for name, t in model.named_params().items():
        tensors[name] = t.data
    if isinstance(model.cell, ConcatCell):
        tensors["agg.bn.stats.mean"] = model.cell.bn_stats.mean
        tensors["agg.bn.stats.var"] = model.cell.bn_stats.var
    meta = {
        "stage": "aggregator",
        "method": model.config.method,
        "pattern": model.config.pattern,
        "num_clips": model.config.num_clips,
        "expensive_config": asdict_backbone(model.expensive.config),
        "cheap_config": asdict_backbone(model.cheap.config),
        "train_config": asdict(model.config),
        "config_hash": model.config.config_hash(),
        "epoch": epoch,
        "bn_initialized": {**flags_e, **flags_c,
                           "agg.bn.stats": isinstance(model.cell, ConcatCell)
                                           and model.cell.bn_stats.initialized},
        "rng_state": rng_state,
        "format": "fasterlab-aggregator",
    }
    return Checkpoint(tensors=tensors, meta=meta)


def aggregator_from_checkpoint(ckpt: Checkpoint) -> AggregatorModel:
    config = TrainConfig(**ckpt.meta["train_config"])
    exp_cfg = dict(ckpt.meta["expensive_config"])
    cheap_cfg = dict(ckpt.meta["cheap_config"])
    for d in (exp_cfg, cheap_cfg):
        if d.get("repeats"):
            d["repeats"] = tuple(d["repeats"])
    expensive = build_backbone(BackboneConfig(**exp_cfg))
    cheap = build_backbone(BackboneConfig(**cheap_cfg))
    _load_backbone_state(expensive, ckpt, prefix="expensive.")
    _load_backbone_state(cheap, ckpt, prefix="cheap.")
    channels = expensive.feature_channels
    cell = make_cell(config.method, channels, reduction=config.reduction,
                     seed=config.seed, gate_bias=config.gate_bias)
    head = ClassifierHead(channels, config.num_classes, seed=config.seed + 1)
    schedule = parse_pattern(config.pattern, config.num_clips, config.clip_len)
    model = AggregatorModel(expensive, cheap, cell, head, schedule, config)
    for name, t in model.named_params().items():
        arr = ckpt.tensors[name]
        if arr.shape != t.data.shape:
            raise ShapeError(f"checkpoint tensor {name} shape {arr.shape} != {t.data.shape}")
        t.data = arr.astype(t.data.dtype, copy=True)
    if isinstance(cell, ConcatCell):
        cell.bn_stats.mean = ckpt.tensors["agg.bn.stats.mean"].astype(np.float32, copy=True)
        cell.bn_stats.var = ckpt.tensors["agg.bn.stats.var"].astype(np.float32, copy=True)
        cell.bn_stats.initialized = bool(
            ckpt.meta.get("bn_initialized", {}).get("agg.bn.stats", True))
    return model


def save_model(path, ckpt: Checkpoint) -> None:
    save_checkpoint(path, ckpt)


def load_model(path):
    """Load a checkpoint directory into the matching model object."""
    ckpt = load_checkpoint(path)
    kind = ckpt.meta.get("format")
    if kind == "fasterlab-backbone":
        return backbone_from_checkpoint(ckpt)
    if kind == "fasterlab-aggregator":
        return aggregator_from_checkpoint(ckpt)
    raise ShapeError(f"{path}: unrecognized checkpoint format {kind!r}")
