"""Clip-level feature extractors: a cheap 2-d-conv residual net and an
expensive factorized (2+1)-d residual net.

Both families are described by an ordered layer table (used by the cost
model and by shape checks) and can be instantiated as trainable networks at
a miniature preset. The cheap family collapses time with a temporal stride
of 8 in its first convolution; the expensive family keeps full temporal
resolution early and halves it entering each of the last three stages, so
both emit res5 features with temporal extent L/8 and identical channel
counts at matched presets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import RunningStats, ShapeError, Tensor

FAMILIES = ("r2d", "r21d")

# Stage channel plan shared by both families (mid, out) and the factorized
# middle widths of the expensive family, full-spec values.
_STAGE_MID = (64, 128, 256, 512)
_STAGE_OUT = (256, 512, 1024, 2048)
_STAGE_MID21 = (144, 288, 576, 1152)
_R2D_REPEATS = (2, 2, 2, 2)
_R21D_REPEATS = (3, 4, 6, 3)


@dataclass(frozen=True)
class LayerSpec:
    """One row of the backbone table."""

    kind: str                     # conv | maxpool | block2d | block21d | gap | dense
    name: str
    kernel: tuple[int, int, int] | None = None
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    in_ch: int = 0
    mid_ch: int = 0               # bottleneck width (blocks)
    mid21_ch: int = 0             # factorized spatial-conv width (block21d only)
    out_ch: int = 0
    repeat: int = 1


@dataclass(frozen=True)
class BackboneConfig:
    family: str                   # "r2d" | "r21d"
    preset: str = "full"          # "full" | "tiny"
    channel_scale: float = 1.0
    resolution: int = 224
    clip_len: int = 8
    num_classes: int = 400
    repeats: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ShapeError(f"unknown backbone family {self.family!r}; choose from {FAMILIES}")
        if self.preset not in ("full", "tiny"):
            raise ShapeError(f"unknown preset {self.preset!r}; choose 'full' or 'tiny'")
        if self.clip_len % 8 != 0:
            raise ShapeError(f"clip length must be a multiple of 8, got {self.clip_len}")


def tiny_config(family: str, clip_len: int = 8, num_classes: int = 2,
                resolution: int = 32, channel_scale: float = 1.0 / 16) -> BackboneConfig:
    """Miniature preset: CPU-trainable in minutes while preserving topology."""
    return BackboneConfig(family=family, preset="tiny", channel_scale=channel_scale,
                          resolution=resolution, clip_len=clip_len,
                          num_classes=num_classes, repeats=(1, 1, 1, 1))


def _scaled(c: int, scale: float, floor: int = 1) -> int:
    return max(floor, round(c * scale))


def spec_table(config: BackboneConfig) -> list[LayerSpec]:
    """Ordered layer table for a backbone, channels scaled per config.

    The miniature preset floors rounding at 4 channels: the factorized stem
    otherwise rounds to 3 mid-channels at 1/16 scale, which makes training
    bimodal across seeds.
    """
    s = config.channel_scale
    floor = 4 if config.preset == "tiny" else 1
    repeats = config.repeats
    if repeats is None:
        repeats = _R2D_REPEATS if config.family == "r2d" else _R21D_REPEATS
    layers: list[LayerSpec] = []
    if config.family == "r2d":
        c1 = _scaled(64, s, floor)
        layers.append(LayerSpec("conv", "conv1", kernel=(8, 7, 7), stride=(8, 2, 2),
                                padding=(0, 3, 3), in_ch=3, out_ch=c1))
        tstrides = (1, 1, 1, 1)
    else:
        c1m = _scaled(45, s, floor)
        c1 = _scaled(64, s, floor)
        layers.append(LayerSpec("conv", "conv1_spatial", kernel=(1, 7, 7), stride=(1, 2, 2),
                                padding=(0, 3, 3), in_ch=3, out_ch=c1m))
        layers.append(LayerSpec("conv", "conv1_temporal", kernel=(3, 1, 1), stride=(1, 1, 1),
                                padding=(1, 0, 0), in_ch=c1m, out_ch=c1))
        tstrides = (1, 2, 2, 2)

    layers.append(LayerSpec("maxpool", "pool1", kernel=(1, 3, 3), stride=(1, 2, 2),
                            padding=(0, 1, 1), in_ch=c1, out_ch=c1))

    in_ch = c1
    kind = "block2d" if config.family == "r2d" else "block21d"
    for i in range(4):
        stage = f"res{i + 2}"
        sstride = 1 if i == 0 else 2
        stride = (tstrides[i] if i > 0 else 1, sstride, sstride)
        layers.append(LayerSpec(
            kind, stage, stride=stride, in_ch=in_ch,
            mid_ch=_scaled(_STAGE_MID[i], s, floor),
            mid21_ch=_scaled(_STAGE_MID21[i], s, floor) if kind == "block21d" else 0,
            out_ch=_scaled(_STAGE_OUT[i], s, floor),
            repeat=repeats[i]))
        in_ch = _scaled(_STAGE_OUT[i], s, floor)

    layers.append(LayerSpec("gap", "gap", in_ch=in_ch, out_ch=in_ch))
    layers.append(LayerSpec("dense", "fc", in_ch=in_ch, out_ch=config.num_classes))
    return layers


def _block_convs(spec: LayerSpec, entry: bool) -> list[tuple[str, tuple, tuple, tuple, int, int]]:
    """Primitive convs of one block: (name, kernel, stride, padding, cin, cout).

    The downsampling stride sits on the middle conv (spatial part), and for
    the factorized family the temporal stride sits on the temporal conv.
    """
    st, sh, sw = spec.stride if entry else (1, 1, 1)
    cin = spec.in_ch if entry else spec.out_ch
    convs = [("reduce", (1, 1, 1), (1, 1, 1), (0, 0, 0), cin, spec.mid_ch)]
    if spec.kind == "block2d":
        convs.append(("spatial", (1, 3, 3), (1, sh, sw), (0, 1, 1), spec.mid_ch, spec.mid_ch))
    else:
        convs.append(("spatial", (1, 3, 3), (1, sh, sw), (0, 1, 1), spec.mid_ch, spec.mid21_ch))
        convs.append(("temporal", (3, 1, 1), (st, 1, 1), (1, 0, 0), spec.mid21_ch, spec.mid_ch))
    convs.append(("expand", (1, 1, 1), (1, 1, 1), (0, 0, 0), spec.mid_ch, spec.out_ch))
    return convs


def _conv_out(extent: int, k: int, s: int, p: int) -> int:
    return (extent + 2 * p - k) // s + 1


def propagate_shapes(specs: list[LayerSpec], input_shape: tuple[int, ...]
                     ) -> list[tuple[str, tuple[int, ...]]]:
    """Shape after each table row for a [n,t,h,w,c] input."""
    n, t, h, w, c = input_shape
    out = []
    for spec in specs:
        if spec.kind in ("conv", "maxpool"):
            kt, kh, kw = spec.kernel
            st, sh, sw = spec.stride
            pt, ph, pw = spec.padding
            t, h, w = _conv_out(t, kt, st, pt), _conv_out(h, kh, sh, ph), _conv_out(w, kw, sw, pw)
            if min(t, h, w) < 1:
                raise ShapeError(f"{spec.name}: output collapsed to zero extent")
            c = spec.out_ch
        elif spec.kind in ("block2d", "block21d"):
            st, sh, sw = spec.stride
            t, h, w = _conv_out(t, 1, st, 0), _conv_out(h, 1, sh, 0), _conv_out(w, 1, sw, 0)
            c = spec.out_ch
            out.append((spec.name, (n, t, h, w, c)))
            continue
        elif spec.kind == "gap":
            out.append((spec.name, (n, c)))
            continue
        elif spec.kind == "dense":
            c = spec.out_ch
            out.append((spec.name, (n, c)))
            continue
        out.append((spec.name, (n, t, h, w, c)))
    return out


def res5_shape(config: BackboneConfig, batch: int = 1) -> tuple[int, ...]:
    specs = spec_table(config)
    shapes = dict(propagate_shapes(specs, (batch, config.clip_len, config.resolution,
                                           config.resolution, 3)))
    return shapes["res5"]


def weighted_layer_count(specs: list[LayerSpec]) -> int:
    """Weighted layers by the naming convention: a factorized spatial+temporal
    pair counts as one layer, pooling counts as zero."""
    count = 0
    seen_conv1 = False
    for spec in specs:
        if spec.kind == "conv":
            if spec.name.startswith("conv1"):
                if not seen_conv1:
                    count += 1
                    seen_conv1 = True
            else:
                count += 1
        elif spec.kind in ("block2d", "block21d"):
            count += 3 * spec.repeat
        elif spec.kind == "dense":
            count += 1
    return count


# ---------------------------------------------------------------------------
# trainable instantiation


class Conv3dLayer:
    def __init__(self, rng, kernel, stride, padding, cin, cout, dtype):
        kt, kh, kw = kernel
        fan_in = kt * kh * kw * cin
        bound = float(np.sqrt(1.0 / fan_in))
        self.kernel = Tensor(rng.uniform(-bound, bound,
                                         size=(kt, kh, kw, cin, cout)).astype(dtype),
                             requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.kernel, stride=self.stride, padding=self.padding)


class BatchNormLayer:
    def __init__(self, channels, dtype):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.stats = RunningStats(channels, dtype=dtype)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.stats, mode=mode)


class ConvBN:
    def __init__(self, rng, kernel, stride, padding, cin, cout, dtype):
        self.conv = Conv3dLayer(rng, kernel, stride, padding, cin, cout, dtype)
        self.bn = BatchNormLayer(cout, dtype)

    def __call__(self, x: Tensor, mode: str, act: bool = True) -> Tensor:
        y = self.bn(self.conv(x), mode)
        return T.relu(y) if act else y

    def named(self, prefix):
        return {f"{prefix}.kernel": self.conv.kernel,
                f"{prefix}.bn.gamma": self.bn.gamma,
                f"{prefix}.bn.beta": self.bn.beta}


class BottleneckBlock:
    """Residual bottleneck; entry blocks downsample and project the shortcut."""

    def __init__(self, rng, spec: LayerSpec, entry: bool, dtype):
        convs = _block_convs(spec, entry)
        self.stages = [ConvBN(rng, k, s, p, cin, cout, dtype)
                       for (_, k, s, p, cin, cout) in convs]
        self.stage_names = [name for (name, *_rest) in convs]
        stride = spec.stride if entry else (1, 1, 1)
        cin = spec.in_ch if entry else spec.out_ch
        if entry and (stride != (1, 1, 1) or cin != spec.out_ch):
            self.shortcut = ConvBN(rng, (1, 1, 1), stride, (0, 0, 0), cin, spec.out_ch, dtype)
        else:
            self.shortcut = None

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        y = x
        for i, stage in enumerate(self.stages):
            last = i == len(self.stages) - 1
            y = stage(y, mode, act=not last)
        sc = self.shortcut(x, mode, act=False) if self.shortcut is not None else x
        return T.relu(T.add(y, sc))

    def named(self, prefix):
        out = {}
        for name, stage in zip(self.stage_names, self.stages):
            out.update(stage.named(f"{prefix}.{name}"))
        if self.shortcut is not None:
            out.update(self.shortcut.named(f"{prefix}.shortcut"))
        return out


class Backbone:
    """A trainable clip network; emits res5 features or clip-level logits."""

    def __init__(self, config: BackboneConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.specs = spec_table(config)
        rng = np.random.default_rng(seed)
        self.stem: list[tuple[str, object]] = []
        self.blocks: list[tuple[str, BottleneckBlock]] = []
        for spec in self.specs:
            if spec.kind == "conv":
                self.stem.append((spec.name, ConvBN(rng, spec.kernel, spec.stride,
                                                    spec.padding, spec.in_ch, spec.out_ch,
                                                    dtype)))
            elif spec.kind == "maxpool":
                self.stem.append((spec.name, spec))
            elif spec.kind in ("block2d", "block21d"):
                for r in range(spec.repeat):
                    self.blocks.append((f"{spec.name}.block{r}",
                                        BottleneckBlock(rng, spec, r == 0, dtype)))
            elif spec.kind == "dense":
                c = spec.in_ch
                bound = float(np.sqrt(1.0 / c))
                self.fc_weight = Tensor(rng.uniform(-bound, bound,
                                                    size=(c, spec.out_ch)).astype(dtype),
                                        requires_grad=True)
                self.fc_bias = Tensor(np.zeros(spec.out_ch, dtype=dtype), requires_grad=True)
        self.feature_channels = res5_shape(config)[-1]

    def _check_clip(self, clip: Tensor) -> None:
        n, t, h, w, c = clip.shape
        cfg = self.config
        if t != cfg.clip_len or h != cfg.resolution or w != cfg.resolution or c != 3:
            raise ShapeError(
                f"clip shape {clip.shape} does not match config "
                f"(L={cfg.clip_len}, resolution={cfg.resolution})")

    def features(self, clip: Tensor, mode: str = "eval") -> Tensor:
        """res5 feature map [n, L/8, h', w', c]; no pooling, no head."""
        self._check_clip(clip)
        y = clip
        for name, layer in self.stem:
            if isinstance(layer, LayerSpec):
                y = T.max_pool3d(y, layer.kernel, layer.stride, layer.padding)
            else:
                y = layer(y, mode)
        for _, block in self.blocks:
            y = block(y, mode)
        return y

    def logits(self, clip: Tensor, mode: str = "train") -> Tensor:
        feat = self.features(clip, mode)
        pooled = T.global_avg_pool(feat)
        return T.dense(pooled, self.fc_weight, self.fc_bias)

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        pre = f"{prefix}." if prefix else ""
        out = {}
        for name, layer in self.stem:
            if not isinstance(layer, LayerSpec):
                out.update(layer.named(f"{pre}{name}"))
        for name, block in self.blocks:
            out.update(block.named(f"{pre}{name}"))
        out[f"{pre}fc.weight"] = self.fc_weight
        out[f"{pre}fc.bias"] = self.fc_bias
        return out

    def named_stats(self, prefix: str = "") -> dict[str, RunningStats]:
        """Batch-norm running stats, addressable for checkpointing."""
        pre = f"{prefix}." if prefix else ""
        out = {}
        for name, layer in self.stem:
            if not isinstance(layer, LayerSpec):
                out[f"{pre}{name}.bn"] = layer.bn.stats
        for name, block in self.blocks:
            for sname, stage in zip(block.stage_names, block.stages):
                out[f"{pre}{name}.{sname}.bn"] = stage.bn.stats
            if block.shortcut is not None:
                out[f"{pre}{name}.shortcut.bn"] = block.shortcut.bn.stats
        return out


def build_backbone(config: BackboneConfig, seed: int = 0, dtype=np.float32) -> Backbone:
    return Backbone(config, seed=seed, dtype=dtype)


def extract_features(net: Backbone, clip: Tensor) -> Tensor:
    """Frozen-extractor path: eval-mode batch norm, nothing recorded on a tape."""
    if T._active_tape() is not None:
        # Features feed the aggregator as constants; never trace the backbone.
        raise T.TapeError("extract_features must run outside any active tape")
    return net.features(clip, mode="eval")
