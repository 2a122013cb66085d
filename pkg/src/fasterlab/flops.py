"""Analytic compute-cost accounting for backbones, aggregator cells and
clip schedules.

Counting convention: one multiply-accumulate (MAC) equals one FLOP; a
convolution costs output_positions * kernel_volume * cin * cout, a dense map
cin * cout per row, and activations, batch norm, pooling and elementwise ops
count as zero. All arithmetic is exact integer MACs; conversion to GFLOPs
happens only at the edges.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .backbones import BackboneConfig, LayerSpec, _block_convs, _conv_out, spec_table
from .scheduler import ClipSchedule
from .tensor import ShapeError

GIGA = 10 ** 9

# Per-step projection MAC multiples of c^2 for the vector-state cells.
_VECTOR_STEP_COST = {"gru": 6, "lstm": 8, "concat": 2, "avg-pool": 0}


@dataclass
class LayerCost:
    name: str
    macs: int

    @property
    def gflops(self) -> float:
        return self.macs / GIGA


@dataclass
class CostReport:
    """Per-layer MAC accounting; the total is the exact integer sum of parts."""

    title: str
    entries: list[LayerCost] = field(default_factory=list)

    def add(self, name: str, macs: int) -> None:
        self.entries.append(LayerCost(name, int(macs)))

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_gflops(self) -> float:
        return self.total_macs / GIGA

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "macs", "gflops"])
        for e in self.entries:
            writer.writerow([e.name, e.macs, f"{e.gflops:.6f}"])
        writer.writerow(["total", self.total_macs, f"{self.total_gflops:.6f}"])
        return buf.getvalue()


def _conv_macs(out_positions: int, kernel, cin: int, cout: int) -> int:
    kt, kh, kw = kernel
    return out_positions * kt * kh * kw * cin * cout


def layer_flops(spec: LayerSpec, input_shape: tuple[int, ...]) -> int:
    """MACs of one table row at the given [n,t,h,w,c] input shape."""
    n, t, h, w, c = input_shape
    if spec.kind in ("conv", "maxpool", "block2d", "block21d") and spec.in_ch != c:
        raise ShapeError(
            f"{spec.name}: input channels {c} do not match spec in_ch {spec.in_ch}")
    if spec.kind == "conv":
        kt, kh, kw = spec.kernel
        st, sh, sw = spec.stride
        pt, ph, pw = spec.padding
        to = _conv_out(t, kt, st, pt)
        ho = _conv_out(h, kh, sh, ph)
        wo = _conv_out(w, kw, sw, pw)
        return _conv_macs(n * to * ho * wo, spec.kernel, spec.in_ch, spec.out_ch)
    if spec.kind == "maxpool":
        return 0
    if spec.kind in ("block2d", "block21d"):
        total = 0
        shape = (n, t, h, w, c)
        for r in range(spec.repeat):
            entry = r == 0
            cur = shape
            for (_, kernel, stride, padding, cin, cout) in _block_convs(spec, entry):
                bn, bt, bh, bw, _ = cur
                to = _conv_out(bt, kernel[0], stride[0], padding[0])
                ho = _conv_out(bh, kernel[1], stride[1], padding[1])
                wo = _conv_out(bw, kernel[2], stride[2], padding[2])
                total += _conv_macs(bn * to * ho * wo, kernel, cin, cout)
                cur = (bn, to, ho, wo, cout)
            if entry:
                st, sh, sw = spec.stride
                to, ho, wo = _conv_out(t, 1, st, 0), _conv_out(h, 1, sh, 0), _conv_out(w, 1, sw, 0)
                total += _conv_macs(n * to * ho * wo, (1, 1, 1), spec.in_ch, spec.out_ch)
                shape = (n, to, ho, wo, spec.out_ch)
        return total
    if spec.kind == "gap":
        return 0
    if spec.kind == "dense":
        return n * spec.in_ch * spec.out_ch
    raise ShapeError(f"layer_flops: unknown layer kind {spec.kind!r}")


def backbone_flops(config: BackboneConfig, include_head: bool = True) -> CostReport:
    """Per-clip cost of one backbone at its configured clip length/resolution."""
    specs = spec_table(config)
    report = CostReport(f"{config.family} L={config.clip_len} {config.resolution}^2")
    shape = (1, config.clip_len, config.resolution, config.resolution, 3)
    for spec in specs:
        if spec.kind in ("gap", "dense") and not include_head:
            continue
        report.add(spec.name, layer_flops(spec, shape))
        # advance the running shape
        if spec.kind == "conv":
            kt, kh, kw = spec.kernel
            st, sh, sw = spec.stride
            pt, ph, pw = spec.padding
            shape = (shape[0], _conv_out(shape[1], kt, st, pt),
                     _conv_out(shape[2], kh, sh, ph), _conv_out(shape[3], kw, sw, pw),
                     spec.out_ch)
        elif spec.kind == "maxpool":
            kt, kh, kw = spec.kernel
            st, sh, sw = spec.stride
            pt, ph, pw = spec.padding
            shape = (shape[0], _conv_out(shape[1], kt, st, pt),
                     _conv_out(shape[2], kh, sh, ph), _conv_out(shape[3], kw, sw, pw),
                     shape[4])
        elif spec.kind in ("block2d", "block21d"):
            st, sh, sw = spec.stride
            shape = (shape[0], _conv_out(shape[1], 1, st, 0),
                     _conv_out(shape[2], 1, sh, 0), _conv_out(shape[3], 1, sw, 0),
                     spec.out_ch)
    return report


def aggregator_flops(method: str, feature_shape: tuple[int, int, int, int],
                     reduction: int = 4) -> int:
    """MACs of one aggregation step for an l*h*w*c feature map.

    The full-resolution gated cell pays P*c^2*(6/r + 2): four gate-compress
    convs at c*(c/r), two gate-recover convs at (c/r)*c and two full-width
    candidate convs, all applied per position P = l*h*w. Vector-state cells
    pay their projection count times c^2 once per step; score averaging is
    free.
    """
    l, h, w, c = feature_shape
    if method == "fast-gru":
        if c % reduction != 0:
            raise ShapeError(
                f"aggregator_flops: channels ({c}) not divisible by reduction ({reduction})")
        cr = c // reduction
        per_pos = 4 * c * cr + 2 * cr * c + 2 * c * c
        return l * h * w * per_pos
    if method in _VECTOR_STEP_COST:
        return _VECTOR_STEP_COST[method] * c * c
    raise ShapeError(f"aggregator_flops: unknown method {method!r}")


def head_flops(channels: int, num_classes: int) -> int:
    return channels * num_classes


def schedule_flops(schedule: ClipSchedule, method: str,
                   expensive_macs: int, cheap_macs: int,
                   feature_shape: tuple[int, int, int, int],
                   num_classes: int = 400, reduction: int = 4) -> CostReport:
    """Total cost of one video under a clip schedule.

    Per-clip backbone costs are passed in (analytic or published values, in
    MACs) so the same accounting can reconstruct reference totals. Recurrent
    methods pay N-1 steps plus one classification head; score averaging pays
    one head per clip.
    """
    report = CostReport(
        f"{schedule.ratio or 'custom'} L={schedule.frames_per_clip} N={schedule.num_clips} {method}")
    n_exp = schedule.expensive_count
    n_cheap = schedule.num_clips - n_exp
    report.add(f"expensive clips x{n_exp}", n_exp * expensive_macs)
    report.add(f"cheap clips x{n_cheap}", n_cheap * cheap_macs)
    step = aggregator_flops(method, feature_shape, reduction=reduction)
    c = feature_shape[-1]
    if method == "avg-pool":
        report.add(f"heads x{schedule.num_clips}",
                   schedule.num_clips * head_flops(c, num_classes))
    else:
        report.add(f"{method} steps x{schedule.num_clips - 1}",
                   (schedule.num_clips - 1) * step)
        report.add("head", head_flops(c, num_classes))
    return report
