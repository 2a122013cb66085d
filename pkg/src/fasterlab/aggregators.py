"""Sequence aggregation of per-clip feature maps into video-level logits.

Five methods behind one contract: a gated recurrent cell that keeps the full
l*h*w*c feature-map resolution and computes its gates through a channel
bottleneck ("fast-gru"), a plain vector GRU, an LSTM, a concat-project
baseline, and score averaging. All steps are pure functions of
(state, input, params); a sequence is folded strictly in time order with the
initial state taken from the first clip's features.

Tensors are batched: spatial states are [n,l,h,w,c], vector states [n,c].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _bias_init(size: int, fill: float, dtype) -> Tensor:
    return Tensor(np.full(size, fill, dtype=dtype), requires_grad=True)


@dataclass
class Projection:
    """A weight/bias pair used as a pointwise conv (5-d input) or dense map (2-d)."""

    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 5:
            return T.pointwise_conv(x, self.weight, self.bias)
        return T.dense(x, self.weight, self.bias)


def _projection(rng, cin, cout, dtype, bias_fill=0.0) -> Projection:
    return Projection(_uniform_init(rng, (cin, cout), cin, dtype),
                      _bias_init(cout, bias_fill, dtype))


class FastGRUCell:
    """Gated recurrent cell over full-resolution feature maps.

    The read/update gates compress channels by ``reduction`` (ReLU in the
    bottleneck, sigmoid after recovery); the candidate path stays at full
    channel width. All projections are 1x1x1 convolutions, so the state shape
    always equals the input shape.
    """

    state_kind = "spatial"

    def __init__(self, channels: int, reduction: int = 4, dtype=np.float32,
                 seed: int = 0, gate_bias: float = 0.0):
        if channels % reduction != 0:
            raise ShapeError(
                f"fast-gru: channels ({channels}) not divisible by reduction ({reduction})")
        self.channels = channels
        self.reduction = reduction
        c, cr = channels, channels // reduction
        rng = np.random.default_rng(seed)
        self.read_in = _projection(rng, c, cr, dtype)
        self.read_state = _projection(rng, c, cr, dtype)
        self.update_in = _projection(rng, c, cr, dtype)
        self.update_state = _projection(rng, c, cr, dtype)
        self.read_recover = _projection(rng, cr, c, dtype, bias_fill=gate_bias)
        self.update_recover = _projection(rng, cr, c, dtype, bias_fill=gate_bias)
        self.cand_in = _projection(rng, c, c, dtype)
        self.cand_state = _projection(rng, c, c, dtype)

    def init_state(self, x0: Tensor) -> Tensor:
        return x0

    def step(self, state: Tensor, x: Tensor) -> Tensor:
        if state.shape != x.shape:
            raise ShapeError(
                f"fast-gru step: state shape {state.shape} != input shape {x.shape}")
        read_mid = T.relu(T.add(self.read_in(x), self.read_state(state)))
        update_mid = T.relu(T.add(self.update_in(x), self.update_state(state)))
        read = T.sigmoid(self.read_recover(read_mid))
        update = T.sigmoid(self.update_recover(update_mid))
        cand = T.tanh(T.add(self.cand_in(x), self.cand_state(T.mul(read, state))))
        return T.convex_mix(state, cand, update)

    def named_params(self, prefix: str = "fast_gru") -> dict[str, Tensor]:
        out = {}
        for name in ("read_in", "read_state", "update_in", "update_state",
                     "read_recover", "update_recover", "cand_in", "cand_state"):
            proj = getattr(self, name)
            out[f"{prefix}.{name}.weight"] = proj.weight
            out[f"{prefix}.{name}.bias"] = proj.bias
        return out

    def gate_weight_count(self) -> int:
        """Weight parameters on the gate paths (excludes biases and candidate path)."""
        c, cr = self.channels, self.channels // self.reduction
        return 4 * c * cr + 2 * cr * c


class GRUCell:
    """Standard two-gate GRU on pooled feature vectors."""

    state_kind = "vector"

    def __init__(self, channels: int, dtype=np.float32, seed: int = 0,
                 gate_bias: float = 0.0):
        self.channels = channels
        rng = np.random.default_rng(seed)
        c = channels
        self.read_in = _projection(rng, c, c, dtype)
        self.read_state = _projection(rng, c, c, dtype, bias_fill=gate_bias)
        self.update_in = _projection(rng, c, c, dtype)
        self.update_state = _projection(rng, c, c, dtype, bias_fill=gate_bias)
        self.cand_in = _projection(rng, c, c, dtype)
        self.cand_state = _projection(rng, c, c, dtype)

    def init_state(self, x0_pooled: Tensor) -> Tensor:
        return x0_pooled

    def step(self, state: Tensor, x: Tensor) -> Tensor:
        if state.shape != x.shape:
            raise ShapeError(f"gru step: state shape {state.shape} != input shape {x.shape}")
        read = T.sigmoid(T.add(self.read_in(x), self.read_state(state)))
        update = T.sigmoid(T.add(self.update_in(x), self.update_state(state)))
        cand = T.tanh(T.add(self.cand_in(x), self.cand_state(T.mul(read, state))))
        return T.convex_mix(state, cand, update)

    def named_params(self, prefix: str = "gru") -> dict[str, Tensor]:
        out = {}
        for name in ("read_in", "read_state", "update_in", "update_state",
                     "cand_in", "cand_state"):
            proj = getattr(self, name)
            out[f"{prefix}.{name}.weight"] = proj.weight
            out[f"{prefix}.{name}.bias"] = proj.bias
        return out

    def gate_weight_count(self) -> int:
        return 4 * self.channels * self.channels


@dataclass
class LSTMState:
    hidden: Tensor
    cell: Tensor


class LSTMCell:
    """Three-gate LSTM (input/forget/output) with a cell carried between steps.

    No peephole connections; the cell starts at zero and the hidden state at
    the pooled first-clip features.
    """

    state_kind = "vector"

    def __init__(self, channels: int, dtype=np.float32, seed: int = 0,
                 gate_bias: float = 0.0):
        self.channels = channels
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c = channels
        self.input_in = _projection(rng, c, c, dtype)
        self.input_state = _projection(rng, c, c, dtype, bias_fill=gate_bias)
        self.forget_in = _projection(rng, c, c, dtype)
        self.forget_state = _projection(rng, c, c, dtype, bias_fill=gate_bias)
        self.output_in = _projection(rng, c, c, dtype)
        self.output_state = _projection(rng, c, c, dtype, bias_fill=gate_bias)
        self.cand_in = _projection(rng, c, c, dtype)
        self.cand_state = _projection(rng, c, c, dtype)

    def init_state(self, x0_pooled: Tensor) -> LSTMState:
        zeros = Tensor(np.zeros_like(x0_pooled.data))
        return LSTMState(hidden=x0_pooled, cell=zeros)

    def step(self, state: LSTMState, x: Tensor) -> LSTMState:
        h = state.hidden
        if h.shape != x.shape:
            raise ShapeError(f"lstm step: state shape {h.shape} != input shape {x.shape}")
        gate_in = T.sigmoid(T.add(self.input_in(x), self.input_state(h)))
        gate_forget = T.sigmoid(T.add(self.forget_in(x), self.forget_state(h)))
        gate_out = T.sigmoid(T.add(self.output_in(x), self.output_state(h)))
        cand = T.tanh(T.add(self.cand_in(x), self.cand_state(h)))
        cell = T.add(T.mul(gate_forget, state.cell), T.mul(gate_in, cand))
        hidden = T.mul(gate_out, T.tanh(cell))
        return LSTMState(hidden=hidden, cell=cell)

    def named_params(self, prefix: str = "lstm") -> dict[str, Tensor]:
        out = {}
        for name in ("input_in", "input_state", "forget_in", "forget_state",
                     "output_in", "output_state", "cand_in", "cand_state"):
            proj = getattr(self, name)
            out[f"{prefix}.{name}.weight"] = proj.weight
            out[f"{prefix}.{name}.bias"] = proj.bias
        return out


class ConcatCell:
    """Project the concatenated (state, input) pair to a joint feature space.

    o_new = ReLU(BN(W*state + U*input)); batch-norm mode follows the
    train/eval flag passed to step().
    """

    state_kind = "vector"

    def __init__(self, channels: int, dtype=np.float32, seed: int = 0):
        self.channels = channels
        rng = np.random.default_rng(seed)
        c = channels
        self.state_proj = _projection(rng, c, c, dtype)
        self.input_proj = _projection(rng, c, c, dtype)
        self.bn_gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.bn_beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.bn_stats = T.RunningStats(c, dtype=dtype)

    def init_state(self, x0_pooled: Tensor) -> Tensor:
        return x0_pooled

    def step(self, state: Tensor, x: Tensor, mode: str = "eval") -> Tensor:
        if state.shape != x.shape:
            raise ShapeError(f"concat step: state shape {state.shape} != input shape {x.shape}")
        joint = T.add(self.state_proj(state), self.input_proj(x))
        return T.relu(T.batch_norm(joint, self.bn_gamma, self.bn_beta,
                                   self.bn_stats, mode=mode))

    def named_params(self, prefix: str = "concat") -> dict[str, Tensor]:
        return {
            f"{prefix}.state_proj.weight": self.state_proj.weight,
            f"{prefix}.state_proj.bias": self.state_proj.bias,
            f"{prefix}.input_proj.weight": self.input_proj.weight,
            f"{prefix}.input_proj.bias": self.input_proj.bias,
            f"{prefix}.bn.gamma": self.bn_gamma,
            f"{prefix}.bn.beta": self.bn_beta,
        }


class AvgPoolAggregator:
    """Score averaging: no parameters, no state, permutation invariant."""

    state_kind = "scores"

    def __init__(self, channels: int | None = None):
        self.channels = channels

    def named_params(self, prefix: str = "avg_pool") -> dict[str, Tensor]:
        return {}


METHODS = ("fast-gru", "gru", "lstm", "concat", "avg-pool")


def make_cell(method: str, channels: int, reduction: int = 4, dtype=np.float32,
              seed: int = 0, gate_bias: float = 0.0):
    if method == "fast-gru":
        return FastGRUCell(channels, reduction=reduction, dtype=dtype, seed=seed,
                           gate_bias=gate_bias)
    if method == "gru":
        return GRUCell(channels, dtype=dtype, seed=seed, gate_bias=gate_bias)
    if method == "lstm":
        return LSTMCell(channels, dtype=dtype, seed=seed, gate_bias=gate_bias)
    if method == "concat":
        return ConcatCell(channels, dtype=dtype, seed=seed)
    if method == "avg-pool":
        return AvgPoolAggregator(channels)
    raise ShapeError(f"unknown aggregation method {method!r}; choose from {METHODS}")


class ClassifierHead:
    """Global-average-pool (for spatial states) followed by a dense map to k logits."""

    def __init__(self, channels: int, num_classes: int, dtype=np.float32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.num_classes = num_classes
        self.weight = _uniform_init(rng, (channels, num_classes), channels, dtype)
        self.bias = _bias_init(num_classes, 0.0, dtype)

    def __call__(self, state: Tensor) -> Tensor:
        if state.ndim == 5:
            state = T.global_avg_pool(state)
        if state.ndim != 2 or state.shape[1] != self.channels:
            raise ShapeError(
                f"head: expected [n,{self.channels}] state, got shape {state.shape}")
        return T.dense(state, self.weight, self.bias)

    def named_params(self, prefix: str = "head") -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def avg_pool_aggregate(scores: list[Tensor]) -> Tensor:
    """Arithmetic mean of per-clip score vectors.

    Summation order is fixed by sorting the inputs canonically (lexicographic
    on values), so any permutation of the same scores yields a bit-identical
    mean.
    """
    if not scores:
        raise ShapeError("avg_pool_aggregate: need at least one score vector")
    first = scores[0].shape
    for s in scores[1:]:
        if s.shape != first:
            raise ShapeError(f"avg_pool_aggregate: score shapes differ: {first} vs {s.shape}")
    stacked = np.stack([s.data.reshape(-1) for s in scores])
    order = np.lexsort(stacked.T[::-1])
    total = scores[int(order[0])]
    for idx in order[1:]:
        total = T.add(total, scores[int(idx)])
    return T.scale(total, 1.0 / len(scores))


def aggregate_sequence(features: list[Tensor], cell, head: ClassifierHead,
                       mode: str = "eval") -> Tensor:
    """Fold per-clip features in time order and classify the final state.

    The state starts at the first clip's features (pooled first for
    vector-state methods); score averaging instead applies the head per clip
    and averages. Single-clip sequences run no step at all.
    """
    if not features:
        raise ShapeError("aggregate_sequence: empty feature list")
    shape = features[0].shape
    for i, f in enumerate(features[1:], start=1):
        if f.shape != shape:
            raise ShapeError(
                f"aggregate_sequence: feature {i} shape {f.shape} drifted from {shape}")

    if isinstance(cell, AvgPoolAggregator):
        return avg_pool_aggregate([head(f) for f in features])

    if cell.state_kind == "vector":
        inputs = [T.global_avg_pool(f) if f.ndim == 5 else f for f in features]
    else:
        inputs = features

    state = cell.init_state(inputs[0])
    for x in inputs[1:]:
        if isinstance(cell, ConcatCell):
            state = cell.step(state, x, mode=mode)
        else:
            state = cell.step(state, x)
    final = state.hidden if isinstance(state, LSTMState) else state
    return head(final)
