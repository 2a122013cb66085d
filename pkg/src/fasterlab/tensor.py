"""Dense tensors plus a reverse-mode gradient tape.

Values are numpy arrays in row-major [batch, time, height, width, channel]
layout; channels last makes every 1x1x1 convolution a plain matrix product
on a contiguous view. Only float32/float64 are supported and ops never
broadcast: operand shapes must match exactly.

Gradient tracking is explicit. Ops executed while a ``Tape`` is active are
recorded when any input is tracked; ``backward(tape, loss)`` replays the
tape once in reverse and accumulates (sum semantics) into ``.grad`` of every
``requires_grad`` tensor reachable from the loss. The caller zeroes grads
between steps. A tape can be consumed exactly once.

Every op validates that its output is finite and raises ``NumericError``
otherwise; ``set_finite_checks(False)`` disables the scan for speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes or extents are inconsistent."""


class NumericError(ArithmeticError):
    """An op produced NaN/Inf, or a numeric run went off the rails."""


class TapeError(RuntimeError):
    """Tape misuse: reuse after backward, missing recording, etc."""


_SUPPORTED_DTYPES = (np.float32, np.float64)

_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf scan that runs after every op (default on)."""
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _finite_checks and not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: output contains NaN or Inf")


class Tensor:
    """A dense float array with optional gradient accumulation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _SUPPORTED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A non-tracked tensor sharing no gradient state (data is shared)."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


@dataclass
class _Entry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray, tuple[bool, ...]], tuple]
    needs: tuple[bool, ...]


class Tape:
    """Ordered record of executed ops; one backward pass per tape."""

    def __init__(self):
        self._entries: list[_Entry] = []
        self._live: set[int] = set()
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        if popped is not self:
            raise TapeError("tape stack corrupted: exited a tape out of order")

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def spent(self) -> bool:
        return self._spent

    def backward(self, loss: "Tensor") -> None:
        backward(self, loss)


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _record(op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> None:
    tape = _active_tape()
    if tape is None or tape._spent:
        return
    needs = tuple(t.requires_grad or id(t) in tape._live for t in inputs)
    if any(needs):
        tape._entries.append(_Entry(op, inputs, output, backward_fn, needs))
        tape._live.add(id(output))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` for every requires_grad tensor reachable from loss.

    Accumulation sums over all paths; the caller zeroes grads between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape._spent:
        raise TapeError("backward: tape already consumed; build a new tape")
    tape._spent = True

    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        _accumulate(loss, flows[id(loss)])
    for entry in reversed(tape._entries):
        g = flows.pop(id(entry.output), None)
        if g is None:
            continue
        input_grads = entry.backward(g, entry.needs)
        for t, ig in zip(entry.inputs, input_grads):
            if ig is None:
                continue
            _check_finite(ig, f"{entry.op} (backward)")
            if t.requires_grad:
                _accumulate(t, ig)
            if id(t) in tape._live:
                prev = flows.get(id(t))
                flows[id(t)] = ig if prev is None else prev + ig


# ---------------------------------------------------------------------------
# elementwise ops


def _same_shape(op: str, *tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) > 1:
        raise ShapeError(f"{op}: operand shapes differ: {sorted(shapes)}")
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: operand dtypes differ: {sorted(map(str, dtypes))}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")
    _record("add", (a, b), out, lambda g, needs: (g, g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")
    ad, bd = a.data, b.data
    _record("mul", (a, b), out, lambda g, needs: (g * bd if needs[0] else None,
                                              g * ad if needs[1] else None))
    return out


def convex_mix(a: Tensor, b: Tensor, z: Tensor) -> Tensor:
    """(1 - z) * a + z * b, elementwise; z in [0,1] keeps the result between a and b."""
    _same_shape("convex_mix", a, b, z)
    zd = z.data
    out = Tensor((1.0 - zd) * a.data + zd * b.data)
    _check_finite(out.data, "convex_mix")
    ad, bd = a.data, b.data
    _record("convex_mix", (a, b, z), out,
            lambda g, needs: (g * (1.0 - zd) if needs[0] else None,
                              g * zd if needs[1] else None,
                              g * (bd - ad) if needs[2] else None))
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant (not differentiable w.r.t. factor)."""
    out = Tensor(x.data * factor)
    _check_finite(out.data, "scale")
    _record("scale", (x,), out, lambda g, needs: (g * factor,))
    return out


def elementwise(a: Tensor, b: Tensor, kind: str, z: Tensor | None = None) -> Tensor:
    """Dispatch helper for the binary elementwise family."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "convex_mix":
        if z is None:
            raise ShapeError("elementwise: convex_mix needs a z tensor")
        return convex_mix(a, b, z)
    raise ShapeError(f"elementwise: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    out_data = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(out_data.astype(xd.dtype, copy=False))
    _check_finite(out.data, "sigmoid")
    od = out.data
    _record("sigmoid", (x,), out, lambda g, needs: (g * od * (1.0 - od),))
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    _check_finite(out.data, "tanh")
    od = out.data
    _record("tanh", (x,), out, lambda g, needs: (g * (1.0 - od * od),))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    _check_finite(out.data, "relu")
    mask = x.data > 0
    _record("relu", (x,), out, lambda g, needs: (g * mask,))
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ShapeError(f"activation: unknown kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    _check_finite(out.data, "reduce_sum")
    shp = x.shape
    _record("reduce_sum", (x,), out,
            lambda g, needs: (np.broadcast_to(g, shp).astype(x.dtype, copy=True),))
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all time/space positions: [n,t,h,w,c] -> [n,c]."""
    if x.ndim != 5:
        raise ShapeError(f"global_avg_pool: expected a 5-d tensor, got shape {x.shape}")
    n, t, h, w, c = x.shape
    if min(t, h, w) < 1:
        raise ShapeError(f"global_avg_pool: empty spatial extents in {x.shape}")
    out = Tensor(x.data.mean(axis=(1, 2, 3)))
    _check_finite(out.data, "global_avg_pool")
    inv = 1.0 / (t * h * w)

    def bwd(g, needs):
        gx = np.broadcast_to(g[:, None, None, None, :] * inv, (n, t, h, w, c))
        return (gx.astype(x.dtype, copy=True),)

    _record("global_avg_pool", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# linear maps


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis of a 2-d tensor: [n,cin] @ [cin,cout] + [cout]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense: expected 2-d x and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"dense: input features ({x.shape[1]}) do not match weight rows ({weight.shape[0]})")
    out_data = x.data @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")
        out_data = out_data + bias.data
    out = Tensor(out_data)
    _check_finite(out.data, "dense")
    xd, wd = x.data, weight.data

    if bias is None:
        _record("dense", (x, weight), out,
                lambda g, needs: (g @ wd.T if needs[0] else None,
                                  xd.T @ g if needs[1] else None))
    else:
        _record("dense", (x, weight, bias), out,
                lambda g, needs: (g @ wd.T if needs[0] else None,
                                  xd.T @ g if needs[1] else None,
                                  g.sum(axis=0) if needs[2] else None))
    return out


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1x1 convolution: an independent channel map at every position.

    x: [n,t,h,w,cin], weight: [cin,cout], bias: [cout] or None.
    """
    if x.ndim != 5:
        raise ShapeError(f"pointwise_conv: expected a 5-d input, got shape {x.shape}")
    if weight.ndim != 2:
        raise ShapeError(f"pointwise_conv: expected a 2-d weight, got shape {weight.shape}")
    cin = x.shape[-1]
    if weight.shape[0] != cin:
        raise ShapeError(
            f"pointwise_conv: input channels ({cin}) do not match weight rows ({weight.shape[0]})")
    cout = weight.shape[1]
    flat = x.data.reshape(-1, cin)
    out_data = flat @ weight.data
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"pointwise_conv: bias shape {bias.shape} != ({cout},)")
        out_data = out_data + bias.data
    out_shape = x.shape[:-1] + (cout,)
    out = Tensor(out_data.reshape(out_shape))
    _check_finite(out.data, "pointwise_conv")
    wd = weight.data

    def bwd(g, needs):
        gm = g.reshape(-1, cout)
        gx = (gm @ wd.T).reshape(x.shape) if needs[0] else None
        gw = flat.T @ gm if needs[1] else None
        if bias is None:
            return (gx, gw)
        return (gx, gw, gm.sum(axis=0) if len(needs) > 2 and needs[2] else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    _record("pointwise_conv", inputs, out, bwd)
    return out


# ---------------------------------------------------------------------------
# 3-d convolution and pooling


def _conv_out_extent(size: int, k: int, s: int, p: int, axis: str, op: str) -> int:
    padded = size + 2 * p
    if k > padded:
        raise ShapeError(
            f"{op}: kernel extent {k} exceeds padded {axis} extent {padded}")
    out = (padded - k) // s + 1
    if out < 1:
        raise ShapeError(f"{op}: zero-size output along {axis}")
    return out


def _window_cols(xp: np.ndarray, kernel_extent, stride):
    """Strided windows of a padded [n,T,H,W,c] array -> [n,t',h',w',kt,kh,kw,c]."""
    kt, kh, kw = kernel_extent
    st, sh, sw = stride
    win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, ::st, ::sh, ::sw]
    # sliding_window_view leaves channels before the window axes
    return np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4))


def conv3d(x: Tensor, kernel: Tensor,
           stride: tuple[int, int, int] = (1, 1, 1),
           padding: tuple[int, int, int] = (0, 0, 0)) -> Tensor:
    """Cross-correlation of [n,t,h,w,cin] with [kt,kh,kw,cin,cout].

    Implemented as window extraction plus one matrix product; the backward
    pass scatter-adds through the same windows.
    """
    if x.ndim != 5:
        raise ShapeError(f"conv3d: expected a 5-d input, got shape {x.shape}")
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d: expected a 5-d kernel, got shape {kernel.shape}")
    n, t, h, w, cin = x.shape
    kt, kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(
            f"conv3d: input channels ({cin}) do not match kernel channels ({kcin})")
    st, sh, sw = stride
    pt, ph, pw = padding
    if min(st, sh, sw) < 1:
        raise ShapeError(f"conv3d: strides must be >= 1, got {stride}")
    if min(pt, ph, pw) < 0:
        raise ShapeError(f"conv3d: negative padding {padding}")
    to = _conv_out_extent(t, kt, st, pt, "time", "conv3d")
    ho = _conv_out_extent(h, kh, sh, ph, "height", "conv3d")
    wo = _conv_out_extent(w, kw, sw, pw, "width", "conv3d")
    kmat = kernel.data.reshape(kt * kh * kw * cin, cout)

    if (kt, kh, kw) == (1, 1, 1) and padding == (0, 0, 0):
        # 1x1x1 kernels need no window extraction: subsample, then one matmul.
        sub = x.data[:, ::st, ::sh, ::sw, :]
        cols = np.ascontiguousarray(sub).reshape(-1, cin)
        out = Tensor((cols @ kmat).reshape(n, to, ho, wo, cout))
        _check_finite(out.data, "conv3d")

        def bwd_pointwise(g, needs):
            gm = g.reshape(-1, cout)
            gk = (cols.T @ gm).reshape(kernel.shape) if needs[1] else None
            if not needs[0]:
                return (None, gk)
            if stride == (1, 1, 1):
                gx = (gm @ kmat.T).reshape(x.shape)
            else:
                gx = np.zeros_like(x.data)
                gx[:, ::st, ::sh, ::sw, :] = (gm @ kmat.T).reshape(n, to, ho, wo, cin)
            return (gx, gk)

        _record("conv3d", (x, kernel), out, bwd_pointwise)
        return out

    if padding == (0, 0, 0):
        xp = x.data
    else:
        xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    win = _window_cols(xp, (kt, kh, kw), stride)          # [n,to,ho,wo,kt,kh,kw,cin]
    cols = win.reshape(n * to * ho * wo, kt * kh * kw * cin)
    out = Tensor((cols @ kmat).reshape(n, to, ho, wo, cout))
    _check_finite(out.data, "conv3d")

    def bwd(g, needs):
        gm = g.reshape(-1, cout)
        gk = (cols.T @ gm).reshape(kernel.shape) if needs[1] else None
        if not needs[0]:
            return (None, gk)
        gcols = (gm @ kmat.T).reshape(n, to, ho, wo, kt, kh, kw, cin)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    gxp[:, a:a + st * to:st, b:b + sh * ho:sh, c:c + sw * wo:sw, :] += \
                        gcols[:, :, :, :, a, b, c, :]
        gx = gxp[:, pt:pt + t, ph:ph + h, pw:pw + w, :]
        return (np.ascontiguousarray(gx), gk)

    _record("conv3d", (x, kernel), out, bwd)
    return out


def max_pool3d(x: Tensor, window: tuple[int, int, int],
               stride: tuple[int, int, int] | None = None,
               padding: tuple[int, int, int] = (0, 0, 0)) -> Tensor:
    """Windowed maximum over (t,h,w) per channel; subgradient to the argmax.

    Ties route to the first occurrence in row-major window order. Padding is
    -inf so padded cells never win.
    """
    if x.ndim != 5:
        raise ShapeError(f"max_pool3d: expected a 5-d input, got shape {x.shape}")
    if stride is None:
        stride = window
    n, t, h, w, c = x.shape
    kt, kh, kw = window
    st, sh, sw = stride
    pt, ph, pw = padding
    if pt >= kt or ph >= kh or pw >= kw:
        raise ShapeError(f"max_pool3d: padding {padding} must stay below window {window}")
    to = _conv_out_extent(t, kt, st, pt, "time", "max_pool3d")
    ho = _conv_out_extent(h, kh, sh, ph, "height", "max_pool3d")
    wo = _conv_out_extent(w, kw, sw, pw, "width", "max_pool3d")

    neg = np.array(-np.inf, dtype=x.dtype)
    xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)),
                constant_values=neg)
    win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
    # win: [n,to,ho,wo,c,kt,kh,kw] -> flatten the window axes
    flat = win.reshape(n, to, ho, wo, c, kt * kh * kw)
    arg = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0])
    _check_finite(out.data, "max_pool3d")

    def bwd(g, needs):
        gxp = np.zeros_like(xp)
        for k in range(kt * kh * kw):
            mask = arg == k
            if not mask.any():
                continue
            a, b, d = np.unravel_index(k, (kt, kh, kw))
            gxp[:, a:a + st * to:st, b:b + sh * ho:sh, d:d + sw * wo:sw, :] += g * mask
        gx = gxp[:, pt:pt + t, ph:ph + h, pw:pw + w, :]
        return (np.ascontiguousarray(gx),)

    _record("max_pool3d", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# batch norm


class RunningStats:
    """Per-channel running mean/variance updated by exponential moving average."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.initialized = False

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        if not self.initialized:
            self.mean = batch_mean.astype(self.mean.dtype, copy=True)
            self.var = batch_var.astype(self.var.dtype, copy=True)
            self.initialized = True
        else:
            self.mean = (1.0 - m) * self.mean + m * batch_mean
            self.var = (1.0 - m) * self.var + m * batch_var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_stats: RunningStats,
               mode: str = "train", eps: float = 1e-5) -> Tensor:
    """Normalize per channel (last axis) over all other axes.

    Train mode uses biased batch statistics and updates the running stats;
    eval mode uses the stored running stats and requires them initialized.
    """
    if mode not in ("train", "eval"):
        raise ShapeError(f"batch_norm: unknown mode {mode!r}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batch_norm: gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    axes = tuple(range(x.ndim - 1))
    count = int(np.prod([x.shape[a] for a in axes], dtype=np.int64))

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_stats.update(mu, var)
    else:
        if not running_stats.initialized:
            raise NumericError(
                "batch_norm: eval mode before any train-mode update; running stats uninitialized")
        mu = running_stats.mean.astype(x.dtype, copy=False)
        var = running_stats.var.astype(x.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    # fused affine: gamma*(x-mu)*inv_std + beta == x*scale1 + shift1
    scale1 = gamma.data * inv_std
    shift1 = beta.data - mu * scale1
    out = Tensor(x.data * scale1 + shift1)
    _check_finite(out.data, "batch_norm")
    gd = gamma.data

    if mode == "train":
        def bwd(g, needs):
            xhat = (x.data - mu) * inv_std
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            gx = None
            if needs[0]:
                gx = ((gd * inv_std / count) * (count * g - dbeta - xhat * dgamma)
                      ).astype(x.dtype, copy=False)
            return (gx,
                    dgamma if needs[1] else None,
                    dbeta if needs[2] else None)
    else:
        def bwd(g, needs):
            dgamma = None
            if needs[1]:
                xhat = (x.data - mu) * inv_std
                dgamma = (g * xhat).sum(axis=axes)
            gx = g * (gd * inv_std) if needs[0] else None
            return (gx,
                    dgamma,
                    g.sum(axis=axes) if needs[2] else None)

    _record("batch_norm", (x, gamma, beta), out, bwd)
    return out


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class; max-subtracted for stability.

    labels: integer array of shape [n] with values in [0, k).
    """
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected [n,k] logits, got {logits.shape}")
    lab = np.asarray(labels)
    n, k = logits.shape
    if lab.shape != (n,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {lab.shape} does not match batch {n}")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ShapeError(
            f"softmax_cross_entropy: label out of range [0,{k}): {int(lab.min())}..{int(lab.max())}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = Tensor(np.asarray(-logp[np.arange(n), lab].mean(), dtype=logits.dtype))
    _check_finite(loss.data, "softmax_cross_entropy")

    def bwd(g, needs):
        p = np.exp(logp)
        p[np.arange(n), lab] -= 1.0
        return (p * (g / n),)

    _record("softmax_cross_entropy", (logits,), loss, bwd)
    return loss


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Outcome of comparing tape gradients against central differences."""

    max_rel_error: float
    passed: bool
    tolerance: float
    worst_input: int = -1
    worst_element: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    checked: int = 0

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"grad_check {verdict}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.0e}, {self.checked} elements)")


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               epsilon: float = 1e-5, tolerance: float = 1e-5,
               abs_guard: float = 1e-9) -> GradCheckReport:
    """Compare tape gradients of a scalar-valued f against central differences.

    Inputs must be float64. Relative error is |a-n| / max(|a|,|n|), with
    differences below ``abs_guard`` counted as exact to absorb finite-difference
    rounding noise on true-zero gradients.
    """
    inputs = list(inputs)
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise ShapeError(f"grad_check: input {i} must be float64, got {t.dtype}")
        t.requires_grad = True
        t.zero_grad()

    with Tape() as tape:
        loss = f(*inputs)
    if loss.data.size != 1:
        raise ShapeError("grad_check: f must be scalar-valued")
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    report = GradCheckReport(0.0, True, tolerance)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            hi = float(f(*inputs).data)
            flat[j] = orig - epsilon
            lo = float(f(*inputs).data)
            flat[j] = orig
            num[j] = (hi - lo) / (2.0 * epsilon)
        ana = analytic[i].reshape(-1)
        diff = np.abs(ana - num)
        denom = np.maximum(np.abs(ana), np.abs(num))
        rel = np.where(diff <= abs_guard, 0.0,
                       diff / np.where(denom == 0, 1.0, denom))
        report.checked += flat.size
        worst = int(rel.argmax()) if rel.size else 0
        if rel.size and rel[worst] > report.max_rel_error:
            report.max_rel_error = float(rel[worst])
            report.worst_input = i
            report.worst_element = np.unravel_index(worst, t.shape)
            report.analytic = float(ana[worst])
            report.numeric = float(num[worst])
    report.passed = report.max_rel_error < tolerance
    return report
