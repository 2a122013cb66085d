"""Named gradient checks over every differentiable op and aggregation step.

Each check builds a small 64-bit problem from a seed and runs the central
finite-difference comparison. Primitive ops use a 1e-5 relative tolerance,
deep composites 1e-3.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .aggregators import ConcatCell, FastGRUCell, GRUCell, LSTMCell
from .tensor import RunningStats, Tensor, grad_check

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-3


def _r(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def _check_sigmoid(seed):
    return grad_check(lambda x: T.reduce_sum(T.sigmoid(x)), [_r((3, 4), seed)],
                      tolerance=PRIMITIVE_TOL)


def _check_tanh(seed):
    return grad_check(lambda x: T.reduce_sum(T.tanh(x)), [_r((3, 4), seed)],
                      tolerance=PRIMITIVE_TOL)


def _check_relu(seed):
    return grad_check(lambda x: T.reduce_sum(T.relu(x)), [_r((3, 4), seed)],
                      tolerance=PRIMITIVE_TOL)


def _check_add(seed):
    return grad_check(lambda a, b: T.reduce_sum(T.add(a, b)),
                      [_r((2, 3), seed), _r((2, 3), seed + 50)],
                      tolerance=PRIMITIVE_TOL)


def _check_mul(seed):
    return grad_check(lambda a, b: T.reduce_sum(T.mul(a, b)),
                      [_r((2, 3), seed), _r((2, 3), seed + 50)],
                      tolerance=PRIMITIVE_TOL)


def _check_convex_mix(seed):
    z = Tensor(np.random.default_rng(seed + 99).uniform(0.05, 0.95, size=(2, 3)))
    return grad_check(lambda a, b, zz: T.reduce_sum(T.convex_mix(a, b, zz)),
                      [_r((2, 3), seed), _r((2, 3), seed + 50), z],
                      tolerance=PRIMITIVE_TOL)


def _check_global_avg_pool(seed):
    return grad_check(lambda x: T.reduce_sum(T.mul(p := T.global_avg_pool(x), p)),
                      [_r((2, 2, 3, 3, 2), seed)], tolerance=PRIMITIVE_TOL)


def _check_max_pool(seed):
    # well-separated values: near-ties flip the argmax under the finite
    # difference itself, which is a kink of max, not a gradient defect
    rng = np.random.default_rng(seed)
    vals = rng.permutation(64).astype(np.float64).reshape(1, 2, 4, 4, 2) * 0.1
    x = Tensor(vals)
    return grad_check(
        lambda x: T.reduce_sum(T.max_pool3d(x, (1, 2, 2), (1, 1, 1), (0, 1, 1))),
        [x], tolerance=PRIMITIVE_TOL)


def _check_dense(seed):
    return grad_check(lambda x, w, b: T.reduce_sum(T.mul(d := T.dense(x, w, b), d)),
                      [_r((3, 4), seed), _r((4, 2), seed + 1), _r((2,), seed + 2)],
                      tolerance=PRIMITIVE_TOL)


def _check_pointwise_conv(seed):
    return grad_check(
        lambda x, w, b: T.reduce_sum(T.mul(p := T.pointwise_conv(x, w, b), p)),
        [_r((1, 2, 2, 2, 3), seed), _r((3, 2), seed + 1), _r((2,), seed + 2)],
        tolerance=PRIMITIVE_TOL)


def _check_conv3d(seed):
    return grad_check(
        lambda x, k: T.reduce_sum(T.mul(c := T.conv3d(x, k, (1, 2, 2), (1, 1, 1)), c)),
        [_r((1, 3, 4, 4, 2), seed), _r((2, 3, 3, 2, 2), seed + 1)],
        tolerance=PRIMITIVE_TOL)


def _bn_f(mode, warm):
    def f(x, g, b):
        stats = RunningStats(3, dtype=np.float64)
        stats.mean, stats.var = warm.mean.copy(), warm.var.copy()
        stats.initialized = True
        out = T.batch_norm(x, g, b, stats, mode=mode)
        return T.reduce_sum(T.mul(out, out))
    return f


def _check_batch_norm_train(seed):
    warm = RunningStats(3, dtype=np.float64)
    T.batch_norm(_r((16, 3), seed + 9), Tensor(np.ones(3)), Tensor(np.zeros(3)), warm)
    gamma = Tensor(np.random.default_rng(seed + 1).uniform(0.5, 1.5, size=3))
    return grad_check(_bn_f("train", warm), [_r((8, 3), seed), gamma, _r((3,), seed + 2)],
                      tolerance=1e-4)


def _check_batch_norm_eval(seed):
    warm = RunningStats(3, dtype=np.float64)
    T.batch_norm(_r((16, 3), seed + 9), Tensor(np.ones(3)), Tensor(np.zeros(3)), warm)
    gamma = Tensor(np.random.default_rng(seed + 1).uniform(0.5, 1.5, size=3))
    return grad_check(_bn_f("eval", warm), [_r((8, 3), seed), gamma, _r((3,), seed + 2)],
                      tolerance=PRIMITIVE_TOL)


def _check_softmax_cross_entropy(seed):
    labels = np.random.default_rng(seed + 7).integers(0, 5, size=4)
    return grad_check(lambda x: T.softmax_cross_entropy(x, labels),
                      [_r((4, 5), seed)], tolerance=PRIMITIVE_TOL)


def _check_fast_gru_step(seed):
    cell = FastGRUCell(8, reduction=4, dtype=np.float64, seed=seed)
    x, s = _r((1, 1, 2, 2, 8), seed + 100), _r((1, 1, 2, 2, 8), seed + 200)
    params = list(cell.named_params().values())

    def f(xv, sv, *_ps):
        out = cell.step(sv, xv)
        return T.reduce_sum(T.mul(out, out))
    return grad_check(f, [x, s, *params], tolerance=COMPOSITE_TOL)


def _check_gru_step(seed):
    cell = GRUCell(6, dtype=np.float64, seed=seed)
    x, s = _r((2, 6), seed + 100), _r((2, 6), seed + 200)
    params = list(cell.named_params().values())

    def f(xv, sv, *_ps):
        out = cell.step(sv, xv)
        return T.reduce_sum(T.mul(out, out))
    return grad_check(f, [x, s, *params], tolerance=COMPOSITE_TOL)


def _check_lstm_step(seed):
    cell = LSTMCell(6, dtype=np.float64, seed=seed)
    x, s = _r((2, 6), seed + 100), _r((2, 6), seed + 200)
    params = list(cell.named_params().values())

    def f(xv, sv, *_ps):
        out = cell.step(cell.init_state(sv), xv).hidden
        return T.reduce_sum(T.mul(out, out))
    return grad_check(f, [x, s, *params], tolerance=COMPOSITE_TOL)


def _check_concat_step(seed):
    cell = ConcatCell(6, dtype=np.float64, seed=seed)
    T.batch_norm(_r((12, 6), seed + 9), cell.bn_gamma, cell.bn_beta, cell.bn_stats)
    x, s = _r((4, 6), seed + 100), _r((4, 6), seed + 200)
    params = list(cell.named_params().values())

    def f(xv, sv, *_ps):
        out = cell.step(sv, xv, mode="eval")
        return T.reduce_sum(T.mul(out, out))
    return grad_check(f, [x, s, *params], tolerance=COMPOSITE_TOL)


CHECKS = {
    "sigmoid": _check_sigmoid,
    "tanh": _check_tanh,
    "relu": _check_relu,
    "add": _check_add,
    "mul": _check_mul,
    "convex_mix": _check_convex_mix,
    "global_avg_pool": _check_global_avg_pool,
    "max_pool3d": _check_max_pool,
    "dense": _check_dense,
    "pointwise_conv": _check_pointwise_conv,
    "conv3d": _check_conv3d,
    "batch_norm_train": _check_batch_norm_train,
    "batch_norm_eval": _check_batch_norm_eval,
    "softmax_cross_entropy": _check_softmax_cross_entropy,
    "fast_gru_step": _check_fast_gru_step,
    "gru_step": _check_gru_step,
    "lstm_step": _check_lstm_step,
    "concat_step": _check_concat_step,
}


def run_gradient_suite(which: str = "all", seeds: int = 5, log=None):
    """Run named checks over ``seeds`` seeds; returns [(name, report)] failures."""
    names = list(CHECKS) if which == "all" else [which]
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise T.ShapeError(f"unknown gradient check {unknown[0]!r}; "
                           f"choose from {sorted(CHECKS)}")
    failures = []
    for name in names:
        worst = 0.0
        ok = True
        for seed in range(seeds):
            report = CHECKS[name](seed)
            worst = max(worst, report.max_rel_error)
            if not report.passed:
                failures.append((f"{name}[seed={seed}]", report))
                ok = False
        if log:
            log(f"gradcheck {name}: {'pass' if ok else 'FAIL'} "
                f"(worst rel err {worst:.2e} over {seeds} seeds)")
    return failures
