"""Tensor-core ops against frozen examples and independent oracles."""

import math

import numpy as np
import numpy.testing as npt
import pytest

import fasterlab.tensor as T
from fasterlab.tensor import NumericError, ShapeError, Tape, TapeError, Tensor

from oracles import conv3d_naive


def rand(shape, seed, dtype=np.float64):
    return np.random.default_rng(seed).normal(size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# conv3d


def test_conv3d_r2d_conv1_shape():
    x = Tensor(np.zeros((1, 8, 224, 224, 3), dtype=np.float32))
    k = Tensor(np.zeros((8, 7, 7, 3, 64), dtype=np.float32))
    out = T.conv3d(x, k, stride=(8, 2, 2), padding=(0, 3, 3))
    assert out.shape == (1, 1, 112, 112, 64)


def test_conv3d_identity_kernel():
    x = Tensor(rand((1, 2, 3, 3, 4), seed=0))
    k = Tensor(np.eye(4)[None, None, None])
    out = T.conv3d(x, k)
    npt.assert_array_equal(out.data, x.data)


def test_conv3d_matches_naive_oracle():
    x = rand((1, 2, 3, 3, 2), seed=1)
    k = rand((1, 2, 2, 2, 2), seed=2)
    out = T.conv3d(Tensor(x), Tensor(k))
    npt.assert_allclose(out.data, conv3d_naive(x, k), atol=1e-6)


def test_conv3d_strided_padded_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(6):
        t, h, w = rng.integers(2, 5, size=3)
        kt = int(rng.integers(1, t + 1))
        kh = int(rng.integers(1, h + 1))
        kw = int(rng.integers(1, w + 1))
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
        padding = tuple(int(p) for p in rng.integers(0, 2, size=3))
        x = rng.normal(size=(2, t, h, w, cin))
        k = rng.normal(size=(kt, kh, kw, cin, cout))
        out = T.conv3d(Tensor(x), Tensor(k), stride, padding)
        npt.assert_allclose(out.data, conv3d_naive(x, k, stride, padding), atol=1e-6)


def test_conv3d_channel_mismatch_names_dimension():
    x = Tensor(np.zeros((1, 2, 2, 2, 3), dtype=np.float32))
    k = Tensor(np.zeros((1, 1, 1, 4, 2), dtype=np.float32))
    with pytest.raises(ShapeError, match="channels"):
        T.conv3d(x, k)


def test_conv3d_kernel_too_large_and_zero_output():
    x = Tensor(np.zeros((1, 2, 2, 2, 1), dtype=np.float32))
    k = Tensor(np.zeros((3, 1, 1, 1, 1), dtype=np.float32))
    with pytest.raises(ShapeError, match="time"):
        T.conv3d(x, k)


# ---------------------------------------------------------------------------
# pointwise conv


def test_pointwise_conv_bottleneck_shape():
    x = Tensor(np.zeros((1, 1, 7, 7, 2048), dtype=np.float32))
    w = Tensor(np.zeros((2048, 512), dtype=np.float32))
    b = Tensor(np.zeros(512, dtype=np.float32))
    assert T.pointwise_conv(x, w, b).shape == (1, 1, 7, 7, 512)


def test_pointwise_conv_identity():
    x = Tensor(rand((1, 2, 2, 2, 3), seed=4))
    out = T.pointwise_conv(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    npt.assert_array_equal(out.data, x.data)


def test_pointwise_conv_equals_dense_on_rows():
    x = rand((1, 1, 2, 2, 3), seed=5)
    w = rand((3, 4), seed=6)
    b = rand((4,), seed=7)
    out = T.pointwise_conv(Tensor(x), Tensor(w), Tensor(b))
    expect = x.reshape(-1, 3) @ w + b
    npt.assert_allclose(out.data.reshape(-1, 4), expect, atol=1e-6)


def test_pointwise_conv_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        T.pointwise_conv(Tensor(np.zeros((1, 1, 1, 1, 3), dtype=np.float32)),
                         Tensor(np.zeros((2, 2), dtype=np.float32)))


# ---------------------------------------------------------------------------
# activations and elementwise


def test_activation_fixed_points():
    assert float(T.sigmoid(Tensor(np.array(0.0))).data) == pytest.approx(0.5)
    assert float(T.relu(Tensor(np.array(-3.2))).data) == 0.0
    assert float(T.tanh(Tensor(np.array(0.0))).data) == 0.0


def test_activation_ranges():
    x = Tensor(rand((64,), seed=8) * 5)
    s = T.sigmoid(x).data
    assert np.all((s > 0) & (s < 1))
    t = T.tanh(x).data
    assert np.all((t > -1) & (t < 1))
    assert np.all(T.relu(x).data >= 0)
    with pytest.raises(ShapeError):
        T.activation(x, "gelu")


def test_convex_mix_endpoints_exact():
    a = Tensor(rand((3, 4), seed=9))
    b = Tensor(rand((3, 4), seed=10))
    zero = Tensor(np.zeros((3, 4)))
    one = Tensor(np.ones((3, 4)))
    npt.assert_array_equal(T.convex_mix(a, b, zero).data, a.data)
    npt.assert_array_equal(T.convex_mix(a, b, one).data, b.data)


def test_convex_mix_stays_between():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(50,)))
    b = Tensor(rng.normal(size=(50,)))
    z = Tensor(rng.uniform(0, 1, size=(50,)))
    out = T.convex_mix(a, b, z).data
    lo = np.minimum(a.data, b.data)
    hi = np.maximum(a.data, b.data)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        T.elementwise(Tensor(np.zeros(3)), Tensor(np.zeros(3)), "convex_mix")


# ---------------------------------------------------------------------------
# pooling


def test_global_avg_pool_constant_and_mean():
    x = Tensor(np.full((2, 1, 2, 2, 3), 7.0))
    npt.assert_allclose(T.global_avg_pool(x).data, np.full((2, 3), 7.0))
    vals = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2, 1))
    npt.assert_allclose(T.global_avg_pool(vals).data, [[2.5]])


def test_max_pool_r2d_pool1_shape():
    x = Tensor(np.zeros((1, 1, 112, 112, 64), dtype=np.float32))
    out = T.max_pool3d(x, (1, 3, 3), (1, 2, 2), (0, 1, 1))
    assert out.shape == (1, 1, 56, 56, 64)


def test_max_pool_constant_and_values():
    x = Tensor(np.full((1, 2, 4, 4, 2), 3.0))
    out = T.max_pool3d(x, (1, 2, 2), (1, 2, 2))
    npt.assert_array_equal(out.data, np.full((1, 2, 2, 2, 2), 3.0))
    v = Tensor(np.array([1.0, 5.0, 2.0, 3.0]).reshape(1, 1, 2, 2, 1))
    assert T.max_pool3d(v, (1, 2, 2)).data.item() == 5.0


# ---------------------------------------------------------------------------
# batch norm


def test_batch_norm_standardized_passthrough():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1.7, 1.7, size=(512, 4))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    stats = T.RunningStats(4, dtype=np.float64)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), stats)
    assert np.abs(out.data - x).max() < 1e-5


def test_batch_norm_beta_shifts_mean():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(2.0, 3.0, size=(256, 3)))
    stats = T.RunningStats(3, dtype=np.float64)
    out = T.batch_norm(x, Tensor(np.ones(3)), Tensor(np.full(3, 5.0)), stats)
    npt.assert_allclose(out.data.mean(axis=0), np.full(3, 5.0), atol=1e-5)


def test_batch_norm_unit_variance_before_affine():
    rng = np.random.default_rng(14)
    x = Tensor(rng.normal(-1.0, 2.5, size=(400, 5)))
    stats = T.RunningStats(5, dtype=np.float64)
    out = T.batch_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), stats)
    npt.assert_allclose(out.data.var(axis=0), np.ones(5), atol=1e-4)


def test_batch_norm_eval_without_stats_errors():
    stats = T.RunningStats(2)
    with pytest.raises(NumericError, match="running stats"):
        T.batch_norm(Tensor(np.zeros((4, 2), dtype=np.float32)),
                     Tensor(np.ones(2, dtype=np.float32)),
                     Tensor(np.zeros(2, dtype=np.float32)), stats, mode="eval")


def test_batch_norm_eval_uses_running_stats():
    rng = np.random.default_rng(15)
    stats = T.RunningStats(2, dtype=np.float64)
    for _ in range(30):
        T.batch_norm(Tensor(rng.normal(3.0, 2.0, size=(128, 2))),
                     Tensor(np.ones(2)), Tensor(np.zeros(2)), stats)
    x = np.full((1, 2), 3.0)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       stats, mode="eval")
    assert np.abs(out.data).max() < 0.2  # mean input lands near zero


# ---------------------------------------------------------------------------
# dense and loss


def test_dense_identity_and_fixed_case():
    x = Tensor(rand((3, 4), seed=16))
    out = T.dense(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
    npt.assert_allclose(out.data, x.data)
    a = Tensor(np.array([[1.0, 2.0]]))
    w = Tensor(np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]]))
    b = Tensor(np.array([0.5, -0.5, 0.0]))
    npt.assert_allclose(T.dense(a, w, b).data, [[1.5, 1.5, 4.0]])


def test_softmax_cross_entropy_uniform_is_log_k():
    logits = Tensor(np.zeros((5, 400)))
    loss = T.softmax_cross_entropy(logits, np.zeros(5, dtype=int))
    assert float(loss.data) == pytest.approx(math.log(400), rel=1e-6)


def test_softmax_cross_entropy_confident_drives_to_zero():
    losses = []
    for scale in (1.0, 5.0, 20.0):
        logits = np.zeros((1, 4))
        logits[0, 2] = scale
        losses.append(float(T.softmax_cross_entropy(Tensor(logits), [2]).data))
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-6


def test_softmax_cross_entropy_label_out_of_range():
    with pytest.raises(ShapeError, match="label"):
        T.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


# ---------------------------------------------------------------------------
# tape semantics


def test_backward_sum_gives_ones():
    x = Tensor(rand((3, 4), seed=17), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(x)
    tape.backward(loss)
    npt.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_sum_of_square_gives_2x():
    x = Tensor(rand((3, 4), seed=18), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(x, x))
    tape.backward(loss)
    npt.assert_allclose(x.grad, 2 * x.data, atol=1e-12)


def test_backward_accumulates_over_paths_and_steps():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.add(x, x))
    tape.backward(loss)
    npt.assert_array_equal(x.grad, [2.0, 2.0])
    with Tape() as tape2:
        loss2 = T.reduce_sum(x)
    tape2.backward(loss2)  # sums into the existing grad
    npt.assert_array_equal(x.grad, [3.0, 3.0])


def test_backward_rejects_nonscalar_and_double_use():
    x = Tensor(rand((3,), seed=19), requires_grad=True)
    with Tape() as tape:
        y = T.mul(x, x)
        loss = T.reduce_sum(y)
    with pytest.raises(ShapeError):
        tape.backward(y)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_finite_check_raises_and_can_disable():
    big = Tensor(np.array([1e30], dtype=np.float32))
    with pytest.raises(NumericError):
        T.mul(big, big)
    T.set_finite_checks(False)
    try:
        with np.errstate(over="ignore"):
            out = T.mul(big, big)
        assert np.isinf(out.data).all()
    finally:
        T.set_finite_checks(True)


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(123)
        x = Tensor(rng.normal(size=(2, 2, 4, 4, 3)).astype(np.float32))
        k = Tensor(rng.normal(size=(2, 3, 3, 3, 4)).astype(np.float32))
        out = T.conv3d(x, k, (1, 1, 1), (0, 1, 1))
        return T.global_avg_pool(T.relu(out)).data
    a, b = run(), run()
    assert a.tobytes() == b.tobytes()
