"""Synthetic tasks: construction guarantees, statistics, and container I/O."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats as sstats

from fasterlab.datasets import (DatasetFormatError, DatasetTruncatedError,
                                LabelRangeError, TaskSpec, VideoDataset,
                                clairvoyant_avg_pool_accuracy,
                                clip_event_overlap, gen_order_task, gen_speed_task,
                                generate, make_task, normalize_frames, read_fvds,
                                render_order_video, sample_order_geometry,
                                swap_order_events, write_fvds)
from fasterlab.tensor import ShapeError


def test_order_swap_flips_label_and_is_valid():
    spec = make_task("order")
    rng = np.random.default_rng(0)
    geom = sample_order_geometry(spec, rng)
    swapped = swap_order_events(geom)
    assert swapped.label == 1 - geom.label
    # same windows, exchanged contents
    assert swapped.square_window == geom.bar_window
    assert swapped.bar_window == geom.square_window
    a = render_order_video(spec, geom, np.random.default_rng(1))
    b = render_order_video(spec, swapped, np.random.default_rng(1))
    # the frames in the event windows exchanged roles; backgrounds match
    assert a.shape == b.shape
    assert not np.array_equal(a, b)


def test_order_class_balance():
    spec = make_task("order")
    rng = np.random.default_rng(2)
    labels = [sample_order_geometry(spec, rng).label for _ in range(10_000)]
    assert abs(np.mean(labels) - 0.5) < 0.02


def test_order_no_clip_spans_both_events():
    spec = make_task("order")
    rng = np.random.default_rng(3)
    for _ in range(500):
        geom = sample_order_geometry(spec, rng)
        for start in range(spec.num_frames - 8 + 1):
            sq, bar = clip_event_overlap(geom, start, 8)
            assert not (sq > 0 and bar > 0)


def test_order_frame_statistics_class_indistinguishable():
    spec = make_task("order")
    rng = np.random.default_rng(4)
    ds = gen_order_task(spec, 240, rng)
    means = {0: [], 1: []}
    for s in ds.samples:
        means[s.label].extend(s.frames.mean(axis=(1, 2, 3)))
    ks = sstats.ks_2samp(means[0], means[1])
    assert ks.pvalue > 0.01


def test_order_geometry_infeasible_rejected():
    spec = make_task("order", num_frames=16, event_len=12)
    with pytest.raises(ShapeError, match="infeasible"):
        gen_order_task(spec, 1, np.random.default_rng(0))


def test_clairvoyant_average_cap_at_chance():
    spec = make_task("order")
    acc = clairvoyant_avg_pool_accuracy(spec, clip_len=8, num_clips=8,
                                        rng=np.random.default_rng(5))
    assert acc <= 0.55


def test_order_pixels_in_range_and_finite_normalization():
    spec = make_task("order")
    ds = gen_order_task(spec, 8, np.random.default_rng(6))
    for s in ds.samples:
        assert s.frames.dtype == np.uint8
        normed = normalize_frames(s.frames)
        assert np.all(np.isfinite(normed))
        assert normed.min() >= -2.0 and normed.max() <= 2.0


def test_speed_single_frame_marginal_uniform():
    # dot position at any fixed frame index should be uniform over the torus
    spec = make_task("speed")
    ds = gen_speed_task(spec, 400, np.random.default_rng(7))
    for frame_idx in (0, spec.num_frames - 1):
        bright = {0: [], 1: []}
        for s in ds.samples:
            frame = s.frames[frame_idx, :, :, 0].astype(float)
            y, x = np.unravel_index(frame.argmax(), frame.shape)
            bright[s.label].append((y, x))
        # compare x-coordinate distributions across classes
        xs0 = [p[1] for p in bright[0]]
        xs1 = [p[1] for p in bright[1]]
        assert sstats.ks_2samp(xs0, xs1).pvalue > 0.01


def test_speed_fixed_seed_reproducible():
    spec = make_task("speed")
    a = gen_speed_task(spec, 5, np.random.default_rng(8))
    b = gen_speed_task(spec, 5, np.random.default_rng(8))
    for sa, sb in zip(a.samples, b.samples):
        assert sa.label == sb.label
        npt.assert_array_equal(sa.frames, sb.frames)


def test_speed_requires_enough_frames():
    with pytest.raises(ShapeError, match="frames"):
        gen_speed_task(make_task("speed", num_frames=4), 1, np.random.default_rng(0))


def test_task_spec_validation():
    with pytest.raises(ShapeError):
        TaskSpec(kind="order", num_classes=3)
    with pytest.raises(ShapeError):
        make_task("waving")


# ---------------------------------------------------------------------------
# container


def test_fvds_round_trip_bitwise(tmp_path):
    ds = generate(make_task("order"), 6, np.random.default_rng(9))
    path = tmp_path / "d.fvds"
    write_fvds(path, ds)
    back = read_fvds(path)
    assert len(back) == 6
    for a, b in zip(ds.samples, back.samples):
        assert a.sample_id == b.sample_id and a.label == b.label
        npt.assert_array_equal(a.frames, b.frames)


def test_fvds_bad_magic(tmp_path):
    path = tmp_path / "bad.fvds"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(DatasetFormatError, match="magic"):
        read_fvds(path)


def test_fvds_bad_version(tmp_path):
    import struct
    path = tmp_path / "v9.fvds"
    path.write_bytes(struct.pack("<4sII", b"FVDS", 9, 0))
    with pytest.raises(DatasetFormatError, match="version"):
        read_fvds(path)


def test_fvds_truncation(tmp_path):
    ds = generate(make_task("speed"), 3, np.random.default_rng(10))
    path = tmp_path / "t.fvds"
    write_fvds(path, ds)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 100])
    with pytest.raises(DatasetTruncatedError):
        read_fvds(path)


def test_fvds_label_out_of_range(tmp_path):
    ds = generate(make_task("order"), 2, np.random.default_rng(11))
    ds.samples[1].label = 7
    path = tmp_path / "l.fvds"
    write_fvds(path, ds)
    with pytest.raises(LabelRangeError):
        read_fvds(path, expected_classes=2)


def test_fvds_empty_round_trip_and_training_rejected(tmp_path):
    path = tmp_path / "empty.fvds"
    write_fvds(path, VideoDataset([], num_classes=2))
    back = read_fvds(path)
    assert len(back) == 0
    from fasterlab.trainer import TrainConfig, train_backbone
    with pytest.raises(ShapeError, match="empty"):
        train_backbone(TrainConfig(stage="backbone", num_classes=2), back)
