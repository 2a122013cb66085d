"""Cost-model checks against the published tables and exact accounting laws.

Reference values (GFLOPs): per-clip backbone costs at 224x224 come from the
published table of clip-level results; schedule totals come from the
expensive/cheap ratio study. Tolerances: +/-10% on backbone totals, +/-5% on
schedule totals and the step-cost difference oracle.
"""

import pytest

from fasterlab.backbones import BackboneConfig
from fasterlab.flops import (GIGA, CostReport, aggregator_flops, backbone_flops,
                             head_flops, layer_flops, schedule_flops)
from fasterlab.backbones import spec_table
from fasterlab.scheduler import make_pattern
from fasterlab.tensor import ShapeError

# per-clip GFLOPs published for the two backbones at L in {8,16,32}
TABLE_BACKBONE = {
    ("r2d", 8): 3.2, ("r2d", 16): 6.0, ("r2d", 32): 12.7,
    ("r21d", 8): 30.0, ("r21d", 16): 60.0, ("r21d", 32): 119.9,
}

# schedule totals (GFLOPs) for every feasible (L, x) cell of the ratio study
TABLE_SCHEDULE = {
    (8, 0): 982.4, (8, 1): 553.6, (8, 3): 339.2,
    (8, 7): 230.4, (8, 15): 176.0, (8, 31): 150.4,
    (16, 0): 980.2, (16, 1): 552.0, (16, 3): 337.6, (16, 7): 230.4, (16, 15): 176.0,
    (32, 0): 979.2, (32, 1): 550.4, (32, 3): 336.0, (32, 7): 228.8,
}

# runtime-comparison table: all-cheap and all-expensive score-averaging totals
TABLE_RUNTIME = {"all_c": 101.3, "all_e": 959.3, "mixed_32": 550.4}


def analytic_backbone(family, L):
    return backbone_flops(BackboneConfig(family=family, clip_len=L)).total_macs


@pytest.mark.parametrize(("family", "L"), sorted(TABLE_BACKBONE))
def test_backbone_totals_match_published(family, L):
    got = analytic_backbone(family, L) / GIGA
    want = TABLE_BACKBONE[(family, L)]
    assert abs(got - want) / want < 0.10, f"{family} L={L}: {got} vs {want}"


def test_layer_flops_closed_forms():
    specs = {s.name: s for s in spec_table(BackboneConfig(family="r2d"))}
    # pointwise 2048->512 over 49 positions
    from fasterlab.backbones import LayerSpec
    pw = LayerSpec("conv", "pw", kernel=(1, 1, 1), stride=(1, 1, 1),
                   padding=(0, 0, 0), in_ch=2048, out_ch=512)
    assert layer_flops(pw, (1, 1, 7, 7, 2048)) == 49 * 2048 * 512 == 51_380_224
    assert layer_flops(specs["pool1"], (1, 1, 112, 112, 64)) == 0
    assert layer_flops(specs["gap"], (1, 1, 7, 7, 2048)) == 0
    assert layer_flops(specs["fc"], (1, 1, 7, 7, 2048)) == 2048 * 400 == 819_200


def test_aggregator_step_closed_form():
    # P*c^2*(6/r + 2) at the full-spec feature geometry
    macs = aggregator_flops("fast-gru", (1, 7, 7, 2048), reduction=4)
    assert macs == int(49 * 2048 * 2048 * 3.5) == 719_323_136
    assert aggregator_flops("avg-pool", (1, 7, 7, 2048)) == 0
    assert aggregator_flops("gru", (1, 7, 7, 2048)) == 6 * 2048 * 2048
    assert aggregator_flops("lstm", (1, 7, 7, 2048)) == 8 * 2048 * 2048
    assert aggregator_flops("concat", (1, 7, 7, 2048)) == 2 * 2048 * 2048
    with pytest.raises(ShapeError):
        aggregator_flops("fast-gru", (1, 7, 7, 2046), reduction=4)


@pytest.mark.parametrize("L,l,published_all_e,n_exp", [
    (8, 1, 982.4, 30.0), (32, 4, 979.2, 119.9)])
def test_step_cost_against_difference_oracle(L, l, published_all_e, n_exp):
    # (all-expensive total - N * per-clip cost) / (N - 1) isolates the step
    N = 256 // L
    oracle = (published_all_e - N * n_exp) / (N - 1)
    analytic = aggregator_flops("fast-gru", (l, 7, 7, 2048)) / GIGA
    assert abs(analytic - oracle) / oracle < 0.05


@pytest.mark.parametrize(("L", "x"), sorted(TABLE_SCHEDULE))
def test_schedule_totals_match_published(L, x):
    N = 256 // L
    sched = make_pattern(N, x, L)
    rep = schedule_flops(sched, "fast-gru",
                         int(TABLE_BACKBONE[("r21d", L)] * GIGA),
                         int(TABLE_BACKBONE[("r2d", L)] * GIGA),
                         (L // 8, 7, 7, 2048))
    want = TABLE_SCHEDULE[(L, x)]
    got = rep.total_gflops
    assert abs(got - want) / want < 0.05, f"L={L} 1:{x}: {got} vs {want}"


def test_runtime_table_score_averaging_totals():
    all_c = schedule_flops(make_pattern(8, None, 32), "avg-pool",
                           int(119.9 * GIGA), int(12.7 * GIGA), (4, 7, 7, 2048))
    assert abs(all_c.total_gflops - TABLE_RUNTIME["all_c"]) / TABLE_RUNTIME["all_c"] < 0.05
    all_e = schedule_flops(make_pattern(8, 0, 32), "avg-pool",
                           int(119.9 * GIGA), int(12.7 * GIGA), (4, 7, 7, 2048))
    assert abs(all_e.total_gflops - TABLE_RUNTIME["all_e"]) / TABLE_RUNTIME["all_e"] < 0.05


def test_schedule_monotonicity():
    e = analytic_backbone("r21d", 8)
    c = analytic_backbone("r2d", 8)
    shape = (1, 7, 7, 2048)
    totals = [schedule_flops(make_pattern(32, x, 8), "fast-gru", e, c, shape).total_macs
              for x in (0, 1, 3, 7, 15, 31)]
    assert totals == sorted(totals, reverse=True)  # more expensive clips cost more
    by_L = [schedule_flops(make_pattern(8, 1, L), "fast-gru",
                           analytic_backbone("r21d", L), analytic_backbone("r2d", L),
                           (L // 8, 7, 7, 2048)).total_macs
            for L in (8, 16, 32)]
    assert by_L == sorted(by_L)
    by_N = [schedule_flops(make_pattern(N, 1, 8), "fast-gru", e, c, shape).total_macs
            for N in (2, 4, 8, 16, 32)]
    assert by_N == sorted(by_N)


def test_schedule_additivity_exact():
    e = analytic_backbone("r21d", 8)
    c = analytic_backbone("r2d", 8)
    shape = (1, 7, 7, 2048)
    base = schedule_flops(make_pattern(32, None, 8), "fast-gru", e, c, shape).total_macs
    for x in (0, 1, 3, 7, 15, 31):
        sched = make_pattern(32, x, 8)
        total = schedule_flops(sched, "fast-gru", e, c, shape).total_macs
        assert total == base + sched.expensive_count * (e - c)


def test_cost_report_total_is_exact_sum_and_csv():
    rep = CostReport("demo")
    rep.add("a", 10)
    rep.add("b", 32)
    assert rep.total_macs == 42
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "layer,macs,gflops"
    assert lines[-1].startswith("total,42,")


def test_head_cost_negligible_but_counted():
    macs = head_flops(2048, 400)
    assert macs == 819_200
    assert macs / GIGA < 0.001


def test_layer_flops_channel_mismatch():
    specs = {s.name: s for s in spec_table(BackboneConfig(family="r2d"))}
    with pytest.raises(ShapeError, match="channels"):
        layer_flops(specs["res3"], (1, 1, 56, 56, 999))
