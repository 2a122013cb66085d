"""Command surface: exit codes, CSV contracts, artifacts, config overlay."""

import subprocess
import sys

import pytest

from fasterlab.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main(["gen", "--task", "order", "--n", "24", "--seed", "1",
               "--out", str(root / "train.fvds")])
    assert rc == EXIT_OK
    rc = main(["gen", "--task", "order", "--n", "12", "--seed", "2",
               "--out", str(root / "test.fvds")])
    assert rc == EXIT_OK
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    for fam, out in (("r2d26", "cheap"), ("r21d50", "exp")):
        rc = main(["train", "--stage", "backbone", "--backbone", fam,
                   "--data", str(workdir / "train.fvds"), "--out", str(workdir / out),
                   "--epochs", "1", "--batch-size", "8", "--lr", "0.01",
                   "--seed", "3"])
        assert rc == EXIT_OK
    rc = main(["train", "--stage", "aggregator", "--method", "fast-gru",
               "--pattern", "1:3", "--clips", "4",
               "--data", str(workdir / "train.fvds"), "--out", str(workdir / "agg"),
               "--expensive", str(workdir / "exp"), "--cheap", str(workdir / "cheap"),
               "--epochs", "1", "--batch-size", "8", "--lr", "0.02", "--seed", "4",
               "--feature-cache"])
    assert rc == EXIT_OK
    return workdir


def test_gen_writes_container(workdir):
    from fasterlab.datasets import read_fvds
    ds = read_fvds(workdir / "train.fvds")
    assert len(ds) == 24


def test_train_writes_artifacts(trained):
    assert (trained / "agg" / "checkpoint" / "manifest.json").exists()
    assert (trained / "agg" / "config_resolved.cfg").exists()
    metrics = (trained / "agg" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "epoch,split,loss,top1"
    assert len(metrics) >= 3  # header + epoch 0 + one epoch


def test_eval_prints_accuracy_csv(trained, capsys):
    rc = main(["eval", "--ckpt", str(trained / "agg"),
               "--data", str(trained / "test.fvds")])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    key, value = out[0].split(",")
    assert key == "top1"
    assert 0.0 <= float(value) <= 1.0


def test_flops_backbone_csv(capsys):
    rc = main(["flops", "--backbone", "r21d50", "--frames", "32"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "layer,macs,gflops"
    total = out[-1].split(",")
    assert total[0] == "total"
    assert abs(float(total[2]) - 119.9) / 119.9 < 0.10


def test_flops_schedule_csv(capsys):
    rc = main(["flops", "--pattern", "1:1", "--frames", "8", "--clips", "32",
               "--method", "fast-gru"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    total = float(out[-1].split(",")[2])
    assert abs(total - 553.6) / 553.6 < 0.05


def test_flops_infeasible_pattern_exit_code(capsys):
    rc = main(["flops", "--pattern", "1:15", "--clips", "8", "--frames", "32"])
    assert rc == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "infeasible" in err


def test_flops_preset_faster16(capsys):
    rc = main(["flops", "--preset", "faster16"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    total = float(out[-1].split(",")[2])
    assert abs(total - 230.4) / 230.4 < 0.05  # 16-frame, 1:7 published total


def test_flops_plot_written(tmp_path, capsys):
    fig = tmp_path / "cost.png"
    rc = main(["flops", "--backbone", "r2d26", "--frames", "8", "--plot", str(fig)])
    assert rc == EXIT_OK
    capsys.readouterr()
    assert fig.exists() and fig.stat().st_size > 1000


def test_stdout_has_no_log_lines(capsys):
    rc = main(["flops", "--backbone", "r2d26", "--frames", "8"])
    assert rc == EXIT_OK
    captured = capsys.readouterr()
    for line in captured.out.strip().splitlines():
        assert line.count(",") == 2  # pure CSV
    assert "config:" in captured.err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["flops", "--does-not-exist"])
    assert exc.value.code == 2


def test_unknown_backbone_exits_2(capsys):
    rc = main(["flops", "--backbone", "vit"])
    assert rc == EXIT_CONFIG


def test_missing_data_file_exits_3(capsys, tmp_path):
    rc = main(["train", "--stage", "backbone", "--data", str(tmp_path / "nope.fvds"),
               "--out", str(tmp_path / "run")])
    assert rc == EXIT_DATA


def test_config_file_overlay(tmp_path, capsys):
    cfg = tmp_path / "lab.cfg"
    cfg.write_text("[flops]\nbackbone = r2d26\nframes = 32\n")
    rc = main(["flops", "--config", str(cfg)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    total = float(out[-1].split(",")[2])
    assert abs(total - 12.7) / 12.7 < 0.10


def test_config_file_cli_wins(tmp_path, capsys):
    cfg = tmp_path / "lab.cfg"
    cfg.write_text("[flops]\nbackbone = r2d26\nframes = 32\n")
    rc = main(["flops", "--config", str(cfg), "--frames", "8"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    total = float(out[-1].split(",")[2])
    assert abs(total - 3.2) / 3.2 < 0.10


def test_sweep_csv_contract(trained, capsys):
    rc = main(["sweep", "--data", str(trained / "train.fvds"),
               "--test-data", str(trained / "test.fvds"),
               "--patterns", "1:1,1:3,1:15", "--frames-list", "8",
               "--budget", "32", "--epochs", "1", "--seed", "5",
               "--expensive", str(trained / "exp"), "--cheap", str(trained / "cheap")])
    assert rc == EXIT_OK
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    assert lines[0] == "pattern,frames,clips,gflops,top1"
    # 1:15 is infeasible at 4 clips and must be logged, not emitted
    assert len(lines) == 3
    assert "infeasible" in captured.err
    costs = [float(l.split(",")[3]) for l in lines[1:]]
    assert costs == sorted(costs)


def test_sweep_plot_written(trained, tmp_path, capsys):
    fig = tmp_path / "pareto.png"
    rc = main(["sweep", "--data", str(trained / "train.fvds"),
               "--test-data", str(trained / "test.fvds"),
               "--patterns", "1:1", "--frames-list", "8",
               "--budget", "32", "--epochs", "1", "--seed", "5",
               "--expensive", str(trained / "exp"), "--cheap", str(trained / "cheap"),
               "--plot", str(fig)])
    assert rc == EXIT_OK
    capsys.readouterr()
    assert fig.exists() and fig.stat().st_size > 1000


def test_gradcheck_single_op(capsys):
    rc = main(["gradcheck", "--op", "dense", "--seeds", "2"])
    assert rc == EXIT_OK
    assert "gradcheck dense: pass" in capsys.readouterr().err


def test_gradcheck_unknown_op(capsys):
    rc = main(["gradcheck", "--op", "quantum"])
    assert rc == EXIT_CONFIG


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fasterlab.cli",
                           "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
