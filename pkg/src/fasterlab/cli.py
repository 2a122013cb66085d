"""Command-line surface: gen, train, eval, flops, sweep, gradcheck.

Machine-readable CSV goes to stdout only; logs and the resolved-config echo
go to stderr. Train/eval runs additionally write the resolved config and a
metrics CSV next to the checkpoint. Exit codes: 2 config error, 3 data
error, 4 numeric failure.

A config file (INI-style ``key = value`` under a ``[section]`` named after
the command) supplies defaults; explicit command-line flags win over the
file, the file wins over built-ins.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .backbones import BackboneConfig
from .checkpoint import CheckpointError
from .datasets import (DatasetFormatError, DatasetTruncatedError, LabelRangeError,
                       generate, make_task, read_fvds, write_fvds)
from .flops import backbone_flops, schedule_flops
from .scheduler import parse_pattern
from .tensor import NumericError, ShapeError
from .trainer import (TrainConfig, aggregator_checkpoint, backbone_checkpoint,
                      evaluate_topk, load_model, save_model, train_aggregator,
                      train_backbone, write_metrics)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

PRESETS = {
    "faster16": {"frames": 16, "pattern": "1:7"},
    "faster32": {"frames": 32, "pattern": "1:1"},
}

FAMILY_ALIASES = {"r2d26": "r2d", "r2d": "r2d", "r21d50": "r21d", "r21d": "r21d"}


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def worker_threads() -> int:
    """Thread cap from FASTER_LAB_THREADS (default: logical cores)."""
    raw = os.environ.get("FASTER_LAB_THREADS", "")
    try:
        n = int(raw)
        if n >= 1:
            return n
    except ValueError:
        pass
    return os.cpu_count() or 1


def echo_config(command: str, resolved: dict, out_path: Path | None = None) -> None:
    lines = [f"[{command}]"] + [f"{k} = {resolved[k]}" for k in sorted(resolved)]
    text = "\n".join(lines)
    for line in lines:
        log(f"config: {line}")
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text + "\n", encoding="utf-8")


def overlay_config_file(args: argparse.Namespace, command: str) -> None:
    """Fill flags the user did not pass from the [command] section of --config."""
    if not getattr(args, "config", None):
        return
    parser = configparser.ConfigParser()
    read = parser.read(args.config, encoding="utf-8")
    if not read:
        raise ShapeError(f"config file not found: {args.config}")
    if not parser.has_section(command):
        return
    for key, value in parser.items(command):
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None and hasattr(args, attr):
            setattr(args, attr, value)


def _resolve(args, name, default, cast=str):
    value = getattr(args, name, None)
    if value is None:
        return default
    return cast(value)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    overlay_config_file(args, "gen")
    task = _resolve(args, "task", "order")
    n = _resolve(args, "n", 2000, int)
    seed = _resolve(args, "seed", 0, int)
    out = Path(_resolve(args, "out", "dataset.fvds"))
    overrides = {}
    if getattr(args, "frames", None) is not None:
        overrides["num_frames"] = int(args.frames)
    if getattr(args, "size", None) is not None:
        overrides["resolution"] = int(args.size)
    if getattr(args, "noise", None) is not None:
        overrides["noise"] = float(args.noise)
    if getattr(args, "slow_speed", None) is not None:
        overrides["slow_speed"] = float(args.slow_speed)
    if getattr(args, "fast_speed", None) is not None:
        overrides["fast_speed"] = float(args.fast_speed)
    spec = make_task(task, **overrides)
    resolved = {"task": task, "n": n, "seed": seed, "out": out, **asdict(spec)}
    echo_config("gen", resolved)
    log(f"gen: rendering {n} {task} videos "
        f"({spec.num_frames}x{spec.resolution}x{spec.resolution}), threads<={worker_threads()}")
    dataset = generate(spec, n, np.random.default_rng(seed))
    write_fvds(out, dataset)
    log(f"gen: wrote {out} ({out.stat().st_size / 1e6:.1f} MB)")
    return EXIT_OK


def _train_config_from_args(args, stage: str) -> TrainConfig:
    preset = getattr(args, "preset", None)
    frames = _resolve(args, "frames", None, int)
    pattern = getattr(args, "pattern", None)
    if preset:
        if preset not in PRESETS:
            raise ShapeError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        frames = frames or PRESETS[preset]["frames"]
        pattern = pattern or PRESETS[preset]["pattern"]
    family = FAMILY_ALIASES.get(_resolve(args, "backbone", "r2d"), None)
    if family is None:
        raise ShapeError(f"unknown backbone {args.backbone!r}; choose r2d26 or r21d50")
    return TrainConfig(
        stage=stage,
        epochs=_resolve(args, "epochs", 10, int),
        batch_size=_resolve(args, "batch_size", 32, int),
        base_lr=_resolve(args, "lr", 0.01, float),
        momentum=_resolve(args, "momentum", 0.9, float),
        weight_decay=_resolve(args, "weight_decay", 1e-4, float),
        seed=_resolve(args, "seed", 0, int),
        clip_len=frames or 8,
        num_clips=_resolve(args, "clips", 8, int),
        pattern=pattern or "1:7",
        method=_resolve(args, "method", "fast-gru"),
        family=family,
        resolution=_resolve(args, "size", 32, int),
        channel_scale=_resolve(args, "channel_scale", 1.0 / 16, float),
        num_classes=_resolve(args, "classes", 2, int),
        feature_cache=bool(getattr(args, "feature_cache", False)),
    )


def cmd_train(args) -> int:
    overlay_config_file(args, "train")
    stage = _resolve(args, "stage", "backbone")
    config = _train_config_from_args(args, stage)
    out_dir = Path(_resolve(args, "out", "run"))
    data_path = _resolve(args, "data", None)
    if data_path is None:
        raise ShapeError("train: --data is required")
    dataset = read_fvds(data_path, expected_classes=config.num_classes)
    echo_config("train", {**asdict(config), "data": data_path, "out": out_dir},
                out_dir / "config_resolved.cfg")
    if stage == "backbone":
        net, rows = train_backbone(config, dataset, progress=log)
        ckpt = backbone_checkpoint(net, config, epoch=config.epochs)
    else:
        exp_path = getattr(args, "expensive", None)
        cheap_path = getattr(args, "cheap", None)
        if not exp_path or not cheap_path:
            raise ShapeError("train --stage aggregator needs --expensive and --cheap checkpoints")
        expensive = _load_backbone(exp_path)
        cheap = _load_backbone(cheap_path)
        model, rows = train_aggregator(config, expensive, cheap, dataset, progress=log)
        ckpt = aggregator_checkpoint(model, epoch=config.epochs)
    save_model(out_dir / "checkpoint", ckpt)
    write_metrics(out_dir / "metrics.csv", rows)
    log(f"train: checkpoint + metrics written under {out_dir}")
    return EXIT_OK


def _load_backbone(path):
    model = load_model(path if (Path(path) / "manifest.json").exists()
                       else Path(path) / "checkpoint")
    from .backbones import Backbone
    if not isinstance(model, Backbone):
        raise ShapeError(f"{path}: expected a backbone checkpoint")
    return model


def cmd_eval(args) -> int:
    overlay_config_file(args, "eval")
    ckpt_path = _resolve(args, "ckpt", None)
    data_path = _resolve(args, "data", None)
    if ckpt_path is None or data_path is None:
        raise ShapeError("eval: --ckpt and --data are required")
    k = _resolve(args, "topk", 1, int)
    model = load_model(ckpt_path if (Path(ckpt_path) / "manifest.json").exists()
                       else Path(ckpt_path) / "checkpoint")
    from .trainer import AggregatorModel
    if not isinstance(model, AggregatorModel):
        raise ShapeError("eval expects an aggregator checkpoint")
    dataset = read_fvds(data_path, expected_classes=model.config.num_classes)
    schedule = model.schedule
    if getattr(args, "pattern", None) or getattr(args, "clips", None):
        clips = _resolve(args, "clips", schedule.num_clips, int)
        pattern = getattr(args, "pattern", None) or model.config.pattern
        schedule = parse_pattern(pattern, clips, schedule.frames_per_clip)
    echo_config("eval", {"ckpt": ckpt_path, "data": data_path, "topk": k,
                         "pattern": schedule.ratio, "clips": schedule.num_clips,
                         "frames": schedule.frames_per_clip})
    acc = evaluate_topk(model, dataset, k=k, schedule=schedule)
    print(f"top{k},{acc:.6f}")
    log(f"eval: top-{k} accuracy {acc:.4f} over {len(dataset)} videos")
    return EXIT_OK


def _full_spec_config(family: str, frames: int, resolution: int) -> BackboneConfig:
    return BackboneConfig(family=family, preset="full", clip_len=frames,
                          resolution=resolution)


def cmd_flops(args) -> int:
    overlay_config_file(args, "flops")
    frames = _resolve(args, "frames", 8, int)
    resolution = _resolve(args, "resolution", 224, int)
    pattern = getattr(args, "pattern", None)
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise ShapeError(f"unknown preset {preset!r}")
        frames = PRESETS[preset]["frames"] if args.frames is None else frames
        pattern = pattern or PRESETS[preset]["pattern"]

    if pattern is None:
        family = FAMILY_ALIASES.get(_resolve(args, "backbone", "r21d50"))
        if family is None:
            raise ShapeError(f"unknown backbone {args.backbone!r}")
        report = backbone_flops(_full_spec_config(family, frames, resolution))
        echo_config("flops", {"backbone": family, "frames": frames,
                              "resolution": resolution})
    else:
        clips = _resolve(args, "clips", 256 // frames, int)
        method = _resolve(args, "method", "fast-gru")
        schedule = parse_pattern(pattern, clips, frames)
        exp = backbone_flops(_full_spec_config("r21d", frames, resolution)).total_macs
        cheap = backbone_flops(_full_spec_config("r2d", frames, resolution)).total_macs
        feature_shape = (frames // 8, 7, 7, 2048)
        report = schedule_flops(schedule, method, exp, cheap, feature_shape)
        echo_config("flops", {"pattern": schedule.ratio, "frames": frames,
                              "clips": clips, "method": method,
                              "resolution": resolution})
    sys.stdout.write(report.to_csv())
    plot = getattr(args, "plot", None)
    if plot:
        from .plotting import save_cost_breakdown
        save_cost_breakdown(report, plot)
        log(f"flops: figure written to {plot}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    overlay_config_file(args, "sweep")
    data_path = _resolve(args, "data", None)
    test_path = _resolve(args, "test_data", None)
    if data_path is None or test_path is None:
        raise ShapeError("sweep: --data and --test-data are required")
    patterns = [p.strip() for p in _resolve(args, "patterns", "1:1,1:3,1:7").split(",")]
    frames_list = [int(f) for f in str(_resolve(args, "frames_list", "8")).split(",")]
    budget = _resolve(args, "budget", 64, int)
    epochs = _resolve(args, "epochs", 10, int)
    seed = _resolve(args, "seed", 0, int)
    exp_path = getattr(args, "expensive", None)
    cheap_path = getattr(args, "cheap", None)
    train_inline = bool(getattr(args, "train_inline", False))
    if not train_inline and (not exp_path or not cheap_path):
        raise ShapeError("sweep needs --expensive/--cheap checkpoints or --train-inline")
    echo_config("sweep", {"data": data_path, "test_data": test_path,
                          "patterns": ",".join(patterns),
                          "frames_list": ",".join(map(str, frames_list)),
                          "budget": budget, "epochs": epochs, "seed": seed,
                          "train_inline": train_inline})

    train_set = read_fvds(data_path)
    test_set = read_fvds(test_path)
    rows = []
    for frames in frames_list:
        if budget % frames:
            log(f"sweep: skipping frames={frames} (budget {budget} not divisible)")
            continue
        clips = budget // frames
        backbones = {}
        for fam, path in (("r21d", exp_path), ("r2d", cheap_path)):
            if path:
                backbones[fam] = _load_backbone(path)
                if backbones[fam].config.clip_len != frames:
                    log(f"sweep: skipping frames={frames}: checkpoint {path} was "
                        f"trained at clip length {backbones[fam].config.clip_len}")
                    backbones = None
                    break
            else:
                cfg = TrainConfig(stage="backbone", epochs=epochs, family=fam,
                                  num_classes=train_set.num_classes, seed=seed,
                                  clip_len=frames, base_lr=0.01)
                log(f"sweep: inline-training {fam} backbone (L={frames})")
                backbones[fam], _ = train_backbone(cfg, train_set, progress=log)
        if backbones is None:
            continue
        for pattern in patterns:
            try:
                schedule = parse_pattern(pattern, clips, frames)
            except ShapeError as exc:
                log(f"sweep: skipping infeasible combo pattern={pattern} "
                    f"frames={frames} clips={clips}: {exc}")
                continue
            cfg = TrainConfig(stage="aggregator", epochs=epochs, seed=seed,
                              clip_len=frames, num_clips=clips, pattern=pattern,
                              method=_resolve(args, "method", "fast-gru"),
                              num_classes=train_set.num_classes,
                              base_lr=0.05, feature_cache=True)
            log(f"sweep: training aggregator pattern={pattern} L={frames} N={clips}")
            model, _ = train_aggregator(cfg, backbones["r21d"], backbones["r2d"],
                                        train_set, progress=log)
            top1 = evaluate_topk(model, test_set)
            exp_macs = backbone_flops(backbones["r21d"].config,
                                      include_head=False).total_macs
            cheap_macs = backbone_flops(backbones["r2d"].config,
                                        include_head=False).total_macs
            feat_shape = tuple(model.expensive.features(
                _probe_clip(model.expensive), mode="eval").shape[1:])
            cost = schedule_flops(schedule, cfg.method, exp_macs, cheap_macs,
                                  feat_shape, num_classes=train_set.num_classes)
            rows.append((pattern, frames, clips, cost.total_gflops, top1))

    rows.sort(key=lambda r: r[3])
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["pattern", "frames", "clips", "gflops", "top1"])
    for pattern, frames, clips, gflops, top1 in rows:
        writer.writerow([pattern, frames, clips, f"{gflops:.6f}", f"{top1:.6f}"])
    plot = getattr(args, "plot", None)
    if plot:
        from .plotting import save_pareto_plot
        save_pareto_plot(rows, plot)
        log(f"sweep: figure written to {plot}")
    return EXIT_OK


def _probe_clip(net):
    cfg = net.config
    return T.Tensor(np.zeros((1, cfg.clip_len, cfg.resolution, cfg.resolution, 3),
                             dtype=np.float32))


def cmd_gradcheck(args) -> int:
    overlay_config_file(args, "gradcheck")
    seeds = _resolve(args, "seeds", 3, int)
    which = "all" if getattr(args, "all", False) else _resolve(args, "op", "all")
    echo_config("gradcheck", {"op": which, "seeds": seeds})
    from .gradsuite import run_gradient_suite
    failures = run_gradient_suite(which, seeds, log)
    if failures:
        for name, report in failures:
            log(f"gradcheck FAIL {name}: {report}")
        raise NumericError(f"{len(failures)} gradient checks failed")
    log("gradcheck: all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fasterlab",
        description="Recurrent aggregation of mixed expensive/cheap clip features")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic video dataset")
    p.add_argument("--task", choices=["order", "speed"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--slow-speed", type=float, dest="slow_speed")
    p.add_argument("--fast-speed", type=float, dest="fast_speed")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a backbone or an aggregator")
    p.add_argument("--stage", choices=["backbone", "aggregator"])
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--backbone", help="r2d26 or r21d50 (backbone stage)")
    p.add_argument("--method", help="fast-gru|gru|lstm|concat|avg-pool")
    p.add_argument("--pattern")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--expensive", help="expensive backbone checkpoint dir")
    p.add_argument("--cheap", help="cheap backbone checkpoint dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--clips", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--channel-scale", type=float, dest="channel_scale")
    p.add_argument("--feature-cache", action="store_true", dest="feature_cache")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate an aggregator checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--topk", type=int)
    p.add_argument("--pattern")
    p.add_argument("--clips", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic cost of a backbone or schedule")
    p.add_argument("--backbone", help="r2d26 or r21d50")
    p.add_argument("--frames", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--pattern", help="1:x, all-e or all-c (schedule mode)")
    p.add_argument("--clips", type=int)
    p.add_argument("--method")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--plot", help="write a per-layer cost figure to this file")
    p.add_argument("--config")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("sweep", help="accuracy-vs-cost frontier over schedules")
    p.add_argument("--data")
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--patterns", help="comma-separated, e.g. 1:1,1:3,all-c")
    p.add_argument("--frames-list", dest="frames_list", help="comma-separated clip lengths")
    p.add_argument("--budget", type=int, help="frames per video budget (L*N)")
    p.add_argument("--method")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--expensive")
    p.add_argument("--cheap")
    p.add_argument("--train-inline", action="store_true", dest="train_inline")
    p.add_argument("--plot", help="write an accuracy-vs-gflops figure to this file")
    p.add_argument("--config")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all ops")
    p.add_argument("--all", action="store_true")
    p.add_argument("--op")
    p.add_argument("--seeds", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ShapeError, configparser.Error) as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except (DatasetFormatError, DatasetTruncatedError, LabelRangeError,
            CheckpointError, FileNotFoundError) as exc:
        log(f"data error: {exc}")
        return EXIT_DATA
    except NumericError as exc:
        log(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
