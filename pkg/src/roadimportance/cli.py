"""Command-line entry point: ``roadimportance <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import cv2
import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .config import (PRESETS, ConfigError, RunConfig, apply_overrides, load_run_config, model_config_from_dict,
                     to_dict)
from .data.clips import clip_end_frames, sample_clip
from .data.records import DatasetFormatError, load_dataset, load_scene
from .data.synthetic import SyntheticConfig, generate_synthetic
from .evaluate import evaluate, evaluation_clips, score_objects
from .overlay import render_overlay
from .train import TrainingDiverged, train, training_clips

log = logging.getLogger("roadimportance")


def _parse_set(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _run_config(args) -> RunConfig:
    run = load_run_config(getattr(args, "config", None))
    overrides = _parse_set(getattr(args, "set", None))
    if overrides:
        apply_overrides(run, overrides)
        run.model.validate()
    return run


def _train_and_save(run: RunConfig, data: Path, out: Path, preset: str | None = None):
    model_cfg = run.model
    if preset is not None:
        model_cfg = model_config_from_dict(to_dict(run.model))
        apply_overrides(model_cfg, PRESETS[preset])
        model_cfg.validate()
    train_scenes = load_dataset(data, "train")
    test_scenes = load_dataset(data, "test")
    clips = training_clips(train_scenes, model_cfg, run.train_stride, run.hflip)
    val = evaluation_clips(test_scenes, model_cfg.clip_len, model_cfg.image_size, run.eval_stride,
                           model_cfg.mean, model_cfg.std) if test_scenes else None
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    ckpt = train(clips, model_cfg, run.train, val_clips=val, log_path=out / "train_log.csv")
    ckpt.save(out / "checkpoint.npz")
    log.info("trained %d clips for %d epochs in %.1fs", len(clips), ckpt.epoch, time.perf_counter() - start)
    return ckpt, test_scenes


def cmd_make_synthetic(args) -> int:
    run = _run_config(args)
    fields = dict(run.synthetic)
    if args.seed is not None:
        fields["seed"] = args.seed
    root = generate_synthetic(SyntheticConfig(**fields), args.out)
    print(root)
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    ckpt, _ = _train_and_save(run, Path(args.data), Path(args.out))
    last = ckpt.history[-1] if ckpt.history else {}
    print(json.dumps({"checkpoint": str(Path(args.out) / "checkpoint.npz"), **last}))
    return 0


def _write_report(report, path: Path) -> None:
    report.save(path)
    report.write_pr_csv(path.with_name(path.stem + "_pr.csv"))


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    scenes = load_dataset(args.data, args.split)
    report = evaluate(ckpt, scenes, stride=args.stride, threshold=args.threshold)
    _write_report(report, Path(args.report))
    print(report.summary())
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = ckpt.model_config
    scene = load_scene(args.clip)
    if args.t_end is not None:
        t_end = args.t_end
    else:
        ends = clip_end_frames(scene, cfg.clip_len, 1)
        if not ends:
            raise DatasetFormatError(f"{scene.scene_id}: no annotated frame leaves {cfg.clip_len} frames of history")
        t_end = ends[-1]
    clip = sample_clip(scene, t_end, cfg.clip_len, cfg.image_size, cfg.mean, cfg.std)
    model = ckpt.build_model().eval()
    objects = score_objects(model, [clip])

    frame = cv2.cvtColor(cv2.imread(str(scene.frames[t_end]), cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)
    h, w = frame.shape[:2]
    scale = np.array([w, h, w, h], np.float64) / cfg.image_size
    boxes = clip.boxes[:, -1].astype(np.float64) * scale
    scores = [o.score for o in objects]
    p_c = [o.p_c for o in objects] if objects and objects[0].p_c is not None else None
    out_dir = Path(args.overlay_dir)
    stem = f"{scene.scene_id}_{t_end:06d}"
    png = render_overlay(frame, boxes, scores, out_dir / f"{stem}.png", args.threshold, p_c, cfg.trg.alpha)
    gates = {str(o.track_id): {"score": o.score, "p": o.p, "p_c": o.p_c} for o in objects}
    (out_dir / f"{stem}_gates.json").write_text(json.dumps(gates, indent=1, sort_keys=True))
    print(png)
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    out = Path(args.out)
    rows = {}
    for preset in args.preset:
        ckpt, test_scenes = _train_and_save(run, Path(args.data), out / preset, preset)
        report = evaluate(ckpt, test_scenes, stride=run.eval_stride)
        _write_report(report, out / preset / "report.json")
        rows[preset] = {"AP": report.ap, "F1": report.f1, "Acc": report.acc}
        print(f"{preset:16s} {report.summary()}")
    (out / "ablation.json").write_text(json.dumps(rows, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadimportance", description="On-road object importance estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted override, e.g. model.disg.b=2.0 or train.epochs=5")

    p = sub.add_parser("make-synthetic", help="render a synthetic dataset with rule-derived labels")
    config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="train on the train split, log per-epoch test metrics")
    config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for checkpoint.npz and train_log.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and write a JSON report plus PR-curve CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score one scene and draw an overlay")
    p.add_argument("--clip", required=True, help="scene directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--overlay-dir", required=True)
    p.add_argument("--t-end", type=int, help="final frame (default: last annotated frame)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and evaluate ablation presets")
    config_args(p)
    p.add_argument("--preset", nargs="+", required=True, choices=sorted(PRESETS))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, CheckpointError, TrainingDiverged, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
