"""Command-line surface: prepare, synth, train, eval.

Every command writes a manifest (command, arguments, seed, content hash of
its inputs) into its output directory, sufficient to reproduce the run.
Exit codes: 0 success, 2 usage or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import scene_io
from .config import ModelConfig, SynthConfig, TrainConfig
from .evaluate import desync_sweep_shifts, evaluate_model
from .ingest import parse_annotations
from .prepare import assemble_scenes
from .synth import generate_dataset
from .train import TrainingDiverged, init_params, load_checkpoint, save_checkpoint, train_stage

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(ValueError):
    pass


def num_workers() -> int:
    """Worker pool size for data preparation, from UNICON_NUM_WORKERS."""
    raw = os.environ.get("UNICON_NUM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer UNICON_NUM_WORKERS=%r", raw)
        return 1


def content_hash(*paths: str | Path) -> str:
    """Deterministic sha256 over the given files/directories (path + bytes)."""
    digest = hashlib.sha256()
    for path in paths:
        path = Path(path)
        if path.is_dir():
            files = sorted(p for p in path.rglob("*") if p.is_file())
        elif path.is_file():
            files = [path]
        else:
            continue
        base = path if path.is_dir() else path.parent
        for f in files:
            digest.update(str(f.relative_to(base)).encode())
            digest.update(f.read_bytes())
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, args: dict, seed: int | None, inputs: dict) -> None:
    manifest = {
        "command": command,
        "args": {
            k: str(v) if isinstance(v, Path) else v
            for k, v in args.items()
            if k not in ("func", "command") and not callable(v)
        },
        "seed": seed,
        "input_hashes": inputs,
        "output_dir": str(out_dir),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_config(cls, path: str | None, **overrides):
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        cfg = cls.from_json(p.read_text())
    else:
        cfg = cls()
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = _load_config(SynthConfig, args.config, seed=args.seed, n_scenes=args.n_scenes)
    out = Path(args.out)
    scenes = generate_dataset(cfg)
    scene_io.save_dataset(scenes, out, workers=num_workers())
    (out / "synth_config.json").write_text(cfg.to_json())
    write_manifest(out, "synth", vars(args), cfg.seed, {"config": content_hash(args.config)} if args.config else {})
    n_tracks = sum(len(s.tracks) for s in scenes)
    n_frames = sum(s.n_frames for s in scenes)
    print(f"wrote {len(scenes)} scenes ({n_tracks} tracks, {n_frames} frames) to {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    ann_path = Path(args.annotations)
    media_dir = Path(args.media_dir)
    if not ann_path.exists():
        raise UsageError(f"annotations not found: {ann_path}")
    if not media_dir.is_dir():
        raise UsageError(f"media directory not found: {media_dir}")
    records = parse_annotations(ann_path.read_text())
    if not records:
        raise UsageError("no records parsed from annotations")
    scenes = assemble_scenes(records, media_dir)
    out = Path(args.out)
    scene_io.save_dataset(scenes, out, workers=num_workers())
    write_manifest(
        out,
        "prepare",
        vars(args),
        None,
        {"annotations": content_hash(ann_path), "media": content_hash(media_dir)},
    )
    n_tracks = sum(len(s.tracks) for s in scenes)
    n_frames = sum(s.n_frames for s in scenes)
    print(f"prepared {len(scenes)} scenes ({n_tracks} tracks, {n_frames} frames) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"data directory not found: {data_dir}")
    train_cfg = _load_config(TrainConfig, args.config, seed=args.seed, stage=args.stage, epochs=args.epochs)

    if train_cfg.stage == 2:
        if args.init_from is None:
            raise UsageError("stage 2 requires --init-from with a stage-1 checkpoint")
        model, info = load_checkpoint(args.init_from)
        model_config = info["model_config"]
        if args.ablation or args.suppression:
            raise UsageError("ablation/suppression are fixed by the stage-1 checkpoint")
    else:
        if args.model_config:
            model_config = _load_config(ModelConfig, args.model_config)
        else:
            model_config = ModelConfig()
        if args.ablation is not None:
            model_config = ModelConfig.for_ablation(args.ablation, model_config)
        if args.suppression is not None:
            model_config.relational.suppression = args.suppression
        model_config.validate()
        from .relational import SpeakerContextModel

        model = SpeakerContextModel(model_config)
        init_params(model, seed=train_cfg.seed)

    scenes = scene_io.load_dataset(data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_stage(
        model,
        scenes,
        train_cfg,
        model_config,
        checkpoint_path=out / "checkpoint.pt",
        log_path=out / "train_log.csv",
    )
    (out / "model_config.json").write_text(model_config.to_json())
    (out / "train_config.json").write_text(train_cfg.to_json())
    write_manifest(out, "train", vars(args), train_cfg.seed, {"data": content_hash(data_dir)})
    print(
        f"stage {train_cfg.stage} done: {len(result.history)} steps, "
        f"loss {result.first_loss:.4f} -> {result.final_loss:.4f}; checkpoint at {out/'checkpoint.pt'}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    data_dir = Path(args.data)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    if not data_dir.is_dir():
        raise UsageError(f"data directory not found: {data_dir}")
    model, info = load_checkpoint(ckpt)
    model_config = info["model_config"]
    scenes = scene_io.load_dataset(data_dir)
    shifts = desync_sweep_shifts(args.desync) if args.desync else ()
    report, scored = evaluate_model(
        model,
        scenes,
        model_config,
        max_frames=args.max_frames,
        visual_only=args.visual_only,
        smooth_window=args.smooth,
        desync_shifts=shifts,
        threshold=args.threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "predictions.csv", "w") as fh:
        fh.write("scene_id,entity_id,frame_index,score\n")
        for s in scored:
            fh.write(f"{s.scene_id},{s.entity_id},{s.frame_index},{s.score:.6f}\n")
    if args.dump_headmaps:
        _dump_headmaps(scenes[0], out / "headmaps")
    if args.plots:
        from . import plots

        plots.pr_curve(scored, out / "pr_curve.png")
        plots.breakdown_bars(report, out / "breakdown.png")
        if report.desync_map:
            plots.desync_curve(report, out / "desync.png")
    write_manifest(
        out, "eval", vars(args), None,
        {"checkpoint": content_hash(ckpt), "data": content_hash(data_dir)},
    )
    summary = {"map": report.map, "auroc": report.auroc, "f1": report.f1, "der": report.der}
    print(f"evaluated {len(scenes)} scenes: " + json.dumps(summary))
    return EXIT_OK


def _dump_headmaps(scene, out_dir: Path, max_frames: int = 8) -> None:
    from PIL import Image

    from .features import featurize_scene

    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = featurize_scene(scene, ModelConfig(), need_maps=True)
    maps = tensors.self_maps.numpy()
    for k, eid in enumerate(tensors.entity_ids):
        for t in range(0, min(max_frames, maps.shape[1])):
            img = (maps[k, t].transpose(1, 2, 0) * 255).astype("uint8")
            Image.fromarray(img).save(out_dir / f"{eid}_f{t:04d}.png")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asdkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--config", help="SynthConfig JSON path")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-scenes", type=int, dest="n_scenes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="assemble scenes from annotations + media")
    p.add_argument("--annotations", required=True)
    p.add_argument("--media-dir", required=True, dest="media_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one curriculum stage")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--epochs", type=int)
    p.add_argument("--config", help="TrainConfig JSON path")
    p.add_argument("--model-config", dest="model_config", help="ModelConfig JSON path")
    p.add_argument("--init-from", dest="init_from", help="checkpoint to continue from (stage 2)")
    p.add_argument("--ablation", help="e.g. '+S+R+T', '+T', 'baseline'")
    p.add_argument("--suppression", choices=("none", "mean", "max"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--desync", type=int, default=0, help="sweep audio shifts up to +-K frames")
    p.add_argument("--smooth", type=int, help="Wiener-smooth scores over this window")
    p.add_argument("--visual-only", action="store_true", dest="visual_only")
    p.add_argument("--plots", action="store_true")
    p.add_argument("--dump-headmaps", action="store_true", dest="dump_headmaps")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-frames", type=int, default=256, dest="max_frames")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
