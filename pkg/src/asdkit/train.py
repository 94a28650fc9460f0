"""Curriculum training: single-candidate stage, then multi-candidate stage.

Stage 1 trains the encoders and prediction heads on one randomly chosen
candidate per scene with the full three-term objective. Stage 2 continues
from a stage-1 checkpoint, samples up to ``max_candidates`` candidates per
scene, routes them through the contextual forward, and drops the auxiliary
audio term (the audio head is frozen). All random draws come from one
seeded generator, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, TrainConfig
from .features import augment_track_crops, collate, featurize_scene
from .ingest import Scene
from .losses import compute_losses
from .relational import SpeakerContextModel

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingDiverged",
    "TrainResult",
    "augment_track_crops",
    "init_params",
    "load_checkpoint",
    "sample_segment",
    "save_checkpoint",
    "train_stage",
]


class TrainingDiverged(RuntimeError):
    """Raised when the objective becomes non-finite."""


def sample_segment(scene: Scene, rng: np.random.Generator, segment_frames: int = 28) -> np.ndarray:
    """Frame indices of a uniformly random contiguous training segment.

    Scenes shorter than the segment are replicate-padded by repeating the
    final frame index.
    """
    if scene.n_frames < 1:
        raise ValueError("empty scene")
    if scene.n_frames <= segment_frames:
        idx = np.arange(segment_frames)
        return np.minimum(idx, scene.n_frames - 1)
    start = int(rng.integers(0, scene.n_frames - segment_frames + 1))
    return np.arange(start, start + segment_frames)


def _he_init_tensor(w: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    with torch.no_grad():
        w.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=generator)


def init_params(model: nn.Module, seed: int = 0) -> nn.Module:
    """Fan-in-scaled normal weights, zero biases, reset normalization layers."""
    g = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, (nn.Conv1d, nn.Conv2d, nn.Conv3d, nn.Linear)):
            fan_in = module.weight.shape[1] * int(np.prod(module.weight.shape[2:] or (1,)))
            _he_init_tensor(module.weight, fan_in, g)
            if module.bias is not None:
                with torch.no_grad():
                    module.bias.zero_()
        elif isinstance(module, nn.GRU):
            for name, param in module.named_parameters():
                if name.startswith("weight"):
                    _he_init_tensor(param, param.shape[1], g)
                else:
                    with torch.no_grad():
                        param.zero_()
        elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d)):
            module.reset_parameters()
            module.reset_running_stats()
    return model


def save_checkpoint(
    path: str | Path,
    model: SpeakerContextModel,
    model_config: ModelConfig,
    stage: int,
    optimizer: torch.optim.Optimizer | None = None,
    rng_state: dict | None = None,
    epoch: int | None = None,
    step: int | None = None,
) -> None:
    """Single archive: parameter tensors keyed by module path plus the config JSON."""
    payload = {
        "model_state": model.state_dict(),
        "model_config": model_config.to_json(),
        "stage": stage,
    }
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    if rng_state is not None:
        payload["rng_state"] = json.dumps(rng_state, default=_jsonify)
    if epoch is not None:
        payload["epoch"] = epoch
    if step is not None:
        payload["step"] = step
    torch.save(payload, str(path))


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_checkpoint(path: str | Path) -> tuple[SpeakerContextModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, info).

    ``info`` carries stage, epoch, optimizer and rng states when present.
    """
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    config = ModelConfig.from_json(payload["model_config"])
    model = SpeakerContextModel(config)
    model.load_state_dict(payload["model_state"])
    info = {
        "stage": payload.get("stage"),
        "epoch": payload.get("epoch"),
        "step": payload.get("step"),
        "optimizer_state": payload.get("optimizer_state"),
        "model_config": config,
    }
    if "rng_state" in payload:
        info["rng_state"] = json.loads(payload["rng_state"])
    return model, info


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    final_loss: float = float("nan")

    @property
    def first_loss(self) -> float:
        return self.history[0]["total"] if self.history else float("nan")

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.history:
            by_epoch.setdefault(row["epoch"], []).append(row["total"])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def _restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.Philox())
    bg_state = json.loads(json.dumps(state)) if not isinstance(state, dict) else state
    fixed = dict(bg_state)
    inner = dict(fixed["state"])
    inner["counter"] = np.array(inner["counter"], dtype=np.uint64)
    inner["key"] = np.array(inner["key"], dtype=np.uint64)
    fixed["state"] = inner
    if "buffer" in fixed:
        fixed["buffer"] = np.array(fixed["buffer"], dtype=np.uint64)
    gen.bit_generator.state = fixed
    return gen


def train_stage(
    model: SpeakerContextModel,
    scenes: list[Scene],
    config: TrainConfig,
    model_config: ModelConfig,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    resume: dict | None = None,
) -> TrainResult:
    """Run one curriculum stage over the scenes.

    Every epoch draws one random segment per scene (so the epoch size
    tracks the number of scenes), groups examples by candidate count to
    keep tensors rectangular, and takes one decoupled-weight-decay
    adaptive-moments step per batch. Raises :class:`TrainingDiverged` on a
    non-finite loss. A per-step CSV log is written when ``log_path`` is
    given, and a resumable checkpoint after every epoch when
    ``checkpoint_path`` is given.
    """
    config.validate()
    stage = config.stage
    contextual = stage == 2
    model.train()

    if stage == 2:
        for p in model.audio_head.parameters():
            p.requires_grad_(False)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        params, lr=config.learning_rate, betas=tuple(config.betas), weight_decay=config.weight_decay
    )
    start_epoch = 0
    step = 0
    if resume is not None:
        optimizer.load_state_dict(resume["optimizer_state"])
        rng = _restore_rng(resume["rng_state"])
        start_epoch = int(resume["epoch"]) + 1
        step = int(resume.get("step") or 0)
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, stage])))

    result = TrainResult()
    log_file = open(log_path, "w") if log_path else None
    if log_file:
        log_file.write("step,epoch,l_a,l_v,l_av,total\n")

    try:
        for epoch in range(start_epoch, config.epochs):
            examples = []
            for scene_idx in rng.permutation(len(scenes)):
                scene = scenes[scene_idx]
                if scene.n_frames < 1 or not scene.tracks:
                    logger.warning("skipping empty scene %s", scene.scene_id)
                    continue
                frames = sample_segment(scene, rng, config.segment_frames)
                n = len(scene.tracks)
                if stage == 1:
                    chosen = [int(rng.integers(n))]
                else:
                    k = min(n, config.max_candidates)
                    chosen = sorted(int(c) for c in rng.choice(n, size=k, replace=False))
                examples.append((scene, frames, chosen))

            by_count: dict[int, list] = {}
            for ex in examples:
                by_count.setdefault(len(ex[2]), []).append(ex)

            for n_cand in sorted(by_count):
                group = by_count[n_cand]
                for lo in range(0, len(group), config.batch_scenes):
                    chunk = group[lo : lo + config.batch_scenes]
                    tensors = [
                        featurize_scene(
                            scene,
                            model_config,
                            frame_indices=frames,
                            candidates=chosen,
                            train_config=config if config.augment else None,
                            rng=rng,
                            need_maps=model_config.spatial and contextual,
                        )
                        for scene, frames, chosen in chunk
                    ]
                    batch = collate(tensors)
                    outputs = model(batch, contextual=contextual)
                    losses = compute_losses(outputs, batch, stage)
                    total = losses.total
                    if not torch.isfinite(total):
                        raise TrainingDiverged(
                            f"non-finite loss at stage {stage} epoch {epoch} step {step}"
                        )
                    optimizer.zero_grad()
                    total.backward()
                    optimizer.step()

                    row = {"step": step, "epoch": epoch, **losses.detach_floats()}
                    result.history.append(row)
                    if log_file:
                        log_file.write(
                            f"{step},{epoch},{row['l_a']:.6f},{row['l_v']:.6f},"
                            f"{row['l_av']:.6f},{row['total']:.6f}\n"
                        )
                    step += 1

            if checkpoint_path is not None:
                save_checkpoint(
                    checkpoint_path,
                    model,
                    model_config,
                    stage,
                    optimizer=optimizer,
                    rng_state=rng.bit_generator.state,
                    epoch=epoch,
                    step=step,
                )
    finally:
        if log_file:
            log_file.close()

    result.final_loss = result.history[-1]["total"] if result.history else float("nan")
    model.eval()
    return result
