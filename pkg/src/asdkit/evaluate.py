"""Model scoring over scenes and report assembly.

Long scenes are split into fixed-size chunks, per-frame probabilities are
re-assembled per entity, optionally Wiener-smoothed, and pooled into
scored frames for the metric stack.
"""

from __future__ import annotations

import numpy as np
import torch

from .config import ModelConfig
from .features import collate, featurize_scene
from .ingest import Scene, chunk_for_inference
from .metrics import EvalReport, ScoredFrame, evaluate_scored_frames, smooth_predictions
from .relational import SpeakerContextModel
from .synth import desync

DEFAULT_MAX_FRAMES = 256


def score_scene(
    model: SpeakerContextModel,
    scene: Scene,
    model_config: ModelConfig,
    max_frames: int = DEFAULT_MAX_FRAMES,
    visual_only: bool = False,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-entity (frame_indices, scores) for one scene."""
    model.eval()
    collected: dict[str, list[tuple[int, float]]] = {}
    for chunk in chunk_for_inference(scene, max_frames):
        if not chunk.tracks:
            continue
        tensors = featurize_scene(chunk, model_config)
        batch = collate([tensors])
        with torch.inference_mode():
            if visual_only:
                probs = model.predict_visual_only(batch)[0]
            else:
                probs = model.predict(batch)[0]
        presence = tensors.presence.numpy()
        for k, eid in enumerate(tensors.entity_ids):
            frames = np.nonzero(presence[k])[0]
            for t in frames:
                collected.setdefault(eid, []).append(
                    (int(t) + chunk.frame_offset, float(probs[k, t]))
                )
    out = {}
    for eid, items in collected.items():
        items.sort()
        frames = np.array([f for f, _ in items], dtype=np.int64)
        scores = np.array([s for _, s in items], dtype=np.float64)
        out[eid] = (frames, scores)
    return out


def scored_frames_for_scenes(
    model: SpeakerContextModel,
    scenes: list[Scene],
    model_config: ModelConfig,
    max_frames: int = DEFAULT_MAX_FRAMES,
    visual_only: bool = False,
    smooth_window: int | None = None,
) -> list[ScoredFrame]:
    """Pool every scene's per-frame probabilities into scored frames."""
    scored: list[ScoredFrame] = []
    for scene in scenes:
        per_entity = score_scene(model, scene, model_config, max_frames, visual_only)
        faces_per_frame = np.array([scene.faces_in_frame(t) for t in range(scene.n_frames)])
        frame_w = scene.frame_size[0]
        for track in scene.tracks:
            if track.entity_id not in per_entity:
                continue
            frames, scores = per_entity[track.entity_id]
            if smooth_window is not None:
                scores = smooth_predictions(scores, smooth_window)
            local = frames - track.first_frame
            widths_px = (track.boxes[local, 2] - track.boxes[local, 0]) * frame_w
            for f, s, w in zip(frames, scores, widths_px):
                li = int(f) - track.first_frame
                scored.append(
                    ScoredFrame(
                        scene_id=scene.scene_id,
                        entity_id=track.entity_id,
                        frame_index=int(f),
                        score=float(s),
                        label=int(track.labels_av[li]),
                        face_width_px=float(w),
                        faces_in_frame=int(faces_per_frame[int(f)]),
                    )
                )
    return scored


def evaluate_model(
    model: SpeakerContextModel,
    scenes: list[Scene],
    model_config: ModelConfig,
    max_frames: int = DEFAULT_MAX_FRAMES,
    visual_only: bool = False,
    smooth_window: int | None = None,
    desync_shifts: tuple[int, ...] = (),
    threshold: float = 0.5,
) -> tuple[EvalReport, list[ScoredFrame]]:
    """Full report over the scenes, with an optional audio-shift sweep."""
    scored = scored_frames_for_scenes(
        model, scenes, model_config, max_frames, visual_only, smooth_window
    )
    report = evaluate_scored_frames(scored, threshold)
    for shift in desync_shifts:
        if shift == 0:
            report.desync_map["0"] = report.map
            continue
        shifted = [desync(s, shift) for s in scenes]
        sub = scored_frames_for_scenes(
            model, shifted, model_config, max_frames, visual_only, smooth_window
        )
        report.desync_map[str(shift)] = evaluate_scored_frames(sub, threshold).map
    return report, scored


def desync_sweep_shifts(max_shift: int, step: int = 2) -> tuple[int, ...]:
    """0 plus symmetric shifts up to max_shift: 0, +-step, +-2*step, ..."""
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    shifts = [0]
    for s in range(step, max_shift + 1, step):
        shifts.extend([s, -s])
    return tuple(shifts)
