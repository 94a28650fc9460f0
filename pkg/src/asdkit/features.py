"""Scene featurization: crops, MFCC windows, head maps, masks, labels.

Bridges ingest-level scenes and the torch model. Augmentation here is
track-uniform: one flip decision, one crop corner, and one photometric
jitter draw per track, applied to every frame of that track.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .headmap import BOX_EXPANSION, render_scene_maps
from .ingest import CROP_SIZE, Scene, scene_mfcc

TRAIN_CROP = 128
_MARGIN = CROP_SIZE - TRAIN_CROP  # free play for corner cropping


@dataclass
class SceneTensors:
    """One scene (or segment) as model-ready arrays, no batch dimension."""

    scene_id: str
    entity_ids: list[str]
    frame_indices: np.ndarray  # (T,) scene frame ids (replicate-padded segments repeat ids)
    crops: torch.Tensor  # (N, T, 3, 128, 128) float32 in [0, 1]
    mfcc: torch.Tensor  # (T, 13, F)
    self_maps: torch.Tensor | None  # (N, T, 3, 64, 64)
    pair_maps: torch.Tensor | None  # (P, T, 3, 64, 64), canonical pairs of the selection
    presence: torch.Tensor  # (N, T) bool
    labels_v: torch.Tensor  # (N, T) float32, zero where absent
    labels_av: torch.Tensor  # (N, T) float32
    boxes: np.ndarray  # (N, T, 4) normalized, zero where absent


@dataclass
class Batch:
    """A stack of same-shape SceneTensors; model input."""

    crops: torch.Tensor  # (B, N, T, 3, 128, 128)
    mfcc: torch.Tensor  # (B, T, 13, F)
    self_maps: torch.Tensor | None
    pair_maps: torch.Tensor | None
    presence: torch.Tensor  # (B, N, T)
    labels_v: torch.Tensor
    labels_av: torch.Tensor

    @property
    def n_candidates(self) -> int:
        return self.crops.shape[1]

    @property
    def n_frames(self) -> int:
        return self.crops.shape[2]


def augment_track_crops(
    crops: np.ndarray, rng: np.random.Generator | None, config: TrainConfig | None
) -> np.ndarray:
    """144x144 uint8 track crops -> (L, 3, 128, 128) float32 in [0, 1].

    With a config and rng this applies the training augmentation (one flip
    decision and one crop corner per track, then photometric jitter);
    otherwise the evaluation path takes the central 128x128 patch.
    """
    raw = np.asarray(crops)
    if raw.ndim != 4 or raw.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
        raise ValueError(f"expected (L, {CROP_SIZE}, {CROP_SIZE}, 3) crops, got {raw.shape}")
    train = config is not None and config.augment and rng is not None
    if train and config.corner_crop:
        dy = int(rng.integers(0, _MARGIN + 1))
        dx = int(rng.integers(0, _MARGIN + 1))
    else:
        dy = dx = _MARGIN // 2
    window = raw[:, dy : dy + TRAIN_CROP, dx : dx + TRAIN_CROP]
    if train and config.flip and rng.random() < 0.5:
        window = window[:, :, ::-1]
    x = window.astype(np.float32)
    x *= np.float32(1.0 / 255.0)
    if train:
        brightness = rng.uniform(-config.jitter_brightness, config.jitter_brightness) if config.jitter_brightness > 0 else 0.0
        contrast = 1.0 + (rng.uniform(-config.jitter_contrast, config.jitter_contrast) if config.jitter_contrast > 0 else 0.0)
        saturation = 1.0 + (rng.uniform(-config.jitter_saturation, config.jitter_saturation) if config.jitter_saturation > 0 else 0.0)
        if (brightness, contrast, saturation) != (0.0, 1.0, 1.0):
            # saturation then contrast about the track mean, fused in place:
            # y = (c*s)*x + c*(1-s)*gray + (mu*(1-c) + b)
            mu = float(window.mean()) / 255.0
            gray = window.mean(axis=-1, keepdims=True, dtype=np.float32)
            gray *= np.float32(contrast * (1.0 - saturation) / 255.0)
            x *= np.float32(contrast * saturation)
            x += gray
            x += np.float32(mu * (1.0 - contrast) + brightness)
        np.clip(x, 0.0, 1.0, out=x)
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def featurize_scene(
    scene: Scene,
    model_config: ModelConfig,
    frame_indices: np.ndarray | None = None,
    candidates: list[int] | None = None,
    train_config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    need_maps: bool | None = None,
) -> SceneTensors:
    """Tensors for the selected candidates over the selected frames.

    ``candidates`` must be sorted ascending so the canonical pair order of
    the selection matches the scene's. Head maps include every present
    candidate of the scene in their context channel, selected or not.
    """
    if frame_indices is None:
        frame_indices = np.arange(scene.n_frames)
    frame_indices = np.asarray(frame_indices)
    if candidates is None:
        candidates = list(range(len(scene.tracks)))
    if sorted(candidates) != list(candidates):
        raise ValueError("candidate selection must be sorted")
    if need_maps is None:
        need_maps = model_config.spatial
    length = len(frame_indices)
    n_sel = len(candidates)
    n_all = len(scene.tracks)

    crops = np.zeros((n_sel, length, 3, TRAIN_CROP, TRAIN_CROP), dtype=np.float32)
    presence_all = np.zeros((n_all, length), dtype=bool)
    labels_v = np.zeros((n_sel, length), dtype=np.float32)
    labels_av = np.zeros((n_sel, length), dtype=np.float32)
    boxes_all = np.zeros((n_all, length, 4), dtype=np.float64)

    for t_idx, track in enumerate(scene.tracks):
        local = frame_indices - track.first_frame
        valid = (local >= 0) & (local < len(track))
        presence_all[t_idx, valid] = True
        if valid.any():
            boxes_all[t_idx, valid] = track.boxes[local[valid]]

    for k, t_idx in enumerate(candidates):
        track = scene.tracks[t_idx]
        local = frame_indices - track.first_frame
        valid = (local >= 0) & (local < len(track))
        if valid.any():
            lo, hi = int(local[valid].min()), int(local[valid].max())
            raw = np.asarray(track.crops[lo : hi + 1])
            processed = augment_track_crops(raw, rng, train_config)
            crops[k, valid] = processed[local[valid] - lo]
            labels_v[k, valid] = track.labels_v[local[valid]]
            labels_av[k, valid] = track.labels_av[local[valid]]

    self_maps = pair_maps = None
    pairs = [(candidates[a], candidates[b]) for a in range(n_sel) for b in range(a + 1, n_sel)]
    if need_maps:
        widths = boxes_all[..., 2] - boxes_all[..., 0]
        centers = np.stack(
            [
                0.5 * (boxes_all[..., 0] + boxes_all[..., 2]),
                0.5 * (boxes_all[..., 1] + boxes_all[..., 3]),
            ],
            axis=-1,
        )
        radii = 0.5 * BOX_EXPANSION * widths
        sm, pm = render_scene_maps(centers, radii, presence_all, candidates, pairs)
        self_maps = torch.from_numpy(sm)
        pair_maps = torch.from_numpy(pm)

    return SceneTensors(
        scene_id=scene.scene_id,
        entity_ids=[scene.tracks[i].entity_id for i in candidates],
        frame_indices=frame_indices,
        crops=torch.from_numpy(crops),
        mfcc=torch.from_numpy(scene_mfcc(scene)[frame_indices]),
        self_maps=self_maps,
        pair_maps=pair_maps,
        presence=torch.from_numpy(presence_all[candidates]),
        labels_v=torch.from_numpy(labels_v),
        labels_av=torch.from_numpy(labels_av),
        boxes=boxes_all[candidates],
    )


def collate(items: list[SceneTensors]) -> Batch:
    """Stack same-shape scene tensors into a batch."""
    if not items:
        raise ValueError("empty batch")
    shapes = {(it.crops.shape, it.mfcc.shape) for it in items}
    if len(shapes) > 1:
        raise ValueError("batch items must share candidate count and frame count")
    maps = items[0].self_maps is not None
    return Batch(
        crops=torch.stack([it.crops for it in items]),
        mfcc=torch.stack([it.mfcc for it in items]),
        self_maps=torch.stack([it.self_maps for it in items]) if maps else None,
        pair_maps=torch.stack([it.pair_maps for it in items]) if maps else None,
        presence=torch.stack([it.presence for it in items]),
        labels_v=torch.stack([it.labels_v for it in items]),
        labels_av=torch.stack([it.labels_av for it in items]),
    )
