"""Shared helpers: tiny model configs and scenes that keep CPU tests fast."""

import numpy as np
import torch

from asdkit.config import EncoderConfig, ModelConfig, RelationalConfig, SynthConfig
from asdkit.synth import generate_scene

torch.set_num_threads(1)


def tiny_model_config(
    spatial: bool = True,
    relational: bool = True,
    backend: str = "conv1d",
    suppression: str = "max",
    dim: int = 16,
) -> ModelConfig:
    encoder = EncoderConfig(
        feature_dim=dim,
        reduced_dim=dim,
        spatial_dim=8,
        stack_size=3,
        face_channels=(4, 6),
        audio_channels=(4, 6),
        headmap_channels=(4, 6, 8),
    )
    relational_cfg = RelationalConfig(
        suppression=suppression if relational else "none",
        temporal_backend=backend,
        hidden_dim=dim,
        gru_cells=8,
    )
    return ModelConfig(
        encoder=encoder,
        relational=relational_cfg,
        spatial=spatial,
        use_relational=relational,
    ).validate()


def tiny_scene(n_candidates: int = 3, n_frames: int = 10, seed: int = 0):
    cfg = SynthConfig(
        candidates_range=(n_candidates, n_candidates),
        frames_range=(n_frames, n_frames),
        mean_turn_frames=6,
        turn_jitter_frames=2,
        seed=seed,
    )
    rng = np.random.Generator(np.random.Philox(seed))
    return generate_scene(cfg, rng, scene_id=f"tiny_{seed}")


def permuted_scene(scene, perm):
    """Scene with tracks reordered by perm (new position k holds old perm[k])."""
    import dataclasses

    return dataclasses.replace(scene, tracks=[scene.tracks[p] for p in perm])


def grad_check_config(backend: str = "conv1d", suppression: str = "max") -> ModelConfig:
    """Smallest model that still exercises every module, for finite differences."""
    encoder = EncoderConfig(
        feature_dim=6,
        reduced_dim=6,
        spatial_dim=4,
        stack_size=3,
        face_channels=(2, 3),
        audio_channels=(2, 3),
        headmap_channels=(2, 3, 4),
    )
    relational = RelationalConfig(
        suppression=suppression, temporal_backend=backend, hidden_dim=6, gru_cells=4
    )
    return ModelConfig(encoder=encoder, relational=relational, spatial=True, use_relational=True).validate()


def batch_to_double(batch):
    """Cast a feature batch to float64 in place (for finite-difference checks)."""
    batch.crops = batch.crops.double()
    batch.mfcc = batch.mfcc.double()
    if batch.self_maps is not None:
        batch.self_maps = batch.self_maps.double()
        batch.pair_maps = batch.pair_maps.double()
    batch.labels_v = batch.labels_v.double()
    batch.labels_av = batch.labels_av.double()
    return batch


def max_grad_rel_error(model, compute_loss, h: float = 1e-6, sample: int | None = None):
    """Worst relative error between autograd and central finite differences.

    ``compute_loss`` must be a deterministic closure over the model
    parameters. With ``sample`` set, only the first ``sample`` elements of
    each parameter tensor are probed; otherwise every element is. The
    relative error uses an absolute floor of 1e-5 in the denominator:
    central differences at h=1e-6 in float64 carry ~5e-11 of cancellation
    noise, so gradients below the floor are compared absolutely (to 1e-9
    at the 1e-4 threshold) rather than relatively.
    """
    loss = compute_loss()
    params = [p for p in model.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            g_flat = (torch.zeros_like(p) if g is None else g).reshape(-1)
            count = flat.numel() if sample is None else min(sample, flat.numel())
            for k in range(count):
                orig = flat[k].item()
                flat[k] = orig + h
                plus = compute_loss().item()
                flat[k] = orig - h
                minus = compute_loss().item()
                flat[k] = orig
                fd = (plus - minus) / (2.0 * h)
                ga = g_flat[k].item()
                rel = abs(ga - fd) / max(abs(ga), abs(fd), 1e-5)
                worst = max(worst, rel)
    return worst
