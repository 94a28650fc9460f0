"""Multi-task binary cross-entropy objective.

Three terms: an auxiliary audio term (does anyone speak), an auxiliary
visual term (is this face visibly speaking), and the main audio-visual
term (is this face speaking audibly). Frames where a candidate is absent
are masked out of every mean; predicted probabilities are clamped to
[eps, 1-eps] so all terms stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .relational import ModelOutput

PROB_EPS = 1e-7


def bce(y, y_hat, eps: float = PROB_EPS):
    """Binary cross-entropy -yh*log(y) - (1-yh)*log(1-y) with y clamped.

    Works elementwise on floats, numpy arrays, or torch tensors.
    """
    if isinstance(y, torch.Tensor):
        y = y.clamp(eps, 1.0 - eps)
        return -(y_hat * torch.log(y) + (1.0 - y_hat) * torch.log(1.0 - y))
    y = np.clip(np.asarray(y, dtype=np.float64), eps, 1.0 - eps)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    return -(y_hat * np.log(y) + (1.0 - y_hat) * np.log(1.0 - y))


@dataclass
class LossBreakdown:
    l_a: torch.Tensor
    l_v: torch.Tensor
    l_av: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.l_a + self.l_v + self.l_av

    def detach_floats(self) -> dict[str, float]:
        out = {
            "l_a": float(self.l_a.detach()),
            "l_v": float(self.l_v.detach()),
            "l_av": float(self.l_av.detach()),
        }
        out["total"] = out["l_a"] + out["l_v"] + out["l_av"]
        return out


def masked_bce_mean(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean BCE(sigmoid(logits), labels) over cells where mask is True."""
    mask = mask.to(torch.bool)
    if not torch.any(mask):
        return logits.sum() * 0.0
    per_cell = bce(torch.sigmoid(logits), labels.to(logits.dtype))
    return per_cell[mask].mean()


def audio_loss(
    logits_a: torch.Tensor, labels_av: torch.Tensor, presence: torch.Tensor
) -> torch.Tensor:
    """Auxiliary audio term: target is whether at least one candidate speaks.

    ``logits_a`` is (B, T); the per-frame target is the max of the
    audio-visual labels over present candidates. Frames with no present
    candidate are masked out.
    """
    present_labels = labels_av * presence.to(labels_av.dtype)
    y_a = present_labels.amax(dim=1)
    frame_mask = presence.any(dim=1)
    return masked_bce_mean(logits_a, y_a, frame_mask)


def single_candidate_losses(outputs: ModelOutput, batch) -> LossBreakdown:
    """Single-candidate objective: heads applied to raw per-frame features.

    Expects outputs from the non-contextual forward. The total adds all
    three terms.
    """
    if outputs.r_v is not None:
        raise ValueError("single-candidate losses expect the non-contextual forward")
    mask = batch.presence
    return LossBreakdown(
        l_a=audio_loss(outputs.logits_a, batch.labels_av, mask),
        l_v=masked_bce_mean(outputs.logits_v, batch.labels_v, mask),
        l_av=masked_bce_mean(outputs.logits_av, batch.labels_av, mask),
    )


def multi_candidate_losses(outputs: ModelOutput, batch) -> LossBreakdown:
    """Multi-candidate objective over contextual representations.

    Losses aggregate over all candidates and frames (absent cells masked);
    the audio term is dropped in this stage, reported as exactly zero.
    """
    if outputs.r_v is None:
        raise ValueError("multi-candidate losses expect the contextual forward")
    mask = batch.presence
    zero = outputs.logits_a.sum() * 0.0
    return LossBreakdown(
        l_a=zero,
        l_v=masked_bce_mean(outputs.logits_v, batch.labels_v, mask),
        l_av=masked_bce_mean(outputs.logits_av, batch.labels_av, mask),
    )


def compute_losses(outputs: ModelOutput, batch, stage: int) -> LossBreakdown:
    if stage == 1:
        return single_candidate_losses(outputs, batch)
    if stage == 2:
        return multi_candidate_losses(outputs, batch)
    raise ValueError(f"unknown curriculum stage {stage}")
