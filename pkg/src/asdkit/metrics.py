"""Scoring and analysis: AP, AUROC, F1, DER, smoothing, breakdowns.

Conventions are pinned for determinism: average precision uses raw
step-wise recall increments with ties broken by stable input order; AUROC
is the rank statistic with half credit for ties; the decision threshold
for F1 and DER marks a frame positive when score >= threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.stats


@dataclass(frozen=True)
class ScoredFrame:
    scene_id: str
    entity_id: str
    frame_index: int
    score: float
    label: int
    face_width_px: float = 0.0
    faces_in_frame: int = 1


@dataclass
class DerResult:
    false_alarm: float
    missed: float
    confusion: float
    reference_frames: int

    @property
    def total(self) -> float:
        return self.false_alarm + self.missed + self.confusion


@dataclass
class EvalReport:
    map: float | None = None
    auroc: float | None = None
    f1: float | None = None
    der: float | None = None
    der_components: dict | None = None
    n_frames: int = 0
    n_positive: int = 0
    face_size_map: dict = field(default_factory=dict)
    faces_in_frame_map: dict = field(default_factory=dict)
    desync_map: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "auroc": self.auroc,
            "f1": self.f1,
            "der": self.der,
            "der_components": self.der_components,
            "n_frames": self.n_frames,
            "n_positive": self.n_positive,
            "breakdowns": {
                "face_size": self.face_size_map,
                "faces_in_frame": self.faces_in_frame_map,
            },
            "desync": self.desync_map,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _scores_labels(scored: Sequence[ScoredFrame]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([s.score for s in scored], dtype=np.float64)
    labels = np.array([s.label for s in scored], dtype=np.int64)
    return scores, labels


def average_precision(scored: Sequence[ScoredFrame]) -> float:
    """Step-wise AP over the ranking by descending score.

    Ties keep their input order (stable sort). Raises ``ValueError`` when
    there are no positive labels.
    """
    scores, labels = _scores_labels(scored)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    cum_tp = np.cumsum(hits)
    precision = cum_tp / np.arange(1, len(hits) + 1)
    return float(np.sum(precision * hits) / n_pos)


def auroc(scored: Sequence[ScoredFrame]) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2."""
    scores, labels = _scores_labels(scored)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC undefined for single-class input")
    ranks = scipy.stats.rankdata(scores, method="average")
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(scored: Sequence[ScoredFrame], threshold: float = 0.5) -> float:
    """Harmonic mean of precision and recall at the threshold; 0 when degenerate."""
    scores, labels = _scores_labels(scored)
    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def der(scored: Sequence[ScoredFrame], threshold: float = 0.5) -> DerResult:
    """Diarization error rate from per-frame speaker decisions.

    Identities are given, so the reference-to-hypothesis mapping is the
    identity map. Per frame with reference set R and hypothesis set H:
    miss = max(0, |R|-|H|), false alarm = max(0, |H|-|R|), confusion =
    min(|R|, |H|) - |R & H|. Rates divide by total reference speaker-frames.
    """
    frames: dict[tuple[str, int], tuple[set, set]] = {}
    for s in scored:
        key = (s.scene_id, s.frame_index)
        ref, hyp = frames.setdefault(key, (set(), set()))
        if s.label:
            ref.add(s.entity_id)
        if s.score >= threshold:
            hyp.add(s.entity_id)
    n_ref = sum(len(ref) for ref, _ in frames.values())
    if n_ref == 0:
        raise ValueError("DER undefined without reference speech frames")
    miss = fa = conf = 0
    for ref, hyp in frames.values():
        correct = len(ref & hyp)
        miss += max(0, len(ref) - len(hyp))
        fa += max(0, len(hyp) - len(ref))
        conf += min(len(ref), len(hyp)) - correct
    return DerResult(
        false_alarm=fa / n_ref,
        missed=miss / n_ref,
        confusion=conf / n_ref,
        reference_frames=n_ref,
    )


def smooth_predictions(scores: np.ndarray, window: int = 11) -> np.ndarray:
    """Adaptive local Wiener smoothing of one entity's score series.

    Per position, with local mean m and variance s^2 over the (edge
    padded) window and noise level v = mean of the local variances:
    out = m + max(0, s^2 - v) / max(s^2, v) * (x - m), with 0/0 treated
    as no correction. Series shorter than the window pass through.
    """
    if window % 2 != 1:
        raise ValueError("window must be odd")
    x = np.asarray(scores, dtype=np.float64)
    if window == 1 or len(x) < window:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    sliding = np.lib.stride_tricks.sliding_window_view(padded, window)
    mean = sliding.mean(axis=-1)
    var = sliding.var(axis=-1)
    noise = var.mean()
    denom = np.maximum(var, noise)
    gain = np.divide(
        np.maximum(var - noise, 0.0), denom, out=np.zeros_like(var), where=denom > 0
    )
    return mean + gain * (x - mean)


def _face_size_bin(width_px: float) -> str:
    if width_px <= 64.0:
        return "small"
    if width_px <= 128.0:
        return "medium"
    return "large"


def _faces_bin(count: int) -> str:
    return str(count) if count < 3 else "3+"


def _safe_ap(subset: list[ScoredFrame]) -> float | None:
    try:
        return average_precision(subset)
    except ValueError:
        return None


def breakdown(scored: Sequence[ScoredFrame]) -> tuple[dict, dict]:
    """AP recomputed within face-size and faces-in-frame bins.

    Bins partition the input exactly; empty bins are omitted and bins with
    frames but no positive labels report ``None``.
    """
    by_size: dict[str, list[ScoredFrame]] = {}
    by_count: dict[str, list[ScoredFrame]] = {}
    for s in scored:
        by_size.setdefault(_face_size_bin(s.face_width_px), []).append(s)
        by_count.setdefault(_faces_bin(s.faces_in_frame), []).append(s)
    size_map = {name: _safe_ap(items) for name, items in sorted(by_size.items())}
    count_map = {name: _safe_ap(items) for name, items in sorted(by_count.items())}
    return size_map, count_map


def evaluate_scored_frames(
    scored: Sequence[ScoredFrame], threshold: float = 0.5
) -> EvalReport:
    """Full report over a pool of scored frames."""
    scored = list(scored)
    report = EvalReport(n_frames=len(scored), n_positive=sum(s.label for s in scored))
    if not scored:
        return report
    report.map = _safe_ap(scored)
    try:
        report.auroc = auroc(scored)
    except ValueError:
        report.auroc = None
    report.f1 = f1(scored, threshold)
    try:
        d = der(scored, threshold)
        report.der = d.total
        report.der_components = {
            "false_alarm": d.false_alarm,
            "missed": d.missed,
            "confusion": d.confusion,
            "reference_frames": d.reference_frames,
        }
    except ValueError:
        report.der = None
        report.der_components = None
    report.face_size_map, report.faces_in_frame_map = breakdown(scored)
    return report
