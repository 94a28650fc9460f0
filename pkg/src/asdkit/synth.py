"""Synthetic audio-visual scene generator and desync harness.

Scenes plant the contextual cues a speaker-detection model can exploit,
each behind a config knob:

* audio-visual correspondence: a latent articulation signal drives both
  the audio envelope and the active speaker's mouth-region pixels;
* silent "decoys": non-speakers sometimes mouth without audio (visual
  label on, audio-visual label off), so only cross-candidate audio-visual
  comparison can cleanly reject them;
* scene gain: one multiplier scales every candidate's mouth contrast, so
  absolute pixel energy is ambiguous across scenes while relative energy
  within a scene stays informative;
* saliency: the active speaker's face tends to be rendered largest;
* attention: non-speakers' positions drift toward the speaker.

Face crops are synthesized lazily and deterministically from per-track
seeds, so a scene costs little memory until sliced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SynthConfig
from .ingest import CROP_SIZE, FaceTrack, Scene

MOUTH_ROWS = slice(95, 125)
MOUTH_COLS = slice(52, 92)

_MOUTH_BASE = 0.15
_MOUTH_GAIN = 0.8
_SPEAK_FLOOR = 0.55  # articulation envelope while speaking stays above this
_DECOY_AMPLITUDE = 0.45  # silent mouthing peaks below the speaking floor
_GLOBAL_PIXEL_NOISE = 0.02
_AUDIO_AMPLITUDE = 0.4


@dataclass(frozen=True)
class Turn:
    speaker: int
    start: int
    stop: int


class LazyCrops:
    """Deterministic on-demand crop synthesis for one track.

    Indexable like a (length, 144, 144, 3) uint8 array. Frame pixels are a
    static per-candidate base face plus a dynamic mouth patch whose
    brightness follows the articulation signal, with fresh noise drawn
    from a counter-based stream keyed by (track seed, frame). Noise has
    two parts: an i.i.d. pixel component, and a patch-wide per-frame
    offset that no spatial averaging can remove (only temporal context
    integrates it away).
    """

    def __init__(
        self,
        base: np.ndarray,
        mouth_values: np.ndarray,
        noise_sigma: float,
        region_sigma: float,
        seed: int,
    ):
        self._base255 = base * np.float32(255.0)  # (144, 144, 3) float32
        self._mouth = mouth_values.astype(np.float32)  # (length,)
        self._sigma = float(noise_sigma)
        self._region_sigma = float(region_sigma)
        self._seed = int(seed)

    def __len__(self) -> int:
        return len(self._mouth)

    def __getitem__(self, index):
        if isinstance(index, slice):
            frames = range(*index.indices(len(self)))
        elif isinstance(index, (int, np.integer)):
            one = self._render(int(index) % len(self) if index < 0 else int(index))
            return one
        else:
            frames = [int(i) for i in index]
        out = np.empty((len(frames), CROP_SIZE, CROP_SIZE, 3), dtype=np.uint8)
        for k, f in enumerate(frames):
            out[k] = self._render(f)
        return out

    def _render(self, frame: int) -> np.ndarray:
        if not (0 <= frame < len(self)):
            raise IndexError(frame)
        rng = np.random.Generator(np.random.Philox(key=[self._seed, frame]))
        img = self._base255.copy()
        patch = img[MOUTH_ROWS, MOUTH_COLS]
        value = (_MOUTH_BASE + _MOUTH_GAIN * self._mouth[frame]) * np.float32(255.0)
        if self._region_sigma > 0:
            value = value + np.float32(rng.normal(0.0, self._region_sigma * 255.0))
        patch[:] = value
        if self._sigma > 0:
            patch += rng.normal(0.0, self._sigma * 255.0, size=patch.shape).astype(np.float32)
        # low-frequency frame noise, drawn coarse and upsampled (cheap per frame)
        coarse = rng.normal(0.0, _GLOBAL_PIXEL_NOISE * 255.0, size=(36, 36, 3)).astype(np.float32)
        img += np.repeat(np.repeat(coarse, 4, axis=0), 4, axis=1)
        np.clip(img, 0.0, 255.0, out=img)
        return img.astype(np.uint8)


def mouth_energy(crops: np.ndarray) -> np.ndarray:
    """Mean mouth-patch intensity per frame, in [0, 1]; crops (T, 144, 144, 3) uint8."""
    patch = np.asarray(crops, dtype=np.float64)[:, MOUTH_ROWS, MOUTH_COLS]
    return patch.mean(axis=(1, 2, 3)) / 255.0


def _base_face(rng: np.random.Generator) -> np.ndarray:
    """Static per-candidate face pattern: smooth blotches, eye dots, skin tone."""
    coarse = rng.uniform(0.35, 0.6, size=(9, 9, 3)).astype(np.float32)
    reps = math.ceil(CROP_SIZE / 8)
    up = np.kron(coarse, np.ones((reps, reps, 1), dtype=np.float32))[:CROP_SIZE, :CROP_SIZE]
    # crude box blur to keep the background smooth
    k = 9
    pad = np.pad(up, ((k // 2, k // 2), (k // 2, k // 2), (0, 0)), mode="edge")
    csum = pad.cumsum(axis=0).cumsum(axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0), (0, 0)))
    img = (
        csum[k:, k:] - csum[:-k, k:] - csum[k:, :-k] + csum[:-k, :-k]
    ) / (k * k)
    for ex in (48, 96):
        img[52:64, ex - 8 : ex + 8] *= 0.35
    return img.astype(np.float32)


def _articulation(envelope: np.ndarray, fps: int, rng: np.random.Generator) -> np.ndarray:
    """Syllable-rate modulation on top of a binary speaking envelope."""
    t = np.arange(len(envelope)) / fps
    rate = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wobble = _SPEAK_FLOOR + (1.0 - _SPEAK_FLOOR) * np.abs(np.sin(2 * np.pi * rate * t + phase))
    return envelope * wobble


def _plan_turns(
    n: int, t: int, cfg: SynthConfig, presence: np.ndarray, rng: np.random.Generator
) -> list[Turn]:
    turns = []
    cursor = 0
    while cursor < t:
        lo = max(2, cfg.mean_turn_frames - cfg.turn_jitter_frames)
        hi = cfg.mean_turn_frames + cfg.turn_jitter_frames
        length = int(rng.integers(lo, hi + 1))
        stop = min(cursor + length, t)
        if rng.random() >= cfg.silence_prob:
            available = [i for i in range(n) if presence[i, cursor:stop].all()]
            if available:
                speaker = int(rng.choice(available))
                turns.append(Turn(speaker, cursor, stop))
                if cfg.overlap_prob > 0 and len(available) > 1 and rng.random() < cfg.overlap_prob:
                    other = int(rng.choice([i for i in available if i != speaker]))
                    sub = max(2, (stop - cursor) // 2)
                    s0 = int(rng.integers(cursor, max(cursor + 1, stop - sub + 1)))
                    turns.append(Turn(other, s0, min(s0 + sub, stop)))
        cursor = stop
    return turns


def _smooth_ramp(values: np.ndarray, ramp: int = 4) -> np.ndarray:
    """Moving average so step changes (size boosts, drifts) ease in and out."""
    if ramp <= 1:
        return values
    kernel = np.ones(ramp) / ramp
    padded = np.pad(values, (ramp // 2, ramp - 1 - ramp // 2), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def generate_scene(cfg: SynthConfig, rng: np.random.Generator, scene_id: str = "scene") -> Scene:
    """One synthetic scene, fully determined by the generator state."""
    cfg.validate()
    n = int(rng.integers(cfg.candidates_range[0], cfg.candidates_range[1] + 1))
    t = int(rng.integers(cfg.frames_range[0], cfg.frames_range[1] + 1))
    fps = cfg.fps

    presence = np.ones((n, t), dtype=bool)
    for i in range(n):
        if rng.random() < cfg.entry_exit_prob:
            a = int(rng.integers(0, max(1, t // 4)))
            b = int(rng.integers(min(t - 1, (3 * t) // 4), t)) + 1
            presence[i, :] = False
            presence[i, a:b] = True

    turns = _plan_turns(n, t, cfg, presence, rng)
    envelope = np.zeros((n, t), dtype=np.float64)
    for turn in turns:
        envelope[turn.speaker, turn.start : turn.stop] = 1.0

    articulation = np.stack([_articulation(envelope[i], fps, rng) for i in range(n)])

    # silent decoy mouthing: visual label on, audio-visual label off
    decoy = np.zeros((n, t), dtype=np.float64)
    for turn in turns:
        for j in range(n):
            if j == turn.speaker or rng.random() >= cfg.decoy_prob:
                continue
            span = turn.stop - turn.start
            length = max(3, span // 2)
            s0 = int(rng.integers(turn.start, max(turn.start + 1, turn.stop - length + 1)))
            s1 = min(s0 + length, turn.stop)
            window = (envelope[j, s0:s1] == 0) & presence[j, s0:s1]
            decoy[j, s0:s1] = np.where(window, 1.0, decoy[j, s0:s1])
    decoy_articulation = (
        np.stack([_articulation(decoy[i], fps, rng) for i in range(n)]) * _DECOY_AMPLITUDE
    )

    labels_av = (envelope > 0).astype(np.uint8)
    labels_v = ((envelope > 0) | (decoy > 0)).astype(np.uint8)

    # geometry: base positions spread over the frame, slow drift, gaze pull
    base_w = rng.uniform(0.07, 0.22, size=n)
    order = rng.permutation(n)
    base_cx = np.sort(rng.uniform(0.15, 0.85, size=n))[np.argsort(order)]
    base_cy = rng.uniform(0.38, 0.58, size=n)

    cx = np.tile(base_cx[:, None], (1, t))
    cy = np.tile(base_cy[:, None], (1, t))
    widths = np.tile(base_w[:, None], (1, t))
    walk = rng.normal(0.0, 0.0035, size=(n, t, 2)).cumsum(axis=1)
    cx += walk[..., 0]
    cy += walk[..., 1]

    for turn in turns:
        s = turn.speaker
        if rng.random() < cfg.saliency_bias:
            target = 1.25 * base_w.max()
            boost = np.zeros(t)
            boost[turn.start : turn.stop] = 1.0
            widths[s] = widths[s] + _smooth_ramp(boost) * (target - base_w[s])
        for j in range(n):
            if j == s:
                continue
            if rng.random() < cfg.gaze_bias:
                pull = np.zeros(t)
                pull[turn.start : turn.stop] = 0.3
                cx[j] = cx[j] + _smooth_ramp(pull) * (cx[turn.speaker].mean() - base_cx[j])

    heights = np.minimum(0.95, widths * 2.0)
    cx = np.clip(cx, widths / 2 + 0.01, 1 - widths / 2 - 0.01)
    cy = np.clip(cy, heights / 2 + 0.01, 1 - heights / 2 - 0.01)
    boxes = np.stack([cx - widths / 2, cy - heights / 2, cx + widths / 2, cy + heights / 2], axis=-1)
    boxes = np.clip(boxes, 0.0, 1.0).astype(np.float32)

    # audio: shared-band tones driven by each speaker's articulation
    sr = cfg.sample_rate
    samples = int(round(t / fps * sr))
    tau = np.arange(samples) / sr
    frame_of_sample = np.minimum((tau * fps).astype(int), t - 1)
    audio = np.zeros(samples, dtype=np.float64)
    freqs = rng.uniform(180.0, 320.0, size=n)
    for i in range(n):
        phase = rng.uniform(0.0, 2 * np.pi)
        audio += articulation[i, frame_of_sample] * np.sin(2 * np.pi * freqs[i] * tau + phase)
    audio *= _AUDIO_AMPLITUDE
    if np.isfinite(cfg.audio_snr):
        audio += rng.normal(0.0, _AUDIO_AMPLITUDE / cfg.audio_snr, size=samples)
    waveform = np.clip(audio, -1.0, 1.0).astype(np.float32)

    # visual: scene gain multiplies every candidate's mouth contrast
    gain = rng.uniform(*cfg.scene_gain_range)
    if np.isinf(cfg.visual_snr):
        noise_sigma = region_sigma = 0.0
    else:
        noise_sigma = _MOUTH_GAIN / cfg.visual_snr
        region_sigma = 0.5 * _MOUTH_GAIN / cfg.visual_snr
    visual_signal = gain * np.clip(articulation + decoy_articulation, 0.0, 1.0)

    tracks = []
    for i in range(n):
        frames = np.nonzero(presence[i])[0]
        a, b = int(frames[0]), int(frames[-1]) + 1
        seed = int(rng.integers(0, 2**31 - 1))
        base = _base_face(rng)
        tracks.append(
            FaceTrack(
                entity_id=f"{scene_id}_e{i}",
                first_frame=a,
                boxes=boxes[i, a:b],
                crops=LazyCrops(base, visual_signal[i, a:b], noise_sigma, region_sigma, seed),
                labels_v=labels_v[i, a:b],
                labels_av=labels_av[i, a:b],
            )
        )

    scene = Scene(
        scene_id=scene_id,
        tracks=tracks,
        waveform=waveform,
        sample_rate=sr,
        n_frames=t,
        fps=fps,
        frame_size=tuple(cfg.frame_size),
    )
    scene._turns = turns  # debug/statistics hook, not serialized
    return scene


def generate_dataset(cfg: SynthConfig, name: str = "synth") -> list[Scene]:
    """n_scenes scenes with independent per-scene streams derived from cfg.seed."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    scenes = []
    for k, child in enumerate(root.spawn(cfg.n_scenes)):
        rng = np.random.Generator(np.random.Philox(child))
        scenes.append(generate_scene(cfg, rng, scene_id=f"{name}_{k:04d}"))
    return scenes


def desync(scene: Scene, shift_frames: int) -> Scene:
    """Shift the audio stream by whole video frames; labels stay with the video.

    Positive shifts delay the audio (sample heard at time x originally
    occurred at x - shift/fps); edges are zero padded. |shift| may not
    exceed the scene length.
    """
    if abs(shift_frames) > scene.n_frames:
        raise ValueError(f"shift {shift_frames} exceeds scene length {scene.n_frames}")
    offset = int(round(shift_frames / scene.fps * scene.sample_rate))
    shifted = np.zeros_like(scene.waveform)
    if offset >= 0:
        if offset < len(shifted):
            shifted[offset:] = scene.waveform[: len(shifted) - offset]
    else:
        shifted[:offset] = scene.waveform[-offset:]
    return replace(scene, waveform=shifted)
