"""Annotation parsing, track assembly, label resampling, and audio features.

Everything here is a pure function of its inputs and safe to call from
multiple workers. Scenes are shot-level groups of co-occurring face tracks
that share one audio waveform; downstream modules consume them directly.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import scipy.fft

logger = logging.getLogger(__name__)

CROP_SIZE = 144
DEFAULT_FPS = 25

REQUIRED_COLUMNS = ("video_id", "timestamp", "x1", "y1", "x2", "y2", "label", "entity_id")

# MFCC framing: 25 ms analysis window, 10 ms hop, 40 mel filters, 13
# cepstral coefficients over a 400 ms context window -> 38 mel frames.
MFCC_CONTEXT_S = 0.4
MFCC_WIN_S = 0.025
MFCC_HOP_S = 0.010
MFCC_N_MELS = 40
MFCC_N_COEFFS = 13
MFCC_MIN_SAMPLE_RATE = 8000
MFCC_FRAMES = 1 + int((MFCC_CONTEXT_S - MFCC_WIN_S) / MFCC_HOP_S + 1e-9)


class AnnotationFormatError(ValueError):
    """Raised when annotation input cannot be parsed at all (e.g. bad header)."""


class SpeechLabel(enum.Enum):
    NOT_SPEAKING = "NOT_SPEAKING"
    SPEAKING_AUDIBLE = "SPEAKING_AUDIBLE"
    SPEAKING_NOT_AUDIBLE = "SPEAKING_NOT_AUDIBLE"

    @property
    def visual(self) -> int:
        """1 if the face is visibly speaking, audible or not."""
        return int(self is not SpeechLabel.NOT_SPEAKING)

    @property
    def audiovisual(self) -> int:
        """1 only for audible speech."""
        return int(self is SpeechLabel.SPEAKING_AUDIBLE)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned face box in fractions of frame width/height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {self}")
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"coordinate outside [0,1]: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    timestamp: float
    box: BoundingBox
    label: SpeechLabel
    entity_id: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp: {self.timestamp}")


@dataclass
class FaceTrack:
    """One candidate's contiguous run of frames within a scene.

    Frames run from ``first_frame`` with step 1; ``crops`` is any object
    indexable like a ``(length, 144, 144, 3)`` uint8 array (a plain ndarray
    or a lazy provider).
    """

    entity_id: str
    first_frame: int
    boxes: np.ndarray
    crops: Any
    labels_v: np.ndarray
    labels_av: np.ndarray

    def __post_init__(self):
        n = len(self.boxes)
        if not (len(self.labels_v) == len(self.labels_av) == len(self.crops) == n):
            raise ValueError("track arrays disagree on length")
        if n == 0:
            raise ValueError("empty track")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self) - 1

    @property
    def frame_indices(self) -> np.ndarray:
        return np.arange(self.first_frame, self.first_frame + len(self))

    def covers(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def box_at(self, frame: int) -> BoundingBox:
        x1, y1, x2, y2 = self.boxes[frame - self.first_frame]
        return BoundingBox(float(x1), float(y1), float(x2), float(y2))

    def slice(self, start: int, stop: int) -> "FaceTrack":
        """Clip the track to scene frames [start, stop); frames re-indexed."""
        a = max(start, self.first_frame) - self.first_frame
        b = min(stop, self.last_frame + 1) - self.first_frame
        if b <= a:
            raise ValueError("slice does not intersect track")
        return FaceTrack(
            entity_id=self.entity_id,
            first_frame=self.first_frame + a - start,
            boxes=self.boxes[a:b],
            crops=np.asarray(self.crops[a:b]),
            labels_v=self.labels_v[a:b],
            labels_av=self.labels_av[a:b],
        )


@dataclass
class Scene:
    """A shot-level group of face tracks sharing one audio track.

    ``audio_offset`` is the time (seconds) of waveform sample 0 relative to
    the start of frame 0; chunked slices carry a small negative offset so
    the audio context window preceding the first frames stays available.
    ``frame_offset`` maps local frame 0 back to the parent scene.
    """

    scene_id: str
    tracks: list[FaceTrack]
    waveform: np.ndarray
    sample_rate: int
    n_frames: int
    fps: int = DEFAULT_FPS
    frame_size: tuple[int, int] = (640, 360)
    audio_offset: float = 0.0
    frame_offset: int = 0

    def __post_init__(self):
        for track in self.tracks:
            if track.first_frame < 0 or track.last_frame >= self.n_frames:
                raise ValueError(
                    f"track {track.entity_id} [{track.first_frame},{track.last_frame}] "
                    f"outside scene frames [0,{self.n_frames})"
                )

    @property
    def n_candidates(self) -> int:
        return len(self.tracks)

    def faces_in_frame(self, frame: int) -> int:
        return sum(track.covers(frame) for track in self.tracks)

    def presence(self) -> np.ndarray:
        """(n_candidates, n_frames) bool mask of track coverage."""
        mask = np.zeros((len(self.tracks), self.n_frames), dtype=bool)
        for i, track in enumerate(self.tracks):
            mask[i, track.first_frame : track.last_frame + 1] = True
        return mask

    def slice(self, start: int, stop: int) -> "Scene":
        if not (0 <= start < stop <= self.n_frames):
            raise ValueError(f"bad slice [{start},{stop}) for T={self.n_frames}")
        tracks = [
            t.slice(start, stop)
            for t in self.tracks
            if t.first_frame < stop and t.last_frame >= start
        ]
        # keep the audio context window preceding the slice
        preroll = min(MFCC_CONTEXT_S, start / self.fps + self.audio_offset)
        a = int(round((start / self.fps + self.audio_offset - preroll) * self.sample_rate))
        b = int(round((stop / self.fps + self.audio_offset) * self.sample_rate))
        b = min(b, len(self.waveform))
        return Scene(
            scene_id=self.scene_id,
            tracks=tracks,
            waveform=self.waveform[max(a, 0) : b],
            sample_rate=self.sample_rate,
            n_frames=stop - start,
            fps=self.fps,
            frame_size=self.frame_size,
            audio_offset=-preroll,
            frame_offset=self.frame_offset + start,
        )


@dataclass(frozen=True)
class MfccWindow:
    """13 x F cepstral coefficient matrix for one 400 ms audio window."""

    coefficients: np.ndarray

    def __post_init__(self):
        if self.coefficients.shape != (MFCC_N_COEFFS, MFCC_FRAMES):
            raise ValueError(f"expected {MFCC_N_COEFFS}x{MFCC_FRAMES}, got {self.coefficients.shape}")


def parse_annotations(csv_text: str) -> list[AnnotationRecord]:
    """Parse AVA-style annotation CSV into records.

    Required columns: video_id, timestamp, x1, y1, x2, y2, label, entity_id.
    Coordinates outside [0,1] are clamped with a warning; rows with unknown
    labels, unparseable fields, or inverted coordinates are rejected with a
    warning carrying the 1-based line number. A missing column raises
    :class:`AnnotationFormatError`.
    """
    reader = csv.DictReader(io.StringIO(csv_text))
    if reader.fieldnames is None:
        raise AnnotationFormatError("empty annotation CSV")
    missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise AnnotationFormatError(f"missing columns: {', '.join(missing)}")

    records = []
    for line_no, row in enumerate(reader, start=2):
        try:
            timestamp = float(row["timestamp"])
            coords = [float(row[k]) for k in ("x1", "y1", "x2", "y2")]
        except (TypeError, ValueError) as exc:
            logger.warning("line %d: unparseable row (%s), rejected", line_no, exc)
            continue
        clamped = [min(1.0, max(0.0, v)) for v in coords]
        if clamped != coords:
            logger.warning("line %d: coordinates outside [0,1], clamped", line_no)
        x1, y1, x2, y2 = clamped
        if not (x1 < x2 and y1 < y2):
            logger.warning("line %d: coordinate order violated (x1<x2, y1<y2), rejected", line_no)
            continue
        try:
            label = SpeechLabel(row["label"])
        except ValueError:
            logger.warning("line %d: unknown label %r, rejected", line_no, row["label"])
            continue
        if timestamp < 0:
            logger.warning("line %d: negative timestamp, rejected", line_no)
            continue
        records.append(
            AnnotationRecord(
                video_id=row["video_id"],
                timestamp=timestamp,
                box=BoundingBox(x1, y1, x2, y2),
                label=label,
                entity_id=row["entity_id"],
            )
        )
    return records


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def expand_box(box: BoundingBox, factor: float = 1.3) -> BoundingBox:
    """Scale width and height by ``factor`` about the box center, clamped to [0,1]."""
    cx, cy = box.center
    hw = 0.5 * factor * box.width
    hh = 0.5 * factor * box.height
    return BoundingBox(
        max(0.0, cx - hw),
        max(0.0, cy - hh),
        min(1.0, cx + hw),
        min(1.0, cy + hh),
    )


def merge_tracks(tracks: Sequence[FaceTrack], threshold: float = 0.8) -> list[FaceTrack]:
    """Merge abutting tracks of one shot that belong to the same candidate.

    Two tracks merge when the later one starts exactly one frame after the
    earlier ends and the IoU between the earlier track's last box and the
    later track's first box is >= ``threshold``. Merging is transitive;
    output keeps chronological order. Temporally overlapping tracks with
    the same entity_id indicate corrupt input and raise ``ValueError``.
    """
    order = sorted(range(len(tracks)), key=lambda i: (tracks[i].first_frame, tracks[i].entity_id))
    ts = [tracks[i] for i in order]

    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            if ts[i].entity_id == ts[j].entity_id and ts[j].first_frame <= ts[i].last_frame:
                raise ValueError(
                    f"temporally overlapping tracks for entity {ts[i].entity_id!r}"
                )

    parent = list(range(len(ts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(ts)):
        for j in range(len(ts)):
            if i == j:
                continue
            a, b = ts[i], ts[j]
            if b.first_frame == a.last_frame + 1 and iou(a.box_at(a.last_frame), b.box_at(b.first_frame)) >= threshold:
                parent[find(j)] = find(i)

    groups: dict[int, list[FaceTrack]] = {}
    for i in range(len(ts)):
        groups.setdefault(find(i), []).append(ts[i])

    merged = []
    for members in groups.values():
        members.sort(key=lambda t: t.first_frame)
        head = members[0]
        if len(members) == 1:
            merged.append(head)
            continue
        merged.append(
            FaceTrack(
                entity_id=head.entity_id,
                first_frame=head.first_frame,
                boxes=np.concatenate([m.boxes for m in members]),
                crops=np.concatenate([np.asarray(m.crops[:]) for m in members]),
                labels_v=np.concatenate([m.labels_v for m in members]),
                labels_av=np.concatenate([m.labels_av for m in members]),
            )
        )
    merged.sort(key=lambda t: (t.first_frame, t.entity_id))
    return merged


def nearest_record_indices(
    timestamps: np.ndarray, fps: int, first_frame: int, n_frames: int
) -> np.ndarray:
    """Index of the temporally nearest record for each output frame.

    Frame t is evaluated at timestamp t/fps; ties break toward the earlier
    record. ``timestamps`` must be sorted ascending.
    """
    if len(timestamps) == 0:
        raise ValueError("no records to resample")
    frame_times = (np.arange(first_frame, first_frame + n_frames)) / float(fps)
    right = np.searchsorted(timestamps, frame_times, side="left")
    right = np.clip(right, 0, len(timestamps) - 1)
    left = np.clip(right - 1, 0, len(timestamps) - 1)
    d_left = np.abs(frame_times - timestamps[left])
    d_right = np.abs(timestamps[right] - frame_times)
    return np.where(d_left <= d_right, left, right)


def resample_labels(
    records: Sequence[AnnotationRecord],
    fps: int = DEFAULT_FPS,
    first_frame: int | None = None,
    n_frames: int | None = None,
) -> tuple[int, np.ndarray, np.ndarray]:
    """Nearest-neighbor resampling of one entity's labels onto the frame grid.

    Returns ``(first_frame, labels_v, labels_av)``. The default grid spans
    the records: frames round(min_ts*fps) .. round(max_ts*fps).
    """
    if not records:
        raise ValueError("no records to resample")
    recs = sorted(records, key=lambda r: r.timestamp)
    times = np.array([r.timestamp for r in recs])
    if first_frame is None:
        first_frame = int(round(times[0] * fps))
    if n_frames is None:
        n_frames = int(round(times[-1] * fps)) - first_frame + 1
    idx = nearest_record_indices(times, fps, first_frame, n_frames)
    labels_v = np.array([recs[i].label.visual for i in idx], dtype=np.uint8)
    labels_av = np.array([recs[i].label.audiovisual for i in idx], dtype=np.uint8)
    return first_frame, labels_v, labels_av


def _mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular mel filterbank over the positive-frequency FFT bins."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, mid):
            if mid > lo:
                fb[m - 1, k] = (k - lo) / (mid - lo)
        for k in range(mid, hi):
            if hi > mid:
                fb[m - 1, k] = (hi - k) / (hi - mid)
    return fb


_FILTERBANK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _filterbank(sample_rate: int, n_fft: int) -> np.ndarray:
    key = (sample_rate, n_fft, MFCC_N_MELS)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = _mel_filterbank(sample_rate, n_fft, MFCC_N_MELS)
    return _FILTERBANK_CACHE[key]


def mfcc_matrix(windows: np.ndarray, sample_rate: int) -> np.ndarray:
    """MFCCs for a batch of raw 400 ms windows, shape (B, samples) -> (B, 13, F)."""
    if sample_rate < MFCC_MIN_SAMPLE_RATE:
        raise ValueError(f"sample rate {sample_rate} below {MFCC_MIN_SAMPLE_RATE} Hz")
    win = int(round(MFCC_WIN_S * sample_rate))
    hop = int(round(MFCC_HOP_S * sample_rate))
    expected = int(round(MFCC_CONTEXT_S * sample_rate))
    if windows.shape[-1] != expected:
        raise ValueError(f"window must hold {expected} samples, got {windows.shape[-1]}")
    n_fft = 1 << (win - 1).bit_length()

    # frame the window: (B, F, win)
    starts = np.arange(MFCC_FRAMES) * hop
    frames = windows[..., starts[:, None] + np.arange(win)[None, :]]
    frames = frames * np.hamming(win)
    spectrum = np.abs(scipy.fft.rfft(frames, n=n_fft, axis=-1)) ** 2
    mel = spectrum @ _filterbank(sample_rate, n_fft).T
    logmel = np.log(np.maximum(mel, 1e-10))
    cepstra = scipy.fft.dct(logmel, type=2, axis=-1, norm="ortho")[..., :MFCC_N_COEFFS]
    # (B, F, 13) -> (B, 13, F)
    return np.swapaxes(cepstra, -1, -2)


def compute_mfcc(
    waveform: np.ndarray, sample_rate: int, end_time: float, audio_offset: float = 0.0
) -> MfccWindow:
    """MFCCs of the 400 ms window ending at ``end_time`` seconds.

    The window is zero-padded on the left when it starts before the
    waveform and on the right when the waveform ends early.
    """
    if end_time < 0:
        raise ValueError("end_time must be >= 0")
    if sample_rate < MFCC_MIN_SAMPLE_RATE:
        raise ValueError(f"sample rate {sample_rate} below {MFCC_MIN_SAMPLE_RATE} Hz")
    n = int(round(MFCC_CONTEXT_S * sample_rate))
    end = int(round((end_time - audio_offset) * sample_rate))
    window = np.zeros(n, dtype=np.float64)
    a = max(0, end - n)
    b = max(0, min(end, len(waveform)))
    if b > a:
        window[n - (end - a) : n - (end - b)] = waveform[a:b]
    return MfccWindow(mfcc_matrix(window[None, :], sample_rate)[0])


def scene_mfcc(scene: Scene) -> np.ndarray:
    """Per-frame MFCC windows for a scene, shape (T, 13, F).

    The window for frame t ends at (t+1)/fps, i.e. covers the 400 ms of
    audio up to the end of that frame. Cached on the scene object.
    """
    cached = getattr(scene, "_mfcc_cache", None)
    if cached is not None:
        return cached
    sr = scene.sample_rate
    n = int(round(MFCC_CONTEXT_S * sr))
    ends = ((np.arange(scene.n_frames) + 1) / scene.fps - scene.audio_offset) * sr
    ends = np.round(ends).astype(int)
    pad = np.concatenate([np.zeros(n, dtype=np.float64), scene.waveform.astype(np.float64)])
    max_end = ends.max() + n
    if max_end > len(pad):
        pad = np.concatenate([pad, np.zeros(max_end - len(pad))])
    windows = pad[ends[:, None] + np.arange(n)[None, :]]
    out = mfcc_matrix(windows, sr).astype(np.float32)
    scene._mfcc_cache = out
    return out


def chunk_for_inference(scene: Scene, max_frames: int) -> list[Scene]:
    """Split a scene into contiguous, non-overlapping slices of <= max_frames."""
    if max_frames < 28:
        raise ValueError("max_frames must be >= 28")
    if scene.n_frames <= max_frames:
        return [scene]
    return [
        scene.slice(a, min(a + max_frames, scene.n_frames))
        for a in range(0, scene.n_frames, max_frames)
    ]
