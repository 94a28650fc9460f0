"""Assembly of scenes from annotation CSVs plus pre-extracted media.

Expected media layout, one directory per (shot-scoped) video id:

    <media>/<video_id>/audio.wav
    <media>/<video_id>/<entity_id>/<frame>.png   144x144 crops at 25 fps

Shot segmentation and face detection are upstream concerns; each distinct
``video_id`` in the annotations becomes one scene.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .ingest import (
    AnnotationRecord,
    CROP_SIZE,
    DEFAULT_FPS,
    FaceTrack,
    Scene,
    merge_tracks,
    nearest_record_indices,
)

logger = logging.getLogger(__name__)


def _entity_track(
    records: list[AnnotationRecord], video_dir: Path, fps: int
) -> FaceTrack:
    recs = sorted(records, key=lambda r: r.timestamp)
    times = np.array([r.timestamp for r in recs])
    first = int(round(times[0] * fps))
    n = int(round(times[-1] * fps)) - first + 1
    idx = nearest_record_indices(times, fps, first, n)
    boxes = np.array([recs[i].box.as_array() for i in idx], dtype=np.float32)
    labels_v = np.array([recs[i].label.visual for i in idx], dtype=np.uint8)
    labels_av = np.array([recs[i].label.audiovisual for i in idx], dtype=np.uint8)

    eid = recs[0].entity_id
    crops = np.zeros((n, CROP_SIZE, CROP_SIZE, 3), dtype=np.uint8)
    for k, frame in enumerate(range(first, first + n)):
        path = video_dir / eid / f"{frame:05d}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing crop {path}")
        img = np.asarray(Image.open(path))
        if img.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"crop {path} has shape {img.shape}, expected ({CROP_SIZE},{CROP_SIZE},3)")
        crops[k] = img
    return FaceTrack(
        entity_id=eid, first_frame=first, boxes=boxes, crops=crops,
        labels_v=labels_v, labels_av=labels_av,
    )


def assemble_scenes(
    records: list[AnnotationRecord],
    media_dir: str | Path,
    fps: int = DEFAULT_FPS,
    merge_iou: float = 0.8,
    frame_size: tuple[int, int] = (640, 360),
) -> list[Scene]:
    """One scene per video id: merged tracks, shifted to frame origin 0."""
    if not records:
        raise ValueError("no records")
    media_dir = Path(media_dir)
    by_video: dict[str, dict[str, list[AnnotationRecord]]] = {}
    for rec in records:
        by_video.setdefault(rec.video_id, {}).setdefault(rec.entity_id, []).append(rec)

    scenes = []
    for video_id in sorted(by_video):
        video_dir = media_dir / video_id
        tracks = [
            _entity_track(recs, video_dir, fps) for _, recs in sorted(by_video[video_id].items())
        ]
        tracks = merge_tracks(tracks, threshold=merge_iou)
        origin = min(t.first_frame for t in tracks)
        n_frames = max(t.last_frame for t in tracks) - origin + 1
        for t in tracks:
            t.first_frame -= origin

        wav_path = video_dir / "audio.wav"
        if not wav_path.exists():
            raise FileNotFoundError(f"missing audio {wav_path}")
        rate, pcm = wavfile.read(wav_path)
        waveform = pcm.astype(np.float32)
        if pcm.dtype == np.int16:
            waveform /= 32767.0
        if waveform.ndim > 1:
            waveform = waveform.mean(axis=1)
        a = int(round(origin / fps * rate))
        b = int(round((origin + n_frames) / fps * rate))
        clip = waveform[a:b]
        if len(clip) < b - a:  # zero-pad audio that ends before the video
            clip = np.concatenate([clip, np.zeros((b - a) - len(clip), dtype=np.float32)])

        scenes.append(
            Scene(
                scene_id=video_id,
                tracks=tracks,
                waveform=clip,
                sample_rate=int(rate),
                n_frames=n_frames,
                fps=fps,
                frame_size=frame_size,
            )
        )
        logger.info(
            "scene %s: %d tracks, %d frames", video_id, len(tracks), n_frames
        )
    return scenes
