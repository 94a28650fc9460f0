"""Scene directory serialization.

One directory per scene:

    <scene>/metadata.json   fps, frame count, sample rate, entity list, ...
    <scene>/audio.wav       16-bit PCM mono
    <scene>/labels.csv      entity_id, frame_index, label_v, label_av, box
    <scene>/crops/<entity>/<frame>.png   144x144 face crops

Synthetic and ingested scenes share the format, so training code never
cares where a scene came from.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .ingest import CROP_SIZE, FaceTrack, Scene

_PCM_SCALE = 32767.0


def save_scene(scene: Scene, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    pcm = np.clip(np.asarray(scene.waveform, dtype=np.float64), -1.0, 1.0)
    quantized = np.rint(pcm * _PCM_SCALE).astype(np.int16)
    wavfile.write(directory / "audio.wav", scene.sample_rate, quantized)

    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_id", "frame_index", "label_v", "label_av", "x1", "y1", "x2", "y2"])
        for track in scene.tracks:
            for li, frame in enumerate(track.frame_indices):
                x1, y1, x2, y2 = track.boxes[li]
                writer.writerow(
                    [
                        track.entity_id,
                        int(frame),
                        int(track.labels_v[li]),
                        int(track.labels_av[li]),
                        f"{x1:.6f}",
                        f"{y1:.6f}",
                        f"{x2:.6f}",
                        f"{y2:.6f}",
                    ]
                )

    for track in scene.tracks:
        crop_dir = directory / "crops" / track.entity_id
        crop_dir.mkdir(parents=True, exist_ok=True)
        crops = np.asarray(track.crops[:])
        for li, frame in enumerate(track.frame_indices):
            Image.fromarray(crops[li]).save(crop_dir / f"{int(frame):05d}.png")

    meta = {
        "scene_id": scene.scene_id,
        "fps": scene.fps,
        "n_frames": scene.n_frames,
        "sample_rate": scene.sample_rate,
        "frame_size": list(scene.frame_size),
        "audio_offset": scene.audio_offset,
        "entities": [
            {"entity_id": t.entity_id, "first_frame": int(t.first_frame), "length": len(t)}
            for t in scene.tracks
        ],
    }
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_scene(directory: str | Path) -> Scene:
    directory = Path(directory)
    meta = json.loads((directory / "metadata.json").read_text())
    rate, pcm = wavfile.read(directory / "audio.wav")
    waveform = (pcm.astype(np.float32) / _PCM_SCALE).clip(-1.0, 1.0)

    rows: dict[str, list] = {}
    with open(directory / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["entity_id"], []).append(row)

    tracks = []
    for entry in meta["entities"]:
        eid = entry["entity_id"]
        entity_rows = sorted(rows.get(eid, []), key=lambda r: int(r["frame_index"]))
        if len(entity_rows) != entry["length"]:
            raise ValueError(f"scene {meta['scene_id']}: label rows for {eid} disagree with metadata")
        boxes = np.array(
            [[float(r["x1"]), float(r["y1"]), float(r["x2"]), float(r["y2"])] for r in entity_rows],
            dtype=np.float32,
        )
        labels_v = np.array([int(r["label_v"]) for r in entity_rows], dtype=np.uint8)
        labels_av = np.array([int(r["label_av"]) for r in entity_rows], dtype=np.uint8)
        crops = np.stack(
            [
                np.asarray(Image.open(directory / "crops" / eid / f"{int(r['frame_index']):05d}.png"))
                for r in entity_rows
            ]
        )
        if crops.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"scene {meta['scene_id']}: bad crop shape {crops.shape[1:]} for {eid}")
        tracks.append(
            FaceTrack(
                entity_id=eid,
                first_frame=entry["first_frame"],
                boxes=boxes,
                crops=crops,
                labels_v=labels_v,
                labels_av=labels_av,
            )
        )

    return Scene(
        scene_id=meta["scene_id"],
        tracks=tracks,
        waveform=waveform,
        sample_rate=int(rate),
        n_frames=int(meta["n_frames"]),
        fps=int(meta["fps"]),
        frame_size=tuple(meta["frame_size"]),
        audio_offset=float(meta.get("audio_offset", 0.0)),
    )


def save_dataset(scenes: list[Scene], root: str | Path, workers: int = 1) -> list[Path]:
    """Write one directory per scene under root, named by scene_id."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    targets = [(scene, root / scene.scene_id) for scene in scenes]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_save_one, targets))
    else:
        for item in targets:
            _save_one(item)
    return [path for _, path in targets]


def _save_one(item: tuple[Scene, Path]) -> None:
    save_scene(*item)


def load_dataset(root: str | Path) -> list[Scene]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if (p / "metadata.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no scene directories under {root}")
    return [load_scene(p) for p in dirs]
