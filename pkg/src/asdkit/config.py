"""Configuration dataclasses with JSON round-tripping.

``ModelConfig`` carries the ablation switches (spatial on/off, relational
on/off, temporal backend kind, suppression pooling kind) that span the
variant grid; ``TrainConfig`` and ``SynthConfig`` drive the curriculum and
the synthetic scene generator.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

FACE_BACKBONES = ("toy_cnn", "resnet18")
AUDIO_BACKBONES = ("toy_cnn", "resnet18")
TEMPORAL_BACKENDS = ("conv1d", "bigru")
SUPPRESSION_MODES = ("none", "mean", "max")


def _asdict(cfg) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = _asdict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


class _JsonMixin:
    def to_dict(self) -> dict[str, Any]:
        return _asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            v = data[f.name]
            if dataclasses.is_dataclass(f.type) or f.name in _NESTED:
                v = _NESTED[f.name].from_dict(v)
            elif isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


@dataclass
class EncoderConfig(_JsonMixin):
    face_backbone: str = "toy_cnn"
    audio_backbone: str = "toy_cnn"
    stack_size: int = 5  # consecutive face crops per time step, odd
    feature_dim: int = 64  # backbone pooled dim (512 for resnet18)
    reduced_dim: int = 64  # shared FC output per frame (128 for resnet18)
    spatial_dim: int = 64  # head-map embedding size
    crop_size: int = 128
    # toy backbone widths; shrink these for cheap gradient-check models
    face_channels: tuple[int, int] = (12, 24)
    audio_channels: tuple[int, int] = (8, 16)
    headmap_channels: tuple[int, int, int] = (8, 16, 32)

    def validate(self) -> "EncoderConfig":
        if self.face_backbone not in FACE_BACKBONES:
            raise ValueError(f"unknown face backbone {self.face_backbone!r}")
        if self.audio_backbone not in AUDIO_BACKBONES:
            raise ValueError(f"unknown audio backbone {self.audio_backbone!r}")
        if self.stack_size < 1 or self.stack_size % 2 == 0:
            raise ValueError("stack_size must be odd and >= 1")
        if self.reduced_dim > self.feature_dim:
            raise ValueError("reduced_dim must not exceed feature_dim")
        if min(self.feature_dim, self.reduced_dim, self.spatial_dim) < 1:
            raise ValueError("dims must be >= 1")
        return self


@dataclass
class RelationalConfig(_JsonMixin):
    suppression: str = "max"
    temporal_backend: str = "conv1d"
    hidden_dim: int = 64  # width of the context nets; must equal reduced_dim
    gru_cells: int = 256  # total Bi-GRU output size (both directions)

    def validate(self) -> "RelationalConfig":
        if self.suppression not in SUPPRESSION_MODES:
            raise ValueError(f"unknown suppression mode {self.suppression!r}")
        if self.temporal_backend not in TEMPORAL_BACKENDS:
            raise ValueError(f"unknown temporal backend {self.temporal_backend!r}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.gru_cells < 2 or self.gru_cells % 2 != 0:
            raise ValueError("gru_cells must be an even total over both directions")
        return self


@dataclass
class ModelConfig(_JsonMixin):
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    relational: RelationalConfig = field(default_factory=RelationalConfig)
    spatial: bool = True
    use_relational: bool = True

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.relational.validate()
        if self.relational.hidden_dim != self.encoder.reduced_dim:
            raise ValueError(
                "relational hidden_dim must equal encoder reduced_dim so the "
                "shared prediction heads fit both curriculum stages"
            )
        return self

    @classmethod
    def for_ablation(cls, spec: str, base: "ModelConfig | None" = None) -> "ModelConfig":
        """Build a config from an ablation string like '+S+R+T' or 'baseline'.

        S enables spatial context, R relational context, T switches the
        temporal backend from conv1d to bigru.
        """
        cfg = base if base is not None else cls()
        cfg = dataclasses.replace(
            cfg,
            encoder=dataclasses.replace(cfg.encoder),
            relational=dataclasses.replace(cfg.relational),
        )
        tokens = {t for t in spec.replace("+", " ").replace(",", " ").upper().split() if t}
        tokens.discard("BASELINE")
        unknown = tokens - {"S", "R", "T"}
        if unknown:
            raise ValueError(f"unknown ablation tokens: {sorted(unknown)}")
        cfg.spatial = "S" in tokens
        cfg.use_relational = "R" in tokens
        cfg.relational.temporal_backend = "bigru" if "T" in tokens else "conv1d"
        if not cfg.use_relational:
            cfg.relational.suppression = "none"
        return cfg.validate()

    def ablation_string(self) -> str:
        parts = []
        if self.spatial:
            parts.append("+S")
        if self.use_relational:
            parts.append("+R")
        if self.relational.temporal_backend == "bigru":
            parts.append("+T")
        return "".join(parts) if parts else "baseline"


@dataclass
class TrainConfig(_JsonMixin):
    stage: int = 1
    epochs: int = 10
    segment_frames: int = 28
    max_candidates: int = 3
    learning_rate: float = 3e-4
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    batch_scenes: int = 8
    seed: int = 0
    # augmentation switches
    augment: bool = True
    flip: bool = True
    corner_crop: bool = True
    jitter_brightness: float = 0.1
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2

    def validate(self) -> "TrainConfig":
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.segment_frames < 1 or self.max_candidates < 1:
            raise ValueError("segment_frames and max_candidates must be >= 1")
        if self.epochs < 1 or self.batch_scenes < 1:
            raise ValueError("epochs and batch_scenes must be >= 1")
        return self


@dataclass
class SynthConfig(_JsonMixin):
    n_scenes: int = 20
    candidates_range: tuple[int, int] = (2, 3)
    frames_range: tuple[int, int] = (50, 80)
    mean_turn_frames: int = 28
    turn_jitter_frames: int = 10
    silence_prob: float = 0.2
    overlap_prob: float = 0.0
    decoy_prob: float = 0.4
    visual_snr: float = 3.0
    audio_snr: float = 4.0
    saliency_bias: float = 0.75
    gaze_bias: float = 0.75
    scene_gain_range: tuple[float, float] = (1.0, 1.0)
    entry_exit_prob: float = 0.0
    sample_rate: int = 16000
    fps: int = 25
    frame_size: tuple[int, int] = (640, 360)
    seed: int = 0

    def validate(self) -> "SynthConfig":
        for name in ("silence_prob", "overlap_prob", "decoy_prob", "saliency_bias", "gaze_bias", "entry_exit_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.candidates_range[0] < 1 or self.candidates_range[0] > self.candidates_range[1]:
            raise ValueError("bad candidates_range")
        if self.frames_range[0] < 1 or self.frames_range[0] > self.frames_range[1]:
            raise ValueError("bad frames_range")
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if min(self.visual_snr, self.audio_snr) <= 0:
            raise ValueError("snr values must be positive (may be inf)")
        return self


_NESTED = {"encoder": EncoderConfig, "relational": RelationalConfig}
