"""Context-aware active speaker detection at desk scale.

A library for detecting which visible face is currently speaking, built
around three kinds of scene context: spatial (color-coded Gaussian head
maps of every candidate's position and scale), relational (permutation
equivariant pairwise reasoning plus cross-candidate audio-visual affinity
pooling), and temporal (convolutional or bidirectional recurrent sequence
backends). Includes ingestion for AVA-style annotations, a synthetic
audio-visual scene generator, a two-stage training curriculum, and a full
evaluation stack (mAP, AUROC, F1, DER, desync sweeps, breakdowns).
"""

from .config import EncoderConfig, ModelConfig, RelationalConfig, SynthConfig, TrainConfig
from .ingest import (
    AnnotationRecord,
    BoundingBox,
    FaceTrack,
    MfccWindow,
    Scene,
    SpeechLabel,
    chunk_for_inference,
    compute_mfcc,
    expand_box,
    iou,
    merge_tracks,
    parse_annotations,
    resample_labels,
)

__all__ = [
    "AnnotationRecord",
    "BoundingBox",
    "EncoderConfig",
    "FaceTrack",
    "MfccWindow",
    "ModelConfig",
    "RelationalConfig",
    "Scene",
    "SpeechLabel",
    "SynthConfig",
    "TrainConfig",
    "chunk_for_inference",
    "compute_mfcc",
    "expand_box",
    "iou",
    "merge_tracks",
    "parse_annotations",
    "resample_labels",
]

__version__ = "0.1.0"
