"""Color-coded Gaussian head maps encoding candidate positions and scales.

Each visible candidate is rendered as an isotropic 2D Gaussian on a 64x64
grid in normalized frame coordinates. The self map for candidate i puts i
in the red+green channels (yellow) and everyone else in blue; the pair map
for an ordered pair (i, j) puts i in red, j in green, and the remaining
candidates in blue. Overlaps within a channel combine by pointwise max.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import BoundingBox

MAP_SIZE = 64
BOX_EXPANSION = 1.3


class MapRole(enum.Enum):
    SELF = "self"
    PAIR = "pair"


@dataclass(frozen=True)
class GaussianSpec:
    """Center (fractions of the frame) and radius (fraction of frame size)."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not (0.0 <= self.center[0] <= 1.0 and 0.0 <= self.center[1] <= 1.0):
            raise ValueError(f"center outside [0,1]^2: {self.center}")


@dataclass(frozen=True)
class HeadMap:
    pixels: np.ndarray  # (64, 64, 3) in [0, 1]
    role: MapRole
    subject: int
    object: int

    def __post_init__(self):
        if self.pixels.shape != (MAP_SIZE, MAP_SIZE, 3):
            raise ValueError(f"bad head map shape {self.pixels.shape}")


def gaussian_spec_for_box(box: BoundingBox, expansion: float = BOX_EXPANSION) -> GaussianSpec:
    """Spec for a face box: center at the box center, radius half the expanded width."""
    return GaussianSpec(center=box.center, radius=0.5 * expansion * box.width)


_COORDS = (np.arange(MAP_SIZE, dtype=np.float64) + 0.5) / MAP_SIZE


def render_gaussian(spec: GaussianSpec, size: int = MAP_SIZE) -> np.ndarray:
    """Single-channel map: exp(-d^2 / (2 sigma^2)) with sigma = spec.radius.

    Distances are measured in normalized coordinates from each pixel center
    to the Gaussian center; the grid row axis is y, the column axis is x.
    """
    coords = _COORDS if size == MAP_SIZE else (np.arange(size) + 0.5) / size
    cx, cy = spec.center
    dx2 = (coords - cx) ** 2
    dy2 = (coords - cy) ** 2
    d2 = dy2[:, None] + dx2[None, :]
    return np.exp(-d2 / (2.0 * spec.radius**2))


def _others_channel(specs, exclude: set[int]) -> np.ndarray:
    rest = [render_gaussian(s) for k, s in enumerate(specs) if k not in exclude]
    if not rest:
        return np.zeros((MAP_SIZE, MAP_SIZE))
    return np.max(rest, axis=0)


def build_pair_map(i: int, j: int, specs: list[GaussianSpec]) -> HeadMap:
    """Pair map H_ij: red = candidate i, green = candidate j, blue = the rest.

    ``build_pair_map(i, i)`` is the self map (subject in red and green).
    """
    n = len(specs)
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"candidate index out of range for {n} specs")
    g_i = render_gaussian(specs[i])
    g_j = g_i if i == j else render_gaussian(specs[j])
    blue = _others_channel(specs, {i, j})
    pixels = np.stack([g_i, g_j, blue], axis=-1)
    role = MapRole.SELF if i == j else MapRole.PAIR
    return HeadMap(pixels=pixels, role=role, subject=i, object=j)


def build_self_map(i: int, specs: list[GaussianSpec]) -> HeadMap:
    """Self map H_i: candidate i in yellow (red+green), all others in blue."""
    return build_pair_map(i, i, specs)


def render_scene_maps(
    centers: np.ndarray,
    radii: np.ndarray,
    present: np.ndarray,
    subjects: Sequence[int],
    pairs: list[tuple[int, int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-frame self and pair maps for a whole scene.

    ``centers`` is (N, T, 2) with (cx, cy), ``radii`` (N, T), ``present``
    (N, T) bool over all N scene candidates; absent candidates render as
    zero everywhere. Self maps are emitted for the ``subjects`` indices and
    pair maps for the canonical ``pairs`` (i < j), but the context (blue)
    channel always composites every other present candidate of the scene.
    Returns float32 arrays (len(subjects), T, 3, 64, 64) and
    (len(pairs), T, 3, 64, 64).
    """
    n, t = radii.shape
    coords = _COORDS.astype(np.float32)
    cx = centers[..., 0].astype(np.float32)[..., None, None]
    cy = centers[..., 1].astype(np.float32)[..., None, None]
    d2 = (coords[None, None, :, None] - cy) ** 2 + (coords[None, None, None, :] - cx) ** 2
    safe_r = np.where(present, np.maximum(radii, 1e-6), 1.0).astype(np.float32)[..., None, None]
    g = np.exp(-d2 / (2.0 * safe_r**2))
    g = np.where(present[..., None, None], g, np.float32(0.0))  # (N, T, 64, 64)

    self_maps = np.empty((len(subjects), t, 3, MAP_SIZE, MAP_SIZE), dtype=np.float32)
    pair_maps = np.empty((len(pairs), t, 3, MAP_SIZE, MAP_SIZE), dtype=np.float32)

    def rest_channel(exclude: list[int]) -> np.ndarray:
        rest = np.delete(g, exclude, axis=0)
        return rest.max(axis=0) if len(rest) else np.zeros_like(g[0])

    for k, i in enumerate(subjects):
        self_maps[k, :, 0] = g[i]
        self_maps[k, :, 1] = g[i]
        self_maps[k, :, 2] = rest_channel([i])
    for p, (i, j) in enumerate(pairs):
        pair_maps[p, :, 0] = g[i]
        pair_maps[p, :, 1] = g[j]
        pair_maps[p, :, 2] = rest_channel([i, j])
    return self_maps, pair_maps


def canonical_pairs(n: int) -> list[tuple[int, int]]:
    """Ordered (i, j) pairs with i < j; the only orientation ever rendered."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]
