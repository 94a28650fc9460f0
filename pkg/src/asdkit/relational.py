"""Joint candidate refinement and prediction.

The visual branch refines each candidate by combining a shared
per-candidate activity net with a shared pairwise interaction net summed
over all co-occurring candidates and normalized by the per-frame candidate
count; because both nets share parameters across candidates/pairs, the map
is permutation equivariant and runs on any candidate count.

The pairwise net is skew-symmetric by construction, so only the canonical
orientation (i < j) is ever evaluated and the reverse is its exact
negation, which halves the evaluations to N(N+1)/2 per forward pass
(counting the N per-candidate activity evaluations). Structurally this
requires the net to be odd under swapping the pair presentation, not just
evaluated once: inputs are split into an even stream (feature sum plus a
swap-invariant head-map reading) that drives a gate through the temporal
backend, and an odd stream (feature difference plus the signed subject
minus object map channel) passed through a bias-free linear map; their
product flips sign exactly when the pair is presented in the opposite
order, which is also what makes the layer equivariant bit for bit.

The audio-visual branch scores each candidate's affinity with the audio
and can contrast it against an element-wise pooled global affinity so the
network can suppress candidates whose agreement is comparatively weak.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig, RelationalConfig
from .encoders import AudioEncoder, FaceTrackEncoder, HeadMapEncoder
from .features import Batch
from .headmap import canonical_pairs


class TemporalBackend(nn.Module):
    """Sequence transform shared by the context nets.

    ``conv1d``: two kernel-3 same-padded convolutions, each followed by
    batch normalization and ReLU (receptive field +-2 frames, output width
    equals input width). ``bigru``: one bidirectional recurrent layer whose
    forward and backward states concatenate to ``gru_cells`` features.
    """

    def __init__(self, dim: int, kind: str, gru_cells: int = 256):
        super().__init__()
        self.kind = kind
        if kind == "conv1d":
            self.conv1 = nn.Conv1d(dim, dim, 3, padding=1, bias=False)
            self.bn1 = nn.BatchNorm1d(dim)
            self.conv2 = nn.Conv1d(dim, dim, 3, padding=1, bias=False)
            self.bn2 = nn.BatchNorm1d(dim)
            self.out_dim = dim
        elif kind == "bigru":
            self.gru = nn.GRU(dim, gru_cells // 2, batch_first=True, bidirectional=True)
            self.out_dim = gru_cells
        else:
            raise ValueError(f"unknown temporal backend {kind!r}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, dim) -> (B, T, out_dim)."""
        if x.dim() != 3:
            raise ValueError(f"expected (B, T, D), got {tuple(x.shape)}")
        if self.kind == "conv1d":
            h = x.transpose(1, 2)
            h = torch.relu(self.bn1(self.conv1(h)))
            h = torch.relu(self.bn2(self.conv2(h)))
            return h.transpose(1, 2)
        out, _ = self.gru(x)
        return out


class ContextNet(nn.Module):
    """Per-frame embedding, temporal backend, and projection.

    One shared instance serves every candidate (or candidate pair), which
    is what makes the surrounding layer permutation equivariant.
    ``raw_eval_count`` tallies the number of candidate/pair slots that went
    through the raw network, for cost accounting.
    """

    def __init__(self, in_dim: int, hidden_dim: int, relational: RelationalConfig):
        super().__init__()
        self.embed = nn.Linear(in_dim, hidden_dim)
        self.backend = TemporalBackend(hidden_dim, relational.temporal_backend, relational.gru_cells)
        self.proj = nn.Linear(self.backend.out_dim, hidden_dim)
        self.raw_eval_count = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, items, T, in_dim) -> (B, items, T, hidden_dim)."""
        b, items, t, _ = x.shape
        self.raw_eval_count += b * items
        h = torch.relu(self.embed(x))
        h = h.reshape(b * items, t, -1)
        h = self.backend(h)
        h = h.reshape(b, items, t, -1)
        return self.proj(h)


class PairInteractionNet(nn.Module):
    """Skew-symmetric pairwise feature: even-stream gate times odd-stream projection.

    ``forward(even, odd)`` returns tanh(gate(even)) * W(odd). The gate may
    be arbitrarily nonlinear (it carries the temporal backend); ``W`` has
    no bias, so negating the odd stream negates the output exactly.
    """

    def __init__(self, even_dim: int, odd_dim: int, hidden_dim: int, relational: RelationalConfig):
        super().__init__()
        self.gate = ContextNet(even_dim, hidden_dim, relational)
        self.odd_proj = nn.Linear(odd_dim, hidden_dim, bias=False)

    @property
    def raw_eval_count(self) -> int:
        return self.gate.raw_eval_count

    @raw_eval_count.setter
    def raw_eval_count(self, value: int) -> None:
        self.gate.raw_eval_count = value

    def forward(self, even: torch.Tensor, odd: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.gate(even)) * self.odd_proj(odd)


class OddMapEncoder(nn.Module):
    """Odd (sign-equivariant) embedding of the signed subject-minus-object map.

    A bias-free linear readout of the pooled R-G channel: negating the map
    negates the embedding exactly, which the skew-symmetric pair net needs.
    """

    def __init__(self, out_dim: int, map_size: int = 64, pool: int = 8):
        super().__init__()
        self.pool = nn.AvgPool2d(pool)
        self.proj = nn.Linear((map_size // pool) ** 2, out_dim, bias=False)

    def forward(self, signed_map: torch.Tensor) -> torch.Tensor:
        """(B, T, 64, 64) -> (B, T, out_dim)."""
        b, t = signed_map.shape[:2]
        x = self.pool(signed_map.reshape(b * t, 1, *signed_map.shape[2:]))
        return self.proj(x.reshape(b, t, -1))


def symmetrize_pair_maps(maps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split raw (R, G, B) pair maps into swap-invariant and signed parts.

    Returns ``(even_maps, odd_map)`` where even
    = [max(R,G), min(R,G), B] is unchanged when the pair is presented in
    the opposite order and odd = R - G flips sign. Self maps (R == G) pass
    through even unchanged with a zero odd part.
    """
    r, g, b = maps[..., 0, :, :], maps[..., 1, :, :], maps[..., 2, :, :]
    even = torch.stack([torch.maximum(r, g), torch.minimum(r, g), b], dim=-3)
    return even, r - g


def suppression_pool(
    etas: torch.Tensor, mode: str, presence: torch.Tensor | None = None
) -> torch.Tensor:
    """Pool per-candidate affinity features into one global sequence.

    ``etas`` is (..., N, T, D); pooling runs over the candidate axis.
    ``max`` takes the element-wise maximum, ``mean`` the average; absent
    candidates (presence False) are excluded, and frames with nobody
    present pool to zero. ``none`` is rejected here: there is nothing to
    pool.
    """
    if mode == "none":
        raise ValueError("suppression mode 'none' skips pooling")
    if mode not in ("max", "mean"):
        raise ValueError(f"unknown suppression mode {mode!r}")
    if etas.shape[-3] == 0:
        raise ValueError("cannot pool an empty candidate set")
    if presence is None:
        presence = torch.ones(etas.shape[:-1], dtype=torch.bool, device=etas.device)
    mask = presence.unsqueeze(-1)
    any_present = mask.any(dim=-3)
    if mode == "max":
        pooled = etas.masked_fill(~mask, -1e30).max(dim=-3).values
    else:
        count = mask.sum(dim=-3).clamp(min=1)
        pooled = (etas * mask).sum(dim=-3) / count
    return torch.where(any_present, pooled, torch.zeros_like(pooled))


@dataclass
class ModelOutput:
    logits_av: torch.Tensor  # (B, N, T)
    logits_v: torch.Tensor  # (B, N, T)
    logits_a: torch.Tensor  # (B, T)
    visual: torch.Tensor  # (B, N, T, d') raw per-candidate visual features
    audio: torch.Tensor  # (B, T, d')
    r_v: torch.Tensor | None = None
    r_av: torch.Tensor | None = None


class SpeakerContextModel(nn.Module):
    """Full speaker detection model with switchable context modules.

    The contextual forward realizes the multi-candidate path (visual and
    audio-visual contextual representations feeding shared prediction
    heads); the non-contextual forward applies the same heads directly to
    the raw per-frame features, which is the single-candidate curriculum
    stage. Both paths share every head, so a stage-1 checkpoint continues
    seamlessly into stage-2 training.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        enc = config.encoder
        rel = config.relational
        d = enc.reduced_dim
        ds = enc.spatial_dim if config.spatial else 0
        hidden = rel.hidden_dim

        self.face_encoder = FaceTrackEncoder(enc)
        self.audio_encoder = AudioEncoder(enc)
        self.headmap_encoder = HeadMapEncoder(enc) if config.spatial else None

        self.activity_net = ContextNet(d + ds, hidden, rel)
        if config.use_relational:
            self.pair_net = PairInteractionNet(d + 2 * ds, d + 2 * ds, hidden, rel)
            self.odd_map_encoder = OddMapEncoder(ds) if config.spatial else None
        else:
            self.pair_net = None
            self.odd_map_encoder = None
        self.affinity_net = ContextNet(d + ds + d, hidden, rel)

        self.pooled_affinity = config.use_relational and rel.suppression != "none"
        refine_in = 2 * hidden if self.pooled_affinity else hidden
        self.refine = nn.Sequential(
            nn.Linear(refine_in, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, hidden)
        )

        self.audio_head = nn.Linear(d, 1)  # auxiliary audio activity
        self.visual_head = nn.Linear(hidden, 1)  # auxiliary visual activity, also visual-only scores
        self.av_head = nn.Linear(2 * hidden, 1)  # final audio-visual prediction

    # -- cost accounting ----------------------------------------------------
    def relational_eval_count(self) -> int:
        """Raw per-candidate + per-pair net evaluations since the last reset."""
        count = self.activity_net.raw_eval_count
        if self.pair_net is not None:
            count += self.pair_net.raw_eval_count
        return count

    def reset_relational_eval_count(self) -> None:
        self.activity_net.raw_eval_count = 0
        if self.pair_net is not None:
            self.pair_net.raw_eval_count = 0

    # -- pieces ---------------------------------------------------------------
    def _effective_visual(self, batch: Batch, v: torch.Tensor) -> torch.Tensor:
        """Late fusion: concatenate head-map embeddings onto the visual features."""
        if not self.config.spatial:
            return v
        if batch.self_maps is None:
            raise ValueError("spatial context enabled but batch carries no head maps")
        b, n, t = v.shape[:3]
        h_self = self.headmap_encoder(batch.self_maps.reshape(b * n, t, 3, 64, 64))
        return torch.cat([v, h_self.reshape(b, n, t, -1)], dim=-1)

    def _pair_streams(
        self, v_i: torch.Tensor, v_j: torch.Tensor, raw_maps: torch.Tensor | None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Even and odd pair-net inputs for stacked pairs (..., T, dv)."""
        even_parts = [v_i + v_j]
        odd_parts = [v_i - v_j]
        if self.config.spatial:
            if raw_maps is None:
                raise ValueError("spatial context enabled but no pair maps given")
            even_maps, odd_map = symmetrize_pair_maps(raw_maps)
            shape = even_maps.shape  # (..., 3, 64, 64)
            flat = even_maps.reshape(-1, *shape[-4:])
            h_even = self.headmap_encoder(flat).reshape(*shape[:-3], -1)
            h_odd = self.odd_map_encoder(odd_map.reshape(-1, *odd_map.shape[-3:]))
            h_odd = h_odd.reshape(*odd_map.shape[:-2], -1)
            even_parts.append(h_even)
            odd_parts.append(h_odd)
        return torch.cat(even_parts, dim=-1), torch.cat(odd_parts, dim=-1)

    def pairwise_feature(
        self, v_eff: torch.Tensor, pair_maps: torch.Tensor | None, i: int, j: int
    ) -> torch.Tensor:
        """Interaction feature for ordered pair (i, j) under the skew rule.

        ``v_eff`` is (N, T, dv); ``pair_maps`` holds the rendered maps for
        the canonical pairs of range(N) in `canonical_pairs` order, shape
        (P, T, 3, 64, 64) (or None without spatial context). Only the
        canonical orientation runs the raw net; the reverse is its exact
        negation.
        """
        if i == j:
            raise ValueError("pair feature requires two distinct candidates")
        if self.pair_net is None:
            raise ValueError("relational context disabled")
        n = v_eff.shape[0]
        a, b = (i, j) if i < j else (j, i)
        p = canonical_pairs(n).index((a, b))
        maps = pair_maps[p][None, None] if self.config.spatial else None
        even, odd = self._pair_streams(v_eff[a][None, None], v_eff[b][None, None], maps)
        raw = self.pair_net(even, odd)[0, 0]
        return raw if i < j else -raw

    def _visual_context(self, batch: Batch, v_eff: torch.Tensor) -> torch.Tensor:
        b, n, t, _ = v_eff.shape
        alpha = self.activity_net(v_eff)
        mask = batch.presence.unsqueeze(-1).to(v_eff.dtype)
        if not self.config.use_relational:
            return alpha * mask
        r = alpha * mask
        pairs = canonical_pairs(n)
        if pairs:
            i_idx = torch.tensor([p[0] for p in pairs])
            j_idx = torch.tensor([p[1] for p in pairs])
            maps = batch.pair_maps if self.config.spatial else None
            even, odd = self._pair_streams(v_eff[:, i_idx], v_eff[:, j_idx], maps)
            beta = self.pair_net(even, odd)
            valid = (batch.presence[:, i_idx] & batch.presence[:, j_idx]).unsqueeze(-1)
            beta = beta * valid.to(beta.dtype)
            r = r.index_add(1, i_idx, beta)
            r = r.index_add(1, j_idx, -beta)
        n_t = batch.presence.sum(dim=1).clamp(min=1).to(v_eff.dtype)
        return r / n_t.reshape(b, 1, t, 1)

    def _av_context(self, batch: Batch, v_eff: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        b, n, t, _ = v_eff.shape
        a_rep = a.unsqueeze(1).expand(b, n, t, a.shape[-1])
        eta = self.affinity_net(torch.cat([v_eff, a_rep], dim=-1))
        if self.pooled_affinity:
            pooled = suppression_pool(eta, self.config.relational.suppression, batch.presence)
            eta = torch.cat([eta, pooled.unsqueeze(1).expand_as(eta)], dim=-1)
        return self.refine(eta)

    # -- forward ----------------------------------------------------------------
    def forward(self, batch: Batch, contextual: bool = True) -> ModelOutput:
        b, n, t = batch.crops.shape[:3]
        v = self.face_encoder(batch.crops.reshape(b * n, t, *batch.crops.shape[3:]))
        v = v.reshape(b, n, t, -1)
        a = self.audio_encoder(batch.mfcc)
        logits_a = self.audio_head(a).squeeze(-1)

        if not contextual:
            a_rep = a.unsqueeze(1).expand(b, n, t, a.shape[-1])
            logits_v = self.visual_head(v).squeeze(-1)
            logits_av = self.av_head(torch.cat([a_rep, v], dim=-1)).squeeze(-1)
            return ModelOutput(logits_av=logits_av, logits_v=logits_v, logits_a=logits_a, visual=v, audio=a)

        v_eff = self._effective_visual(batch, v)
        r_v = self._visual_context(batch, v_eff)
        r_av = self._av_context(batch, v_eff, a)
        logits_v = self.visual_head(r_v).squeeze(-1)
        logits_av = self.av_head(torch.cat([r_v, r_av], dim=-1)).squeeze(-1)
        return ModelOutput(
            logits_av=logits_av, logits_v=logits_v, logits_a=logits_a,
            visual=v, audio=a, r_v=r_v, r_av=r_av,
        )

    @torch.no_grad()
    def predict(self, batch: Batch) -> torch.Tensor:
        """Per-candidate speaking probabilities, (B, N, T) in (0, 1)."""
        return torch.sigmoid(self.forward(batch, contextual=True).logits_av)

    @torch.no_grad()
    def predict_visual_only(self, batch: Batch) -> torch.Tensor:
        """Probabilities from the auxiliary visual head alone; ignores audio."""
        return torch.sigmoid(self.forward(batch, contextual=True).logits_v)


def build_model(config: ModelConfig) -> SpeakerContextModel:
    return SpeakerContextModel(config)
