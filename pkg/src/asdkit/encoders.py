"""Per-frame feature encoders for face-crop stacks, MFCC windows, and head maps.

The face encoder consumes, at every time step, a stack of k consecutive
crops centered on that step (replicate-padded at track boundaries) and
emits one reduced vector per frame; audio and head-map encoders map their
per-frame inputs through a shared backbone the same way. The default toy
backbones are small enough to train on a single CPU core; resnet18
variants are available for full-fidelity runs.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig
from .headmap import MAP_SIZE
from .ingest import MFCC_FRAMES, MFCC_N_COEFFS


def _conv_bn(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
    # bias omitted: batch normalization immediately cancels it
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ToyFaceBackbone(nn.Module):
    """Three-layer CNN over the k-frame crop stack.

    Each frame is downsampled and embedded independently; a depth-k 3D
    convolution then mixes the stack (the only layer that sees neighboring
    frames, so the temporal receptive field is exactly the centered
    k-stack); a final per-frame convolution plus global average pooling
    yields the pooled feature vector.
    """

    def __init__(self, stack_size: int, feature_dim: int, channels: tuple[int, int] = (12, 24)):
        super().__init__()
        self.stack_size = stack_size
        c1, c2 = channels
        self.pool = nn.AvgPool2d(8)
        self.frame_conv = _conv_bn(3, c1, 2)
        self.stack_conv = nn.Conv3d(
            c1, c2, (stack_size, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1), bias=False
        )
        self.stack_bn = nn.BatchNorm3d(c2)
        self.out_conv = _conv_bn(c2, feature_dim, 2)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, S, S) -> (B, T, feature_dim)."""
        b, t = crops.shape[:2]
        x = crops.reshape(b * t, *crops.shape[2:])
        x = self.frame_conv(self.pool(x))
        hw = x.shape[2:]
        x = x.reshape(b, t, -1, *hw).permute(0, 2, 1, 3, 4)  # (B, C, T, H, W)
        half = self.stack_size // 2
        x = F.pad(x, (0, 0, 0, 0, half, half), mode="replicate")
        x = F.relu(self.stack_bn(self.stack_conv(x)))
        x = x.permute(0, 2, 1, 3, 4).reshape(b * t, x.shape[1], *x.shape[3:])
        x = self.out_conv(x)
        x = x.mean(dim=(2, 3))
        return x.reshape(b, t, -1)


class ResNetFaceBackbone(nn.Module):
    """resnet18 with a widened stem taking the k-stack along the channel axis."""

    def __init__(self, stack_size: int, feature_dim: int):
        super().__init__()
        if feature_dim != 512:
            raise ValueError("resnet18 face backbone pools to 512 features")
        from torchvision.models import resnet18

        self.stack_size = stack_size
        net = resnet18(weights=None)
        net.conv1 = nn.Conv2d(3 * stack_size, 64, 7, stride=2, padding=3, bias=False)
        net.fc = nn.Identity()
        self.net = net

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        b, t = crops.shape[:2]
        half = self.stack_size // 2
        idx = torch.arange(t, device=crops.device)
        stacks = []
        for off in range(-half, half + 1):
            stacks.append(crops[:, (idx + off).clamp(0, t - 1)])
        x = torch.cat(stacks, dim=2)  # (B, T, 3k, S, S)
        x = x.reshape(b * t, *x.shape[2:])
        return self.net(x).reshape(b, t, -1)


class AudioBackboneToy(nn.Module):
    def __init__(self, feature_dim: int, channels: tuple[int, int] = (8, 16)):
        super().__init__()
        c1, c2 = channels
        self.input_norm = nn.BatchNorm2d(1)
        self.first = nn.Conv2d(1, c1, 3, stride=2, padding=1, bias=False)
        self.net = nn.Sequential(
            nn.BatchNorm2d(c1),
            nn.ReLU(inplace=True),
            _conv_bn(c1, c2, 2),
            _conv_bn(c2, feature_dim, 2),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.net(self.first(self.input_norm(x)))
        return x.mean(dim=(2, 3))


class AudioBackboneResNet(nn.Module):
    def __init__(self, feature_dim: int):
        super().__init__()
        if feature_dim != 512:
            raise ValueError("resnet18 audio backbone pools to 512 features")
        from torchvision.models import resnet18

        self.input_norm = nn.BatchNorm2d(1)
        net = resnet18(weights=None)
        net.conv1 = nn.Conv2d(1, 64, 7, stride=2, padding=3, bias=False)
        net.fc = nn.Identity()
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(self.input_norm(x))


class FaceTrackEncoder(nn.Module):
    """Crop sequence -> (T, reduced_dim) visual features, shared over candidates."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.face_backbone == "toy_cnn":
            self.backbone = ToyFaceBackbone(config.stack_size, config.feature_dim, tuple(config.face_channels))
        else:
            self.backbone = ResNetFaceBackbone(config.stack_size, config.feature_dim)
        self.reduce = nn.Linear(config.feature_dim, config.reduced_dim)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, S, S) float crops in [0,1] -> (B, T, reduced_dim)."""
        s = self.config.crop_size
        if crops.dim() != 5 or crops.shape[2] != 3 or crops.shape[3:] != (s, s):
            raise ValueError(f"expected (B, T, 3, {s}, {s}) crops, got {tuple(crops.shape)}")
        return self.reduce(self.backbone(crops - 0.5))


class AudioEncoder(nn.Module):
    """MFCC windows -> (T, reduced_dim) audio features, shared over time."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.audio_backbone == "toy_cnn":
            self.backbone = AudioBackboneToy(config.feature_dim, tuple(config.audio_channels))
        else:
            self.backbone = AudioBackboneResNet(config.feature_dim)
        self.reduce = nn.Linear(config.feature_dim, config.reduced_dim)

    def forward(self, mfcc: torch.Tensor) -> torch.Tensor:
        """(B, T, 13, F) -> (B, T, reduced_dim)."""
        if mfcc.dim() != 4 or mfcc.shape[2:] != (MFCC_N_COEFFS, MFCC_FRAMES):
            raise ValueError(
                f"expected (B, T, {MFCC_N_COEFFS}, {MFCC_FRAMES}) windows, got {tuple(mfcc.shape)}"
            )
        b, t = mfcc.shape[:2]
        x = mfcc.reshape(b * t, 1, *mfcc.shape[2:])
        return self.reduce(self.backbone(x)).reshape(b, t, -1)


class HeadMapEncoder(nn.Module):
    """64x64x3 head maps -> spatial embeddings, one shared net for self and pair maps."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        d = config.spatial_dim
        c1, c2, c3 = config.headmap_channels
        self.net = nn.Sequential(
            nn.AvgPool2d(2),
            _conv_bn(3, c1, 2),
            _conv_bn(c1, c2, 2),
            _conv_bn(c2, c3, 2),
            _conv_bn(c3, d, 2),
        )

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, 64, 64) -> (B, T, spatial_dim)."""
        if maps.dim() != 5 or maps.shape[2:] != (3, MAP_SIZE, MAP_SIZE):
            raise ValueError(f"expected (B, T, 3, {MAP_SIZE}, {MAP_SIZE}) maps, got {tuple(maps.shape)}")
        b, t = maps.shape[:2]
        x = maps.reshape(b * t, *maps.shape[2:])
        return self.net(x).mean(dim=(2, 3)).reshape(b, t, -1)
