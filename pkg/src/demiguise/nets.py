"""Small CNN architectures for the desk-scale zoo and the perceptual backbone.

Three deliberately different classifier families (plain conv stack, residual,
depthwise-separable) plus a five-block feature backbone whose per-block
activations feed the perceptual distance. All take 3x32x32 inputs.
"""

from __future__ import annotations

import torch
from torch import nn


class PlainCNN(nn.Module):
    """VGG-flavored stack of 3x3 convolutions."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.ReLU(),
            nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(64, 128, 3, padding=1), nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.classifier = nn.Linear(128 * 4 * 4, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        return self.classifier(torch.flatten(h, 1))


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.act = nn.ReLU()
        if stride != 1 or cin != cout:
            self.skip: nn.Module = nn.Conv2d(cin, cout, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.conv1(x))
        h = self.conv2(h)
        return self.act(h + self.skip(x))


class SkipCNN(nn.Module):
    """Small residual network."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, 24, 3, padding=1), nn.ReLU())
        self.blocks = nn.Sequential(
            _ResBlock(24, 24),
            _ResBlock(24, 48, stride=2),
            _ResBlock(48, 96, stride=2),
        )
        self.head = nn.Linear(96, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.blocks(self.stem(x))
        h = torch.mean(h, dim=(2, 3))
        return self.head(h)


class _DWBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, 3, stride=stride, padding=1, groups=cin)
        self.pointwise = nn.Conv2d(cin, cout, 1)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.pointwise(self.act(self.depthwise(x))))


class DWCNN(nn.Module):
    """Depthwise-separable convolution network."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, 32, 3, padding=1), nn.ReLU())
        self.blocks = nn.Sequential(
            _DWBlock(32, 64),
            _DWBlock(64, 96, stride=2),
            _DWBlock(96, 128, stride=2),
            _DWBlock(128, 128),
        )
        self.head = nn.Linear(128, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.blocks(self.stem(x))
        h = torch.mean(h, dim=(2, 3))
        return self.head(h)


class PerceptualBackbone(nn.Module):
    """Five conv blocks; the activation after each block is a feature tap.

    ``forward`` returns logits (so the backbone can be trained as a
    classifier); ``taps`` returns the five per-block activation tensors.
    """

    TAP_CHANNELS = (16, 32, 64, 96, 128)

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.block1 = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(),
            nn.Conv2d(16, 16, 3, padding=1), nn.ReLU(),
        )
        self.block2 = nn.Sequential(
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(),
            nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(),
        )
        self.block3 = nn.Sequential(
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
        )
        self.block4 = nn.Sequential(
            nn.MaxPool2d(2),
            nn.Conv2d(64, 96, 3, padding=1), nn.ReLU(),
        )
        self.block5 = nn.Sequential(
            nn.MaxPool2d(2),
            nn.Conv2d(96, 128, 3, padding=1), nn.ReLU(),
        )
        self.head = nn.Linear(128, num_classes)

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        t1 = self.block1(x)
        t2 = self.block2(t1)
        t3 = self.block3(t2)
        t4 = self.block4(t3)
        t5 = self.block5(t4)
        return [t1, t2, t3, t4, t5]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.taps(x)[-1]
        return self.head(torch.mean(h, dim=(2, 3)))


ARCHITECTURES: dict[str, type[nn.Module]] = {
    "plain": PlainCNN,
    "residual": SkipCNN,
    "depthwise": DWCNN,
    "perceptual": PerceptualBackbone,
}


def build(arch: str, num_classes: int = 10) -> nn.Module:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture tag: {arch!r}")
    return ARCHITECTURES[arch](num_classes=num_classes)
