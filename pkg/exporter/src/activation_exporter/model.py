"""Seeded reference networks and their capture points.

Weights are drawn once from a fixed seed at construction, so the "pretrained"
model ships inside the package: no downloads, and every export of the same
model id sees identical parameters. Capture points are the post-activation
tensors (the output of a named ReLU), which is what a downstream quantizer
consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

WEIGHT_SEED = 90921
INPUT_SEED = 41853


class ResidualBlock(nn.Module):
    """conv-relu-conv plus a (projected) skip, ReLU on the sum."""

    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.relu_mid = nn.ReLU()
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = (nn.Identity() if cin == cout and stride == 1
                     else nn.Conv2d(cin, cout, 1, stride=stride))
        self.relu_out = nn.ReLU()

    def forward(self, x):
        h = self.relu_mid(self.conv1(x))
        return self.relu_out(self.conv2(h) + self.skip(x))


class TinyResNet(nn.Module):
    """Stem, two residual stages, convolutional head: CIFAR10-scale inputs."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Conv2d(3, 16, 3, padding=1)
        self.stem_relu = nn.ReLU()
        self.block1 = ResidualBlock(16, 16, 1)
        self.block2 = ResidualBlock(16, 32, 2)
        self.head = nn.Conv2d(32, 64, 3, stride=2, padding=1)
        self.head_relu = nn.ReLU()

    def forward(self, x):
        h = self.stem_relu(self.stem(x))
        h = self.block1(h)
        h = self.block2(h)
        return self.head_relu(self.head(h))


@dataclass(frozen=True)
class ModelEntry:
    build: type[nn.Module]
    input_shape: tuple[int, int, int]  # (channels, height, width)
    captures: dict[str, str]  # capture point name -> module path of its ReLU


MODELS: dict[str, ModelEntry] = {
    "resnet-tiny": ModelEntry(
        build=TinyResNet,
        input_shape=(3, 32, 32),
        captures={
            "stem_relu": "stem_relu",
            "block1_relu": "block1.relu_out",
            "block2_relu": "block2.relu_out",
            "head_relu": "head_relu",
        },
    ),
}


def build_model(model_id: str) -> nn.Module:
    """Construct the model with its fixed seeded weights, in eval mode."""
    entry = MODELS[model_id]
    # Global seeding covers every parameter draw in construction order.
    torch.manual_seed(WEIGHT_SEED)
    model = entry.build()
    model.eval()
    return model


def input_sample(model_id: str, index: int) -> torch.Tensor:
    """Deterministic input number `index` (1-based) of the canonical stream.

    Sample `index` depends only on the index, never on how many samples an
    export requests, so any export sees the same first N inputs. Values mimic
    whitened image data.
    """
    import numpy as np

    shape = MODELS[model_id].input_shape
    rng = np.random.default_rng((INPUT_SEED, index))
    arr = rng.standard_normal(shape, dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0)
