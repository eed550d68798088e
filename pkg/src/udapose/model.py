"""Simple-Baseline style pose network: strided conv encoder + deconvolution head."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn

from .heatmap import ConfigError

PRESETS = {
    # name: (encoder widths, convs per stage, deconv width)
    "wide": ((64, 128, 256, 512), 2, 256),
    "desk": ((32, 64, 128, 256), 2, 128),
    "tiny": ((16, 32, 64, 128), 2, 32),
    "linear": ((4,), 1, 4),
}


@dataclass
class PoseNetConfig:
    input_size: int = 256
    heatmap_size: int = 64
    num_keypoints: int = 18
    preset: str = "desk"
    deconv_stages: int = 3

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        n_stages = len(PRESETS[self.preset][0])
        total = self.input_size * 2 ** self.deconv_stages / self.heatmap_size
        if total == 2 ** n_stages:
            self.stem_stride = 1
        elif total == 2 ** (n_stages + 1):
            self.stem_stride = 2
        else:
            raise ConfigError(
                f"input {self.input_size} with {n_stages} stages and {self.deconv_stages} deconvolutions "
                f"cannot produce a {self.heatmap_size} heatmap")

    @property
    def stride(self) -> int:
        return self.input_size // self.heatmap_size


def _bn_relu(c):
    return [nn.BatchNorm2d(c), nn.ReLU(inplace=True)]


class PoseNet(nn.Module):
    """Maps ``(B, 3, S, S)`` images to raw ``(B, K, S/stride, S/stride)`` heatmaps.

    No activation is applied to the output.
    """

    def __init__(self, config: PoseNetConfig):
        super().__init__()
        self.config = config
        widths, depth, dw = PRESETS[config.preset]
        layers, cin = [], 3
        if config.stem_stride == 2:
            layers += [nn.Conv2d(3, widths[0], 3, stride=2, padding=1, bias=False), *_bn_relu(widths[0])]
            cin = widths[0]
        for w in widths:
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1, bias=False), *_bn_relu(w)]
            for _ in range(depth - 1):
                layers += [nn.Conv2d(w, w, 3, padding=1, bias=False), *_bn_relu(w)]
            cin = w
        self.encoder = nn.Sequential(*layers)
        head = []
        for _ in range(config.deconv_stages):
            head += [nn.ConvTranspose2d(cin, dw, 4, stride=2, padding=1, bias=False), *_bn_relu(dw)]
            cin = dw
        self.deconv = nn.Sequential(*head)
        self.final = nn.Conv2d(cin, config.num_keypoints, 1)

    def forward(self, x):
        s = self.config.input_size
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected a (B, 3, {s}, {s}) batch, got {tuple(x.shape)}")
        return self.final(self.deconv(self.encoder(x)))


def build_model(config: PoseNetConfig, seed: int = None) -> PoseNet:
    if seed is not None:
        torch.manual_seed(seed)
    return PoseNet(config)


def forward(state: PoseNet, img_batch: torch.Tensor) -> torch.Tensor:
    """Raw heatmaps for a batch; obeys the model's current train/eval mode."""
    return state(img_batch)


def clone_state(state: PoseNet) -> PoseNet:
    """Independent deep copy (parameters, buffers and mode)."""
    return copy.deepcopy(state)


def state_tensors(state: nn.Module, prefix: str = "") -> dict:
    return {prefix + k: v for k, v in state.state_dict().items()}


def load_state_tensors(state: nn.Module, tensors: dict, prefix: str = "") -> None:
    sd = {k[len(prefix):]: torch.as_tensor(v) for k, v in tensors.items() if k.startswith(prefix)}
    state.load_state_dict(sd)
