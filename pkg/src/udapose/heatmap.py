"""Gaussian heatmaps: generation, argmax decoding, normalization and MSE losses.

Coordinates follow the pixel-index convention: pixel ``i`` has coordinate
``i`` and heatmap cell ``c`` corresponds to image coordinate ``c * stride``.
Heatmaps are arrays shaped ``(K, H', W')`` or batched ``(B, K, H', W')``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

# Incremented whenever a loss is evaluated with every channel masked out.
DIAGNOSTICS: Counter = Counter()


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


@dataclass
class KeypointAnnotation:
    """K keypoints as ``(x, y)`` pixel coordinates plus visibility flags."""

    coords: np.ndarray
    visible: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if self.visible is None:
            self.visible = np.ones(len(self.coords), dtype=bool)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if len(self.coords) < 1:
            raise ValueError("an annotation needs at least one keypoint")
        if len(self.visible) != len(self.coords):
            raise ValueError("coords and visibility disagree on K")

    @property
    def num_keypoints(self) -> int:
        return len(self.coords)

    def validate(self, image_size) -> None:
        w, h = image_size
        xy = self.coords[self.visible]
        if np.any(xy[:, 0] < 0) or np.any(xy[:, 0] >= w) or np.any(xy[:, 1] < 0) or np.any(xy[:, 1] >= h):
            raise ValueError(f"visible keypoint outside the {w}x{h} image")


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 2.0
    truncation_radius: float = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius is None:
            object.__setattr__(self, "truncation_radius", float(math.ceil(3 * self.sigma)))
        if self.truncation_radius < 3 * self.sigma:
            raise ConfigError("truncation_radius must be at least 3 * sigma")

    @property
    def reach(self) -> int:
        """Largest integer cell offset with nonzero value along one axis."""
        return int(math.floor(self.truncation_radius))


def _stride(image_size, out_size):
    (w, h), (ho, wo) = image_size, out_size
    return w / wo, h / ho


def _kernel(spec: GaussianSpec) -> np.ndarray:
    r = spec.reach
    d = np.arange(-r, r + 1, dtype=np.float64)
    d2 = d[None, :] ** 2 + d[:, None] ** 2
    k = np.exp(-d2 / (2.0 * spec.sigma ** 2))
    k[d2 > spec.truncation_radius ** 2] = 0.0
    return k


def gaussian_channel_mass(spec: GaussianSpec) -> float:
    """Sum of one Gaussian channel whose support lies wholly inside the grid."""
    return float(_kernel(spec).sum())


def gaussian_channel_mean(spec: GaussianSpec, out_size) -> float:
    return gaussian_channel_mass(spec) / float(out_size[0] * out_size[1])


def quantize(coords, image_size, out_size) -> np.ndarray:
    """Map image coordinates ``(..., 2)`` to integer heatmap cells ``(..., 2)``."""
    sx, sy = _stride(image_size, out_size)
    coords = np.asarray(coords, dtype=np.float64)
    scaled = np.stack([coords[..., 0] / sx, coords[..., 1] / sy], axis=-1)
    return np.floor(scaled + 0.5).astype(np.int64)


def interior_cells(cells, spec: GaussianSpec, out_size) -> np.ndarray:
    """True where a Gaussian centred on ``cells`` is not clipped by the grid."""
    ho, wo = out_size
    r = spec.reach
    cx, cy = cells[..., 0], cells[..., 1]
    return (cx >= r) & (cx <= wo - 1 - r) & (cy >= r) & (cy <= ho - 1 - r)


def render_gaussians(cells, valid, out_size, spec: GaussianSpec) -> np.ndarray:
    """Unit-peak truncated Gaussians at integer ``cells`` of shape ``(..., K, 2)``.

    Channels whose ``valid`` flag is false or whose cell falls outside the
    grid are all zero.
    """
    cells = np.asarray(cells, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    lead = cells.shape[:-1]
    ho, wo = out_size
    out = np.zeros(lead + (ho, wo), dtype=np.float64)
    flat_out = out.reshape(-1, ho, wo)
    flat_cells = cells.reshape(-1, 2)
    flat_valid = valid.reshape(-1)
    kern = _kernel(spec)
    r = spec.reach
    for i, ((cx, cy), ok) in enumerate(zip(flat_cells, flat_valid)):
        if not ok or cx < 0 or cy < 0 or cx >= wo or cy >= ho:
            continue
        x0, x1 = max(cx - r, 0), min(cx + r + 1, wo)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, ho)
        flat_out[i, y0:y1, x0:x1] = kern[y0 - cy + r:y1 - cy + r, x0 - cx + r:x1 - cx + r]
    return out


def generate_heatmaps(coords, visible, out_size, spec: GaussianSpec, image_size):
    """Batched ground-truth heatmaps.

    Returns ``(heatmaps, in_bounds)``; ``in_bounds`` is false for keypoints
    that are invisible or quantize outside the grid, i.e. channels that must
    be masked out of the losses.
    """
    cells = quantize(coords, image_size, out_size)
    ho, wo = out_size
    inside = (cells[..., 0] >= 0) & (cells[..., 0] < wo) & (cells[..., 1] >= 0) & (cells[..., 1] < ho)
    valid = np.asarray(visible, dtype=bool) & inside
    return render_gaussians(cells, valid, out_size, spec), valid


def generate_heatmap(ann: KeypointAnnotation, out_size=(64, 64), spec: GaussianSpec = GaussianSpec(),
                     image_size=(256, 256)):
    """Ground-truth heatmap ``(K, H', W')`` for one annotation.

    Returns ``(heatmap, mask)`` where ``mask[k]`` is false when keypoint ``k``
    is invisible or lands outside the heatmap.
    """
    return generate_heatmaps(ann.coords, ann.visible, out_size, spec, image_size)


def argmax_cells(h) -> np.ndarray:
    """Per-channel argmax cell ``(x, y)``; ties go to the smallest row-major index."""
    h = np.asarray(h)
    ho, wo = h.shape[-2:]
    flat = h.reshape(h.shape[:-2] + (ho * wo,))
    idx = np.argmax(flat, axis=-1)
    return np.stack([idx % wo, idx // wo], axis=-1)


def cells_to_coords(cells, image_size, out_size) -> np.ndarray:
    sx, sy = _stride(image_size, out_size)
    cells = np.asarray(cells, dtype=np.float64)
    return np.stack([cells[..., 0] * sx, cells[..., 1] * sy], axis=-1)


def decode_heatmaps(h, image_size) -> np.ndarray:
    """Batched argmax decoding to image coordinates ``(..., K, 2)``."""
    h = np.asarray(h)
    return cells_to_coords(argmax_cells(h), image_size, h.shape[-2:])


def decode_heatmap(h, image_size=(256, 256)) -> KeypointAnnotation:
    h = np.asarray(h)
    coords = decode_heatmaps(h, image_size)
    return KeypointAnnotation(coords, np.ones(len(coords), dtype=bool))


def normalize_heatmaps(h, spec: GaussianSpec, image_size):
    """Batched normalization: regenerate a canonical Gaussian at each argmax.

    Returns ``(normalized, confidences)`` with ``confidences[..., k]`` the
    maximum activation of the input channel.
    """
    h = np.asarray(h, dtype=np.float64)
    out_size = h.shape[-2:]
    coords = decode_heatmaps(h, image_size)
    visible = np.ones(coords.shape[:-1], dtype=bool)
    normalized, _ = generate_heatmaps(coords, visible, out_size, spec, image_size)
    return normalized, h.max(axis=(-2, -1))


def normalize_heatmap(h, spec: GaussianSpec = GaussianSpec(), image_size=(256, 256)):
    """Normalize one ``(K, H', W')`` heatmap; see :func:`normalize_heatmaps`."""
    ann = decode_heatmap(h, image_size)
    h = np.asarray(h, dtype=np.float64)
    normalized, _ = generate_heatmap(ann, h.shape[-2:], spec, image_size)
    return normalized, h.max(axis=(-2, -1))


def mse_heatmap_loss(pred, target, channel_mask=None):
    """Mean squared error over the cells of unmasked channels.

    Works on numpy arrays and torch tensors alike (the result keeps the
    autograd graph for tensors). ``channel_mask`` has the heatmap's leading
    ``(B, K)`` or ``(K,)`` shape. With every channel masked the loss is 0.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    sq = diff * diff
    cells = pred.shape[-1] * pred.shape[-2]
    per_channel = sq.sum(-1).sum(-1)
    if channel_mask is None:
        n = int(np.prod(per_channel.shape))
        return per_channel.sum() / (n * cells)
    if hasattr(pred, "detach"):
        import torch

        weight = torch.as_tensor(np.asarray(channel_mask), dtype=pred.dtype, device=pred.device)
    else:
        weight = np.asarray(channel_mask, dtype=np.float64)
    if tuple(weight.shape) != tuple(per_channel.shape):
        raise ValueError("channel_mask does not match the heatmap's channel layout")
    n = float(weight.sum())
    if n == 0:
        DIAGNOSTICS["all_channels_masked"] += 1
        return (per_channel * weight).sum()
    return (per_channel * weight).sum() / (n * cells)
