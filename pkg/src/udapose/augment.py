"""Random augmentation, exact inverse warps for heatmaps and adaptive occlusion.

Images are channel-first ``(C, H, W)`` float arrays in ``[0, 1]`` (or
``(B, C, H, W)`` torch tensors inside the training loop). A
:class:`GeometricTransform` maps original pixel coordinates to augmented
ones; heatmaps are warped with the same map conjugated to the heatmap grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .heatmap import ConfigError, argmax_cells, cells_to_coords

COMPONENTS = ("translation", "scale", "color", "rotation", "shear")


@dataclass(frozen=True)
class GeometricTransform:
    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    scale: float = 1.0
    shear: float = 0.0

    def is_identity(self) -> bool:
        return self.rotation == 0 and tuple(self.translation) == (0.0, 0.0) and self.scale == 1 and self.shear == 0

    def matrix(self, image_size) -> np.ndarray:
        """3x3 map from original to augmented pixel coordinates of a ``(W, H)`` image."""
        w, h = image_size
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        a = math.radians(self.rotation)
        rot = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
        shear = np.array([[1, math.tan(math.radians(self.shear)), 0], [0, 1, 0], [0, 0, 1]])
        scale = np.diag([self.scale, self.scale, 1.0])
        to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
        back = np.array([[1, 0, cx + self.translation[0] * w], [0, 1, cy + self.translation[1] * h], [0, 0, 1]])
        m = back @ rot @ shear @ scale @ to_origin
        if abs(np.linalg.det(m[:2, :2])) <= 1e-6:
            raise ConfigError("augmentation produced a singular affine map")
        return m

    def heatmap_matrix(self, image_size, heatmap_size) -> np.ndarray:
        """The same map expressed in heatmap-grid coordinates."""
        w, h = image_size
        ho, wo = heatmap_size
        s = np.diag([wo / w, ho / h, 1.0])
        return s @ self.matrix(image_size) @ np.linalg.inv(s)

    def inverse_matrix(self, image_size) -> np.ndarray:
        return np.linalg.inv(self.matrix(image_size))


def transform_points(matrix, points) -> np.ndarray:
    """Apply a 3x3 affine map to ``(..., 2)`` points; no interpolation involved."""
    points = np.asarray(points, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    return points @ matrix[:2, :2].T + matrix[:2, 2]


@dataclass(frozen=True)
class PhotometricParams:
    factors: tuple = (1.0, 1.0, 1.0)

    def is_identity(self) -> bool:
        return all(f == 1.0 for f in self.factors)


@dataclass
class AugmentConfig:
    """Per-component ranges. Only components listed in ``enabled`` are drawn."""

    rotation: tuple = (-30.0, 30.0)
    translation: tuple = (-0.05, 0.05)
    scale: tuple = (0.8, 1.2)
    shear: tuple = (-10.0, 10.0)
    color: tuple = (0.8, 1.2)
    enabled: tuple = COMPONENTS

    def __post_init__(self):
        self.enabled = tuple(self.enabled)
        for name in self.enabled:
            if name not in COMPONENTS:
                raise ConfigError(f"unknown augmentation component {name!r}")
        for name in COMPONENTS:
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"augmentation range for {name} is inverted: ({lo}, {hi})")
            setattr(self, name, (float(lo), float(hi)))
        if self.scale[0] <= 0:
            raise ConfigError("scale range must be positive")


def sample_augmentation(rng: np.random.Generator, config: AugmentConfig):
    """Draw one ``(GeometricTransform, PhotometricParams)`` pair.

    Every component consumes its random numbers even when disabled, so that
    ablations over the enabled set see the same random stream.
    """
    rot = rng.uniform(*config.rotation)
    tx, ty = rng.uniform(*config.translation, size=2)
    sc = rng.uniform(*config.scale)
    sh = rng.uniform(*config.shear)
    col = rng.uniform(*config.color, size=3)
    on = set(config.enabled)
    geom = GeometricTransform(
        rotation=float(rot) if "rotation" in on else 0.0,
        translation=(float(tx), float(ty)) if "translation" in on else (0.0, 0.0),
        scale=float(sc) if "scale" in on else 1.0,
        shear=float(sh) if "shear" in on else 0.0,
    )
    photo = PhotometricParams(tuple(float(c) for c in col) if "color" in on else (1.0, 1.0, 1.0))
    return geom, photo


def _theta(src_to_dst: np.ndarray, in_hw, out_hw) -> np.ndarray:
    """Affine-grid theta sampling the input at ``dst_to_src`` for each output pixel."""
    hi, wi = in_hw
    ho, wo = out_hw
    # pixel index -> normalized coordinates with align_corners=True
    n_in = np.array([[2.0 / max(wi - 1, 1), 0, -1], [0, 2.0 / max(hi - 1, 1), -1], [0, 0, 1]])
    n_out = np.array([[2.0 / max(wo - 1, 1), 0, -1], [0, 2.0 / max(ho - 1, 1), -1], [0, 0, 1]])
    dst_to_src = np.linalg.inv(src_to_dst)
    return (n_in @ dst_to_src @ np.linalg.inv(n_out))[:2]


def warp(x: torch.Tensor, matrices) -> torch.Tensor:
    """Warp a ``(B, C, H, W)`` batch by per-sample ``src -> dst`` pixel maps.

    Bilinear sampling with zero fill outside the source. Differentiable in
    ``x``.
    """
    hw = tuple(x.shape[-2:])
    thetas = np.stack([_theta(np.asarray(m), hw, hw) for m in matrices])
    theta = torch.as_tensor(thetas, dtype=x.dtype, device=x.device)
    grid = F.affine_grid(theta, list(x.shape), align_corners=True)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=True)


def _as_batch(a):
    was_numpy = not isinstance(a, torch.Tensor)
    t = torch.as_tensor(np.asarray(a, dtype=np.float64)) if was_numpy else a
    return t.unsqueeze(0), was_numpy


def apply_photometric(img, p: PhotometricParams):
    factors = np.asarray(p.factors, dtype=np.float64)
    if isinstance(img, torch.Tensor):
        f = torch.as_tensor(factors, dtype=img.dtype, device=img.device).view(-1, 1, 1)
        return (img * f).clamp(0.0, 1.0)
    return np.clip(img * factors[:, None, None], 0.0, 1.0)


def apply_to_image(t: GeometricTransform, p: PhotometricParams, img):
    """Warp a ``(C, H, W)`` image by ``t`` (bilinear, zero fill), then apply ``p``."""
    if t.is_identity():
        out = img.clone() if isinstance(img, torch.Tensor) else np.array(img, copy=True)
    else:
        batch, was_numpy = _as_batch(img)
        size = (img.shape[-1], img.shape[-2])
        out = warp(batch, [t.matrix(size)])[0]
        if was_numpy:
            out = out.numpy().astype(np.asarray(img).dtype)
    return out if p.is_identity() else apply_photometric(out, p)


def apply_inverse_to_heatmap(t: GeometricTransform, h, image_size):
    """Carry a ``(K, H', W')`` heatmap from the augmented frame back to the original.

    ``image_size`` is the ``(W, H)`` of the image the transform was applied to.
    """
    if t.is_identity():
        return h.clone() if isinstance(h, torch.Tensor) else np.array(h, copy=True)
    batch, was_numpy = _as_batch(h)
    m = t.heatmap_matrix(image_size, tuple(h.shape[-2:]))
    out = warp(batch, [np.linalg.inv(m)])[0]
    return out.numpy() if was_numpy else out


def inverse_warp_heatmaps(transforms, h: torch.Tensor, image_size) -> torch.Tensor:
    """Batched :func:`apply_inverse_to_heatmap` for a ``(B, K, H', W')`` tensor."""
    hs = tuple(h.shape[-2:])
    mats = [np.linalg.inv(t.heatmap_matrix(image_size, hs)) for t in transforms]
    if all(t.is_identity() for t in transforms):
        return h
    return warp(h, mats)


def forward_warp_images(transforms, x: torch.Tensor) -> torch.Tensor:
    size = (x.shape[-1], x.shape[-2])
    if all(t.is_identity() for t in transforms):
        return x
    return warp(x, [t.matrix(size) for t in transforms])


def peaks_inside(transform: GeometricTransform, cells, heatmap_size, image_size, inverse=True) -> np.ndarray:
    """Whether heatmap ``cells`` ``(K, 2)`` stay on the grid after (inverse) warping."""
    m = transform.heatmap_matrix(image_size, heatmap_size)
    if inverse:
        m = np.linalg.inv(m)
    p = transform_points(m, cells)
    ho, wo = heatmap_size
    return (p[:, 0] >= 0) & (p[:, 0] <= wo - 1) & (p[:, 1] >= 0) & (p[:, 1] <= ho - 1)


@dataclass(frozen=True)
class OcclusionPolicy:
    tau_occ: float = 0.9
    patch_size: tuple = (20, 20)
    occlude_prob: float = 0.5

    def __post_init__(self):
        if not 0 < self.tau_occ <= 1:
            raise ConfigError("tau_occ must lie in (0, 1]")
        if not 0 <= self.occlude_prob <= 1:
            raise ConfigError("occlude_prob must lie in [0, 1]")


def adaptive_occlusion(img, teacher_heatmap, policy: OcclusionPolicy, rng: np.random.Generator, locations=None):
    """Paste random same-image patches over keypoints the teacher is confident about.

    ``teacher_heatmap`` is the raw ``(K, H', W')`` teacher output. Patches are
    centred on ``locations`` (``(K, 2)`` pixel coordinates in ``img``'s frame);
    when omitted they come from the heatmap argmax scaled to the image.
    Returns ``(occluded_img, occluded_flags)``.
    """
    th = teacher_heatmap.detach().cpu().numpy() if isinstance(teacher_heatmap, torch.Tensor) else np.asarray(teacher_heatmap)
    _, h, w = img.shape
    ph, pw = policy.patch_size
    if ph > h or pw > w:
        raise ConfigError("occlusion patch does not fit inside the image")
    conf = th.reshape(th.shape[0], -1).max(axis=1)
    if locations is None:
        locations = cells_to_coords(argmax_cells(th), (w, h), th.shape[-2:])
    locations = np.asarray(locations, dtype=np.float64)
    src = img.clone() if isinstance(img, torch.Tensor) else np.array(img, copy=True)
    out = img.clone() if isinstance(img, torch.Tensor) else np.array(img, copy=True)
    flags = np.zeros(len(conf), dtype=bool)
    for k, c in enumerate(conf):
        if not c > policy.tau_occ:
            continue
        if not rng.random() < policy.occlude_prob:
            continue
        sy = int(rng.integers(0, h - ph + 1))
        sx = int(rng.integers(0, w - pw + 1))
        cx, cy = locations[k]
        x0 = int(math.floor(cx + 0.5)) - pw // 2
        y0 = int(math.floor(cy + 0.5)) - ph // 2
        dx0, dy0 = max(x0, 0), max(y0, 0)
        dx1, dy1 = min(x0 + pw, w), min(y0 + ph, h)
        if dx1 <= dx0 or dy1 <= dy0:
            continue
        out[:, dy0:dy1, dx0:dx1] = src[:, sy + dy0 - y0:sy + dy1 - y0, sx + dx0 - x0:sx + dx1 - x0]
        flags[k] = True
    return out, flags
