"""Procedural source/target pose datasets of articulated stick figures.

Each domain has its own pose distribution (output-level shift) and its own
appearance (input-level shift); the two are configured independently.
Annotations are exact by construction.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .data import KeypointSchema, PoseDataset, Sample, write_heldout, write_manifest
from .heatmap import ConfigError, KeypointAnnotation

KEYPOINTS = ("head", "neck", "l_elbow", "l_wrist", "r_elbow", "r_wrist", "l_knee", "l_ankle", "r_knee", "r_ankle")
GROUPS = (
    ("Head", ("head", "neck")),
    ("Elb", ("l_elbow", "r_elbow")),
    ("Wrist", ("l_wrist", "r_wrist")),
    ("Knee", ("l_knee", "r_knee")),
    ("Ankle", ("l_ankle", "r_ankle")),
)
SCHEMA = KeypointSchema(KEYPOINTS, GROUPS)


@dataclass
class FigureTemplate:
    """Bone lengths in pixels of a 256-pixel image."""

    torso: float = 54.0
    neck: float = 20.0
    upper_arm: float = 32.0
    forearm: float = 28.0
    thigh: float = 40.0
    shin: float = 38.0
    head_radius: float = 11.0
    thickness: float = 8.0

    def validate(self):
        for name in ("torso", "neck", "upper_arm", "forearm", "thigh", "shin"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"figure template bone {name!r} must have positive length")
        if not self.thickness > 0 or not self.head_radius > 0:
            raise ConfigError("figure template needs positive thickness and head radius")


@dataclass
class PoseDistribution:
    """Uniform ranges, angles in degrees."""

    rotation: tuple = (-15.0, 15.0)
    lean: tuple = (-8.0, 8.0)
    head: tuple = (-20.0, 20.0)
    arm: tuple = (15.0, 80.0)  # upper arm away from the torso
    elbow: tuple = (0.0, 60.0)
    hip: tuple = (5.0, 30.0)
    knee: tuple = (0.0, 40.0)
    scale: tuple = (0.85, 1.05)
    shift: float = 12.0  # root jitter in pixels


@dataclass
class Appearance:
    background: tuple = (0.15, 0.15, 0.17)
    background_variation: float = 0.05
    texture_cells: int = 4
    clutter: int = 0
    clutter_colors: tuple = ()
    torso_color: tuple = (0.9, 0.9, 0.9)
    left_color: tuple = (0.9, 0.2, 0.2)
    right_color: tuple = (0.2, 0.4, 0.95)
    marker_color: tuple = (1.0, 1.0, 0.3)
    marker_radius: float = 4.0
    thickness_scale: float = 1.0
    noise: float = 0.01


@dataclass
class DomainConfig:
    pose: PoseDistribution = field(default_factory=PoseDistribution)
    appearance: Appearance = field(default_factory=Appearance)


def _target_domain():
    return DomainConfig(
        pose=PoseDistribution(rotation=(-25.0, 25.0), arm=(30.0, 130.0), elbow=(10.0, 90.0),
                              hip=(5.0, 35.0), knee=(0.0, 55.0), scale=(0.75, 1.0)),
        appearance=Appearance(background=(0.27, 0.25, 0.22), background_variation=0.08, texture_cells=3,
                              clutter=2, clutter_colors=((0.5, 0.45, 0.4),),
                              torso_color=(0.8, 0.75, 0.65), left_color=(0.95, 0.4, 0.15),
                              right_color=(0.25, 0.55, 0.95), marker_color=(1.0, 0.85, 0.45),
                              marker_radius=4.0, thickness_scale=0.85, noise=0.04),
    )


@dataclass
class SynthConfig:
    image_size: int = 256
    n_source: int = 2000
    n_target: int = 2000
    seed: int = 0
    template: FigureTemplate = field(default_factory=FigureTemplate)
    source: DomainConfig = field(default_factory=DomainConfig)
    target: DomainConfig = field(default_factory=_target_domain)

    @classmethod
    def preset(cls, name: str, **overrides) -> "SynthConfig":
        """``default`` (appearance and pose shift), ``rotation_shift`` or ``no_shift``."""
        cfg = cls(**overrides)
        if name == "default":
            return cfg
        if name == "no_shift":
            cfg.target = copy.deepcopy(cfg.source)
            return cfg
        if name == "rotation_shift":
            cfg.target = DomainConfig(pose=PoseDistribution(rotation=(-40.0, 40.0)),
                                      appearance=copy.deepcopy(cfg.source.appearance))
            return cfg
        raise ConfigError(f"unknown synthetic preset {name!r}")


def _dir(deg):
    a = math.radians(deg)
    # angle 0 points up the image (negative y)
    return np.array([math.sin(a), -math.cos(a)])


def sample_pose(rng: np.random.Generator, dist: PoseDistribution, template: FigureTemplate, image_size: int):
    """Sample one pose; returns ``(keypoints (10, 2), pelvis (2,), scale)`` in pixels."""
    u = lambda r: rng.uniform(r[0], r[1])
    s = image_size / 256.0 * u(dist.scale)
    rot = u(dist.rotation)
    lean = u(dist.lean)
    head = u(dist.head)
    arm_l, arm_r = u(dist.arm), u(dist.arm)
    elb_l, elb_r = u(dist.elbow), u(dist.elbow)
    hip_l, hip_r = u(dist.hip), u(dist.hip)
    knee_l, knee_r = u(dist.knee), u(dist.knee)
    jitter = rng.uniform(-dist.shift, dist.shift, size=2) * image_size / 256.0
    t = template
    centre = np.array([image_size / 2.0, image_size / 2.0]) + jitter
    torso_dir = rot + lean
    # the pelvis is roughly halfway between head and feet
    pelvis = centre
    neck = pelvis + s * t.torso * _dir(torso_dir)
    head_pt = neck + s * t.neck * _dir(torso_dir + head)
    down = torso_dir + 180.0
    # left limbs hang on the image's right-hand side (figure faces the viewer)
    l_elbow = neck + s * t.upper_arm * _dir(down - arm_l)
    l_wrist = l_elbow + s * t.forearm * _dir(down - arm_l - elb_l)
    r_elbow = neck + s * t.upper_arm * _dir(down + arm_r)
    r_wrist = r_elbow + s * t.forearm * _dir(down + arm_r + elb_r)
    l_knee = pelvis + s * t.thigh * _dir(down - hip_l)
    l_ankle = l_knee + s * t.shin * _dir(down - hip_l + knee_l)
    r_knee = pelvis + s * t.thigh * _dir(down + hip_r)
    r_ankle = r_knee + s * t.shin * _dir(down + hip_r - knee_r)
    kps = np.stack([head_pt, neck, l_elbow, l_wrist, r_elbow, r_wrist, l_knee, l_ankle, r_knee, r_ankle])
    return np.round(kps, 3), np.round(pelvis, 3), s


def _paint_capsule(img, p, q, radius, color):
    h, w, _ = img.shape
    x0 = int(max(math.floor(min(p[0], q[0]) - radius - 1), 0))
    x1 = int(min(math.ceil(max(p[0], q[0]) + radius + 2), w))
    y0 = int(max(math.floor(min(p[1], q[1]) - radius - 1), 0))
    y1 = int(min(math.ceil(max(p[1], q[1]) + radius + 2), h))
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    d = q - p
    ll = float(d @ d)
    if ll == 0:
        t = np.zeros_like(xs)
    else:
        t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / ll, 0.0, 1.0)
    dist = np.hypot(xs - (p[0] + t * d[0]), ys - (p[1] + t * d[1]))
    alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)[..., None]
    region = img[y0:y1, x0:x1]
    region[:] = region * (1 - alpha) + alpha * np.asarray(color)


def _background(rng, app: Appearance, size: int):
    n = max(int(app.texture_cells), 1)
    coarse = rng.uniform(-1.0, 1.0, size=(n + 1, n + 1, 3))
    # bilinear upsampling of the coarse noise grid
    g = np.linspace(0, n, size)
    i0 = np.clip(np.floor(g).astype(int), 0, n - 1)
    f = g - i0
    rows = coarse[i0] * (1 - f)[:, None, None] + coarse[i0 + 1] * f[:, None, None]
    tex = rows[:, i0] * (1 - f)[None, :, None] + rows[:, i0 + 1] * f[None, :, None]
    return np.clip(np.asarray(app.background) + app.background_variation * tex, 0.0, 1.0)


BONES = (
    ("neck", "pelvis", "torso"), ("neck", "head", "torso"),
    ("neck", "l_elbow", "left"), ("l_elbow", "l_wrist", "left"),
    ("neck", "r_elbow", "right"), ("r_elbow", "r_wrist", "right"),
    ("pelvis", "l_knee", "left"), ("l_knee", "l_ankle", "left"),
    ("pelvis", "r_knee", "right"), ("r_knee", "r_ankle", "right"),
)


def render(rng, keypoints, pelvis, scale, template: FigureTemplate, app: Appearance, image_size: int,
           joint_subset=None, figure=True, background=True):
    """Render one figure to an ``(H, W, 3)`` float image in ``[0, 1]``.

    ``joint_subset`` restricts which joint markers are drawn; ``figure=False``
    and ``background=False`` leave out the bones and the background (used
    by the marker re-detection check).
    """
    size = image_size
    img = _background(rng, app, size) if background else np.zeros((size, size, 3))
    pts = dict(zip(KEYPOINTS, keypoints))
    pts["pelvis"] = pelvis
    px = size / 256.0
    if background:
        for _ in range(app.clutter):
            a = rng.uniform(0, size, size=2)
            b = a + rng.uniform(-40, 40, size=2) * px
            col = app.clutter_colors[int(rng.integers(len(app.clutter_colors)))] if app.clutter_colors else (0.5, 0.5, 0.5)
            _paint_capsule(img, a, b, 0.5 * template.thickness * app.thickness_scale * px, col)
    if figure:
        colors = {"torso": app.torso_color, "left": app.left_color, "right": app.right_color}
        radius = 0.5 * template.thickness * app.thickness_scale * scale
        for a, b, part in BONES:
            _paint_capsule(img, pts[a], pts[b], radius, colors[part])
        _paint_capsule(img, pts["head"], pts["head"], template.head_radius * scale, app.torso_color)
    marker = app.marker_radius * px
    for k, name in enumerate(KEYPOINTS):
        if joint_subset is not None and k not in joint_subset:
            continue
        _paint_capsule(img, pts[name], pts[name], marker, app.marker_color)
    if background and app.noise > 0:
        img = img + rng.normal(0.0, app.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _visibility(kps, size):
    return (kps[:, 0] >= 0) & (kps[:, 0] < size) & (kps[:, 1] >= 0) & (kps[:, 1] < size)


def _write_png(path, img):
    Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(path, compress_level=6)


def _generate_domain(rng, cfg: SynthConfig, dom: DomainConfig, domain: str, n: int, out: Path):
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    samples, anns = [], {}
    prefix = "s" if domain == "source" else "t"
    for i in range(n):
        kps, pelvis, s = sample_pose(rng, dom.pose, cfg.template, cfg.image_size)
        img = render(rng, kps, pelvis, s, cfg.template, dom.appearance, cfg.image_size)
        sid = f"{prefix}{i:05d}"
        rel = f"images/{sid}.png"
        _write_png(out / rel, img)
        ann = KeypointAnnotation(kps, _visibility(kps, cfg.image_size))
        anns[sid] = ann
        samples.append(Sample(sid, rel, domain, ann if domain == "source" else None))
    ds = PoseDataset(out, SCHEMA, samples, (cfg.image_size, cfg.image_size), domain)
    write_manifest(ds)
    if domain == "target":
        write_heldout(out, anns)
    return ds


def generate_synthetic(cfg: SynthConfig, out_dir):
    """Render both domains under ``out_dir/source`` and ``out_dir/target``.

    Target annotations go to ``heldout_annotations.json`` only.
    """
    cfg.template.validate()
    if cfg.n_source < 1 or cfg.n_target < 1:
        raise ConfigError("sample counts must be positive")
    out_dir = Path(out_dir)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    src = _generate_domain(np.random.default_rng(seeds[0]), cfg, cfg.source, "source", cfg.n_source, out_dir / "source")
    tgt = _generate_domain(np.random.default_rng(seeds[1]), cfg, cfg.target, "target", cfg.n_target, out_dir / "target")
    return src, tgt
