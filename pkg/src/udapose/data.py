"""Pose datasets on disk and in memory.

A dataset directory holds ``manifest.json`` and an ``images/`` folder::

    {
      "format": "udapose-manifest", "version": 1,
      "domain": "source",
      "image_size": [256, 256],
      "schema": {"keypoints": [...], "groups": [{"name": "Arm", "keypoints": [...]}, ...]},
      "samples": [{"id": "s00000", "image": "images/s00000.png", "domain": "source",
                   "keypoints": [[x, y, visible], ...]}, ...]
    }

Target-domain manifests carry no ``keypoints``; their annotations live in
``heldout_annotations.json`` and are read only through
:meth:`PoseDataset.eval_annotations`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .heatmap import KeypointAnnotation

MANIFEST = "manifest.json"
HELDOUT = "heldout_annotations.json"


class DatasetError(ValueError):
    pass


class LabelAccessError(RuntimeError):
    """Raised when training code touches target-domain annotations."""


@dataclass(frozen=True)
class KeypointSchema:
    names: tuple
    groups: tuple = ()  # ((group name, (keypoint names...)), ...)

    @property
    def num_keypoints(self) -> int:
        return len(self.names)

    def group_indices(self):
        index = {n: i for i, n in enumerate(self.names)}
        return [(g, [index[n] for n in members]) for g, members in self.groups]

    def to_json(self):
        return {"keypoints": list(self.names),
                "groups": [{"name": g, "keypoints": list(m)} for g, m in self.groups]}

    @classmethod
    def from_json(cls, obj):
        names = tuple(obj["keypoints"])
        groups = tuple((g["name"], tuple(g["keypoints"])) for g in obj.get("groups", []))
        for g, members in groups:
            unknown = set(members) - set(names)
            if unknown:
                raise DatasetError(f"group {g!r} names unknown keypoints {sorted(unknown)}")
        return cls(names, groups)


@dataclass(frozen=True)
class Sample:
    id: str
    image: str
    domain: str
    _annotation: KeypointAnnotation = None

    @property
    def annotation(self):
        if self.domain == "target":
            raise LabelAccessError(f"sample {self.id}: target-domain annotations are not available to training")
        return self._annotation


@dataclass
class PoseDataset:
    root: Path
    schema: KeypointSchema
    samples: list
    image_size: tuple = (256, 256)
    domain: str = "source"

    def __len__(self):
        return len(self.samples)

    def subset(self, indices) -> "PoseDataset":
        return PoseDataset(self.root, self.schema, [self.samples[i] for i in indices], self.image_size, self.domain)

    def eval_annotations(self) -> list:
        """Annotations for evaluation, including the held-out target file."""
        if self.domain != "target":
            return [s.annotation for s in self.samples]
        path = Path(self.root) / HELDOUT
        if not path.exists():
            raise DatasetError(f"{path}: held-out annotations missing")
        table = json.loads(path.read_text())
        out = []
        for s in self.samples:
            if s.id not in table:
                raise DatasetError(f"{path}: no annotation for sample {s.id}")
            out.append(_parse_keypoints(table[s.id], self.schema, s.id))
        return out

    def read_image(self, sample: Sample) -> np.ndarray:
        """``(3, H, W)`` float32 image in ``[0, 1]``."""
        path = Path(self.root) / sample.image
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr.transpose(2, 0, 1)


def _parse_keypoints(raw, schema: KeypointSchema, sample_id: str) -> KeypointAnnotation:
    if not isinstance(raw, list) or any(not isinstance(p, list) or len(p) != 3 for p in raw):
        raise DatasetError(f"sample {sample_id}: keypoints must be a list of [x, y, visible] triples")
    if len(raw) != schema.num_keypoints:
        raise DatasetError(f"sample {sample_id}: {len(raw)} keypoints but the schema has {schema.num_keypoints}")
    arr = np.asarray(raw, dtype=np.float64)
    return KeypointAnnotation(arr[:, :2], arr[:, 2] > 0)


def _keypoints_json(ann: KeypointAnnotation):
    return [[round(float(x), 3), round(float(y), 3), int(v)] for (x, y), v in zip(ann.coords, ann.visible)]


def load_dataset(root) -> PoseDataset:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise DatasetError(f"{path}: manifest not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: malformed JSON ({err})") from err
    for key in ("schema", "samples", "image_size"):
        if key not in doc:
            raise DatasetError(f"{path}: missing {key!r}")
    schema = KeypointSchema.from_json(doc["schema"])
    image_size = tuple(doc["image_size"])
    domain = doc.get("domain", "source")
    samples = []
    for i, rec in enumerate(doc["samples"]):
        sid = rec.get("id", f"#{i}")
        if "image" not in rec:
            raise DatasetError(f"sample {sid}: missing image path")
        if not (root / rec["image"]).exists():
            raise DatasetError(f"sample {sid}: image file {root / rec['image']} not found")
        sdomain = rec.get("domain", domain)
        ann = None
        if rec.get("keypoints") is not None:
            ann = _parse_keypoints(rec["keypoints"], schema, sid)
        samples.append(Sample(sid, rec["image"], sdomain, ann))
    return PoseDataset(root, schema, samples, image_size, domain)


def manifest_json(ds: PoseDataset) -> str:
    samples = []
    for s in ds.samples:
        rec = {"id": s.id, "image": s.image, "domain": s.domain}
        if s._annotation is not None:
            rec["keypoints"] = _keypoints_json(s._annotation)
        samples.append(rec)
    doc = {"format": "udapose-manifest", "version": 1, "domain": ds.domain,
           "image_size": list(ds.image_size), "schema": ds.schema.to_json(), "samples": samples}
    return json.dumps(doc, indent=1) + "\n"


def write_manifest(ds: PoseDataset, root=None) -> Path:
    root = Path(root or ds.root)
    path = root / MANIFEST
    path.write_text(manifest_json(ds))
    return path


def write_heldout(root, annotations: dict) -> Path:
    path = Path(root) / HELDOUT
    table = {sid: _keypoints_json(ann) for sid, ann in annotations.items()}
    path.write_text(json.dumps(table, indent=1) + "\n")
    return path


def split(dataset: PoseDataset, fractions, seed: int = 0):
    """Disjoint, exhaustive random partitions sized by ``fractions``."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DatasetError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.floor(np.cumsum(fractions) * n + 1e-9).astype(int)
    bounds[-1] = n
    parts, start = [], 0
    for end in bounds:
        parts.append(dataset.subset(sorted(order[start:end].tolist())))
        start = end
    return parts


def rescale_coords(coords, from_size, to_size) -> np.ndarray:
    """Map pixel-index coordinates between two resolutions of the same image."""
    coords = np.asarray(coords, dtype=np.float64)
    rx = to_size[0] / from_size[0]
    ry = to_size[1] / from_size[1]
    return np.stack([(coords[..., 0] + 0.5) * rx - 0.5, (coords[..., 1] + 0.5) * ry - 0.5], axis=-1)


@dataclass
class ImageBank:
    """A dataset decoded to memory at the network's input resolution.

    ``coords`` are in input-resolution pixels; they are ``None`` for banks
    built for training from target data.
    """

    images: np.ndarray  # (N, 3, S, S) uint8
    coords: np.ndarray = None  # (N, K, 2)
    visible: np.ndarray = None  # (N, K)
    source_size: tuple = (256, 256)
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i].astype(np.float32) / 255.0

    @property
    def input_size(self):
        return (self.images.shape[-1], self.images.shape[-2])

    def batch(self, indices):
        return self.images[indices].astype(np.float32) / 255.0


def load_bank(ds: PoseDataset, input_size: int, labels: str = "train") -> ImageBank:
    """Decode and resize a dataset.

    ``labels`` is ``"train"`` (annotation accessor, raises on target data),
    ``"eval"`` (held-out annotations allowed) or ``"none"``.
    """
    imgs = np.empty((len(ds), 3, input_size, input_size), dtype=np.uint8)
    for i, s in enumerate(ds.samples):
        with Image.open(Path(ds.root) / s.image) as im:
            im = im.convert("RGB")
            if im.size != (input_size, input_size):
                im = im.resize((input_size, input_size), Image.BOX)
            imgs[i] = np.asarray(im, dtype=np.uint8).transpose(2, 0, 1)
    bank = ImageBank(imgs, source_size=tuple(ds.image_size), ids=[s.id for s in ds.samples])
    if labels == "none":
        return bank
    anns = [s.annotation for s in ds.samples] if labels == "train" else ds.eval_annotations()
    if any(a is None for a in anns):
        raise DatasetError("dataset has unlabeled samples")
    coords = np.stack([a.coords for a in anns])
    bank.coords = rescale_coords(coords, ds.image_size, (input_size, input_size))
    bank.visible = np.stack([a.visible for a in anns])
    return bank
