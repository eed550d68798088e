"""PCK@alpha evaluation with per-group aggregation and table rendering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .heatmap import KeypointAnnotation, decode_heatmaps


@dataclass
class PCKReport:
    correct: np.ndarray  # per keypoint
    total: np.ndarray
    alpha: float
    reference_length: float
    names: tuple = ()
    groups: tuple = ()  # ((name, (indices...)), ...)
    reference: str = "max(image_w, image_h)"

    @property
    def overall(self) -> float:
        t = self.total.sum()
        return 100.0 * self.correct.sum() / t if t else float("nan")

    def group_ratio(self, indices) -> float:
        idx = list(indices)
        t = self.total[idx].sum()
        return 100.0 * self.correct[idx].sum() / t if t else float("nan")

    @property
    def group_ratios(self) -> dict:
        return {name: self.group_ratio(idx) for name, idx in self.groups}

    @property
    def per_keypoint(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.correct / self.total


def pck(preds, gts, alpha=0.05, image_size=(256, 256), names=(), groups=()) -> PCKReport:
    """Fraction of visible ground-truth keypoints predicted within ``alpha * max(W, H)``.

    ``preds`` and ``gts`` are aligned lists of :class:`KeypointAnnotation`;
    the prediction's visibility is ignored. ``groups`` is a sequence of
    ``(name, keypoint indices)``.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    ref = float(max(image_size))
    if not gts:
        return PCKReport(np.zeros(0, int), np.zeros(0, int), alpha, ref, tuple(names), tuple(groups))
    p = np.stack([np.asarray(a.coords, dtype=np.float64) for a in preds])
    g = np.stack([np.asarray(a.coords, dtype=np.float64) for a in gts])
    vis = np.stack([np.asarray(a.visible, dtype=bool) for a in gts])
    if p.shape != g.shape:
        raise ValueError("prediction and ground-truth keypoint counts differ")
    dist = np.sqrt(((p - g) ** 2).sum(-1))
    ok = (dist <= alpha * ref) & vis
    return PCKReport(ok.sum(0), vis.sum(0), alpha, ref, tuple(names), tuple(groups))


def schema_groups(schema):
    return tuple((name, tuple(idx)) for name, idx in schema.group_indices())


@torch.no_grad()
def predict(model, bank, batch_size=64):
    """Argmax predictions in the bank's input-resolution pixel frame."""
    was_training = model.training
    model.eval()
    preds = []
    size = bank.input_size
    for start in range(0, len(bank), batch_size):
        x = torch.from_numpy(bank.batch(np.arange(start, min(start + batch_size, len(bank)))))
        x = x.to(next(model.parameters()).dtype)
        preds.append(decode_heatmaps(model(x).numpy(), size))
    model.train(was_training)
    return np.concatenate(preds) if preds else np.zeros((0, 0, 2))


def evaluate_model(model, bank, alpha=0.05, names=(), groups=(), predictor=None) -> PCKReport:
    """Forward, decode and score a labeled :class:`~udapose.data.ImageBank`.

    PCK is measured in the bank's original image frame. ``predictor`` may
    replace the model with any callable ``bank -> (N, K, 2)`` input-frame
    coordinates.
    """
    from .data import rescale_coords

    if bank.coords is None:
        raise ValueError("evaluation needs a labeled bank")
    k = bank.coords.shape[1]
    if model is not None and getattr(getattr(model, "config", None), "num_keypoints", k) != k:
        raise ValueError(f"model predicts {model.config.num_keypoints} keypoints, dataset has {k}")
    coords = predictor(bank) if predictor is not None else predict(model, bank)
    pred = rescale_coords(coords, bank.input_size, bank.source_size)
    gt = rescale_coords(bank.coords, bank.input_size, bank.source_size)
    preds = [KeypointAnnotation(c) for c in pred]
    gts = [KeypointAnnotation(c, v) for c, v in zip(gt, bank.visible)]
    return pck(preds, gts, alpha, bank.source_size, names, groups)


def render_report(report: PCKReport, format: str = "table", columns=None, label: str = None) -> str:
    """Grouped columns plus ``All``, one decimal place, as a text table or CSV."""
    known = dict(report.groups)
    columns = list(columns) if columns is not None else [g for g, _ in report.groups]
    for c in columns:
        if c != "All" and c not in known:
            raise KeyError(f"unknown group {c!r}")
    if "All" not in columns:
        columns.append("All")
    values = [report.overall if c == "All" else report.group_ratio(known[c]) for c in columns]
    cells = [f"{v:.1f}" for v in values]
    head = (["Method"] if label is not None else []) + columns
    row = ([label] if label is not None else []) + cells
    if format == "csv":
        return ",".join(head) + "\n" + ",".join(row) + "\n"
    if format != "table":
        raise ValueError(f"unknown report format {format!r}")
    widths = [max(len(a), len(b)) for a, b in zip(head, row)]
    line = lambda xs: " | ".join(x.rjust(w) for x, w in zip(xs, widths))
    return line(head) + "\n" + "-+-".join("-" * w for w in widths) + "\n" + line(row) + "\n"
