"""Mean-teacher adaptation: supervised source loss, normalized pseudo-label
consistency on the target domain, EMA teacher updates and the epoch schedule.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import (OcclusionPolicy, adaptive_occlusion, forward_warp_images, inverse_warp_heatmaps,
                      sample_augmentation, transform_points)
from .checkpoint import load_container, save_container
from .config import ExperimentConfig, to_dict
from .evaluation import evaluate_model
from .heatmap import (GaussianSpec, argmax_cells, gaussian_channel_mean, generate_heatmaps, interior_cells,
                      mse_heatmap_loss, render_gaussians)
from .model import PoseNetConfig, build_model, clone_state, load_state_tensors, state_tensors
from .style import maybe_stylize

log = logging.getLogger(__name__)


class StateError(ValueError):
    pass


def _named(module):
    return list(module.named_parameters()), list(module.named_buffers())


@torch.no_grad()
def ema_update(teacher, student, eta: float, buffers: str = "copy"):
    """``theta_t <- eta * theta_t + (1 - eta) * theta_s`` for every parameter.

    Floating-point buffers (normalization statistics) are copied from the
    student (``buffers="copy"``) or averaged the same way (``"ema"``).
    """
    tp, tb = _named(teacher)
    sp, sb = _named(student)
    if [(n, tuple(p.shape)) for n, p in tp] != [(n, tuple(p.shape)) for n, p in sp]:
        raise StateError("teacher and student parameter sets differ")
    if [n for n, _ in tb] != [n for n, _ in sb]:
        raise StateError("teacher and student buffer sets differ")
    for (_, t), (_, s) in zip(tp, sp):
        t.copy_(t * eta + s * (1.0 - eta))
    for (_, t), (_, s) in zip(tb, sb):
        if buffers == "ema" and t.is_floating_point():
            t.copy_(t * eta + s * (1.0 - eta))
        else:
            t.copy_(s)
    return teacher


def compute_confidence_threshold(confidences, p: float) -> float:
    """The ``ceil(p * n)``-th largest confidence; values ``>=`` it pass."""
    values = np.sort(np.asarray(confidences, dtype=np.float64).ravel())[::-1]
    if values.size == 0:
        raise StateError("confidence threshold needs at least one value")
    if not 0 < p <= 1:
        raise StateError(f"p must lie in (0, 1], got {p}")
    k = min(max(int(math.ceil(p * values.size - 1e-9)), 1), values.size)
    return float(values[k - 1])


def boundary_mask(cells, t1s, t2s, heatmap_size, image_size) -> np.ndarray:
    """Channels whose teacher peak stays on the grid when carried back from the
    teacher's frame and forward into the student's frame.

    ``cells`` are ``(B, K, 2)`` argmax cells in the teacher (``t1``) frame.
    """
    ho, wo = heatmap_size
    out = np.zeros(cells.shape[:2], dtype=bool)
    for i, (t1, t2) in enumerate(zip(t1s, t2s)):
        orig = transform_points(np.linalg.inv(t1.heatmap_matrix(image_size, heatmap_size)), cells[i])
        in2 = transform_points(t2.heatmap_matrix(image_size, heatmap_size), orig)
        ok = lambda p: (p[:, 0] >= 0) & (p[:, 0] <= wo - 1) & (p[:, 1] >= 0) & (p[:, 1] <= ho - 1)
        out[i] = ok(orig) & ok(in2)
    return out


def unsup_loss(student_out, pseudo, confidences, tau_conf, t1s, t2s, boundary, image_size):
    """Consistency between de-augmented pseudo-labels and student predictions.

    Both sides are warped back to the unaugmented frame; channels failing the
    confidence gate or the boundary mask are left out of the mean.
    """
    mask = (np.asarray(confidences) >= tau_conf) & np.asarray(boundary, dtype=bool)
    pseudo = torch.as_tensor(pseudo, dtype=student_out.dtype)
    target = inverse_warp_heatmaps(t1s, pseudo, image_size)
    pred = inverse_warp_heatmaps(t2s, student_out, image_size)
    return mse_heatmap_loss(pred, target, mask)


@dataclass
class Models:
    student: torch.nn.Module
    optimizer: torch.optim.Optimizer
    teacher: torch.nn.Module = None


@dataclass
class BatchRecord:
    epoch: int
    iter: int
    sup: float
    unsup: float
    total: float
    tau_conf: float = None
    pass_fraction: float = None
    teacher_mean_act: float = None
    pseudo_mean_act: float = None
    gt_mean_ref: float = None
    n_stylized: int = 0
    n_occluded: int = 0
    lr: float = None
    teacher_param_norm: float = None
    val_pck: float = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _augment(x: torch.Tensor, rng, cfg: ExperimentConfig):
    geo, photo = zip(*(sample_augmentation(rng, cfg.augmentation) for _ in range(x.shape[0])))
    out = forward_warp_images(geo, x)
    if not all(p.is_identity() for p in photo):
        f = torch.as_tensor(np.array([p.factors for p in photo]), dtype=x.dtype).view(x.shape[0], -1, 1, 1)
        out = (out * f).clamp(0.0, 1.0)
    return out, list(geo)


def _param_norm(module) -> float:
    return float(sum(float((p.double() ** 2).sum()) for p in module.parameters()))


def train_step(batch_s, batch_t, models: Models, style_model, cfg: ExperimentConfig, rng: np.random.Generator,
               epoch: int = 0, it: int = 0, pools=(None, None)) -> BatchRecord:
    """One optimization step of ``L = L_sup + lambda * L_unsup``.

    ``batch_s`` is ``(images, coords, visible)`` with source images
    ``(B, 3, S, S)`` and input-frame keypoints ``(B, K, 2)``; ``batch_t`` is a
    ``(B, 3, S, S)`` target image batch. ``pools`` holds the
    ``(source, target)`` images used as style references.
    """
    tc, ab = cfg.train, cfg.ablation
    s = cfg.model.input_size
    hs = (cfg.model.heatmap_size, cfg.model.heatmap_size)
    spec = GaussianSpec(tc.sigma)
    student, opt = models.student, models.optimizer
    use_style = ab.style and style_model is not None
    n_stylized = n_occluded = 0

    xs, coords, visible = batch_s
    xs = torch.as_tensor(xs)
    if use_style:
        xs, flips, _ = maybe_stylize(xs, pools[1], rng, tc.stylize_prob, style_model)
        n_stylized += int(flips.sum())
    xs_aug, geo_s = _augment(xs, rng, cfg)
    coords_aug = np.stack([transform_points(g.matrix((s, s)), c) for g, c in zip(geo_s, coords)])
    target_s, valid_s = generate_heatmaps(coords_aug, visible, hs, spec, (s, s))
    student.train()
    out_s = student(xs_aug)
    sup = mse_heatmap_loss(out_s, torch.as_tensor(target_s, dtype=out_s.dtype), valid_s)

    unsup = torch.zeros((), dtype=sup.dtype)
    rec = {}
    if ab.mean_teacher and epoch >= tc.warmup_supervised_epochs and models.teacher is not None:
        teacher = models.teacher
        xt = torch.as_tensor(batch_t)
        xt1, geo1 = _augment(xt, rng, cfg)
        xt2, geo2 = _augment(xt, rng, cfg)
        if use_style:
            xt1, flips, _ = maybe_stylize(xt1, pools[0], rng, tc.stylize_prob, style_model)
            n_stylized += int(flips.sum())
        teacher.eval()
        with torch.no_grad():
            raw = teacher(xt1).double().numpy()
        conf = raw.max(axis=(-2, -1))
        cells = argmax_cells(raw)
        if ab.normalize:
            pseudo = render_gaussians(cells, np.ones(cells.shape[:2], dtype=bool), hs, spec)
        else:
            pseudo = raw
        tau = compute_confidence_threshold(conf, tc.p)
        bmask = boundary_mask(cells, geo1, geo2, hs, (s, s))
        if ab.occlusion:
            policy = OcclusionPolicy(tc.tau_occ, (tc.occlusion_patch, tc.occlusion_patch), tc.occlude_prob)
            stride = s / hs[1]
            xt2 = xt2.clone()
            for i in range(xt2.shape[0]):
                orig = transform_points(np.linalg.inv(geo1[i].heatmap_matrix((s, s), hs)), cells[i])
                loc = transform_points(geo2[i].heatmap_matrix((s, s), hs), orig) * stride
                xt2[i], flags = adaptive_occlusion(xt2[i], raw[i], policy, rng, locations=loc)
                n_occluded += int(flags.sum())
        out_t = student(xt2)
        unsup = unsup_loss(out_t, pseudo, conf, tau, geo1, geo2, bmask, (s, s))
        interior = interior_cells(cells, spec, hs)
        rec = dict(tau_conf=tau, pass_fraction=float((conf >= tau).mean()), teacher_mean_act=float(raw.mean()),
                   pseudo_mean_act=float(pseudo.mean(axis=(-2, -1))[interior].mean()) if interior.any() else None)

    total = sup + tc.lambda_unsup * unsup
    opt.zero_grad()
    total.backward()
    opt.step()
    if models.teacher is not None:
        ema_update(models.teacher, student, tc.eta, tc.ema_buffers)
    sup_v, unsup_v = float(sup.detach()), float(unsup.detach())
    return BatchRecord(epoch=epoch, iter=it, sup=sup_v, unsup=unsup_v, total=sup_v + tc.lambda_unsup * unsup_v,
                       gt_mean_ref=gaussian_channel_mean(spec, hs), n_stylized=n_stylized, n_occluded=n_occluded,
                       lr=opt.param_groups[0]["lr"],
                       teacher_param_norm=_param_norm(models.teacher) if models.teacher is not None else None,
                       **rec)


@dataclass
class FitResult:
    models: Models
    records: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    final_report: object = None
    checkpoint: Path = None


def fit(source_bank, target_bank, val_bank, cfg: ExperimentConfig, style_model=None, out_dir=None,
        names=(), groups=(), progress=None) -> FitResult:
    """Run the whole schedule and return the last-epoch models.

    ``source_bank`` is labeled; ``target_bank`` is used without labels;
    ``val_bank`` is a labeled, disjoint target split used only for the
    per-epoch PCK. With ``out_dir`` the metrics log (``metrics.jsonl``) and
    the final checkpoint (``checkpoint.bin``) are written there.
    """
    tc = cfg.train
    problems = tc.problems()
    if problems:
        raise StateError("; ".join(problems))
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    student = build_model(cfg.model, seed=tc.seed)
    opt = torch.optim.Adam(student.parameters(), lr=tc.base_lr, weight_decay=0.0)
    models = Models(student, opt)
    result = FitResult(models)
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "w")
    pools = (source_bank, target_bank)
    try:
        for epoch in range(tc.epochs):
            for g in opt.param_groups:
                g["lr"] = tc.lr_at(epoch)
            if cfg.ablation.mean_teacher and epoch == tc.warmup_supervised_epochs:
                models.teacher = clone_state(student)
                models.teacher.eval()
                for p in models.teacher.parameters():
                    p.requires_grad_(False)
            for it in range(tc.iters_per_epoch):
                i_s = rng.integers(0, len(source_bank), size=tc.batch_size)
                i_t = rng.integers(0, len(target_bank), size=tc.batch_size)
                batch_s = (torch.from_numpy(source_bank.batch(i_s)), source_bank.coords[i_s], source_bank.visible[i_s])
                batch_t = torch.from_numpy(target_bank.batch(i_t))
                record = train_step(batch_s, batch_t, models, style_model, cfg, rng, epoch, it, pools)
                if it == tc.iters_per_epoch - 1 and val_bank is not None:
                    report = evaluate_model(student, val_bank, tc.eval_alpha, names, groups)
                    record.val_pck = report.overall
                    result.val_history.append(report.overall)
                    result.final_report = report
                result.records.append(record)
                if log_fh is not None:
                    log_fh.write(record.to_json() + "\n")
                if progress is not None:
                    progress(record)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        result.checkpoint = out_dir / "checkpoint.bin"
        save_checkpoint(result.checkpoint, models, cfg, tc.epochs, names)
    return result


def save_checkpoint(path, models: Models, cfg: ExperimentConfig, epoch: int, names=()):
    tensors = state_tensors(models.student, "student.")
    if models.teacher is not None:
        tensors.update(state_tensors(models.teacher, "teacher."))
    steps = {}
    for i, (p, st) in enumerate(models.optimizer.state.items()):
        for key in ("exp_avg", "exp_avg_sq"):
            tensors[f"optim.{i}.{key}"] = st[key]
        steps[str(i)] = float(st["step"])
    meta = {"kind": "pose_model", "config": to_dict(cfg), "epoch": epoch, "optimizer_steps": steps,
            "keypoints": list(names), "has_teacher": models.teacher is not None}
    save_container(path, tensors, meta)


def load_checkpoint(path, which: str = "student"):
    """Return ``(model, meta)`` for the student or teacher stored in ``path``."""
    tensors, meta = load_container(path)
    if meta.get("kind") != "pose_model":
        raise ValueError(f"{path} is not a pose checkpoint")
    if which == "teacher" and not meta.get("has_teacher"):
        raise ValueError(f"{path} holds no teacher")
    model = build_model(PoseNetConfig(**meta["config"]["model"]))
    load_state_tensors(model, tensors, which + ".")
    model.eval()
    return model, meta
