"""End-to-end experiment plumbing shared by the command line and the demos."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_yaml
from .data import ImageBank, load_bank, load_dataset, split
from .evaluation import evaluate_model, render_report, schema_groups
from .heatmap import ConfigError
from .style import StyleModel, style_pretrain
from .synth import SynthConfig, generate_synthetic
from .train import FitResult, fit

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "UDAPOSE_OUTPUT_ROOT"


def resolve_output(path) -> Path:
    """Relative output paths are placed under ``$UDAPOSE_OUTPUT_ROOT`` when it is set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def claim_output(path, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists; pass --force to overwrite")
    return path


@dataclass
class Banks:
    source: ImageBank
    target: ImageBank  # unlabeled training split
    val: ImageBank  # labeled held-out split of the target
    names: tuple
    groups: tuple


def ensure_data(cfg: ExperimentConfig, out_dir: Path):
    """Return ``(source_dir, target_dir)``, rendering the synthetic pair if needed."""
    d = cfg.data
    if d.source is not None and d.target is not None:
        return Path(d.source), Path(d.target)
    synth = d.synth if d.synth is not None else SynthConfig()
    if d.synth_preset != "default":
        synth = SynthConfig.preset(d.synth_preset, image_size=synth.image_size, n_source=synth.n_source,
                                   n_target=synth.n_target, seed=synth.seed, template=synth.template)
    root = Path(out_dir) / "data"
    if not (root / "target" / "manifest.json").exists():
        log.info("rendering synthetic data into %s", root)
        generate_synthetic(synth, root)
    return root / "source", root / "target"


def load_banks(cfg: ExperimentConfig, source_dir, target_dir) -> Banks:
    src = load_dataset(source_dir)
    tgt = load_dataset(target_dir)
    if src.schema.num_keypoints != cfg.model.num_keypoints:
        raise ConfigError(f"model.num_keypoints={cfg.model.num_keypoints} but {source_dir} has "
                          f"{src.schema.num_keypoints} keypoints")
    vf = cfg.train.val_fraction
    train_t, val_t = split(tgt, [1.0 - vf, vf], seed=cfg.train.seed)
    s = cfg.model.input_size
    return Banks(load_bank(src, s), load_bank(train_t, s, labels="none"), load_bank(val_t, s, labels="eval"),
                 src.schema.names, schema_groups(src.schema))


def ensure_style(cfg: ExperimentConfig, banks: Banks, out_dir: Path = None, progress=None):
    """The frozen style model, loaded from ``style.checkpoint`` or pretrained here."""
    if not cfg.ablation.style:
        return None
    if cfg.style.checkpoint is not None:
        return StyleModel.load(cfg.style.checkpoint)
    log.info("pretraining the style model")
    model = style_pretrain(banks.source.batch(np.arange(len(banks.source))),
                           banks.target.batch(np.arange(len(banks.target))),
                           cfg.style.train, cfg.style.net, progress)
    if out_dir is not None:
        model.save(Path(out_dir) / "style.bin")
    return model


def run_experiment(cfg: ExperimentConfig, out_dir, progress=None, banks: Banks = None, style=None):
    """Validate, prepare data and style model, train, and write the final PCK table.

    Returns ``(FitResult, banks)``. Artifacts in ``out_dir``: ``config.yaml``
    (fully resolved), ``metrics.jsonl``, ``checkpoint.bin`` and ``pck.txt`` /
    ``pck.csv`` for the target validation split.
    """
    out_dir = Path(out_dir)
    cfg.validate()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_yaml(cfg))
    if banks is None:
        banks = load_banks(cfg, *ensure_data(cfg, out_dir))
    if style is None:
        style = ensure_style(cfg, banks, out_dir)
    result: FitResult = fit(banks.source, banks.target, banks.val, cfg, style, out_dir, banks.names, banks.groups,
                            progress)
    report = evaluate_model(result.models.student, banks.val, cfg.train.eval_alpha, banks.names, banks.groups)
    result.final_report = report
    label = cfg.ablation.label()
    (out_dir / "pck.txt").write_text(render_report(report, "table", label=label))
    (out_dir / "pck.csv").write_text(render_report(report, "csv", label=label))
    return result, banks
