#!/usr/bin/env python3
"""
Render a small synthetic source/target pair, train source-only and the
full method for a few minutes, and print the two PCK tables.

Usage: python demos/quick_adaptation.py [OUT_DIR]
"""
import copy
import sys
from pathlib import Path

from udapose.config import load_experiment
from udapose.pipeline import ensure_data, ensure_style, load_banks, run_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/quick_adaptation")
cfg = load_experiment(Path(__file__).resolve().parents[1] / "configs" / "desk.yaml")
cfg.data.synth.n_source = cfg.data.synth.n_target = 600
cfg.train.epochs, cfg.train.warmup_supervised_epochs, cfg.train.lr_drop_epochs = 8, 4, (6,)
cfg.style.train.encoder_steps, cfg.style.train.steps = 150, 300

banks = load_banks(cfg, *ensure_data(cfg, out))
style = ensure_style(cfg, banks, out)

for name, ablate in (("source_only", "mt,norm,style,occ"), ("full", "")):
    run = copy.deepcopy(cfg)
    run.apply_ablation(ablate)
    result, _ = run_experiment(run, out / name, banks=banks, style=style if run.ablation.style else None)
    print((out / name / "pck.txt").read_text())
