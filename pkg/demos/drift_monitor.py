#!/usr/bin/env python3
"""
Read the metrics logs of two `train` runs (one with `--ablate norm`) and
print the teacher's mean activation per epoch beside the pseudo-label mean.

    udapose train --config configs/desk.yaml --out runs/norm
    udapose train --config configs/desk.yaml --out runs/no_norm --ablate norm
    python demos/drift_monitor.py runs/norm runs/no_norm
"""
import json
import sys
from collections import defaultdict
from pathlib import Path


def per_epoch(run_dir, key):
    acc = defaultdict(list)
    for line in (Path(run_dir) / "metrics.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec[key] is not None:
            acc[rec["epoch"]].append(rec[key])
    return {e: sum(v) / len(v) for e, v in sorted(acc.items())}


norm_dir, raw_dir = sys.argv[1:3]
ref = json.loads((Path(norm_dir) / "metrics.jsonl").read_text().splitlines()[0])["gt_mean_ref"]
pseudo = per_epoch(norm_dir, "pseudo_mean_act")
teacher_norm = per_epoch(norm_dir, "teacher_mean_act")
teacher_raw = per_epoch(raw_dir, "teacher_mean_act")
unsup_raw = per_epoch(raw_dir, "unsup")

print(f"ground-truth channel mean {ref:.5f}")
print("epoch  pseudo(norm)  teacher(norm)  teacher(no norm)  unsup(no norm)")
for e in teacher_raw:
    print(f"{e:5d}  {pseudo.get(e, float('nan')):12.5f}  {teacher_norm.get(e, float('nan')):13.5f}"
          f"  {teacher_raw[e]:16.5f}  {unsup_raw[e]:14.6f}")
