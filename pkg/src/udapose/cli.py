"""Command line: ``udapose {gen-synth,pretrain-style,train,eval,sweep}``."""
from __future__ import annotations

import argparse
import copy
import csv
import io
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import Ablation, ExperimentConfig, from_dict, load_experiment, to_dict
from .data import DatasetError, load_bank, load_dataset
from .evaluation import evaluate_model, render_report, schema_groups
from .heatmap import ConfigError
from .pipeline import claim_output, load_banks, ensure_data, ensure_style, resolve_output, run_experiment
from .style import StyleNetConfig, StyleTrainConfig, style_pretrain
from .synth import SynthConfig, generate_synthetic
from .train import StateError, load_checkpoint

log = logging.getLogger("udapose")

SWEEPABLE = {"p": float, "tau_occ": float, "eta": float}


class UsageError(Exception):
    pass


def _prepare_out(path, force):
    out = resolve_output(path)
    claim_output(out, force)
    if out.exists():
        shutil.rmtree(out) if out.is_dir() else out.unlink()
    return out


def _experiment(args) -> ExperimentConfig:
    cfg = load_experiment(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        if cfg.data.synth is not None:
            cfg.data.synth.seed = args.seed
    if getattr(args, "ablate", None):
        cfg.apply_ablation(args.ablate)
    if getattr(args, "out", None):
        cfg.output = args.out
    return cfg


def cmd_gen_synth(args):
    synth, preset = SynthConfig(), "default"
    if args.config:
        doc = yaml.safe_load(Path(args.config).read_text()) or {}
        if "data" in doc:
            data = doc["data"] or {}
            synth = from_dict(SynthConfig, data.get("synth") or {}, "data.synth")
            preset = data.get("synth_preset") or "default"
        else:
            synth = from_dict(SynthConfig, doc)
    preset = args.preset or preset
    overrides = {k: v for k, v in (("seed", args.seed), ("n_source", args.n_source), ("n_target", args.n_target),
                                   ("image_size", args.image_size)) if v is not None}
    for k, v in overrides.items():
        setattr(synth, k, v)
    if preset != "default":
        synth = SynthConfig.preset(preset, image_size=synth.image_size, n_source=synth.n_source,
                                   n_target=synth.n_target, seed=synth.seed, template=synth.template)
    out = resolve_output(args.out)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    out = _prepare_out(args.out, args.force)
    src, tgt = generate_synthetic(synth, out)
    (out / "synth.yaml").write_text(yaml.safe_dump(to_dict(synth), sort_keys=False))
    print(f"wrote {len(src)} source and {len(tgt)} target samples to {out}")
    return 0


def cmd_pretrain_style(args):
    net, train = StyleNetConfig(), StyleTrainConfig()
    size = args.input_size
    if args.config:
        cfg = load_experiment(args.config)
        net, train, size = cfg.style.net, cfg.style.train, args.input_size or cfg.model.input_size
    size = size or 64
    for k in ("steps", "encoder_steps", "batch_size"):
        if getattr(args, k) is not None:
            setattr(train, k, getattr(args, k))
    if args.seed is not None:
        train.seed = args.seed
    out = _prepare_out(args.out, args.force)
    src = load_bank(load_dataset(args.source), size, labels="none")
    tgt = load_bank(load_dataset(args.target), size, labels="none")
    model = style_pretrain(src.batch(np.arange(len(src))), tgt.batch(np.arange(len(tgt))), train, net)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, {"input_size": size, "train": to_dict(train)})
    h = model.history
    if h:
        print(f"style loss {h[0]['total']:.5f} -> {h[-1]['total']:.5f}; saved {out}")
    return 0


def _progress(every):
    def show(rec):
        if every and rec.iter % every == 0:
            extra = f" tau {rec.tau_conf:.3f} teacher_act {rec.teacher_mean_act:.4f}" if rec.tau_conf is not None else ""
            print(f"epoch {rec.epoch} iter {rec.iter} sup {rec.sup:.5f} unsup {rec.unsup:.5f}{extra}", flush=True)
        if rec.val_pck is not None:
            print(f"epoch {rec.epoch} val PCK {rec.val_pck:.1f}", flush=True)
    return show


def cmd_train(args):
    cfg = _experiment(args)
    cfg.validate()
    out = _prepare_out(cfg.output, args.force)
    result, _ = run_experiment(cfg, out, _progress(args.log_every))
    print(render_report(result.final_report, label=cfg.ablation.label()), end="")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args):
    which = "teacher" if args.teacher else "student"
    model, meta = load_checkpoint(args.ckpt, which)
    ds = load_dataset(args.data)
    size = model.config.input_size
    bank = load_bank(ds, size, labels="eval")
    report = evaluate_model(model, bank, args.alpha, ds.schema.names, schema_groups(ds.schema))
    label = Ablation(**meta["config"]["ablation"]).label()
    print(render_report(report, "csv" if args.csv else "table", label=label), end="")
    return 0


def cmd_sweep(args):
    cfg = _experiment(args)
    values = [SWEEPABLE[args.param](v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("sweep grid is empty")
    out = _prepare_out(cfg.output, args.force)
    out.mkdir(parents=True)
    banks = style = None
    rows = []
    for v in values:
        run_cfg = copy.deepcopy(cfg)
        setattr(run_cfg.train, args.param, v)
        run_cfg.validate()
        run_dir = out / f"{args.param}={v:g}"
        print(f"[sweep] {args.param}={v:g}", flush=True)
        if banks is None:
            banks = load_banks(run_cfg, *ensure_data(run_cfg, out))
            style = ensure_style(run_cfg, banks, out)
        result, _ = run_experiment(run_cfg, run_dir, _progress(args.log_every), banks=banks, style=style)
        rep = result.final_report
        rows.append([args.param, f"{v:g}", f"{rep.overall:.1f}"] + [f"{r:.1f}" for r in rep.group_ratios.values()])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "val_pck"] + [g for g, _ in banks.groups])
    w.writerows(rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="udapose", description="Mean-teacher domain adaptation for 2D pose.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="render the synthetic source/target pair")
    g.add_argument("--config", help="YAML with a SynthConfig (or an experiment file with data.synth)")
    g.add_argument("--preset", choices=["default", "no_shift", "rotation_shift"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-source", type=int)
    g.add_argument("--n-target", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("pretrain-style", help="pretrain the AdaIN style model on both domains")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True, help="checkpoint file")
    s.add_argument("--config", help="experiment YAML; its style block and model.input_size are used")
    s.add_argument("--input-size", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--encoder-steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_pretrain_style)

    t = sub.add_parser("train", help="run one adaptation experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--ablate", default="", help="comma-separated switches to turn off: mt,norm,style,occ")
    t.add_argument("--out", help="output directory (overrides the config)")
    t.add_argument("--seed", type=int)
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PCK of a checkpoint on a dataset directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--csv", action="store_true")
    e.add_argument("--teacher", action="store_true", help="score the teacher instead of the student")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="grid over p, tau_occ or eta; writes sweep.csv")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    w.add_argument("--values", required=True, help="comma-separated grid, e.g. 0.3,0.5,0.7")
    w.add_argument("--ablate", default="")
    w.add_argument("--out")
    w.add_argument("--seed", type=int)
    w.add_argument("--log-every", type=int, default=0)
    w.add_argument("--force", action="store_true")
    w.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"udapose: error: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        if "ablation" in str(err):
            parser.print_usage(sys.stderr)
        print(f"udapose: error: {err}", file=sys.stderr)
        return 2 if "ablation" in str(err) else 1
    except (DatasetError, StateError, FileExistsError, FileNotFoundError, ValueError, KeyError) as err:
        print(f"udapose: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
