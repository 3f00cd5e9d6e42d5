"""Command-line interface: gen / train / eval / predict / plot / gradcheck."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import gradcheck as gc
from .checkpoint import load_checkpoint, read_kv
from .dataset_io import generate_dataset, read_cwf1
from .labels import KeypointBox, mask_to_keypoints
from .metrics import DEFAULT_THRESHOLDS, integrity, iou, purity
from .model import Model, ModelConfig, raw_to_box
from .svgplot import render_sample_svg
from .train import TrainConfig, evaluate, format_summary, train
from .wavesim import CrackSampler, LatticeConfig


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crackpoint",
        description="Synthetic lattice wave-field datasets and keypoint-box crack localization.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a CWF1 dataset of simulated wave fields")
    g.add_argument("--n", type=int, required=True, help="number of samples (>= 1)")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--out", required=True, help="output .cwf1 path")
    g.add_argument("--grid", type=int, default=64, help="lattice nodes per side (default 64)")
    g.add_argument("--steps", type=int, default=2000, help="time steps (default 2000)")
    g.add_argument("--crack-min", type=float, default=0.15,
                   help="minimum crack length, normalized (default 0.15)")
    g.add_argument("--crack-max", type=float, default=0.45,
                   help="maximum crack length, normalized (default 0.45)")

    t = sub.add_parser("train", help="train the model on a CWF1 dataset")
    t.add_argument("--data", required=True, help="training dataset (.cwf1)")
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    t.add_argument("--epochs", type=int, default=None, help="override epoch count")
    t.add_argument("--seed", type=int, default=None, help="override seed")
    t.add_argument("--base-filters", type=int, default=None,
                   help="override first-block filter count (default 16)")

    e = sub.add_parser("eval", help="evaluate a checkpoint: binned IoU/Purity/Integrity table")
    e.add_argument("--data", required=True, help="evaluation dataset (.cwf1)")
    e.add_argument("--checkpoint", required=True, help="model checkpoint (.mcpn)")
    e.add_argument("--thresholds", default=",".join(str(t) for t in DEFAULT_THRESHOLDS),
                   help="comma-separated crack-size thresholds "
                        f"(default {','.join(str(t) for t in DEFAULT_THRESHOLDS)})")
    e.add_argument("--csv", default=None, help="also write the table as CSV to this path")

    pr = sub.add_parser("predict", help="predict the keypoint box for one sample")
    pr.add_argument("--data", required=True, help="dataset (.cwf1)")
    pr.add_argument("--checkpoint", required=True, help="model checkpoint (.mcpn)")
    pr.add_argument("--index", type=int, required=True, help="sample index")
    pr.add_argument("--plot", default=None, help="write an overlay SVG to this path")

    pl = sub.add_parser("plot", help="render truth/prediction overlays as SVG files")
    pl.add_argument("--data", required=True, help="dataset (.cwf1)")
    pl.add_argument("--checkpoint", required=True, help="model checkpoint (.mcpn)")
    pl.add_argument("--indices", required=True, help="comma-separated sample indices")
    pl.add_argument("--out-dir", required=True, help="output directory")

    gch = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    grp = gch.add_mutually_exclusive_group(required=True)
    grp.add_argument("--all", action="store_true", help="check every layer kind")
    grp.add_argument("--layer", default=None,
                     help=f"check one layer: {', '.join(sorted(gc.standard_checks()))}")
    return p


def _cmd_gen(args) -> int:
    if args.n < 1:
        raise SystemExit2("--n must be >= 1")
    cfg = LatticeConfig(grid_nx=args.grid, grid_ny=args.grid, n_steps=args.steps,
                        seed=args.seed)
    sampler = CrackSampler(length_range=(args.crack_min, args.crack_max))
    ds = generate_dataset(args.n, cfg, sampler, args.out)
    print(f"wrote {ds.n_samples} samples to {args.out}")
    sizes = ds.sizes[ds.sizes > 0]
    edges = np.linspace(0.0, max(float(sizes.max()), 1e-6) if sizes.size else 1.0, 9)
    counts, _ = np.histogram(ds.sizes, bins=edges)
    print("crack-size histogram:")
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        print(f"  [{lo:.3f}, {hi:.3f}): {c}")
    print(f"  total: {int(counts.sum())}")
    return 0


def _load_configs(args) -> tuple[ModelConfig, TrainConfig]:
    raw = read_kv(args.config) if args.config else {}
    model_kv = {k[len("model."):]: v for k, v in raw.items() if k.startswith("model.")}
    train_kv = {k[len("train."):]: v for k, v in raw.items() if k.startswith("train.")}
    # unprefixed keys go to the train config (loss, learning_rate, ...)
    for k, v in raw.items():
        if "." not in k:
            train_kv[k] = v
    mcfg = ModelConfig.from_dict(model_kv)
    tcfg = TrainConfig.from_dict(train_kv)
    if args.epochs is not None:
        tcfg.epochs = args.epochs
    if args.seed is not None:
        tcfg.seed = args.seed
        mcfg.seed = args.seed
    if args.base_filters is not None:
        mcfg.base_filters = args.base_filters
    return mcfg, tcfg


def _cmd_train(args) -> int:
    ds = read_cwf1(args.data)
    mcfg, tcfg = _load_configs(args)
    mcfg.input_shape = ds.fields.shape[1:]
    model = Model(mcfg)
    result = train(model, ds, tcfg, args.out)
    print(f"checkpoints: {result.best_path} (best), {result.final_path} (final)")
    for k, v in format_summary(result.log).items():
        print(f"{k:26s} {v}")
    return 0


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise SystemExit2(f"bad --thresholds value: {exc}")
    if not vals:
        raise SystemExit2("--thresholds needs at least one value")
    return vals


def _cmd_eval(args) -> int:
    ds = read_cwf1(args.data)
    model, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, ds, _parse_thresholds(args.thresholds))
    print(report.to_text(), end="")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"wrote {args.csv}")
    return 0


def _sample_boxes(ds, model, index):
    if not 0 <= index < ds.n_samples:
        raise SystemExit2(f"--index {index} out of range [0, {ds.n_samples})")
    truth = mask_to_keypoints(ds.masks[index])
    raw = model.predict(ds.fields[index:index + 1])[0]
    return truth, raw_to_box(raw), raw


def _cmd_predict(args) -> int:
    ds = read_cwf1(args.data)
    model, _ = load_checkpoint(args.checkpoint)
    truth, box, raw = _sample_boxes(ds, model, args.index)
    print(f"raw output : {raw[0]:.6f} {raw[1]:.6f} {raw[2]:.6f} {raw[3]:.6f}")
    print(f"box        : x_min={box.x_min:.6f} y_min={box.y_min:.6f} "
          f"x_max={box.x_max:.6f} y_max={box.y_max:.6f}")
    if truth is None:
        print("ground truth: none (no crack)")
    else:
        print(f"truth      : x_min={truth.x_min:.6f} y_min={truth.y_min:.6f} "
              f"x_max={truth.x_max:.6f} y_max={truth.y_max:.6f}")
        print(f"IoU={iou(box, truth):.6f} Purity={purity(box, truth):.6f} "
              f"Integrity={integrity(box, truth):.6f}")
    if args.plot:
        with open(args.plot, "w", encoding="utf-8") as fh:
            fh.write(render_sample_svg(ds.masks[args.index], truth, box))
        print(f"wrote {args.plot}")
    return 0


def _cmd_plot(args) -> int:
    ds = read_cwf1(args.data)
    model, _ = load_checkpoint(args.checkpoint)
    try:
        indices = [int(v) for v in args.indices.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise SystemExit2(f"bad --indices value: {exc}")
    os.makedirs(args.out_dir, exist_ok=True)
    for idx in indices:
        truth, box, _ = _sample_boxes(ds, model, idx)
        path = os.path.join(args.out_dir, f"sample_{idx}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_sample_svg(ds.masks[idx], truth, box))
        print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    names = None if args.all else [args.layer]
    try:
        results = gc.run_all(names)
    except KeyError as exc:
        raise SystemExit2(str(exc.args[0]))
    worst = 0.0
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:18s} max relative error {r.max_rel_err:.3e} "
              f"(tolerance {r.tolerance:g})")
        worst = max(worst, r.max_rel_err)
        ok = ok and r.passed
    print(f"worst: {worst:.3e}")
    return 0 if ok else 1


class SystemExit2(Exception):
    """Usage-level error: one-line diagnostic, exit code 2."""


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "predict": _cmd_predict,
        "plot": _cmd_plot,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
