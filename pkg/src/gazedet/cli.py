"""Command-line entry point.

Subcommands: synth | fixations | heatmap | train | eval | compare |
gradcheck | report. Exit codes: 0 ok, 1 validation error, 2 runtime
failure. Every run prints its resolved configuration and seed; GFD_SEED is
the seed fallback when --seed is not given. A JSON config file can preseed
flags (--config); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import gaze as gz
from . import metrics as mx
from . import trainer as tr
from .autodiff import NumericsError
from .detector import (
    DetectorModel,
    ModelConfig,
    load_checkpoint,
    predictions_from_json,
    save_predictions,
)
from .gradchecks import run_gradcheck_suite


class CliError(Exception):
    """Validation failure; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GFD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"GFD_SEED is not an integer: {env!r}") from exc
    return 0


def _print_resolved(args, seed: int) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    resolved["seed"] = seed
    print("resolved config:", json.dumps(resolved, default=str, sort_keys=True))


def _model_config(args, seed: int, use_fixations: bool) -> ModelConfig:
    return ModelConfig(
        img_size=args.size,
        use_fixations=use_fixations,
        fusion_mode=args.fusion,
        fusion_point=args.fusion_point,
        n_classes=5,
        seed=seed,
    )


def _load_split(args):
    train = ds.load_dataset(args.dataset, "train")
    val = ds.load_dataset(args.dataset, "val")
    test = ds.load_dataset(args.dataset, "test")
    return train, val, test


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    if args.n <= 0:
        raise CliError("--n must be positive")
    try:
        cfg = ds.SynthConfig(
            n_readings=args.n,
            img_size=args.size,
            classes=tuple(ds.ClassLabel(c) for c in args.classes),
            lesions_min=args.lesions_min,
            lesions_max=args.lesions_max,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    readings = ds.synth_generate(cfg, seed)
    train, val, test = ds.split(readings, (args.train_frac, args.val_frac,
                                           1.0 - args.train_frac - args.val_frac), seed)
    splits = {r.id: "train" for r in train}
    splits.update({r.id: "val" for r in val})
    splits.update({r.id: "test" for r in test})
    ds.save_dataset(args.out, readings, splits)
    print(f"wrote {len(readings)} readings to {args.out} "
          f"(train {len(train)}, val {len(val)}, test {len(test)})")
    return 0


def cmd_fixations(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    samples = gz.read_gaze_csv(args.gaze)
    if args.width and args.height:
        samples = gz.filter_gaze(samples, args.width, args.height, args.margin)
    fixations = gz.detect_fixations(samples, args.dispersion, args.min_dur)
    gz.write_fixation_csv(args.out, fixations)
    print(f"{len(fixations)} fixations -> {args.out}")
    return 0


def cmd_heatmap(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    fixations = gz.read_fixation_csv(args.fixations)
    fmap = gz.render_heatmap(fixations, args.width, args.height, args.sigma,
                             weighting=args.weighting)
    values = fmap.values
    if args.binarize is not None:
        values = gz.binarize(fmap, args.binarize).values
    gz.write_pgm(args.out, values)
    if args.float_out:
        gz.write_float_map(args.float_out, values)
    print(f"heatmap {args.width}x{args.height} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    train_r, val_r, _ = _load_split(args)
    if not train_r:
        raise CliError("dataset has no train split")
    model_cfg = _model_config(args, seed, use_fixations=args.fixations)
    model_cfg = ModelConfig(**{**vars(model_cfg), "img_size": train_r[0].width})
    train_cfg = tr.TrainConfig(epochs=args.epochs, lr=args.lr,
                               momentum=args.momentum, seed=seed)
    tr.train(model_cfg, train_r, val_r, train_cfg, args.out, log=print)
    print(f"artifacts in {args.out}")
    return 0


def cmd_eval(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    readings = ds.load_dataset(args.dataset, args.split)
    if not readings:
        raise CliError(f"dataset split {args.split!r} is empty")
    model = load_checkpoint(args.checkpoint)
    dets = tr.infer_dataset(model, readings)
    os.makedirs(args.out, exist_ok=True)
    save_predictions(os.path.join(args.out, "predictions.json"), dets)
    report = tr.report_from_detections(dets, readings, args.thresh, args.metric,
                                       model_tag=os.path.basename(args.checkpoint))
    mx.save_report(os.path.join(args.out, "report.json"),
                   os.path.join(args.out, "report.md"), report)
    print(report.to_markdown())
    return 0


def cmd_compare(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    train_r, val_r, test_r = _load_split(args)
    if not train_r or not test_r:
        raise CliError("compare needs non-empty train and test splits")
    img_size = train_r[0].width
    base = _model_config(args, seed, use_fixations=False)
    multi = _model_config(args, seed, use_fixations=True)
    base = ModelConfig(**{**vars(base), "img_size": img_size})
    multi = ModelConfig(**{**vars(multi), "img_size": img_size})
    train_cfg = tr.TrainConfig(epochs=args.epochs, lr=args.lr,
                               momentum=args.momentum, seed=seed)
    reports = tr.run_comparison(
        [("image_only", base), ("multimodal", multi)],
        train_r, val_r, test_r, train_cfg, args.out,
        thresh=args.thresh, kind=args.metric, log=print if args.verbose else None,
    )
    print(tr.comparison_markdown(reports))
    return 0


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    results = run_gradcheck_suite(n_seeds=args.seeds, base_seed=seed,
                                  include_end_to_end=not args.skip_e2e,
                                  log=print)
    worst = max(err for _, err in results)
    ok = worst < 1e-4
    print(f"worst relative error {worst:.3e}: {'OK' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_report(args) -> int:
    seed = _resolve_seed(args)
    _print_resolved(args, seed)
    with open(args.predictions) as fh:
        dets = predictions_from_json(json.load(fh))
    readings = ds.load_dataset(args.dataset, args.split)
    if not readings:
        raise CliError(f"dataset split {args.split!r} is empty")
    report = tr.report_from_detections(dets, readings, args.thresh, args.metric,
                                       model_tag=os.path.basename(args.predictions))
    os.makedirs(args.out, exist_ok=True)
    mx.save_report(os.path.join(args.out, "report.json"),
                   os.path.join(args.out, "report.md"), report)
    print(report.to_markdown())
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to GFD_SEED, then 0)")
    p.add_argument("--config", type=str, default=None, help="JSON file of flag defaults")


def _add_model_flags(p):
    p.add_argument("--fusion", choices=("sum", "mul"), default="sum")
    p.add_argument("--fusion-point", dest="fusion_point",
                   choices=("input", "feature"), default="feature")
    p.add_argument("--size", type=int, default=64)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)


def build_parser() -> _Parser:
    parser = _Parser(prog="gazedet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, nargs="+", default=[0, 1])
    p.add_argument("--lesions-min", type=int, default=1)
    p.add_argument("--lesions-max", type=int, default=2)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fixations", help="gaze CSV -> fixation CSV")
    _add_common(p)
    p.add_argument("--gaze", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dispersion", type=float, default=gz.DEFAULT_DISPERSION_PX)
    p.add_argument("--min-dur", dest="min_dur", type=float, default=gz.DEFAULT_MIN_DURATION_MS)
    p.add_argument("--width", type=int, default=0)
    p.add_argument("--height", type=int, default=0)
    p.add_argument("--margin", type=float, default=0.0)
    p.set_defaults(func=cmd_fixations)

    p = sub.add_parser("heatmap", help="fixation CSV -> PGM heatmap")
    _add_common(p)
    p.add_argument("--fixations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sigma", type=float, default=gz.DEFAULT_SIGMA_PX)
    p.add_argument("--weighting", choices=("duration", "uniform"), default="duration")
    p.add_argument("--binarize", type=float, default=None)
    p.add_argument("--float-out", dest="float_out", default=None)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("train", help="train one model arm")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fixations", action="store_true", help="train the multimodal arm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=("iobb", "iou"), default="iobb")
    p.add_argument("--thresh", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train/eval image-only vs multimodal")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=("iobb", "iou"), default="iobb")
    p.add_argument("--thresh", type=float, default=0.5)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--skip-e2e", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="re-render a report from predictions JSON")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=("iobb", "iou"), default="iobb")
    p.add_argument("--thresh", type=float, default=0.5)
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_file(parser, argv):
    """Parse once to find --config, re-parse with its values as defaults."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        unknown = set(overrides) - set(vars(args))
        if unknown:
            raise CliError(f"unknown keys in config file: {sorted(unknown)}")
        # defaults must land on the subparser actually in use, not the root
        subparsers = [a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction)]
        for key, value in overrides.items():
            parser.set_defaults(**{key: value})
            for sub in subparsers:
                sub.choices[args.command].set_defaults(**{key: value})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError, NumericsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
