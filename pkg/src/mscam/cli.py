"""Command-line entry point: ``mscam <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .attention import MODES, all_block_cams, fuse
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graymap import read_pgm, write_overlay_png, write_pgm
from .localization import boxes_from_map, normalize_map
from .model import init_model
from .pipeline import LocalizeParams, evaluate_model
from .synthdata import generate, load_dataset, save_dataset, split, splits_from_tags
from .tensor import bilinear_resize
from .trainer import TrainState, train

log = logging.getLogger("mscam")


class CommandError(Exception):
    pass


def _ensure_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise CommandError(f"output directory {path} is not empty (use --force to write into it)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(value, flag: str):
    if value is None:
        raise CommandError(f"{flag} is required")
    return value


def cmd_gen_data(cfg: config_mod.RunConfig, args) -> int:
    out = _ensure_out(Path(_require(args.out, "--out")), args.force)
    d = cfg.data
    data = generate(d.classes, d.n, d.image_size, d.noise_sigma, cfg.seed)
    tr, va, te = split(data, d.fractions, cfg.seed)
    save_dataset(data, out, d.classes)
    labels = np.stack([s.labels for s in data.samples])
    print(f"wrote {len(data)} samples to {out}")
    print(f"split sizes: train {len(tr)}, val {len(va)}, test {len(te)}")
    for name, prev in zip(data.class_names, labels.mean(axis=0)):
        print(f"  class {name}: prevalence {prev:.3f}")
    return 0


def _load_splits(data_dir):
    data = load_dataset(data_dir)
    if data.split_tags is None:
        raise CommandError(f"{data_dir}: manifest carries no split tags")
    return data, splits_from_tags(data)


def cmd_train(cfg: config_mod.RunConfig, args) -> int:
    out = Path(_require(args.out, "--out"))
    if args.resume is None:
        _ensure_out(out, args.force)
    else:
        out.mkdir(parents=True, exist_ok=True)
    data, (tr, va, _) = _load_splits(_require(args.data, "--data"))
    tcfg = cfg.train_config()
    if args.max_epochs is not None:
        tcfg.max_epochs = args.max_epochs
    state_path = out / "state.ckpt"
    if args.resume is not None:
        state = TrainState.load(args.resume)
        model = state.model
    else:
        state = None
        model = init_model(cfg.model_config(), cfg.seed)
    best, history = train(model, tr, va, tcfg, resume=state, state_path=state_path)
    save_checkpoint(best, out / "model.ckpt", meta={"class_names": data.class_names})
    history.write_csv(out / "history.csv")
    rel = best.relevance_weights()
    payload = {
        "class_names": data.class_names,
        "relevance_weights": rel.tolist(),
    }
    (out / "relevance.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"trained {len(history)} epoch(s); best val loss {min(history.val_losses):.6f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def _localize_params(cfg: config_mod.RunConfig, args) -> LocalizeParams:
    p = cfg.localization
    return LocalizeParams(
        tau=args.tau if args.tau is not None else p.tau,
        min_area=args.min_area if args.min_area is not None else p.min_area,
        prob_threshold=args.prob_threshold if args.prob_threshold is not None else p.prob_threshold,
        normalize=p.normalize if args.normalize is None else args.normalize,
        iou_thresholds=args.thresholds if args.thresholds is not None else p.iou_thresholds,
    )


def cmd_eval(cfg: config_mod.RunConfig, args) -> int:
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    data, (_, _, te) = _load_splits(_require(args.data, "--data"))
    if model.config.num_classes != len(data.class_names):
        raise CommandError(
            f"checkpoint has {model.config.num_classes} classes, dataset has {len(data.class_names)}"
        )
    report = evaluate_model(model, te, args.mode, _localize_params(cfg, args))
    (out / f"report_{args.mode}.csv").write_text(report.to_csv())
    (out / f"report_{args.mode}.json").write_text(report.to_json())
    print(f"mode {args.mode}: localization accuracy / (AFP)")
    for r in report.rows:
        print(f"  {r.class_name:>12s}  IOU>{r.iou_threshold:.2f}  {r.accuracy:.3f} ({r.afp:.2f})  n={r.n_images}")
    return 0


def _resolve_class(name: str, class_names: list[str]) -> int:
    if name in class_names:
        return class_names.index(name)
    try:
        c = int(name)
    except ValueError:
        raise CommandError(f"unknown class {name!r}; known: {', '.join(class_names)}") from None
    if not 0 <= c < len(class_names):
        raise CommandError(f"class id {c} out of range")
    return c


def cmd_localize(cfg: config_mod.RunConfig, args) -> int:
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    image = read_pgm(_require(args.image, "--image"))
    H, W = model.config.input_size
    if image.shape != (H, W):
        raise CommandError(f"image is {image.shape[0]}x{image.shape[1]}, model expects {H}x{W}")
    names = cfg.class_names if len(cfg.class_names) == model.config.num_classes else \
        [str(i) for i in range(model.config.num_classes)]
    c = _resolve_class(_require(args.class_name, "--class"), names)
    params = _localize_params(cfg, args)

    fwd = model.forward(image[None, None])
    cams = all_block_cams(model, fwd.block_features)
    resized = np.stack([bilinear_resize(cams[b][0, c], (H, W)) for b in range(model.config.num_blocks)])
    weights = model.relevance_weights()[c]
    fused = fuse(resized, weights, params.normalize)
    dets = boxes_from_map(fused, params.tau, params.min_area, class_id=c)

    for b in range(model.config.num_blocks):
        write_pgm(out / f"block{b + 1}_cam.pgm", normalize_map(resized[b]))
    write_pgm(out / "multiscale.pgm", fused, rescale=True)
    write_overlay_png(out / "overlay.png", image, fused, [d.bbox for d in dets])
    lines = [f"class {names[c]}", f"probability {float(fwd.fused_probs.data[0, c])!r}"]
    lines += [f"block{b + 1} {float(w)!r}" for b, w in enumerate(weights)]
    (out / "weights.txt").write_text("\n".join(lines) + "\n")
    (out / "boxes.json").write_text(json.dumps(
        [{"x": d.bbox.x, "y": d.bbox.y, "w": d.bbox.w, "h": d.bbox.h, "score": d.score} for d in dets],
        indent=2) + "\n")
    print(f"class {names[c]}: p={float(fwd.fused_probs.data[0, c]):.4f}, {len(dets)} box(es); wrote {out}")
    return 0


def cmd_inspect_weights(cfg: config_mod.RunConfig, args) -> int:
    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    rel = model.relevance_weights()
    names = cfg.class_names if len(cfg.class_names) == rel.shape[0] else [str(i) for i in range(rel.shape[0])]
    if args.json:
        print(json.dumps({"class_names": names, "relevance_weights": rel.tolist()}, indent=2))
        return 0
    header = "class".ljust(12) + "".join(f"block{b + 1}".rjust(10) for b in range(rel.shape[1]))
    print(header)
    for name, row in zip(names, rel):
        print(name.ljust(12) + "".join(f"{w:10.4f}" for w in row))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "localize": cmd_localize,
    "inspect-weights": cmd_inspect_weights,
}


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                        help="write into a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    loc = argparse.ArgumentParser(add_help=False)
    loc.add_argument("--tau", type=float, help="binarization threshold relative to the map maximum")
    loc.add_argument("--min-area", type=int, help="smallest component kept, in pixels")
    loc.add_argument("--prob-threshold", type=float, help="localize classes with probability at least this")
    loc.add_argument("--thresholds", type=_thresholds, help="IOU thresholds, e.g. 0.3,0.5")
    norm = loc.add_mutually_exclusive_group()
    norm.add_argument("--normalize", dest="normalize", action="store_true", default=None,
                      help="min-max scale block maps before fusion (default)")
    norm.add_argument("--raw", dest="normalize", action="store_false", help="fuse raw block maps")

    parser = argparse.ArgumentParser(prog="mscam", parents=[common],
                                     description="Multiscale class-activation localization on synthetic images.")
    parser.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a model on a generated dataset")
    p.add_argument("--data", type=Path, help="dataset directory")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--resume", type=Path, help="training state file to continue from")

    p = sub.add_parser("eval", parents=[common, loc], help="score localization on the test split")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--mode", choices=MODES, default="multiscale")

    p = sub.add_parser("localize", parents=[common, loc], help="attention maps and boxes for one image")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--image", type=Path)
    p.add_argument("--class", dest="class_name")

    p = sub.add_parser("inspect-weights", parents=[common], help="print learned relevance weights")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--json", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", None), ("force", False), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.print_config:
            sys.stdout.write(cfg.to_yaml())
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        return COMMANDS[args.command](cfg, args)
    except (CommandError, config_mod.ConfigError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"mscam: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
