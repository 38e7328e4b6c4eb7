"""Command-line entry point: ``dense-ntp <command> [flags]``.

Every command writes its artifacts plus a ``manifest.json`` into ``--out``.
Parameters may come from a TOML file (``--config``); flags given on the
command line win over config values, and unknown config keys are rejected.
Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .codec import emit_message, parse_message, rle_decode, rle_encode
from .decode import (
    aggregate_category_logits,
    decode_depth,
    decode_semantic,
    pca_rgb,
    soft_map,
    write_soft_map,
)
from .densemap import DenseMap, colorize, load_densemap, save_densemap, write_ppm
from .depthq import DepthQuantizer, preset
from .errors import DenseNTPError
from .loss import LOSS_KINDS, LogitsGrid
from .metrics import ConfusionMatrix, delta_threshold, metric_report
from .synthlab.experiments import PRESETS, LabConfig, gradcheck_case, lab_vocabulary, run_experiment, scene_set
from .synthlab.model import TinyModel, forward, load_model, save_model
from .synthlab.train import evaluate_miou, gradcheck, predict_semantic, train
from .vocab import CategoryTokenMap, Vocabulary

THREADS_ENV = "DENSE_NTP_THREADS"

# LabConfig fields exposed as flags; loss_kind is spelled --loss
_LAB_FIELDS = [f for f in fields(LabConfig)]


def _flag(name: str) -> str:
    return "--" + ("loss" if name == "loss_kind" else name.replace("_", "-"))


def _add_lab_flags(p: argparse.ArgumentParser, skip=()) -> None:
    for f in _LAB_FIELDS:
        if f.name in skip:
            continue
        kind = {"int": int, "float": float, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
        extra = {"choices": LOSS_KINDS} if f.name == "loss_kind" else {}
        p.add_argument(_flag(f.name), dest=f.name, type=kind, default=f.default, **extra)


def _lab_config(args) -> LabConfig:
    return replace(LabConfig(), **{f.name: getattr(args, f.name) for f in _LAB_FIELDS if hasattr(args, f.name)})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with parameter values (flags override)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="artifact directory")

    parser = argparse.ArgumentParser(prog="dense-ntp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dense-ntp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", parents=[common], help="train a tiny model on synthetic scenes")
    _add_lab_flags(p)

    p = sub.add_parser("eval", parents=[common], help="metrics for a trained model or for saved maps")
    p.add_argument("--model", help="model .npz from `train`; evaluated on the lab test scenes")
    p.add_argument("--pred", help="predicted semantic map (PGM)")
    p.add_argument("--gt", help="ground-truth semantic map (PGM)")
    p.add_argument("--classes", type=int, help="number of classes for --pred/--gt")
    p.add_argument("--depth-pred", help="predicted depth in meters (.npy)")
    p.add_argument("--depth-gt", help="ground-truth depth in meters (.npy)")
    _add_lab_flags(p)

    p = sub.add_parser("decode", parents=[common], help="decode token logits into a dense map")
    p.add_argument("--model", help="model .npz; decodes lab test scene --scene")
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--logits", help="(L, V) logits .npy instead of a model")
    p.add_argument("--vocab", help="vocabulary file (one token per line) for --logits")
    p.add_argument("--names", help="comma-separated category names for --logits")
    p.add_argument("--grid-w", type=int)
    p.add_argument("--grid-h", type=int)
    p.add_argument("--w", type=int, help="output width in pixels")
    p.add_argument("--h", type=int, help="output height in pixels")
    p.add_argument("--task", choices=("semantic", "depth"), default="semantic")
    p.add_argument("--temperature", type=float, default=0.2, help="soft-map temperature")
    p.add_argument("--background", help="'scale,bg_score' enables the background decision")
    p.add_argument("--depth-preset", default="nyuv2")
    _add_lab_flags(p)

    p = sub.add_parser("depth-quant", parents=[common], help="quantize depths to bins or back")
    p.add_argument("--preset", default="nyuv2", help="nyuv2 | cityscapes | ddad | openworld")
    p.add_argument("--scheme", choices=("linear", "log_uniform"))
    p.add_argument("--d-min", type=float)
    p.add_argument("--d-max", type=float)
    p.add_argument("--depth", type=float, nargs="*", default=[], help="depths in meters")
    p.add_argument("--bins", type=int, nargs="*", default=[], help="bins to dequantize")
    p.add_argument("--in", dest="input", help=".npy depth map in meters; writes a depth-bin PGM")

    p = sub.add_parser("codec", parents=[common], help="RLE masks and tag messages")
    p.add_argument("action", choices=("encode", "decode", "parse"))
    p.add_argument("--in", dest="input", required=True, help="input file, or - for standard input")
    p.add_argument("--w", type=int)
    p.add_argument("--h", type=int)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--loss", choices=LOSS_KINDS + ("all",), default="ntpm")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--trials", type=int, default=20, help="weights checked per configuration")
    p.add_argument("--configs", type=int, default=1, help="random (model, scene) configurations")

    p = sub.add_parser("bench", parents=[common], help="run an ablation preset")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds, starting at --seed")
    _add_lab_flags(p, skip=("loss_kind", "k", "scale"))

    p = sub.add_parser("viz-pca", parents=[common], help="PCA false-color image of token features")
    p.add_argument("--hidden", help="(L, D) features .npy")
    p.add_argument("--grid-w", type=int)
    p.add_argument("--grid-h", type=int)
    p.add_argument("--model", help="model .npz; uses the hidden states of lab test scene --scene")
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--iters", type=int, default=200)
    _add_lab_flags(p)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: List[str]):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = _subparser(parser, args.command)
        try:
            with open(args.config, "rb") as fh:
                cfg = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            sp.error(f"cannot read config {args.config}: {e}")
        # a [command] table may hold command-specific values
        section = cfg.pop(args.command, {}) if isinstance(cfg.get(args.command), dict) else {}
        cfg.update(section)
        known = {a.dest for a in sp._actions} - {"help", "config"}
        flat = {k.replace("-", "_"): v for k, v in cfg.items()}
        flat = {("loss_kind" if k == "loss" and "loss_kind" in known else k): v for k, v in flat.items()}
        unknown = sorted(set(flat) - known)
        if unknown:
            sp.error(f"unknown config key(s): {', '.join(unknown)}")
        sp.set_defaults(**flat)
        args = parser.parse_args(argv)
    return args


# -- helpers -------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, args, argv: List[str], artifacts: List[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items())}
    _write_json(
        out / "manifest.json",
        {
            "tool": "dense-ntp",
            "version": __version__,
            "command": args.command,
            "argv": argv,
            "seed": args.seed,
            "config": config,
            "artifacts": sorted(artifacts),
        },
    )


def _read_text(src: str) -> str:
    return sys.stdin.read() if src == "-" else Path(src).read_text()


def _lab_model_scene(args):
    """Model, sample and category map for lab test scene ``args.scene``."""
    cfg = _lab_config(args)
    vocab, cat_map = lab_vocabulary(cfg)
    _, test = scene_set(cfg, args.seed, vocab, cat_map)
    if not 0 <= args.scene < len(test):
        raise DenseNTPError(f"--scene must be in 0..{len(test) - 1}")
    return load_model(args.model), test[args.scene], vocab, cat_map


# -- commands ------------------------------------------------------------------


def cmd_train(args, out: Path) -> List[str]:
    cfg = _lab_config(args)
    vocab, cat_map = lab_vocabulary(cfg)
    train_set, test_set = scene_set(cfg, args.seed, vocab, cat_map)
    model = TinyModel.init(cfg.mode, cfg.n_classes + 1, vocab.size, seed=args.seed, rank=cfg.rank)
    res = train(model, train_set, cfg.loss_kind, cfg.k, cfg.steps, cfg.lr, args.seed, cfg.batch_size)
    save_model(out / "model.npz", res.model)
    vocab.save(out / "vocab.txt")
    (out / "curve.csv").write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.curve, 1)))
    score = evaluate_miou(res.model, test_set, cat_map)
    _write_json(out / "report.json", {"config": asdict(cfg), "final_loss": res.curve[-1], "test_miou": score})
    return ["model.npz", "vocab.txt", "curve.csv", "report.json"]


def cmd_eval(args, out: Path) -> List[str]:
    cm, d1 = None, None
    if args.model:
        cfg = _lab_config(args)
        vocab, cat_map = lab_vocabulary(cfg)
        _, test = scene_set(cfg, args.seed, vocab, cat_map)
        model = load_model(args.model)
        cm = ConfusionMatrix(len(cat_map))
        for s in test:
            cm.update(s.scene.semantic.values, predict_semantic(model, s, cat_map).values)
    elif args.pred and args.gt:
        pred, gt = load_densemap(args.pred), load_densemap(args.gt)
        n = args.classes or int(max(gt.values[gt.valid].max(initial=0), pred.values[pred.valid].max(initial=0))) + 1
        cm = ConfusionMatrix(n).update(gt.values, pred.values, gt.ignore_value)
    if args.depth_pred and args.depth_gt:
        d1 = delta_threshold(np.load(args.depth_pred), np.load(args.depth_gt))
    if cm is None and d1 is None:
        raise SystemExit(_usage_error("eval needs --model, --pred/--gt or --depth-pred/--depth-gt"))
    (out / "metrics.json").write_text(metric_report(cm, delta1=d1) + "\n")
    return ["metrics.json"]


def _usage_error(msg: str) -> int:
    print(f"dense-ntp: error: {msg}", file=sys.stderr)
    return 2


def cmd_decode(args, out: Path) -> List[str]:
    if args.model:
        model, sample, vocab, cat_map = _lab_model_scene(args)
        t = sample.targets
        logits = LogitsGrid(t.grid_w, t.grid_h, forward(model, sample.features))
        w = args.w or sample.scene.semantic.width
        h = args.h or sample.scene.semantic.height
        save_densemap(out / "gt.pgm", sample.scene.semantic)
        arts = ["gt.pgm", "gt.pgm.hdr"]
    elif args.logits:
        if not (args.vocab and args.grid_w and args.grid_h and args.w and args.h):
            raise SystemExit(_usage_error("--logits needs --vocab, --grid-w, --grid-h, --w and --h"))
        vocab = Vocabulary.load(args.vocab)
        logits = LogitsGrid(args.grid_w, args.grid_h, np.load(args.logits))
        names = [n for n in (args.names or "").split(",") if n]
        cat_map = CategoryTokenMap.from_names(names, vocab) if names else None
        w, h = args.w, args.h
        arts = []
    else:
        raise SystemExit(_usage_error("decode needs --model or --logits"))

    if args.task == "depth":
        bins = decode_depth(logits, vocab, w, h)
        save_densemap(out / "depth_bins.pgm", bins)
        np.save(out / "depth_m.npy", preset(args.depth_preset).dequantize_array(np.maximum(bins.values, 1)))
        return arts + ["depth_bins.pgm", "depth_bins.pgm.hdr", "depth_m.npy"]
    if cat_map is None:
        raise SystemExit(_usage_error("semantic decoding needs --names"))
    cl = aggregate_category_logits(logits, cat_map)
    bg = tuple(float(v) for v in args.background.split(",")) if args.background else None
    sem = decode_semantic(cl, w, h, background=bg)
    save_densemap(out / "semantic.pgm", sem)
    write_ppm(out / "semantic.ppm", colorize(sem.values, sem.ignore_value))
    write_soft_map(out / "soft.f32", soft_map(cl, w, h, args.temperature))
    return arts + ["semantic.pgm", "semantic.pgm.hdr", "semantic.ppm", "soft.f32", "soft.f32.hdr"]


def cmd_depth_quant(args, out: Path) -> List[str]:
    if args.scheme or args.d_min is not None or args.d_max is not None:
        base = preset(args.preset)
        q = DepthQuantizer(
            args.scheme or base.scheme,
            base.d_min if args.d_min is None else args.d_min,
            base.d_max if args.d_max is None else args.d_max,
        )
    else:
        q = preset(args.preset)
    result = {
        "quantizer": asdict(q),
        "quantized": [{"depth_m": d, "bin": q.quantize(d)} for d in args.depth],
        "dequantized": [{"bin": b, "depth_m": q.dequantize(b)} for b in args.bins],
    }
    arts = ["depth_quant.json"]
    if args.input:
        bins = q.quantize_array(np.load(args.input))
        save_densemap(out / "depth_bins.pgm", DenseMap.depth(bins))
        arts += ["depth_bins.pgm", "depth_bins.pgm.hdr"]
    _write_json(out / "depth_quant.json", result)
    return arts


def cmd_codec(args, out: Path) -> List[str]:
    if args.action == "encode":
        payload = rle_encode(load_densemap(args.input) if args.input != "-" else _stdin_map()).payload
        (out / "mask.rle").write_text(payload + "\n")
        return ["mask.rle"]
    if args.action == "decode":
        if not (args.w and args.h):
            raise SystemExit(_usage_error("codec decode needs --w and --h"))
        save_densemap(out / "mask.pgm", rle_decode(_read_text(args.input).strip(), args.w, args.h))
        return ["mask.pgm", "mask.pgm.hdr"]
    text = _read_text(args.input)
    if text.endswith("\n"):
        text = text[:-1]
    msg = parse_message(text)
    _write_json(out / "message.json", {**msg.fields(), "canonical": emit_message(msg)})
    return ["message.json"]


def _stdin_map():
    rows = [[int(v) for v in line.split()] for line in sys.stdin.read().splitlines() if line.strip()]
    return DenseMap(np.array(rows))


def cmd_gradcheck(args, out: Path) -> List[str]:
    kinds = LOSS_KINDS if args.loss == "all" else (args.loss,)
    reports = []
    for kind in kinds:
        for c in range(args.configs):
            seed = args.seed + c
            model, samples = gradcheck_case(seed)
            r = gradcheck(model, samples, kind, args.k, args.trials, seed=seed)
            reports.append({"loss": kind, "config_seed": seed, "max_rel_error": r.max_rel_error, "worst": r.worst})
    worst = max(r["max_rel_error"] for r in reports)
    _write_json(out / "gradcheck.json", {"max_rel_error": worst, "passed": worst < 1e-6, "checks": reports})
    return ["gradcheck.json"]


def cmd_bench(args, out: Path) -> List[str]:
    workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    seeds = [args.seed + i for i in range(args.seeds)]
    report = run_experiment(args.preset, seeds, out_dir=str(out), base=_lab_config(args), workers=max(1, workers))
    for arm in report["arms"]:
        arm["curve_path"] = os.path.basename(arm["curve_path"])
    _write_json(out / "report.json", report)
    return ["report.json"] + [a["curve_path"] for a in report["arms"]]


def cmd_viz_pca(args, out: Path) -> List[str]:
    if args.hidden:
        if not (args.grid_w and args.grid_h):
            raise SystemExit(_usage_error("--hidden needs --grid-w and --grid-h"))
        hidden, gw, gh = np.load(args.hidden), args.grid_w, args.grid_h
    elif args.model:
        model, sample, _, _ = _lab_model_scene(args)
        _, cache = forward(model, sample.features, return_cache=True)
        hidden, gw, gh = cache.h, sample.targets.grid_w, sample.targets.grid_h
    else:
        raise SystemExit(_usage_error("viz-pca needs --hidden or --model"))
    res = pca_rgb(hidden, gw, gh, iters=args.iters, seed=args.seed)
    write_ppm(out / "pca.ppm", res.image)
    _write_json(
        out / "pca.json",
        {"variances": res.variances.tolist(), "components": res.components.tolist(), "rank_deficient": res.rank_deficient},
    )
    return ["pca.ppm", "pca.json"]


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "depth-quant": cmd_depth_quant,
    "codec": cmd_codec,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "viz-pca": cmd_viz_pca,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        artifacts = COMMANDS[args.command](args, out)
    except SystemExit as e:
        return int(e.code or 0)
    except (DenseNTPError, ValueError, OSError) as e:
        print(f"dense-ntp: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    _manifest(out, args, argv, artifacts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
