"""Command-line entry point: scan inspection, gradient checks, training, restoration, evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .imageio import read_image, write_image
from .net import MaIR, load_model, save_model
from .scan import (ScanSpec, Strategy, continuity_score, four_directions, locality_profile,
                   render_svg)
from .tensor import Tensor

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
IMAGE_SUFFIXES = (".ppm", ".pgm")


class UsageError(Exception):
    """Bad arguments discovered after parsing; maps to exit code 2."""


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_float(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _echo(command: str, config: dict) -> None:
    print(f"# {command} " + json.dumps(config, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# scan


def cmd_scan(args) -> int:
    try:
        spec = ScanSpec(Strategy(args.strategy), args.stripe, args.shift, args.direction)
        perms = four_directions(spec, args.height, args.width)
    except ValueError as e:
        raise UsageError(str(e)) from e
    perm = perms[args.direction]
    _echo("scan", {"spec": spec.to_dict(), "height": args.height, "width": args.width})
    L = args.height * args.width
    cont = continuity_score(perm) if L >= 2 else 1.0
    print(f"continuity {cont:.4f}")
    w = args.stripe
    for n in sorted({4, w * w, 2 * w * w}):
        if n <= L:
            print(f"locality n={n} area={locality_profile(perm, n)}")
        else:
            print(f"locality n={n} skipped (sequence length {L})")
    if args.json:
        Path(args.json).write_text(perm.to_json())
    if args.svg:
        Path(args.svg).write_text(render_svg(perms))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from .gradsuite import SUITES

    names = args.module or list(SUITES)
    seeds = list(range(args.seed, args.seed + args.cases))
    _echo("gradcheck", {"modules": names, "seeds": [seeds[0], seeds[-1]], "tolerance": 1e-4})
    all_ok = True
    for name in names:
        results = [r for s in seeds for r in SUITES[name](s)]
        worst = max(results, key=lambda r: r.max_rel_err)
        ok = all(r.ok for r in results)
        all_ok &= ok
        print(f"{name:8s} {'ok  ' if ok else 'FAIL'} worst {worst.max_rel_err:.3e} "
              f"({worst.name}) over {len(results)} checks")
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# train / ablate


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def resolve_train_run(args):
    from .train.loop import TrainRun

    raw = _load_config(args.config)
    model = dict(raw.get("model", {}))
    deg = dict(raw.get("degradation", {}))
    top = {k: v for k, v in raw.items() if k not in ("model", "degradation")}
    if args.task:
        deg["task"] = args.task
    task = deg.get("task", "denoise")
    model.setdefault("head", "sr" if task == "sr" else "restore")
    if task == "sr":
        deg.setdefault("scale", model.get("scale", 2))
    if args.sigma is not None:
        deg["sigma"] = args.sigma / 255.0
    if args.steps is not None:
        top["steps"] = args.steps
    if args.seed is not None:
        top["seed"] = model["seed"] = deg["seed"] = args.seed
    try:
        return TrainRun.from_dict({"model": model, "degradation": deg, **top})
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from e


def cmd_train(args) -> int:
    from .train.loop import train

    run = resolve_train_run(args)
    _echo("train", run.manifest())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(run)
    save_model(result.model, out / "model.mair")
    with open(out / "metrics.jsonl", "w") as f:
        for entry in result.log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    manifest = {"run": run.manifest(), "input_psnr": result.input_psnr,
                "val_psnr": result.val_psnr, "val_ssim": result.val_ssim,
                "params": result.model.num_parameters()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"input_psnr {result.input_psnr:.4f} val_psnr {result.val_psnr:.4f} "
          f"val_ssim {result.val_ssim:.5f} wall {result.wall_seconds:.1f}s")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train.ablation import default_run, rows_to_csv, run_ablation

    base = default_run(args.budget, args.seed)
    _echo("ablate", {"axis": args.axis, "budget": args.budget, "base": base.manifest()})
    rows = run_ablation(args.axis, args.budget, base)
    text = rows_to_csv(rows)
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# restore / eval


def _open_model(path) -> MaIR:
    try:
        return load_model(path)
    except (ValueError, KeyError) as e:
        raise UsageError(f"cannot load model {path}: {e}") from e


def _check_compatible(model: MaIR, img: np.ndarray, task: str | None, where: str) -> None:
    cfg = model.cfg
    if task is not None:
        need = "sr" if task == "sr" else "restore"
        if need != cfg.head:
            raise UsageError(f"task {task!r} needs the {need!r} head, "
                             f"model has the {cfg.head!r} head")
    if img.shape[0] != cfg.in_channels:
        raise UsageError(f"{where} has {img.shape[0]} channels, model expects {cfg.in_channels}")


def run_model(model: MaIR, img: np.ndarray) -> np.ndarray:
    return model(Tensor(img[None].astype(np.float32))).data[0]


def cmd_restore(args) -> int:
    model = _open_model(args.model)
    img = read_image(args.input)
    _check_compatible(model, img, args.task, args.input)
    _echo("restore", {"model": args.model, "in": args.input, "out": args.out,
                      "head": model.cfg.head, "shape": list(img.shape)})
    write_image(args.out, run_model(model, img))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train.data import DegradationSpec, degrade
    from .train.metrics import psnr, ssim

    model = _open_model(args.model)
    cfg = model.cfg
    files = sorted(p for p in Path(args.clean_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no .ppm/.pgm images in {args.clean_dir}")
    if cfg.head == "sr":
        spec = DegradationSpec(task="sr", scale=cfg.scale, seed=args.seed)
    else:
        spec = DegradationSpec(task="denoise", sigma=args.sigma / 255.0, seed=args.seed)
    _echo("eval", {"model": args.model, "clean_dir": args.clean_dir, "head": cfg.head,
                   "degradation": dataclasses.asdict(spec)})
    rng = np.random.default_rng(args.seed)
    print(f"{'image':24s} {'input_psnr':>10s} {'psnr':>8s} {'ssim':>7s}")
    rows = []
    for path in files:
        clean = read_image(path)
        _check_compatible(model, clean, args.task, path.name)
        if cfg.head == "sr":
            r = cfg.scale
            clean = clean[:, :clean.shape[1] // r * r, :clean.shape[2] // r * r]
            lr_img = degrade(clean, spec, rng)
            baseline = lr_img.repeat(r, axis=1).repeat(r, axis=2)
        else:
            lr_img = degrade(clean, spec, rng)
            baseline = lr_img
        pred = np.clip(run_model(model, lr_img), 0.0, 1.0)
        row = (psnr(np.clip(baseline, 0, 1), clean), psnr(pred, clean), ssim(pred, clean))
        rows.append(row)
        print(f"{path.name:24s} {row[0]:10.4f} {row[1]:8.4f} {row[2]:7.4f}")
    mean = np.mean(rows, axis=0)
    print(f"{'mean':24s} {mean[0]:10.4f} {mean[1]:8.4f} {mean[2]:7.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mairkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="build a scan permutation and report its metrics")
    s.add_argument("--strategy", choices=[m.value for m in Strategy], default="nss")
    s.add_argument("--height", type=_positive, required=True)
    s.add_argument("--width", type=_positive, required=True)
    s.add_argument("--stripe", type=_positive, default=4, help="stripe width / window side")
    s.add_argument("--direction", type=int, choices=range(4), default=0)
    s.add_argument("--shift", action="store_true", help="shifted stripes (NSS only)")
    s.add_argument("--json", metavar="PATH", help="write the permutation as JSON")
    s.add_argument("--svg", metavar="PATH", help="render all four directions as SVG")
    s.set_defaults(func=cmd_scan)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--cases", type=_positive, default=20, help="number of seeds")
    g.add_argument("--module", action="append",
                   choices=["tensor", "ssm", "ssa", "mairm", "vmm", "heads", "losses"],
                   help="restrict to a suite (repeatable)")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train a toy model on synthetic data")
    t.add_argument("--task", choices=["denoise", "sr"])
    t.add_argument("--config", metavar="JSON", help="run config file")
    t.add_argument("--steps", type=_positive)
    t.add_argument("--seed", type=int)
    t.add_argument("--sigma", type=_non_negative_float, help="noise std in 0..255 units")
    t.add_argument("--out", required=True, metavar="DIR")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train one toy model per variant of an ablation axis")
    a.add_argument("--axis", choices=["scan_strategy", "aggregation", "stripe_width"],
                   required=True)
    a.add_argument("--budget", type=_positive, default=500, help="training steps per variant")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--csv", metavar="PATH")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("restore", help="run a saved model on one PPM/PGM image")
    r.add_argument("--model", required=True)
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--task", choices=["denoise", "sr"], help="assert the model's head")
    r.set_defaults(func=cmd_restore)

    e = sub.add_parser("eval", help="PSNR/SSIM of a saved model over a folder of clean images")
    e.add_argument("--model", required=True)
    e.add_argument("--clean-dir", required=True)
    e.add_argument("--sigma", type=_non_negative_float, default=25.0,
                   help="noise std in 0..255 units (restore head)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--task", choices=["denoise", "sr"], help="assert the model's head")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"mairkit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError) as e:
        print(f"mairkit {args.command}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
