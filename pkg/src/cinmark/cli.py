"""Command-line front end: train, embed, extract, attack, eval, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import fsm, noise
from .core import no_grad
from .metrics import psnr
from .train import (CheckpointError, ConfigError, DatasetError, TrainConfig, TrainingError, load_array,
                    load_checkpoint, read_header, train_stage)
from .train.data import read_image, save_png
from .train.evaluate import evaluate, strength_sweep, sweep_csv

# exit codes by error category
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_MODEL = 4
EXIT_CONFIG = 5
EXIT_TRAINING = 6


class InputError(ValueError):
    pass


def parse_message(text: str, length: int) -> np.ndarray:
    """A message as a 0/1 string of exactly ``length`` characters, or hex.

    Hex input (optionally ``0x``-prefixed) is read as an integer and written
    as ``length`` bits, most significant first; it must fit.
    """
    t = text.strip().lower()
    if t and set(t) <= {"0", "1"} and len(t) == length:
        return np.array([int(c) for c in t], dtype=np.float32)
    if t.startswith("0x"):
        t = t[2:]
    try:
        value = int(t, 16)
    except ValueError:
        raise InputError(f"message {text!r} is neither {length} binary digits nor hex") from None
    if value >> length:
        raise InputError(f"hex message {text!r} needs more than {length} bits")
    return np.array([(value >> (length - 1 - i)) & 1 for i in range(length)], dtype=np.float32)


def format_hex(bits) -> str:
    bits = [int(b) for b in np.asarray(bits).ravel()]
    value = 0
    for b in bits:
        value = (value << 1) | b
    return f"{value:0{(len(bits) + 3) // 4}X}"


def _load_image(path, size: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image not found: {path}")
    try:
        pixels = read_image(path)
    except Exception as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    chw = fsm.from_uint8(pixels.transpose(2, 0, 1))
    if size is not None and chw.shape[1:] != (size, size):
        raise InputError(f"image {path} is {chw.shape[2]}x{chw.shape[1]}, the model expects {size}x{size}")
    return chw


def _load_model(path):
    if path is None:
        raise InputError("--model is required")
    model, meta, _ = load_checkpoint(path)
    return model, meta


def _show(title: str, cfg: dict) -> None:
    print(f"[{title}] " + json.dumps(cfg, sort_keys=True, default=str))


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config).to_dict() if args.config else {}
    for key in ("stage", "steps", "batch_size", "lr", "pool", "preset", "warm_start", "seed", "image_size",
                "message_length", "strength"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.data:
        cfg["data_dir"] = args.data
    if args.out:
        cfg["checkpoint"] = args.out
    config = TrainConfig.from_dict(cfg)
    if not config.data_dir:
        raise ConfigError("a dataset directory is required (--data or data_dir in the config)")
    if not config.checkpoint:
        raise ConfigError("an output checkpoint path is required (--out or checkpoint in the config)")
    _show("train", config.to_dict())
    images = load_array(config.data_dir, config.image_size, seed=config.seed)
    result = train_stage(config, images)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"final step {last.step}: loss {last.loss:.6f} acc {last.acc:.2f}% psnr {last.psnr:.2f} dB")
    print(f"checkpoint: {result.checkpoint}")
    if args.history:
        Path(args.history).write_text(json.dumps([h.to_dict() for h in result.history]))
    return EXIT_OK


def cmd_embed(args) -> int:
    model, _ = _load_model(args.model)
    L, size = model.config.message_length, model.config.image_size
    if args.message is None:
        raise InputError("--message is required")
    bits = parse_message(args.message, L)
    _show("embed", {"model": args.model, "cover": args.cover, "message": "".join(str(int(b)) for b in bits),
                    "strength": args.strength, "out": args.out})
    cover = _load_image(args.cover, size)
    with no_grad():
        wi, _ = model.embed(cover[None], bits[None], args.strength)
    out8 = fsm.export(wi)[0]
    save_png(args.out, out8)
    print(f"psnr: {psnr(fsm.export(cover), out8):.4f} dB")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    model, _ = _load_model(args.model)
    _show("extract", {"model": args.model, "image": args.image, "tau": args.tau})
    image = _load_image(args.image, model.config.image_size)
    ex = model.extract(image[None], args.tau)
    bits = ex.bits[0]
    print("bits: " + "".join(str(int(b)) for b in bits))
    print("hex: " + format_hex(bits))
    print(f"route: {ex.routes[0]}")
    print(f"p_jpeg: {float(ex.p_jpeg[0]):.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.noise is None:
        raise InputError("--noise is required")
    spec = noise.NoiseSpec.parse(args.noise) if args.factor is None else noise.NoiseSpec(args.noise, args.factor)
    _show("attack", {"image": args.image, "cover": args.cover, "noise": spec.kind, "factor": spec.factor,
                     "seed": args.seed, "out": args.out})
    image = _load_image(args.image)
    cover = _load_image(args.cover) if args.cover else image
    if cover.shape != image.shape:
        raise InputError(f"cover {cover.shape} and image {image.shape} differ in size")
    with no_grad():
        out = noise.apply(spec, image[None], cover[None], np.random.default_rng(args.seed))
    out8 = fsm.export(out)[0]
    save_png(args.out, out8)
    print(f"psnr: {psnr(fsm.export(image), out8):.4f} dB")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = _load_model(args.model)
    if args.data is None:
        raise InputError("--data is required")
    pool = noise.get_pool(args.pool)
    strengths = [float(s) for s in args.sweep.split(",")] if args.sweep else None
    _show("eval", {"model": args.model, "data": args.data, "pool": pool.name, "strength": args.strength,
                   "seed": args.seed, "out": args.out, "sweep": strengths})
    images = load_array(args.data, model.config.image_size)
    report = evaluate(model, images, pool, strength=args.strength, seed=args.seed)
    print(report.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.csv").write_text(report.to_csv())
        (out / "table.txt").write_text(report.to_text())
        (out / "per_image.json").write_text(json.dumps(report.per_image))
    if strengths:
        text = sweep_csv(strength_sweep(model, images, strengths, seed=args.seed))
        print(text, end="")
        if args.out:
            (Path(args.out) / "sweep.csv").write_text(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.model is None:
        raise InputError("--model is required")
    header = read_header(args.model)
    _show("inspect", {"model": args.model})
    print("architecture: " + json.dumps(header["model"], sort_keys=True))
    print("meta: " + json.dumps(header.get("meta"), sort_keys=True, default=str))
    n = sum(int(np.prod(t["shape"])) for t in header["tensors"] if not t["name"].startswith("adam."))
    print(f"tensors: {len(header['tensors'])}  parameters: {n}")
    print(f"optimizer state: {'yes' if header.get('optimizer') else 'no'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cinmark", description="Blind image watermarking with invertible and "
                                                            "non-invertible decoders.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", help="checkpoint file")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    t = common(sub.add_parser("train", help="train one stage"), model=False)
    t.add_argument("--config", help="JSON or TOML run configuration")
    t.add_argument("--data", help="directory of PNG/PPM training images")
    t.add_argument("--out", help="output checkpoint path")
    t.add_argument("--stage", choices=("noise_free", "specific", "combined"))
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--pool")
    t.add_argument("--preset", choices=("full", "desk"))
    t.add_argument("--warm-start", dest="warm_start")
    t.add_argument("--image-size", dest="image_size", type=int)
    t.add_argument("--message-length", dest="message_length", type=int)
    t.add_argument("--strength", type=float)
    t.add_argument("--history", help="write the per-step loss history as JSON")
    t.set_defaults(func=cmd_train, seed=None)

    e = common(sub.add_parser("embed", help="watermark a cover image"))
    e.add_argument("--cover", required=True)
    e.add_argument("--message", help="hex, or a 0/1 string of the model's message length")
    e.add_argument("--strength", type=float, default=1.0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    x = common(sub.add_parser("extract", help="recover the message from an image"))
    x.add_argument("--image", required=True)
    x.add_argument("--tau", type=float, default=0.5, help="JPEG probability threshold for the NIAM route")
    x.set_defaults(func=cmd_extract)

    a = common(sub.add_parser("attack", help="apply one noise to an image"), model=False)
    a.add_argument("--image", required=True)
    a.add_argument("--cover", help="cover image for splicing attacks (defaults to --image)")
    a.add_argument("--noise", help="noise kind, optionally with a factor, e.g. RealJpeg:50")
    a.add_argument("--factor", type=float)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    v = common(sub.add_parser("eval", help="per-noise metric table"))
    v.add_argument("--data", help="directory of PNG/PPM test images")
    v.add_argument("--pool", default="n_pool")
    v.add_argument("--strength", type=float, default=1.0)
    v.add_argument("--sweep", help="comma-separated strengths for a strength sweep, e.g. 0.5,1,2")
    v.add_argument("--out", help="directory for table.csv, table.txt, per_image.json, sweep.csv")
    v.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="describe a checkpoint")
    i.add_argument("--model")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DatasetError, noise.NoiseError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CheckpointError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Exception as exc:  # anything else is a bug; still exit with a category
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
