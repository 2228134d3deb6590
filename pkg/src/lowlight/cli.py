"""Command-line entry point: ``train``, ``enhance`` and ``eval``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 runtime failure.
Failures print a single ``lowlight: error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from lowlight.checkpoint import CheckpointError, load_generator
from lowlight.config import ConfigError, parse_config
from lowlight.imageio import ImageIOError, is_supported, load_image, save_image
from lowlight.metrics import MetricReport
from lowlight.networks import enhance_image
from lowlight.training import DatasetError, NonFiniteError, fit, scan_unpaired_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("lowlight")


class UsageExit(Exception):
    pass


class DataExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageExit(f"{self.prog}: {message}")


# TrainConfig fields exposed as optional flags; None means "not given"
TRAIN_FLAGS = (
    ("--seed", "seed", int),
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--patch-size", "patch_size", int),
    ("--lr-g", "lr_g", float),
    ("--lr-d", "lr_d", float),
    ("--beta1", "beta1", float),
    ("--beta2", "beta2", float),
    ("--a-max", "a_max", float),
    ("--checkpoint-every", "checkpoint_every", int),
    ("--fx-weights", "fx_weights", str),
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lowlight", description="Unsupervised low-light image enhancement.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    train = sub.add_parser("train", help="train on two unpaired image directories")
    train.add_argument("--low", help="directory of low-light PNGs")
    train.add_argument("--clean", help="directory of normal-light PNGs")
    train.add_argument("--out", help="output directory for checkpoints and the loss log")
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--resume", help="checkpoint to resume from")
    for flag, dest, kind in TRAIN_FLAGS:
        train.add_argument(flag, dest=dest, type=kind, default=None)

    enhance = sub.add_parser("enhance", help="enhance a PNG or a directory of PNGs")
    enhance.add_argument("--input", required=True)
    enhance.add_argument("--checkpoint", required=True)
    enhance.add_argument("--output", required=True)
    enhance.add_argument("--a-max", dest="a_max", type=float, default=10.0)

    ev = sub.add_parser("eval", help="score predictions against ground truth by filename")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out", required=True, help="CSV path")
    return parser


def cmd_train(args) -> int:
    overrides = {dest: getattr(args, dest) for _, dest, _ in TRAIN_FLAGS}
    overrides.update(low=args.low, clean=args.clean, out=args.out)
    cfg, paths = parse_config(args.config, overrides)
    missing = [k for k in ("low", "clean", "out") if k not in paths]
    if missing:
        raise UsageExit("train: missing " + ", ".join(f"--{k}" for k in missing))
    index = scan_unpaired_dataset(paths["low"], paths["clean"], cfg.seed)
    final = fit(cfg, index, paths["out"], resume=args.resume)
    print(final)
    return EXIT_OK


def _enhance_file(gen, src: Path, dst: Path) -> None:
    out = enhance_image(gen, load_image(src))
    save_image(out, dst)


def cmd_enhance(args) -> int:
    src, dst, ckpt = Path(args.input), Path(args.output), Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataExit(f"checkpoint not found: {ckpt}")
    if not src.exists():
        raise DataExit(f"input not found: {src}")
    gen = load_generator(ckpt, a_max=args.a_max)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.is_file() and is_supported(p))
        if not files:
            raise DataExit(f"{src}: no PNG images found")
        dst.mkdir(parents=True, exist_ok=True)
        for f in files:
            _enhance_file(gen, f, dst / f.name)
        print(f"enhanced {len(files)} images into {dst}")
    else:
        if dst.is_dir():
            dst = dst / src.name
        _enhance_file(gen, src, dst)
        print(dst)
    return EXIT_OK


def _png_names(directory: Path) -> set[str]:
    if not directory.is_dir():
        raise DataExit(f"not a directory: {directory}")
    return {p.name for p in directory.iterdir() if p.is_file() and is_supported(p)}


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred, gt = _png_names(pred_dir), _png_names(gt_dir)
    for name in sorted(pred - gt):
        print(f"skipping {name}: no ground truth in {gt_dir}", file=sys.stderr)
    for name in sorted(gt - pred):
        print(f"skipping {name}: no prediction in {pred_dir}", file=sys.stderr)
    pairs = sorted(pred & gt)
    if not pairs:
        raise DataExit(f"no filenames shared between {pred_dir} and {gt_dir}")
    report = MetricReport()
    for name in pairs:
        a, b = load_image(pred_dir / name).data[0], load_image(gt_dir / name).data[0]
        if a.shape != b.shape:
            print(f"skipping {name}: size {a.shape[1:]} vs {b.shape[1:]}", file=sys.stderr)
            continue
        report.add(name, a, b)
    if not len(report):
        raise DataExit("no image pairs with matching sizes")
    report.write_csv(args.out)
    p, s, m = report.means()
    print(f"{len(report)} pairs: PSNR {p:.4f} dB, SSIM {s:.4f}, MSE {m:.6g}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "enhance": cmd_enhance, "eval": cmd_eval}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    def fail(code: int, message: str) -> int:
        print(f"lowlight: error: {' '.join(str(message).split())}", file=sys.stderr)
        return code

    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageExit as exc:
        return fail(EXIT_USAGE, exc)
    except (DataExit, ConfigError, DatasetError, ImageIOError, CheckpointError) as exc:
        return fail(EXIT_DATA, exc)
    except NonFiniteError as exc:
        return fail(EXIT_RUNTIME, exc)
    except OSError as exc:
        return fail(EXIT_DATA, exc)
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        return fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
