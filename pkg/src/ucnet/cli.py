"""Command-line entry point: ``ucnet <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import container
from .channelrep import Domain, channel_representation, split_rgb
from .errors import ConfigError, ManifestError, UcnetError
from .filterbank import full_bank, write_filters
from .imageio import read_ppm, write_ppm
from .jpegcodec import decompress_to_ycbcr, parse_jpeg, read_jpeg, write_jpeg
from .model import DESK_CONFIG, load_checkpoint, save_checkpoint
from .stegosim import EmbedSpec, derive_seed, jpeg_embed, lsbm_embed
from .traineval import (PairRecord, TrainConfig, evaluate, read_manifest, train,
                        write_manifest)

IO_EXIT = 9

EXIT_CODES = """exit codes:
  0  success
  1  other ucnet error
  2  usage error (bad or unknown flags)
  3  invalid configuration or parameter
  4  image format error (PPM or pixel data)
  5  JPEG parse error (PROGRESSIVE_UNSUPPORTED, ARITHMETIC_UNSUPPORTED, TRUNCATED_STREAM, BAD_MARKER)
  6  manifest error (empty, malformed, unreadable images)
  7  checkpoint/container error (bad magic, version, digest mismatch)
  8  checkpoint config mismatch
  9  file system error

Errors are reported on stderr as one line:
  error code=<CODE> exit=<N> message=<text>"""

SPATIAL_SUFFIXES = (".ppm",)
JPEG_SUFFIXES = (".jpg", ".jpeg")


def _print_config(values: dict, label: str = "config") -> None:
    print(label + " " + json.dumps(values, sort_keys=True, default=str), flush=True)


def _rel(path: Path, start: Path) -> str:
    try:
        return os.path.relpath(path.resolve(), start.resolve())
    except ValueError:  # different drive on Windows
        return str(path.resolve())


# --------------------------------------------------------------------------- subcommands

def cmd_gen_filters(args) -> int:
    bank = full_bank()
    write_filters(bank, args.out)
    print(f"wrote {len(bank.kernels)} kernels to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    domain = Domain.parse(args.domain)
    spec = EmbedSpec(args.alpha, args.seed)
    _print_config({"domain": domain.value, "beta": spec.beta}, "resolved")
    cover_dir = Path(args.cover_dir)
    if not cover_dir.is_dir():
        raise ManifestError(f"cover directory {cover_dir} does not exist")
    suffixes = SPATIAL_SUFFIXES if domain is Domain.SPATIAL_RGB else JPEG_SUFFIXES
    covers = sorted(p for p in cover_dir.iterdir() if p.suffix.lower() in suffixes)
    if not covers:
        raise ManifestError(f"no {'/'.join(suffixes)} covers in {cover_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Path(args.manifest)
    records = []
    for i, cover in enumerate(covers):
        item = EmbedSpec(args.alpha, derive_seed(args.seed, i), spec.beta)
        stego = out_dir / cover.name
        if stego.resolve() == cover.resolve():
            raise ConfigError("--out-dir must differ from --cover-dir")
        if domain is Domain.SPATIAL_RGB:
            write_ppm(lsbm_embed(split_rgb(read_ppm(cover)), item).to_image(), stego)
        else:
            stego.write_bytes(write_jpeg(jpeg_embed(parse_jpeg(cover.read_bytes()), item)))
        records.append(PairRecord(_rel(cover, manifest.parent), _rel(stego, manifest.parent), domain,
                                  args.alpha, item.seed))
    write_manifest(records, manifest)
    print(f"embedded {len(records)} stegos into {out_dir}; manifest {manifest}")
    return 0


def cmd_preprocess(args) -> int:
    domain = Domain.parse(args.domain)
    cfg = DESK_CONFIG.residual_config
    _print_config({"domain": domain.value, "truncation_T": cfg.truncation_T, "pad_mode": cfg.pad_mode.value},
                  "resolved")
    if domain is Domain.SPATIAL_RGB:
        planes = split_rgb(read_ppm(args.input))
    else:
        planes = decompress_to_ycbcr(read_jpeg(args.input))
    rep = channel_representation(planes, full_bank(), cfg)
    container.save(args.out, {"kind": "channel_rep", "domain": domain.value,
                              "truncation_T": repr(cfg.truncation_T), "pad_mode": cfg.pad_mode.value},
                   {"rep": rep.maps})
    print(f"wrote representation {tuple(rep.maps.shape)} to {args.out}")
    return 0


def cmd_train(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        raise ManifestError(f"manifest {args.manifest} is empty")
    domains = {r.domain for r in records}
    if len(domains) != 1:
        raise ManifestError(f"manifest {args.manifest} mixes domains {sorted(d.value for d in domains)}")
    model_cfg = dataclasses.replace(DESK_CONFIG, domain=domains.pop())
    cfg = TrainConfig(epochs=args.epochs, batch_pairs=args.batch_pairs, lr=args.lr, seed=args.seed,
                      weight_decay=args.weight_decay, eval_fraction=args.eval_fraction,
                      lr_decay=args.lr_decay, lr_step_epochs=args.lr_step, augment=args.augment)
    _print_config({"pairs": len(records), **dataclasses.asdict(cfg), **model_cfg.to_dict()}, "resolved")
    start = time.perf_counter()

    def progress(entry):
        print("epoch " + json.dumps(entry, sort_keys=True), flush=True)

    model, history = train(records, cfg, model_cfg, workers=args.workers, progress=progress)
    save_checkpoint(model, args.model_out)
    best = min(history, key=lambda e: (e["val_p_e"], -e["val_accuracy"]))
    print(f"best epoch {best['epoch']} val_accuracy {best['val_accuracy']:.4f} val_p_e {best['val_p_e']:.4f}; "
          f"wrote {args.model_out} in {time.perf_counter() - start:.1f}s")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    metrics = evaluate(model, args.manifest, workers=args.workers)
    Path(args.report).write_text(metrics.to_json() + "\n", encoding="utf-8")
    print(f"accuracy {metrics.accuracy:.4f} p_e {metrics.p_e:.4f} tp {metrics.tp} fp {metrics.fp} "
          f"tn {metrics.tn} fn {metrics.fn}; report {args.report}")
    return 0


def cmd_info(args) -> int:
    if args.jpeg:
        j = read_jpeg(args.jpeg)
        info = {"width": j.width, "height": j.height, "components": j.components,
                "sampling": [list(s) for s in j.sampling],
                "quant_tables": {str(k): [int(v) for v in t] for k, t in sorted(j.quant_tables.items())},
                "nonzero_ac": [int(np.count_nonzero(b) - np.count_nonzero(b[..., 0, 0]))
                               for b in j.coeff_blocks]}
    else:
        model = load_checkpoint(args.model)
        info = {**model.config.to_dict(), "seed": model.seed, "param_count": model.param_count(),
                "tensors": {k: list(v.shape) for k, v in model.state().items()}}
    print(json.dumps(info, indent=2))
    return 0


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ucnet", description="Color-image steganalysis with UCNet.",
                                epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=EXIT_CODES,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-filters", cmd_gen_filters, "write the 62-kernel filter bank as text")
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "embed a payload into every cover and write a manifest")
    sp.add_argument("--cover-dir", required=True)
    sp.add_argument("--domain", required=True, choices=["spatial", "jpeg"])
    sp.add_argument("--alpha", required=True, type=float, help="payload (bits per site)")
    sp.add_argument("--seed", required=True, type=int)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--manifest", required=True)

    sp = add("preprocess", cmd_preprocess, "write the 186-plane channel representation of one image")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--domain", required=True, choices=["spatial", "jpeg"])
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a model on a cover/stego manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model-out", required=True)
    sp.add_argument("--epochs", required=True, type=int)
    sp.add_argument("--batch-pairs", required=True, type=int)
    sp.add_argument("--lr", required=True, type=float)
    sp.add_argument("--seed", required=True, type=int)
    sp.add_argument("--workers", type=int, default=1, help="parallel loaders; 1 is deterministic (default)")
    sp.add_argument("--weight-decay", type=float, default=0.0)
    sp.add_argument("--eval-fraction", type=float, default=0.2)
    sp.add_argument("--lr-decay", type=float, default=0.5)
    sp.add_argument("--lr-step", type=int, default=10, help="epochs between learning-rate decays")
    sp.add_argument("--augment", action="store_true", help="seeded flip/rot90 shared by each pair")

    sp = add("eval", cmd_eval, "score a manifest with a checkpoint and write a JSON report")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("info", cmd_info, "describe a JPEG file or a checkpoint")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--jpeg")
    g.add_argument("--model")
    return p


def _error_line(code: str, exit_code: int, message: str) -> str:
    return f"error code={code} exit={exit_code} message={' '.join(str(message).split())}"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    _print_config({k: v for k, v in vars(args).items() if k != "func"})
    if getattr(args, "workers", 1) < 1:
        print(_error_line(ConfigError.code, ConfigError.exit_code, "--workers must be >= 1"), file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except UcnetError as exc:
        print(_error_line(exc.code, exc.exit_code, exc), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        msg = f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc)
        print(_error_line("IO_ERROR", IO_EXIT, msg), file=sys.stderr)
        return IO_EXIT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
