"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .errors import DualPathError, NumericFailure
from .formats import load_dataset, load_model, save_dataset
from .imaging import NoiseSpec, PatchGrid, add_awgn, denoise_image, load_pgm, save_pgm

log = logging.getLogger("dualpath")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--threads", type=int, default=1,
                        help="cap on BLAS threads (default 1 keeps results bitwise reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dualpath", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    ds = sub.add_parser("dataset", help="build patch datasets", parents=[common])
    ds_sub = ds.add_subparsers(dest="action", parser_class=_Parser)
    b = ds_sub.add_parser("build", parents=[common], help="sample noisy/clean patch pairs")
    b.add_argument("--corpus", help="directory of PGM training images")
    b.add_argument("--n-train", type=int)
    b.add_argument("--patch-in", type=int)
    b.add_argument("--patch-out", type=int)
    b.add_argument("--sigma", type=float)
    b.add_argument("--out", type=Path, required=True, help="output DPDS file")

    t = sub.add_parser("train", parents=[common], help="train a patch denoiser")
    t.add_argument("--dataset", type=Path, help="DPDS file (built from the config if omitted)")
    t.add_argument("--corpus")
    t.add_argument("--activation", choices=["rectifier", "dual", "tanh"])
    t.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 128,128")
    t.add_argument("--minibatch-size", type=int)
    t.add_argument("--n-minibatches", type=int)
    t.add_argument("--iterations", type=int, help="L-BFGS iterations per minibatch")
    t.add_argument("--out", type=Path, required=True, help="output directory")

    d = sub.add_parser("denoise", parents=[common], help="denoise one PGM image")
    d.add_argument("--model", type=Path, required=True)
    d.add_argument("--in", dest="input", type=Path, required=True)
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--stride", type=int, default=3)
    d.add_argument("--patch-in", type=int, help="input patch side (defaults to the model's)")
    d.add_argument("--patch-out", type=int, help="output block side (defaults to the model's)")

    n = sub.add_parser("add-noise", parents=[common], help="add Gaussian noise to a PGM image")
    n.add_argument("--sigma", type=float, required=True, help="noise std on the 0-255 scale")
    n.add_argument("--in", dest="input", type=Path, required=True)
    n.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evaluate", parents=[common], help="PSNR table over a set of images")
    e.add_argument("--model", help="DPRN model, or 'identity' for the noisy baseline")
    e.add_argument("--images", type=Path, required=True)
    e.add_argument("--sigmas", type=_float_list, default=list(harness.PAPER_SIGMAS))
    e.add_argument("--seeds", type=_int_list)
    e.add_argument("--stride", type=int, default=3)
    e.add_argument("--out", type=Path, help="directory for psnr.csv and psnr.png")

    a = sub.add_parser("analyze-dict", parents=[common], help="dictionary analysis of a model")
    a.add_argument("--model", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--bin-width", type=float, default=5.0)
    a.add_argument("--threshold", type=float, default=160.0)
    a.add_argument("--no-figures", action="store_true")
    return parser


def _config(args, **overrides) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.from_json(args.config) if args.config else (
        harness.ExperimentConfig())
    changes = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    return cfg.replace(**changes) if changes else cfg


def _cmd_dataset(args):
    if args.action != "build":
        raise UsageError("usage: dualpath dataset build --out FILE [options]")
    cfg = _config(args, corpus_dir=args.corpus, n_train=args.n_train, patch_in=args.patch_in,
                  patch_out=args.patch_out, sigma_255=args.sigma)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    batch = harness.build_patch_dataset(cfg, path=args.out)
    print(f"wrote {batch.n} patches ({batch.X.shape[1]} -> {batch.Y.shape[1]}) to {args.out}")


def _cmd_train(args):
    train = {k: v for k, v in (("minibatch_size", args.minibatch_size),
                               ("n_minibatches", args.n_minibatches),
                               ("iterations_per_minibatch", args.iterations)) if v is not None}
    cfg = _config(args, corpus_dir=args.corpus, activation=args.activation, hidden=args.hidden,
                  train=train or None)
    dataset = load_dataset(args.dataset) if args.dataset else None
    if dataset is not None:
        side_in, side_out = int(round(dataset.X.shape[1] ** 0.5)), int(round(dataset.Y.shape[1] ** 0.5))
        cfg = cfg.replace(patch_in=side_in, patch_out=side_out)
    params, losses = harness.run_denoiser_training(cfg, dataset=dataset, out_dir=args.out)
    from . import plotting
    plotting.plot_loss_curve(losses, args.out / "loss.png", label=cfg.activation)
    with open(args.out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    print(f"trained {params}; loss {losses[0]:.6g} -> {losses[-1]:.6g}; wrote {args.out}")


def _cmd_denoise(args):
    params = load_model(args.model)
    noisy = load_pgm(args.input)
    grid = None
    if args.patch_in is not None or args.patch_out is not None:
        p = args.patch_in if args.patch_in is not None else int(round(params.in_dim ** 0.5))
        q = args.patch_out if args.patch_out is not None else int(round(params.out_dim ** 0.5))
        grid = PatchGrid(p, q, args.stride)
    out = denoise_image(params, noisy, grid, stride=args.stride)
    save_pgm(out, args.out)


def _cmd_add_noise(args):
    img = load_pgm(args.input)
    noisy = add_awgn(img, NoiseSpec(args.sigma, args.seed or 0))
    save_pgm(noisy, args.out)


def _cmd_evaluate(args):
    model = None
    if args.model and args.model != "identity":
        model = load_model(args.model)
    seeds = args.seeds or ([args.seed] if args.seed is not None else [0])
    table = harness.evaluate_suite(model, args.images, args.sigmas, seeds, args.stride)
    print(table.format())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        table.to_csv(args.out / "psnr.csv")
        from . import plotting
        plotting.plot_psnr_table(table, args.out / "psnr.png")


def _cmd_analyze(args):
    params = load_model(args.model)
    D = analysis.Dictionary.from_params(params)
    side = int(round(D.dim ** 0.5))
    ordering = analysis.greedy_pair_sort(D)
    counts, edges = analysis.angle_histogram(D, args.bin_width)
    frac = analysis.reversed_pair_fraction(D, args.threshold, ordering)
    args.out.mkdir(parents=True, exist_ok=True)
    save_pgm(analysis.atom_montage(D, side, ordering), args.out / "atoms.pgm")
    harness.write_csv(args.out / "angle_histogram.csv", ["bin_start", "bin_end", "count"],
                      zip(edges[:-1], edges[1:], counts))
    harness.write_csv(args.out / "pairs.csv", ["i", "j", "angle"], ordering.pairs)
    summary = [["atoms", D.size], ["threshold", args.threshold],
               ["reversed_pair_fraction", frac],
               ["max_pair_angle", float(ordering.angles.max())]]
    harness.write_csv(args.out / "summary.csv", ["quantity", "value"], summary)
    if not args.no_figures:
        from . import plotting
        plotting.plot_angle_histogram(counts, edges, args.out / "angle_histogram.png")
    print(f"{D.size} atoms; reversed-pair fraction above {args.threshold:g} deg: {frac:.3f}")


COMMANDS = {
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "add-noise": _cmd_add_noise,
    "evaluate": _cmd_evaluate,
    "analyze-dict": _cmd_analyze,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "dualpath: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=max(1, args.threads)):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"dualpath: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DualPathError, OSError) as exc:
        print(f"dualpath: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
