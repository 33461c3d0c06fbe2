"""Command-line entry point: ``cgc {count,gradcheck,train,analyze-gates}``.

Exit status: 0 on success, 1 when a check fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with a one-line diagnostic and exit status 2 on usage errors."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _stages(text: str) -> set[str]:
    return {s.strip() for s in text.split(",") if s.strip()}


def _build_parser() -> argparse.ArgumentParser:
    from .layer import ABLATIONS

    variants = sorted(ABLATIONS)
    parser = _Parser(prog="cgc", description="Context-gated convolution toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count", help="parameter and MAC counts of an architecture",
                       description="Print a per-layer cost table for an architecture descriptor.")
    p.add_argument("--arch", required=True, help="descriptor JSON file or bundled name (resnet50, resnet110, tiny)")
    p.add_argument("--cgc", action="store_true", help="turn every eligible conv into a CGC conv")
    p.add_argument("--variant", default="default", choices=variants, help="ablation variant of the CGC layers")
    p.add_argument("--stages", type=_stages, default=None,
                   help="comma-separated stages that get CGC (implies --cgc)")
    p.add_argument("--csv", action="store_true", help="emit CSV instead of an aligned table")
    p.add_argument("--summary", action="store_true", help="totals only, no per-layer rows")
    p.add_argument("--interact", default="no_d", choices=["no_d", "per_d"],
                   help="MAC convention for channel interaction (default: no_d)")
    p.add_argument("--gate-multiply", action="store_true",
                   help="include the W*G multiply in the CGC overhead total")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite for the CGC layer",
                       description="Check every ablation variant and the sequence variant in float64.")
    p.add_argument("--seed", type=int, default=0, help="seed for inputs and parameters")
    p.add_argument("--variant", choices=variants + ["sequence"], default=None,
                   help="check one variant only (default: all)")
    p.add_argument("--mode", choices=["eval", "train"], default="eval", help="normalization mode")

    p = sub.add_parser("train", help="train a network",
                       description="Run SGD training from a key=value config file.")
    p.add_argument("--config", required=True, help="key=value training config")
    p.add_argument("--data", default=None, help="CIFAR-10 binary directory (cifar10 configs)")
    p.add_argument("--out", default=None, help="directory for metrics.csv and model.ckpt")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--epochs", type=int, default=None, help="override the config epoch count")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config option (repeatable)")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")

    p = sub.add_parser("analyze-gates", help="class structure of modulated kernels",
                       description="Inter/intra-class distances of modulated kernels at one CGC layer.")
    p.add_argument("--ckpt", required=True, help="checkpoint written by train")
    p.add_argument("--arch", required=True, help="descriptor the checkpoint was trained with")
    p.add_argument("--data", required=True,
                   help="CIFAR-10 directory, or synthetic:MODE[:SEED[:N]] for a generated set")
    p.add_argument("--layer", default=None, help="CGC layer id (default: deepest CGC layer)")
    p.add_argument("--out", required=True, help="CSV file for the matrices")
    return parser


def _cmd_count(args) -> int:
    from .accounting import cost_report
    from .arch import load_arch, with_cgc

    arch = load_arch(args.arch)
    if args.stages is not None:
        arch = with_cgc(arch, args.variant, args.stages)
    elif args.cgc:
        arch = with_cgc(arch, args.variant)
    report = cost_report(arch, args.interact, args.gate_multiply)
    sys.stdout.write(report.to_csv() if args.csv else report.to_text(per_layer=not args.summary))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import layer_suite

    names = [args.variant] if args.variant else None
    worst = 0.0
    for name, err in layer_suite(args.seed, names, mode=args.mode):
        status = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:<12} max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
    print(f"worst={worst:.3e} tolerance={GRADCHECK_TOL:.0e}")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"cgc train: --set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.epochs is not None:
        out["epochs"] = str(args.epochs)
    return out


def _cmd_train(args) -> int:
    from .train import TrainConfig, train

    try:
        cfg = TrainConfig.from_file(args.config, _overrides(args))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cgc train: bad config: {exc}") from None
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    result = train(cfg, args.data, args.out)
    loss, acc = result.final("train")
    print(f"final train loss {loss:.6f} acc {acc:.4f}")
    if cfg.epochs:
        eloss, eacc = result.final("eval")
        print(f"final eval loss {eloss:.6f} acc {eacc:.4f}")
    return EXIT_OK


def _analysis_data(spec: str):
    from .data import load_cifar10_dir, synth_dataset

    if spec.startswith("synthetic:"):
        parts = spec.split(":")[1:]
        mode = parts[0]
        seed = int(parts[1]) if len(parts) > 1 else 0
        n = int(parts[2]) if len(parts) > 2 else 512
        return lambda classes: synth_dataset(seed, classes, n, mode)
    return lambda classes: load_cifar10_dir(spec, "test")


def _cmd_analyze(args) -> int:
    from .analysis import REFERENCE_FRAC_IMAGENET, export_stats, gate_stats
    from .tensor import load_sections
    from .train import TrainConfig, build_model

    header, tensors = load_sections(args.ckpt)
    cfg = TrainConfig.from_pairs(header)
    model = build_model(cfg, args.arch)
    model.load_state(tensors)
    data = _analysis_data(args.data)(cfg.class_count)
    stats = gate_stats(model, data, args.layer)
    export_stats(stats, args.out)
    print(f"classes={stats.class_count} frac_inter_gt_intra={stats.frac_inter_gt_intra:.4f} "
          f"(ImageNet reference {REFERENCE_FRAC_IMAGENET:.4f})")
    return EXIT_OK


COMMANDS = {"count": _cmd_count, "gradcheck": _cmd_gradcheck, "train": _cmd_train,
            "analyze-gates": _cmd_analyze}


def main(argv=None) -> int:
    from .arch import DescriptorError

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).splitlines()[0], file=sys.stderr)
        return EXIT_USAGE
    except (DescriptorError, FileNotFoundError, KeyError) as exc:
        print(f"cgc: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
