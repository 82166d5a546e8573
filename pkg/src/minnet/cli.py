"""Command-line entry point: one subcommand per experiment.

Exit codes: 0 success, 1 the run finished but its success check failed,
2 usage error, 3 missing data files, 4 training diverged.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import report as rep
from .conv import filter_grid
from .criteria import criterion
from .data import MNIST_FILES, load_mnist, make_xor_dataset
from .experiments import as_images, run_mnist, run_xor
from .models import BENCH_ARCHS, CNN_ARCHS, DEFAULT_PRESET, PRESETS, bench_model, first_conv
from .nn import SoftMax
from .parity import (build_deep_parity_net, build_shallow_parity_net, count_layers,
                     count_neurons, expected_counts, net_spec, verify_truth_table)
from .tensor import make_rng
from .training import TrainingDiverged, TrainOptions, train

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NO_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

# Expected per-sample shape after every layer, asserted before any CNN training.
CNN_SHAPE_TRACES = {
    "figure": [(1, 28, 28), (12, 28, 28), (12, 28, 28), (12, 14, 14), (16, 14, 14),
               (16, 14, 14), (16, 7, 7), (784,), (256,), (256,), (10,)],
    "half-res": [(1, 28, 28), (1, 14, 14), (12, 14, 14), (12, 14, 14), (12, 7, 7),
                 (16, 7, 7), (16, 7, 7), (784,), (256,), (256,), (10,)],
    "tf-same": [(1, 28, 28), (12, 28, 28), (12, 28, 28), (12, 10, 10), (16, 10, 10),
                (16, 10, 10), (16, 4, 4), (256,), (1024,), (1024,), (10,)],
}

XOR_SURFACE = {
    # encoding -> (region, band around the decision level)
    "shifted": (((-0.5, 0.5), (-0.5, 0.5)), (-2e-3, 2e-3)),
    "zero-one": (((-1.0, 2.0), (-1.0, 2.0)), (0.49, 0.51)),
}

log = logging.getLogger("minnet")


class UsageError(Exception):
    pass


def positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _common(p):
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    g.add_argument("--out-dir", default="out", help="directory for reports (default ./out)")
    g.add_argument("--data-dir", default=os.environ.get("MNIST_DIR", "data/mnist"),
                   help="directory holding the four MNIST IDX files (default $MNIST_DIR or data/mnist)")
    g.add_argument("--threads", type=positive_int, default=1,
                   help="threads for batched evaluation only (default 1)")
    g.add_argument("--no-png", action="store_true", help="skip the matplotlib PNG figures")
    g.add_argument("-v", "--verbose", action="store_true", help="log every epoch")


def build_parser():
    parser = argparse.ArgumentParser(prog="minnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("xor", help="train a 2-H-1 net on the four XOR points")
    _common(p)
    p.add_argument("--preset", choices=[n for n, s in PRESETS.items() if s.task == "xor"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=positive_float)
    p.add_argument("--epochs", type=positive_int)
    p.add_argument("--activation", choices=["tanh", "sigmoid", "relu"])
    p.add_argument("--output-activation", choices=["identity", "tanh", "sigmoid"])
    p.add_argument("--encoding", choices=["shifted", "zero-one"])
    p.add_argument("--loss", choices=["mse", "mse-sum"])
    p.add_argument("--surface-points", type=positive_int, default=1_000_000)

    p = sub.add_parser("mnist-mlp", help="784-H-10 perceptron on MNIST")
    _common(p)
    p.add_argument("--preset", choices=[n for n, s in PRESETS.items() if s.task == "mnist-mlp"],
                   default=DEFAULT_PRESET["mnist-mlp"])
    p.add_argument("--hidden", type=positive_int)
    p.add_argument("--patience", type=positive_int)
    p.add_argument("--batch-size", type=positive_int)
    p.add_argument("--lr", type=positive_float)
    p.add_argument("--epochs", type=positive_int)
    p.add_argument("--subset", type=positive_int, help="train on the first N training images")
    p.add_argument("--softmax-output", action="store_true",
                   help="append a SoftMax layer before the cross-entropy (the literal Torch composition)")

    p = sub.add_parser("mnist-cnn", help="convolutional nets on MNIST")
    _common(p)
    p.add_argument("--arch", choices=CNN_ARCHS, default=DEFAULT_PRESET["mnist-cnn"])
    p.add_argument("--optimizer", choices=["gd", "sgdm", "adam"])
    p.add_argument("--epochs", type=positive_int)
    p.add_argument("--batch-size", type=positive_int)
    p.add_argument("--lr", type=positive_float)
    p.add_argument("--patience", type=positive_int)
    p.add_argument("--subset", type=positive_int)
    p.add_argument("--softmax-output", choices=["on", "off"],
                   help="force the trailing SoftMax layer on or off (default: per architecture)")

    p = sub.add_parser("xorn", help="verify the hand-built n-ary parity nets")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", choices=["deep", "shallow", "both"], default="both")

    p = sub.add_parser("bench", help="time training configurations (no assertions)")
    _common(p)
    p.add_argument("--arch", choices=list(BENCH_ARCHS) + ["all"], default="all")
    p.add_argument("--batch-mode", choices=["sgd", "1000", "full", "all"], default="all")
    p.add_argument("--epochs", type=positive_int, default=10)
    p.add_argument("--repeats", type=positive_int, default=5)
    p.add_argument("--subset", type=positive_int, help="time on the first N training images")
    return parser


# ----------------------------------------------------------------- helpers

def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_mnist(args):
    missing = [name for name in MNIST_FILES.values()
               if not os.path.exists(os.path.join(args.data_dir, name))]
    if missing:
        raise FileNotFoundError(
            f"MNIST data not found in {args.data_dir!r}; expected files: {', '.join(MNIST_FILES.values())}"
            f" (missing: {', '.join(missing)})")
    return load_mnist(args.data_dir)


def _loss_reports(args, report, title, log_y=False):
    report.write_csv(os.path.join(args.out_dir, "loss.csv"))
    rep.render_loss_svg(report, os.path.join(args.out_dir, "loss.svg"), title, log_y)
    if not args.no_png:
        from .plots import plot_loss
        plot_loss(report, os.path.join(args.out_dir, "loss.png"), title, log_y)


# ----------------------------------------------------------------- commands

def _xor_preset(args):
    if args.hidden is not None and args.hidden < 1:
        raise UsageError(f"--hidden must be >= 1, got {args.hidden}")
    base = args.preset or ("tf-xor" if args.encoding == "zero-one" else "torch-xor")
    preset = PRESETS[base]
    changes = {}
    if args.hidden is not None:
        changes["layers"] = (2, args.hidden, 1)
    for flag, attr in (("activation", "hidden"), ("output_activation", "output"),
                       ("encoding", "encoding"), ("loss", "loss")):
        if getattr(args, flag) is not None:
            changes[attr] = getattr(args, flag)
    return replace(preset, **changes).with_options(
        **{k: v for k, v in (("learning_rate", args.lr), ("nepochs", args.epochs)) if v is not None})


def cmd_xor(args):
    preset = _xor_preset(args)
    res = run_xor(preset, args.seed, threads=args.threads)
    _loss_reports(args, res.report, f"XOR loss ({preset.name})")
    region, band = XOR_SURFACE[preset.encoding]
    sample = rep.sample_separation_surface(res.model, region, args.surface_points, band,
                                           make_rng(args.seed + 1))
    ds = make_xor_dataset(preset.encoding)
    positive = ds.label[:, 0] > ds.label[:, 0].mean()
    classes = {"class 0": ds.data[~positive], "class 1": ds.data[positive]}
    rep.render_surface_svg(sample, classes, os.path.join(args.out_dir, "surface.svg"))
    if not args.no_png:
        from .plots import plot_surface
        plot_surface(sample, classes, os.path.join(args.out_dir, "surface.png"))
    summary = {
        "command": "xor", "preset": preset.name, "seed": args.seed,
        "layers": list(preset.layers), "hidden_activation": preset.hidden,
        "output_activation": preset.output, "encoding": preset.encoding, "loss": preset.loss,
        "train": res.report.summary() | {"final_train_loss": res.report.train_loss[-1]},
        "accuracy": res.accuracy, "surface_points": int(len(sample.points)),
        "surface_band": list(band),
    }
    return summary, EXIT_OK if res.accuracy == 1.0 else EXIT_FAILED


def _mnist_reports(args, res, preset, title):
    _loss_reports(args, res.report, title, log_y=True)
    rep.write_confusion_csv(res.confusion, os.path.join(args.out_dir, "confusion.csv"))
    if not args.no_png:
        from .plots import plot_confusion
        plot_confusion(res.confusion, os.path.join(args.out_dir, "confusion.png"))
    return {
        "preset": preset.name, "seed": args.seed, "train": res.report.summary(),
        "test_accuracy": res.accuracy, "train_size": res.train_size,
        "val_size": res.val_size, "test_size": res.test_size,
        "options": dict(sorted(preset.train.items())),
    }


def cmd_mnist_mlp(args):
    preset = PRESETS[args.preset]
    if args.hidden is not None:
        preset = replace(preset, layers=(784, args.hidden, 10))
    if args.softmax_output:
        preset = replace(preset, softmax_output=True)
    preset = preset.with_options(**{k: v for k, v in (
        ("patience", args.patience), ("batch_size", args.batch_size),
        ("learning_rate", args.lr), ("nepochs", args.epochs)) if v is not None})
    train_full, test = _load_mnist(args)
    res = run_mnist(preset, train_full, test, args.seed, args.subset, args.threads)
    summary = {"command": "mnist-mlp", "layers": list(preset.layers), "subset": args.subset}
    summary |= _mnist_reports(args, res, preset, f"MNIST MLP loss ({preset.name})")
    return summary, EXIT_OK


def check_shape_trace(model, arch):
    trace = model.shape_trace((1, 28, 28))
    if isinstance(model[len(model) - 1], SoftMax):
        trace = trace[:-1]
    expected = CNN_SHAPE_TRACES[arch]
    if trace != expected:
        raise AssertionError(f"{arch}: shape trace {trace} differs from {expected}")
    return trace


def cmd_mnist_cnn(args):
    preset = PRESETS[args.arch]
    if args.softmax_output is not None:
        preset = replace(preset, softmax_output=args.softmax_output == "on")
    optimizer = {"sgdm": "sgd-momentum"}.get(args.optimizer, args.optimizer)
    overrides = {k: v for k, v in (
        ("optimizer", optimizer), ("nepochs", args.epochs), ("batch_size", args.batch_size),
        ("learning_rate", args.lr), ("patience", args.patience)) if v is not None}
    if optimizer == "sgd-momentum" and "momentum" not in preset.train:
        overrides["momentum"] = 0.9
    preset = preset.with_options(**overrides)
    trace = check_shape_trace(preset.build(make_rng(args.seed)), args.arch)
    train_full, test = _load_mnist(args)
    res = run_mnist(preset, train_full, test, args.seed, args.subset, args.threads)
    summary = {"command": "mnist-cnn", "arch": args.arch, "subset": args.subset,
               "shape_trace": [list(s) for s in trace]}
    summary |= _mnist_reports(args, res, preset, f"MNIST CNN loss ({args.arch})")
    weight = first_conv(res.model).W
    rep.render_image_svg(filter_grid(weight), os.path.join(args.out_dir, "filters.svg"))
    if not args.no_png:
        from .plots import plot_filters
        plot_filters(weight, os.path.join(args.out_dir, "filters.png"))
    return summary, EXIT_OK


def cmd_xorn(args):
    if args.n < 2:
        raise UsageError(f"--n must be >= 2, got {args.n}")
    modes = ["deep", "shallow"] if args.mode == "both" else [args.mode]
    builders = {"deep": build_deep_parity_net, "shallow": build_shallow_parity_net}
    results, exact = {}, True
    for mode in modes:
        net = builders[mode](args.n)
        acc, first_fail = verify_truth_table(net, args.n)
        neurons, layers = count_neurons(net), count_layers(net)
        ok = acc == 1.0 and (neurons, layers) == expected_counts(args.n, mode)
        exact &= ok
        results[mode] = {"accuracy": acc, "first_failure": first_fail, "neurons": neurons,
                         "layers": layers, "exact": ok}
        _write_json(os.path.join(args.out_dir, f"parity_{mode}_net.json"), net_spec(net))
        print(f"{mode}: n={args.n} neurons={neurons} layers={layers} accuracy={acc} "
              f"{'exact' if ok else 'FAILED'}")
    return {"command": "xorn", "n": args.n, "results": results}, EXIT_OK if exact else EXIT_FAILED


def _full_batch_epoch(model, crit, ds, lr, chunk=1000):
    """One gradient-descent update over the whole set, accumulating the gradient in chunks."""
    model.zero_grad_parameters()
    n = len(ds)
    for start in range(0, n, chunk):
        x, y = ds.data[start:start + chunk], ds.label[start:start + chunk]
        out = model.forward(x)
        crit.forward(out, y)
        model.backward(x, crit.backward(out, y) * (len(x) / n))
    model.update_parameters(lr)


def cmd_bench(args):
    archs = list(BENCH_ARCHS) if args.arch == "all" else [args.arch]
    modes = ["sgd", "1000", "full"] if args.batch_mode == "all" else [args.batch_mode]
    train_full, test = _load_mnist(args)
    rows = []
    for arch in archs:
        ds = train_full.head(args.subset) if args.subset else train_full
        if arch == "cnn":
            ds = as_images(ds)
        for mode in modes:
            times = []
            for r in range(args.repeats):
                model = bench_model(arch, make_rng(args.seed + r))
                crit = criterion("cross-entropy")
                start = time.perf_counter()
                if mode == "full":
                    for _ in range(args.epochs):
                        _full_batch_epoch(model, crit, ds, 0.01)
                    updates = args.epochs
                else:
                    bs = 1 if mode == "sgd" else 1000
                    train(model, crit, ds, opts=TrainOptions(
                        nepochs=args.epochs, learning_rate=0.01, batch_size=bs,
                        grad_inf_norm_floor=0.0, seed=args.seed + r))
                    updates = args.epochs * -(-len(ds) // bs)
                times.append(time.perf_counter() - start)
            rows.append({"arch": arch, "batch_mode": mode, "train_size": len(ds),
                         "epochs": args.epochs, "repeats": args.repeats, "updates": updates,
                         "mean_seconds": float(np.mean(times)), "std_seconds": float(np.std(times))})
            log.info("bench %s %s: %.3fs", arch, mode, rows[-1]["mean_seconds"])
    with open(os.path.join(args.out_dir, "bench.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if not args.no_png:
        from .plots import plot_bench
        plot_bench(rows, os.path.join(args.out_dir, "bench.png"))
    return {"command": "bench", "rows": rows}, EXIT_OK


COMMANDS = {"xor": cmd_xor, "mnist-mlp": cmd_mnist_mlp, "mnist-cnn": cmd_mnist_cnn,
            "xorn": cmd_xorn, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        summary, code = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"minnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"minnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_NO_DATA
    except TrainingDiverged as exc:
        print(f"minnet {args.command}: training diverged: {exc}", file=sys.stderr)
        _write_json(os.path.join(args.out_dir, "summary.json"),
                    {"command": args.command, "diverged": True, "epoch": exc.epoch,
                     "loss": str(exc.loss)})
        return EXIT_DIVERGED
    summary["exit_code"] = code
    _write_json(os.path.join(args.out_dir, "summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
