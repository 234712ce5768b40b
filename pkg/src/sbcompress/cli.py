"""Command-line front end: ``sbcompress {gen,prune,quantize,eval,sops}``."""
import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import SBCError
from .graph import fold_network
from .metrics import accuracy, count_sops, fidelity, module_proxy_losses
from .modelio import load_calib, load_model, save_calib, save_mask, save_model
from .prune import METHODS as PRUNE_METHODS
from .prune import prune_network
from .quant import METHODS as QUANT_METHODS
from .quant import quantize_network
from .teacher import gen_teacher_task

WORKERS_ENV = "SBCOMPRESS_WORKERS"


class UsageError(SBCError):
    pass


def _fraction(text):
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"sparsity must lie in [0, 1), got {text}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _bits(text):
    v = int(text)
    if not 2 <= v <= 16:
        raise argparse.ArgumentTypeError(f"bits must lie in [2, 16], got {text}")
    return v


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _sizes(text):
    try:
        out = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers: {text}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive: {text}")
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="sbcompress", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a teacher model and labelled spike data")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=_positive, default=10)
    g.add_argument("--timesteps", type=_positive, default=20)
    g.add_argument("--sizes", type=_sizes, default=(100, 64),
                   help="input width followed by hidden widths, e.g. 100,64")
    g.add_argument("--tau-m", type=float, default=2.0)
    g.add_argument("--n-calib", type=_positive, default=500)
    g.add_argument("--n-test", type=_positive, default=500)
    g.add_argument("--model-out", required=True)
    g.add_argument("--calib-out", required=True)
    g.add_argument("--test-out")

    def common(sp):
        sp.add_argument("--model", required=True)
        sp.add_argument("--calib", required=True)
        sp.add_argument("--calib-samples", type=_positive,
                        help="random subset of the calibration file, drawn with --seed")
        sp.add_argument("--damp", type=_nonneg, default=0.01)
        sp.add_argument("--capture", choices=("sequential", "one-pass"), default="sequential")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=_positive)
        sp.add_argument("--out", required=True)
        sp.add_argument("--report")
        sp.add_argument("--omit-timing", action="store_true",
                        help="leave wall-clock fields out of the report")

    pr = sub.add_parser("prune", help="one-shot unstructured pruning")
    common(pr)
    pr.add_argument("--sparsity", type=_fraction, required=True)
    pr.add_argument("--method", choices=PRUNE_METHODS, default="sbc")
    pr.add_argument("--b-in", type=_positive, default=16)
    pr.add_argument("--b-out", type=_positive, default=32)
    pr.add_argument("--mask-out")

    qu = sub.add_parser("quantize", help="post-training weight quantization")
    common(qu)
    qu.add_argument("--bits", type=_bits, required=True)
    qu.add_argument("--method", choices=QUANT_METHODS, default="sbc")

    ev = sub.add_parser("eval", help="accuracy and fidelity against a reference model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--reference", help="uncompressed model for VRD and proxy-loss fields")
    ev.add_argument("--report")

    so = sub.add_parser("sops", help="synaptic operation counts")
    so.add_argument("--model", required=True)
    so.add_argument("--data", required=True)
    so.add_argument("--report")
    return p


def _workers(args):
    if os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
        if n < 1:
            raise UsageError(f"{WORKERS_ENV} must be >= 1")
        return n
    return args.workers or 1


def _check_paths(args):
    for attr in ("model", "calib", "data", "reference"):
        path = getattr(args, attr, None)
        if path is not None and not os.path.isfile(path):
            raise UsageError(f"--{attr} {path!r} does not exist")
    for attr in ("out", "report", "mask_out", "model_out", "calib_out", "test_out"):
        path = getattr(args, attr, None)
        if path is not None:
            parent = os.path.dirname(os.path.abspath(path))
            if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
                raise UsageError(f"cannot write {path!r}")


def _emit(report, args):
    if getattr(args, "omit_timing", False):
        report.pop("timing", None)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_calib_subset(args):
    calib = load_calib(args.calib)
    if args.calib_samples is not None:
        if args.calib_samples > len(calib):
            raise UsageError(f"--calib-samples {args.calib_samples} exceeds {len(calib)} samples")
        rng = np.random.default_rng(args.seed)
        idx = np.sort(rng.choice(len(calib), args.calib_samples, replace=False))
        calib = calib.subset(idx)
    return calib


def cmd_gen(args):
    n = args.n_calib + (args.n_test if args.test_out else 0)
    net, data = gen_teacher_task(args.seed, args.classes, args.timesteps, args.sizes, n,
                                 tau_m=args.tau_m)
    save_model(net, args.model_out)
    save_calib(data.subset(slice(0, args.n_calib)), args.calib_out)
    if args.test_out:
        save_calib(data.subset(slice(args.n_calib, n)), args.test_out)
    return {"command": "gen", "seed": args.seed, "classes": args.classes,
            "timesteps": args.timesteps, "sizes": list(args.sizes),
            "n_calib": args.n_calib, "n_test": args.n_test if args.test_out else 0}


def cmd_prune(args):
    net = load_model(args.model)
    calib = _load_calib_subset(args)
    pruned, masks, report = prune_network(net, calib.data, args.sparsity, args.method,
                                          args.b_in, args.b_out, args.damp, args.capture,
                                          args.n_workers)
    report["config"].update(seed=args.seed, calib_samples=len(calib))
    save_model(pruned, args.out)
    if args.mask_out:
        save_mask(masks, args.mask_out)
    return report


def cmd_quantize(args):
    net = load_model(args.model)
    calib = _load_calib_subset(args)
    quant, report = quantize_network(net, calib.data, args.bits, args.method, args.damp,
                                     args.capture, args.n_workers)
    report["config"].update(seed=args.seed, calib_samples=len(calib))
    save_model(quant, args.out)
    return report


def cmd_eval(args):
    net = load_model(args.model)
    data = load_calib(args.data)
    report = {"command": "eval", "samples": len(data), "accuracy": None,
              "output_vrd": None, "modules": []}
    if data.labels is not None:
        report["accuracy"] = accuracy(net, data.data, data.labels)
    names = [m.name for m in fold_network(net).modules()]
    per_mod = {n: {"name": n, "vrd": None, "proxy_loss": None} for n in names}
    if args.reference:
        ref = load_model(args.reference)
        fid = fidelity(ref, net, data.data)
        report["output_vrd"] = fid["output"]
        for name, v in fid["modules"].items():
            per_mod[name]["vrd"] = v
        for name, v in module_proxy_losses(ref, net, data.data).items():
            per_mod[name]["proxy_loss"] = v
    report["modules"] = list(per_mod.values())
    return report


def cmd_sops(args):
    net = load_model(args.model)
    data = load_calib(args.data)
    return {"command": "sops", **count_sops(net, data.data)}


COMMANDS = {"gen": cmd_gen, "prune": cmd_prune, "quantize": cmd_quantize,
            "eval": cmd_eval, "sops": cmd_sops}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _check_paths(args)
        if hasattr(args, "workers"):
            args.n_workers = _workers(args)
        report = COMMANDS[args.command](args)
    except (SBCError, OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    _emit(report, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
