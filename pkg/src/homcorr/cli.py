"""Command-line interface: ``homcorr <command> ...``.

Exit codes: 0 success, 1 property failure, 2 usage or configuration error,
3 I/O or file-format error.

Seeds: every command takes one integer seed.  Independent streams are derived
with ``numpy.random.SeedSequence(seed).spawn(n)``, whose children are keyed by
their spawn index, so stream ``i`` is the same whatever else runs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from . import __version__
from . import data as ds
from . import dilated as dl
from . import equivariant_ops as eo
from . import verify as vf
from .config import ConfigError, defaults_help, load_config
from .network.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .network.model import Model, SpecError, format_param_report
from .network.train import accuracy, train
from .signals import SignalFormatError, random_bandlimited

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = vf.run(args.suite, args.seed, fault=args.inject_fault)
    _emit(vf.report(results, args.seed, args.suite), args.report)
    failing = [p for p in results if not p.passed]
    if failing:
        p = failing[0]
        print(f"FAIL {p.suite}.{p.name}: max error {p.max_error:.3e} >= {p.tolerance:.1e}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.bandwidth is None:
        args.bandwidth = 10 if args.kind == "blobs" else 4
    if args.kind == "blobs":
        X, y = ds.gen_blobs(args.n_classes, args.per_class, args.bandwidth, args.sigma,
                            args.rotate, args.seed)
        ds.save_blobs(args.out, X, y, args.n_classes)
    else:
        X, lab, grp = dl.gen_sequences(args.per_cell, args.length, args.bandwidth, args.n_shells,
                                       args.group_effect, args.mode, seed=args.seed)
        dl.save_sequences(args.out, X, lab, grp)
    print(json.dumps({"out": args.out, "kind": args.kind, "n": int(len(X))}))
    return EXIT_OK


def _config(args):
    cfg = load_config(args.config)
    for key in ("dataset", "checkpoint"):
        value = getattr(args, key, None)
        if value:
            cfg.values["data"][key] = value
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.space != "s2":
        raise UsageError("train handles space = s2; sequence models are trained by permtest")
    spec = cfg.model_spec()
    path = cfg.get("data", "dataset")
    if not path:
        raise UsageError("no dataset given ([data] dataset or --dataset)")
    X, y, n_classes = ds.load_blobs(path)
    if n_classes > spec.n_classes:
        raise UsageError(f"dataset has {n_classes} classes but the model outputs {spec.n_classes}")
    init_seed, train_seed = _seeds(cfg.seed, 2)
    model = Model(spec, init_seed)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None

    def log(row):
        line = json.dumps(row, sort_keys=True)
        print(line)
        if log_fh:
            log_fh.write(line + "\n")

    try:
        res = train(model, X, y, epochs=cfg.getint("train", "epochs"),
                    batch_size=cfg.getint("train", "batch_size"), lr=cfg.getfloat("train", "lr"),
                    seed=train_seed, log=log)
    finally:
        if log_fh:
            log_fh.close()
    ck_path = cfg.get("data", "checkpoint")
    if ck_path:
        save_checkpoint(ck_path, Checkpoint.from_model(model, res.adam, res.rng_state,
                                                       cfg.getint("train", "epochs")))
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = ck.build_model()
    X, y, _ = ds.load_blobs(args.dataset)
    if args.regime == "R":
        X = ds.rotate_batch(X, ds.random_rotations(len(X), _seeds(args.seed, 1)[0]))
    acc = accuracy(model, X, y)
    print(json.dumps({"regime": args.regime, "n": int(len(y)), "accuracy": acc}))
    return EXIT_OK


def cmd_permtest(args) -> int:
    cfg = _config(args)
    if cfg.space != "s2xr":
        raise UsageError("permtest needs space = s2xr")
    path = cfg.get("data", "dataset")
    if not path:
        raise UsageError("no dataset given ([data] dataset or --dataset)")
    X, labels, groups, _ = dl.load_sequences(path)
    if isinstance(X, list):
        raise UsageError("permtest needs sequences of equal length")
    spec = cfg.dilated_spec()
    n_perm = args.n_perm or cfg.getint("permtest", "n_perm")
    try:
        res = dl.permutation_test(X, groups, labels, n_perm=n_perm, seed=cfg.seed,
                                  train_budget=cfg.getint("permtest", "train_budget"),
                                  spec=spec, lr=cfg.getfloat("permtest", "lr"))
    except dl.DegenerateClassError as e:
        raise UsageError(str(e)) from e
    _emit(res.to_json(), args.out)
    return EXIT_OK


def bench_rows(b_min: int, b_max: int, brute_max: int, repeats: int = 3, seed: int = 0) -> list:
    """Wall times of spectral ``corr_s2`` and of its brute-force oracle per bandwidth."""
    rows = []
    for B in range(b_min, b_max + 1):
        f = random_bandlimited(B, 1, seed)
        w = eo.S2Kernel.random(B, 1, 1, seed + 1)
        spectral = _time(lambda: eo.corr_s2(f, w), repeats)
        brute = float("nan")
        if B <= brute_max:
            ws = w.samples(B)[0, 0]
            rots = eo.grid_rotations(B)
            brute = _time(lambda: eo.corr_s2_bruteforce(f[0], ws, rots, force=True), 1)
        rows.append({"B": B, "spectral_s": spectral, "bruteforce_s": brute})
    return rows


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["B", "spectral_s", "bruteforce_s"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def csv_to_rows(text: str) -> list:
    return [{"B": int(r["B"]), "spectral_s": float(r["spectral_s"]),
             "bruteforce_s": float(r["bruteforce_s"])} for r in csv.DictReader(io.StringIO(text))]


def crossover(rows: list):
    """Smallest B at which the spectral path beats brute force, or None."""
    for r in rows:
        if r["bruteforce_s"] == r["bruteforce_s"] and r["spectral_s"] < r["bruteforce_s"]:
            return r["B"]
    return None


def cmd_bench(args) -> int:
    if args.brute_max > 16:
        raise UsageError("brute-force column is limited to B <= 16")
    if not 1 <= args.b_min <= args.b_max:
        raise UsageError("need 1 <= --b-min <= --b-max")
    rows = bench_rows(args.b_min, args.b_max, args.brute_max, args.repeats, args.seed)
    _emit(rows_to_csv(rows).rstrip("\n"), args.out)
    print(f"crossover B = {crossover(rows)}", file=sys.stderr)
    return EXIT_OK


def cmd_info(args) -> int:
    print(f"homcorr {__version__}")
    print("rotations: ZYZ Euler angles; grids: Driscoll-Healy; SO(3) Haar measure of mass 1")
    if args.config:
        cfg = load_config(args.config)
        if cfg.space == "s2":
            print(format_param_report(Model(cfg.model_spec(), 0)))
        else:
            net = dl.DilatedVolterraNet(cfg.dilated_spec(), 0, train_intra=True)
            print(f"dilated network parameters: {net.n_params}")
            print(f"receptive field: {cfg.dilated_spec().stack.receptive_field}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="homcorr",
        description="Equivariant correlation and Volterra operators on S^2 and SO(3).",
        epilog="Exit codes: 0 ok, 1 property failure, 2 usage error, 3 I/O error. "
               "HOMCORR_THREADS caps permutation-test worker processes.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--suite", default="all", choices=("all",) + vf.SUITES)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="write the JSON report here instead of stdout")
    v.add_argument("--inject-fault", choices=("wigner_sign",), help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--kind", choices=("blobs", "sequences"), default="blobs")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bandwidth", type=int, help="default 10 for blobs, 4 for sequences")
    g.add_argument("--n-classes", type=int, default=4, help="blobs: number of classes")
    g.add_argument("--per-class", type=int, default=50, help="blobs: samples per class")
    g.add_argument("--sigma", type=float, default=0.1, help="blobs: noise level")
    g.add_argument("--rotate", choices=("NR", "R"), default="NR", help="blobs: regime")
    g.add_argument("--per-cell", type=int, default=6, help="sequences: per group and label")
    g.add_argument("--length", type=int, default=6, help="sequences: voxels per sequence")
    g.add_argument("--n-shells", type=int, default=2, help="sequences: radial shells")
    g.add_argument("--group-effect", type=float, default=0.0, help="sequences: effect size")
    g.add_argument("--mode", choices=("swap", "diffusivity"), default="swap",
                   help="sequences: kind of group effect")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a classifier from a config file",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config defaults:\n\n" + defaults_help())
    t.add_argument("--config", required=True)
    t.add_argument("--dataset")
    t.add_argument("--checkpoint")
    t.add_argument("--log", help="also write the per-epoch metrics here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--regime", choices=("NR", "R"), default="NR",
                   help="R applies fresh random rotations to the test inputs")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("permtest", help="group permutation test on sequences",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config defaults:\n\n" + defaults_help())
    m.add_argument("--config", required=True)
    m.add_argument("--dataset")
    m.add_argument("--n-perm", type=int)
    m.add_argument("--out")
    m.set_defaults(func=cmd_permtest)

    b = sub.add_parser("bench", help="time spectral vs brute-force correlation")
    b.add_argument("--b-min", type=int, default=2)
    b.add_argument("--b-max", type=int, default=8)
    b.add_argument("--brute-max", type=int, default=8)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("info", help="print conventions and parameter counts")
    i.add_argument("--config")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError, SpecError, eo.BandwidthError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, SignalFormatError, ds.DatasetFormatError,
            dl.SequenceFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
