"""``bench`` command line.

    bench run --experiment smoke --out smoke.csv
    bench run --experiment scaling --threads 1,2,4 --unique-main 1 --n-main 10000000
    bench run --config desk.cfg --experiment model-check
    bench micro
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..cost_model import parse_kv
from . import micro
from .experiments import EXPERIMENTS, BenchContext, BudgetExceeded, expand, run_all
from .report import report


def _int_list(s: str) -> tuple:
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of ints, got {s!r}")


def _size(s: str) -> int:
    """Integer with an optional K/M/G suffix (powers of two)."""
    s = s.strip()
    mult = {"K": 2 ** 10, "M": 2 ** 20, "G": 2 ** 30}.get(s[-1:].upper(), 1)
    return int(float(s[:-1] if mult > 1 else s) * mult)


def _count(s: str) -> int:
    return int(float(s))


RUN_OPTIONS = [
    # flag, dest, type
    ("--n-main", "n_main", _count),
    ("--n-delta", "n_delta", _count),
    ("--delta-frac", "delta_frac", float),
    ("--n-cols", "n_cols", int),
    ("--value-bytes", "value_bytes", int),
    ("--unique-main", "unique_main", float),
    ("--unique-delta", "unique_delta", float),
    ("--threads", "threads", _int_list),
    ("--strategy", "strategy", str),
    ("--seed", "seed", int),
    ("--reps", "reps", int),
    ("--clock-hz", "clock_hz", float),
    ("--llc-bytes", "llc_bytes", _size),
    ("--mem-budget", "mem_budget", _size),
]
_TYPES = {dest: typ for _, dest, typ in RUN_OPTIONS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description="Delta merge benchmark harness.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write CSV")
    run.add_argument("--experiment", choices=sorted(EXPERIMENTS), default=None)
    run.add_argument("--config", type=Path, help="key=value file; flags take precedence")
    for flag, dest, typ in RUN_OPTIONS:
        kw = {"choices": (4, 8, 16)} if dest == "value_bytes" else {}
        if dest == "strategy":
            kw = {"choices": ("columns", "intra")}
        run.add_argument(flag, dest=dest, type=typ, default=None, **kw)
    run.add_argument("--no-naive", action="store_true", help="skip the naive merge")
    run.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")
    run.add_argument("-q", "--quiet", action="store_true")

    mb = sub.add_parser("micro", help="measure memory bandwidth and cache size")
    mb.add_argument("--clock-hz", type=float, default=None)
    mb.add_argument("--pattern", choices=("gather", "chase"), default="gather")
    mb.add_argument("--preset", choices=("reference-platform",), default=None,
                    help="print the fixed reference bandwidths instead of measuring")
    return ap


def _from_config(path: Path) -> dict:
    out = {}
    for k, v in parse_kv(path.read_text()).items():
        if k == "experiment":
            out[k] = v
        elif k in _TYPES:
            out[k] = _TYPES[k](v)
        elif k == "naive":
            out[k] = v.lower() in ("1", "true", "yes")
        else:
            raise SystemExit(f"{path}: unknown key {k!r}")
    return out


def cmd_run(args) -> int:
    opts = _from_config(args.config) if args.config else {}
    opts.update({dest: getattr(args, dest) for _, dest, _ in RUN_OPTIONS
                 if getattr(args, dest) is not None})
    if args.experiment:
        opts["experiment"] = args.experiment
    if args.no_naive:
        opts["naive"] = False
    name = opts.pop("experiment", "smoke")
    ctx = BenchContext.detect(clock_hz=opts.pop("clock_hz", None),
                              llc_bytes=opts.pop("llc_bytes", None),
                              mem_budget=opts.pop("mem_budget", None))
    log = (lambda s: None) if args.quiet else (lambda s: print(s, file=sys.stderr))
    log(f"clock {ctx.clock_hz / 1e9:.2f} GHz, stream {ctx.stream_bpc:.2f} B/cycle, "
        f"random {ctx.random_bpc:.2f} B/cycle, LLC {ctx.llc_bytes / 2**20:.1f} MiB")
    try:
        specs = expand(name, opts)
        rows = run_all(specs, ctx, log)
    except (ValueError, BudgetExceeded) as e:
        print(f"bench: {e}", file=sys.stderr)
        return 2
    if args.out is None:
        summary = report(rows, sys.stdout)
    else:
        summary = report(rows, args.out)
    print(summary, file=sys.stderr if args.out is None else sys.stdout)
    return 0


def cmd_micro(args) -> int:
    bw = micro.micro_bandwidth(args.clock_hz, args.pattern, preset=args.preset)
    print(f"clock_hz={bw.clock_hz:.0f}")
    print(f"stream_bw={bw.stream_bpc:.3f}  # bytes/cycle ({bw.stream_gbs:.1f} GB/s)")
    print(f"random_bw={bw.random_bpc:.3f}  # bytes/cycle ({bw.random_gbs:.1f} GB/s, {args.pattern})")
    if bw.stream_bpc < bw.random_bpc:
        print("# note: random bandwidth exceeds streaming bandwidth on this machine")
    if args.preset is None:
        print(f"llc_bytes={micro.detect_llc_bytes()}  # effective, from latency knee")
        print(f"sysfs_llc_bytes={micro.sysfs_llc_bytes()}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "micro": cmd_micro}[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
