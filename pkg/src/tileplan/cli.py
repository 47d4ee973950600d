"""Command-line entry point: build, plan, exec, report, presets.

Every failure prints one line ``error[CODE]: message`` on stderr. Exit codes:
0 success, 1 usage, 2 validation (bad input, stale bank, bad plan),
3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bank import BuildConfig, dumps_bank, load_bank
from .candgen import build_bank
from .errors import TilePlanError
from .hwmodel import PRESET_NAMES, SYNTHETIC_NAMES, dumps_descriptor, load_descriptor, preset
from .interp import (
    Tensor,
    execute_and_count,
    load_tensor,
    naive_conv2d,
    naive_gemm,
    save_tensor,
)
from .program import program_by_name, program_from_identifier
from .runtime import (
    RuntimeShape,
    load_plan,
    plan_cost_breakdown,
    save_plan,
    select,
    select_adaptive,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_MISMATCH = 3


class UsageError(Exception):
    code = "E_USAGE"


def _fail(code: str, message: str, status: int) -> int:
    first = str(message).strip().splitlines()[0] if str(message).strip() else "failed"
    print(f"error[{code}]: {first}", file=sys.stderr)
    return status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message} (see {self.prog} --help)")


# ------------------------------------------------------------------- parsing

_SHAPE_ITEM = re.compile(r"^([a-z][a-z0-9_]*)=(\d+)$")
_SWEEP = re.compile(r"^([a-z][a-z0-9_]*)=(\d+)\.\.(\d+)(?::(\d+))?$")


def parse_shape(text: str) -> dict:
    """``m=384,n=768,k=2304`` -> {"m": 384, ...}."""
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        m = _SHAPE_ITEM.match(item)
        if not m:
            raise UsageError(f"malformed shape item {item!r}; expected key=value, e.g. m=384,n=768,k=2304")
        if m.group(1) in out:
            raise UsageError(f"axis {m.group(1)!r} given twice")
        out[m.group(1)] = int(m.group(2))
    if not out:
        raise UsageError("empty shape; expected key=value pairs, e.g. m=384,n=768,k=2304")
    return out


def parse_sweep(text: str):
    """``m=1..64:4`` -> ("m", [1, 5, ...]). An empty range is allowed."""
    m = _SWEEP.match(text.strip())
    if not m:
        raise UsageError(f"malformed sweep {text!r}; expected key=a..b:step, e.g. m=1..64:1")
    lo, hi = int(m.group(2)), int(m.group(3))
    step = int(m.group(4) or 1)
    if step < 1:
        raise UsageError("sweep step must be >= 1")
    return m.group(1), list(range(lo, hi + 1, step))


def _hardware(args):
    if getattr(args, "descriptor", None):
        return load_descriptor(args.descriptor)
    return preset(args.hw)


def _hardware_list(names):
    return [preset(n) if n in PRESET_NAMES + SYNTHETIC_NAMES else load_descriptor(n) for n in names]


# ------------------------------------------------------------------ commands


def cmd_build(args) -> int:
    hw = _hardware(args)
    prog = program_by_name(args.op, hw.depth)
    analyzers = None
    if args.analyzers:
        analyzers = tuple(a.strip() for a in args.analyzers.split(","))
        if any(a not in ("empirical", "analytical") for a in analyzers):
            raise UsageError("--analyzers takes a comma list of empirical|analytical")
    config = BuildConfig(
        analyzers=analyzers,
        overlap=not args.no_overlap,
        store_overlap=args.store_overlap,
        top_multiple_cap=args.top_multiple_cap,
        max_extent=args.max_extent,
    )
    t0 = time.perf_counter()
    bank = build_bank(prog, hw, config)
    elapsed = time.perf_counter() - t0
    text = dumps_bank(bank, hw)
    out = Path(args.out)
    previous = out.read_bytes() if out.exists() else None
    try:
        out.write_text(text)
    except OSError as exc:
        raise TilePlanError(f"cannot write bank {out}: {exc}") from exc
    counts = bank.counts()
    print(f"hardware: {hw.name}")
    print(f"program: {prog.identifier}")
    for level, n in enumerate(counts):
        print(f"level {level}: {n} candidates")
    print(f"total candidates: {sum(counts)}")
    print(f"map links: {','.join(str(n) for n in bank.link_counts())}")
    print(f"build time: {elapsed:.3f} s")
    if previous is None:
        print("reproducible: unknown (no previous bank at this path)")
    else:
        print(f"reproducible: {'true' if previous == text.encode() else 'false'}")
    return EXIT_OK


def _load_backends(args):
    banks = args.bank
    names = args.hw or []
    if len(names) != len(banks):
        raise UsageError("give one --hw per --bank (paired in order)")
    out = []
    for hw, path in zip(_hardware_list(names), banks):
        bank, prog = load_bank(path, hw)
        out.append((hw, bank, prog))
    return out


def cmd_plan(args) -> int:
    if not args.adaptive and len(args.bank) != 1:
        raise UsageError("several --bank options need --adaptive")
    backends = _load_backends(args)
    shape_values = parse_shape(args.shape)
    prog = backends[0][2]
    if any(p.identifier != prog.identifier for _, _, p in backends):
        raise UsageError("all banks must be built for the same operator")
    shape = RuntimeShape.for_program(prog, shape_values)
    if args.adaptive:
        plan = select_adaptive(backends, shape)
    else:
        hw, bank, prog = backends[0]
        plan = select(bank, shape, hw, prog)
    hw = next(h for h, _, _ in backends if h.name == plan.backend)
    report = plan_cost_breakdown(plan, hw, prog)
    print(f"backend: {plan.backend}")
    print(f"shape: {','.join(f'{a}={v}' for a, v in zip(prog.axis_names, plan.shape))}")
    for level, tile in zip(range(hw.top, -1, -1), plan.chain):
        print(f"level {level} tile: {','.join(f'{a}={v}' for a, v in zip(prog.axis_names, tile))}")
    print(f"padded shape: {','.join(f'{a}={v}' for a, v in zip(prog.axis_names, plan.padded_shape))}")
    for level, geom in sorted(plan.launch_geometry.items()):
        print(f"launch geometry level {level}: {','.join(f'{a}={v}' for a, v in geom.items())}")
    print(f"padding waste: {plan.padding_waste:.6f}")
    print(f"predicted cycles: {plan.predicted_cost_cycles}")
    for row in report["levels"]:
        print(
            f"  level {row['level']}: load={row['load_cycles']} inner={row['compute_cycles']} "
            f"store={row['store_cycles']} f_parallel={row['f_parallel']} total={row['total_cycles']}"
        )
    print(f"selection time: {plan.selection_time_s * 1e3:.4f} ms")
    if args.out:
        save_plan(plan, args.out)
        print(f"plan written: {args.out}")
    return EXIT_OK


def _random_inputs(prog, plan, seed: int, dtype: str):
    rng = np.random.default_rng(seed)
    shape = dict(zip(prog.axis_names, plan.shape))
    if prog.operator_kind == "GEMM":
        dims = [(shape["m"], shape["k"]), (shape["k"], shape["n"])]
    else:
        dims = [
            (shape["n"], shape["ci"], shape["h"] + shape["kh"] - 1, shape["w"] + shape["kw"] - 1),
            (shape["co"], shape["ci"], shape["kh"], shape["kw"]),
        ]
    out = []
    for d in dims:
        if dtype == "int32":
            out.append(Tensor(d, "int32", rng.integers(-8, 9, size=d)))
        else:
            out.append(Tensor(d, "float32", rng.uniform(-1.0, 1.0, size=d)))
    return out


def cmd_exec(args) -> int:
    plan = load_plan(args.plan)
    hw = _hardware_list([args.hw or plan.backend])[0]
    prog = program_from_identifier(plan.program, hw.depth)
    if args.random:
        inputs = _random_inputs(prog, plan, args.seed, args.dtype)
    else:
        if not args.inputs:
            raise UsageError("exec needs --inputs FILE FILE or --random")
        inputs = [load_tensor(p) for p in args.inputs]
    out, cycles = execute_and_count(
        plan, inputs, hw, prog, overlap=args.overlap, poison_padding=args.poison_padding
    )
    if prog.operator_kind == "GEMM":
        ref = naive_gemm(*inputs)
    else:
        ref = naive_conv2d(*inputs)
    if out.dtype == "int32":
        ok = out == ref
    else:
        scale = max(float(np.max(np.abs(ref.data))), 1.0)
        ok = bool(np.all(np.abs(out.data - ref.data) <= 1e-4 * scale))
    if args.out:
        save_tensor(out, args.out)
    print(f"cycles: {cycles}")
    print(f"predicted cycles: {plan.predicted_cost_cycles}")
    if not ok:
        print("FAIL")
        return _fail("E_ORACLE_MISMATCH", "interpreter output differs from the naive oracle", EXIT_MISMATCH)
    print("PASS")
    return EXIT_OK


def report_rows(backends, prog, axis, values, fixed):
    """One row per sweep point: per-backend cost, waste, selection time and the winner."""
    rows = []
    for v in values:
        shape = RuntimeShape.for_program(prog, dict(fixed, **{axis: v}))
        row = {axis: v}
        plans = []
        for hw, bank, p in backends:
            plan = select(bank, shape, hw, p)
            plans.append(plan)
            row[f"{hw.name}_cycles"] = plan.predicted_cost_cycles
            row[f"{hw.name}_waste"] = f"{plan.padding_waste:.6f}"
            row[f"{hw.name}_select_us"] = f"{plan.selection_time_s * 1e6:.1f}"
        best = select_adaptive(backends, shape)
        row["winner"] = best.backend
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    if args.format != "csv":
        raise UsageError(f"unknown report format {args.format!r}; only csv is supported")
    backends = _load_backends(args)
    prog = backends[0][2]
    axis, values = parse_sweep(args.sweep)
    fixed = parse_shape(args.fixed) if args.fixed else {}
    if axis in fixed:
        raise UsageError(f"axis {axis!r} is both swept and fixed")
    rows = report_rows(backends, prog, axis, values, fixed)
    header = [axis]
    for hw, _, _ in backends:
        header += [f"{hw.name}_cycles", f"{hw.name}_waste", f"{hw.name}_select_us"]
    header.append("winner")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if args.plot:
        _plot(rows, axis, backends, args.plot)
    return EXIT_OK


def _plot(rows, axis, backends, path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise UsageError("--plot needs matplotlib installed") from exc
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for hw, _, _ in backends:
        ax.plot([r[axis] for r in rows], [r[f"{hw.name}_cycles"] for r in rows], label=hw.name)
    ax.set_xlabel(axis)
    ax.set_ylabel("predicted cycles")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)


def cmd_presets(args) -> int:
    if args.show:
        sys.stdout.write(dumps_descriptor(preset(args.show)))
        return EXIT_OK
    for name in PRESET_NAMES + SYNTHETIC_NAMES:
        hw = preset(name)
        levels = " ".join(
            f"L{lv.level_index}(units={lv.unit_count},cap={lv.memory_capacity_bytes})" for lv in hw.levels
        )
        isa = ",".join(f"{k}={v}" for k, v in hw.isa.dim_multiples.items())
        print(f"{name}: isa[{isa}] throughput={hw.isa.throughput_ops_per_cycle} {levels}")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _add_hw(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--hw", help="preset name (see `presets`)")
    g.add_argument("--descriptor", help="path to a hardware descriptor JSON file")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tileplan", description="Hardware-aware tiling planner for dynamic shapes.")
    parser.add_argument("--version", action="version", version=f"tileplan {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    b = sub.add_parser("build", help="build and save a kernel bank")
    _add_hw(b)
    b.add_argument("--op", choices=("gemm", "conv2d"), default="gemm")
    b.add_argument("--out", required=True)
    b.add_argument("--analyzers", help="per-level comma list of empirical|analytical")
    b.add_argument("--no-overlap", action="store_true", help="simulate without load/compute overlap")
    b.add_argument("--store-overlap", action="store_true", help="let stores overlap the next loads")
    b.add_argument("--top-multiple-cap", type=int, default=BuildConfig.top_multiple_cap)
    b.add_argument("--max-extent", type=int, default=BuildConfig.max_extent)
    b.set_defaults(func=cmd_build)

    p = sub.add_parser("plan", help="select a schedule for one shape")
    p.add_argument("--bank", action="append", required=True)
    p.add_argument("--hw", action="append", help="preset or descriptor path, one per --bank")
    p.add_argument("--shape", required=True, help="e.g. m=384,n=768,k=2304")
    p.add_argument("--adaptive", action="store_true", help="choose among several backends")
    p.add_argument("--out", help="write the plan here")
    p.set_defaults(func=cmd_plan)

    e = sub.add_parser("exec", help="run a plan in the interpreter and check it against the oracle")
    e.add_argument("--plan", required=True)
    e.add_argument("--hw", help="preset or descriptor path (default: the plan's backend preset)")
    e.add_argument("--inputs", nargs="+")
    e.add_argument("--random", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--dtype", choices=("int32", "float32"), default="int32")
    e.add_argument("--poison-padding", action="store_true")
    e.add_argument("--overlap", action="store_true", help="count level-0 cycles with overlap")
    e.add_argument("--out", help="write the output tensor here")
    e.set_defaults(func=cmd_exec)

    r = sub.add_parser("report", help="CSV of predicted cost over a shape sweep")
    r.add_argument("--bank", action="append", required=True)
    r.add_argument("--hw", action="append")
    r.add_argument("--sweep", required=True, help="e.g. m=1..64:1")
    r.add_argument("--fixed", help="other extents, e.g. n=1024,k=1024")
    r.add_argument("--format", default="csv")
    r.add_argument("--out")
    r.add_argument("--plot", help="also write a PNG plot (needs matplotlib)")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("presets", help="list shipped hardware descriptors")
    s.add_argument("--show", help="print one preset as JSON")
    s.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(UsageError.code, str(exc), EXIT_USAGE)
    except TilePlanError as exc:
        return _fail(exc.code, str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail("E_IO", str(exc), EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
