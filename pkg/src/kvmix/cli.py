"""``kvmix`` command line: batch runs over KVD1 dumps with CSV outputs.

Exit codes: 0 success, 1 usage error, 2 input/format error,
3 numerical/convergence error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .allocator import NORM_KINDS, allocate_for_dump
from .errors import (
    AllocationError,
    ConvergenceError,
    DataError,
    FormatError,
    KVMixError,
    LengthError,
    ParameterError,
    SizeError,
    WriteError,
)
from .metrics import evaluate_dump, sweep_dump
from .propagation import LayerStack, propagate_with_quantization, random_state
from .quantizer import compression_ratio, dequantize, quantize
from .report import (
    aggregate_table,
    allocation_table,
    error_table,
    spectrum_table,
    summary_table,
    trace_table,
    write_tables,
)
from .rng import child_seed
from .spectral import DEFAULT_RANK_TOL, analyze_dump
from .tensor import DTYPE_BF16, DTYPE_F32, KVDump, read_kvdump, synthesize_dump, write_kvdump

DEFAULT_SEED = 20250221

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(path) -> KVDump:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input dump not found: {p}")
    return read_kvdump(p)


def cmd_analyze(args) -> list[Path]:
    dump = _load(args.input)
    analysis = analyze_dump(dump, rel_tol=args.rank_tol)
    return write_tables(args.out_dir, {
        "spectrum.csv": spectrum_table(analysis),
        "aggregate.csv": aggregate_table(analysis),
    })


def cmd_quantize(args) -> list[Path]:
    dump = _load(args.input)
    bits = {"K": args.bits_k, "V": args.bits_v}
    header = ["model_name", "layer", "head", "cache_kind", "b", "rows", "cols",
              "max_magnitude", "scale", "packed_bytes", "compression_ratio"]
    rows = []
    recon = KVDump(dump.model_name, dump.keys.copy(), dump.values.copy(), dtype=dump.dtype)
    source_bits = 16 if dump.dtype == DTYPE_BF16 else 32
    for layer, head, kind, m in dump.matrices():
        q = quantize(m, bits[kind])
        rows.append([dump.model_name, layer, head, kind, q.bit_width, q.rows, q.cols,
                     q.max_magnitude, q.scale, len(q.codes), compression_ratio(q, source_bits)])
        target = recon.keys if kind == "K" else recon.values
        target[layer, head] = dequantize(q)
    written = write_tables(args.out_dir, {"quantized.csv": (header, rows)})
    out = Path(args.out_dir) / "dequantized.kvd"
    write_kvdump(recon, out)
    return written + [out]


def cmd_evaluate(args) -> list[Path]:
    dump = _load(args.input)
    ev = evaluate_dump(dump, args.bits_k, args.bits_v)
    if ev.short_sequence:
        print(
            f"warning: seq_len {dump.seq_len} < d_head {dump.d_head}; "
            "short caches are flagged in errors.csv",
            file=sys.stderr,
        )
    return write_tables(args.out_dir, {
        "errors.csv": error_table(ev),
        "summary.csv": summary_table(list(ev.summary.values())),
    })


def cmd_sweep(args) -> list[Path]:
    dump = _load(args.input)
    return write_tables(args.out_dir, {"sweep.csv": summary_table(sweep_dump(dump), extended=True)})


def cmd_allocate(args) -> list[Path]:
    dump = _load(args.input)
    alloc = allocate_for_dump(dump, args.budget, args.norm)
    return write_tables(args.out_dir, {"allocation.csv": allocation_table(alloc)})


def cmd_simulate(args) -> list[Path]:
    if args.depth < 1 or args.dim < 1 or args.trials < 1:
        raise UsageError("--depth, --dim and --trials must be positive")
    traces = []
    for trial in range(args.trials):
        stack = LayerStack.random(args.depth, args.dim, args.scale, child_seed(args.seed, trial, 0))
        h0 = random_state(args.dim, child_seed(args.seed, trial, 1))
        for b in args.bits:
            traces.append((trial, propagate_with_quantization(stack, h0, b)))
    return write_tables(args.out_dir, {"trace.csv": trace_table(traces)})


def cmd_synth(args) -> list[Path]:
    for flag in ("layers", "heads", "d_head", "seq_len"):
        if getattr(args, flag) < 1:
            raise UsageError(f"--{flag.replace('_', '-')} must be positive")
    if not args.ratio > 0:
        raise UsageError("--ratio must be positive")
    dump = synthesize_dump(args.ratio, args.layers, args.heads, args.d_head, args.seq_len,
                           seed=args.seed, model_name=args.name)
    dump.dtype = DTYPE_BF16 if args.dtype == "bf16" else DTYPE_F32
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / args.file_name
    write_kvdump(dump, out)
    return [out]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kvmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kvmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, needs_input=True):
        p = sub.add_parser(name, help=help_)
        if needs_input:
            p.add_argument("--input", required=True, help="KVD1 dump to read")
        p.add_argument("--out-dir", required=True, help="directory for output files")
        p.set_defaults(func=func)
        return p

    p = add("analyze", cmd_analyze, "singular value spectra and norms per matrix and per layer")
    p.add_argument("--rank-tol", type=float, default=DEFAULT_RANK_TOL)

    for name, func, help_ in (
        ("quantize", cmd_quantize, "quantize every matrix and write the dequantized dump"),
        ("evaluate", cmd_evaluate, "per-matrix quantization errors and mean/std summary"),
    ):
        p = add(name, func, help_)
        p.add_argument("--bits-k", type=int, default=4)
        p.add_argument("--bits-v", type=int, default=2)

    add("sweep", cmd_sweep, "MSE summary for bit-widths 2..8")

    p = add("allocate", cmd_allocate, "norm-ratio bit allocation per layer and globally")
    p.add_argument("--budget", type=int, default=6, help="total bits b_k + b_v")
    p.add_argument("--norm", choices=NORM_KINDS, default="frobenius")

    p = add("simulate", cmd_simulate, "error propagation through random residual stacks", needs_input=False)
    p.add_argument("--depth", type=int, default=16)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--bits", type=int, nargs="+", default=[2, 4])
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--scale", type=float, default=0.1, help="weight spectral scale")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = add("synth", cmd_synth, "write a synthetic dump with a fixed ||K||_F / ||V||_F ratio", needs_input=False)
    p.add_argument("--ratio", type=float, default=6.2)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-head", type=int, default=64)
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--dtype", choices=("f32", "bf16"), default="f32")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--file-name", default="synthetic.kvd")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        written = args.func(args)
    except (UsageError, AllocationError, ParameterError) as exc:
        print(f"kvmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FormatError, LengthError, DataError, WriteError, OSError) as exc:
        print(f"kvmix: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, SizeError, ArithmeticError) as exc:
        print(f"kvmix: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KVMixError as exc:
        print(f"kvmix: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
