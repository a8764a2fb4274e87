"""CSV tables for every kvmix result type.

Each ``*_table`` function returns ``(header, rows)``; :func:`write_tables`
formats floats to 9 significant digits and writes all files atomically.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .allocator import DumpAllocation
from .errors import WriteError
from .metrics import DumpEvaluation, SummaryRow
from .propagation import PropagationTrace
from .spectral import DumpAnalysis

Table = tuple[list[str], list[list]]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return f"{float(value):.9g}"
    return str(value)


def render(table: Table) -> str:
    header, rows = table
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_tables(out_dir, tables: dict[str, Table]) -> list[Path]:
    """Render every table, then move them into place; nothing lands if rendering fails."""
    out = Path(out_dir)
    rendered = {name: render(t) for name, t in tables.items()}
    staged: list[tuple[str, Path]] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in rendered.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
    except OSError as exc:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise WriteError(f"cannot write results to {out}: {exc}") from exc
    return [final for _, final in staged]


def _sigma_header(d: int) -> list[str]:
    return [f"sigma_{i}" for i in range(1, d + 1)]


def spectrum_table(analysis: DumpAnalysis) -> Table:
    d = max(len(r.singular_values) for r in analysis.reports.values())
    header = ["model_name", "layer", "head", "cache_kind", "seq_len", "d_head",
              "spectral_norm", "frobenius_norm", "rank_estimate"] + _sigma_header(d)
    rows = []
    for (layer, head, kind), r in analysis.reports.items():
        rows.append([analysis.model_name, layer, head, kind, r.cols, r.rows,
                     r.spectral_norm, r.frobenius_norm, r.rank_estimate, *r.singular_values])
    return header, rows


def aggregate_table(analysis: DumpAnalysis) -> Table:
    d = len(analysis.aggregates[0].mean) - 2
    header = ["layer", "cache_kind", "stat", "spectral_norm", "frobenius_norm"] + _sigma_header(d)
    rows = []
    for agg in analysis.aggregates:
        for stat in ("mean", "min", "max"):
            rows.append([agg.layer_index, agg.cache_kind, stat, *getattr(agg, stat)])
    return header, rows


def error_table(ev: DumpEvaluation) -> Table:
    header = ["model_name", "layer", "head", "cache_kind", "b", "mse", "frobenius_error",
              "spectral_error", "spectral_bound", "frobenius_bound",
              "spectral_bound_norm", "frobenius_bound_norm", "short_sequence"]
    rows = [
        [ev.model_name, layer, head, kind, r.bit_width, r.mse, r.frobenius_error,
         r.spectral_error, r.spectral_bound, r.frobenius_bound,
         r.spectral_bound_norm, r.frobenius_bound_norm, ev.short_sequence]
        for (layer, head, kind), r in ev.records.items()
    ]
    return header, rows


def summary_table(rows: list[SummaryRow], extended: bool = False) -> Table:
    header = ["cache_kind", "b", "mean_mse", "std_mse"]
    if extended:
        header += ["min_mse", "max_mse"]
    out = []
    for r in rows:
        line = [r.cache_kind, r.bit_width, r.mean_mse, r.std_mse]
        if extended:
            line += [r.min_mse, r.max_mse]
        out.append(line)
    return header, out


def allocation_table(alloc: DumpAllocation) -> Table:
    header = ["layer", "norm_kind", "norm_k", "norm_v", "ratio", "b_k", "b_v", "budget"]
    rows = []
    for label, a in [*enumerate(alloc.per_layer), ("global", alloc.global_)]:
        rows.append([label, a.norm_kind, a.norm_k, a.norm_v, a.norm_ratio, a.b_k, a.b_v, a.budget])
    return header, rows


def trace_table(traces: list[tuple[int, PropagationTrace]]) -> Table:
    """One row per state; transition columns are empty on the final state."""
    header = ["trial", "layer", "b", "h_norm", "deviation", "bound",
              "w_spectral_norm", "dw_spectral_norm", "local_deviation"]
    rows = []
    nan = float("nan")
    for trial, t in traces:
        depth = len(t.bound)
        for layer in range(depth + 1):
            step = layer < depth
            rows.append([
                trial, layer, t.bit_width, t.h_norm[layer], t.deviation[layer],
                t.bound[layer] if step else nan,
                t.w_spectral_norm[layer] if step else nan,
                t.dw_spectral_norm[layer] if step else nan,
                t.local_deviation[layer] if step else nan,
            ])
    return header, rows
