"""Quantization error measurement and the worst-case error bounds.

Both bounds share the closed form ``sqrt(m n) * M / (2 (2**(b-1) - 1))``
where ``M`` is the largest entry magnitude: every entry moves by at most half
a quantization step, and both the spectral and the Frobenius norm of an
``m x n`` matrix are at most ``sqrt(m n)`` times its largest entry. The
looser variants substitute ``||A||_2`` or ``||A||_F`` for ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .quantizer import MAX_BITS, MIN_BITS, check_bits, dequantize, fake_quantize, quantize
from .spectral import DEFAULT_MAX_ITERS, DEFAULT_TOL, frobenius_norm, spectral_norm
from .tensor import CACHE_KINDS, KVDump, as_matrix

BIT_RANGE = tuple(range(MIN_BITS, MAX_BITS + 1))


def mse(a, a_hat) -> float:
    a = np.asarray(a, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a.shape != a_hat.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {a_hat.shape}")
    d = a - a_hat
    return float(np.mean(d * d))


def _check_bound_args(m_max: float, rows: int, cols: int, b: int) -> int:
    if not m_max >= 0:
        raise ParameterError("m_max must be non-negative")
    if rows < 1 or cols < 1:
        raise ParameterError("rows and cols must be positive")
    return check_bits(b)


def spectral_bound(m_max: float, rows: int, cols: int, b: int) -> float:
    """Worst-case ``||A - A_hat||_2`` for a matrix whose largest entry is ``m_max``."""
    b = _check_bound_args(m_max, rows, cols, b)
    return float(np.sqrt(rows * cols) * m_max / (2 * ((1 << (b - 1)) - 1)))


def frobenius_bound(m_max: float, rows: int, cols: int, b: int) -> float:
    """Worst-case ``||A - A_hat||_F``; same closed form as :func:`spectral_bound`."""
    b = _check_bound_args(m_max, rows, cols, b)
    return float(np.sqrt(rows * cols) * m_max / (2 * ((1 << (b - 1)) - 1)))


@dataclass
class ErrorRecord:
    bit_width: int
    rows: int
    cols: int
    mse: float
    frobenius_error: float
    spectral_error: float
    spectral_bound: float
    frobenius_bound: float
    # loose forms with the matrix norm in place of the largest entry
    spectral_bound_norm: float = float("nan")
    frobenius_bound_norm: float = float("nan")
    bound_satisfied: tuple[bool, bool] = (True, True)


def verify_bounds(
    a,
    b: int,
    slack: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> ErrorRecord:
    """Quantize/dequantize ``a`` and compare its errors against both bounds.

    The reconstruction is kept in float64 so the measured error is the
    quantizer's, not float32 storage rounding.
    """
    a = as_matrix(a)
    b = check_bits(b)
    q = quantize(a, b)
    err = a.astype(np.float64) - dequantize(q, dtype=np.float64)
    rows, cols = a.shape
    fro = float(np.sqrt(np.sum(err * err)))
    spec = spectral_norm(err, tol, max_iters) if fro > 0 else 0.0
    s_bound = spectral_bound(q.max_magnitude, rows, cols, b)
    f_bound = frobenius_bound(q.max_magnitude, rows, cols, b)
    factor = np.sqrt(rows * cols) / (2 * ((1 << (b - 1)) - 1))
    norm_a2 = spectral_norm(a, tol, max_iters)
    return ErrorRecord(
        bit_width=b,
        rows=rows,
        cols=cols,
        mse=fro * fro / (rows * cols),
        frobenius_error=fro,
        spectral_error=spec,
        spectral_bound=s_bound,
        frobenius_bound=f_bound,
        spectral_bound_norm=float(factor * norm_a2),
        frobenius_bound_norm=float(factor * frobenius_norm(a)),
        bound_satisfied=(spec <= s_bound + slack, fro <= f_bound + slack),
    )


def bit_sweep(a, b_range=BIT_RANGE) -> list[ErrorRecord]:
    return [verify_bounds(a, b) for b in b_range]


def log2_slope(bits, values) -> float:
    """Least-squares slope of ``log2(values)`` against ``bits``."""
    x = np.asarray(bits, dtype=np.float64)
    y = np.log2(np.asarray(values, dtype=np.float64))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class SummaryRow:
    cache_kind: str
    bit_width: int
    mean_mse: float
    std_mse: float
    min_mse: float
    max_mse: float
    count: int


def summarize(kind: str, b: int, values) -> SummaryRow:
    """Mean and population standard deviation of per-matrix MSE."""
    v = np.asarray(values, dtype=np.float64)
    return SummaryRow(kind, b, float(v.mean()), float(v.std()), float(v.min()), float(v.max()), v.size)


@dataclass
class DumpEvaluation:
    model_name: str
    bits: dict[str, int]
    records: dict[tuple[int, int, str], ErrorRecord] = field(default_factory=dict)
    summary: dict[str, SummaryRow] = field(default_factory=dict)
    short_sequence: bool = False

    def layer_mean(self, layer: int, kind: str) -> float:
        vals = [r.mse for (l, _, k), r in self.records.items() if l == layer and k == kind]
        return float(np.mean(vals))

    @property
    def combined_mean_mse(self) -> float:
        return sum(row.mean_mse for row in self.summary.values())


def evaluate_dump(dump: KVDump, b_k: int, b_v: int) -> DumpEvaluation:
    """Quantize keys at ``b_k`` and values at ``b_v``; record per-matrix errors.

    ``short_sequence`` flags dumps with ``seq_len < d_head``, the regime where
    caches are short and compression gains are limited. They are evaluated
    anyway.
    """
    dump.validate()
    bits = {"K": check_bits(b_k), "V": check_bits(b_v)}
    out = DumpEvaluation(dump.model_name, bits, short_sequence=dump.seq_len < dump.d_head)
    for layer, head, kind, m in dump.matrices():
        out.records[(layer, head, kind)] = verify_bounds(m, bits[kind])
    for kind in CACHE_KINDS:
        vals = [r.mse for (_, _, k), r in out.records.items() if k == kind]
        out.summary[kind] = summarize(kind, bits[kind], vals)
    return out


def sweep_dump(dump: KVDump, b_range=BIT_RANGE) -> list[SummaryRow]:
    """Per-kind MSE summaries at every bit-width, ordered by kind then bit-width."""
    dump.validate()
    rows = []
    for kind in CACHE_KINDS:
        mats = [m for _, _, k, m in dump.matrices() if k == kind]
        for b in b_range:
            vals = [mse(m, fake_quantize(m, b, dtype=np.float64)) for m in mats]
            rows.append(summarize(kind, b, vals))
    return rows
