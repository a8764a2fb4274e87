"""Norm-ratio bit allocation between key and value caches.

Quantization error scales like ``||X|| * 2**-b``, so key and value errors are
balanced when ``2**(b_k - b_v) == ||K|| / ||V||``. Under a fixed budget
``b_k + b_v = B`` the integer split closest to ``B/2 + log2(||K||/||V||)/2``
minimises ``max(||K|| 2**-b_k, ||V|| 2**-b_v)``; ties go to the keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllocationError, ParameterError
from .quantizer import MAX_BITS, MIN_BITS
from .spectral import frobenius_norm, spectral_norm
from .tensor import KVDump

NORM_KINDS = ("frobenius", "spectral")
_TIE_EPS = 1e-9


@dataclass(frozen=True)
class BitAllocation:
    b_k: int
    b_v: int
    norm_k: float
    norm_v: float
    norm_kind: str = "frobenius"

    @property
    def budget(self) -> int:
        return self.b_k + self.b_v

    @property
    def norm_ratio(self) -> float:
        return self.norm_k / self.norm_v


def _check_norms(norm_k: float, norm_v: float) -> None:
    for name, v in (("norm_k", norm_k), ("norm_v", norm_v)):
        if not (v > 0 and math.isfinite(v)):
            raise ParameterError(f"{name} must be positive and finite, got {v}")


def bit_delta(norm_k: float, norm_v: float) -> float:
    """Real-valued ``b_k - b_v`` that equalises the two error scales."""
    _check_norms(norm_k, norm_v)
    return math.log2(norm_k / norm_v)


def check_budget(budget) -> int:
    if isinstance(budget, bool) or not isinstance(budget, (int, np.integer)):
        raise AllocationError(f"budget must be an integer, got {budget!r}")
    if not 2 * MIN_BITS <= budget <= 2 * MAX_BITS:
        raise AllocationError(
            f"budget {budget} cannot be split into two bit-widths in [{MIN_BITS}, {MAX_BITS}]"
        )
    return int(budget)


def allocate(norm_k: float, norm_v: float, budget: int, norm_kind: str = "frobenius") -> BitAllocation:
    budget = check_budget(budget)
    if norm_kind not in NORM_KINDS:
        raise ParameterError(f"norm_kind must be one of {NORM_KINDS}")
    target = budget / 2 + bit_delta(norm_k, norm_v) / 2
    nearest = math.floor(target + 0.5)
    # rounding noise in the ratio must not flip an exact half-bit tie
    if abs(target - math.floor(target) - 0.5) < _TIE_EPS:
        nearest = math.ceil(target)
    b_k = min(max(nearest, MIN_BITS), MAX_BITS)
    b_v = budget - b_k
    if b_v > MAX_BITS:
        b_v = MAX_BITS
    elif b_v < MIN_BITS:
        b_v = MIN_BITS
    b_k = budget - b_v
    if not (MIN_BITS <= b_k <= MAX_BITS):
        raise AllocationError(f"no feasible split of budget {budget}")
    return BitAllocation(b_k, b_v, float(norm_k), float(norm_v), norm_kind)


def _norm(m: np.ndarray, kind: str) -> float:
    return frobenius_norm(m) if kind == "frobenius" else spectral_norm(m)


@dataclass
class DumpAllocation:
    per_layer: list[BitAllocation]
    global_: BitAllocation


def allocate_for_dump(dump: KVDump, budget: int, norm_kind: str = "frobenius") -> DumpAllocation:
    """Allocate per layer from head-averaged norms, and once globally."""
    dump.validate()
    if norm_kind not in NORM_KINDS:
        raise ParameterError(f"norm_kind must be one of {NORM_KINDS}")
    norms = {"K": np.zeros((dump.n_layers, dump.n_heads)), "V": np.zeros((dump.n_layers, dump.n_heads))}
    for layer, head, kind, m in dump.matrices():
        norms[kind][layer, head] = _norm(m, norm_kind)
    per_layer = [
        allocate(norms["K"][l].mean(), norms["V"][l].mean(), budget, norm_kind)
        for l in range(dump.n_layers)
    ]
    overall = allocate(norms["K"].mean(), norms["V"].mean(), budget, norm_kind)
    return DumpAllocation(per_layer, overall)
