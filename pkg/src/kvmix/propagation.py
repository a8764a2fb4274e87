"""Quantization-error propagation through residual layers ``h' = h + W h``.

Noise is injected into the weights: the perturbed run uses
``dequantize(quantize(W_l, b))`` at every layer, starting from the same
``h_0`` as the clean run. The per-layer bound is
``||(W - W~) h_l|| <= ||W - W~||_2 ||h_l||``, evaluated at the clean state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .quantizer import fake_quantize
from .rng import SplitMix64, child_seed
from .spectral import spectral_norm
from .tensor import as_matrix

NORM_FLOOR = 1e-12


@dataclass
class LayerStack:
    weights: list[np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        self.weights = [as_matrix(w, f"weights[{i}]") for i, w in enumerate(self.weights)]
        if not self.weights:
            raise ParameterError("a stack needs at least one layer")
        n = self.weights[0].shape[0]
        for i, w in enumerate(self.weights):
            if w.shape != (n, n):
                raise ParameterError(f"weights[{i}] has shape {w.shape}, expected ({n}, {n})")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def random(cls, depth: int, dim: int, scale: float = 0.1, seed: int = 0) -> "LayerStack":
        """Gaussian weights with entries ``N(0, scale**2 / dim)``, one seeded stream per layer."""
        if depth < 1 or dim < 1:
            raise ParameterError("depth and dim must be positive")
        weights = [
            SplitMix64(child_seed(seed, l)).normal((dim, dim)) * (scale / np.sqrt(dim))
            for l in range(depth)
        ]
        return cls(weights, seed)


def random_state(dim: int, seed: int = 0) -> np.ndarray:
    """Seeded Gaussian vector normalised to unit length."""
    h = SplitMix64(seed).normal(dim)
    return h / np.linalg.norm(h)


def _check_state(stack: LayerStack, h0) -> np.ndarray:
    h = np.asarray(h0, dtype=np.float64).reshape(-1)
    if h.size != stack.dim:
        raise ParameterError(f"h0 has {h.size} entries, stack dim is {stack.dim}")
    if not np.all(np.isfinite(h)):
        raise ParameterError("h0 must be finite")
    return h


def _run(weights, h: np.ndarray) -> list[np.ndarray]:
    states = [h]
    for w in weights:
        h = h + w.astype(np.float64) @ h
        states.append(h)
    return states


def forward(stack: LayerStack, h0) -> list[np.ndarray]:
    """States ``h_0 .. h_L`` of the unnormalised residual recursion."""
    return _run(stack.weights, _check_state(stack, h0))


@dataclass
class PropagationTrace:
    """Clean vs quantized trajectories of one stack.

    State arrays have length ``L + 1``; per-transition arrays have length ``L``.
    ``local_deviation[l]`` is ``||(W_l - W~_l) h_l||`` from the clean state,
    the quantity the per-layer ``bound`` controls.
    """

    bit_width: int
    h_norm: np.ndarray
    deviation: np.ndarray
    local_deviation: np.ndarray
    bound: np.ndarray
    w_spectral_norm: np.ndarray
    dw_spectral_norm: np.ndarray
    clean: list[np.ndarray] = field(repr=False, default_factory=list)
    perturbed: list[np.ndarray] = field(repr=False, default_factory=list)

    def bound_holds(self, slack: float = 1e-9) -> bool:
        return bool(np.all(self.local_deviation <= self.bound + slack))


def propagate_with_quantization(stack: LayerStack, h0, b: int) -> PropagationTrace:
    h = _check_state(stack, h0)
    quantized = [fake_quantize(w, b) for w in stack.weights]
    clean = _run(stack.weights, h)
    perturbed = _run(quantized, h)
    diffs = [w.astype(np.float64) - wq.astype(np.float64) for w, wq in zip(stack.weights, quantized)]
    dw_norm = np.array([spectral_norm(d) if np.any(d) else 0.0 for d in diffs])
    h_norm = np.array([np.linalg.norm(s) for s in clean])
    return PropagationTrace(
        bit_width=b,
        h_norm=h_norm,
        deviation=np.array([np.linalg.norm(c - p) for c, p in zip(clean, perturbed)]),
        local_deviation=np.array([np.linalg.norm(d @ s) for d, s in zip(diffs, clean)]),
        bound=dw_norm * h_norm[:-1],
        w_spectral_norm=np.array([spectral_norm(w) for w in stack.weights]),
        dw_spectral_norm=dw_norm,
        clean=clean,
        perturbed=perturbed,
    )


def amplification_curve(stack: LayerStack, h0, b: int) -> np.ndarray:
    """Relative deviation ``||h_l - h~_l|| / ||h_l||`` per state; NaN where ``||h_l||`` vanishes."""
    trace = propagate_with_quantization(stack, h0, b)
    out = np.full(trace.h_norm.shape, np.nan)
    ok = trace.h_norm >= NORM_FLOOR
    out[ok] = trace.deviation[ok] / trace.h_norm[ok]
    return out
