"""Norms, singular value spectra and rank analysis of cache matrices.

Singular values come from the ``d x d`` Gram matrix (``d = min(rows, cols)``)
diagonalised with cyclic Jacobi rotations. Rotations are scheduled in
round-robin order so each round applies ``d // 2`` disjoint rotations at once
as whole-row and whole-column numpy updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ParameterError, SizeError
from .rng import SplitMix64
from .tensor import CACHE_KINDS, KVDump, as_matrix

MAX_SVD_DIM = 512
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 1000
DEFAULT_RANK_TOL = 1e-6
JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 30
RESTART_SEED = 0x5EED
PLAIN_STEPS = 200


def frobenius_norm(a) -> float:
    a = as_matrix(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def _gram(a: np.ndarray) -> np.ndarray:
    return a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a


def spectral_norm(a, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Stops once the eigen-residual ``||G x - lam x||`` is below ``tol * lam``.

    Starts from the normalised all-ones vector and restarts once from a seeded
    random vector if that start is (numerically) annihilated. If plain steps
    have not converged after ``PLAIN_STEPS`` iterations (a near-degenerate top
    pair), later steps apply ``G**(2**k)`` by repeated squaring, so each step
    still counts as one iteration against ``max_iters``.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    g = _gram(as_matrix(a, dtype=np.float64))
    if not np.any(g):
        return 0.0
    n = g.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    if np.linalg.norm(g @ x) < 1e-12 * np.abs(g).max():
        x = SplitMix64(RESTART_SEED).normal(n)
        x /= np.linalg.norm(x)
    lam = 0.0
    p = g / np.linalg.norm(g)
    for it in range(max_iters):
        if it >= PLAIN_STEPS:
            p = p @ p
            p /= np.linalg.norm(p)
        y = (g if it < PLAIN_STEPS else p) @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        gx = g @ x
        lam = float(x @ gx)
        if np.linalg.norm(gx - lam * x) <= tol * lam:
            return float(np.sqrt(max(lam, 0.0)))
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations",
        estimate=float(np.sqrt(max(lam, 0.0))),
        iterations=max_iters,
    )


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for a round-robin tournament; every index pair meets once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(g: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted descending. Iteration stops
    when the off-diagonal Frobenius mass drops below ``tol * ||G||_F`` or
    after ``max_sweeps`` sweeps.
    """
    g = np.array(g, dtype=np.float64)
    n = g.shape[0]
    w = np.eye(n)
    total = np.linalg.norm(g)
    if n > 1 and total > 0:
        schedule = _round_robin(n)
        for _ in range(max_sweeps):
            off = np.sqrt(max(np.sum(g * g) - np.sum(np.diag(g) ** 2), 0.0))
            if off <= tol * total:
                break
            for p, q in schedule:
                gpq = g[p, q]
                active = gpq != 0
                if not active.any():
                    continue
                p, q, gpq = p[active], q[active], gpq[active]
                # huge tau overflows to inf and gives t = 0, the correct limit
                with np.errstate(over="ignore"):
                    tau = (g[q, q] - g[p, p]) / (2.0 * gpq)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = g[p, :].copy(), g[q, :].copy()
                g[p, :] = c[:, None] * rp - s[:, None] * rq
                g[q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = g[:, p].copy(), g[:, q].copy()
                g[:, p] = cp * c - cq * s
                g[:, q] = cp * s + cq * c
                g[p, q] = 0.0
                g[q, p] = 0.0
                wp, wq = w[:, p].copy(), w[:, q].copy()
                w[:, p] = wp * c - wq * s
                w[:, q] = wp * s + wq * c
    evals = np.diag(g).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], w[:, order]


def _check_size(a: np.ndarray) -> None:
    if min(a.shape) > MAX_SVD_DIM:
        raise SizeError(
            f"min(rows, cols) = {min(a.shape)} exceeds the desk-scale limit {MAX_SVD_DIM}"
        )


def singular_values(a) -> np.ndarray:
    """All ``min(rows, cols)`` singular values, descending, as float64."""
    a = as_matrix(a, dtype=np.float64)
    _check_size(a)
    evals, _ = jacobi_eigh(_gram(a))
    return np.sqrt(np.clip(evals, 0.0, None))


def svd(a):
    """Thin SVD ``(U, sigma, Vt)`` built from the Gram eigen-decomposition.

    Right (or left) vectors belonging to zero singular values are left as zero
    columns; they do not affect the reconstruction ``U @ diag(sigma) @ Vt``.
    """
    a = as_matrix(a, dtype=np.float64)
    _check_size(a)
    wide = a.shape[0] <= a.shape[1]
    base = a if wide else a.T
    evals, vecs = jacobi_eigh(base @ base.T)
    sigma = np.sqrt(np.clip(evals, 0.0, None))
    other = base.T @ vecs
    nz = sigma > 0
    other[:, nz] /= sigma[nz]
    other[:, ~nz] = 0.0
    if wide:
        return vecs, sigma, other.T
    return other, sigma, vecs.T


def rank_from_spectrum(sv: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if sv.size == 0 or sv[0] <= 0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


def rank_estimate(a, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if not 0 < rel_tol < 1:
        raise ParameterError("rel_tol must lie in (0, 1)")
    return rank_from_spectrum(singular_values(a), rel_tol)


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    spectral_norm: float
    frobenius_norm: float
    rank_estimate: int
    rows: int = 0
    cols: int = 0

    @classmethod
    def of(cls, a, rel_tol: float = DEFAULT_RANK_TOL) -> "SpectrumReport":
        a = as_matrix(a, dtype=np.float64)
        sv = singular_values(a)
        return cls(
            singular_values=sv,
            spectral_norm=float(sv[0]),
            frobenius_norm=frobenius_norm(a),
            rank_estimate=rank_from_spectrum(sv, rel_tol),
            rows=a.shape[0],
            cols=a.shape[1],
        )


@dataclass
class LayerAggregate:
    """Mean, min and max across heads for one (layer, cache kind).

    Each statistic is a vector laid out as
    ``[spectral_norm, frobenius_norm, sigma_1, ..., sigma_d]``.
    """

    layer_index: int
    cache_kind: str
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray

    @property
    def spectral_norm(self) -> tuple[float, float, float]:
        return float(self.mean[0]), float(self.min[0]), float(self.max[0])

    @property
    def frobenius_norm(self) -> tuple[float, float, float]:
        return float(self.mean[1]), float(self.min[1]), float(self.max[1])

    @property
    def singular_values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.mean[2:], self.min[2:], self.max[2:]


def aggregate(layer: int, kind: str, reports: list[SpectrumReport]) -> LayerAggregate:
    stack = np.array(
        [np.concatenate(([r.spectral_norm, r.frobenius_norm], r.singular_values)) for r in reports]
    )
    lo, hi = stack.min(axis=0), stack.max(axis=0)
    # float summation can push the mean a ulp outside [min, max]
    mean = np.clip(stack.mean(axis=0), lo, hi)
    return LayerAggregate(layer, kind, mean, lo, hi)


@dataclass
class DumpAnalysis:
    model_name: str
    reports: dict[tuple[int, int, str], SpectrumReport] = field(default_factory=dict)
    aggregates: list[LayerAggregate] = field(default_factory=list)

    def aggregate_for(self, layer: int, kind: str) -> LayerAggregate:
        for agg in self.aggregates:
            if agg.layer_index == layer and agg.cache_kind == kind:
                return agg
        raise KeyError((layer, kind))


def analyze_dump(dump: KVDump, rel_tol: float = DEFAULT_RANK_TOL) -> DumpAnalysis:
    dump.validate()
    out = DumpAnalysis(dump.model_name)
    for layer, head, kind, m in dump.matrices():
        out.reports[(layer, head, kind)] = SpectrumReport.of(m, rel_tol)
    for layer in range(dump.n_layers):
        for kind in CACHE_KINDS:
            heads = [out.reports[(layer, h, kind)] for h in range(dump.n_heads)]
            out.aggregates.append(aggregate(layer, kind, heads))
    return out
