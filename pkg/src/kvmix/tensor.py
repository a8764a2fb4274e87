"""Dense matrices, the KVD1 dump container and synthetic cache generation.

A *matrix* throughout kvmix is a 2-D, C-contiguous ``float32`` numpy array
with finite entries. :func:`as_matrix` is the single gate that enforces this.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError, LengthError, ParameterError, SpecError, WriteError
from .rng import SplitMix64, child_seed

MAGIC = b"KVD1"
VERSION = 1
DTYPE_F32 = 0
DTYPE_BF16 = 1
_BYTES_PER_ENTRY = {DTYPE_F32: 4, DTYPE_BF16: 2}
_HEADER = struct.Struct("<4sIIIIIB3sI")

CACHE_KINDS = ("K", "V")


def as_matrix(a, name: str = "matrix", dtype=np.float32) -> np.ndarray:
    """Validate ``a`` as a finite 2-D matrix and return it as ``dtype`` (float32 by default)."""
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number) or np.iscomplexobj(arr):
        raise DataError(f"{name} must hold real numbers")
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf entries")
    return arr


@dataclass
class KVDump:
    """Per-(layer, head) key and value matrices, each ``d_head x seq_len``.

    ``keys`` and ``values`` have shape ``(n_layers, n_heads, d_head, seq_len)``.
    ``dtype`` records the on-disk payload type so a read/write cycle is
    byte-exact.
    """

    model_name: str
    keys: np.ndarray
    values: np.ndarray
    dtype: int = DTYPE_F32

    def __post_init__(self):
        self.keys = np.ascontiguousarray(self.keys, dtype=np.float32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)

    @property
    def n_layers(self) -> int:
        return self.keys.shape[0]

    @property
    def n_heads(self) -> int:
        return self.keys.shape[1]

    @property
    def d_head(self) -> int:
        return self.keys.shape[2]

    @property
    def seq_len(self) -> int:
        return self.keys.shape[3]

    def validate(self) -> "KVDump":
        for kind, arr in (("keys", self.keys), ("values", self.values)):
            if arr.ndim != 4 or min(arr.shape) < 1:
                raise ParameterError(
                    f"{kind} must have shape (n_layers, n_heads, d_head, seq_len), got {arr.shape}"
                )
        if self.keys.shape != self.values.shape:
            raise ParameterError(
                f"key/value entry count mismatch: {self.keys.shape} vs {self.values.shape}"
            )
        if self.dtype not in _BYTES_PER_ENTRY:
            raise ParameterError(f"unknown dtype tag {self.dtype}")
        if not (np.all(np.isfinite(self.keys)) and np.all(np.isfinite(self.values))):
            raise DataError("dump contains NaN or Inf entries")
        return self

    def matrix(self, layer: int, head: int, kind: str) -> np.ndarray:
        return (self.keys if kind == "K" else self.values)[layer, head]

    def matrices(self) -> Iterator[tuple[int, int, str, np.ndarray]]:
        """Yield ``(layer, head, kind, matrix)`` in file order: layer, head, K then V."""
        for layer in range(self.n_layers):
            for head in range(self.n_heads):
                yield layer, head, "K", self.keys[layer, head]
                yield layer, head, "V", self.values[layer, head]


# -- bfloat16 helpers -------------------------------------------------------

def _bf16_to_f32(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.uint32) << np.uint32(16)).view(np.float32)


def _f32_to_bf16(x: np.ndarray) -> np.ndarray:
    # round to nearest even on the dropped 16 bits
    bits = np.ascontiguousarray(x, dtype=np.float32).view(np.uint32)
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = bits + np.uint32(0x7FFF) + lsb
    return (rounded >> np.uint32(16)).astype(np.uint16)


# -- KVD1 I/O ---------------------------------------------------------------

def encode_kvdump(dump: KVDump) -> bytes:
    dump.validate()
    name = dump.model_name.encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, dump.n_layers, dump.n_heads, dump.d_head, dump.seq_len,
        dump.dtype, b"\x00\x00\x00", len(name),
    )
    # (layer, head, kind, d, s) order interleaves K and V per head
    payload = np.stack([dump.keys, dump.values], axis=2)
    if dump.dtype == DTYPE_BF16:
        body = _f32_to_bf16(payload).astype("<u2").tobytes()
    else:
        body = payload.astype("<f4").tobytes()
    return header + name + body


def decode_kvdump(data: bytes) -> KVDump:
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise LengthError(f"header truncated: {len(data)} bytes")
    magic, version, n_layers, n_heads, d_head, seq_len, dtype, pad, name_len = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype not in _BYTES_PER_ENTRY:
        raise FormatError(f"unknown dtype tag {dtype}")
    if pad != b"\x00\x00\x00":
        raise FormatError("non-zero header padding")
    if min(n_layers, n_heads, d_head, seq_len) < 1:
        raise FormatError("all dimensions must be positive")
    offset = _HEADER.size
    if len(data) < offset + name_len:
        raise LengthError("model name truncated")
    try:
        model_name = data[offset : offset + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("model name is not valid UTF-8") from exc
    offset += name_len

    count = n_layers * n_heads * 2 * d_head * seq_len
    expected = count * _BYTES_PER_ENTRY[dtype]
    got = len(data) - offset
    if got != expected:
        raise LengthError(f"payload is {got} bytes, header implies {expected}")
    if dtype == DTYPE_BF16:
        flat = _bf16_to_f32(np.frombuffer(data, dtype="<u2", count=count, offset=offset))
    else:
        flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)
    payload = flat.reshape(n_layers, n_heads, 2, d_head, seq_len)
    if not np.all(np.isfinite(payload)):
        raise DataError("dump contains NaN or Inf entries")
    return KVDump(model_name, payload[:, :, 0], payload[:, :, 1], dtype=dtype)


def read_kvdump(path) -> KVDump:
    return decode_kvdump(Path(path).read_bytes())


def write_kvdump(dump: KVDump, path) -> None:
    data = encode_kvdump(dump)
    if not str(path):
        raise WriteError("empty output path")
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


# -- synthetic caches -------------------------------------------------------

@dataclass
class SyntheticSpec:
    d_head: int
    seq_len: int
    singular_values: Sequence[float]
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.d_head < 1 or self.seq_len < 1:
            raise SpecError("d_head and seq_len must be positive")
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if sv.ndim != 1 or sv.size < 1 or sv.size > min(self.d_head, self.seq_len):
            raise SpecError(
                f"need 1..{min(self.d_head, self.seq_len)} singular values, got {sv.size}"
            )
        if not np.all(np.isfinite(sv)) or np.any(sv < 0):
            raise SpecError("singular values must be finite and non-negative")
        if np.any(np.diff(sv) > 0):
            raise SpecError("singular values must be sorted descending")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        return self


def _orthonormal(rng: SplitMix64, n: int, r: int) -> np.ndarray:
    q, rr = np.linalg.qr(rng.normal((n, r)))
    # sign-fix so the factor is a deterministic function of the draw
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    return q * signs


def generate_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """Return ``U diag(sigma) V^T`` with seeded orthonormal factors.

    U is drawn first from the stream, then V, each as a QR of a standard
    normal block.
    """
    spec.validate()
    sv = np.asarray(spec.singular_values, dtype=np.float64)
    rng = SplitMix64(spec.seed)
    u = _orthonormal(rng, spec.d_head, sv.size)
    v = _orthonormal(rng, spec.seq_len, sv.size)
    return np.ascontiguousarray((u * sv) @ v.T, dtype=np.float32)


def decaying_spectrum(r: int, decay: float = 2.0, floor: float = 0.05) -> np.ndarray:
    """Full-rank descending profile ``exp(-decay * i / r) + floor``."""
    i = np.arange(r, dtype=np.float64)
    return np.exp(-decay * i / r) + floor


def synthesize_kv_pair(norm_ratio: float, d_head: int, seq_len: int, seed: int = 0):
    """Build a full-rank (K, V) pair with ``||K||_F / ||V||_F == norm_ratio``.

    Keys get a steeper spectrum than values (heavier leading singular values),
    then the key spectrum is rescaled to hit the Frobenius ratio exactly.
    """
    if not norm_ratio > 0 or not np.isfinite(norm_ratio):
        raise ParameterError(f"norm_ratio must be positive, got {norm_ratio}")
    if d_head < 1 or seq_len < 1:
        raise ParameterError("d_head and seq_len must be positive")
    r = min(d_head, seq_len)
    sv_v = decaying_spectrum(r, decay=2.0)
    sv_k = decaying_spectrum(r, decay=4.0)
    sv_v /= np.linalg.norm(sv_v)
    sv_k *= norm_ratio / np.linalg.norm(sv_k)
    k = generate_synthetic(SyntheticSpec(d_head, seq_len, sv_k, child_seed(seed, 0)))
    v = generate_synthetic(SyntheticSpec(d_head, seq_len, sv_v, child_seed(seed, 1)))
    return k, v


def synthesize_dump(
    norm_ratio: float,
    n_layers: int,
    n_heads: int,
    d_head: int,
    seq_len: int,
    seed: int = 0,
    model_name: str = "synthetic",
    ratios: Sequence[float] | None = None,
) -> KVDump:
    """Dump of independent synthetic pairs; ``ratios`` overrides the ratio per layer."""
    if n_layers < 1 or n_heads < 1:
        raise ParameterError("n_layers and n_heads must be positive")
    if ratios is not None and len(ratios) != n_layers:
        raise ParameterError("need one ratio per layer")
    keys = np.empty((n_layers, n_heads, d_head, seq_len), dtype=np.float32)
    values = np.empty_like(keys)
    for layer in range(n_layers):
        ratio = norm_ratio if ratios is None else ratios[layer]
        for head in range(n_heads):
            k, v = synthesize_kv_pair(ratio, d_head, seq_len, child_seed(seed, layer, head))
            keys[layer, head] = k
            values[layer, head] = v
    return KVDump(model_name, keys, values)
