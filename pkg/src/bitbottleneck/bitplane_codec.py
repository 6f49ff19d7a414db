"""Fixed-point initial quantization and bit-plane decomposition.

A D-bit code c in [0, 2^D - 1] is split into planes b_1 .. b_D with b_1 the
least significant bit, so c = sum_j 2^(j-1) b_j. Plane j therefore carries a
natural real-unit weight of scale * 2^(j-1); the clip floor is added back as
a constant offset at reconstruction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_store import ActivationTensor, DatasetError

QUANTIZER_KINDS = ("clip_scale", "rounding")
DEFAULT_BITS = 8
DEFAULT_CLIP_PERCENTILE = 99.9


@dataclass(frozen=True)
class InitQuantizerSpec:
    """Parameters of the initial uniform fixed-point quantizer for one layer."""

    kind: str
    bits: int
    clip_lo: float
    clip_hi: float
    scale: float

    def __post_init__(self):
        if self.kind not in QUANTIZER_KINDS:
            raise DatasetError(f"unknown quantizer kind {self.kind!r}, expected one of {QUANTIZER_KINDS}")
        if not 1 <= self.bits <= 16:
            raise DatasetError(f"bits must be in 1..16, got {self.bits}")
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise DatasetError(f"scale must be positive and finite, got {self.scale}")
        if not self.clip_hi > self.clip_lo:
            raise DatasetError(f"clip_hi {self.clip_hi} must exceed clip_lo {self.clip_lo}")

    @property
    def num_levels(self) -> int:
        return (1 << self.bits) - 1  # peak code value


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer with ties away from zero (not banker's)."""
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def fit_init_quantizer(values, kind: str = "clip_scale", bits: int = DEFAULT_BITS,
                       clip_percentile: float = DEFAULT_CLIP_PERCENTILE) -> InitQuantizerSpec:
    """Fit clip range and step size to pooled activation values.

    The high clip is a percentile of the pooled values so rare outliers do
    not stretch the code range; the low clip is the value floor (0 for
    rectified activations). The `rounding` kind keeps the floor pinned at 0.
    """
    pooled = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    if pooled.size == 0:
        raise DatasetError("cannot fit a quantizer to zero values")
    if not np.isfinite(pooled).all():
        raise DatasetError("cannot fit a quantizer to non-finite values")
    levels = (1 << bits) - 1
    if kind == "clip_scale":
        lo = min(0.0, float(pooled.min()))
    elif kind == "rounding":
        lo = 0.0
        if pooled.min() < 0.0:
            raise DatasetError("the 'rounding' quantizer needs non-negative values")
    else:
        raise DatasetError(f"unknown quantizer kind {kind!r}, expected one of {QUANTIZER_KINDS}")
    hi = float(np.percentile(pooled, clip_percentile))
    if hi <= lo:
        hi = float(pooled.max())
    if hi <= lo:
        hi = lo + 1.0  # constant input, one step of unit size
    scale = (hi - lo) / levels
    return InitQuantizerSpec(kind=kind, bits=bits, clip_lo=lo, clip_hi=hi, scale=scale)


def init_quantize(spec: InitQuantizerSpec, tensor: ActivationTensor) -> np.ndarray:
    """Map activations to integer codes in [0, 2^bits - 1] (flat uint32)."""
    x = tensor.values.astype(np.float64)
    levels = spec.num_levels
    if spec.kind == "clip_scale":
        clipped = np.clip(x, spec.clip_lo, spec.clip_hi)
        codes = round_half_away((clipped - spec.clip_lo) / spec.scale)
    else:  # rounding
        codes = np.clip(round_half_away(x / spec.scale), 0, levels)
    codes = np.clip(codes, 0, levels)  # round-up at the top edge
    return codes.astype(np.uint32)


def decompose(codes: np.ndarray, bits: int) -> np.ndarray:
    """Split codes into an (M, bits) 0/1 matrix, column j-1 = bit plane j (LSB first)."""
    codes = np.ascontiguousarray(codes, dtype=np.uint32).reshape(-1)
    if codes.size and int(codes.max()) >= (1 << bits):
        bad = int(np.argmax(codes >= (1 << bits)))
        raise DatasetError(f"code {int(codes[bad])} at flat index {bad} does not fit in {bits} bits")
    shifts = np.arange(bits, dtype=np.uint32)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def recompose(planes: np.ndarray) -> np.ndarray:
    """Inverse of decompose: (M, bits) 0/1 matrix back to integer codes."""
    planes = np.ascontiguousarray(planes, dtype=np.uint32)
    weights = np.uint32(1) << np.arange(planes.shape[1], dtype=np.uint32)
    return (planes * weights[None, :]).sum(axis=1, dtype=np.uint64).astype(np.uint32)


def natural_coefficients(spec: InitQuantizerSpec) -> np.ndarray:
    """Per-plane weights of the plain fixed-point code, in real units."""
    return spec.scale * np.power(2.0, np.arange(spec.bits, dtype=np.float64))


def reconstruct(planes: np.ndarray, alpha: np.ndarray, clip_lo: float) -> np.ndarray:
    """Weighted recombination x_hat = clip_lo + B alpha, float64."""
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    if planes.shape[1] != alpha.size:
        raise DatasetError(f"{planes.shape[1]} planes but {alpha.size} coefficients")
    return clip_lo + planes @ alpha


def dequantize(spec: InitQuantizerSpec, codes: np.ndarray) -> np.ndarray:
    """Plain fixed-point reconstruction of codes, float64."""
    return spec.clip_lo + spec.scale * codes.astype(np.float64)


def plane_counts(planes: np.ndarray) -> np.ndarray:
    """Ones per bit plane (column sums), for occupancy reports."""
    return np.ascontiguousarray(planes, dtype=np.int64).sum(axis=0)
