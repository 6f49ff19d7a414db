"""Distortion and efficiency metrics.

PSNR always uses the peak of the initial D-bit code range, (2^D - 1)^2, so
numbers stay comparable across coefficient fits of the same layer. The
efficiency model scales a 32-bit reference cost linearly in the kept bit
count; printed values round half up to one decimal, and the headline
improvement factor is computed from the printed memory figure, not the
exact one, to match the usual presentation of such tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .tensor_store import DatasetError

FULL_PRECISION_BITS = 32
FULL_OPS_B = 285.0  # billions of bit operations at 32-bit
FULL_MEM_MB = 34.0  # megabytes of activation traffic at 32-bit


def mse(a, b) -> float:
    """Mean squared error in float64, over all elements."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise DatasetError(f"mse over mismatched sizes {a.size} and {b.size}")
    if a.size == 0:
        raise DatasetError("mse over zero elements")
    d = a - b
    return float(d @ d) / a.size


def psnr(mse_value: float, bits: int) -> float:
    """10 log10(peak^2 / mse) with peak = 2^bits - 1; +inf on zero error."""
    if mse_value < 0.0:
        raise DatasetError(f"mse must be non-negative, got {mse_value}")
    peak = float((1 << bits) - 1)
    if mse_value == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(peak * peak / mse_value))


def psnr_loss_from_mse(mse_ref: float, mse_test: float) -> float:
    """PSNR drop of `test` against `ref` in dB: 10 log10(mse_test / mse_ref).

    Both errors zero means both reconstructions are exact, loss 0. A zero
    test error against a lossy reference is an infinite gain (-inf); a zero
    reference against a lossy test is an infinite loss (+inf).
    """
    if mse_ref < 0.0 or mse_test < 0.0:
        raise DatasetError("mse values must be non-negative")
    if mse_ref == 0.0 and mse_test == 0.0:
        return 0.0
    if mse_test == 0.0:
        return float("-inf")
    if mse_ref == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(mse_test / mse_ref))


def display_round(value: float, places: int = 1) -> float:
    """Round half up at the given decimal place (71.25 -> 71.3, not 71.2)."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class EfficiencyRow:
    """Cost of running one forward pass with activations kept at `bits` bits.

    bits may be fractional: a set of per-layer schemes is summarized by its
    average kept rate.
    """

    bits: float
    ops_b: float  # printed convention, one decimal
    mem_mb: float
    improvement: float  # printed memory ratio, FULL_MEM_MB / mem_mb rounded
    improvement_exact: float  # FULL_PRECISION_BITS / bits


def efficiency_row(bits: float) -> EfficiencyRow:
    if not 0.0 < bits <= FULL_PRECISION_BITS:
        raise DatasetError(f"bits must be in (0, {FULL_PRECISION_BITS}], got {bits}")
    ops = display_round(FULL_OPS_B * bits / FULL_PRECISION_BITS)
    mem = display_round(FULL_MEM_MB * bits / FULL_PRECISION_BITS)
    return EfficiencyRow(
        bits=float(bits),
        ops_b=ops,
        mem_mb=mem,
        improvement=display_round(FULL_MEM_MB / mem) if mem > 0.0 else float("inf"),
        improvement_exact=FULL_PRECISION_BITS / bits,
    )


def efficiency_table(bits_list=None) -> list[EfficiencyRow]:
    """Rows for each bit width, by default 1..8 plus the 32-bit reference."""
    if bits_list is None:
        bits_list = list(range(1, 9)) + [FULL_PRECISION_BITS]
    return [efficiency_row(b) for b in bits_list]
