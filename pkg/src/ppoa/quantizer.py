"""Fixed-width signed quantization of real-valued updates.

Reals in ``[-kappa, kappa]`` map onto the symmetric integer grid
``[-L, L]`` with ``L = 2**(h-1) - 1``.  De-quantization is the linear map
``q * kappa / L``, so it commutes with summation: the sum of quantized
updates can be de-quantized once after aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantSpec:
    """Bit width ``h`` and clipping range ``kappa`` shared by all parties."""

    h: int = 16
    kappa: float = 1.0

    def __post_init__(self):
        if not isinstance(self.h, (int, np.integer)) or not 2 <= self.h <= 63:
            raise ValueError(f"h must be an integer in [2, 63], got {self.h!r}")
        if not np.isfinite(self.kappa) or self.kappa <= 0:
            raise ValueError(f"kappa must be positive and finite, got {self.kappa!r}")

    @property
    def levels(self) -> int:
        return 2 ** (self.h - 1) - 1

    @property
    def step(self) -> float:
        """Grid spacing ``kappa / L``."""
        return self.kappa / self.levels


def quantize(p, spec: QuantSpec, return_clipped: bool = False):
    """Quantize ``p`` (scalar or array) to integers in ``[-L, L]``.

    Values outside ``[-kappa, kappa]`` are clipped first.  Ties round away
    from zero, which keeps ``quantize(-p) == -quantize(p)`` exact.

    With ``return_clipped=True`` also returns how many entries were clipped.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    mag = np.abs(arr)
    n_clipped = int(np.count_nonzero(mag > spec.kappa))
    mag = np.minimum(mag, spec.kappa)
    x = mag * spec.levels / spec.kappa
    whole = np.floor(x)
    # x - whole is exact here, so the half-way comparison is exact too
    mag_q = whole + (x - whole >= 0.5)
    q = (np.sign(arr) * mag_q).astype(np.int64)
    if np.ndim(p) == 0:
        q = int(q)
    if return_clipped:
        return q, n_clipped
    return q


def dequantize(q, spec: QuantSpec):
    """Map grid integers (or sums of them) back to reals: ``q * kappa / L``."""
    arr = np.asarray(q)
    out = arr.astype(np.float64) * spec.kappa / spec.levels
    if np.ndim(q) == 0:
        return float(out)
    return out
