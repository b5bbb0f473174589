"""Orthonormal 2-tap wavelet filter pairs.

Only 2-tap filters are supported: with even input lengths the stride-2
analysis windows never cross the signal boundary, so no padding policy
exists or is needed. Longer filters are rejected at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class WaveletFilter:
    """Analysis pair: low-pass (scaling) taps and high-pass taps."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "low", tuple(float(v) for v in self.low))
        object.__setattr__(self, "high", tuple(float(v) for v in self.high))
        if len(self.low) != 2 or len(self.high) != 2:
            raise ValueError(
                f"only 2-tap filters are supported, got lengths "
                f"{len(self.low)}/{len(self.high)}"
            )
        lo_norm = sum(v * v for v in self.low)
        hi_norm = sum(v * v for v in self.high)
        cross = sum(a * b for a, b in zip(self.low, self.high))
        if abs(lo_norm - 1.0) > _ORTHO_TOL:
            raise ValueError(f"low-pass taps not unit norm: sum of squares {lo_norm}")
        if abs(hi_norm - 1.0) > _ORTHO_TOL:
            raise ValueError(f"high-pass taps not unit norm: sum of squares {hi_norm}")
        if abs(cross) > _ORTHO_TOL:
            raise ValueError(f"filter taps not orthogonal: inner product {cross}")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)

HAAR = WaveletFilter(low=(_INV_SQRT2, _INV_SQRT2), high=(_INV_SQRT2, -_INV_SQRT2))
