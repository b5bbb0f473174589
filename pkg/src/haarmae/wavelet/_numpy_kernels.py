"""Pure-numpy single-level separable 2-tap kernels.

Subband naming: the first letter is the filter applied along the height
axis, the second the filter along the width axis, so HL (high over
height) carries horizontal-stripe energy. Width is filtered first, then
height; the compiled backend mirrors the exact multiply/add order of
these expressions so the two are bit-identical.

All kernels take and return float64 (C, H, W) arrays.
"""

from __future__ import annotations

import numpy as np


def analyze2d(x, h0, h1, g0, g1):
    """One analysis level: (C, H, W) -> four (C, H/2, W/2) subbands.

    Returns (ll, lh, hl, hh).
    """
    even = x[:, :, 0::2]
    odd = x[:, :, 1::2]
    lo = even * h0 + odd * h1
    hi = even * g0 + odd * g1
    lo_t = lo[:, 0::2, :]
    lo_b = lo[:, 1::2, :]
    hi_t = hi[:, 0::2, :]
    hi_b = hi[:, 1::2, :]
    ll = lo_t * h0 + lo_b * h1
    hl = lo_t * g0 + lo_b * g1
    lh = hi_t * h0 + hi_b * h1
    hh = hi_t * g0 + hi_b * g1
    return ll, lh, hl, hh


def synthesize2d(ll, lh, hl, hh, h0, h1, g0, g1):
    """Inverse of analyze2d for orthonormal taps: four subbands -> (C, H, W)."""
    channels, half_h, half_w = ll.shape
    lo = np.empty((channels, 2 * half_h, half_w), dtype=np.float64)
    hi = np.empty_like(lo)
    lo[:, 0::2, :] = ll * h0 + hl * g0
    lo[:, 1::2, :] = ll * h1 + hl * g1
    hi[:, 0::2, :] = lh * h0 + hh * g0
    hi[:, 1::2, :] = lh * h1 + hh * g1
    x = np.empty((channels, 2 * half_h, 2 * half_w), dtype=np.float64)
    x[:, :, 0::2] = lo * h0 + hi * g0
    x[:, :, 1::2] = lo * h1 + hi * g1
    return x
