"""Multi-level 2D wavelet analysis/synthesis over multispectral rasters.

Axis and naming convention (fixed): the 1D filter pair runs along the
width axis first, then along the height axis. A subband's first letter
is the height-axis filter, the second the width-axis filter: HL is
high-pass over height (horizontal details), LH is high-pass over width
(vertical details).

Arithmetic runs in float64 regardless of input dtype; results are cast
back to the input dtype. Two interchangeable backends provide the
single-level kernels: a compiled extension (built at install time when
a C toolchain is present) and a pure-numpy fallback, selected at import
and switchable via use_backend(). Both produce bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rasters import Raster
from . import _numpy_kernels
from .filters import HAAR, WaveletFilter

try:
    from . import _haar_ext
except ImportError:
    _haar_ext = None

_BACKENDS = {"numpy": _numpy_kernels}
if _haar_ext is not None:
    _BACKENDS["compiled"] = _haar_ext

_active = "compiled" if _haar_ext is not None else "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def use_backend(name: str) -> str:
    """Select the kernel backend: 'numpy', 'compiled', or 'auto' (prefer
    compiled). Returns the backend now active."""
    global _active
    if name == "auto":
        _active = "compiled" if _haar_ext is not None else "numpy"
        return _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name
    return _active


def _out_dtype(dtype) -> np.dtype:
    return np.dtype(np.float32) if dtype == np.float32 else np.dtype(np.float64)


def _as_kernel_input(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def analyze_level_f64(x: np.ndarray, filt: WaveletFilter = HAAR):
    """Single-level analysis on a float64 (C, H, W) array; returns
    (ll, lh, hl, hh). Thin dispatch used by the transform ops and by the
    training graph (it is the adjoint of synthesize_level_f64)."""
    kern = _BACKENDS[_active]
    h0, h1 = filt.low
    g0, g1 = filt.high
    return kern.analyze2d(_as_kernel_input(x), h0, h1, g0, g1)


def synthesize_level_f64(ll, lh, hl, hh, filt: WaveletFilter = HAAR):
    """Single-level synthesis on float64 (C, h, w) subbands; returns (C, 2h, 2w)."""
    kern = _BACKENDS[_active]
    h0, h1 = filt.low
    g0, g1 = filt.high
    return kern.synthesize2d(
        _as_kernel_input(ll), _as_kernel_input(lh),
        _as_kernel_input(hl), _as_kernel_input(hh),
        h0, h1, g0, g1,
    )


def dwt1d(signal, filt: WaveletFilter = HAAR):
    """One analysis level of a 1D signal: returns (approx, detail), each
    half the input length. approx[k] = low[0]*s[2k] + low[1]*s[2k+1] and
    likewise for detail with the high-pass taps."""
    s = np.asarray(signal)
    if s.ndim != 1:
        raise ValueError(f"expected a 1D signal, got shape {s.shape}")
    if s.shape[0] % 2 != 0:
        raise ValueError(f"signal length must be even, got {s.shape[0]}")
    work = s.astype(np.float64)
    h0, h1 = filt.low
    g0, g1 = filt.high
    approx = work[0::2] * h0 + work[1::2] * h1
    detail = work[0::2] * g0 + work[1::2] * g1
    out = _out_dtype(s.dtype)
    return approx.astype(out), detail.astype(out)


def _check_spatial(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got shape {x.shape}")
    if x.shape[1] % 2 != 0 or x.shape[2] % 2 != 0:
        raise ValueError(f"spatial dims must be even, got {x.shape[1]}x{x.shape[2]}")
    return x


def dwt2d_level(x, filt: WaveletFilter = HAAR):
    """One 2D analysis level; accepts (H, W) or (C, H, W); returns
    (ll, lh, hl, hh) with spatial dims halved and channels processed
    independently."""
    arr = np.asarray(x)
    squeeze = arr.ndim == 2
    arr3 = _check_spatial(arr)
    out = _out_dtype(arr.dtype)
    bands = analyze_level_f64(arr3, filt)
    bands = tuple(b.astype(out) for b in bands)
    if squeeze:
        bands = tuple(b[0] for b in bands)
    return bands


def idwt2d_level(ll, lh, hl, hh, filt: WaveletFilter = HAAR):
    """Exact inverse of dwt2d_level for orthonormal taps."""
    arrs = [np.asarray(a) for a in (ll, lh, hl, hh)]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ValueError(f"subband shapes differ: {[a.shape for a in arrs]}")
    squeeze = arrs[0].ndim == 2
    if squeeze:
        arrs = [a[np.newaxis] for a in arrs]
    if arrs[0].ndim != 3:
        raise ValueError(f"expected (h, w) or (C, h, w) subbands, got {arrs[0].shape}")
    out = _out_dtype(np.result_type(*arrs))
    x = synthesize_level_f64(*arrs, filt).astype(out)
    return x[0] if squeeze else x


@dataclass(frozen=True)
class LevelDetail:
    """High-frequency subbands of one level."""

    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __iter__(self):
        return iter((self.lh, self.hl, self.hh))


@dataclass(frozen=True)
class DecompositionSet:
    """Wavelet component set: per level j the details (LH_j, HL_j, HH_j)
    with details[0] the shallowest, plus the approximation LL at the
    deepest level. Component count is 3*depth + 1."""

    depth: int
    details: tuple[LevelDetail, ...]
    ll: np.ndarray

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.details) != self.depth:
            raise ValueError(
                f"expected {self.depth} detail levels, got {len(self.details)}"
            )
        prev = None
        for j, det in enumerate(self.details, start=1):
            for name, band in zip(("LH", "HL", "HH"), det):
                if band.ndim != 3:
                    raise ValueError(f"{name}{j} must be (C, h, w), got {band.shape}")
                if band.shape != det.lh.shape:
                    raise ValueError(f"subband shapes differ at level {j}")
            if prev is not None:
                want = (prev[0], prev[1] // 2, prev[2] // 2)
                if det.lh.shape != want:
                    raise ValueError(
                        f"shape chain broken at level {j}: expected {want}, "
                        f"got {det.lh.shape}"
                    )
            prev = det.lh.shape
        if self.ll.shape != prev:
            raise ValueError(
                f"LL shape {self.ll.shape} does not match deepest detail {prev}"
            )

    @property
    def channels(self) -> int:
        return self.ll.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        c, h, w = self.ll.shape
        return (c, h * 2**self.depth, w * 2**self.depth)

    def component_names(self) -> list[str]:
        names = []
        for j in range(1, self.depth + 1):
            names += [f"LH{j}", f"HL{j}", f"HH{j}"]
        names.append(f"LL{self.depth}")
        return names

    def to_ordered(self) -> list[np.ndarray]:
        """Components in the fixed sequence order: level-major shallow to
        deep, [LH, HL, HH] within a level, LL last."""
        arrays = []
        for det in self.details:
            arrays += [det.lh, det.hl, det.hh]
        arrays.append(self.ll)
        return arrays

    @classmethod
    def from_ordered(cls, depth: int, arrays) -> "DecompositionSet":
        arrays = list(arrays)
        if len(arrays) != 3 * depth + 1:
            raise ValueError(
                f"expected {3 * depth + 1} components for depth {depth}, "
                f"got {len(arrays)}"
            )
        details = tuple(
            LevelDetail(*arrays[3 * j : 3 * j + 3]) for j in range(depth)
        )
        return cls(depth=depth, details=details, ll=arrays[-1])


def dwt_multi(x: Raster, depth: int, filt: WaveletFilter = HAAR) -> DecompositionSet:
    """Multi-level analysis: recursively decompose the approximation,
    keeping each level's details and the deepest LL."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    scale = 2**depth
    if x.height % scale != 0 or x.width % scale != 0:
        raise ValueError(
            f"raster {x.height}x{x.width} not divisible by 2^{depth}"
        )
    out = _out_dtype(x.values.dtype)
    ll = np.ascontiguousarray(x.values, dtype=np.float64)
    details = []
    for _ in range(depth):
        ll, lh, hl, hh = analyze_level_f64(ll, filt)
        details.append(
            LevelDetail(lh.astype(out), hl.astype(out), hh.astype(out))
        )
    return DecompositionSet(depth=depth, details=tuple(details), ll=ll.astype(out))


def idwt_multi(s: DecompositionSet, filt: WaveletFilter = HAAR) -> Raster:
    """Multi-level synthesis: exact inverse of dwt_multi up to the input
    precision."""
    x = np.asarray(s.ll, dtype=np.float64)
    for det in reversed(s.details):
        x = synthesize_level_f64(x, *det, filt)
    return Raster(values=x.astype(_out_dtype(s.ll.dtype)))
