"""Multi-level 2D Haar wavelet analysis/synthesis."""

from .filters import HAAR, WaveletFilter
from .transform import (
    DecompositionSet,
    LevelDetail,
    active_backend,
    analyze_level_f64,
    available_backends,
    dwt1d,
    dwt2d_level,
    dwt_multi,
    idwt2d_level,
    idwt_multi,
    synthesize_level_f64,
    use_backend,
)

__all__ = [
    "HAAR",
    "WaveletFilter",
    "DecompositionSet",
    "LevelDetail",
    "active_backend",
    "analyze_level_f64",
    "available_backends",
    "dwt1d",
    "dwt2d_level",
    "dwt_multi",
    "idwt2d_level",
    "idwt_multi",
    "synthesize_level_f64",
    "use_backend",
]
