"""Multispectral raster container shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geo import GeoCoord


@dataclass
class Raster:
    """A C x H x W multispectral image with optional geolocation metadata.

    Values are float32 on disk; in memory either float32 or float64 is
    accepted. All values must be finite.
    """

    values: np.ndarray
    geo: Optional[GeoCoord] = None
    category: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError(f"raster values must be (C, H, W), got shape {v.shape}")
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("raster contains non-finite values")
        self.values = v

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def astype(self, dtype) -> "Raster":
        return Raster(self.values.astype(dtype), geo=self.geo, category=self.category)
