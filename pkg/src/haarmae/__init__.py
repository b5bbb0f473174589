"""Masked-autoencoder pretraining on multi-level Haar wavelet subbands of
multispectral rasters, with spherical-harmonics geo-conditioned positional
encoding."""

from .geo import GeoCoord
from .rasters import Raster

__version__ = "0.1.0"

__all__ = ["GeoCoord", "Raster", "__version__"]
