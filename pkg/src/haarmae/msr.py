"""Bit-exact binary raster format.

Layout: magic "MSR1", u32 little-endian C, H, W, then C*H*W float32
little-endian values, channel-major then row-major. Geolocation and
category ride in an optional JSON sidecar `<name>.geo.json` next to the
raster: {"lat": deg, "lon": deg, "category": str?}. A missing sidecar
loads the raster with geo absent, which disables the geo encoding path.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geo import GeoCoord
from .rasters import Raster

MAGIC = b"MSR1"


class MsrError(ValueError):
    """Base class for raster-format failures."""


class MsrMagicError(MsrError):
    pass


class MsrTruncatedError(MsrError):
    pass


class MsrRangeError(MsrError):
    pass


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".geo.json")


def write_msr(raster: Raster, path) -> Path:
    """Write the raster (cast to float32) and, when geo metadata is
    present, its sidecar. Output bytes are a pure function of the data."""
    p = Path(path)
    c, h, w = raster.values.shape
    payload = np.ascontiguousarray(raster.values, dtype="<f4").tobytes()
    p.write_bytes(MAGIC + struct.pack("<III", c, h, w) + payload)
    if raster.geo is not None or raster.category is not None:
        doc = {}
        if raster.geo is not None:
            doc["lat"] = raster.geo.lat
            doc["lon"] = raster.geo.lon
        if raster.category is not None:
            doc["category"] = raster.category
        sidecar_path(p).write_text(json.dumps(doc, sort_keys=True))
    return p


def read_msr(path) -> Raster:
    """Read a raster; geo/category attach from the sidecar when present."""
    p = Path(path)
    blob = p.read_bytes()
    if len(blob) < 16:
        raise MsrTruncatedError(
            f"file too short for a header: {len(blob)} bytes, need 16"
        )
    if blob[:4] != MAGIC:
        raise MsrMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    c, h, w = struct.unpack_from("<III", blob, 4)
    if min(c, h, w) == 0:
        raise MsrRangeError(f"degenerate raster dims C={c} H={h} W={w}")
    expected = 16 + 4 * c * h * w
    if len(blob) != expected:
        raise MsrTruncatedError(
            f"truncated payload: expected {expected} bytes, have {len(blob)}"
        )
    values = (
        np.frombuffer(blob, dtype="<f4", count=c * h * w, offset=16)
        .reshape(c, h, w)
        .copy()
    )
    if not np.all(np.isfinite(values)):
        raise MsrRangeError("raster payload contains non-finite values")
    geo = None
    category = None
    sc = sidecar_path(p)
    if sc.exists():
        doc = json.loads(sc.read_text())
        category = doc.get("category")
        if "lat" in doc or "lon" in doc:
            if not ("lat" in doc and "lon" in doc):
                raise MsrRangeError(f"sidecar {sc} must carry both lat and lon")
            try:
                geo = GeoCoord(float(doc["lat"]), float(doc["lon"]))
            except ValueError as e:
                raise MsrRangeError(f"sidecar {sc}: {e}") from e
    return Raster(values, geo=geo, category=category)
