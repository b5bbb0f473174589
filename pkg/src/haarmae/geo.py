"""Geospatial primitives: real spherical harmonics, geo-conditioned
positional-encoding projection, great-circle distance, rank correlation.

The real spherical-harmonics basis is fully normalized (orthonormal over the
sphere). Sign convention: the (-1)^m factor is applied to the sqrt(2) terms
for m != 0, so Y(1,1) = -sqrt(3/4pi) sin(theta) cos(phi); magnitudes match
the textbook real basis everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * math.pi
EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoCoord:
    """Geographic coordinate in degrees: lat in [-90, 90], lon in [-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class SphericalAngles:
    """Polar angle theta in [0, pi] and azimuth phi in [0, 2*pi], radians."""

    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi + 1e-12:
            raise ValueError(f"theta {self.theta} outside [0, pi]")
        if not 0.0 <= self.phi <= 2.0 * math.pi + 1e-12:
            raise ValueError(f"phi {self.phi} outside [0, 2*pi]")


def to_spherical(c: GeoCoord) -> SphericalAngles:
    """Map (lat, lon) degrees to (theta, phi) = (deg2rad(lat+90), deg2rad(lon+180))."""
    return SphericalAngles(
        theta=math.radians(c.lat + 90.0),
        phi=math.radians(c.lon + 180.0),
    )


def _legendre_norm_table(lmax: int, x: np.ndarray) -> np.ndarray:
    """Fully normalized associated Legendre values P̄_l^m(x) for all
    0 <= m <= l <= lmax.

    Returns an array of shape (lmax+1, lmax+1) + x.shape with entry [l, m]
    holding P̄_l^m(x); entries with m > l are zero. Normalization is chosen
    so that the real spherical harmonics built from these values are
    orthonormal on the sphere: P̄_0^0 = 1/sqrt(4*pi).

    Uses the standard stable upward recurrence in l seeded from the
    closed-form diagonal; the normalized form avoids the factorial overflow
    a naive (l+m)! evaluation hits near l = 26.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    tab = np.zeros((lmax + 1, lmax + 1) + x.shape, dtype=np.float64)
    pmm = np.full(x.shape, 1.0 / math.sqrt(FOUR_PI))
    for m in range(lmax + 1):
        if m > 0:
            pmm = pmm * s * math.sqrt((2.0 * m + 1.0) / (2.0 * m))
        tab[m, m] = pmm
        if m + 1 <= lmax:
            tab[m + 1, m] = math.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            tab[l, m] = a * (x * tab[l - 1, m] - b * tab[l - 2, m])
    return tab


def assoc_legendre_norm(l: int, m: int, x: float) -> float:
    """Fully normalized associated Legendre polynomial P̄_l^m(x).

    Requires 0 <= m <= l and |x| <= 1.
    """
    if not 0 <= m <= l:
        raise ValueError(f"order m={m} outside [0, l={l}]")
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"argument x={x} outside [-1, 1]")
    return float(_legendre_norm_table(l, np.float64(x))[l, m])


def real_sh(l: int, m: int, theta: float, phi: float) -> float:
    """Real spherical harmonic Y_l^m(theta, phi), orthonormal on the sphere.

    Three-case form: sqrt(2) * (-1)^m * P̄ * sin(|m| phi) for m < 0, P̄ for
    m = 0, sqrt(2) * (-1)^m * P̄ * cos(m phi) for m > 0.
    """
    if abs(m) > l:
        raise ValueError(f"|m|={abs(m)} exceeds degree l={l}")
    p = assoc_legendre_norm(l, abs(m), math.cos(theta))
    if m == 0:
        return p
    factor = math.sqrt(2.0) * (-1.0) ** (abs(m) % 2)
    if m < 0:
        return factor * p * math.sin(abs(m) * phi)
    return factor * p * math.cos(m * phi)


@dataclass
class ShVector:
    """Concatenated real-SH evaluation of one coordinate, ordered
    (0,0), (1,-1), (1,0), (1,1), ..., (L-1, L-1); length L^2."""

    coeffs: np.ndarray
    degree: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.degree**2,):
            raise ValueError(
                f"expected {self.degree**2} coefficients, got {self.coeffs.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite spherical-harmonics coefficients")


def sh_basis(thetas: np.ndarray, phis: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the length-L^2 real-SH vector for a batch of angles.

    Returns an (n, L^2) array, rows ordered like `ShVector.coeffs`.
    """
    if degree < 1:
        raise ValueError("degree cutoff must be >= 1")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    phis = np.atleast_1d(np.asarray(phis, dtype=np.float64))
    if thetas.shape != phis.shape:
        raise ValueError("theta/phi batch shapes differ")
    lmax = degree - 1
    tab = _legendre_norm_table(lmax, np.cos(thetas))  # (L, L, n)
    n = thetas.shape[0]
    out = np.empty((n, degree**2), dtype=np.float64)
    sqrt2 = math.sqrt(2.0)
    idx = 0
    for l in range(degree):
        for m in range(-l, l + 1):
            am = abs(m)
            p = tab[l, am]
            if m == 0:
                out[:, idx] = p
            elif m < 0:
                out[:, idx] = sqrt2 * (-1.0) ** (am % 2) * p * np.sin(am * phis)
            else:
                out[:, idx] = sqrt2 * (-1.0) ** (m % 2) * p * np.cos(m * phis)
            idx += 1
    return out


def sh_vector(a: SphericalAngles, degree: int) -> ShVector:
    """Length-L^2 real-SH evaluation of a single angle pair."""
    coeffs = sh_basis(np.array([a.theta]), np.array([a.phi]), degree)[0]
    return ShVector(coeffs=coeffs, degree=degree)


@dataclass
class GpeProjection:
    """Learnable affine map from the L^2 harmonics vector to embedding dim D."""

    weights: np.ndarray  # (L^2, D)
    bias: np.ndarray  # (D,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 2:
            raise ValueError("projection weights must be a 2D matrix")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weights "
                f"{self.weights.shape}"
            )

    @property
    def degree(self) -> int:
        root = math.isqrt(self.weights.shape[0])
        if root * root != self.weights.shape[0]:
            raise ValueError("weight rows are not a perfect square L^2")
        return root


def gpe(v: ShVector, p: GpeProjection) -> np.ndarray:
    """Geo-conditioned positional encoding: weights^T v + bias, length D."""
    if v.coeffs.shape[0] != p.weights.shape[0]:
        raise ValueError(
            f"harmonics length {v.coeffs.shape[0]} does not match projection "
            f"rows {p.weights.shape[0]}"
        )
    return p.weights.T @ v.coeffs + p.bias


def gpe_for_coord(c: GeoCoord, p: GpeProjection) -> np.ndarray:
    """Convenience composition: coordinate -> angles -> harmonics -> encoding."""
    return gpe(sh_vector(to_spherical(c), p.degree), p)


def haversine(p1: GeoCoord, p2: GeoCoord) -> float:
    """Great-circle distance in kilometers on the R = 6371 km sphere.

    Canonical haversine (2R asin sqrt(...)); asin argument clamped to absorb
    rounding at near-identical points.
    """
    return float(
        haversine_km(
            np.float64(p1.lat), np.float64(p1.lon),
            np.float64(p2.lat), np.float64(p2.lon),
        )
    )


def haversine_km(lat1, lon1, lat2, lon2):
    """Vectorized haversine over degree arrays; returns kilometers."""
    lat1 = np.deg2rad(np.asarray(lat1, dtype=np.float64))
    lat2 = np.deg2rad(np.asarray(lat2, dtype=np.float64))
    dlat = lat2 - lat1
    dlon = np.deg2rad(np.asarray(lon2, dtype=np.float64)) - np.deg2rad(
        np.asarray(lon1, dtype=np.float64)
    )
    a = (
        np.sin(dlat / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    )
    a = np.clip(a, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average rank."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    order = np.argsort(v, kind="stable")
    sv = v[order]
    new_run = np.r_[True, sv[1:] != sv[:-1]]
    run_id = np.cumsum(new_run) - 1
    pos = np.arange(1, n + 1, dtype=np.float64)
    avg = np.bincount(run_id, weights=pos) / np.bincount(run_id)
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg[run_id]
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation: Pearson correlation of average-ranked data.

    Raises ValueError for n < 2 or when either side has zero rank variance
    (the coefficient is undefined there).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be equal-length 1D vectors")
    n = xs.size
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(np.dot(dx, dx))
    vy = float(np.dot(dy, dy))
    if vx == 0.0 or vy == 0.0:
        raise ValueError("rank correlation undefined: zero rank variance")
    return float(np.dot(dx, dy) / math.sqrt(vx * vy))
