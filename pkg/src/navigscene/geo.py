"""Spherical east/north offsets between geographic coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonFinite, PoleProximity, ValidationError

EARTH_RADIUS_M = 6_378_137.0
# cos(lat) below this makes the longitude update blow up
POLE_EPS = 1e-9


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    wrapped = (lon + 180.0) % 360.0 - 180.0
    # float modulo can land exactly on the excluded upper bound
    if wrapped >= 180.0:
        wrapped -= 360.0
    return wrapped


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFinite(f"non-finite value: {v!r}")


@dataclass(frozen=True)
class GeoCoordinate:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        _require_finite(self.lat, self.lon)
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", normalize_lon(float(self.lon)))


@dataclass(frozen=True)
class TranslationVector:
    """Offset in meters: ``dx`` east, ``dy`` north, ``dz`` up."""

    dx: float
    dy: float
    dz: float = 0.0

    def __post_init__(self) -> None:
        _require_finite(self.dx, self.dy, self.dz)

    def __neg__(self) -> TranslationVector:
        return TranslationVector(-self.dx, -self.dy, -self.dz)

    def scaled(self, k: float) -> TranslationVector:
        return TranslationVector(self.dx * k, self.dy * k, self.dz * k)

    @property
    def horizontal_norm(self) -> float:
        return math.hypot(self.dx, self.dy)


@dataclass(frozen=True)
class EarthModel:
    radius_m: float = EARTH_RADIUS_M

    def __post_init__(self) -> None:
        _require_finite(self.radius_m)
        if self.radius_m <= 0:
            raise ValidationError(f"earth radius must be positive, got {self.radius_m}")


DEFAULT_EARTH = EarthModel()


def _cos_lat(lat: float) -> float:
    c = math.cos(math.radians(lat))
    if c < POLE_EPS:
        raise PoleProximity(f"latitude {lat} too close to a pole (cos={c:.3g})")
    return c


def offset_coordinate(
    origin: GeoCoordinate,
    t: TranslationVector,
    earth: EarthModel = DEFAULT_EARTH,
) -> GeoCoordinate:
    """Move ``origin`` by ``t`` on a sphere of radius ``earth.radius_m``.

    The vertical component is ignored. Crossing a pole reflects the latitude
    and flips the longitude by 180 degrees; longitude is wrapped into
    [-180, 180).
    """
    _require_finite(t.dx, t.dy, t.dz)
    cos_phi = _cos_lat(origin.lat)
    deg_per_rad = 180.0 / math.pi
    lat = origin.lat + deg_per_rad * t.dy / earth.radius_m
    lon = origin.lon + deg_per_rad * t.dx / (earth.radius_m * cos_phi)
    if lat > 90.0:
        lat, lon = 180.0 - lat, lon + 180.0
    elif lat < -90.0:
        lat, lon = -180.0 - lat, lon + 180.0
    return GeoCoordinate(lat, normalize_lon(lon))


def translation_between(
    a: GeoCoordinate,
    b: GeoCoordinate,
    earth: EarthModel = DEFAULT_EARTH,
) -> TranslationVector:
    """East/north meters that carry ``a`` onto ``b`` under :func:`offset_coordinate`.

    Exact inverse of the offset for a fixed starting latitude. The longitude
    difference takes the short way around the antimeridian.
    """
    cos_phi = _cos_lat(a.lat)
    rad_per_deg = math.pi / 180.0
    dlon = normalize_lon(b.lon - a.lon)
    dy = (b.lat - a.lat) * rad_per_deg * earth.radius_m
    dx = dlon * rad_per_deg * earth.radius_m * cos_phi
    return TranslationVector(dx, dy, 0.0)


def bearing_deg(t: TranslationVector) -> float:
    """Compass heading of a horizontal translation: 0 = north, 90 = east."""
    return math.degrees(math.atan2(t.dx, t.dy)) % 360.0
