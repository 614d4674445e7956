"""Great-circle distances and the square tile grid used as RL state space."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

EARTH_RADIUS_KM = 6371.0
_KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0
# offsets within this distance of a tile edge snap onto it (1 micron)
_EDGE_SNAP = 1e-9


class OutOfAreaError(ValueError):
    """A point falls outside the service area covered by a grid."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate: ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


class TileId(NamedTuple):
    col: int
    row: int


@dataclass(frozen=True)
class GridSpec:
    """Square grid anchored at the south-west corner of the service area.

    ``n_cols``/``n_rows`` bound the area when given; otherwise the grid is
    unbounded to the north and east.
    """

    origin: GeoPoint
    tile_width_km: float = 1.0
    n_cols: int | None = None
    n_rows: int | None = None

    def __post_init__(self):
        if not self.tile_width_km > 0:
            raise ValueError("tile_width_km must be positive")
        for name in ("n_cols", "n_rows"):
            n = getattr(self, name)
            if n is not None and n < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def width_km(self) -> float | None:
        return None if self.n_cols is None else self.n_cols * self.tile_width_km

    @property
    def height_km(self) -> float | None:
        return None if self.n_rows is None else self.n_rows * self.tile_width_km

    def offset_km(self, p: GeoPoint) -> tuple[float, float]:
        """(east, north) offset of ``p`` from the origin, equirectangular."""
        cos0 = math.cos(math.radians(self.origin.lat))
        east = (p.lon - self.origin.lon) * _KM_PER_DEG * cos0
        north = (p.lat - self.origin.lat) * _KM_PER_DEG
        return east, north

    def point_at(self, east_km: float, north_km: float) -> GeoPoint:
        """Inverse of :meth:`offset_km`."""
        cos0 = math.cos(math.radians(self.origin.lat))
        return GeoPoint(
            self.origin.lat + north_km / _KM_PER_DEG,
            self.origin.lon + east_km / (_KM_PER_DEG * cos0),
        )

    def tile_center(self, tile: TileId) -> GeoPoint:
        w = self.tile_width_km
        return self.point_at((tile.col + 0.5) * w, (tile.row + 0.5) * w)

    def contains(self, p: GeoPoint) -> bool:
        try:
            tile_of(p, self)
        except OutOfAreaError:
            return False
        return True


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    if a == b:
        return 0.0
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _cell(offset_km: float, width: float) -> int:
    x = offset_km / width
    nearest = round(x)
    if abs(x - nearest) * width < _EDGE_SNAP:
        x = nearest
    return math.floor(x)


def tile_of(p: GeoPoint, g: GridSpec) -> TileId:
    """Tile containing ``p``; tiles are half-open so an edge belongs to the
    tile it starts."""
    east, north = g.offset_km(p)
    col = _cell(east, g.tile_width_km)
    row = _cell(north, g.tile_width_km)
    if col < 0 or row < 0:
        raise OutOfAreaError(f"{p} lies south or west of grid origin {g.origin}")
    if (g.n_cols is not None and col >= g.n_cols) or (g.n_rows is not None and row >= g.n_rows):
        raise OutOfAreaError(f"{p} lies outside the {g.n_cols}x{g.n_rows} grid")
    return TileId(col, row)


def deadhead_km(driver_loc: GeoPoint, pickup: GeoPoint, circuity: float = 1.0) -> float:
    if circuity < 1.0:
        raise ValueError(f"circuity must be >= 1.0, got {circuity}")
    return haversine_km(driver_loc, pickup) * circuity
