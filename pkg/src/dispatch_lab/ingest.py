"""Trip-log loading, fleet synthesis and electrified fleet variants."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigError, InvalidTargetError, SchemaError
from .geo import GeoPoint, GridSpec, TileId, haversine_km

LEV_THRESHOLD = 135.0  # g/km, strictly below is LEV
HEV_THRESHOLD = 270.0  # g/km, strictly above is HEV
EV_EMISSION_G_PER_KM = 63.35

DEFAULT_ORIGIN = GeoPoint(30.20, -97.85)  # south-west of central Austin

DEFAULT_COLUMNS = {
    "start_ts": "start_ts",
    "start_lat": "start_lat",
    "start_lon": "start_lon",
    "end_lat": "end_lat",
    "end_lon": "end_lon",
    "trip_km": "trip_km",
    "driver_id": "driver_id",
}

# public RideAustin export; distance_travelled is in metres
RIDEAUSTIN_COLUMNS = {
    "start_ts": "started_on",
    "start_lat": "start_location_lat",
    "start_lon": "start_location_long",
    "end_lat": "end_location_lat",
    "end_lon": "end_location_long",
    "trip_km": "distance_travelled",
    "driver_id": "active_driver_id",
}


def vehicle_class(emission_g_per_km: float) -> str:
    if emission_g_per_km < LEV_THRESHOLD:
        return "LEV"
    if emission_g_per_km > HEV_THRESHOLD:
        return "HEV"
    return "MID"


@dataclass(frozen=True)
class RideRequest:
    id: str
    pickup: GeoPoint
    dropoff: GeoPoint
    request_time: float
    trip_km: float
    driver_hint: str | None = None  # driver that served it in the source log

    def __post_init__(self):
        if self.trip_km < 0:
            raise ValueError(f"request {self.id}: negative trip_km")
        if self.request_time < 0:
            raise ValueError(f"request {self.id}: negative request_time")


@dataclass(frozen=True)
class DriverSpec:
    id: str
    initial_location: GeoPoint
    emission_g_per_km: float

    def __post_init__(self):
        if not self.emission_g_per_km >= 0:
            raise ValueError(f"driver {self.id}: emission rate must be non-negative")

    @property
    def vehicle_class(self) -> str:
        return vehicle_class(self.emission_g_per_km)


@dataclass(frozen=True)
class BoundingBox:
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self):
        if not (self.south <= self.north and self.west <= self.east):
            raise ValueError("degenerate bounding box")

    @classmethod
    def of_grid(cls, grid: GridSpec) -> "BoundingBox":
        if grid.width_km is None or grid.height_km is None:
            raise ConfigError("grid has no extent")
        # shrink by a hair so the far edges stay inside the half-open grid
        ne = grid.point_at(grid.width_km * (1 - 1e-9), grid.height_km * (1 - 1e-9))
        return cls(grid.origin.lat, grid.origin.lon, ne.lat, ne.lon)

    @classmethod
    def of_points(cls, points: Sequence[GeoPoint]) -> "BoundingBox":
        lats = [p.lat for p in points]
        lons = [p.lon for p in points]
        return cls(min(lats), min(lons), max(lats), max(lons))


@dataclass(frozen=True)
class FleetProfile:
    """Named vehicle classes, each a (g/km, weight) pair."""

    classes: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        if not self.classes:
            raise ConfigError("fleet profile has no classes")
        for name, (rate, weight) in self.classes.items():
            if rate < 0 or weight < 0:
                raise ConfigError(f"profile class {name!r}: negative rate or weight")
        if sum(w for _, w in self.classes.values()) <= 0:
            raise ConfigError("fleet profile weights sum to zero")

    @classmethod
    def coerce(cls, profile) -> "FleetProfile":
        """Accept a FleetProfile, a {name: (rate, weight)} table or a plain
        {rate: weight} distribution."""
        if isinstance(profile, FleetProfile):
            return profile
        if not profile:
            raise ConfigError("fleet profile is empty")
        items = dict(profile)
        first = next(iter(items.values()))
        if isinstance(first, (int, float)):
            return cls({f"{float(rate):g}": (float(rate), float(w)) for rate, w in items.items()})
        return cls({str(k): (float(v[0]), float(v[1])) for k, v in items.items()})

    def rates_and_probs(self) -> tuple[np.ndarray, np.ndarray]:
        names = list(self.classes)
        rates = np.array([self.classes[n][0] for n in names], dtype=float)
        w = np.array([self.classes[n][1] for n in names], dtype=float)
        return rates, w / w.sum()

    def to_dict(self) -> dict:
        return {k: [v[0], v[1]] for k, v in self.classes.items()}


# No EVs by default; electrify() introduces them.
DEFAULT_PROFILE = FleetProfile({
    "EV": (EV_EMISSION_G_PER_KM, 0.0),
    "LEV": (120.0, 0.10),
    "MID": (200.0, 0.55),
    "HEV": (310.0, 0.35),
})


@dataclass(frozen=True)
class Scenario:
    requests: tuple[RideRequest, ...]
    fleet: tuple[DriverSpec, ...]
    grid: GridSpec
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        object.__setattr__(self, "fleet", tuple(self.fleet))
        if not self.fleet:
            raise ConfigError("scenario fleet is empty")
        times = [r.request_time for r in self.requests]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("scenario requests are not sorted by request_time")
        ids = [r.id for r in self.requests]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate request ids")
        driver_ids = [d.id for d in self.fleet]
        if len(set(driver_ids)) != len(driver_ids):
            raise ConfigError("duplicate driver ids")

    def with_fleet(self, fleet: Sequence[DriverSpec]) -> "Scenario":
        return replace(self, fleet=tuple(fleet))

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "seed": self.seed,
            "grid": {
                "origin": [g.origin.lat, g.origin.lon],
                "tile_width_km": g.tile_width_km,
                "n_cols": g.n_cols,
                "n_rows": g.n_rows,
            },
            "fleet": [
                {"id": d.id, "loc": [d.initial_location.lat, d.initial_location.lon],
                 "emission_g_per_km": d.emission_g_per_km}
                for d in self.fleet
            ],
            "requests": [
                {"id": r.id, "pickup": [r.pickup.lat, r.pickup.lon],
                 "dropoff": [r.dropoff.lat, r.dropoff.lon],
                 "request_time": r.request_time, "trip_km": r.trip_km,
                 "driver_hint": r.driver_hint}
                for r in self.requests
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        g = d["grid"]
        grid = GridSpec(GeoPoint(*g["origin"]), g["tile_width_km"], g["n_cols"], g["n_rows"])
        fleet = [DriverSpec(x["id"], GeoPoint(*x["loc"]), x["emission_g_per_km"]) for x in d["fleet"]]
        reqs = [
            RideRequest(x["id"], GeoPoint(*x["pickup"]), GeoPoint(*x["dropoff"]),
                        x["request_time"], x["trip_km"], x.get("driver_hint"))
            for x in d["requests"]
        ]
        return cls(tuple(reqs), tuple(fleet), grid, d.get("seed", 0))

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


# -- trip logs ---------------------------------------------------------------

def _parse_times(col: pd.Series) -> pd.Series:
    """Epoch seconds or ISO-8601, per cell; unparseable cells become NaN."""
    out = pd.to_numeric(col, errors="coerce").astype(float)
    rest = out.isna() & col.notna()
    if rest.any():
        ts = pd.to_datetime(col[rest], errors="coerce", utc=True, format="mixed")
        ok = ts.notna()
        out[ts.index[ok]] = (ts[ok] - pd.Timestamp(0, tz="UTC")).dt.total_seconds()
    return out


def load_trips(
    path: str | Path,
    distance_source: str = "recorded",
    columns: Mapping[str, str] | None = None,
    distance_scale: float = 1.0,
) -> tuple[list[RideRequest], int]:
    """Read a comma-separated trip log.

    Returns the requests, time-sorted and rebased so the first is at t=0,
    together with the number of rows dropped for missing or invalid
    coordinates, unparseable timestamps or non-positive trip distance.
    ``distance_scale`` converts the recorded distance column to km.
    """
    if distance_source not in ("recorded", "geometric"):
        raise ConfigError(f"unknown distance_source {distance_source!r}")
    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)
    df = pd.read_csv(path, dtype=str, keep_default_na=True)

    required = ["start_ts", "start_lat", "start_lon", "end_lat", "end_lon"]
    if distance_source == "recorded":
        required.append("trip_km")
    for key in required:
        if cols[key] not in df.columns:
            raise SchemaError(cols[key], path)
    if df.empty:
        return [], 0

    t = _parse_times(df[cols["start_ts"]])
    coords = {k: pd.to_numeric(df[cols[k]], errors="coerce") for k in required[1:5]}
    ok = t.notna()
    for k, v in coords.items():
        lim = 90.0 if k.endswith("lat") else 180.0
        ok &= v.notna() & np.isfinite(v) & (v.abs() <= lim)

    if distance_source == "recorded":
        trip = pd.to_numeric(df[cols["trip_km"]], errors="coerce") * distance_scale
    else:
        trip = pd.Series(np.nan, index=df.index)
        for i in df.index[ok]:
            trip[i] = haversine_km(
                GeoPoint(coords["start_lat"][i], coords["start_lon"][i]),
                GeoPoint(coords["end_lat"][i], coords["end_lon"][i]),
            )
    ok &= trip.notna() & (trip > 0)

    has_driver = cols["driver_id"] in df.columns
    kept = df.index[ok]
    n_dropped = int(len(df) - len(kept))
    order = sorted(kept, key=lambda i: (t[i], i))
    if not order:
        return [], n_dropped
    t0 = t[order[0]]
    width = max(6, len(str(len(order))))
    out = []
    for n, i in enumerate(order):
        hint = df.at[i, cols["driver_id"]] if has_driver else None
        out.append(RideRequest(
            id=f"r{n:0{width}d}",
            pickup=GeoPoint(float(coords["start_lat"][i]), float(coords["start_lon"][i])),
            dropoff=GeoPoint(float(coords["end_lat"][i]), float(coords["end_lon"][i])),
            request_time=float(t[i] - t0),
            trip_km=float(trip[i]),
            driver_hint=None if hint is None or pd.isna(hint) else str(hint),
        ))
    return out, n_dropped


def grid_covering(points: Sequence[GeoPoint], tile_width_km: float = 1.0) -> GridSpec:
    """Smallest grid whose origin is south-west of every point."""
    box = BoundingBox.of_points(points)
    origin = GeoPoint(box.south, box.west)
    probe = GridSpec(origin, tile_width_km)
    east, north = probe.offset_km(GeoPoint(box.north, box.east))
    return GridSpec(origin, tile_width_km,
                    n_cols=int(east // tile_width_km) + 1, n_rows=int(north // tile_width_km) + 1)


# -- fleets ------------------------------------------------------------------

def _driver_ids(n: int) -> list[str]:
    width = max(3, len(str(n - 1)))
    return [f"d{i:0{width}d}" for i in range(n)]


def _uniform_points(rng: np.random.Generator, n: int, box: BoundingBox) -> list[GeoPoint]:
    lats = rng.uniform(box.south, box.north, n)
    lons = rng.uniform(box.west, box.east, n)
    return [GeoPoint(float(a), float(b)) for a, b in zip(lats, lons)]


def build_fleet(n_drivers: int, profile=DEFAULT_PROFILE, spawn_region: BoundingBox | None = None,
                seed: int = 0) -> list[DriverSpec]:
    if n_drivers < 1:
        raise ConfigError("n_drivers must be >= 1")
    if spawn_region is None:
        raise ConfigError("spawn_region is required")
    profile = FleetProfile.coerce(profile)
    rng = np.random.default_rng(seed)
    rates, probs = profile.rates_and_probs()
    drawn = rng.choice(len(rates), size=n_drivers, p=probs)
    locs = _uniform_points(rng, n_drivers, spawn_region)
    return [DriverSpec(i, loc, float(rates[k])) for i, loc, k in zip(_driver_ids(n_drivers), locs, drawn)]


def fleet_from_trips(requests: Sequence[RideRequest], profile=DEFAULT_PROFILE, seed: int = 0,
                     n_drivers: int | None = None) -> list[DriverSpec]:
    """Fleet for a dataset run.

    Drivers named in the log start at the pickup of their first trip; when
    the log carries no driver identity, ``n_drivers`` drivers are spread
    uniformly over the request bounding box.
    """
    profile = FleetProfile.coerce(profile)
    rng = np.random.default_rng(seed)
    rates, probs = profile.rates_and_probs()
    first: dict[str, GeoPoint] = {}
    for r in requests:
        if r.driver_hint is not None and r.driver_hint not in first:
            first[r.driver_hint] = r.pickup
    if first:
        names = sorted(first)
        drawn = rng.choice(len(rates), size=len(names), p=probs)
        return [DriverSpec(f"d_{name}", first[name], float(rates[k])) for name, k in zip(names, drawn)]
    if not n_drivers:
        raise ConfigError("trip log has no driver ids; n_drivers is required")
    box = BoundingBox.of_points([r.pickup for r in requests] + [r.dropoff for r in requests])
    return build_fleet(n_drivers, profile, box, seed)


def lev_share(fleet: Sequence[DriverSpec]) -> float:
    return sum(d.vehicle_class == "LEV" for d in fleet) / len(fleet) if fleet else 0.0


def electrify(fleet: Sequence[DriverSpec], target_lev_pct: float, seed: int = 0) -> list[DriverSpec]:
    """Convert randomly chosen non-LEVs to EVs until the LEV share reaches
    ``target_lev_pct`` (rounded to the nearest whole driver)."""
    fleet = list(fleet)
    n = len(fleet)
    if not 0 <= target_lev_pct <= 100:
        raise InvalidTargetError(f"target_lev_pct must lie in [0, 100], got {target_lev_pct}")
    current = sum(d.vehicle_class == "LEV" for d in fleet)
    if target_lev_pct / 100.0 < current / n - 1e-12:
        raise InvalidTargetError(
            f"target {target_lev_pct}% is below current LEV share {100.0 * current / n:.2f}%")
    need = max(0, math.floor(target_lev_pct * n / 100.0 + 0.5) - current)
    if need == 0:
        return fleet
    candidates = [i for i, d in enumerate(fleet) if d.vehicle_class != "LEV"]
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(candidates), size=need, replace=False).tolist())
    out = list(fleet)
    for k in chosen:
        i = candidates[k]
        out[i] = replace(out[i], emission_g_per_km=EV_EMISSION_G_PER_KM)
    return out


# -- synthetic scenarios -----------------------------------------------------

@dataclass(frozen=True)
class Hotspot:
    tile: TileId
    weight: float
    sigma_tiles: float = 1.0


@dataclass(frozen=True)
class HotspotConfig:
    """Spatial mixture for pickups and dropoffs: Gaussian blobs around tile
    centres plus a uniform background over the grid."""

    hotspots: tuple[Hotspot, ...] = ()
    background_weight: float = 0.0
    min_trip_km: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "hotspots", tuple(self.hotspots))
        total = sum(h.weight for h in self.hotspots) + self.background_weight
        if total <= 0 or any(h.weight < 0 for h in self.hotspots) or self.background_weight < 0:
            raise ConfigError("hotspot weights must be non-negative with a positive total")

    @classmethod
    def from_dict(cls, d: dict) -> "HotspotConfig":
        spots = tuple(Hotspot(TileId(*h["tile"]), h["weight"], h.get("sigma_tiles", 1.0))
                      for h in d.get("hotspots", ()))
        return cls(spots, d.get("background_weight", 0.0), d.get("min_trip_km", 0.3))

    def to_dict(self) -> dict:
        return {
            "hotspots": [{"tile": list(h.tile), "weight": h.weight, "sigma_tiles": h.sigma_tiles}
                         for h in self.hotspots],
            "background_weight": self.background_weight,
            "min_trip_km": self.min_trip_km,
        }


def city_layout(n_tiles: int = 10, origin: GeoPoint = DEFAULT_ORIGIN) -> tuple[GridSpec, HotspotConfig]:
    """Square ``n_tiles`` x ``n_tiles`` km city with a central hotspot, two
    satellite hotspots on the diagonals and a uniform background."""
    if n_tiles < 1:
        raise ConfigError("n_tiles must be >= 1")
    n, c = n_tiles, n_tiles // 2
    spots = (
        Hotspot(TileId(c, c), 0.35, 1.0),  # downtown
        Hotspot(TileId(max(0, c - 3), min(n - 1, c + 2)), 0.15, 1.0),
        Hotspot(TileId(min(n - 1, c + 2), max(0, c - 3)), 0.15, 1.2),
    )
    return GridSpec(origin, 1.0, n_cols=n, n_rows=n), HotspotConfig(spots, background_weight=0.35)


DEFAULT_GRID, DEFAULT_HOTSPOTS = city_layout(10)


def _draw_offsets(rng: np.random.Generator, n: int, cfg: HotspotConfig, grid: GridSpec) -> np.ndarray:
    """(n, 2) array of (east, north) km offsets inside the grid."""
    w = grid.tile_width_km
    W, H = grid.width_km, grid.height_km
    weights = np.array([h.weight for h in cfg.hotspots] + [cfg.background_weight], dtype=float)
    probs = weights / weights.sum()
    out = np.empty((n, 2))
    todo = np.arange(n)
    while todo.size:
        comp = rng.choice(len(probs), size=todo.size, p=probs)
        pts = np.empty((todo.size, 2))
        bg = comp == len(cfg.hotspots)
        pts[bg] = rng.uniform((0.0, 0.0), (W, H), size=(int(bg.sum()), 2))
        for k, h in enumerate(cfg.hotspots):
            m = comp == k
            centre = ((h.tile.col + 0.5) * w, (h.tile.row + 0.5) * w)
            pts[m] = rng.normal(centre, h.sigma_tiles * w, size=(int(m.sum()), 2))
        inside = (pts[:, 0] >= 0) & (pts[:, 0] < W) & (pts[:, 1] >= 0) & (pts[:, 1] < H)
        out[todo[inside]] = pts[inside]
        todo = todo[~inside]
    return out


def synth_scenario(
    n_requests: int,
    n_drivers: int,
    duration_s: float,
    hotspot_config: HotspotConfig | None = None,
    seed: int = 0,
    grid: GridSpec = DEFAULT_GRID,
    profile=DEFAULT_PROFILE,
) -> Scenario:
    """Synthetic scenario: request times are a homogeneous Poisson process
    conditioned on ``n_requests`` arrivals in ``[0, duration_s)``; pickups
    and dropoffs are drawn independently from the hotspot mixture."""
    if n_requests < 0 or n_drivers < 1 or duration_s <= 0:
        raise ConfigError("n_requests >= 0, n_drivers >= 1 and duration_s > 0 required")
    if grid.n_cols is None or grid.n_rows is None:
        raise ConfigError("synthetic scenarios need a bounded grid")
    cfg = hotspot_config or DEFAULT_HOTSPOTS
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.0, duration_s, n_requests))
    pick = _draw_offsets(rng, n_requests, cfg, grid)
    drop = _draw_offsets(rng, n_requests, cfg, grid)

    requests = []
    width = max(5, len(str(n_requests)))
    for i in range(n_requests):
        p = grid.point_at(*pick[i])
        q = grid.point_at(*drop[i])
        d = haversine_km(p, q)
        while d < cfg.min_trip_km:
            q = grid.point_at(*_draw_offsets(rng, 1, cfg, grid)[0])
            d = haversine_km(p, q)
        requests.append(RideRequest(f"r{i:0{width}d}", p, q, float(times[i]), d))

    fleet = build_fleet(n_drivers, profile, BoundingBox.of_grid(grid),
                        seed=int(np.random.SeedSequence(seed).generate_state(1)[0]))
    return Scenario(tuple(requests), tuple(fleet), grid, seed)
