import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispatch_lab.geo import (GeoPoint, GridSpec, OutOfAreaError, TileId, deadhead_km,
                              haversine_km, tile_of)

from .conftest import ORIGIN

lat = st.floats(-89.0, 89.0)
lon = st.floats(-179.0, 179.0)
points = st.builds(GeoPoint, lat, lon)


def test_haversine_coincident():
    p = GeoPoint(30.3, -97.7)
    assert haversine_km(p, p) == 0.0


def test_haversine_one_degree_equator():
    # R * pi / 180 with R = 6371 km
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(111.19, abs=0.01)
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(6371.0 * math.pi / 180, rel=1e-12)


def test_haversine_symmetric_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert haversine_km(a, b) == haversine_km(b, a)


@settings(max_examples=200)
@given(points, points, points)
def test_haversine_triangle_inequality(a, b, c):
    ab, bc, ac = haversine_km(a, b), haversine_km(b, c), haversine_km(a, c)
    assert ac <= (ab + bc) * (1 + 1e-9) + 1e-9


@given(points, points)
def test_haversine_nonnegative_and_zero_iff_equal(a, b):
    d = haversine_km(a, b)
    assert d >= 0
    if a == b:
        assert d == 0


@pytest.mark.parametrize("lat,lon", [(91, 0), (0, 181), (float("nan"), 0), (0, float("inf"))])
def test_geopoint_validation(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_tile_of_origin(grid):
    assert tile_of(grid.origin, grid) == TileId(0, 0)


def test_tile_of_offset(grid):
    p = grid.point_at(1.5, 0.2)
    assert tile_of(p, grid) == TileId(1, 0)


def test_tile_of_boundary_floor(grid):
    # an edge belongs to the tile it starts (half-open tiles)
    assert tile_of(grid.point_at(1.0, 0.5), grid) == TileId(1, 0)
    assert tile_of(grid.point_at(3.0, 2.0), grid) == TileId(3, 2)
    assert tile_of(grid.point_at(0.999, 0.999), grid) == TileId(0, 0)


def test_tile_of_outside(grid):
    with pytest.raises(OutOfAreaError):
        tile_of(grid.point_at(-0.1, 0.5), grid)
    with pytest.raises(OutOfAreaError):
        tile_of(grid.point_at(0.5, 10.01), grid)
    unbounded = GridSpec(ORIGIN)
    assert tile_of(unbounded.point_at(50.2, 3.1), unbounded) == TileId(50, 3)


def test_tile_width_scales_indices():
    g = GridSpec(ORIGIN, tile_width_km=0.5)
    assert tile_of(g.point_at(1.2, 0.7), g) == TileId(2, 1)


@settings(max_examples=200)
@given(st.floats(0, 9.5), st.floats(0, 9.5), st.floats(-0.49, 0.49), st.floats(-0.49, 0.49))
def test_tile_of_adjacent_points_differ_by_at_most_one(e, n, de, dn):
    g = GridSpec(ORIGIN, 1.0, 12, 12)
    e2, n2 = max(0.0, e + de), max(0.0, n + dn)
    a = tile_of(g.point_at(e, n), g)
    b = tile_of(g.point_at(e2, n2), g)
    assert abs(a.col - b.col) <= 1 and abs(a.row - b.row) <= 1
    assert tile_of(g.point_at(e, n), g) == a  # deterministic


def test_grid_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        GridSpec(ORIGIN, 0.0)


def test_deadhead_examples(grid):
    p = grid.point_at(2.0, 3.0)
    assert deadhead_km(p, p, 1.0) == 0.0
    q = grid.point_at(4.0, 3.0)
    h = haversine_km(p, q)
    assert h == pytest.approx(2.0, rel=1e-3)
    assert deadhead_km(p, q, 1.0) == h
    assert deadhead_km(p, q, 1.3) == pytest.approx(1.3 * h, rel=1e-15)


def test_deadhead_two_km_exact():
    # two points exactly 2 km apart on a meridian
    a = GeoPoint(0.0, 0.0)
    b = GeoPoint(math.degrees(2.0 / 6371.0), 0.0)
    assert deadhead_km(a, b, 1.0) == pytest.approx(2.0, rel=1e-12)
    assert deadhead_km(a, b, 1.3) == pytest.approx(2.6, rel=1e-12)


@given(st.floats(1.0, 3.0), st.floats(1.0, 3.0))
def test_deadhead_monotone_in_circuity(c1, c2):
    a, b = GeoPoint(30.2, -97.8), GeoPoint(30.25, -97.75)
    lo, hi = sorted((c1, c2))
    assert deadhead_km(a, b, lo) <= deadhead_km(a, b, hi)


def test_deadhead_rejects_circuity_below_one():
    with pytest.raises(ValueError):
        deadhead_km(GeoPoint(0, 0), GeoPoint(0, 1), 0.9)
