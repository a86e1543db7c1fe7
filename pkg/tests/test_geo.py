"""Great-circle distance against an independent formulation."""

import math
import random

import pytest

from mpe.geo import EARTH_RADIUS_M, GeoPoint, haversine_m

from oracles import haversine_atan2

BARCLAYS = GeoPoint(40.68265, -73.97469)
BARCLAYS_EAST = GeoPoint(40.68265, -73.97209)
# frozen from the oracle: haversine_atan2(40.68265, -73.97469, 40.68265, -73.97209)
BARCLAYS_PAIR_M = 219.24


def test_identical_points_zero():
    assert haversine_m(BARCLAYS, BARCLAYS) == 0.0


def test_half_great_circle():
    got = haversine_m(GeoPoint(0, 0), GeoPoint(0, 180))
    assert got == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-12)


def test_venue_scale_distance_matches_oracle():
    got = haversine_m(BARCLAYS, BARCLAYS_EAST)
    oracle = haversine_atan2(
        BARCLAYS.lat, BARCLAYS.lon, BARCLAYS_EAST.lat, BARCLAYS_EAST.lon
    )
    assert got == pytest.approx(oracle, rel=0.005)
    assert got == pytest.approx(BARCLAYS_PAIR_M, rel=0.005)


def test_agrees_with_oracle_on_random_pairs():
    rng = random.Random(4213)
    for _ in range(1000):
        a = GeoPoint(rng.uniform(-89, 89), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-89, 89), rng.uniform(-180, 180))
        got = haversine_m(a, b)
        oracle = haversine_atan2(a.lat, a.lon, b.lat, b.lon)
        assert got == pytest.approx(oracle, rel=0.005, abs=1e-6)


def test_symmetry():
    rng = random.Random(7)
    for _ in range(200):
        a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert haversine_m(a, b) == haversine_m(b, a)


def test_triangle_inequality():
    rng = random.Random(99)
    for _ in range(300):
        pts = [GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3)]
        ab = haversine_m(pts[0], pts[1])
        bc = haversine_m(pts[1], pts[2])
        ac = haversine_m(pts[0], pts[2])
        assert ac <= ab + bc + 1e-6 * max(1.0, ac)


def test_out_of_range_construction_fails():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, -180.5)
    with pytest.raises(ValueError):
        GeoPoint(-90.0001, 10.0)
