"""Great-circle distance and the distance-decay kernel."""

import math

import numpy as np
import pytest

from lotnext.spatial import EARTH_RADIUS_KM, GeoPoint, SpatialParams, haversine, pair_weight


def reference_great_circle(lat1, lon1, lat2, lon2):
    """Independent arctan2 formulation of the spherical distance."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    num = math.hypot(
        math.cos(p2) * math.sin(dl),
        math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl),
    )
    den = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_KM * math.atan2(num, den)


class TestHaversine:
    def test_identity(self):
        p = GeoPoint(37.75, -122.45)
        assert haversine(p, p) == 0.0

    def test_one_degree_of_longitude_at_equator(self):
        # arc length R * pi / 180 = 111.19492664...
        d = haversine(GeoPoint(0.0, 0.0), GeoPoint(0.0, 1.0))
        assert d == pytest.approx(111.195, abs=1e-3)

    def test_half_great_circle(self):
        d = haversine(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0))
        assert d == pytest.approx(20015.09, abs=1e-2)

    def test_symmetry_and_reference_agreement(self, rng):
        for _ in range(1000):
            a = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            b = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            d_ab = haversine(a, b)
            assert d_ab == pytest.approx(haversine(b, a), abs=0.0)
            ref = reference_great_circle(a.lat, a.lon, b.lat, b.lon)
            assert d_ab == pytest.approx(ref, rel=1e-9, abs=1e-6)
            assert d_ab >= 0.0

    def test_triangle_inequality(self, rng):
        for _ in range(1000):
            pts = [
                GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
                for _ in range(3)
            ]
            ab = haversine(pts[0], pts[1])
            bc = haversine(pts[1], pts[2])
            ac = haversine(pts[0], pts[2])
            assert ac <= ab + bc + 1e-6


class TestPairWeight:
    def test_zero_distance(self):
        p = GeoPoint(10.0, 10.0)
        params = SpatialParams(beta=3.7, epsilon=1e-10)
        assert pair_weight(p, p, params) == pytest.approx(1.0 + 1e-10, abs=1e-15)

    def test_beta_zero_degenerates(self):
        params = SpatialParams(beta=0.0, epsilon=1e-10)
        a, b = GeoPoint(0.0, 0.0), GeoPoint(40.0, 100.0)
        assert pair_weight(a, b, params) == pytest.approx(1.0 + 1e-10, abs=1e-15)

    def test_unit_decay_at_one_kilometer(self):
        # one degree of longitude at the equator is 111.19492... km, so pick
        # points 1 km apart along the equator
        one_km_deg = 1.0 / (EARTH_RADIUS_KM * math.pi / 180.0)
        a, b = GeoPoint(0.0, 0.0), GeoPoint(0.0, one_km_deg)
        params = SpatialParams(beta=1.0, epsilon=1e-10)
        assert pair_weight(a, b, params) == pytest.approx(math.exp(-1.0) + 1e-10, rel=1e-9)

    def test_monotone_in_distance(self, rng):
        params = SpatialParams(beta=0.5, epsilon=1e-10)
        origin = GeoPoint(0.0, 0.0)
        lons = np.sort(rng.uniform(0, 90, size=50))
        weights = [pair_weight(origin, GeoPoint(0.0, float(l)), params) for l in lons]
        assert all(w1 >= w2 for w1, w2 in zip(weights, weights[1:]))

    def test_strictly_positive_floor(self, rng):
        params = SpatialParams(beta=1e6, epsilon=1e-10)
        a, b = GeoPoint(0.0, 0.0), GeoPoint(50.0, 120.0)
        w = pair_weight(a, b, params)
        assert w >= params.epsilon
        assert w > 0.0

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SpatialParams(beta=-1.0)
        with pytest.raises(ValueError):
            SpatialParams(epsilon=0.0)
        with pytest.raises(ValueError):
            GeoPoint(91.0, 0.0)
