"""Geodesic distance and the distance-decay kernel used by the model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class SpatialParams:
    """Decay weight per kilometer and the positivity floor of the kernel."""

    beta: float = 1.0
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in kilometers. Accepts scalars or arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64))
                              for v in (lat1, lon1, lat2, lon2))
    a = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_km(a.lat, a.lon, b.lat, b.lon))


def pair_weight(a: GeoPoint, b: GeoPoint, params: SpatialParams) -> float:
    """exp(-beta * distance) + epsilon; strictly positive, at most 1 + epsilon."""
    return float(np.exp(-params.beta * haversine(a, b)) + params.epsilon)
