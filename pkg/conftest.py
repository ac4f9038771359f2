"""Shared builders for the test modules."""
import datetime
import math
import os
import numpy as np
import pytest
from geo import EARTH_RADIUS
from ingest import GeoPoint, PlaceRef, Trip, TripSet, day_start

DAY = datetime.date(2020, 1, 6)
T0 = day_start(DAY)
CENTER = GeoPoint(32.05, 118.78)
HOUR = 3600


def offset(point: GeoPoint, north: float, east: float) -> GeoPoint:
    """Point `north`/`east` meters away."""
    dlat = math.degrees(north / EARTH_RADIUS)
    dlon = math.degrees(east / EARTH_RADIUS / math.cos(math.radians(point.lat)))
    return GeoPoint(point.lat + dlat, point.lon + dlon)


def station_trip(trip_id, origin, destination, start, end, day=DAY,
                 **kwargs) -> Trip:
    """Station trip; times are seconds after midnight of `day`."""
    base = day_start(day)
    return Trip(trip_id, PlaceRef.station(origin),
                PlaceRef.station(destination), base + start, base + end,
                **kwargs)


def point_trip(trip_id, origin: GeoPoint, destination: GeoPoint, start, end,
               day=DAY, **kwargs) -> Trip:
    """Dockless trip; times are seconds after midnight of `day`."""
    base = day_start(day)
    return Trip(trip_id, PlaceRef.coordinate(origin.lat, origin.lon),
                PlaceRef.coordinate(destination.lat, destination.lon),
                base + start, base + end, **kwargs)


def trip_set(*trips) -> TripSet:
    return TripSet.from_trips(trips)


def random_station_trips(rng: np.random.Generator, n: int, n_stations: int,
                         day=DAY, first_id=0, company_id=None) -> TripSet:
    """Trips starting within one day between random stations."""
    starts = np.sort(rng.integers(0, 86400 - HOUR, n))
    durations = rng.integers(0, HOUR, n)
    origins = rng.integers(0, n_stations, n)
    destinations = rng.integers(0, n_stations, n)
    return TripSet.from_trips(
        station_trip(first_id + i, int(origins[i]), int(destinations[i]),
                     int(starts[i]), int(starts[i] + durations[i]), day=day,
                     company_id=company_id)
        for i in range(n))


def random_dockless_trips(rng: np.random.Generator, n: int,
                          spread: float = 1000.0, day=DAY, first_id=0,
                          center=CENTER, company_id=None) -> TripSet:
    """Trips within one day between points of a `spread` meter square."""
    starts = np.sort(rng.integers(0, 86400 - HOUR, n))
    durations = rng.integers(0, HOUR, n)
    coords = rng.uniform(-spread / 2, spread / 2, (n, 4))
    return TripSet.from_trips(
        point_trip(first_id + i,
                   offset(center, coords[i, 0], coords[i, 1]),
                   offset(center, coords[i, 2], coords[i, 3]),
                   int(starts[i]), int(starts[i] + durations[i]), day=day,
                   company_id=company_id)
        for i in range(n))


def blob(rng: np.random.Generator, center: GeoPoint, n: int,
         radius: float) -> list[GeoPoint]:
    """Points uniformly spread in a disc of `radius` meters."""
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    angle = rng.uniform(0, 2 * math.pi, n)
    return [offset(center, float(r[i] * math.cos(angle[i])),
                   float(r[i] * math.sin(angle[i]))) for i in range(n)]


def pytest_collection_modifyitems(config, items):
    if os.environ.get('FLEET_RUN_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='set FLEET_RUN_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20200106)
