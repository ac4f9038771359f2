"""Seeded synthetic trips with weekly seasonality.

Places are scattered in a bounding box and drawn with Zipf-like
popularity. Daily volume follows the day of the week with lognormal noise,
start times follow morning and evening peaks, and durations are lognormal.
"""
from __future__ import annotations
import datetime
import heapq
import logging
import math
import attrs
import numpy as np
from artifacts import Artifact
from fleet_utility import PreconditionError, log_time
from geo import EARTH_RADIUS
from ingest import Bounds, GeoPoint, PlaceRef, Trip, TripSet, day_start
from matcher import DOCKLESS, STATION

PEAKS = ((8 * 3600, 1.2 * 3600, 0.4), (18 * 3600, 1.5 * 3600, 0.4))
MIN_DURATION = 60


def _at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise PreconditionError(
                f'{attribute.name} must be >= {minimum}, got: {value}')
    return check


def _positive(instance, attribute, value):
    if not value > 0:
        raise PreconditionError(f'{attribute.name} must be > 0, got: {value}')


def _mode(instance, attribute, value):
    if value not in (STATION, DOCKLESS):
        raise PreconditionError(f'Unknown mode, got: {value}')


@attrs.frozen
class SynthConfig:
    n_places: int = attrs.field(default=50, validator=_at_least(1))
    bbox: Bounds = Bounds(32.00, 118.70, 32.10, 118.85)
    days: int = attrs.field(default=14, validator=_at_least(1))
    base_daily_trips: int = attrs.field(default=5000, validator=_at_least(0))
    weekday_factor: float = attrs.field(default=1.0, validator=_positive)
    weekend_factor: float = attrs.field(default=0.6, validator=_positive)
    daily_noise_cv: float = attrs.field(default=0.05, validator=_at_least(0))
    duration_mean: float = attrs.field(default=900.0, validator=_positive)
    duration_spread: float = attrs.field(default=0.5, validator=_at_least(0))
    od_concentration: float = attrs.field(default=1.0,
                                          validator=_at_least(0))
    mode: str = attrs.field(default=STATION, validator=_mode)
    dockless_jitter: float = attrs.field(default=100.0,
                                         validator=_at_least(0))
    n_companies: int = attrs.field(default=1, validator=_at_least(1))
    start_date: datetime.date = datetime.date(2020, 1, 6)
    seed: int = 0

    def to_dict(self) -> dict:
        echo = attrs.asdict(self, recurse=False)
        echo['bbox'] = self.bbox.to_string()
        echo['start_date'] = self.start_date.isoformat()
        return echo

    def to_artifact(self) -> Artifact:
        return Artifact('resolved-config', command='synth',
                        config=self.to_dict())


def _lognormal_params(mean: float, cv: float) -> tuple[float, float]:
    """(mu, sigma) of a lognormal with the given mean and CV."""
    sigma = math.sqrt(math.log1p(cv * cv))
    return math.log(mean) - sigma * sigma / 2, sigma


def place_anchors(cfg: SynthConfig) -> dict[int, GeoPoint]:
    """Place coordinates, ids from 0; they double as the station registry."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    lat = rng.uniform(cfg.bbox.min_lat, cfg.bbox.max_lat, cfg.n_places)
    lon = rng.uniform(cfg.bbox.min_lon, cfg.bbox.max_lon, cfg.n_places)
    return {place: GeoPoint(float(lat[place]), float(lon[place]))
            for place in range(cfg.n_places)}


def popularity(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Zipf weights 1/rank^s shuffled over places."""
    weights = 1.0 / np.arange(1, cfg.n_places + 1) ** cfg.od_concentration
    return rng.permutation(weights / weights.sum())


def expected_daily_trips(cfg: SynthConfig, day: datetime.date) -> float:
    factor = cfg.weekend_factor if day.weekday() >= 5 \
        else cfg.weekday_factor
    return cfg.base_daily_trips * factor


def _start_offsets(size: int, rng: np.random.Generator) -> np.ndarray:
    """Seconds after midnight from two peaks plus a flat background."""
    shares = [share for dummy, dummy2, share in PEAKS]
    component = rng.choice(len(PEAKS) + 1, size=size,
                           p=shares + [1 - sum(shares)])
    offsets = rng.uniform(0, 86400, size)
    for which, (mean, spread, dummy) in enumerate(PEAKS):
        chosen = component == which
        offsets[chosen] = rng.normal(mean, spread, int(chosen.sum()))
    return np.clip(offsets, 0, 86399).astype(np.int64)


def _jitter(anchor: GeoPoint, radius: float, u: float, angle: float,
            bbox: Bounds) -> GeoPoint:
    distance = radius * math.sqrt(u)
    dlat = math.degrees(distance * math.cos(angle) / EARTH_RADIUS)
    dlon = math.degrees(distance * math.sin(angle) / EARTH_RADIUS
                        / math.cos(math.radians(anchor.lat)))
    return GeoPoint(min(max(anchor.lat + dlat, bbox.min_lat), bbox.max_lat),
                    min(max(anchor.lon + dlon, bbox.min_lon), bbox.max_lon))


def _day_rows(cfg, day, weights, anchors, rng) -> list[tuple]:
    mu, sigma = _lognormal_params(1.0, cfg.daily_noise_cv)
    noise = rng.lognormal(mu, sigma) if cfg.daily_noise_cv else 1.0
    count = int(round(expected_daily_trips(cfg, day) * noise))
    origins = rng.choice(cfg.n_places, size=count, p=weights)
    destinations = rng.choice(cfg.n_places, size=count, p=weights)
    starts = day_start(day) + _start_offsets(count, rng)
    mu, sigma = _lognormal_params(cfg.duration_mean, cfg.duration_spread)
    durations = np.maximum(MIN_DURATION, np.round(
        rng.lognormal(mu, sigma, count))).astype(np.int64)
    companies = rng.integers(1, cfg.n_companies + 1, count)
    jitter = rng.uniform(0, 1, (count, 4))
    users = rng.integers(0, max(1, cfg.base_daily_trips // 2), count)
    rows = []
    for i in range(count):
        origin, destination = int(origins[i]), int(destinations[i])
        if cfg.mode == STATION:
            origin_ref = PlaceRef.station(origin)
            destination_ref = PlaceRef.station(destination)
        else:
            point = _jitter(anchors[origin], cfg.dockless_jitter,
                            jitter[i, 0], 2 * math.pi * jitter[i, 1],
                            cfg.bbox)
            origin_ref = PlaceRef.coordinate(point.lat, point.lon)
            point = _jitter(anchors[destination], cfg.dockless_jitter,
                            jitter[i, 2], 2 * math.pi * jitter[i, 3],
                            cfg.bbox)
            destination_ref = PlaceRef.coordinate(point.lat, point.lon)
        company = int(companies[i]) if cfg.mode == DOCKLESS else None
        rows.append((int(starts[i]), int(starts[i] + durations[i]),
                     origin, destination, origin_ref, destination_ref,
                     company, f'U{int(users[i]):06d}'))
    return rows


def _assign_source_bikes(rows: list[tuple]) -> list[str]:
    """Replay trips over a per-place stock of idle bikes.

    A trip takes the longest idle bike parked at its origin place, else a
    new bike joins the fleet. Companies keep separate stocks.
    """
    idle: dict = {}
    bikes = []
    created = 0
    for start, end, origin, destination, *rest in rows:
        company = rest[2]
        stock = idle.setdefault((company, origin), [])
        if stock and stock[0][0] <= start:
            dummy, bike = heapq.heappop(stock)
        else:
            bike = created
            created += 1
        heapq.heappush(idle.setdefault((company, destination), []),
                       (end, bike))
        bikes.append(f'B{bike:06d}')
    return bikes


@log_time
def generate_trips(cfg: SynthConfig) -> TripSet:
    """Deterministic trips for `cfg.days` days from `cfg.start_date`."""
    anchors = place_anchors(cfg)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.days + 2)
    weights = popularity(cfg, np.random.default_rng(streams[1]))
    rows = []
    for offset in range(cfg.days):
        day = cfg.start_date + datetime.timedelta(days=offset)
        rows.extend(_day_rows(cfg, day, weights, anchors,
                              np.random.default_rng(streams[offset + 2])))
    rows.sort(key=lambda row: row[:4])
    bikes = _assign_source_bikes(rows)
    trips = []
    for trip_id, (row, bike) in enumerate(zip(rows, bikes)):
        start, end, dummy, dummy2, origin, destination, company, user = row
        trips.append(Trip(trip_id, origin, destination, start, end,
                          company_id=company, bike_id_source=bike,
                          user_id_source=None if company else user))
    logging.info('Generated %d trips over %d days (%s, seed %d).',
                 len(trips), cfg.days, cfg.mode, cfg.seed)
    return TripSet.from_trips(trips)
