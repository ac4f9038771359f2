"""Minimum fleet matching of one day of trips.

A bike chain is a sequence of trips served by one bike. Trip j may follow
trip i on the same bike when j starts at least `c` seconds after i ends and
j's origin is at i's destination station (station mode) or closer than `w`
meters to it (dockless mode).

The greedy matcher creates a bike at the earliest unassigned trip and keeps
attaching the earliest feasible successor until none is left, then starts
the next bike. In station mode this is optimal; in dockless mode it is an
upper bound of the exact path cover computed by `min_fleet_oracle`.
"""
from __future__ import annotations
from bisect import bisect_left
import datetime
import logging
from typing import Optional, Sequence
import attrs
import numpy as np
import pandas as pd
from pyrsistent import pmap
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from artifacts import Artifact
from fleet_utility import ConsistencyError, PreconditionError, log_time
from geo import assign_place, build_grid_index, haversine, query_radius
from ingest import PlaceRef, Trip, TripSet

STATION = 'station'
DOCKLESS = 'dockless'
ORACLE_GUARD = 20000
PLACE_KIND = {STATION: 'station', DOCKLESS: 'coordinate'}


def _positive(instance, attribute, value):
    if not value > 0:
        raise PreconditionError(f'{attribute.name} must be > 0, got: {value}')


def _non_negative(instance, attribute, value):
    if not value >= 0:
        raise PreconditionError(
            f'{attribute.name} must be >= 0, got: {value}')


def _mode(instance, attribute, value):
    if value not in PLACE_KIND:
        raise PreconditionError(f'Unknown mode, got: {value}')


@attrs.frozen
class MatchConfig:
    """Chain rule parameters: walking radius w and usage interval c."""
    mode: str = attrs.field(default=STATION, validator=_mode)
    walk_radius_w: float = attrs.field(default=250.0, validator=_positive)
    usage_interval_c: int = attrs.field(default=0, validator=_non_negative)


@attrs.define
class BikeChain:
    """Trips served by one bike, with its initial and final position."""
    bike_ord: int
    trip_ids: list
    initial_place: PlaceRef
    final_place: PlaceRef
    available_from: int
    first_start: int
    tail_key: tuple

    @property
    def current_pos(self) -> PlaceRef:
        return self.final_place

    def extend(self, trip: Trip) -> None:
        """Attach a trip to the end of the chain."""
        self.trip_ids.append(trip.trip_id)
        self.final_place = trip.destination
        self.available_from = trip.end_time
        self.tail_key = trip.key

    @staticmethod
    def start(bike_ord: int, trip: Trip) -> BikeChain:
        """New bike created at the trip's origin."""
        return BikeChain(bike_ord, [trip.trip_id], trip.origin,
                         trip.destination, trip.end_time, trip.start_time,
                         trip.key)

    @staticmethod
    def from_trips(bike_ord: int, trips: Sequence[Trip]) -> BikeChain:
        chain = BikeChain.start(bike_ord, trips[0])
        for trip in trips[1:]:
            chain.extend(trip)
        return chain


@attrs.frozen
class FleetSolution:
    """Chains covering a day's trips; the fleet size is their count."""
    chains: tuple
    fleet_size: int
    trip_assignment: object  # pmap trip_id -> bike_ord
    day: Optional[datetime.date]
    config: MatchConfig
    trips_by_id: dict = attrs.field(eq=False, repr=False, factory=dict)
    places: object = attrs.field(eq=False, repr=False, default=None)

    @staticmethod
    def from_chains(chains, day, config, trips_by_id,
                    places=None) -> FleetSolution:
        chains = tuple(chains)
        assignment = {trip_id: chain.bike_ord
                      for chain in chains for trip_id in chain.trip_ids}
        return FleetSolution(chains, len(chains), pmap(assignment), day,
                             config, trips_by_id, places)

    def chain_of(self, bike_ord: int) -> BikeChain:
        for chain in self.chains:
            if chain.bike_ord == bike_ord:
                return chain
        raise PreconditionError(f'No bike {bike_ord} in the solution')

    def to_artifact(self) -> Artifact:
        return Artifact(
            'fleet',
            day=self.day.isoformat() if self.day else None,
            fleet_size=self.fleet_size,
            config=attrs.asdict(self.config),
            chains=[{'bike_ord': chain.bike_ord,
                     'trip_ids': list(chain.trip_ids),
                     'initial_place': place_label(chain.initial_place),
                     'final_place': place_label(chain.final_place)}
                    for chain in self.chains])


def place_label(place: PlaceRef):
    """JSON-friendly place: station id or [lat, lon]."""
    if place.kind == 'station':
        return place.station_id
    return [place.point.lat, place.point.lon]


@attrs.frozen
class DemandProfile:
    """Bikes required per place at the start of a day."""
    day: Optional[datetime.date]
    demand: object  # pmap place_id -> count

    @property
    def total(self) -> int:
        return sum(self.demand.values())

    def to_frame(self) -> pd.DataFrame:
        """Rows day,place_id,bike_demand."""
        day = self.day.isoformat() if self.day else ''
        return pd.DataFrame(
            [{'day': day, 'place_id': place, 'bike_demand': count}
             for place, count in sorted(self.demand.items())],
            columns=['day', 'place_id', 'bike_demand'])


def can_follow(prev: Trip, nxt: Trip, cfg: MatchConfig) -> bool:
    """The chain rule: may `nxt` be served by the bike that served `prev`."""
    if nxt.key <= prev.key:
        return False
    if nxt.start_time < prev.end_time + cfg.usage_interval_c:
        return False
    if cfg.mode == STATION:
        return prev.destination.station_id == nxt.origin.station_id
    return haversine(prev.destination.point,
                     nxt.origin.point) < cfg.walk_radius_w


def greedy_successor(bike: BikeChain, pool: Sequence[Trip],
                     cfg: MatchConfig, places=None) -> Optional[int]:
    """Reference successor rule by linear scan over unassigned trips.

    Station mode: earliest trip at the bike's station starting no earlier
    than available_from + c, ties by lowest trip_id. Dockless mode: earliest
    trip whose origin is within w of the bike, ties by smaller walking
    distance, then lowest trip_id.
    """
    threshold = bike.available_from + cfg.usage_interval_c
    best = None
    for trip in pool:
        if trip.start_time < threshold or trip.key <= bike.tail_key:
            continue
        if cfg.mode == STATION:
            if trip.origin.station_id != bike.current_pos.station_id:
                continue
            rank = (trip.start_time, trip.trip_id)
        else:
            distance = haversine(bike.current_pos.point, trip.origin.point)
            if distance >= cfg.walk_radius_w:
                continue
            rank = (trip.start_time, distance, trip.trip_id)
        if best is None or rank < best[0]:
            best = (rank, trip.trip_id)
    return None if best is None else best[1]


class NextFree:
    """First unassigned position at or after i, by union-find with path
    halving. Position n is a sentinel that is never removed.
    """

    def __init__(self, n: int):
        self.parent = list(range(n + 1))

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def remove(self, i: int) -> None:
        self.parent[i] = i + 1


class GreedyMatcher:
    """Builds bike chains one bike at a time over sorted trips."""

    def __init__(self, trips: Sequence[Trip], cfg: MatchConfig):
        self.trips = trips
        self.cfg = cfg
        self.free = NextFree(len(trips))

    def successor(self, tail: int) -> Optional[int]:
        """Position of the greedy successor of the trip at `tail`."""
        raise NotImplementedError

    def mark(self, position: int) -> None:
        """Take the trip at `position` out of the pool."""
        self.free.remove(position)

    def build(self) -> list[BikeChain]:
        """Run the greedy procedure until every trip is assigned."""
        chains = []
        n = len(self.trips)
        position = self.free.find(0)
        while position < n:
            self.mark(position)
            chain = BikeChain.start(len(chains), self.trips[position])
            tail = self.successor(position)
            while tail is not None:
                self.mark(tail)
                chain.extend(self.trips[tail])
                tail = self.successor(tail)
            chains.append(chain)
            position = self.free.find(position)
        return chains


class StationMatcher(GreedyMatcher):
    """Greedy matcher with per-station time-sorted queues."""

    def __init__(self, trips: Sequence[Trip], cfg: MatchConfig):
        super().__init__(trips, cfg)
        self.queues: dict[int, list[int]] = {}
        self.slot = [0] * len(trips)
        for position, trip in enumerate(trips):
            queue = self.queues.setdefault(trip.origin.station_id, [])
            self.slot[position] = len(queue)
            queue.append(position)
        self.starts = {station: [trips[p].start_time for p in queue]
                       for station, queue in self.queues.items()}
        self.queue_free = {station: NextFree(len(queue))
                           for station, queue in self.queues.items()}

    def mark(self, position: int) -> None:
        super().mark(position)
        station = self.trips[position].origin.station_id
        self.queue_free[station].remove(self.slot[position])

    def successor(self, tail: int) -> Optional[int]:
        trip = self.trips[tail]
        station = trip.destination.station_id
        queue = self.queues.get(station)
        if queue is None:
            return None
        free = self.queue_free[station]
        threshold = trip.end_time + self.cfg.usage_interval_c
        j = free.find(bisect_left(self.starts[station], threshold))
        # ties at the tail's own start time must come later in the order
        while j < len(queue) and queue[j] <= tail:
            j = free.find(j + 1)
        return queue[j] if j < len(queue) else None


class DocklessMatcher(GreedyMatcher):
    """Greedy matcher with a grid index over trip origins."""

    def __init__(self, trips: Sequence[Trip], cfg: MatchConfig):
        super().__init__(trips, cfg)
        self.index = build_grid_index([trip.origin.point for trip in trips],
                                      cell_size=cfg.walk_radius_w)
        self.slot = [0] * len(trips)
        self.starts = {}
        self.cell_free = {}
        for cell, positions in self.index.cells.items():
            for slot, position in enumerate(positions):
                self.slot[position] = slot
            self.starts[cell] = [trips[p].start_time for p in positions]
            self.cell_free[cell] = NextFree(len(positions))
        self.cell_of = [self.index.cell_of(trip.origin.point)
                        for trip in trips]

    def mark(self, position: int) -> None:
        super().mark(position)
        self.cell_free[self.cell_of[position]].remove(self.slot[position])

    def successor(self, tail: int) -> Optional[int]:
        trip = self.trips[tail]
        position = trip.destination.point
        threshold = trip.end_time + self.cfg.usage_interval_c
        w = self.cfg.walk_radius_w
        best = None
        for cell in self.index.covering_cells(position, w):
            queue = self.index.cells[cell]
            free = self.cell_free[cell]
            j = free.find(bisect_left(self.starts[cell], threshold))
            found_start = None
            while j < len(queue):
                candidate = queue[j]
                start = self.trips[candidate].start_time
                if best is not None and start > best[0]:
                    break
                if found_start is not None and start > found_start:
                    break
                if candidate > tail:
                    distance = haversine(
                        position, self.trips[candidate].origin.point)
                    if distance < w:
                        rank = (start, distance,
                                self.trips[candidate].trip_id, candidate)
                        if best is None or rank < best:
                            best = rank
                        found_start = start
                j = free.find(j + 1)
        return None if best is None else best[3]


def _check_kinds(trips: Sequence[Trip], cfg: MatchConfig) -> None:
    kind = PLACE_KIND[cfg.mode]
    for trip in trips:
        if trip.origin.kind != kind or trip.destination.kind != kind:
            raise PreconditionError(
                f'Trip {trip.trip_id} has {trip.origin.kind}/'
                f'{trip.destination.kind} places, {cfg.mode} mode needs '
                f'{kind} places.')


def _single_day(day_trips: TripSet) -> Optional[datetime.date]:
    days = day_trips.days()
    if len(days) > 1:
        raise PreconditionError(
            f'Matching is per day; got {len(days)} days, split them first.')
    return days[0] if days else None


@log_time
def build_min_fleet(day_trips: TripSet, cfg: MatchConfig,
                    places=None) -> FleetSolution:
    """Greedy minimum fleet of one day of trips."""
    day = _single_day(day_trips)
    trips = day_trips.trips
    _check_kinds(trips, cfg)
    if cfg.mode == STATION:
        matcher = StationMatcher(trips, cfg)
    else:
        matcher = DocklessMatcher(trips, cfg)
    chains = matcher.build()
    if __debug__:
        logging.debug('Day %s: %d trips served by %d bikes (%s, c=%d).',
                      day, len(trips), len(chains), cfg.mode,
                      cfg.usage_interval_c)
    return FleetSolution.from_chains(chains, day, cfg, day_trips.by_id(),
                                     places)


def compatibility_edges(trips: Sequence[Trip],
                        cfg: MatchConfig) -> tuple[list[int], list[int]]:
    """Pairs (i, j) of sorted positions where trip j can follow trip i."""
    rows, cols = [], []
    c = cfg.usage_interval_c
    if cfg.mode == STATION:
        queues: dict[int, list[int]] = {}
        for position, trip in enumerate(trips):
            queues.setdefault(trip.origin.station_id, []).append(position)
        starts = {station: [trips[p].start_time for p in queue]
                  for station, queue in queues.items()}
        for i, trip in enumerate(trips):
            station = trip.destination.station_id
            queue = queues.get(station, [])
            first = bisect_left(starts.get(station, []), trip.end_time + c)
            for j in queue[first:]:
                if j > i:
                    rows.append(i)
                    cols.append(j)
    else:
        index = build_grid_index([trip.origin.point for trip in trips],
                                 cell_size=cfg.walk_radius_w)
        for i, trip in enumerate(trips):
            for j in query_radius(index, trip.destination.point,
                                  cfg.walk_radius_w):
                if j > i and trips[j].start_time >= trip.end_time + c:
                    rows.append(i)
                    cols.append(j)
    return rows, cols


@log_time
def min_fleet_oracle(day_trips: TripSet, cfg: MatchConfig) -> int:
    """Exact minimum path cover: trips minus a maximum bipartite matching
    (Hopcroft-Karp) of the compatibility graph.
    """
    trips = day_trips.trips
    n = len(trips)
    if n > ORACLE_GUARD:
        raise PreconditionError(
            f'{n} trips exceed the oracle guard of {ORACLE_GUARD}; '
            'audit a sample of the day instead.')
    if n == 0:
        return 0
    _check_kinds(trips, cfg)
    rows, cols = compatibility_edges(trips, cfg)
    graph = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                       shape=(n, n))
    matching = maximum_bipartite_matching(graph, perm_type='column')
    matched = int(np.count_nonzero(matching >= 0))
    if __debug__:
        logging.debug('Oracle: %d trips, %d edges, %d matched.',
                      n, len(rows), matched)
    return n - matched


def bike_demand_by_place(sol: FleetSolution, places=None) -> DemandProfile:
    """Count chains by the place of their initial position.

    Station mode counts by station id; dockless mode maps initial
    coordinates to virtual stations.
    """
    places = places if places is not None else sol.places
    demand: dict = {}
    for chain in sol.chains:
        if sol.config.mode == STATION:
            place = chain.initial_place.station_id
        else:
            if places is None:
                raise PreconditionError(
                    'Dockless demand needs virtual stations.')
            place = assign_place(chain.initial_place.point, places).vs_id
        demand[place] = demand.get(place, 0) + 1
    return DemandProfile(sol.day, pmap(dict(sorted(demand.items()))))


def validate_solution(sol: FleetSolution, trips: TripSet) -> None:
    """Check coverage and every chain against the chain rule."""
    by_id = trips.by_id()
    covered = [trip_id for chain in sol.chains for trip_id in chain.trip_ids]
    if len(covered) != len(set(covered)) or set(covered) != set(by_id):
        raise ConsistencyError('Chains do not cover the trips exactly once.')
    if sol.fleet_size != len(sol.chains):
        raise ConsistencyError('fleet_size differs from the chain count.')
    firsts = [by_id[chain.trip_ids[0]].key for chain in sol.chains]
    if firsts != sorted(firsts):
        raise ConsistencyError('Chains are not ordered by first use.')
    for chain in sol.chains:
        for prev_id, next_id in zip(chain.trip_ids, chain.trip_ids[1:]):
            if not can_follow(by_id[prev_id], by_id[next_id], sol.config):
                raise ConsistencyError(
                    f'Bike {chain.bike_ord}: trip {next_id} cannot follow '
                    f'trip {prev_id}.')
        if dict(sol.trip_assignment).get(chain.trip_ids[0]) != \
                chain.bike_ord:
            raise ConsistencyError('trip_assignment is stale.')


def _idle_split(chain: BikeChain, by_id: dict, place: PlaceRef, time: int,
                c: int) -> Optional[int]:
    """Index k after which the bike idles at `place` at `time`."""
    trips = [by_id[trip_id] for trip_id in chain.trip_ids]
    for k in range(len(trips) - 1, -1, -1):
        ends_here = trips[k].destination == place \
            and trips[k].end_time + c <= time
        next_later = k + 1 == len(trips) or trips[k + 1].start_time >= time
        if ends_here and next_later:
            return k
    return None


def apply_break_reconnect(sol: FleetSolution, bike_a: int, bike_b: int,
                          place: PlaceRef, time: int) -> FleetSolution:
    """Swap the chain suffixes of two bikes parked together at `place`
    at `time`. Fleet size and coverage are unchanged.
    """
    c = sol.config.usage_interval_c
    by_id = sol.trips_by_id
    chain_a = sol.chain_of(bike_a)
    chain_b = sol.chain_of(bike_b)
    if bike_a == bike_b:
        raise PreconditionError('Break-reconnection needs two bikes.')
    split_a = _idle_split(chain_a, by_id, place, time, c)
    split_b = _idle_split(chain_b, by_id, place, time, c)
    if split_a is None or split_b is None:
        raise PreconditionError(
            f'Bikes {bike_a} and {bike_b} do not intersect at {place} '
            f'at {time}.')
    ids_a = chain_a.trip_ids[:split_a + 1] + chain_b.trip_ids[split_b + 1:]
    ids_b = chain_b.trip_ids[:split_b + 1] + chain_a.trip_ids[split_a + 1:]
    for ids in (ids_a, ids_b):
        for prev_id, next_id in zip(ids, ids[1:]):
            if not can_follow(by_id[prev_id], by_id[next_id], sol.config):
                raise PreconditionError(
                    f'Swap at {time} breaks the chain rule between trips '
                    f'{prev_id} and {next_id}.')
    new_a = BikeChain.from_trips(bike_a, [by_id[i] for i in ids_a])
    new_b = BikeChain.from_trips(bike_b, [by_id[i] for i in ids_b])
    chains = [new_a if chain.bike_ord == bike_a
              else new_b if chain.bike_ord == bike_b else chain
              for chain in sol.chains]
    return FleetSolution.from_chains(chains, sol.day, sol.config, by_id,
                                     sol.places)


def spatio_temporal_intersections(sol: FleetSolution) -> list[tuple]:
    """All (bike_a, bike_b, place, time) where two bikes idle together
    after serving at least one trip each; `time` is the first shared moment.
    """
    c = sol.config.usage_interval_c
    by_id = sol.trips_by_id
    windows: dict = {}
    for chain in sol.chains:
        trips = [by_id[trip_id] for trip_id in chain.trip_ids]
        for k, trip in enumerate(trips):
            until = trips[k + 1].start_time if k + 1 < len(trips) else None
            since = trip.end_time + c
            if until is None or since <= until:
                windows.setdefault(trip.destination, []).append(
                    (since, until, chain.bike_ord))
    found = []
    for place, spans in windows.items():
        spans.sort(key=lambda span: (span[0], span[2]))
        for i, (since_a, until_a, bike_a) in enumerate(spans):
            for since_b, until_b, bike_b in spans[i + 1:]:
                if bike_a == bike_b:
                    continue
                if until_a is not None and since_b > until_a:
                    break
                time = max(since_a, since_b)
                if until_b is None or time <= until_b:
                    found.append((bike_a, bike_b, place, time))
    return found
