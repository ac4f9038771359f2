"""Scoring allocation plans against the trips that actually happened.

Station-based systems are scored by chains: when a station is short of g
bikes, the trips of the last g bikes that would have started there are
lost. Dockless systems are scored by replaying the day, moving bikes with
the trips they serve.
"""
from __future__ import annotations
import datetime
import heapq
import logging
from typing import Iterable, Optional, Sequence
import attrs
import numpy as np
import pandas as pd
from pyrsistent import pmap
from scipy import stats
from allocator import (AllocationPlan, PlaceFlows, compute_final_distribution,
                       compute_rebalancing, rolling_max_allocation)
from artifacts import Artifact
from fleet_utility import (ConsistencyError, PreconditionError, log_time,
                           run_jobs)
from geo import (assign_place, build_grid_index, covering_cells, haversine,
                 identify_virtual_stations)
from ingest import TripSet, split_by_day
from matcher import (DOCKLESS, STATION, FleetSolution, MatchConfig,
                     bike_demand_by_place, build_min_fleet)

TABLE_COLUMNS = ['date', 'u_days', 'recommended_fleet',
                 'repositioning_next_day', 'unmet_trip_ratio']
U_VALUES = (1, 7)


@attrs.frozen
class UnmetReport:
    day: Optional[datetime.date]
    total_trips: int
    unmet_trips: int
    unmet_ratio: float
    per_place_gap: object  # pmap place_id -> g
    zero_trip_day: bool = False

    @staticmethod
    def of(day, total_trips, unmet_trips, gaps) -> UnmetReport:
        if total_trips == 0:
            logging.warning('No trips on %s; unmet ratio reported as 0.', day)
        ratio = unmet_trips / total_trips if total_trips else 0.0
        return UnmetReport(day, total_trips, unmet_trips, ratio,
                           pmap(dict(sorted(gaps.items()))),
                           total_trips == 0)


@attrs.frozen
class SimResult:
    served: tuple
    unmet: tuple
    final_positions: tuple
    flows: PlaceFlows


@attrs.frozen
class SeriesStats:
    cv: float
    pearson_r: Optional[float] = None
    r_squared: Optional[float] = None
    rrmse_lag: object = pmap()  # pmap lag -> relative RMSE

    def to_artifact(self) -> Artifact:
        return Artifact('stats', cv=self.cv, pearson_r=self.pearson_r,
                        r_squared=self.r_squared,
                        rrmse_lag={str(lag): value for lag, value
                                   in sorted(self.rrmse_lag.items())})


@attrs.frozen
class EvaluationRow:
    date: datetime.date
    u_days: int
    recommended_fleet: int
    repositioning_next_day: int
    unmet: UnmetReport

    @property
    def unmet_trip_ratio(self) -> float:
        return self.unmet.unmet_ratio


@attrs.frozen
class EvaluationReport:
    """One row per (evaluation day, window u), in date order."""
    rows: tuple
    mode: str
    places: object = attrs.field(eq=False, repr=False, default=None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{'date': row.date.isoformat(), 'u_days': row.u_days,
              'recommended_fleet': row.recommended_fleet,
              'repositioning_next_day': row.repositioning_next_day,
              'unmet_trip_ratio': row.unmet_trip_ratio}
             for row in self.rows],
            columns=TABLE_COLUMNS)

    def to_artifact(self) -> Artifact:
        return Artifact('evaluation', mode=self.mode, rows=[
            {'date': row.date.isoformat(),
             'u_days': row.u_days,
             'recommended_fleet': row.recommended_fleet,
             'repositioning_next_day': row.repositioning_next_day,
             'unmet_trip_ratio': row.unmet_trip_ratio,
             'total_trips': row.unmet.total_trips,
             'unmet_trips': row.unmet.unmet_trips,
             'zero_trip_day': row.unmet.zero_trip_day,
             'per_place_gap': [{'place_id': place, 'gap': gap}
                               for place, gap
                               in row.unmet.per_place_gap.items()]}
            for row in self.rows])


def unmet_chains_station(actual_solution: FleetSolution,
                         plan: AllocationPlan) -> tuple[set, dict]:
    """Bike ordinals whose chains go unmet, and the gap per station."""
    if actual_solution.config.mode != STATION:
        raise PreconditionError('Chain scoring needs a station solution.')
    by_station: dict = {}
    for chain in actual_solution.chains:
        by_station.setdefault(chain.initial_place.station_id,
                              []).append(chain)
    if by_station and plan.allocation \
            and not set(by_station) & set(plan.allocation):
        raise PreconditionError(
            f'Plan for {plan.for_day} shares no station with the trips.')
    unmet, gaps = set(), {}
    for station, chains in by_station.items():
        gap = max(0, len(chains) - plan.get(station))
        gaps[station] = gap
        if gap:
            chains = sorted(chains, key=lambda chain: (chain.first_start,
                                                       chain.trip_ids[0]))
            unmet.update(chain.bike_ord for chain in chains[-gap:])
    return unmet, gaps


def unmet_ratio_station(actual_solution: FleetSolution,
                        plan: AllocationPlan) -> UnmetReport:
    """Unmet trips of a station day under a plan."""
    unmet, gaps = unmet_chains_station(actual_solution, plan)
    total = sum(len(chain.trip_ids) for chain in actual_solution.chains)
    lost = sum(len(chain.trip_ids) for chain in actual_solution.chains
               if chain.bike_ord in unmet)
    return UnmetReport.of(actual_solution.day, total, lost, gaps)


def station_flows(sol: FleetSolution,
                  unmet_chains: Iterable[int]) -> PlaceFlows:
    """Served chains move one bike from their first to their last station."""
    unmet = set(unmet_chains)
    return PlaceFlows.from_moves(
        (chain.initial_place.station_id, chain.final_place.station_id)
        for chain in sol.chains if chain.bike_ord not in unmet)


def _check_conservation(parked: dict, riding: list, fleet: int,
                        trip) -> None:
    """Every bike is either parked or riding."""
    if len(riding) + sum(len(bikes) for bikes in parked.values()) != fleet:
        at = 'the end of the day' if trip is None else f'trip {trip.trip_id}'
        raise ConsistencyError(f'Bike count drifted from {fleet} at {at}.')


@log_time
def simulate_dockless_day(day_trips: TripSet, plan: AllocationPlan, vs,
                          cfg: MatchConfig) -> tuple[UnmetReport, SimResult]:
    """Replay a dockless day with the plan's bikes.

    Bikes start at their virtual station centers. Each trip, in
    (start_time, trip_id) order, takes the nearest idle bike closer than w
    whose idle time covers c; ties go to the longest idle bike, then the
    lowest ordinal. Flows are counted by the virtual station of the bike's
    position before and after the trip.
    """
    w = cfg.walk_radius_w
    c = cfg.usage_interval_c
    grid = build_grid_index([station.center for station in vs.stations],
                            cell_size=w)
    positions, idle_since, place_of = [], [], []
    parked: dict = {}
    for vs_id, count in sorted(plan.allocation.items()):
        center = vs.stations[vs_id].center
        for dummy in range(count):
            ordinal = len(positions)
            positions.append(center)
            idle_since.append(None)
            place_of.append(vs_id)
            parked.setdefault(grid.cell_of(center), set()).add(ordinal)
    fleet = len(positions)
    riding: list = []  # heap of (available_at, ordinal)
    served, unmet, moves = [], [], []
    for trip in day_trips.trips:
        while riding and riding[0][0] <= trip.start_time:
            dummy, ordinal = heapq.heappop(riding)
            parked.setdefault(grid.cell_of(positions[ordinal]),
                              set()).add(ordinal)
        _check_conservation(parked, riding, fleet, trip)
        origin = trip.origin.point
        best = None
        for cell in covering_cells(grid, origin, w, parked):
            for ordinal in parked[cell]:
                distance = haversine(origin, positions[ordinal])
                if distance < w:
                    since = idle_since[ordinal]
                    rank = (distance, -np.inf if since is None else since,
                            ordinal)
                    if best is None or rank < best:
                        best = rank
        if best is None:
            unmet.append(trip.trip_id)
            continue
        ordinal = best[2]
        cell = grid.cell_of(positions[ordinal])
        parked[cell].discard(ordinal)
        if not parked[cell]:
            del parked[cell]
        target = assign_place(trip.destination.point, vs).vs_id
        moves.append((place_of[ordinal], target))
        positions[ordinal] = trip.destination.point
        idle_since[ordinal] = trip.end_time
        place_of[ordinal] = target
        heapq.heappush(riding, (trip.end_time + c, ordinal))
        served.append(trip.trip_id)
    _check_conservation(parked, riding, fleet, None)
    gaps: dict = {}
    by_id = day_trips.by_id()
    for trip_id in unmet:
        place = assign_place(by_id[trip_id].origin.point, vs).vs_id
        gaps[place] = gaps.get(place, 0) + 1
    days = day_trips.days()
    day = days[0] if days else plan.for_day
    report = UnmetReport.of(day, len(day_trips), len(unmet), gaps)
    result = SimResult(tuple(served), tuple(unmet), tuple(positions),
                       PlaceFlows.from_moves(moves))
    if __debug__:
        logging.debug('Replay of %s: %d bikes, %d served, %d unmet.',
                      day, fleet, len(served), len(unmet))
    return report, result


def fleet_metrics(active_fleet: int, fleet: int) -> float:
    """Fleet reduction ratio (active - fleet) / active."""
    if active_fleet <= 0:
        raise PreconditionError(
            f'Active fleet must be > 0, got: {active_fleet}')
    return (active_fleet - fleet) / active_fleet


def active_fleet_size(trips: Iterable) -> int:
    """Distinct source bikes used at least once."""
    return len({trip.bike_id_source for trip in trips
                if trip.bike_id_source})


def rrmse(series: Sequence[float], lag: int) -> float:
    """Relative RMSE of the series against itself `lag` steps earlier."""
    x = np.asarray(series, dtype=float)
    if lag < 1 or len(x) <= lag:
        raise PreconditionError(
            f'Lag {lag} needs more than {lag} values, got: {len(x)}')
    current = x[lag:]
    error = np.sqrt(np.mean((current - x[:-lag]) ** 2))
    return float(error / np.mean(current))


def summary_stats(series: Sequence[float],
                  paired_series: Optional[Sequence[float]] = None,
                  lags: Iterable[int] = (1, 7)) -> SeriesStats:
    """CV of a series, its correlation with a paired series, and lag RRMSE.

    CV uses the population standard deviation. Lags longer than the
    series are skipped.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < 2:
        raise PreconditionError(f'Need >= 2 values, got: {len(x)}')
    mean = np.mean(x)
    if mean == 0:
        raise PreconditionError('CV is undefined for a zero-mean series.')
    cv = float(np.std(x) / mean)
    pearson = r_squared = None
    if paired_series is not None:
        y = np.asarray(paired_series, dtype=float)
        if len(y) != len(x):
            raise PreconditionError(
                f'Paired series length {len(y)} != {len(x)}')
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            raise PreconditionError(
                'Correlation is undefined for a constant series.')
        fit = stats.linregress(x, y)
        pearson = float(fit.rvalue)
        r_squared = pearson ** 2
    lag_values = {lag: rrmse(x, lag) for lag in lags if len(x) > lag}
    return SeriesStats(cv, pearson, r_squared, pmap(lag_values))


def daily_series(trips_by_day: dict, fleets_by_day: dict) -> pd.DataFrame:
    """Per-day rows: date, trips, active_fleet, min_fleet."""
    return pd.DataFrame(
        [{'date': day.isoformat(), 'trips': len(trips),
          'active_fleet': active_fleet_size(trips),
          'min_fleet': fleets_by_day.get(day, 0)}
         for day, trips in sorted(trips_by_day.items())],
        columns=['date', 'trips', 'active_fleet', 'min_fleet'])


def full_calendar(dataset: TripSet) -> dict:
    """Day -> TripSet for every date between the first and last trip day;
    days without trips get an empty set."""
    by_day = split_by_day(dataset)
    if not by_day:
        return {}
    first, last = min(by_day), max(by_day)
    calendar = {}
    day = first
    while day <= last:
        calendar[day] = by_day.get(day, TripSet((), pmap()))
        day += datetime.timedelta(days=1)
    return calendar


def _solve_day(trips: TripSet, cfg: MatchConfig, places) -> FleetSolution:
    return build_min_fleet(trips, cfg, places)


def evaluable_days(calendar: dict, u_values: Sequence[int]) -> list:
    """Calendar days with max(u) days of history before them."""
    if not calendar:
        return []
    first = min(calendar) + datetime.timedelta(days=max(u_values))
    return [day for day in sorted(calendar) if day >= first]


@log_time
def run_pipeline(dataset: TripSet, cfg, window: Optional[Sequence] = None,
                 places=None, u_values: Sequence[int] = U_VALUES) \
        -> EvaluationReport:
    """Plan, score and rebalance every evaluation day for each window u.

    `cfg` is a RunConfig. Each day's actual demand comes from its own
    complete-information minimum fleet. In dockless mode the virtual
    stations are identified from days before the first evaluation day
    unless `places` is given.
    """
    match_cfg = cfg.match_config()
    calendar = full_calendar(dataset)
    if not calendar:
        raise PreconditionError('The dataset has no trips.')
    first_evaluable = min(calendar) + datetime.timedelta(days=max(u_values))
    candidates = evaluable_days(calendar, u_values)
    days = sorted(window) if window else candidates
    early = [day for day in days if day < first_evaluable]
    if not days or early:
        raise PreconditionError(
            f'Not enough history; the first evaluable date is '
            f'{first_evaluable.isoformat()}.')
    late = [day for day in days if day not in calendar]
    if late:
        raise PreconditionError(
            f'No trip data for {late[0].isoformat()}; the last date is '
            f'{max(calendar).isoformat()}.')
    if match_cfg.mode == DOCKLESS and places is None:
        history = {day: trips for day, trips in calendar.items()
                   if day < days[0] and len(trips)}
        places = identify_virtual_stations(history, cfg.clustering(),
                                           cfg.seed)
    solve = [day for day in sorted(calendar) if day <= days[-1]]
    solutions = dict(zip(solve, run_jobs(
        [(_solve_day, (calendar[day], match_cfg, places)) for day in solve],
        cfg.jobs)))
    profiles = [attrs.evolve(bike_demand_by_place(solutions[day], places),
                             day=day) for day in solve]
    rows = []
    for day in days:
        for u in sorted(u_values):
            plan = rolling_max_allocation(profiles, u, day)
            if match_cfg.mode == STATION:
                report = unmet_ratio_station(solutions[day], plan)
                unmet, dummy = unmet_chains_station(solutions[day], plan)
                flows = station_flows(solutions[day], unmet)
            else:
                report, sim = simulate_dockless_day(calendar[day], plan,
                                                    places, match_cfg)
                flows = sim.flows
            final = compute_final_distribution(plan, flows)
            # tomorrow's window ends today, so its plan is always known
            tomorrow = rolling_max_allocation(
                profiles, u, day + datetime.timedelta(days=1))
            moves = compute_rebalancing(final, tomorrow).total_moves
            rows.append(EvaluationRow(day, u, plan.fleet_size, moves,
                                      report))
            logging.info('%s u=%d: fleet %d, unmet %.4f, moves %s.',
                         day, u, plan.fleet_size, report.unmet_ratio, moves)
    return EvaluationReport(tuple(rows), match_cfg.mode, places)
