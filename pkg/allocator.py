"""Next-day allocation plans and static rebalancing between days.

The plan for a day allocates to every place the largest bike demand the
place had over the `u` preceding days. After the day has been served, the
bikes are repositioned overnight from where they ended to where the next
plan wants them; only move-ins are counted.
"""
from __future__ import annotations
import datetime
import logging
from typing import Iterable, Sequence
import attrs
import pandas as pd
from pyrsistent import pmap
from artifacts import Artifact
from fleet_utility import ConsistencyError, PreconditionError


@attrs.frozen
class AllocationPlan:
    for_day: datetime.date
    allocation: object  # pmap place_id -> bikes
    window_u: int
    source_days: tuple

    @property
    def fleet_size(self) -> int:
        """Recommended fleet size."""
        return sum(self.allocation.values())

    def get(self, place) -> int:
        return self.allocation.get(place, 0)

    def to_artifact(self) -> Artifact:
        return Artifact('allocation',
                        for_day=self.for_day.isoformat(),
                        window_u=self.window_u,
                        source_days=[day.isoformat()
                                     for day in self.source_days],
                        recommended_fleet=self.fleet_size,
                        counts=_records(self.allocation))


@attrs.frozen
class PlaceCounts:
    """Bikes at each place at the end of a day."""
    day: datetime.date
    at_end: object  # pmap place_id -> bikes

    @property
    def total(self) -> int:
        return sum(self.at_end.values())


@attrs.frozen
class PlaceFlows:
    """Served trips leaving (outflow) and entering (inflow) each place."""
    outflow: object = pmap()
    inflow: object = pmap()

    @staticmethod
    def from_moves(moves: Iterable[tuple]) -> PlaceFlows:
        """Flows of (from_place, to_place) pairs, one per served trip."""
        outflow: dict = {}
        inflow: dict = {}
        for source, target in moves:
            outflow[source] = outflow.get(source, 0) + 1
            inflow[target] = inflow.get(target, 0) + 1
        return PlaceFlows(pmap(outflow), pmap(inflow))


@attrs.frozen
class RebalancingPlan:
    for_day: datetime.date
    move_in: object  # pmap place_id -> bikes
    total_moves: int

    def to_artifact(self) -> Artifact:
        return Artifact('rebalancing',
                        for_day=self.for_day.isoformat(),
                        total_moves=self.total_moves,
                        counts=_records(self.move_in))


def _records(counts) -> list[dict]:
    return [{'place_id': place, 'count': count}
            for place, count in sorted(counts.items())]


def rolling_max_allocation(history: Sequence, u: int,
                           target_day: datetime.date) -> AllocationPlan:
    """Allocate max demand over the `u` days before `target_day`.

    `history` holds DemandProfile objects; days outside the window are
    ignored. Places absent from a profile had zero demand that day.
    """
    if u < 1:
        raise PreconditionError(f'Window u must be >= 1, got: {u}')
    by_day = {profile.day: profile for profile in history}
    window = [target_day - datetime.timedelta(days=offset)
              for offset in range(u, 0, -1)]
    missing = [day for day in window if day not in by_day]
    if missing:
        raise PreconditionError(
            f'Allocation for {target_day} needs demand on '
            f'{", ".join(day.isoformat() for day in missing)}.')
    allocation: dict = {}
    for day in window:
        for place, count in by_day[day].demand.items():
            allocation[place] = max(allocation.get(place, 0), count)
    if __debug__:
        logging.debug('Plan for %s (u=%d): %d bikes at %d places.',
                      target_day, u, sum(allocation.values()),
                      len(allocation))
    return AllocationPlan(target_day, pmap(dict(sorted(allocation.items()))),
                          u, tuple(window))


def plan_days(profiles: Sequence, u: int,
              target_days: Iterable[datetime.date]) -> list[AllocationPlan]:
    """One plan per target day, in the given order."""
    return [rolling_max_allocation(profiles, u, day) for day in target_days]


def compute_final_distribution(initial: AllocationPlan,
                               flows: PlaceFlows) -> PlaceCounts:
    """Bikes per place after the day's served trips moved them."""
    places = set(initial.allocation) | set(flows.inflow) | set(flows.outflow)
    at_end = {}
    for place in sorted(places):
        count = initial.get(place) + flows.inflow.get(place, 0) \
            - flows.outflow.get(place, 0)
        if count < 0:
            raise ConsistencyError(
                f'Place {place} ends {initial.for_day} with {count} bikes; '
                'flows do not come from this plan.')
        at_end[place] = count
    return PlaceCounts(initial.for_day, pmap(at_end))


def compute_rebalancing(final_today: PlaceCounts,
                        plan_tomorrow: AllocationPlan) -> RebalancingPlan:
    """Overnight move-ins so every place starts tomorrow at its plan.

    Surplus bikes stay where they are.
    """
    move_in = {place: max(0, count - final_today.at_end.get(place, 0))
               for place, count in sorted(plan_tomorrow.allocation.items())}
    return RebalancingPlan(plan_tomorrow.for_day, pmap(move_in),
                           sum(move_in.values()))


def allocation_frame(plans: Iterable[AllocationPlan]) -> pd.DataFrame:
    """Rows day,place_id,count over several plans."""
    return pd.DataFrame(
        [{'day': plan.for_day.isoformat(), 'place_id': place, 'count': count}
         for plan in plans for place, count in sorted(plan.allocation.items())],
        columns=['day', 'place_id', 'count'])


def rebalancing_frame(plans: Iterable[RebalancingPlan]) -> pd.DataFrame:
    """Rows day,place_id,count of move-ins."""
    return pd.DataFrame(
        [{'day': plan.for_day.isoformat(), 'place_id': place, 'count': count}
         for plan in plans for place, count in sorted(plan.move_in.items())],
        columns=['day', 'place_id', 'count'])
