"""Sensitivity analyses: user distancing and a single shared platform."""
from __future__ import annotations
import logging
from typing import Optional, Sequence
import attrs
import pandas as pd
from pyrsistent import pmap
from artifacts import Artifact
from evaluator import active_fleet_size, fleet_metrics
from fleet_utility import PreconditionError, run_jobs
from ingest import TripSet, split_by_company, split_by_day
from matcher import MatchConfig, build_min_fleet


@attrs.frozen
class SweepRow:
    c: int
    fleet_size: int
    relative_increase: float


@attrs.frozen
class CompanyFleet:
    trips: int
    fleet_size: int
    bike_turnover: float
    active_fleet: int
    fleet_reduction: Optional[float]


@attrs.frozen
class PlatformComparison:
    per_company: object  # pmap company_id -> CompanyFleet
    merged_fleet: int
    reduction_vs_sum: float
    window_days: int
    single_company: bool = False

    @property
    def fleet_sum(self) -> int:
        return sum(company.fleet_size
                   for company in self.per_company.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{'company_id': company_id, 'trips': company.trips,
              'fleet_size': company.fleet_size,
              'bike_turnover': company.bike_turnover,
              'active_fleet': company.active_fleet,
              'fleet_reduction': company.fleet_reduction}
             for company_id, company in sorted(self.per_company.items())],
            columns=['company_id', 'trips', 'fleet_size', 'bike_turnover',
                     'active_fleet', 'fleet_reduction'])

    def to_artifact(self, config: dict) -> Artifact:
        return Artifact('scenario', scenario='platform', config=config,
                        window_days=self.window_days,
                        merged_fleet=self.merged_fleet,
                        fleet_sum=self.fleet_sum,
                        reduction_vs_sum=self.reduction_vs_sum,
                        single_company=self.single_company,
                        rows=[{'company_id': company_id,
                               **attrs.asdict(company)}
                              for company_id, company
                              in sorted(self.per_company.items())])


def window_fleet(trips: TripSet, cfg: MatchConfig, places=None,
                 jobs: int = 1) -> int:
    """Largest daily minimum fleet over the days the trips span."""
    days = split_by_day(trips)
    fleets = run_jobs([(build_min_fleet, (days[day], cfg, places))
                       for day in sorted(days)], jobs)
    return max((sol.fleet_size for sol in fleets), default=0)


def sweep_usage_interval(day_trips: TripSet, cfg: MatchConfig,
                         c_values: Sequence[int],
                         jobs: int = 1) -> list[SweepRow]:
    """Minimum fleet for each usage interval, relative to c=0."""
    c_values = list(c_values)
    if c_values != sorted(set(c_values)) or 0 not in c_values:
        raise PreconditionError(
            f'c values must ascend and include 0, got: {c_values}')
    fleets = [window_fleet(day_trips,
                           attrs.evolve(cfg, usage_interval_c=int(c)),
                           jobs=jobs)
              for c in c_values]
    base = fleets[0]
    rows = [SweepRow(int(c), fleet, (fleet - base) / base if base else 0.0)
            for c, fleet in zip(c_values, fleets)]
    if __debug__:
        logging.debug('Sweep: %s', rows)
    return rows


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([attrs.asdict(row) for row in rows],
                        columns=['c', 'fleet_size', 'relative_increase'])


def sweep_artifact(rows: Sequence[SweepRow], config: dict) -> Artifact:
    return Artifact('scenario', scenario='distancing', config=config,
                    rows=sweep_frame(rows).to_dict(orient='records'))


def compare_platforms(trips: TripSet, cfg: MatchConfig, places=None,
                      jobs: int = 1) -> PlatformComparison:
    """Fleets of companies operating apart versus one merged platform.

    Turnover is trips per bike over the whole window; fleet reduction is
    measured against a company's active fleet when its trips carry source
    bike ids.
    """
    companies = split_by_company(trips)
    if not companies:
        raise PreconditionError('No trips to compare.')
    single = len(companies) == 1
    if single:
        logging.warning('Only one company present; the merged platform '
                        'cannot reduce the fleet.')
    fleets = run_jobs([(window_fleet, (company_trips, cfg, places))
                       for company_trips in companies.values()], jobs)
    per_company = {}
    for (company_id, company_trips), fleet in zip(companies.items(), fleets):
        active = active_fleet_size(company_trips)
        per_company[company_id] = CompanyFleet(
            len(company_trips), fleet,
            len(company_trips) / fleet if fleet else 0.0, active,
            fleet_metrics(active, fleet) if active else None)
    merged = window_fleet(trips, cfg, places, jobs)
    total = sum(company.fleet_size for company in per_company.values())
    reduction = 1 - merged / total if total and not single else 0.0
    logging.info('Merged fleet %d vs %d across %d companies.',
                 merged, total, len(per_company))
    return PlatformComparison(pmap(per_company), merged, reduction,
                              len(trips.days()), single)
