"""Run the fleet toolkit."""
from __future__ import annotations
import argparse
import datetime
import logging
from pathlib import Path
import sys
import pandas as pd
from pyrsistent import pmap
from allocator import (allocation_frame, compute_final_distribution,
                       compute_rebalancing, plan_days, rebalancing_frame)
from artifacts import Artifact
from evaluator import (daily_series, full_calendar, run_pipeline,
                       simulate_dockless_day, station_flows, summary_stats,
                       unmet_chains_station)
from fleet_config import RunConfig, parse_config_file
from fleet_utility import (FleetError, PreconditionError, SchemaError,
                           run_jobs)
from geo import VirtualStationSet, identify_virtual_stations
from ingest import (TripSet, clean_trips, parse_stations_file,
                    parse_trips_file, split_by_day, write_stations_csv,
                    write_trips_csv)
from matcher import (DemandProfile, bike_demand_by_place,
                     build_min_fleet)
from scenarios import (compare_platforms, sweep_artifact, sweep_frame,
                       sweep_usage_interval)
from synth import SynthConfig, generate_trips, place_anchors

EXIT_OK = 0
EXIT_IO = 2
DEMAND_COLUMNS = ['day', 'place_id', 'bike_demand']


def _add_common(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every command; None means not given."""
    parser.add_argument('--config', type=str,
                        help='flat key=value file mirroring the flags')
    parser.add_argument('--mode', type=str, choices=['sbbs', 'dbs'],
                        help='station-based or dockless (default: sbbs)')
    parser.add_argument('--w-meters', type=float,
                        help='walking radius in meters (default: 250)')
    parser.add_argument('--c-seconds', type=int,
                        help='usage interval in seconds (default: 0)')
    parser.add_argument('--u-days', type=int,
                        help='allocation window in days (default: 7)')
    parser.add_argument('--seed', type=int, help='root seed (default: 0)')
    parser.add_argument('--bounds', type=str,
                        help='min_lat,min_lon,max_lat,max_lon')
    parser.add_argument('--k', type=int, help='fixed number of stations')
    parser.add_argument('--k-grid', type=str,
                        help='comma-separated k values for the elbow')
    parser.add_argument('--n-init', type=int, help='k-means restarts')
    parser.add_argument('--eps-meters', type=float,
                        help='DBSCAN radius (default: 250)')
    parser.add_argument('--min-pts', type=int,
                        help='DBSCAN core size (default: 5)')
    parser.add_argument('--jobs', type=int,
                        help='worker threads across days (default: 1)')
    parser.add_argument('--out-dir', type=str,
                        help='directory of the outputs (default: .)')
    parser.add_argument('--logfile', type=str,
                        help='filename of the logfile (default: stderr)')
    parser.add_argument('--stations-file', type=str,
                        help='station registry CSV (sbbs) or stations '
                             'JSON (dbs)')
    parser.add_argument('--schema', type=str, choices=['sbbs', 'dbs'],
                        help='input schema (default: the mode)')
    parser.add_argument('--target-day', type=str, help='YYYY-MM-DD')
    parser.add_argument('--c-list', type=str,
                        help='usage intervals to sweep (default: '
                             '0,3600,21600)')
    parser.add_argument('--eval-start', type=str, help='YYYY-MM-DD')
    parser.add_argument('--eval-end', type=str, help='YYYY-MM-DD')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Minimize and allocate bike sharing fleets.')
    commands = parser.add_subparsers(dest='command', required=True)
    for name, help_text in [
            ('clean', 'drop defective trips'),
            ('stations', 'identify dockless virtual stations'),
            ('minfleet', 'minimum fleet and bike demand per day'),
            ('evaluate', 'plan, score and rebalance evaluation days'),
            ('rebalance', 'overnight move-ins after the target day'),
            ('describe', 'daily series and descriptive statistics')]:
        command = commands.add_parser(name, help=help_text)
        command.add_argument('trips', type=str,
                             help='filename of the trips CSV')
        _add_common(command)
    command = commands.add_parser('allocate', help='next-day plans')
    command.add_argument('demand', type=str,
                         help='demand CSV written by minfleet')
    _add_common(command)
    command = commands.add_parser('scenario', help='sensitivity analyses')
    command.add_argument('scenario', type=str,
                         choices=['distancing', 'platform'])
    command.add_argument('trips', type=str, help='filename of the trips CSV')
    _add_common(command)
    command = commands.add_parser('synth', help='synthetic trips')
    command.add_argument('--places', type=int, default=50)
    command.add_argument('--days', type=int, default=14)
    command.add_argument('--trips-per-day', type=int, default=5000)
    command.add_argument('--weekend-factor', type=float, default=0.6)
    command.add_argument('--companies', type=int, default=1)
    command.add_argument('--start-date', type=str, default='2020-01-06')
    _add_common(command)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    flags = {'mode': args.mode, 'w': args.w_meters, 'c': args.c_seconds,
             'u': args.u_days, 'seed': args.seed, 'bounds': args.bounds,
             'k': args.k, 'k_grid': args.k_grid, 'n_init': args.n_init,
             'eps': args.eps_meters, 'min_pts': args.min_pts,
             'jobs': args.jobs, 'out_dir': args.out_dir,
             'logfile': args.logfile, 'stations_file': args.stations_file,
             'schema': args.schema, 'target_day': args.target_day,
             'c_list': args.c_list, 'eval_start': args.eval_start,
             'eval_end': args.eval_end}
    return RunConfig.resolve(file_values, flags)


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.out_dir) / name


def _save_frame(frame: pd.DataFrame, filename) -> None:
    frame.to_csv(filename, index=False, lineterminator='\n')


def load_trips(cfg: RunConfig, filename: str) -> tuple:
    """Parse and clean a trips file under the run's bounds."""
    raw = parse_trips_file(filename, cfg.schema_name())
    stations = None
    if cfg.mode == 'sbbs' and cfg.stations_file:
        stations = parse_stations_file(cfg.stations_file)
    return clean_trips(raw, cfg.bounds_rect(), stations)


def load_places(cfg: RunConfig):
    """Virtual stations from --stations-file in dockless mode."""
    if cfg.mode != 'dbs' or not cfg.stations_file:
        return None
    return VirtualStationSet.from_artifact(
        Artifact.from_file(cfg.stations_file))


def _only_day(trips: TripSet, day) -> TripSet:
    if day is None:
        return trips
    return split_by_day(trips).get(day, TripSet((), pmap()))


def cmd_clean(cfg: RunConfig, args) -> None:
    trips, report = load_trips(cfg, args.trips)
    write_trips_csv(trips, cfg.schema_name(), _out(cfg, 'cleaned.csv'),
                    include_trip_id=True)
    report.to_artifact().save(_out(cfg, 'cleaning-report.json'))
    print(f'kept {report.kept} of {report.total_rows} rows')


def cmd_stations(cfg: RunConfig, args) -> None:
    trips, dummy = load_trips(cfg, args.trips)
    history = split_by_day(_only_day(trips, cfg.date('target_day')))
    places = identify_virtual_stations(history, cfg.clustering(), cfg.seed)
    places.to_artifact().save(_out(cfg, 'stations.json'))
    _save_frame(places.to_frame(), _out(cfg, 'stations.csv'))
    print(f'{len(places)} virtual stations')


def _solve_days(cfg: RunConfig, trips: TripSet, places) -> dict:
    by_day = split_by_day(trips)
    match_cfg = cfg.match_config()
    days = sorted(by_day)
    return dict(zip(days, run_jobs(
        [(build_min_fleet, (by_day[day], match_cfg, places))
         for day in days], cfg.jobs)))


def cmd_minfleet(cfg: RunConfig, args) -> None:
    trips, dummy = load_trips(cfg, args.trips)
    places = load_places(cfg)
    solutions = _solve_days(cfg, _only_day(trips, cfg.date('target_day')),
                            places)
    fleet_rows = []
    demand = []
    for day, sol in solutions.items():
        sol.to_artifact().save(_out(cfg, f'fleet-{day.isoformat()}.json'))
        fleet_rows.append({'day': day.isoformat(),
                           'trips': sum(len(chain.trip_ids)
                                        for chain in sol.chains),
                           'fleet_size': sol.fleet_size})
        if cfg.mode == 'sbbs' or places is not None:
            demand.append(bike_demand_by_place(sol, places).to_frame())
        print(f'{day.isoformat()}: fleet {sol.fleet_size}')
    _save_frame(pd.DataFrame(fleet_rows, columns=['day', 'trips',
                                                  'fleet_size']),
                _out(cfg, 'fleet.csv'))
    if demand:
        _save_frame(pd.concat(demand, ignore_index=True),
                    _out(cfg, 'demand.csv'))
    elif cfg.mode == 'dbs':
        logging.warning('No --stations-file; demand.csv not written.')


def read_demand(filename) -> list[DemandProfile]:
    """Profiles of every day from the first to the last demand row."""
    try:
        frame = pd.read_csv(filename, dtype={'day': str})
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as err:
        raise SchemaError(f'{filename}: unreadable demand CSV') from err
    if list(frame.columns) != DEMAND_COLUMNS:
        raise SchemaError(f'{filename}: expected columns {DEMAND_COLUMNS}, '
                          f'got: {list(frame.columns)}')
    counts: dict = {}
    for row in frame.itertuples(index=False):
        try:
            day = datetime.date.fromisoformat(str(row.day))
            place, demand = int(row.place_id), int(row.bike_demand)
        except ValueError as err:
            raise SchemaError(f'{filename}: bad demand row {tuple(row)}') \
                from err
        counts.setdefault(day, {})[place] = demand
    if not counts:
        return []
    profiles = []
    day, last = min(counts), max(counts)
    while day <= last:
        profiles.append(DemandProfile(day, pmap(counts.get(day, {}))))
        day += datetime.timedelta(days=1)
    return profiles


def cmd_allocate(cfg: RunConfig, args) -> None:
    profiles = read_demand(args.demand)
    if not profiles:
        raise PreconditionError(f'{args.demand} holds no demand rows.')
    target = cfg.date('target_day')
    if target is not None:
        targets = [target]
    else:
        first = profiles[0].day + datetime.timedelta(days=cfg.u)
        last = profiles[-1].day + datetime.timedelta(days=1)
        targets = [first + datetime.timedelta(days=offset)
                   for offset in range((last - first).days + 1)]
    plans = plan_days(profiles, cfg.u, targets)
    for plan in plans:
        plan.to_artifact().save(
            _out(cfg, f'allocation-{plan.for_day.isoformat()}.json'))
        print(f'{plan.for_day.isoformat()}: recommended fleet '
              f'{plan.fleet_size}')
    _save_frame(allocation_frame(plans), _out(cfg, 'allocation.csv'))


def cmd_rebalance(cfg: RunConfig, args) -> None:
    day = cfg.date('target_day')
    if day is None:
        raise PreconditionError('rebalance needs --target-day.')
    trips, dummy = load_trips(cfg, args.trips)
    calendar = full_calendar(trips)
    places = load_places(cfg)
    if cfg.mode == 'dbs' and places is None:
        history = {d: t for d, t in calendar.items() if d < day and len(t)}
        places = identify_virtual_stations(history, cfg.clustering(),
                                           cfg.seed)
    known = {d: t for d, t in calendar.items() if d <= day}
    solutions = _solve_days(cfg, TripSet.from_trips(
        trip for part in known.values() for trip in part.trips), places)
    profiles = [DemandProfile(d, bike_demand_by_place(
        solutions[d], places).demand if d in solutions else pmap())
        for d in sorted(known)]
    today, tomorrow = plan_days(profiles, cfg.u,
                                [day, day + datetime.timedelta(days=1)])
    if cfg.mode == 'sbbs':
        unmet, dummy = unmet_chains_station(solutions[day], today)
        flows = station_flows(solutions[day], unmet)
    else:
        dummy, sim = simulate_dockless_day(calendar[day], today, places,
                                           cfg.match_config())
        flows = sim.flows
    rebalancing = compute_rebalancing(
        compute_final_distribution(today, flows), tomorrow)
    rebalancing.to_artifact().save(_out(cfg, 'rebalancing.json'))
    _save_frame(rebalancing_frame([rebalancing]),
                _out(cfg, 'rebalancing.csv'))
    print(f'{rebalancing.for_day.isoformat()}: {rebalancing.total_moves} '
          'move-ins')


def cmd_evaluate(cfg: RunConfig, args) -> None:
    trips, dummy = load_trips(cfg, args.trips)
    start, end = cfg.date('eval_start'), cfg.date('eval_end')
    window = None
    if start or end:
        calendar = full_calendar(trips)
        window = [day for day in calendar
                  if (start is None or day >= start)
                  and (end is None or day <= end)]
    report = run_pipeline(trips, cfg, window, places=load_places(cfg),
                          u_values=sorted({1, cfg.u}))
    _save_frame(report.to_frame(), _out(cfg, 'evaluation.csv'))
    report.to_artifact().save(_out(cfg, 'evaluation.json'))
    if report.places is not None and not cfg.stations_file:
        report.places.to_artifact().save(_out(cfg, 'stations.json'))
    for row in report.rows:
        print(f'{row.date.isoformat()} u={row.u_days}: '
              f'fleet {row.recommended_fleet}, '
              f'moves {row.repositioning_next_day}, '
              f'unmet {row.unmet_trip_ratio:.4f}')


def cmd_scenario(cfg: RunConfig, args) -> None:
    trips, dummy = load_trips(cfg, args.trips)
    trips = _only_day(trips, cfg.date('target_day'))
    if args.scenario == 'distancing':
        rows = sweep_usage_interval(trips, cfg.match_config(), cfg.c_list,
                                    cfg.jobs)
        _save_frame(sweep_frame(rows), _out(cfg, 'distancing.csv'))
        sweep_artifact(rows, cfg.to_dict()).save(
            _out(cfg, 'distancing.json'))
        for row in rows:
            print(f'c={row.c}: fleet {row.fleet_size} '
                  f'(+{row.relative_increase:.1%})')
    else:
        comparison = compare_platforms(trips, cfg.match_config(),
                                       jobs=cfg.jobs)
        _save_frame(comparison.to_frame(), _out(cfg, 'platform.csv'))
        comparison.to_artifact(cfg.to_dict()).save(
            _out(cfg, 'platform.json'))
        print(f'merged fleet {comparison.merged_fleet} vs '
              f'{comparison.fleet_sum} '
              f'({comparison.reduction_vs_sum:.1%} reduction)')


def cmd_synth(cfg: RunConfig, args) -> None:
    try:
        start_date = datetime.date.fromisoformat(args.start_date)
    except ValueError as err:
        raise PreconditionError(
            f'--start-date is not a YYYY-MM-DD date, got: {args.start_date}'
        ) from err
    synth_cfg = SynthConfig(
        n_places=args.places, bbox=cfg.bounds_rect() if cfg.bounds
        else SynthConfig().bbox, days=args.days,
        base_daily_trips=args.trips_per_day,
        weekend_factor=args.weekend_factor,
        mode='dockless' if cfg.mode == 'dbs' else 'station',
        n_companies=args.companies,
        start_date=start_date,
        seed=cfg.seed)
    trips = generate_trips(synth_cfg)
    write_trips_csv(trips, cfg.mode, _out(cfg, 'trips.csv'),
                    include_trip_id=True)
    if synth_cfg.mode == 'station':
        write_stations_csv(place_anchors(synth_cfg),
                           _out(cfg, 'stations.csv'))
    synth_cfg.to_artifact().save(_out(cfg, 'synth-config.json'))
    print(f'{len(trips)} trips')


def cmd_describe(cfg: RunConfig, args) -> None:
    trips, dummy = load_trips(cfg, args.trips)
    calendar = full_calendar(trips)
    solutions = _solve_days(cfg, trips, None)
    fleets = {day: sol.fleet_size for day, sol in solutions.items()}
    frame = daily_series(calendar, fleets)
    _save_frame(frame, _out(cfg, 'daily-series.csv'))
    series_stats = summary_stats(frame['trips'].tolist(),
                                 frame['min_fleet'].tolist())
    series_stats.to_artifact().save(_out(cfg, 'stats.json'))
    print(f'CV {series_stats.cv:.3f}, r {series_stats.pearson_r:.3f}')


COMMANDS = {
    'clean': cmd_clean,
    'stations': cmd_stations,
    'minfleet': cmd_minfleet,
    'allocate': cmd_allocate,
    'rebalance': cmd_rebalance,
    'evaluate': cmd_evaluate,
    'scenario': cmd_scenario,
    'synth': cmd_synth,
    'describe': cmd_describe,
}


def main(argv=None) -> int:
    """Main; returns the exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        logging.basicConfig(
            filename=cfg.logfile, filemode='w',
            level=logging.DEBUG,
            format='[%(asctime)s] %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S',
            force=True
        )
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        cfg.to_artifact(args.command).save(
            _out(cfg, 'resolved-config.json'))
        COMMANDS[args.command](cfg, args)
    except FleetError as err:
        logging.error('%s: %s', type(err).__name__, err)
        print(f'error: {err}', file=sys.stderr)
        return err.exit_code
    except OSError as err:
        logging.error('I/O error: %s', err)
        print(f'error: {err}', file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
