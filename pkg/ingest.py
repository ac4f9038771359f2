"""Parsing, cleaning and partitioning trip datasets.

Two input schemas are supported:

- `sbbs`: station-based trips, origins and destinations are station ids
- `dbs`: dockless trips, origins and destinations are coordinates

Times are local civil time, `YYYY-MM-DD HH:MM:SS`, stored as integer
seconds since 1970-01-01 00:00:00 without any timezone arithmetic.
"""
from __future__ import annotations
import datetime
import io
import logging
from typing import Iterable, Optional
import attrs
import numpy as np
import pandas as pd
from pyrsistent import pmap
from artifacts import Artifact
from fleet_utility import DataError, PreconditionError, SchemaError, log_time

TIME_FORMAT = '%Y-%m-%d %H:%M:%S'
EPOCH = datetime.datetime(1970, 1, 1)
EPOCH_DATE = EPOCH.date()
SECONDS_PER_DAY = 86400

SCHEMAS = {
    'sbbs': ['bike_id', 'user_id', 'start_time', 'start_station',
             'end_time', 'end_station'],
    'dbs': ['bike_id', 'company_id', 'start_time', 'start_lon', 'start_lat',
            'end_time', 'end_lon', 'end_lat'],
}
STATION_COLUMNS = ['station_id', 'station_name', 'lat', 'lon']

MISSING_TIME = 'missing_time'
MISSING_PLACE = 'missing_place'


def _check_lat(instance, attribute, value):
    if not -90.0 <= value <= 90.0:
        raise ValueError(f'{attribute.name} out of range, got: {value}')


def _check_lon(instance, attribute, value):
    if not -180.0 <= value <= 180.0:
        raise ValueError(f'{attribute.name} out of range, got: {value}')


@attrs.frozen
class GeoPoint:
    """A position in degrees."""
    lat: float = attrs.field(converter=float, validator=_check_lat)
    lon: float = attrs.field(converter=float, validator=_check_lon)


@attrs.frozen
class PlaceRef:
    """Either a station id or a coordinate."""
    kind: str
    station_id: Optional[int] = None
    point: Optional[GeoPoint] = None

    def __attrs_post_init__(self):
        if self.kind == 'station':
            if self.station_id is None or self.point is not None:
                raise ValueError('station place needs exactly a station_id')
        elif self.kind == 'coordinate':
            if self.point is None or self.station_id is not None:
                raise ValueError('coordinate place needs exactly a point')
        else:
            raise ValueError(f'Unknown place kind, got: {self.kind}')

    @staticmethod
    def station(station_id: int) -> PlaceRef:
        """Place at a docking station."""
        return PlaceRef('station', station_id=int(station_id))

    @staticmethod
    def coordinate(lat: float, lon: float) -> PlaceRef:
        """Free-floating place."""
        return PlaceRef('coordinate', point=GeoPoint(lat, lon))


@attrs.frozen
class Trip:
    """One ride: origin, start time, destination, end time."""
    trip_id: int
    origin: PlaceRef
    destination: PlaceRef
    start_time: int
    end_time: int
    company_id: Optional[int] = None
    bike_id_source: Optional[str] = None
    user_id_source: Optional[str] = None

    @property
    def key(self) -> tuple[int, int]:
        """Total sort order of trips."""
        return (self.start_time, self.trip_id)


@attrs.frozen
class Reject:
    """A row that could not become a trip candidate."""
    row_number: int
    reason: str


@attrs.frozen
class RawTrips:
    """Output of parsing: candidates plus rejected rows."""
    schema: str
    candidates: tuple
    rejects: tuple = ()

    @property
    def total_rows(self) -> int:
        return len(self.candidates) + len(self.rejects)


@attrs.frozen
class Bounds:
    """Inclusive lat/lon rectangle."""
    min_lat: float = attrs.field(converter=float)
    min_lon: float = attrs.field(converter=float)
    max_lat: float = attrs.field(converter=float)
    max_lon: float = attrs.field(converter=float)

    def __attrs_post_init__(self):
        if not (self.min_lat < self.max_lat and self.min_lon < self.max_lon):
            raise PreconditionError(f'Degenerate bounds: {self}')

    def contains(self, point: GeoPoint) -> bool:
        """Test whether the point lies in the rectangle."""
        return self.min_lat <= point.lat <= self.max_lat \
            and self.min_lon <= point.lon <= self.max_lon

    def to_string(self) -> str:
        return f'{self.min_lat},{self.min_lon},{self.max_lat},{self.max_lon}'

    @staticmethod
    def from_string(text: str) -> Bounds:
        """Parse `min_lat,min_lon,max_lat,max_lon`."""
        parts = text.split(',')
        if len(parts) != 4:
            raise PreconditionError(
                f'Bounds need 4 comma-separated values, got: {text}')
        return Bounds(*parts)


@attrs.frozen
class CleaningReport:
    """Counts of the cleaning rules; kept + drops == total_rows."""
    total_rows: int
    dropped_missing_time: int
    dropped_missing_place: int
    dropped_out_of_bounds: int
    dropped_inverted_time: int
    kept: int
    empty_result: bool = False

    def dropped(self) -> int:
        return self.dropped_missing_time + self.dropped_missing_place + \
            self.dropped_out_of_bounds + self.dropped_inverted_time

    def to_artifact(self) -> Artifact:
        return Artifact('cleaning-report', **attrs.asdict(self))


@attrs.frozen
class TripSet:
    """Trips sorted by (start_time, trip_id) with a per-day index."""
    trips: tuple
    day_index: object  # pmap date -> (first, last + 1)

    def __len__(self) -> int:
        return len(self.trips)

    def __iter__(self):
        return iter(self.trips)

    def days(self) -> list[datetime.date]:
        """Civil dates present, ascending."""
        return sorted(self.day_index.keys())

    def by_id(self) -> dict[int, Trip]:
        """Map trip_id -> Trip."""
        return {trip.trip_id: trip for trip in self.trips}

    @staticmethod
    def from_trips(trips: Iterable[Trip]) -> TripSet:
        """Sort trips and build the day index.

        Duplicate trip ids raise a DataError.
        """
        ordered = sorted(trips, key=lambda trip: trip.key)
        seen = set()
        for trip in ordered:
            if trip.trip_id in seen:
                raise DataError(f'Duplicate trip_id: {trip.trip_id}')
            seen.add(trip.trip_id)
        return TripSet(tuple(ordered), _build_day_index(ordered))


def _build_day_index(ordered: list[Trip]):
    index = {}
    for position, trip in enumerate(ordered):
        day = day_of(trip.start_time)
        first, dummy = index.get(day, (position, position))
        index[day] = (first, position + 1)
    return pmap(index)


def day_of(seconds: int) -> datetime.date:
    """Civil date of a timestamp."""
    return EPOCH_DATE + datetime.timedelta(days=seconds // SECONDS_PER_DAY)


def day_start(day: datetime.date) -> int:
    """Timestamp of midnight at the start of the civil date."""
    return (day - EPOCH_DATE).days * SECONDS_PER_DAY


def parse_time(text: str) -> int:
    """Parse a `YYYY-MM-DD HH:MM:SS` string to seconds."""
    moment = datetime.datetime.strptime(text.strip(), TIME_FORMAT)
    return int((moment - EPOCH).total_seconds())


def format_time(seconds: int) -> str:
    """Inverse of parse_time."""
    moment = EPOCH + datetime.timedelta(seconds=int(seconds))
    return moment.strftime(TIME_FORMAT)


def _read_frame(stream, expected: list[str], what: str) -> pd.DataFrame:
    """Read a CSV as strings and check its header."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    try:
        # rows with too many fields are blanked so they reject in place
        frame = pd.read_csv(stream, dtype=str, keep_default_na=False,
                            na_filter=False, skipinitialspace=True,
                            engine='python',
                            on_bad_lines=lambda fields: [''] * len(expected))
    except pd.errors.EmptyDataError as err:
        raise SchemaError(f'{what}: unreadable header') from err
    except pd.errors.ParserError as err:
        raise SchemaError(f'{what}: {err}') from err
    columns = [column.strip() for column in frame.columns]
    if columns != expected:
        raise SchemaError(
            f'{what}: header {",".join(columns)} does not match '
            f'{",".join(expected)}')
    frame.columns = columns
    return frame.fillna('')


def _to_seconds(column: pd.Series) -> np.ndarray:
    """Vectorized timestamp parsing; NaN where missing or malformed."""
    moments = pd.to_datetime(column.str.strip(), format=TIME_FORMAT,
                             errors='coerce')
    return ((moments - EPOCH) / pd.Timedelta(seconds=1)).to_numpy(
        dtype=float, na_value=np.nan)


def _to_numbers(column: pd.Series) -> np.ndarray:
    return pd.to_numeric(column.str.strip(), errors='coerce').to_numpy(
        dtype=float, na_value=np.nan)


def _optional_text(value: str) -> Optional[str]:
    value = value.strip()
    return value if value else None


def _valid_coordinate(lat: float, lon: float) -> bool:
    return not (np.isnan(lat) or np.isnan(lon)) \
        and -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0


def _valid_station(value: float) -> bool:
    return not np.isnan(value) and float(value).is_integer()


@log_time
def parse_trips(stream, schema: str) -> RawTrips:
    """Parse trip rows of the declared schema.

    `stream` is CSV text or a readable text stream. An optional leading
    `trip_id` column is accepted. Every well-formed row becomes a Trip
    candidate, other rows become rejects with their line number.
    """
    if schema not in SCHEMAS:
        raise SchemaError(f'Unknown schema, got: {schema}')
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = stream.readline()
    columns = [column.strip() for column in header.split(',')]
    has_trip_id = bool(columns) and columns[0] == 'trip_id'
    expected = (['trip_id'] if has_trip_id else []) + SCHEMAS[schema]
    frame = _read_frame(io.StringIO(header + stream.read()),
                        expected, f'{schema} trips')
    starts = _to_seconds(frame['start_time'])
    ends = _to_seconds(frame['end_time'])
    if schema == 'sbbs':
        origins = (_to_numbers(frame['start_station']),)
        destinations = (_to_numbers(frame['end_station']),)
    else:
        origins = (_to_numbers(frame['start_lat']),
                   _to_numbers(frame['start_lon']))
        destinations = (_to_numbers(frame['end_lat']),
                        _to_numbers(frame['end_lon']))

    candidates = []
    rejects = []
    seen_ids = set()
    for i in range(len(frame)):
        row_number = i + 2  # header is line 1
        if np.isnan(starts[i]) or np.isnan(ends[i]):
            rejects.append(Reject(row_number, MISSING_TIME))
            continue
        if schema == 'sbbs':
            if not (_valid_station(origins[0][i])
                    and _valid_station(destinations[0][i])):
                rejects.append(Reject(row_number, MISSING_PLACE))
                continue
            origin = PlaceRef.station(int(origins[0][i]))
            destination = PlaceRef.station(int(destinations[0][i]))
            company_id = None
            user_id = _optional_text(frame['user_id'].iat[i])
        else:
            if not (_valid_coordinate(origins[0][i], origins[1][i])
                    and _valid_coordinate(destinations[0][i],
                                          destinations[1][i])):
                rejects.append(Reject(row_number, MISSING_PLACE))
                continue
            origin = PlaceRef.coordinate(origins[0][i], origins[1][i])
            destination = PlaceRef.coordinate(
                destinations[0][i], destinations[1][i])
            company_text = frame['company_id'].iat[i].strip()
            company_id = int(company_text) if company_text.isdigit() else None
            user_id = None
        if has_trip_id:
            id_text = frame['trip_id'].iat[i].strip()
            if not id_text.isdigit():
                raise DataError(f'Row {row_number}: bad trip_id {id_text!r}')
            trip_id = int(id_text)
            if trip_id in seen_ids:
                raise DataError(
                    f'Row {row_number}: duplicate trip_id {trip_id}')
            seen_ids.add(trip_id)
        else:
            trip_id = len(candidates)
        candidates.append(Trip(
            trip_id=trip_id,
            origin=origin,
            destination=destination,
            start_time=int(starts[i]),
            end_time=int(ends[i]),
            company_id=company_id,
            bike_id_source=_optional_text(frame['bike_id'].iat[i]),
            user_id_source=user_id,
        ))
    if __debug__:
        logging.debug('Parsed %d candidates and %d rejects (%s).',
                      len(candidates), len(rejects), schema)
    return RawTrips(schema, tuple(candidates), tuple(rejects))


def parse_trips_file(filename, schema: str) -> RawTrips:
    """Parses trips from a file."""
    with open(filename, 'r', encoding='utf-8', errors='replace',
              newline='') as file_in:
        return parse_trips(file_in, schema)


def parse_stations(stream) -> dict[int, GeoPoint]:
    """Parses a station registry `station_id,station_name,lat,lon`."""
    frame = _read_frame(stream, STATION_COLUMNS, 'station registry')
    stations = {}
    for row in frame.itertuples(index=False):
        try:
            station_id = int(row.station_id)
            point = GeoPoint(row.lat, row.lon)
        except ValueError as err:
            raise DataError(f'Bad station row {tuple(row)}: {err}') from err
        if station_id in stations:
            raise DataError(f'Duplicate station_id: {station_id}')
        stations[station_id] = point
    return stations


def parse_stations_file(filename) -> dict[int, GeoPoint]:
    """Parses a station registry from a file."""
    with open(filename, 'r', encoding='utf-8', errors='replace',
              newline='') as file_in:
        return parse_stations(file_in)


def _resolve(place: PlaceRef, stations: Optional[dict]) -> Optional[GeoPoint]:
    """Coordinates of a place, None when a station is unknown."""
    if place.kind == 'coordinate':
        return place.point
    if stations is None:
        return None
    return stations.get(place.station_id)


@log_time
def clean_trips(raw, bounds: Bounds,
                stations: Optional[dict[int, GeoPoint]] = None) \
        -> tuple[TripSet, CleaningReport]:
    """Apply the cleaning rules and count what each rule removed.

    Rules, first failing rule counts:
    (a) both times present, (b) both places present,
    (c) both places inside bounds, (d) start_time <= end_time.

    `raw` is a RawTrips, a TripSet or a sequence of trips. Station places
    are only bounds-checked when a registry is given; unknown station ids
    then count as missing places.
    """
    if isinstance(raw, RawTrips):
        candidates, rejects = raw.candidates, raw.rejects
    elif isinstance(raw, TripSet):
        candidates, rejects = raw.trips, ()
    else:
        candidates, rejects = tuple(raw), ()
    counts = {MISSING_TIME: 0, MISSING_PLACE: 0,
              'out_of_bounds': 0, 'inverted_time': 0}
    for reject in rejects:
        counts[reject.reason] += 1
    kept = []
    for trip in candidates:
        if stations is not None or trip.origin.kind == 'coordinate':
            origin = _resolve(trip.origin, stations)
            destination = _resolve(trip.destination, stations)
            if origin is None or destination is None:
                counts[MISSING_PLACE] += 1
                continue
            if not (bounds.contains(origin) and bounds.contains(destination)):
                counts['out_of_bounds'] += 1
                continue
        if trip.start_time > trip.end_time:
            counts['inverted_time'] += 1
            continue
        kept.append(trip)
    trip_set = TripSet.from_trips(kept)
    report = CleaningReport(
        total_rows=len(candidates) + len(rejects),
        dropped_missing_time=counts[MISSING_TIME],
        dropped_missing_place=counts[MISSING_PLACE],
        dropped_out_of_bounds=counts['out_of_bounds'],
        dropped_inverted_time=counts['inverted_time'],
        kept=len(kept),
        empty_result=not kept,
    )
    if report.empty_result:
        logging.warning('Cleaning removed every trip (%d rows).',
                        report.total_rows)
    if __debug__:
        logging.debug('Cleaning report: %s', report)
    return trip_set, report


def split_by_day(trips: TripSet) -> dict[datetime.date, TripSet]:
    """Partition trips by the civil date of their start time."""
    buckets = {}
    for day in trips.days():
        first, last = trips.day_index[day]
        day_trips = trips.trips[first:last]
        buckets[day] = TripSet(day_trips, pmap({day: (0, len(day_trips))}))
    return buckets


def split_by_company(trips: TripSet) -> dict[int, TripSet]:
    """Partition trips by company, preserving order."""
    buckets: dict[int, list] = {}
    for trip in trips.trips:
        if trip.company_id is None:
            raise PreconditionError(
                f'Trip {trip.trip_id} carries no company_id')
        buckets.setdefault(trip.company_id, []).append(trip)
    return {company: TripSet(tuple(company_trips),
                             _build_day_index(company_trips))
            for company, company_trips in sorted(buckets.items())}


def merge_trip_sets(parts: Iterable[TripSet]) -> TripSet:
    """Union of disjoint trip sets."""
    return TripSet.from_trips(trip for part in parts for trip in part.trips)


def write_trips_csv(trips: Iterable[Trip], schema: str, filename,
                    include_trip_id: bool = False) -> None:
    """Write trips in the sbbs or dbs input schema."""
    rows = []
    for trip in trips:
        row = {'trip_id': trip.trip_id} if include_trip_id else {}
        row['bike_id'] = trip.bike_id_source or ''
        if schema == 'sbbs':
            row['user_id'] = trip.user_id_source or ''
            row['start_time'] = format_time(trip.start_time)
            row['start_station'] = trip.origin.station_id
            row['end_time'] = format_time(trip.end_time)
            row['end_station'] = trip.destination.station_id
        elif schema == 'dbs':
            row['company_id'] = '' if trip.company_id is None \
                else trip.company_id
            row['start_time'] = format_time(trip.start_time)
            row['start_lon'] = trip.origin.point.lon
            row['start_lat'] = trip.origin.point.lat
            row['end_time'] = format_time(trip.end_time)
            row['end_lon'] = trip.destination.point.lon
            row['end_lat'] = trip.destination.point.lat
        else:
            raise SchemaError(f'Unknown schema, got: {schema}')
        rows.append(row)
    columns = (['trip_id'] if include_trip_id else []) + SCHEMAS[schema]
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(filename, index=False, lineterminator='\n')


def write_stations_csv(stations: dict[int, GeoPoint], filename) -> None:
    """Write a station registry."""
    frame = pd.DataFrame(
        [{'station_id': station_id, 'station_name': f'station-{station_id}',
          'lat': point.lat, 'lon': point.lon}
         for station_id, point in sorted(stations.items())],
        columns=STATION_COLUMNS)
    frame.to_csv(filename, index=False, lineterminator='\n')
