"""Run configuration: defaults, a flat key=value file, and flags."""
from __future__ import annotations
import datetime
from typing import Optional
import attrs
from artifacts import Artifact
from fleet_utility import PreconditionError, SchemaError
from geo import ClusteringParams
from ingest import Bounds
from matcher import DOCKLESS, STATION, MatchConfig

MODES = {'sbbs': STATION, 'dbs': DOCKLESS}
DEFAULT_K_GRID = tuple(range(1, 16))
WORLD = Bounds(-90.0, -180.0, 90.0, 180.0)


def _int_tuple(value) -> tuple:
    if isinstance(value, str):
        return tuple(int(item) for item in value.split(',') if item.strip())
    return tuple(int(item) for item in value)


def _optional(convert):
    def wrap(value):
        if value is None or value == '':
            return None
        return convert(value)
    return wrap


def _mode(instance, attribute, value):
    if value not in MODES:
        raise PreconditionError(
            f'mode must be one of {sorted(MODES)}, got: {value}')


@attrs.frozen
class RunConfig:
    """Every run parameter; w, c and u default to 250 m, 0 s and 7 days."""
    mode: str = attrs.field(default='sbbs', validator=_mode)
    w: float = attrs.field(default=250.0, converter=float)
    c: int = attrs.field(default=0, converter=int)
    u: int = attrs.field(default=7, converter=int)
    bounds: Optional[str] = None
    eps: float = attrs.field(default=250.0, converter=float)
    min_pts: int = attrs.field(default=5, converter=int)
    k: Optional[int] = attrs.field(default=None, converter=_optional(int))
    k_grid: tuple = attrs.field(default=(), converter=_int_tuple)
    n_init: int = attrs.field(default=1, converter=int)
    seed: int = attrs.field(default=0, converter=int)
    jobs: int = attrs.field(default=1, converter=int)
    out_dir: str = '.'
    logfile: Optional[str] = None
    stations_file: Optional[str] = None
    schema: Optional[str] = None
    target_day: Optional[str] = None
    c_list: tuple = attrs.field(default=(0, 3600, 21600),
                                converter=_int_tuple)
    eval_start: Optional[str] = None
    eval_end: Optional[str] = None

    def match_config(self) -> MatchConfig:
        return MatchConfig(MODES[self.mode], self.w, self.c)

    def clustering(self) -> ClusteringParams:
        k_grid = () if self.k is not None else (self.k_grid or DEFAULT_K_GRID)
        return ClusteringParams(eps=self.eps, min_pts=self.min_pts, k=self.k,
                                k_grid=k_grid, n_init=self.n_init)

    def bounds_rect(self) -> Bounds:
        return Bounds.from_string(self.bounds) if self.bounds else WORLD

    def schema_name(self) -> str:
        return self.schema or self.mode

    def date(self, name: str) -> Optional[datetime.date]:
        """A date field parsed from YYYY-MM-DD."""
        value = getattr(self, name)
        if value is None:
            return None
        try:
            return datetime.date.fromisoformat(value)
        except ValueError as err:
            raise PreconditionError(
                f'{name} is not a YYYY-MM-DD date, got: {value}') from err

    def to_dict(self) -> dict:
        echo = attrs.asdict(self)
        echo['k_grid'] = list(self.k_grid)
        echo['c_list'] = list(self.c_list)
        return echo

    def to_artifact(self, command: str) -> Artifact:
        return Artifact('resolved-config', command=command,
                        config=self.to_dict())

    @staticmethod
    def resolve(file_values: dict, flag_values: dict) -> RunConfig:
        """Defaults, overridden by the file, overridden by set flags."""
        values = dict(file_values)
        values.update({key: value for key, value in flag_values.items()
                       if value is not None})
        try:
            return RunConfig(**values)
        except (TypeError, ValueError) as err:
            raise SchemaError(f'Bad config value: {err}') from err


# config key -> field
KEYS = {
    'mode': 'mode',
    'w_meters': 'w',
    'c_seconds': 'c',
    'u_days': 'u',
    'bounds': 'bounds',
    'eps_meters': 'eps',
    'min_pts': 'min_pts',
    'k': 'k',
    'k_grid': 'k_grid',
    'n_init': 'n_init',
    'seed': 'seed',
    'jobs': 'jobs',
    'out_dir': 'out_dir',
    'logfile': 'logfile',
    'stations_file': 'stations_file',
    'schema': 'schema',
    'target_day': 'target_day',
    'c_list': 'c_list',
    'eval_start': 'eval_start',
    'eval_end': 'eval_end',
}


def parse_config(text: str) -> dict:
    """Parses a flat key=value config.

    Blank lines and `#` comments are ignored; keys are spelled like the
    long flags, with either `-` or `_`.
    """
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise SchemaError(f'Config line {number} is not key=value: '
                              f'{line}')
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.lstrip('-').replace('-', '_')
        if key not in KEYS:
            raise SchemaError(f'Unknown config key on line {number}: {key}')
        values[KEYS[key]] = value
    return values


def parse_config_file(filename) -> dict:
    """Parses a config file."""
    with open(filename, 'r', encoding='utf-8') as file_in:
        return parse_config(file_in.read())
