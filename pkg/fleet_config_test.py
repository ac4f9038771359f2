"""Run configuration."""
import datetime
import pytest
from fleet_config import DEFAULT_K_GRID, RunConfig, parse_config
from fleet_utility import PreconditionError, SchemaError
from matcher import DOCKLESS, MatchConfig


def test_defaults():
    cfg = RunConfig()
    assert cfg.match_config() == MatchConfig()
    assert cfg.u == 7
    assert cfg.clustering().k_grid == DEFAULT_K_GRID
    assert cfg.to_artifact('minfleet').is_valid()


def test_parse_config():
    values = parse_config('# a comment\n\nmode = dbs\nw-meters=100 # near\n'
                          '--c_seconds=60\nk_grid=2,3,4\n')
    assert values == {'mode': 'dbs', 'w': '100', 'c': '60',
                      'k_grid': '2,3,4'}
    cfg = RunConfig(**values)
    assert cfg.match_config() == MatchConfig(DOCKLESS, 100.0, 60)
    assert cfg.k_grid == (2, 3, 4)


@pytest.mark.parametrize('text', ['mode\n', 'colour=red\n'])
def test_parse_config_errors(text):
    with pytest.raises(SchemaError):
        parse_config(text)


def test_flags_override_file():
    cfg = RunConfig.resolve({'u': '3', 'c': '60'}, {'u': 2, 'c': None})
    assert cfg.u == 2
    assert cfg.c == 60


def test_checks():
    with pytest.raises(PreconditionError):
        RunConfig(mode='tram')
    with pytest.raises(PreconditionError):
        RunConfig(target_day='06/01/2020').date('target_day')
    assert RunConfig(target_day='2020-01-06').date('target_day') == \
        datetime.date(2020, 1, 6)
    assert RunConfig().date('eval_start') is None
    fixed = RunConfig(k='4').clustering()
    assert fixed.k == 4
    assert fixed.k_grid == ()
