"""End to end runs of the command line."""
import json
import pandas as pd
import pytest
from run_fleet import main

TWO_TRIPS = """bike_id,user_id,start_time,start_station,end_time,end_station
b1,u1,2020-01-06 08:00:00,1,2020-01-06 08:10:00,2
b2,u2,2020-01-06 09:00:00,2,2020-01-06 09:10:00,1
"""


def run(*argv) -> int:
    return main([str(arg) for arg in argv])


@pytest.fixture
def city(tmp_path):
    """Nine synthetic station days."""
    out = tmp_path / 'city'
    assert run('synth', '--places', 8, '--days', 9, '--trips-per-day', 200,
               '--out-dir', out) == 0
    return out


def test_minfleet_two_trips(tmp_path):
    trips = tmp_path / 'trips.csv'
    trips.write_text(TWO_TRIPS)
    assert run('minfleet', trips, '--out-dir', tmp_path) == 0
    fleet = json.loads((tmp_path / 'fleet-2020-01-06.json').read_text())
    assert fleet['fleet_size'] == 1
    assert fleet['chains'][0]['trip_ids'] == [0, 1]
    demand = pd.read_csv(tmp_path / 'demand.csv')
    assert demand['bike_demand'].tolist() == [1]
    config = json.loads((tmp_path / 'resolved-config.json').read_text())
    assert config['command'] == 'minfleet'


def test_exit_codes(tmp_path, capsys):
    assert run('clean', tmp_path / 'missing.csv', '--out-dir', tmp_path) == 2
    assert (tmp_path / 'resolved-config.json').exists()
    bad = tmp_path / 'bad.csv'
    bad.write_text('bike,user\n1,2\n')
    assert run('clean', bad, '--out-dir', tmp_path) == 3
    trips = tmp_path / 'trips.csv'
    trips.write_text(TWO_TRIPS)
    assert run('evaluate', trips, '--out-dir', tmp_path) == 4
    assert 'first evaluable date is 2020-01-13' in capsys.readouterr().err
    assert run('rebalance', trips, '--out-dir', tmp_path) == 4


def test_undecodable_byte_rejects_its_row(tmp_path):
    trips = tmp_path / 'trips.csv'
    trips.write_bytes(TWO_TRIPS.encode('utf-8').replace(b'09:00:00',
                                                        b'09:\xff0:00'))
    assert run('clean', trips, '--out-dir', tmp_path) == 0
    report = json.loads((tmp_path / 'cleaning-report.json').read_text())
    assert report['kept'] == 1
    assert report['dropped_missing_time'] == 1


def test_bad_values_map_to_exit_codes(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('u_days = seven\n')
    trips = tmp_path / 'trips.csv'
    trips.write_text(TWO_TRIPS)
    assert run('minfleet', trips, '--config', config,
               '--out-dir', tmp_path) == 3
    demand = tmp_path / 'demand.csv'
    demand.write_text('day,place_id,bike_demand\nyesterday,1,2\n')
    assert run('allocate', demand, '--out-dir', tmp_path) == 3
    stations = tmp_path / 'stations.json'
    stations.write_text('not json')
    assert run('minfleet', trips, '--mode', 'dbs', '--schema', 'sbbs',
               '--stations-file', stations, '--out-dir', tmp_path) == 3
    assert run('synth', '--start-date', '6 Jan', '--out-dir', tmp_path) == 4


def test_clean_writes_report(tmp_path):
    trips = tmp_path / 'trips.csv'
    trips.write_text(TWO_TRIPS + 'b3,u3,,1,2020-01-06 09:10:00,1\n')
    assert run('clean', trips, '--out-dir', tmp_path) == 0
    report = json.loads((tmp_path / 'cleaning-report.json').read_text())
    assert report['kept'] == 2
    assert report['dropped_missing_time'] == 1
    assert len(pd.read_csv(tmp_path / 'cleaned.csv')) == 2


def test_evaluate(city, tmp_path):
    out = tmp_path / 'eval'
    assert run('evaluate', city / 'trips.csv', '--out-dir', out) == 0
    table = pd.read_csv(out / 'evaluation.csv')
    assert len(table) == 2 * 2
    assert table['u_days'].tolist() == [1, 7, 1, 7]
    assert json.loads((out / 'evaluation.json').read_text())['mode'] == \
        'station'


def test_minfleet_then_allocate(city, tmp_path):
    out = tmp_path / 'plans'
    assert run('minfleet', city / 'trips.csv', '--out-dir', out) == 0
    assert run('allocate', out / 'demand.csv', '--u-days', 7,
               '--out-dir', out) == 0
    plans = pd.read_csv(out / 'allocation.csv', dtype={'day': str})
    assert sorted(set(plans['day'])) == ['2020-01-13', '2020-01-14',
                                         '2020-01-15']
    plan = json.loads((out / 'allocation-2020-01-13.json').read_text())
    assert plan['window_u'] == 7
    assert plan['recommended_fleet'] == sum(
        row['count'] for row in plan['counts'])


def test_rebalance(city, tmp_path):
    assert run('rebalance', city / 'trips.csv', '--target-day', '2020-01-10',
               '--u-days', 2, '--out-dir', tmp_path) == 0
    moves = json.loads((tmp_path / 'rebalancing.json').read_text())
    assert moves['for_day'] == '2020-01-11'
    assert moves['total_moves'] >= 0


def test_distancing(city, tmp_path):
    assert run('scenario', 'distancing', city / 'trips.csv', '--target-day',
               '2020-01-07', '--out-dir', tmp_path) == 0
    rows = pd.read_csv(tmp_path / 'distancing.csv')
    assert rows['c'].tolist() == [0, 3600, 21600]
    fleets = rows['fleet_size'].tolist()
    assert fleets == sorted(fleets)


def test_describe(city, tmp_path):
    assert run('describe', city / 'trips.csv', '--out-dir', tmp_path) == 0
    assert len(pd.read_csv(tmp_path / 'daily-series.csv')) == 9
    stats = json.loads((tmp_path / 'stats.json').read_text())
    assert stats['cv'] > 0


def test_config_file_and_flags(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('u_days = 3\nc-seconds = 60\n')
    trips = tmp_path / 'trips.csv'
    trips.write_text(TWO_TRIPS)
    assert run('minfleet', trips, '--config', config, '--u-days', 2,
               '--out-dir', tmp_path) == 0
    resolved = json.loads((tmp_path / 'resolved-config.json').read_text())
    assert resolved['config']['u'] == 2
    assert resolved['config']['c'] == 60


def test_runs_are_reproducible(tmp_path):
    outputs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        assert run('synth', '--places', 5, '--days', 8, '--trips-per-day',
                   100, '--seed', 3, '--out-dir', out) == 0
        assert run('evaluate', out / 'trips.csv', '--out-dir', out) == 0
        outputs.append([(out / filename).read_bytes() for filename in
                        ('trips.csv', 'evaluation.csv', 'evaluation.json')])
    assert outputs[0] == outputs[1]


def dockless_run(out):
    """Every command on one synthetic dockless city."""
    trips, stations = f'{out}/trips.csv', f'{out}/stations.json'
    dbs = ('--mode', 'dbs', '--out-dir', out)
    assert run('synth', '--places', 4, '--days', 9, '--trips-per-day', 120,
               '--companies', 2, '--seed', 3, *dbs) == 0
    assert run('clean', trips, *dbs) == 0
    assert run('describe', trips, *dbs) == 0
    assert run('stations', trips, '--k', 3, *dbs) == 0
    placed = dbs + ('--stations-file', stations)
    assert run('minfleet', trips, *placed) == 0
    assert run('allocate', f'{out}/demand.csv', *dbs) == 0
    assert run('rebalance', trips, '--target-day', '2020-01-13',
               *placed) == 0
    assert run('evaluate', trips, *placed) == 0
    for scenario in ('distancing', 'platform'):
        assert run('scenario', scenario, trips, '--target-day', '2020-01-13',
                   *dbs) == 0


def test_dockless_runs_are_reproducible(tmp_path, monkeypatch):
    outputs = []
    for name in ('first', 'second'):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        dockless_run('out')
        out = tmp_path / name / 'out'
        outputs.append({path.name: path.read_bytes()
                        for path in sorted(out.iterdir())})
    assert 'platform.json' in outputs[0]
    assert 'evaluation.json' in outputs[0]
    assert outputs[0] == outputs[1]
