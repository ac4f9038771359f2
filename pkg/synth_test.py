"""Synthetic trip generation."""
import datetime
import numpy as np
import pytest
from evaluator import active_fleet_size, rrmse
from fleet_utility import PreconditionError
from ingest import Bounds, clean_trips, split_by_day
from matcher import DOCKLESS, MatchConfig, build_min_fleet
from synth import SynthConfig, expected_daily_trips, generate_trips


def daily_counts(trips):
    return [len(day) for dummy, day in sorted(split_by_day(trips).items())]


def test_same_seed_same_trips():
    cfg = SynthConfig(n_places=8, days=2, base_daily_trips=200, seed=5)
    assert generate_trips(cfg) == generate_trips(cfg)
    other = generate_trips(SynthConfig(n_places=8, days=2,
                                       base_daily_trips=200, seed=6))
    assert other != generate_trips(cfg)


def test_weekly_volume_without_noise():
    cfg = SynthConfig(n_places=5, days=7, base_daily_trips=500,
                      daily_noise_cv=0.0)
    assert daily_counts(generate_trips(cfg)) == [500] * 5 + [300] * 2


def test_mean_volume():
    cfg = SynthConfig(n_places=10, days=28, base_daily_trips=400)
    counts = daily_counts(generate_trips(cfg))
    expected = np.mean([
        expected_daily_trips(cfg, cfg.start_date + datetime.timedelta(days))
        for days in range(28)])
    assert len(counts) == 28
    assert abs(np.mean(counts) - expected) / expected < 0.05


def test_weekly_pattern_beats_yesterday():
    cfg = SynthConfig(n_places=10, days=28, base_daily_trips=400)
    counts = daily_counts(generate_trips(cfg))
    assert rrmse(counts, 7) < rrmse(counts, 1)


def test_dockless_trips_survive_cleaning():
    cfg = SynthConfig(n_places=6, days=2, base_daily_trips=300,
                      mode=DOCKLESS, n_companies=3,
                      bbox=Bounds(32.00, 118.70, 32.02, 118.72))
    trips = generate_trips(cfg)
    kept, report = clean_trips(list(trips), cfg.bbox)
    assert report.kept == len(trips)
    assert {trip.company_id for trip in trips} == {1, 2, 3}
    assert all(trip.user_id_source is None for trip in trips)


def test_station_trips():
    trips = generate_trips(SynthConfig(n_places=4, days=1,
                                       base_daily_trips=100))
    assert {trip.origin.station_id for trip in trips} <= set(range(4))
    assert all(trip.company_id is None for trip in trips)
    assert all(trip.user_id_source for trip in trips)
    assert all(trip.end_time - trip.start_time >= 60 for trip in trips)


def test_source_bikes_form_a_valid_fleet():
    trips = generate_trips(SynthConfig(n_places=6, days=2,
                                       base_daily_trips=300))
    for day_trips in split_by_day(trips).values():
        assert active_fleet_size(day_trips) >= \
            build_min_fleet(day_trips, MatchConfig()).fleet_size


def test_config_checks():
    with pytest.raises(PreconditionError):
        SynthConfig(n_places=0)
    with pytest.raises(PreconditionError):
        SynthConfig(days=0)
    with pytest.raises(PreconditionError):
        SynthConfig(mode='bus')
    assert SynthConfig().to_artifact().is_valid()
