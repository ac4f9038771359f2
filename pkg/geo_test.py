"""Distances, grid queries, clustering and virtual stations."""
import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import CENTER, DAY, blob, offset, point_trip, trip_set
from fleet_utility import PreconditionError
from geo import (EARTH_RADIUS, NOISE, ClusteringParams, VirtualStationSet,
                 assign_place, build_grid_index, busiest_day, dbscan,
                 elbow_select_k, haversine, haversine_arrays,
                 identify_virtual_stations, kmeans, nearest, query_radius)
from ingest import GeoPoint, split_by_day


def test_haversine_known_values():
    one_degree = EARTH_RADIUS * math.pi / 180
    assert haversine(GeoPoint(0, 0), GeoPoint(1, 0)) == \
        pytest.approx(one_degree)
    assert haversine(GeoPoint(0, 0), GeoPoint(0, 180)) == \
        pytest.approx(math.pi * EARTH_RADIUS)
    assert haversine(CENTER, CENTER) == 0.0
    assert haversine(CENTER, offset(CENTER, 300, 400)) == \
        pytest.approx(500, rel=1e-3)


def test_haversine_arrays_matches_scalar(rng):
    lat = rng.uniform(-80, 80, 20)
    lon = rng.uniform(-179, 179, 20)
    vector = haversine_arrays(lat[:10], lon[:10], lat[10:], lon[10:])
    for i in range(10):
        assert vector[i] == pytest.approx(haversine(
            GeoPoint(lat[i], lon[i]), GeoPoint(lat[10 + i], lon[10 + i])))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(20, 2000),
       st.floats(-60, 60), st.floats(-170, 170))
def test_query_radius_matches_brute_force(seed, r, lat, lon):
    rng = np.random.default_rng(seed)
    center = GeoPoint(lat, lon)
    points = blob(rng, center, 60, 3 * r)
    index = build_grid_index(points, cell_size=250)
    query = points[0]
    expected = sorted((haversine(query, p), i) for i, p in enumerate(points)
                      if haversine(query, p) < r)
    assert query_radius(index, query, r) == [i for dummy, i in expected]


def test_query_radius_is_strict():
    points = [CENTER, offset(CENTER, 100, 0)]
    index = build_grid_index(points)
    r = haversine(points[0], points[1])
    assert query_radius(index, CENTER, r) == [0]
    assert query_radius(index, CENTER, r + 1e-6) == [0, 1]
    with pytest.raises(PreconditionError):
        query_radius(index, CENTER, 0)


def test_query_across_antimeridian():
    points = [GeoPoint(0, 179.9995), GeoPoint(0, -179.9995)]
    index = build_grid_index(points)
    assert query_radius(index, points[0], 250) == [0, 1]


def test_nearest_ties_by_lowest_id():
    points = [offset(CENTER, 0, 5000), offset(CENTER, 0, -5000),
              offset(CENTER, 9000, 0)]
    point_id, distance = nearest(build_grid_index(points), CENTER)
    assert point_id == 0
    assert distance == pytest.approx(5000, rel=1e-3)
    with pytest.raises(PreconditionError):
        nearest(build_grid_index([]), CENTER)


def reference_dbscan(points, eps, min_pts):
    """Textbook DBSCAN over all-pairs distances."""
    n = len(points)
    near = [[j for j in range(n) if haversine(points[i], points[j]) < eps]
            for i in range(n)]
    labels = [None] * n
    cluster = -1
    for i in range(n):
        if labels[i] is not None:
            continue
        if len(near[i]) < min_pts:
            labels[i] = NOISE
            continue
        cluster += 1
        labels[i] = cluster
        seeds = list(near[i])
        while seeds:
            j = seeds.pop()
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] is not None:
                continue
            labels[j] = cluster
            if len(near[j]) >= min_pts:
                seeds.extend(near[j])
    return labels, near


@pytest.mark.parametrize('seed', range(20))
def test_dbscan_matches_reference(seed):
    rng = np.random.default_rng(seed)
    points = blob(rng, CENTER, 40, 400) + \
        blob(rng, offset(CENTER, 2000, 0), 25, 150) + \
        blob(rng, CENTER, 15, 5000)
    eps = float(rng.choice([100, 150, 250]))
    min_pts = int(rng.integers(2, 7))
    labels = dbscan(points, eps, min_pts)
    expected, near = reference_dbscan(points, eps, min_pts)
    assert labels == expected
    core = {i for i in range(len(points)) if len(near[i]) >= min_pts}
    for i in range(len(points)):
        reachable = i in core or any(j in core for j in near[i])
        assert (labels[i] != NOISE) == reachable


def test_kmeans_sse_never_increases(rng):
    points = blob(rng, CENTER, 100, 500) + \
        blob(rng, offset(CENTER, 3000, 1000), 100, 500)
    for k in (1, 2, 5):
        result = kmeans(points, k, seed=k, n_init=3)
        history = result.sse_history
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert result.sse == history[-1]
        assert len(result.centers) == k


def test_kmeans_deterministic_and_checked(rng):
    points = blob(rng, CENTER, 50, 800)
    assert kmeans(points, 4, seed=7) == kmeans(points, 4, seed=7)
    with pytest.raises(PreconditionError):
        kmeans(points, 0, seed=1)
    with pytest.raises(PreconditionError):
        kmeans(points[:3], 4, seed=1)


def test_kmeans_duplicate_points():
    points = [CENTER] * 5 + [offset(CENTER, 100, 0)]
    result = kmeans(points, 3, seed=0)
    assert len(result.centers) == 3
    assert result.sse == pytest.approx(0.0, abs=1e-6)


def three_blobs(rng):
    return blob(rng, CENTER, 80, 150) + \
        blob(rng, offset(CENTER, 3000, 0), 80, 150) + \
        blob(rng, offset(CENTER, 0, 3000), 80, 150)


def test_elbow_picks_three_blobs(rng):
    assert elbow_select_k(three_blobs(rng), range(1, 9), seed=0,
                          n_init=3) == 3


def test_elbow_flat_curve():
    points = [CENTER] * 10
    assert elbow_select_k(points, [2, 3, 4], seed=0) == 2
    with pytest.raises(PreconditionError):
        elbow_select_k(points, [3, 2, 4], seed=0)
    with pytest.raises(PreconditionError):
        elbow_select_k(points, [1, 2], seed=0)


def history_of(points):
    return split_by_day(trip_set(*(point_trip(i, p, p, 60 * i, 60 * i + 30)
                                   for i, p in enumerate(points))))


def test_identify_single_blob(rng):
    history = history_of(blob(rng, CENTER, 60, 100))
    stations = identify_virtual_stations(
        history, ClusteringParams(k=1), seed=0)
    assert len(stations) == 1
    assert stations.stations[0].service_radius == 250
    assert haversine(stations.stations[0].center, CENTER) < 50
    params = stations.params_used
    assert params['busiest_day'] == DAY.isoformat()
    assert params['noise_points'] == 0


def test_identify_drops_noise_and_uses_elbow(rng):
    points = three_blobs(rng) + [offset(CENTER, 20000, 20000)]
    stations = identify_virtual_stations(
        history_of(points),
        ClusteringParams(k_grid=tuple(range(1, 9)), n_init=3), 0)
    assert len(stations) == 3
    assert stations.params_used['noise_points'] == 1
    assert stations.to_artifact().is_valid()


def test_identify_all_noise():
    points = [offset(CENTER, 1000 * i, 0) for i in range(10)]
    with pytest.raises(PreconditionError, match='noise'):
        identify_virtual_stations(history_of(points),
                                  ClusteringParams(k=1), seed=0)


def test_identify_is_deterministic(rng):
    history = history_of(three_blobs(rng))
    cfg = ClusteringParams(k_grid=(1, 2, 3, 4, 5), n_init=3)
    first = identify_virtual_stations(history, cfg, seed=3)
    second = identify_virtual_stations(history, cfg, seed=3)
    assert first.to_artifact().dumps() == second.to_artifact().dumps()


def test_clustering_params_need_one_k():
    with pytest.raises(PreconditionError):
        ClusteringParams()
    with pytest.raises(PreconditionError):
        ClusteringParams(k=2, k_grid=(1, 2, 3))


def test_busiest_day_ties_to_earliest():
    with pytest.raises(PreconditionError):
        busiest_day({})
    history = {DAY: [1, 2], DAY.replace(day=5): [3, 4]}
    assert busiest_day(history) == DAY.replace(day=5)


def test_assign_place():
    vs = VirtualStationSet.from_centers(
        [offset(CENTER, 0, -200), offset(CENTER, 0, 200),
         offset(CENTER, 0, 2000)])
    tie = assign_place(CENTER, vs)
    assert tie.vs_id == 0
    assert tie.in_service_area
    far = assign_place(offset(CENTER, 0, 1500), vs)
    assert far.vs_id == 2
    assert not far.in_service_area
    assert VirtualStationSet.from_artifact(vs.to_artifact()).stations == \
        vs.stations
