"""Geospatial primitives and virtual station identification.

Virtual stations turn free-floating trip origins into discrete allocation
places: the busiest day's origins are cleaned of DBSCAN noise, clustered
with k-means, and every cluster center serves a 250 m radius.
"""
from __future__ import annotations
import datetime
import logging
import math
from typing import Iterable, Optional, Sequence
import attrs
import numpy as np
import pandas as pd
from pyrsistent import pmap
from scipy.spatial import cKDTree
from artifacts import Artifact
from fleet_utility import PreconditionError, log_time
from ingest import GeoPoint

EARTH_RADIUS = 6371008.8  # meters
NOISE = -1
SERVICE_RADIUS = 250.0  # meters
DEFAULT_CELL_SIZE = 250.0  # meters


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + \
        math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def haversine_arrays(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine over broadcastable degree arrays."""
    lat1 = np.radians(lat1)
    lat2 = np.radians(lat2)
    dlat = lat2 - lat1
    dlon = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dlat / 2) ** 2 + \
        np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS * np.arcsin(np.minimum(1.0, np.sqrt(h)))


@attrs.frozen
class GridIndex:
    """Points bucketed in square cells of an equirectangular projection
    around `origin`. Cells are found by flooring projected meters.
    """
    cell_size: float
    origin: GeoPoint
    points: tuple
    cells: object  # pmap (cell_x, cell_y) -> tuple of point ids

    def project(self, point: GeoPoint) -> tuple[float, float]:
        """Projected (x, y) meters relative to the origin."""
        x = EARTH_RADIUS * math.radians(point.lon - self.origin.lon) \
            * math.cos(math.radians(self.origin.lat))
        y = EARTH_RADIUS * math.radians(point.lat - self.origin.lat)
        return x, y

    def cell_of(self, point: GeoPoint) -> tuple[int, int]:
        """Cell containing the point."""
        x, y = self.project(point)
        return (math.floor(x / self.cell_size),
                math.floor(y / self.cell_size))

    def covering_cells(self, center: GeoPoint, r: float) -> list:
        """Occupied cells that can hold a point closer than r to center."""
        return covering_cells(self, center, r, self.cells)


def covering_cells(index: GridIndex, center: GeoPoint, r: float,
                   occupied) -> list:
    """Keys of `occupied` cells intersecting the bounding box of the circle
    of radius r around center. The box is exact on the sphere, so the
    cells are a superset of every point within r.
    """
    angle = r / EARTH_RADIUS
    dlat = math.degrees(angle)
    lat_lo = center.lat - dlat
    lat_hi = center.lat + dlat
    full_lon = lat_lo <= -90.0 or lat_hi >= 90.0
    if not full_lon:
        ratio = math.sin(angle) / math.cos(math.radians(center.lat))
        full_lon = ratio >= 1.0
    if full_lon:
        lon_lo, lon_hi = -180.0, 180.0
    else:
        dlon = math.degrees(math.asin(ratio))
        lon_lo, lon_hi = center.lon - dlon, center.lon + dlon
    if full_lon or lon_lo < -180.0 or lon_hi > 180.0:
        y_lo = math.floor(index.project(
            GeoPoint(max(lat_lo, -90.0), center.lon))[1] / index.cell_size)
        y_hi = math.floor(index.project(
            GeoPoint(min(lat_hi, 90.0), center.lon))[1] / index.cell_size)
        return [cell for cell in occupied if y_lo <= cell[1] <= y_hi]
    x_lo, y_lo = index.cell_of(GeoPoint(lat_lo, lon_lo))
    x_hi, y_hi = index.cell_of(GeoPoint(lat_hi, lon_hi))
    span = (x_hi - x_lo + 1) * (y_hi - y_lo + 1)
    if span > len(occupied):
        return [cell for cell in occupied
                if x_lo <= cell[0] <= x_hi and y_lo <= cell[1] <= y_hi]
    return [(x, y) for x in range(x_lo, x_hi + 1)
            for y in range(y_lo, y_hi + 1) if (x, y) in occupied]


def build_grid_index(points: Sequence[GeoPoint],
                     cell_size: float = DEFAULT_CELL_SIZE,
                     origin: Optional[GeoPoint] = None) -> GridIndex:
    """Index points by cell; point ids are list positions."""
    if cell_size <= 0:
        raise PreconditionError(f'cell_size must be > 0, got: {cell_size}')
    if origin is None:
        origin = GeoPoint(min((p.lat for p in points), default=0.0),
                          min((p.lon for p in points), default=0.0))
    index = GridIndex(cell_size, origin, tuple(points), pmap())
    cells: dict[tuple, list] = {}
    for point_id, point in enumerate(points):
        cells.setdefault(index.cell_of(point), []).append(point_id)
    return attrs.evolve(index, cells=pmap(
        {cell: tuple(ids) for cell, ids in cells.items()}))


def query_radius(index: GridIndex, center: GeoPoint, r: float) -> list[int]:
    """Ids of points with haversine distance < r, by (distance, id)."""
    if r <= 0:
        raise PreconditionError(f'radius must be > 0, got: {r}')
    return [point_id for dummy, point_id
            in _query_with_distance(index, center, r)]


def _query_with_distance(index: GridIndex, center: GeoPoint,
                         r: float) -> list[tuple[float, int]]:
    found = []
    for cell in index.covering_cells(center, r):
        for point_id in index.cells[cell]:
            distance = haversine(center, index.points[point_id])
            if distance < r:
                found.append((distance, point_id))
    found.sort()
    return found


def nearest(index: GridIndex, center: GeoPoint) -> tuple[int, float]:
    """Nearest indexed point as (id, distance); ties by lowest id."""
    if not index.points:
        raise PreconditionError('nearest() on an empty index')
    r = index.cell_size
    while r < math.pi * EARTH_RADIUS:
        found = _query_with_distance(index, center, r)
        if found:
            distance, point_id = found[0]
            return point_id, distance
        r *= 2
    distance, point_id = min(
        (haversine(center, point), point_id)
        for point_id, point in enumerate(index.points))
    return point_id, distance


def dbscan(points: Sequence[GeoPoint], eps: float,
           min_pts: int) -> list[int]:
    """Density-based labels: cluster ids from 0 in discovery order, or NOISE.

    Neighborhoods use haversine distance strictly below eps and include the
    point itself. Points are visited in input order.
    """
    if eps <= 0:
        raise PreconditionError(f'eps must be > 0, got: {eps}')
    if min_pts < 1:
        raise PreconditionError(f'min_pts must be >= 1, got: {min_pts}')
    index = build_grid_index(points, cell_size=eps)
    unvisited = None
    labels = [unvisited] * len(points)
    cluster_id = -1
    for point_id, point in enumerate(points):
        if labels[point_id] is not unvisited:
            continue
        neighbors = query_radius(index, point, eps)
        if len(neighbors) < min_pts:
            labels[point_id] = NOISE
            continue
        cluster_id += 1
        labels[point_id] = cluster_id
        queue = list(neighbors)
        i = 0
        while i < len(queue):
            neighbor_id = queue[i]
            i += 1
            if labels[neighbor_id] == NOISE:
                # border point
                labels[neighbor_id] = cluster_id
            if labels[neighbor_id] is not unvisited:
                continue
            labels[neighbor_id] = cluster_id
            reach = query_radius(index, points[neighbor_id], eps)
            if len(reach) >= min_pts:
                queue.extend(reach)
    if __debug__:
        logging.debug('DBSCAN found %d clusters and %d noise points.',
                      cluster_id + 1, labels.count(NOISE))
    return labels


@attrs.frozen
class KMeansResult:
    """Centers, per-point assignment and the final SSE in square meters."""
    centers: tuple
    assignment: np.ndarray = attrs.field(eq=False)
    sse: float
    sse_history: tuple
    iterations: int


def _unit_vectors(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    lat = np.radians(lat)
    lon = np.radians(lon)
    return np.column_stack((np.cos(lat) * np.cos(lon),
                            np.cos(lat) * np.sin(lon),
                            np.sin(lat)))


def _assign(lat, lon, xyz, center_lat, center_lon):
    """Nearest center per point. Chord distance on the unit sphere orders
    centers exactly as great-circle distance does.
    """
    tree = cKDTree(_unit_vectors(center_lat, center_lon))
    dummy, labels = tree.query(xyz)
    distances = haversine_arrays(lat, lon, center_lat[labels],
                                 center_lon[labels])
    return labels, float(np.sum(distances ** 2))


def _seed_centers(lat, lon, k, rng) -> np.ndarray:
    """k-means++ seeding; returns chosen point indices."""
    n = len(lat)
    chosen = [int(rng.integers(n))]
    d2 = haversine_arrays(lat, lon, lat[chosen[0]], lon[chosen[0]]) ** 2
    while len(chosen) < k:
        total = float(d2.sum())
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            # only duplicates left
            remaining = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(remaining))
        chosen.append(pick)
        d2 = np.minimum(
            d2, haversine_arrays(lat, lon, lat[pick], lon[pick]) ** 2)
    return np.array(chosen)


def _lloyd(lat, lon, xyz, k, rng, max_iter, tol) -> KMeansResult:
    seeds = _seed_centers(lat, lon, k, rng)
    center_lat = lat[seeds].astype(float)
    center_lon = lon[seeds].astype(float)
    history = []
    iterations = 0
    labels, sse = _assign(lat, lon, xyz, center_lat, center_lon)
    history.append(sse)
    while iterations < max_iter:
        iterations += 1
        counts = np.bincount(labels, minlength=k)
        filled = counts > 0
        new_lat = center_lat.copy()
        new_lon = center_lon.copy()
        new_lat[filled] = np.bincount(
            labels, weights=lat, minlength=k)[filled] / counts[filled]
        new_lon[filled] = np.bincount(
            labels, weights=lon, minlength=k)[filled] / counts[filled]
        updated_sse = float(np.sum(haversine_arrays(
            lat, lon, new_lat[labels], new_lon[labels]) ** 2))
        if updated_sse > sse:
            # degree means are not the exact haversine minimizer
            break
        shift = float(np.max(haversine_arrays(
            center_lat, center_lon, new_lat, new_lon)))
        center_lat, center_lon = new_lat, new_lon
        labels, new_sse = _assign(lat, lon, xyz, center_lat, center_lon)
        sse = min(new_sse, updated_sse)
        history.append(sse)
        if shift < tol:
            break
    centers = tuple(GeoPoint(a, b) for a, b in zip(center_lat, center_lon))
    return KMeansResult(centers, labels, sse, tuple(history), iterations)


def kmeans(points: Sequence[GeoPoint], k: int, seed: int, n_init: int = 1,
           max_iter: int = 100, tol: float = 1.0) -> KMeansResult:
    """Lloyd iterations from seeded k-means++ initialization.

    Stops when the largest center shift is below `tol` meters or after
    `max_iter` iterations. The SSE (squared haversine meters) never
    increases between iterations. With `n_init` restarts the best run wins,
    ties by the earliest run.
    """
    n = len(points)
    if not 1 <= k <= n:
        raise PreconditionError(f'k must be in [1, {n}], got: {k}')
    lat = np.array([p.lat for p in points], dtype=float)
    lon = np.array([p.lon for p in points], dtype=float)
    xyz = _unit_vectors(lat, lon)
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        result = _lloyd(lat, lon, xyz, k, np.random.default_rng(child),
                        max_iter, tol)
        if best is None or result.sse < best.sse:
            best = result
    if __debug__:
        logging.debug('k-means k=%d finished with SSE %.3f after %d '
                      'iterations.', k, best.sse, best.iterations)
    return best


def sse_curve(points: Sequence[GeoPoint], k_grid: Sequence[int], seed: int,
              n_init: int = 1) -> list[float]:
    """SSE of kmeans for every k of the grid."""
    return [kmeans(points, k, seed, n_init=n_init).sse for k in k_grid]


def elbow_select_k(points: Sequence[GeoPoint], k_grid: Sequence[int],
                   seed: int, n_init: int = 1,
                   flat_tolerance: float = 1.0) -> int:
    """Pick the k whose (k, SSE) point lies farthest below the chord from
    the first to the last grid point, both axes scaled to [0, 1].

    Ties go to the smaller k. When the SSE range is below `flat_tolerance`
    square meters, or no point lies below the chord, the first grid value
    is returned.
    """
    k_grid = list(k_grid)
    if len(k_grid) < 3:
        raise PreconditionError('The elbow needs at least 3 grid points.')
    if k_grid != sorted(set(k_grid)):
        raise PreconditionError(f'k_grid must ascend strictly: {k_grid}')
    if k_grid[0] < 1 or k_grid[-1] > len(points):
        raise PreconditionError(
            f'k_grid must lie in [1, {len(points)}], got: {k_grid}')
    sse = sse_curve(points, k_grid, seed, n_init=n_init)
    if __debug__:
        logging.debug('Elbow curve: %s', list(zip(k_grid, sse)))
    sse_range = sse[0] - sse[-1]
    if sse_range < flat_tolerance:
        return k_grid[0]
    k_range = k_grid[-1] - k_grid[0]
    best_k = k_grid[0]
    best_distance = 0.0
    for k, value in zip(k_grid, sse):
        x = (k - k_grid[0]) / k_range
        y = (value - sse[-1]) / sse_range
        # chord runs from (0, 1) to (1, 0)
        distance = (1.0 - x - y) / math.sqrt(2.0)
        if distance > best_distance + 1e-12:
            best_k = k
            best_distance = distance
    return best_k


@attrs.frozen
class ClusteringParams:
    """Parameters of virtual station identification."""
    eps: float = 250.0
    min_pts: int = 5
    k: Optional[int] = None
    k_grid: tuple = ()
    service_radius: float = SERVICE_RADIUS
    n_init: int = 1
    cell_size: float = DEFAULT_CELL_SIZE

    def __attrs_post_init__(self):
        if self.k is None and len(self.k_grid) == 0:
            raise PreconditionError('Clustering needs k or k_grid.')
        if self.k is not None and len(self.k_grid) > 0:
            raise PreconditionError('Give either k or k_grid, not both.')


@attrs.frozen
class VirtualStation:
    """A cluster center and its service radius."""
    vs_id: int
    center: GeoPoint
    service_radius: float = SERVICE_RADIUS


@attrs.frozen
class PlaceAssignment:
    """Nearest virtual station of a point."""
    vs_id: int
    distance: float
    in_service_area: bool


@attrs.frozen
class VirtualStationSet:
    """Virtual stations with an index over their centers."""
    stations: tuple
    index: GridIndex
    params_used: object  # pmap of the clustering record

    def __len__(self) -> int:
        return len(self.stations)

    def ids(self) -> list[int]:
        return [station.vs_id for station in self.stations]

    def to_frame(self) -> pd.DataFrame:
        """Centers as a table: vs_id, lat, lon, radius."""
        return pd.DataFrame(
            [{'vs_id': s.vs_id, 'lat': s.center.lat, 'lon': s.center.lon,
              'radius': s.service_radius} for s in self.stations],
            columns=['vs_id', 'lat', 'lon', 'radius'])

    def to_artifact(self) -> Artifact:
        return Artifact(
            'stations',
            stations=self.to_frame().to_dict(orient='records'),
            params=dict(self.params_used))

    @staticmethod
    def from_centers(centers: Iterable[GeoPoint],
                     service_radius: float = SERVICE_RADIUS,
                     params_used: Optional[dict] = None,
                     cell_size: float = DEFAULT_CELL_SIZE) \
            -> VirtualStationSet:
        """Stations numbered from 0 in the given order."""
        centers = list(centers)
        stations = tuple(VirtualStation(vs_id, center, service_radius)
                         for vs_id, center in enumerate(centers))
        return VirtualStationSet(stations,
                                 build_grid_index(centers, cell_size),
                                 pmap(params_used or {}))

    @staticmethod
    def from_artifact(artifact: dict) -> VirtualStationSet:
        """Rebuild a station set from its JSON artifact."""
        rows = sorted(artifact['stations'], key=lambda row: row['vs_id'])
        if [row['vs_id'] for row in rows] != list(range(len(rows))):
            raise PreconditionError('vs_ids must be contiguous from 0')
        radius = rows[0]['radius'] if rows else SERVICE_RADIUS
        return VirtualStationSet.from_centers(
            (GeoPoint(row['lat'], row['lon']) for row in rows),
            service_radius=radius,
            params_used=artifact.get('params', {}))


def busiest_day(history: dict) -> datetime.date:
    """Day with the most trips; ties go to the earliest day."""
    if not history:
        raise PreconditionError('History is empty.')
    return min(history, key=lambda day: (-len(history[day]), day))


@log_time
def identify_virtual_stations(history: dict, cfg: ClusteringParams,
                              seed: int) -> VirtualStationSet:
    """Virtual stations from trip history.

    (a) pick the busiest day, (b) DBSCAN its origins, (c) drop the noise
    points, (d) k-means the rest; centers become stations.
    """
    day = busiest_day(history)
    origins = []
    for trip in history[day].trips:
        if trip.origin.kind != 'coordinate':
            raise PreconditionError(
                'Virtual stations need coordinate origins.')
        origins.append(trip.origin.point)
    labels = dbscan(origins, cfg.eps, cfg.min_pts)
    kept = [point for point, label in zip(origins, labels)
            if label != NOISE]
    if not kept:
        raise PreconditionError(
            f'All {len(origins)} origins of {day} are noise; '
            'no stations identifiable.')
    if cfg.k is not None:
        k = cfg.k
    else:
        k = elbow_select_k(kept, cfg.k_grid, seed, n_init=cfg.n_init)
    result = kmeans(kept, k, seed, n_init=cfg.n_init)
    centers = sorted(set(result.centers), key=lambda p: (p.lat, p.lon))
    params_used = {
        'eps': cfg.eps,
        'min_pts': cfg.min_pts,
        'k': k,
        'k_grid': list(cfg.k_grid),
        'n_init': cfg.n_init,
        'seed': seed,
        'service_radius': cfg.service_radius,
        'busiest_day': day.isoformat(),
        'origins': len(origins),
        'noise_points': len(origins) - len(kept),
        'sse': result.sse,
    }
    logging.info('Identified %d virtual stations from %s (%d noise).',
                 len(centers), day, len(origins) - len(kept))
    return VirtualStationSet.from_centers(
        centers, cfg.service_radius, params_used, cfg.cell_size)


def assign_place(p: GeoPoint, vs: VirtualStationSet) -> PlaceAssignment:
    """Nearest virtual station by haversine, ties by lowest vs_id."""
    if len(vs) == 0:
        raise PreconditionError('assign_place() needs stations.')
    vs_id, distance = nearest(vs.index, p)
    radius = vs.stations[vs_id].service_radius
    return PlaceAssignment(vs_id, distance, distance < radius)
