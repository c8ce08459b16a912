"""
Supply intensity surfaces: kernel density on a fishnet and pairwise correlation

Distances are computed in a local azimuthal-equidistant plane (miles). Row 0
of every grid is the southern edge, column 0 the western edge.
"""
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
import shapely
from scipy.spatial import cKDTree

from services.archive import DEFAULT_STALENESS_HORIZON, availability_at, station_status_at
from services.errors import ConfigError, DegenerateGrid, GridMismatch, NoCoverage, UnknownStop, ZeroVariance
from services.feeds import RouteMode
from services.geo import GeoPoint, LocalProjection

logger = logging.getLogger(__name__)

KERNELS = ('quartic', 'uniform')
MODES = ('escooter', 'bikeshare', 'transit')
MODE_PAIRS = (('escooter', 'bikeshare'), ('escooter', 'transit'), ('bikeshare', 'transit'))
SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class SupplyFeature:
    point: GeoPoint
    weight: float
    radius_mi: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"feature weight must be >= 0, got {self.weight}")
        if self.radius_mi <= 0:
            raise ValueError(f"feature radius must be > 0, got {self.radius_mi}")


@dataclass(frozen=True)
class ModeRadii:
    transit: float = 0.25
    bikeshare: float = 0.125
    escooter: float = 0.0625

    def __post_init__(self):
        if min(self.transit, self.bikeshare, self.escooter) <= 0:
            raise ConfigError('radii: all radii must be positive')


@dataclass(frozen=True)
class GridSpec:
    """Fishnet definition; origin is the SW corner, center anchors the projection"""
    origin: GeoPoint
    ncols: int
    nrows: int
    center: GeoPoint
    cell_size_mi: float = 0.25
    subdivisions: int = 5
    kernel: str = 'quartic'

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigError(f"supply: unknown kernel {self.kernel!r}, expected one of {KERNELS}")
        if self.subdivisions < 1:
            raise ConfigError('supply: subdivisions must be >= 1')

    @classmethod
    def covering(cls, polygons, cell_size_mi=0.25, subdivisions=5, kernel='quartic', center=None):
        """Smallest grid whose cells cover every polygon"""
        union = shapely.union_all(polygons)
        if center is None:
            c = union.centroid
            center = GeoPoint(c.y, c.x)
        projection = LocalProjection(center)
        coords = shapely.get_coordinates(union)
        xs, ys = projection.project(coords[:, 1], coords[:, 0])
        x0, y0 = float(xs.min()), float(ys.min())
        ncols = max(int(math.ceil((float(xs.max()) - x0) / cell_size_mi)), 1)
        nrows = max(int(math.ceil((float(ys.max()) - y0) / cell_size_mi)), 1)
        lat0, lon0 = projection.unproject([x0], [y0])
        return cls(origin=GeoPoint(float(lat0[0]), float(lon0[0])), ncols=ncols, nrows=nrows, center=center,
                   cell_size_mi=cell_size_mi, subdivisions=subdivisions, kernel=kernel)

    @property
    def projection(self):
        return LocalProjection(self.center)

    def origin_xy(self):
        return self.projection.project_point(self.origin)

    def fine(self):
        """The sub-cell raster the fishnet values are averaged from"""
        s = self.subdivisions
        return GridSpec(origin=self.origin, ncols=self.ncols * s, nrows=self.nrows * s, center=self.center,
                        cell_size_mi=self.cell_size_mi / s, subdivisions=1, kernel=self.kernel)

    def cell_centers_xy(self):
        """(x, y) arrays of shape (nrows, ncols) in plane miles"""
        x0, y0 = self.origin_xy()
        xs = x0 + (np.arange(self.ncols) + 0.5) * self.cell_size_mi
        ys = y0 + (np.arange(self.nrows) + 0.5) * self.cell_size_mi
        return np.meshgrid(xs, ys)

    def cell_centers(self):
        """(lat, lon) arrays of shape (nrows, ncols)"""
        x, y = self.cell_centers_xy()
        lat, lon = self.projection.unproject(x.ravel(), y.ravel())
        return lat.reshape(x.shape), lon.reshape(x.shape)

    def to_dict(self):
        return {
            'origin_lat': self.origin.lat,
            'origin_lon': self.origin.lon,
            'center_lat': self.center.lat,
            'center_lon': self.center.lon,
            'ncols': self.ncols,
            'nrows': self.nrows,
            'cell_size_mi': self.cell_size_mi,
            'subdivisions': self.subdivisions,
            'kernel': self.kernel,
            'projection': 'aeqd',
            'cell_value': 'fine-raster zonal mean' if self.subdivisions > 1 else 'cell center'
        }


@dataclass
class SupplyGrid:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    @property
    def ncols(self):
        return self.spec.ncols

    @property
    def nrows(self):
        return self.spec.nrows

    @property
    def cell_size_mi(self):
        return self.spec.cell_size_mi

    @property
    def origin(self):
        return self.spec.origin

    def total_mass(self):
        return float(self.values.sum() * self.spec.cell_size_mi ** 2)


# === KERNEL DENSITY ===

def kernel_weights(distances, radius, kernel='quartic'):
    """Kernel value per unit weight at the given distances; zero for d >= radius"""
    distances = np.asarray(distances, dtype=float)
    inside = distances < radius
    if kernel == 'uniform':
        return np.where(inside, 1.0 / (math.pi * radius * radius), 0.0)
    u = distances / radius
    return np.where(inside, (3.0 / math.pi) * (1.0 - u * u) ** 2 / (radius * radius), 0.0)


def kernel_density(features, spec):
    """Density (features per square mile) evaluated at each cell center"""
    if spec.ncols <= 0 or spec.nrows <= 0 or spec.cell_size_mi <= 0:
        raise DegenerateGrid(f"grid {spec.ncols}x{spec.nrows} at {spec.cell_size_mi} mi has no cells")
    values = np.zeros((spec.nrows, spec.ncols))
    features = [f for f in features if f.weight > 0]
    if not features:
        return SupplyGrid(spec=spec, values=values)

    cx, cy = spec.cell_centers_xy()
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    tree = cKDTree(centers)
    fx, fy = spec.projection.project([f.point.lat for f in features], [f.point.lon for f in features])

    flat = values.ravel()
    for feature, x, y in zip(features, fx, fy):
        idx = tree.query_ball_point([x, y], r=feature.radius_mi)
        if not idx:
            continue
        idx = np.asarray(sorted(idx))
        d = np.hypot(centers[idx, 0] - x, centers[idx, 1] - y)
        flat[idx] += feature.weight * kernel_weights(d, feature.radius_mi, spec.kernel)
    return SupplyGrid(spec=spec, values=flat.reshape(spec.nrows, spec.ncols))


def zonal_mean(fine, subdivisions, spec):
    """Average blocks of subdivisions x subdivisions fine cells into the fishnet"""
    s = subdivisions
    if fine.values.shape != (spec.nrows * s, spec.ncols * s):
        raise GridMismatch(f"fine raster {fine.values.shape} does not tile {spec.nrows}x{spec.ncols} by {s}")
    blocks = fine.values.reshape(spec.nrows, s, spec.ncols, s)
    return SupplyGrid(spec=spec, values=blocks.mean(axis=(1, 3)))


def supply_surface(features, spec):
    """Fishnet surface: center-evaluated KDE, or zonal mean of a fine raster when subdivided"""
    if spec.subdivisions == 1:
        return kernel_density(features, spec)
    return zonal_mean(kernel_density(features, spec.fine()), spec.subdivisions, spec)


# === TRANSIT FREQUENCY ===

def seconds_of_day(value):
    """time-of-day as a datetime.time, 'HH:MM' string or seconds"""
    if isinstance(value, time):
        return value.hour * 3600 + value.minute * 60 + value.second
    if isinstance(value, str):
        hours, minutes = value.split(':')[:2]
        return int(hours) * 3600 + int(minutes) * 60
    return int(value)


def _visits(network, day):
    """(stop_id, departure, trip_id) for trips active on day, previous-day trips shifted back a day"""
    today = network.active_trip_ids(day)
    yesterday = network.active_trip_ids(day - timedelta(days=1))
    for event in network.stop_time_events:
        if event.trip_id in today:
            yield event.stop_id, event.departure, event.trip_id
        if event.trip_id in yesterday and event.departure >= SECONDS_PER_DAY:
            yield event.stop_id, event.departure - SECONDS_PER_DAY, event.trip_id


def stop_frequencies(network, window_start, day, window_s=3600, rail_weight=5):
    """Weighted vehicle count in [window_start, window_start + window) for every served stop"""
    start = seconds_of_day(window_start)
    counts = {stop.stop_id: 0 for stop in network.served_stops}
    for stop_id, departure, trip_id in _visits(network, day):
        if stop_id in counts and start <= departure < start + window_s:
            counts[stop_id] += rail_weight if network.trip_mode(trip_id) == RouteMode.RAIL else 1
    return counts


def transit_stop_frequency(network, stop_id, window_start, day, window_s=3600, rail_weight=5):
    if stop_id not in network.stop_by_id:
        raise UnknownStop(f"stop {stop_id} is not in the network")
    start = seconds_of_day(window_start)
    count = 0
    for visit_stop, departure, trip_id in _visits(network, day):
        if visit_stop == stop_id and start <= departure < start + window_s:
            count += rail_weight if network.trip_mode(trip_id) == RouteMode.RAIL else 1
    return count


# === SNAPSHOTS ===

def local_instant(day, time_of_day, tz):
    """UTC timestamp of a local wall-clock time on a given date"""
    local = datetime.combine(day, time(0), tzinfo=ZoneInfo(tz)) + timedelta(seconds=seconds_of_day(time_of_day))
    return int(local.timestamp())


def local_clock(instant, tz):
    """(local date, seconds since local midnight) of a UTC timestamp"""
    local = datetime.fromtimestamp(instant, tz=ZoneInfo(tz))
    return local.date(), local.hour * 3600 + local.minute * 60 + local.second


def escooter_features(vehicles, radii):
    return [SupplyFeature(v.point, 1.0, radii.escooter) for v in vehicles]


def bikeshare_features(statuses, radii):
    return [SupplyFeature(s.point, float(s.bikes_available), radii.bikeshare) for s in statuses]


def transit_features(network, window_start, day, radii, rail_weight=5, window_s=3600):
    frequencies = stop_frequencies(network, window_start, day, window_s=window_s, rail_weight=rail_weight)
    return [SupplyFeature(stop.point, float(frequencies[stop.stop_id]), radii.transit)
            for stop in network.served_stops]


def _covered(query, archive, instant, staleness_horizon, vendors, layer, allow_gaps):
    try:
        return query(archive, instant, staleness_horizon, vendors=vendors)
    except NoCoverage:
        if not allow_gaps:
            raise
        logger.warning("no %s data at or before %s, %s surface is empty", layer, instant, layer)
        return []


def supply_snapshot(archive, network, instant, spec, radii=None, bike_statuses=None, vendors=None,
                    bike_vendors=None, staleness_horizon=DEFAULT_STALENESS_HORIZON, rail_weight=5, window_s=3600,
                    tz=None, allow_gaps=False):
    """
    Escooter, bikeshare and transit surfaces at one instant, on one grid spec

    The transit service day and clock are read in tz, the feed's timezone by
    default. With allow_gaps a source that has no data before the instant
    gives an empty surface instead of raising NoCoverage.
    """
    radii = radii or ModeRadii()
    vehicles = _covered(availability_at, archive, instant, staleness_horizon, vendors, 'escooter', allow_gaps)
    if bike_statuses is None:
        bike_statuses = _covered(station_status_at, archive, instant, staleness_horizon, bike_vendors, 'bikeshare',
                                 allow_gaps)
    day, seconds = local_clock(instant, tz or network.timezone)
    logger.info("supply at %s: %d vehicles, %d stations", instant, len(vehicles), len(bike_statuses))
    return {
        'escooter': supply_surface(escooter_features(vehicles, radii), spec),
        'bikeshare': supply_surface(bikeshare_features(bike_statuses, radii), spec),
        'transit': supply_surface(transit_features(network, seconds, day, radii, rail_weight, window_s), spec)
    }


# === CORRELATION ===

def boundary_mask(spec, polygons):
    """True for cells whose center lies inside the study boundary"""
    if not polygons:
        return np.ones((spec.nrows, spec.ncols), dtype=bool)
    lat, lon = spec.cell_centers()
    union = shapely.union_all(polygons)
    return shapely.contains_xy(union, lon, lat)


def grid_correlation(a, b, mask=None):
    """Pearson r over cells (joint zeros included), restricted to mask when given"""
    if a.spec != b.spec or a.values.shape != b.values.shape:
        raise GridMismatch('grids differ in origin, size or resolution')
    x = a.values if mask is None else a.values[mask]
    y = b.values if mask is None else b.values[mask]
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance('one grid is constant over the compared cells')
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


def correlation_table(grids_by_instant, mask=None):
    """Long-format (instant, pair, r, note) rows over every instant and mode pair"""
    rows = []
    for instant, grids in grids_by_instant.items():
        for left, right in MODE_PAIRS:
            try:
                r, note = round(grid_correlation(grids[left], grids[right], mask), 12), ''
            except ZeroVariance:
                r, note = None, 'undefined'
            rows.append({'instant': instant, 'pair': f"{left}-{right}", 'r': r, 'note': note})
    return pd.DataFrame(rows, columns=['instant', 'pair', 'r', 'note'])


# === EXPORT ===

def grid_frame(grid):
    lat, lon = grid.spec.cell_centers()
    rows, cols = np.indices(grid.values.shape)
    return pd.DataFrame({
        'row': rows.ravel(),
        'col': cols.ravel(),
        'lat': np.round(lat.ravel(), 7),
        'lon': np.round(lon.ravel(), 7),
        'value': np.round(grid.values.ravel(), 9)
    })


def grid_geojson(grid, properties=None):
    """FeatureCollection of cell polygons with their values"""
    spec = grid.spec
    x0, y0 = spec.origin_xy()
    xs = x0 + np.arange(spec.ncols + 1) * spec.cell_size_mi
    ys = y0 + np.arange(spec.nrows + 1) * spec.cell_size_mi
    gx, gy = np.meshgrid(xs, ys)
    glat, glon = spec.projection.unproject(gx.ravel(), gy.ravel())
    glat = np.round(glat.reshape(gx.shape), 7)
    glon = np.round(glon.reshape(gx.shape), 7)

    features = []
    for r in range(spec.nrows):
        for c in range(spec.ncols):
            ring = [[float(glon[r, c]), float(glat[r, c])],
                    [float(glon[r, c + 1]), float(glat[r, c + 1])],
                    [float(glon[r + 1, c + 1]), float(glat[r + 1, c + 1])],
                    [float(glon[r + 1, c]), float(glat[r + 1, c])],
                    [float(glon[r, c]), float(glat[r, c])]]
            features.append({
                'type': 'Feature',
                'geometry': {'type': 'Polygon', 'coordinates': [ring]},
                'properties': {'row': r, 'col': c, 'value': round(float(grid.values[r, c]), 9)}
            })
    document = {'type': 'FeatureCollection', 'features': features}
    if properties:
        document['properties'] = properties
    return document
