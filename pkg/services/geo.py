"""Geodesy helpers: points, great-circle distance, local planar projection, polygons"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pyproj import Transformer
from shapely.geometry import Point, shape
from shapely.geometry.base import BaseGeometry

from services.errors import ConfigError

EARTH_RADIUS_MI = 3958.8
FEET_PER_MILE = 5280.0
METERS_PER_MILE = 1609.344


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: lat={self.lat}, lon={self.lon}")

    @staticmethod
    def in_bounds(lat, lon):
        return -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0

    def to_dict(self):
        return {'lat': self.lat, 'lon': self.lon}


def haversine_mi(a, b):
    """Great-circle distance in miles between two GeoPoints"""
    return float(haversine_mi_array(a.lat, a.lon, b.lat, b.lon))


def haversine_mi_array(lat1, lon1, lat2, lon2):
    """Vectorized haversine; any argument may be an array"""
    lat1 = np.radians(lat1)
    lat2 = np.radians(lat2)
    dlat = lat2 - lat1
    dlon = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_MI * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def offset_point(origin, east_mi, north_mi):
    """Point reached by moving east/north (miles) on the local tangent plane"""
    lat = origin.lat + math.degrees(north_mi / EARTH_RADIUS_MI)
    lon = origin.lon + math.degrees(east_mi / (EARTH_RADIUS_MI * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


class LocalProjection:
    """Azimuthal-equidistant plane centered on the study area, in miles"""

    def __init__(self, center):
        self.center = center
        crs = f"+proj=aeqd +lat_0={center.lat} +lon_0={center.lon} +datum=WGS84 +units=m +no_defs"
        self._forward = Transformer.from_crs('EPSG:4326', crs, always_xy=True)
        self._inverse = Transformer.from_crs(crs, 'EPSG:4326', always_xy=True)

    def project(self, lats, lons):
        """(lats, lons) in degrees -> (x, y) arrays in miles"""
        x, y = self._forward.transform(np.asarray(lons, dtype=float), np.asarray(lats, dtype=float))
        return np.asarray(x) / METERS_PER_MILE, np.asarray(y) / METERS_PER_MILE

    def unproject(self, xs, ys):
        """(x, y) in miles -> (lats, lons) arrays in degrees"""
        lon, lat = self._inverse.transform(np.asarray(xs, dtype=float) * METERS_PER_MILE,
                                           np.asarray(ys, dtype=float) * METERS_PER_MILE)
        return np.asarray(lat), np.asarray(lon)

    def project_point(self, point):
        x, y = self.project([point.lat], [point.lon])
        return float(x[0]), float(y[0])


def load_polygons(path):
    """
    Read polygons from a GeoJSON file (FeatureCollection, Feature or bare geometry)

    Each polygon must be valid: closed rings and no self-intersection.
    """
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read polygon file {path}: {e}") from e

    if document.get('type') == 'FeatureCollection':
        geometries = [feature['geometry'] for feature in document.get('features', [])]
    elif document.get('type') == 'Feature':
        geometries = [document['geometry']]
    else:
        geometries = [document]

    polygons = []
    for geometry in geometries:
        geom = shape(geometry)
        if geom.geom_type == 'MultiPolygon':
            parts = list(geom.geoms)
        elif geom.geom_type == 'Polygon':
            parts = [geom]
        else:
            raise ConfigError(f"{path}: expected polygons, found {geom.geom_type}")
        for part in parts:
            validate_polygon(part, source=str(path))
            polygons.append(part)
    return polygons


def validate_polygon(polygon, source='polygon'):
    if not polygon.exterior.is_closed:
        raise ConfigError(f"{source}: polygon ring is not closed")
    if not polygon.is_valid:
        raise ConfigError(f"{source}: polygon is self-intersecting or otherwise invalid")


def point_in_any(point, polygons):
    """True when the point lies inside or on the edge of any polygon"""
    if not polygons:
        return False
    p = Point(point.lon, point.lat)
    return any(poly.covers(p) for poly in polygons if isinstance(poly, BaseGeometry))
