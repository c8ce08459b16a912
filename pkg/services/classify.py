"""
Trip classification against transit and bikeshare service areas, transit-connecting
detection, and time/cost comparison with the fastest transit alternative
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from scipy.stats import mannwhitneyu

from services.errors import ConfigError, EmptyInput, NoAlternative, Unreachable
from services.feeds import RouteMode
from services.geo import FEET_PER_MILE, LocalProjection, haversine_mi, haversine_mi_array
from services.tripinfer import format_utc

logger = logging.getLogger(__name__)

MORNING_PEAK_HOURS = (6, 9)
SIGNIFICANCE_LEVELS = ((0.01, '***'), (0.05, '**'), (0.1, '*'))
SCOPES = ('utilitarian', 'all')


class AreaMode(str, Enum):
    TRANSIT = 'transit'
    BIKESHARE = 'bikeshare'


DEFAULT_SERVICE_RADII = {AreaMode.TRANSIT: 0.25, AreaMode.BIKESHARE: 0.125}


class TransitType(str, Enum):
    T1 = 'T1'
    T2 = 'T2'
    T3 = 'T3'
    T4 = 'T4'


class BikeClass(str, Enum):
    C1 = 'C1'
    C2 = 'C2'
    C3 = 'C3'


@dataclass(frozen=True)
class Site:
    site_id: str
    point: object


class ServiceArea:
    """Sites plus a service radius; coverage is great-circle unless a street graph is given"""

    def __init__(self, mode, sites, radius_mi=None, street_graph=None):
        self.mode = AreaMode(mode)
        self.sites = sorted(sites, key=lambda s: s.site_id)
        self.radius_mi = DEFAULT_SERVICE_RADII[self.mode] if radius_mi is None else radius_mi
        if self.radius_mi <= 0:
            raise ConfigError(f"{self.mode.value} service radius must be positive")
        self.street_graph = street_graph
        self._tree = None
        if self.sites:
            self.projection = LocalProjection(self.sites[0].point)
            x, y = self.projection.project([s.point.lat for s in self.sites], [s.point.lon for s in self.sites])
            self._tree = cKDTree(np.column_stack([x, y]))
        if street_graph is not None:
            self._snapped = [street_graph.snap(s.point) for s in self.sites]

    @classmethod
    def for_transit(cls, network, radius_mi=None, street_graph=None):
        return cls(AreaMode.TRANSIT, [Site(s.stop_id, s.point) for s in network.served_stops], radius_mi, street_graph)

    @classmethod
    def for_bikeshare(cls, stations, radius_mi=None, street_graph=None):
        unique = {}
        for station in stations:
            unique.setdefault(station.station_id, Site(station.station_id, station.point))
        return cls(AreaMode.BIKESHARE, list(unique.values()), radius_mi, street_graph)

    @property
    def distance_model(self):
        return 'street network' if self.street_graph is not None else 'great-circle'

    def with_radius(self, radius_mi):
        return ServiceArea(self.mode, self.sites, radius_mi, self.street_graph)

    def sites_within(self, point):
        """Ids of sites within the service radius of point, sorted"""
        if self._tree is None:
            return []
        if self.street_graph is not None:
            reach = self.street_graph.distances_from(point, self.radius_mi)
            return sorted(site.site_id for site, (node, offset) in zip(self.sites, self._snapped)
                          if node in reach and reach[node] + offset <= self.radius_mi)
        x, y = self.projection.project_point(point)
        candidates = self._tree.query_ball_point([x, y], r=self.radius_mi * 1.01)
        return sorted(self.sites[i].site_id for i in candidates
                      if haversine_mi(point, self.sites[i].point) <= self.radius_mi)

    def covers(self, point):
        return bool(self.sites_within(point))


class DirectLines:
    """Answers whether one scheduled trip serves any origin-side stop before a destination-side stop"""

    def __init__(self, network):
        self.network = network
        self._by_day = {}

    def visits_on(self, day):
        if day not in self._by_day:
            active = self.network.active_trip_ids(day)
            visits = {}
            for event in self.network.stop_time_events:
                if event.trip_id in active:
                    visits.setdefault(event.stop_id, []).append((event.trip_id, event.sequence))
            self._by_day[day] = visits
        return self._by_day[day]

    def exists(self, origin_stops, destination_stops, day):
        visits = self.visits_on(day)
        first_at_origin = {}
        for stop_id in origin_stops:
            for trip_id, seq in visits.get(stop_id, ()):
                first_at_origin[trip_id] = min(seq, first_at_origin.get(trip_id, seq))
        for stop_id in destination_stops:
            for trip_id, seq in visits.get(stop_id, ()):
                if trip_id in first_at_origin and first_at_origin[trip_id] < seq:
                    return True
        return False


def trip_day(trip, tz):
    return datetime.fromtimestamp(trip.start_time, tz=ZoneInfo(tz)).date()


def classify_vs_transit(trip, area, network, day=None, direct_lines=None):
    day = day or trip_day(trip, network.timezone)
    direct_lines = direct_lines or DirectLines(network)
    origin_stops = area.sites_within(trip.origin)
    destination_stops = area.sites_within(trip.destination)
    if origin_stops and destination_stops:
        return TransitType.T1 if direct_lines.exists(origin_stops, destination_stops, day) else TransitType.T2
    if origin_stops or destination_stops:
        return TransitType.T3
    return TransitType.T4


def classify_vs_bikeshare(trip, area):
    covered = int(area.covers(trip.origin)) + int(area.covers(trip.destination))
    return (BikeClass.C3, BikeClass.C2, BikeClass.C1)[covered]


@dataclass(frozen=True)
class Connecting:
    connecting_lb: bool
    connecting_ub: bool


def normalize_thresholds(thresholds_ft):
    """(lower, upper) in feet; out-of-order pairs are swapped with a warning"""
    lower, upper = thresholds_ft
    if lower > upper:
        logger.warning("connect thresholds %s out of order, using [%s, %s]", list(thresholds_ft), upper, lower)
        lower, upper = upper, lower
    return lower, upper


def nearest_entrance_ft(point, entrances):
    if not entrances:
        return math.inf
    lats = np.array([e.point.lat for e in entrances])
    lons = np.array([e.point.lon for e in entrances])
    return float(haversine_mi_array(point.lat, point.lon, lats, lons).min()) * FEET_PER_MILE


def detect_transit_connecting(trip, entrances, thresholds_ft=(30, 100)):
    lower, upper = normalize_thresholds(thresholds_ft)
    nearest = min(nearest_entrance_ft(trip.origin, entrances), nearest_entrance_ft(trip.destination, entrances))
    return Connecting(connecting_lb=nearest <= lower, connecting_ub=nearest <= upper)


# === COST COMPARISON ===

@dataclass(frozen=True)
class PricingScheme:
    unlock_usd: float = 1.0
    per_min_usd: float = 0.15
    bus_fare_usd: float = 2.0
    rail_fare_usd: float = 2.25

    def __post_init__(self):
        if min(self.unlock_usd, self.per_min_usd, self.bus_fare_usd, self.rail_fare_usd) < 0:
            raise ConfigError('pricing: all prices must be >= 0')

    def scooter_cost(self, duration_min):
        return self.unlock_usd + self.per_min_usd * duration_min

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class CostComparison:
    scooter_cost: float
    transit_cost: float
    price_premium: float
    time_saved: float


def compare_costs(trip, pricing, transit_alt):
    """Scooter vs fastest-transit cost and time; transit_alt is a windowed result"""
    if transit_alt is None:
        raise NoAlternative('trip has no reachable transit alternative')
    scooter = pricing.scooter_cost(trip.duration_min)
    journey = transit_alt.median_journey
    is_rail = journey is not None and journey.first_ride_mode == RouteMode.RAIL.value
    fare = pricing.rail_fare_usd if is_rail else pricing.bus_fare_usd
    return CostComparison(
        scooter_cost=scooter,
        transit_cost=fare,
        price_premium=scooter - fare,
        time_saved=transit_alt.median_min - trip.duration_min
    )


# === ASSESSMENT ===

@dataclass
class TripAssessment:
    trip: object
    transit_type: TransitType
    bike_class: BikeClass
    connecting_lb: bool
    connecting_ub: bool
    scooter_cost_usd: float
    utilitarian: bool = True
    transit_median_min: float | None = None
    transit_cost_usd: float | None = None
    time_saved_min: float | None = None
    price_premium_usd: float | None = None
    n_transfers: int | None = None

    @property
    def has_alternative(self):
        return self.transit_median_min is not None


@dataclass
class AssessmentContext:
    network: object
    transit_area: ServiceArea
    bike_area: ServiceArea
    entrances: list
    pricing: PricingScheme
    routers: object = None
    thresholds_ft: tuple = (30, 100)
    direct_lines: DirectLines = None

    def __post_init__(self):
        if self.direct_lines is None:
            self.direct_lines = DirectLines(self.network)


def assess_trip(trip, context, utilitarian=True):
    transit_type = classify_vs_transit(trip, context.transit_area, context.network,
                                       direct_lines=context.direct_lines)
    connecting = detect_transit_connecting(trip, context.entrances, context.thresholds_ft)
    assessment = TripAssessment(
        trip=trip,
        transit_type=transit_type,
        bike_class=classify_vs_bikeshare(trip, context.bike_area),
        connecting_lb=connecting.connecting_lb,
        connecting_ub=connecting.connecting_ub,
        scooter_cost_usd=context.pricing.scooter_cost(trip.duration_min),
        utilitarian=utilitarian
    )
    if context.routers is None or not utilitarian or transit_type not in (TransitType.T1, TransitType.T2):
        return assessment

    try:
        alt = context.routers.for_instant(trip.start_time).windowed(trip.origin, trip.destination, trip.start_time)
        comparison = compare_costs(trip, context.pricing, alt)
    except (Unreachable, NoAlternative):
        return assessment
    assessment.transit_median_min = alt.median_min
    assessment.transit_cost_usd = comparison.transit_cost
    assessment.time_saved_min = comparison.time_saved
    assessment.price_premium_usd = comparison.price_premium
    assessment.n_transfers = alt.best_n_transfers
    return assessment


def assess_trips(trips, context, utilitarian_flags=None, jobs=1):
    """Assess every trip; order of the result follows the input"""
    trips = list(trips)
    flags = list(utilitarian_flags) if utilitarian_flags is not None else [True] * len(trips)
    if context.routers is not None:
        # Routers are built here so worker threads only read them
        for trip in trips:
            context.routers.for_instant(trip.start_time)
        for trip in trips:
            context.direct_lines.visits_on(trip_day(trip, context.network.timezone))
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        return list(executor.map(lambda args: assess_trip(args[0], context, args[1]), zip(trips, flags)))


def _round(value, digits=6):
    return None if value is None else round(value, digits)


def assessments_frame(assessments, tz, period=''):
    rows = []
    for a in assessments:
        trip = a.trip
        rows.append({
            'period': period,
            'vendor': trip.vendor_id,
            'vehicle': trip.vehicle_id or '',
            'start_utc': format_utc(trip.start_time),
            'end_utc': format_utc(trip.end_time),
            'local_hour': datetime.fromtimestamp(trip.start_time, tz=ZoneInfo(tz)).hour,
            'olat': trip.origin.lat,
            'olon': trip.origin.lon,
            'dlat': trip.destination.lat,
            'dlon': trip.destination.lon,
            'dist_mi': round(trip.distance_mi, 6),
            'dur_min': round(trip.duration_min, 6),
            'utilitarian': a.utilitarian,
            'transit_type': a.transit_type.value,
            'bike_class': a.bike_class.value,
            'connecting_lb': a.connecting_lb,
            'connecting_ub': a.connecting_ub,
            'transit_median_min': _round(a.transit_median_min),
            'n_transfers': a.n_transfers,
            'transit_fare_usd': _round(a.transit_cost_usd),
            'scooter_cost_usd': round(a.scooter_cost_usd, 6),
            'time_saved_min': _round(a.time_saved_min),
            'price_premium_usd': _round(a.price_premium_usd)
        })
    return pd.DataFrame(rows)


# === SUMMARY ===

@dataclass
class Summary:
    period: str
    type_shares: pd.DataFrame
    class_shares: pd.DataFrame
    connecting: pd.DataFrame
    medians: dict
    counts: dict = field(default_factory=dict)


def _hour_bins(frame, bin_hours):
    return (frame['local_hour'] // bin_hours) * bin_hours


def _shares(bins, labels, categories):
    table = pd.crosstab(bins, labels, normalize='index') * 100.0
    table = table.reindex(columns=categories, fill_value=0.0)
    table.index.name = 'hour'
    table.columns.name = None
    return table.round(6)


def summarize(assessments, period, tz, bin_hours=1):
    if not assessments:
        raise EmptyInput(f"period {period}: no assessments to summarize")
    return summarize_frame(assessments_frame(assessments, tz, period), period, bin_hours)


def summarize_frame(frame, period, bin_hours=1):
    """
    Shares by hour-of-day, connecting counts by hour, medians and counts

    Works on the assessment table (as written to CSV). Medians of transit
    time, time saved and premium cover trips that have a transit alternative.
    """
    if frame.empty:
        raise EmptyInput(f"period {period}: no assessments to summarize")
    frame = frame.astype({'connecting_lb': bool, 'connecting_ub': bool})
    bins = _hour_bins(frame, bin_hours)

    type_shares = _shares(bins, frame['transit_type'], [t.value for t in TransitType])
    class_shares = _shares(bins, frame['bike_class'], [c.value for c in BikeClass])
    connecting = frame.groupby(bins)[['connecting_lb', 'connecting_ub']].sum().astype(int)
    connecting.columns = ['lb', 'ub']
    connecting.index.name = 'hour'

    with_alt = frame.dropna(subset=['transit_median_min'])

    def median(series):
        return None if series.empty else round(float(series.median()), 6)

    start, end = MORNING_PEAK_HOURS
    medians = {
        'trip_length_mi': median(frame['dist_mi']),
        'duration_min': median(frame['dur_min']),
        'transit_alt_min': median(with_alt['transit_median_min']),
        'time_saved_min': median(with_alt['time_saved_min']),
        'scooter_cost_usd': median(frame['scooter_cost_usd']),
        'price_premium_usd': median(with_alt['price_premium_usd'])
    }
    counts = {
        'trips': len(frame),
        'with_transit_alternative': len(with_alt),
        'morning_peak_share_pct': round(100.0 * float(frame['local_hour'].between(start, end - 1).mean()), 6),
        'connecting_lb': int(frame['connecting_lb'].sum()),
        'connecting_ub': int(frame['connecting_ub'].sum()),
        'connecting_lb_share_pct': round(100.0 * float(frame['connecting_lb'].mean()), 6),
        'connecting_ub_share_pct': round(100.0 * float(frame['connecting_ub'].mean()), 6)
    }
    return Summary(period=period, type_shares=type_shares, class_shares=class_shares,
                   connecting=connecting, medians=medians, counts=counts)


def significance_marker(p_value):
    if p_value is None:
        return ''
    for level, marker in SIGNIFICANCE_LEVELS:
        if p_value < level:
            return marker
    return ''


COMPARED_METRICS = (
    ('trip_length_mi', 'dist_mi', False),
    ('duration_min', 'dur_min', False),
    ('transit_alt_min', 'transit_median_min', True),
    ('time_saved_min', 'time_saved_min', True),
    ('scooter_cost_usd', 'scooter_cost_usd', False)
)


def compare_periods(first, second, tz):
    """Medians of two periods side by side with two-sided Mann-Whitney markers"""
    (label_a, assessments_a), (label_b, assessments_b) = first, second
    if not assessments_a or not assessments_b:
        raise EmptyInput('both periods need assessments to compare')
    return compare_frames((label_a, assessments_frame(assessments_a, tz, label_a)),
                          (label_b, assessments_frame(assessments_b, tz, label_b)))


def compare_frames(first, second):
    (label_a, frame_a), (label_b, frame_b) = first, second
    if frame_a.empty or frame_b.empty:
        raise EmptyInput('both periods need assessments to compare')
    rows = []
    for metric, column, needs_alt in COMPARED_METRICS:
        a = frame_a[column].dropna().astype(float) if needs_alt else frame_a[column].astype(float)
        b = frame_b[column].dropna().astype(float) if needs_alt else frame_b[column].astype(float)
        p_value = None
        if len(a) and len(b):
            if a.nunique() == 1 and b.nunique() == 1 and a.iloc[0] == b.iloc[0]:
                p_value = 1.0
            else:
                p_value = float(mannwhitneyu(a, b, alternative='two-sided').pvalue)
        rows.append({
            'metric': metric,
            label_a: None if a.empty else round(float(a.median()), 6),
            label_b: None if b.empty else round(float(b.median()), 6),
            'p_value': None if p_value is None else round(p_value, 6),
            'significance': significance_marker(p_value)
        })
    return pd.DataFrame(rows, columns=['metric', label_a, label_b, 'p_value', 'significance'])
