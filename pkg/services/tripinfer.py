"""
Trip inference from availability snapshots, plausibility filters and leisure exclusion
"""
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from itertools import groupby

import pandas as pd

from services.archive import CycleMarker
from services.errors import ConfigError, MalformedDocument, MixedVendors, UnsortedStream
from services.feeds import IdMode
from services.geo import GeoPoint, haversine_mi, point_in_any
from utils.package_generator import read_csv, write_csv

logger = logging.getLogger(__name__)

TRIP_COLUMNS = ['vendor', 'vehicle', 'olat', 'olon', 'dlat', 'dlon', 'start_utc', 'end_utc',
                'dist_mi', 'dur_min', 'linked']
EVENT_COLUMNS = ['vendor', 'kind', 'lat', 'lon', 'time_utc']


def format_utc(timestamp):
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ')


def parse_utc(text):
    return int(datetime.strptime(text, '%Y-%m-%dT%H:%M:%SZ').replace(tzinfo=timezone.utc).timestamp())


@dataclass(frozen=True)
class InferredTrip:
    vendor_id: str
    vehicle_id: str | None
    origin: GeoPoint
    destination: GeoPoint
    start_time: int
    end_time: int
    linked: bool = True

    def __post_init__(self):
        if self.end_time <= self.start_time:
            raise ValueError(f"trip end {self.end_time} must be after start {self.start_time}")

    @property
    def distance_mi(self):
        return haversine_mi(self.origin, self.destination)

    @property
    def duration_min(self):
        return (self.end_time - self.start_time) / 60.0

    @property
    def speed_mph(self):
        return self.distance_mi / (self.duration_min / 60.0)

    def to_row(self):
        return {
            'vendor': self.vendor_id,
            'vehicle': self.vehicle_id or '',
            'olat': self.origin.lat,
            'olon': self.origin.lon,
            'dlat': self.destination.lat,
            'dlon': self.destination.lon,
            'start_utc': format_utc(self.start_time),
            'end_utc': format_utc(self.end_time),
            'dist_mi': round(self.distance_mi, 6),
            'dur_min': round(self.duration_min, 6),
            'linked': self.linked
        }


class EventKind(str, Enum):
    APPEARANCE = 'appearance'
    DISAPPEARANCE = 'disappearance'


@dataclass(frozen=True)
class UnlinkedEvent:
    kind: EventKind
    point: GeoPoint
    time: int
    vendor_id: str = ''


@dataclass(frozen=True)
class SuppressedMove:
    """A disappearance/reappearance read as an operator move rather than a ride"""
    vendor_id: str
    vehicle_id: str
    origin: GeoPoint
    destination: GeoPoint
    start_time: int
    end_time: int
    reason: str
    battery_gain: float | None = None


@dataclass(frozen=True)
class RelocationPolicy:
    max_battery_gain: float = 0.15
    max_gap_hours: float = 6.0
    enabled: bool = True

    def __post_init__(self):
        if self.max_battery_gain < 0 or self.max_gap_hours <= 0:
            raise ConfigError('relocation thresholds must be positive')

    def reason(self, before, after):
        """Suppression reason for a reappearance, or None when it reads as a trip"""
        if not self.enabled:
            return None
        if before.battery_pct is not None and after.battery_pct is not None \
                and after.battery_pct - before.battery_pct > self.max_battery_gain:
            return 'battery_jump'
        return None


@dataclass
class InferenceResult:
    trips: list = field(default_factory=list)
    events: list = field(default_factory=list)
    suppressed: list = field(default_factory=list)


def _cycles(stream, vendor):
    """Group a snapshot stream into (observed_at, {vehicle_id: snapshot}) cycles"""
    previous = None

    def checked():
        nonlocal previous
        for snapshot in stream:
            if snapshot.vendor_id != vendor.vendor_id:
                raise MixedVendors(f"stream for {vendor.vendor_id} contains {snapshot.vendor_id}")
            if previous is not None and snapshot.observed_at < previous:
                raise UnsortedStream(f"snapshot at {snapshot.observed_at} follows {previous}")
            previous = snapshot.observed_at
            yield snapshot

    for observed_at, group in groupby(checked(), key=lambda s: s.observed_at):
        present = {}
        for snapshot in group:
            if isinstance(snapshot, CycleMarker):
                continue
            if snapshot.is_available and snapshot.vehicle_id not in present:
                present[snapshot.vehicle_id] = snapshot
        yield observed_at, present


def infer_trips(stream, vendor, relocation=None):
    """
    Reconstruct trips (consistent ids) or unlinked events (dynamic ids)

    A vehicle that leaves availability at t1 (the first cycle it is missing)
    and returns at t2 yields a trip from its last seen point to its new point.
    A vehicle that never returns yields nothing.
    """
    relocation = relocation or RelocationPolicy()
    if vendor.id_mode == IdMode.DYNAMIC:
        return _infer_dynamic(stream, vendor)

    result = InferenceResult()
    last_seen = {}
    missing_since = {}
    previous_ids = set()
    max_gap = relocation.max_gap_hours * 3600

    for observed_at, present in _cycles(stream, vendor):
        for vehicle_id in previous_ids - present.keys():
            missing_since[vehicle_id] = observed_at

        for vehicle_id, snapshot in present.items():
            if vehicle_id in missing_since:
                t1 = missing_since.pop(vehicle_id)
                before = last_seen[vehicle_id]
                reason = relocation.reason(before, snapshot)
                if reason is None and relocation.enabled and observed_at - t1 > max_gap:
                    reason = 'long_gap'
                if reason is None:
                    result.trips.append(InferredTrip(
                        vendor_id=vendor.vendor_id,
                        vehicle_id=vehicle_id,
                        origin=before.point,
                        destination=snapshot.point,
                        start_time=t1,
                        end_time=observed_at
                    ))
                else:
                    gain = None
                    if before.battery_pct is not None and snapshot.battery_pct is not None:
                        gain = snapshot.battery_pct - before.battery_pct
                    result.suppressed.append(SuppressedMove(
                        vendor_id=vendor.vendor_id,
                        vehicle_id=vehicle_id,
                        origin=before.point,
                        destination=snapshot.point,
                        start_time=t1,
                        end_time=observed_at,
                        reason=reason,
                        battery_gain=gain
                    ))
            last_seen[vehicle_id] = snapshot
        previous_ids = set(present)

    logger.info("%s: %d trips inferred, %d moves suppressed, %d vehicles still away",
                vendor.vendor_id, len(result.trips), len(result.suppressed), len(missing_since))
    return result


def _infer_dynamic(stream, vendor):
    result = InferenceResult()
    previous = None
    for observed_at, present in _cycles(stream, vendor):
        if previous is not None:
            for vehicle_id in sorted(previous.keys() - present.keys()):
                result.events.append(UnlinkedEvent(EventKind.DISAPPEARANCE, previous[vehicle_id].point,
                                                   observed_at, vendor.vendor_id))
            for vehicle_id in sorted(present.keys() - previous.keys()):
                result.events.append(UnlinkedEvent(EventKind.APPEARANCE, present[vehicle_id].point,
                                                   observed_at, vendor.vendor_id))
        previous = present
    logger.info("%s: %d unlinked events", vendor.vendor_id, len(result.events))
    return result


# === FILTERS ===

@dataclass(frozen=True)
class FilterPolicy:
    min_distance_mi: float = 0.02
    max_distance_mi: float = 10.0
    min_duration_min: float = 5.0
    max_duration_min: float = 90.0
    max_speed_mph: float = 20.0

    def __post_init__(self):
        if not self.min_distance_mi < self.max_distance_mi:
            raise ConfigError('filter: min_distance_mi must be below max_distance_mi')
        if not self.min_duration_min < self.max_duration_min:
            raise ConfigError('filter: min_duration_min must be below max_duration_min')
        if self.max_speed_mph <= 0:
            raise ConfigError('filter: max_speed_mph must be positive')

    def check(self, distance_mi, duration_min):
        """First violated rule, or None when the values pass"""
        if distance_mi < self.min_distance_mi:
            return 'below_min_distance'
        if distance_mi > self.max_distance_mi:
            return 'above_max_distance'
        if duration_min < self.min_duration_min:
            return 'below_min_duration'
        if duration_min > self.max_duration_min:
            return 'above_max_duration'
        if distance_mi / (duration_min / 60.0) > self.max_speed_mph:
            return 'above_max_speed'
        return None


@dataclass(frozen=True)
class RejectedTrip:
    trip: InferredTrip
    reason: str


def apply_filters(trips, policy=None):
    """Split trips into (kept, rejected); each rejection names the first failed rule"""
    policy = policy or FilterPolicy()
    kept, rejected = [], []
    for trip in trips:
        reason = policy.check(trip.distance_mi, trip.duration_min)
        if reason is None:
            kept.append(trip)
        else:
            rejected.append(RejectedTrip(trip, reason))
    return kept, rejected


@dataclass(frozen=True)
class LeisurePolicy:
    min_speed_mph: float = 8.0
    min_distance_mi: float = 0.25
    exclusion_zones: tuple = ()

    def reason(self, trip):
        if trip.speed_mph < self.min_speed_mph:
            return 'low_speed'
        if trip.distance_mi < self.min_distance_mi:
            return 'short_distance'
        if point_in_any(trip.origin, self.exclusion_zones) or point_in_any(trip.destination, self.exclusion_zones):
            return 'exclusion_zone'
        return None


def exclude_leisure(trips, policy=None):
    """Split filtered trips into (utilitarian, leisure)"""
    policy = policy or LeisurePolicy()
    utilitarian, leisure = [], []
    for trip in trips:
        (utilitarian if policy.reason(trip) is None else leisure).append(trip)
    return utilitarian, leisure


# === EXPORT ===

def trips_frame(trips):
    return pd.DataFrame([trip.to_row() for trip in trips], columns=TRIP_COLUMNS)


def events_frame(events):
    rows = [{'vendor': e.vendor_id, 'kind': e.kind.value, 'lat': e.point.lat, 'lon': e.point.lon,
             'time_utc': format_utc(e.time)} for e in events]
    return pd.DataFrame(rows, columns=EVENT_COLUMNS)


def trips_from_frame(df):
    trips = []
    for row in df.itertuples(index=False):
        vehicle = getattr(row, 'vehicle')
        trips.append(InferredTrip(
            vendor_id=str(row.vendor),
            vehicle_id=str(vehicle) if isinstance(vehicle, str) and vehicle else None,
            origin=GeoPoint(float(row.olat), float(row.olon)),
            destination=GeoPoint(float(row.dlat), float(row.dlon)),
            start_time=parse_utc(row.start_utc),
            end_time=parse_utc(row.end_utc),
            linked=str(row.linked).lower() == 'true'
        ))
    return trips


def write_trips_csv(trips, path, metadata=None):
    write_csv(trips_frame(trips), path, metadata)


def write_events_csv(events, path, metadata=None):
    write_csv(events_frame(events), path, metadata)


def read_trips_csv(path):
    df, _ = read_csv(path, dtype={'vehicle': str, 'start_utc': str, 'end_utc': str}, keep_default_na=False)
    missing = [c for c in TRIP_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedDocument(f"{path}: trip CSV lacks columns {missing}")
    return trips_from_frame(df)
