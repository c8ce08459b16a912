"""
Feed parsers: GBFS vehicle and station status, GTFS schedules, rail entrances

All parsers are pure functions over bytes and return immutable models.
"""
import gzip
import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from functools import cached_property

import numpy as np
import pandas as pd

from services.errors import DanglingReference, MalformedDocument, MissingField, MissingTable, NonMonotonicStopTimes
from services.geo import GeoPoint

logger = logging.getLogger(__name__)

WEEKDAYS = ('monday', 'tuesday', 'wednesday', 'thursday', 'friday', 'saturday', 'sunday')
RAIL_ROUTE_TYPES = {0, 1, 2, 5, 12}
BUS_ROUTE_TYPES = {3, 11}
GTFS_DATE_FORMAT = '%Y%m%d'


class IdMode(str, Enum):
    CONSISTENT = 'consistent'
    DYNAMIC = 'dynamic'


class BatteryScale(str, Enum):
    AUTO = 'auto'
    FRACTION = 'fraction'
    PERCENT = 'percent'


class LocationType(str, Enum):
    STOP = 'stop'
    ENTRANCE = 'entrance'


class RouteMode(str, Enum):
    BUS = 'bus'
    RAIL = 'rail'


# === GBFS MODELS ===

@dataclass(frozen=True)
class VendorProfile:
    vendor_id: str
    id_mode: IdMode = IdMode.CONSISTENT
    poll_interval: int = 60
    battery_scale: BatteryScale = BatteryScale.AUTO

    def __post_init__(self):
        if self.poll_interval < 60:
            raise ValueError(f"{self.vendor_id}: poll_interval must be >= 60 s, got {self.poll_interval}")

    def to_dict(self):
        return {
            'vendor_id': self.vendor_id,
            'id_mode': self.id_mode.value,
            'poll_interval': self.poll_interval,
            'battery_scale': self.battery_scale.value
        }


@dataclass(frozen=True)
class VehicleSnapshot:
    vendor_id: str
    vehicle_id: str
    point: GeoPoint
    observed_at: int
    is_reserved: bool = False
    is_disabled: bool = False
    battery_pct: float | None = None

    def __post_init__(self):
        if self.observed_at <= 0:
            raise ValueError(f"observed_at must be positive, got {self.observed_at}")
        if self.battery_pct is not None and not (0.0 <= self.battery_pct <= 1.0):
            raise ValueError(f"battery_pct must be a fraction, got {self.battery_pct}")

    @property
    def is_available(self):
        return not (self.is_reserved or self.is_disabled)

    def to_dict(self):
        return {
            'vendor_id': self.vendor_id,
            'vehicle_id': self.vehicle_id,
            'lat': self.point.lat,
            'lon': self.point.lon,
            'observed_at': self.observed_at,
            'is_reserved': self.is_reserved,
            'is_disabled': self.is_disabled,
            'battery_pct': self.battery_pct
        }


@dataclass(frozen=True)
class BikeStationStatus:
    station_id: str
    point: GeoPoint
    bikes_available: int
    observed_at: int
    vendor_id: str = 'bikeshare'

    def __post_init__(self):
        if self.bikes_available < 0:
            raise ValueError(f"{self.station_id}: bikes_available must be >= 0")

    def to_dict(self):
        return {
            'vendor_id': self.vendor_id,
            'station_id': self.station_id,
            'lat': self.point.lat,
            'lon': self.point.lon,
            'bikes_available': self.bikes_available,
            'observed_at': self.observed_at
        }


@dataclass
class StatusParse:
    """Snapshots from one free-vehicle-status payload plus per-record tallies"""
    snapshots: list
    records: int = 0
    out_of_range: int = 0
    missing_fields: int = 0
    battery_invalid: int = 0
    battery_scale: BatteryScale | None = None
    battery_ambiguous: bool = False

    @property
    def dropped(self):
        return self.out_of_range + self.missing_fields


@dataclass
class StationParse:
    statuses: list
    records: int = 0
    missing_information: int = 0
    out_of_range: int = 0


@dataclass(frozen=True)
class RailEntrance:
    entrance_id: str
    point: GeoPoint


# === GTFS MODELS ===

@dataclass(frozen=True)
class Stop:
    stop_id: str
    point: GeoPoint
    location_type: LocationType = LocationType.STOP


@dataclass(frozen=True)
class Route:
    route_id: str
    mode: RouteMode
    route_type: int


@dataclass(frozen=True)
class ScheduledTrip:
    trip_id: str
    route_id: str
    service_id: str
    service_day_mask: int = 0


@dataclass(frozen=True)
class StopTimeEvent:
    trip_id: str
    stop_id: str
    arrival: int
    departure: int
    sequence: int


@dataclass(frozen=True)
class ServiceCalendar:
    service_id: str
    day_mask: int = 0
    start_date: date | None = None
    end_date: date | None = None
    added: frozenset = frozenset()
    removed: frozenset = frozenset()

    def runs_on(self, day):
        if day in self.removed:
            return False
        if day in self.added:
            return True
        if self.start_date is None or not (self.start_date <= day <= self.end_date):
            return False
        return bool(self.day_mask & (1 << day.weekday()))


@dataclass(frozen=True)
class TransitNetwork:
    stops: tuple
    routes: tuple
    scheduled_trips: tuple
    stop_time_events: tuple
    calendars: tuple = ()
    timezone: str = 'UTC'
    rejected_trips: tuple = field(default=(), compare=False)
    unknown_route_types: int = field(default=0, compare=False)

    @cached_property
    def stop_by_id(self):
        return {stop.stop_id: stop for stop in self.stops}

    @cached_property
    def route_by_id(self):
        return {route.route_id: route for route in self.routes}

    @cached_property
    def trip_by_id(self):
        return {trip.trip_id: trip for trip in self.scheduled_trips}

    @cached_property
    def calendar_by_id(self):
        return {cal.service_id: cal for cal in self.calendars}

    @cached_property
    def events_by_trip(self):
        grouped = {}
        for event in self.stop_time_events:
            grouped.setdefault(event.trip_id, []).append(event)
        return grouped

    @cached_property
    def events_by_stop(self):
        grouped = {}
        for event in self.stop_time_events:
            grouped.setdefault(event.stop_id, []).append(event)
        return grouped

    @property
    def served_stops(self):
        return [stop for stop in self.stops if stop.location_type == LocationType.STOP]

    @property
    def entrances(self):
        return [stop for stop in self.stops if stop.location_type == LocationType.ENTRANCE]

    def active_services(self, day):
        return {cal.service_id for cal in self.calendars if cal.runs_on(day)}

    def active_trip_ids(self, day):
        services = self.active_services(day)
        return {trip.trip_id for trip in self.scheduled_trips if trip.service_id in services}

    def trip_mode(self, trip_id):
        return self.route_by_id[self.trip_by_id[trip_id].route_id].mode

    def summary(self):
        return {
            'stops': len(self.served_stops),
            'entrances': len(self.entrances),
            'routes': len(self.routes),
            'scheduled_trips': len(self.scheduled_trips),
            'stop_time_events': len(self.stop_time_events),
            'rejected_trips': len(self.rejected_trips),
            'timezone': self.timezone
        }


# === GBFS PARSING ===

def _load_json(document):
    if isinstance(document, str):
        document = document.encode('utf-8')
    try:
        if document[:2] == b'\x1f\x8b':
            document = gzip.decompress(document)
        return json.loads(document)
    except (OSError, EOFError, ValueError, UnicodeDecodeError) as e:
        raise MalformedDocument(f"unparseable JSON document: {e}") from e


def _as_bool(value):
    if isinstance(value, str):
        return value.strip().lower() in ('true', '1', 'yes')
    return bool(value)


def _vehicle_records(payload):
    if not isinstance(payload, dict):
        raise MalformedDocument('status document is not a JSON object')
    data = payload.get('data', payload)
    if not isinstance(data, dict):
        raise MalformedDocument("'data' is not an object")
    for key in ('bikes', 'vehicles'):
        if isinstance(data.get(key), list):
            return data[key]
    raise MalformedDocument("status document has no 'bikes' or 'vehicles' array")


def _raw_battery(record):
    for key in ('current_fuel_percent', 'battery_pct', 'battery_level', 'battery'):
        value = record.get(key)
        if value is None or value == '':
            continue
        try:
            return float(value)
        except (TypeError, ValueError):
            return None
    return None


def _vehicle_fields(record):
    """(vehicle id, lat, lon) of one status record"""
    if not isinstance(record, dict):
        raise MissingField('vehicle record is not an object')
    vehicle_id = next((record[key] for key in ('bike_id', 'vehicle_id', 'id') if record.get(key) is not None), None)
    if vehicle_id is None or vehicle_id == '':
        raise MissingField('vehicle record has no id')
    try:
        return vehicle_id, float(record['lat']), float(record['lon'])
    except (KeyError, TypeError, ValueError) as e:
        raise MissingField(f"vehicle {vehicle_id}: no usable coordinates") from e


def parse_gbfs_status(document, vendor, observed_at):
    """
    Parse a free-vehicle-status payload into VehicleSnapshots

    Records lacking an id or coordinates are skipped and counted as missing
    fields; records with out-of-range coordinates are dropped and counted.
    """
    records = _vehicle_records(_load_json(document))
    result = StatusParse(snapshots=[], records=len(records))

    raw_batteries = [b for b in (_raw_battery(r) for r in records if isinstance(r, dict)) if b is not None]
    scale = vendor.battery_scale
    if scale == BatteryScale.AUTO and raw_batteries:
        scale = BatteryScale.PERCENT if max(raw_batteries) > 1.0 else BatteryScale.FRACTION
        result.battery_ambiguous = all(b in (0.0, 1.0) for b in raw_batteries)
        if result.battery_ambiguous:
            logger.warning("%s: battery values are all 0/1, read as fractions", vendor.vendor_id)
    result.battery_scale = scale

    for record in records:
        try:
            vehicle_id, lat, lon = _vehicle_fields(record)
        except MissingField as e:
            logger.debug("%s: %s", vendor.vendor_id, e)
            result.missing_fields += 1
            continue
        if not GeoPoint.in_bounds(lat, lon):
            result.out_of_range += 1
            continue

        battery = _raw_battery(record)
        if battery is not None:
            if scale == BatteryScale.PERCENT:
                battery = battery / 100.0
            if not (0.0 <= battery <= 1.0):
                result.battery_invalid += 1
                battery = None

        result.snapshots.append(VehicleSnapshot(
            vendor_id=vendor.vendor_id,
            vehicle_id=str(vehicle_id),
            point=GeoPoint(lat, lon),
            observed_at=int(observed_at),
            is_reserved=_as_bool(record.get('is_reserved', False)),
            is_disabled=_as_bool(record.get('is_disabled', False)),
            battery_pct=battery
        ))

    if result.dropped:
        logger.info("%s: %d of %d records dropped (%d out of range, %d missing fields)",
                    vendor.vendor_id, result.dropped, result.records,
                    result.out_of_range, result.missing_fields)
    return result


def _station_records(payload):
    data = payload.get('data', payload) if isinstance(payload, dict) else None
    if not isinstance(data, dict) or not isinstance(data.get('stations'), list):
        raise MalformedDocument("station document has no 'stations' array")
    return data['stations']


def parse_station_status(status_document, information_document, observed_at, vendor_id='bikeshare'):
    """Join GBFS station_status with station_information into BikeStationStatus rows"""
    info = {}
    for station in _station_records(_load_json(information_document)):
        try:
            info[str(station['station_id'])] = (float(station['lat']), float(station['lon']))
        except (KeyError, TypeError, ValueError):
            continue

    statuses = _station_records(_load_json(status_document))
    result = StationParse(statuses=[], records=len(statuses))
    for station in statuses:
        station_id = str(station.get('station_id', ''))
        if station_id not in info:
            result.missing_information += 1
            continue
        lat, lon = info[station_id]
        if not GeoPoint.in_bounds(lat, lon):
            result.out_of_range += 1
            continue
        bikes = station.get('num_bikes_available', station.get('numBikesAvailable', 0))
        try:
            bikes = max(int(bikes), 0)
        except (TypeError, ValueError):
            bikes = 0
        # Out-of-service stations offer nothing
        if not _as_bool(station.get('is_installed', True)) or not _as_bool(station.get('is_renting', True)):
            bikes = 0
        result.statuses.append(BikeStationStatus(
            station_id=station_id,
            point=GeoPoint(lat, lon),
            bikes_available=bikes,
            observed_at=int(observed_at),
            vendor_id=vendor_id
        ))
    return result


# === GTFS PARSING ===

def route_mode(route_type):
    """Map a GTFS route_type to (mode, known)"""
    if route_type in RAIL_ROUTE_TYPES or 100 <= route_type <= 199 or 400 <= route_type <= 499 \
            or 900 <= route_type <= 999:
        return RouteMode.RAIL, True
    if route_type in BUS_ROUTE_TYPES or 700 <= route_type <= 799:
        return RouteMode.BUS, True
    return RouteMode.BUS, False


def parse_gtfs_time(value):
    """HH:MM:SS (hours may exceed 24) -> seconds of day; blank -> NaN"""
    if value is None:
        return np.nan
    text = str(value).strip()
    if not text:
        return np.nan
    parts = text.split(':')
    if len(parts) != 3:
        raise MalformedDocument(f"bad GTFS time {text!r}")
    try:
        h, m, s = (int(p) for p in parts)
    except ValueError as e:
        raise MalformedDocument(f"bad GTFS time {text!r}") from e
    return h * 3600 + m * 60 + s


def format_gtfs_time(seconds):
    seconds = int(seconds)
    return f"{seconds // 3600:02d}:{(seconds % 3600) // 60:02d}:{seconds % 60:02d}"


def _read_tables(archive):
    try:
        zf = zipfile.ZipFile(io.BytesIO(archive))
    except zipfile.BadZipFile as e:
        raise MalformedDocument(f"GTFS archive is not a zip file: {e}") from e

    tables = {}
    with zf:
        for name in zf.namelist():
            base = name.rsplit('/', 1)[-1]
            if not base.endswith('.txt'):
                continue
            with zf.open(name) as handle:
                try:
                    df = pd.read_csv(handle, dtype=str, keep_default_na=False, encoding='utf-8-sig')
                except pd.errors.EmptyDataError:
                    df = pd.DataFrame()
            df.columns = [c.strip() for c in df.columns]
            tables[base[:-4]] = df
    return tables


def _require(tables, name, columns):
    if name not in tables:
        raise MissingTable(f"GTFS archive has no {name}.txt")
    df = tables[name]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise MissingField(f"{name}.txt lacks columns {missing}")
    return df


def _parse_date(text):
    try:
        return datetime.strptime(text.strip(), GTFS_DATE_FORMAT).date()
    except ValueError as e:
        raise MalformedDocument(f"bad GTFS date {text!r}") from e


def _parse_calendars(tables):
    if 'calendar' not in tables and 'calendar_dates' not in tables:
        raise MissingTable('GTFS archive has neither calendar.txt nor calendar_dates.txt')

    base = {}
    if 'calendar' in tables:
        df = _require(tables, 'calendar', ['service_id', *WEEKDAYS, 'start_date', 'end_date'])
        for row in df.itertuples(index=False):
            mask = 0
            for bit, day in enumerate(WEEKDAYS):
                if getattr(row, day).strip() == '1':
                    mask |= 1 << bit
            base[row.service_id] = (mask, _parse_date(row.start_date), _parse_date(row.end_date))

    added, removed = {}, {}
    if 'calendar_dates' in tables:
        df = _require(tables, 'calendar_dates', ['service_id', 'date', 'exception_type'])
        for row in df.itertuples(index=False):
            target = added if row.exception_type.strip() == '1' else removed
            target.setdefault(row.service_id, set()).add(_parse_date(row.date))

    calendars = []
    for service_id in sorted(set(base) | set(added) | set(removed)):
        mask, start, end = base.get(service_id, (0, None, None))
        calendars.append(ServiceCalendar(
            service_id=service_id,
            day_mask=mask,
            start_date=start,
            end_date=end,
            added=frozenset(added.get(service_id, ())),
            removed=frozenset(removed.get(service_id, ()))
        ))
    return calendars


def _parse_stops(tables):
    df = _require(tables, 'stops', ['stop_id', 'stop_lat', 'stop_lon'])
    location_types = df['location_type'] if 'location_type' in df.columns else pd.Series([''] * len(df))
    stops = []
    for stop_id, lat, lon, loc in zip(df['stop_id'], df['stop_lat'], df['stop_lon'], location_types):
        loc = loc.strip()
        if loc in ('', '0'):
            kind = LocationType.STOP
        elif loc == '2':
            kind = LocationType.ENTRANCE
        else:
            continue
        try:
            point = GeoPoint(float(lat), float(lon))
        except ValueError as e:
            raise MalformedDocument(f"stop {stop_id}: {e}") from e
        stops.append(Stop(stop_id=stop_id, point=point, location_type=kind))
    return sorted(stops, key=lambda s: s.stop_id)


def _parse_routes(tables):
    df = _require(tables, 'routes', ['route_id', 'route_type'])
    routes, unknown = [], 0
    for route_id, route_type in zip(df['route_id'], df['route_type']):
        try:
            route_type = int(route_type)
        except ValueError as e:
            raise MalformedDocument(f"route {route_id}: bad route_type {route_type!r}") from e
        mode, known = route_mode(route_type)
        if not known:
            unknown += 1
            logger.warning("route %s: route_type %d not mapped, treated as bus", route_id, route_type)
        routes.append(Route(route_id=route_id, mode=mode, route_type=route_type))
    return sorted(routes, key=lambda r: r.route_id), unknown


def _interpolate_times(st):
    """Fill blank arrival/departure times within each trip"""
    st['arrival'] = st['arrival'].fillna(st['departure'])
    st['departure'] = st['departure'].fillna(st['arrival'])
    if not st['arrival'].isna().any():
        return st
    gaps = st.groupby('trip_id')['arrival'].transform(lambda s: s.isna().any())
    filled = st.loc[gaps].groupby('trip_id', group_keys=False)['arrival'].apply(
        lambda s: s.interpolate(method='linear', limit_area='inside'))
    st.loc[gaps, 'arrival'] = filled
    st.loc[gaps, 'departure'] = st.loc[gaps, 'departure'].fillna(filled)
    return st


def check_stop_times(trip_id, sequence, arrival, departure):
    """
    Raise NonMonotonicStopTimes unless one trip's calls (sorted by sequence)
    have strictly increasing sequence numbers and non-decreasing times
    """
    if np.isnan(arrival).any() or np.isnan(departure).any():
        raise NonMonotonicStopTimes(f"trip {trip_id}: stop times missing and not interpolable")
    if (np.diff(sequence) <= 0).any():
        raise NonMonotonicStopTimes(f"trip {trip_id}: repeated stop_sequence")
    if (arrival > departure).any():
        raise NonMonotonicStopTimes(f"trip {trip_id}: departs a stop before arriving")
    if (departure[:-1] > arrival[1:]).any():
        raise NonMonotonicStopTimes(f"trip {trip_id}: arrives before leaving the previous stop")


def parse_gtfs(archive, fallback_timezone='UTC'):
    """
    Parse a GTFS zip archive into a validated TransitNetwork

    Dangling references reject the archive; trips whose stop times are not
    monotonic are excluded and tallied in ``rejected_trips``.
    """
    tables = _read_tables(archive)
    for name in ('stops', 'routes', 'trips', 'stop_times'):
        if name not in tables:
            raise MissingTable(f"GTFS archive has no {name}.txt")

    stops = _parse_stops(tables)
    routes, unknown_types = _parse_routes(tables)
    calendars = _parse_calendars(tables)
    calendar_masks = {cal.service_id: cal.day_mask for cal in calendars}

    timezone = fallback_timezone
    agency = tables.get('agency')
    if agency is not None and 'agency_timezone' in agency.columns and len(agency):
        timezone = agency['agency_timezone'].iloc[0].strip() or fallback_timezone

    route_ids = {r.route_id for r in routes}
    trips_df = _require(tables, 'trips', ['route_id', 'service_id', 'trip_id'])
    dangling = sorted(set(trips_df['route_id']) - route_ids)
    if dangling:
        raise DanglingReference(f"trips reference unknown routes {dangling[:5]}")

    st = _require(tables, 'stop_times', ['trip_id', 'arrival_time', 'departure_time', 'stop_id', 'stop_sequence'])
    stop_ids = {s.stop_id for s in stops if s.location_type == LocationType.STOP}
    unknown_stops = sorted(set(st['stop_id']) - stop_ids)
    if unknown_stops:
        raise DanglingReference(f"stop_times reference unknown stops {unknown_stops[:5]}")
    unknown_trips = sorted(set(st['trip_id']) - set(trips_df['trip_id']))
    if unknown_trips:
        raise DanglingReference(f"stop_times reference unknown trips {unknown_trips[:5]}")

    try:
        st = pd.DataFrame({
            'trip_id': st['trip_id'],
            'stop_id': st['stop_id'],
            'sequence': st['stop_sequence'].astype(int),
            'arrival': st['arrival_time'].map(parse_gtfs_time).astype(float),
            'departure': st['departure_time'].map(parse_gtfs_time).astype(float),
        })
    except ValueError as e:
        raise MalformedDocument(f"stop_times.txt: {e}") from e
    st = st.sort_values(['trip_id', 'sequence'], kind='mergesort').reset_index(drop=True)
    st = _interpolate_times(st)

    rejected = []
    for trip_id, calls in st.groupby('trip_id', sort=True):
        try:
            check_stop_times(trip_id, calls['sequence'].to_numpy(), calls['arrival'].to_numpy(),
                             calls['departure'].to_numpy())
        except NonMonotonicStopTimes as e:
            logger.debug("GTFS: %s", e)
            rejected.append(trip_id)
    rejected = tuple(rejected)
    if rejected:
        logger.warning("GTFS: %d trips rejected for non-monotonic stop times (e.g. %s)",
                       len(rejected), ', '.join(rejected[:3]))
        st = st[~st['trip_id'].isin(rejected)]

    events = tuple(
        StopTimeEvent(trip_id=t, stop_id=s, arrival=int(round(a)), departure=int(round(d)), sequence=int(q))
        for t, s, a, d, q in zip(st['trip_id'], st['stop_id'], st['arrival'], st['departure'], st['sequence'])
    )
    rejected_set = set(rejected)
    trips = tuple(sorted(
        (ScheduledTrip(trip_id=t, route_id=r, service_id=s, service_day_mask=calendar_masks.get(s, 0))
         for t, r, s in zip(trips_df['trip_id'], trips_df['route_id'], trips_df['service_id'])
         if t not in rejected_set),
        key=lambda trip: trip.trip_id
    ))

    network = TransitNetwork(
        stops=tuple(stops),
        routes=tuple(routes),
        scheduled_trips=trips,
        stop_time_events=events,
        calendars=tuple(calendars),
        timezone=timezone,
        rejected_trips=rejected,
        unknown_route_types=unknown_types
    )
    logger.info("GTFS parsed: %s", network.summary())
    return network


def _zip_write(zf, name, df):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, df.to_csv(index=False, lineterminator='\n'))


def write_gtfs(network):
    """Serialize a TransitNetwork back to a GTFS zip (deterministic bytes)"""
    loc_codes = {LocationType.STOP: '0', LocationType.ENTRANCE: '2'}
    agency = pd.DataFrame([{'agency_id': 'mobgap', 'agency_name': 'mobgap',
                            'agency_url': 'https://example.invalid', 'agency_timezone': network.timezone}])
    stops = pd.DataFrame(
        [{'stop_id': s.stop_id, 'stop_lat': repr(s.point.lat), 'stop_lon': repr(s.point.lon),
          'location_type': loc_codes[s.location_type]} for s in network.stops],
        columns=['stop_id', 'stop_lat', 'stop_lon', 'location_type'])
    routes = pd.DataFrame(
        [{'route_id': r.route_id, 'agency_id': 'mobgap', 'route_type': str(r.route_type)} for r in network.routes],
        columns=['route_id', 'agency_id', 'route_type'])
    trips = pd.DataFrame(
        [{'route_id': t.route_id, 'service_id': t.service_id, 'trip_id': t.trip_id} for t in network.scheduled_trips],
        columns=['route_id', 'service_id', 'trip_id'])
    stop_times = pd.DataFrame(
        [{'trip_id': e.trip_id, 'arrival_time': format_gtfs_time(e.arrival),
          'departure_time': format_gtfs_time(e.departure), 'stop_id': e.stop_id,
          'stop_sequence': str(e.sequence)} for e in network.stop_time_events],
        columns=['trip_id', 'arrival_time', 'departure_time', 'stop_id', 'stop_sequence'])

    calendar_rows, date_rows = [], []
    for cal in network.calendars:
        if cal.start_date is not None:
            row = {'service_id': cal.service_id}
            for bit, day in enumerate(WEEKDAYS):
                row[day] = '1' if cal.day_mask & (1 << bit) else '0'
            row['start_date'] = cal.start_date.strftime(GTFS_DATE_FORMAT)
            row['end_date'] = cal.end_date.strftime(GTFS_DATE_FORMAT)
            calendar_rows.append(row)
        for day in sorted(cal.added):
            date_rows.append({'service_id': cal.service_id, 'date': day.strftime(GTFS_DATE_FORMAT),
                              'exception_type': '1'})
        for day in sorted(cal.removed):
            date_rows.append({'service_id': cal.service_id, 'date': day.strftime(GTFS_DATE_FORMAT),
                              'exception_type': '2'})

    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, 'w') as zf:
        _zip_write(zf, 'agency.txt', agency)
        _zip_write(zf, 'stops.txt', stops)
        _zip_write(zf, 'routes.txt', routes)
        _zip_write(zf, 'trips.txt', trips)
        _zip_write(zf, 'stop_times.txt', stop_times)
        _zip_write(zf, 'calendar.txt', pd.DataFrame(
            calendar_rows, columns=['service_id', *WEEKDAYS, 'start_date', 'end_date']))
        if date_rows:
            _zip_write(zf, 'calendar_dates.txt', pd.DataFrame(
                date_rows, columns=['service_id', 'date', 'exception_type']))
    return buffer.getvalue()


# === RAIL ENTRANCES ===

def parse_rail_entrances(document):
    """
    Rail entrance points from a CSV (entrance_id,lat,lon) or a TransitNetwork

    Duplicate ids keep the first row. An empty file is a valid, empty list.
    """
    if isinstance(document, TransitNetwork):
        rows = [(s.stop_id, s.point.lat, s.point.lon) for s in document.entrances]
    else:
        if isinstance(document, str):
            document = document.encode('utf-8')
        if not document.strip():
            return []
        try:
            df = pd.read_csv(io.BytesIO(document), dtype=str, keep_default_na=False, encoding='utf-8-sig')
        except pd.errors.EmptyDataError:
            return []
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise MalformedDocument(f"entrance CSV unreadable: {e}") from e
        df.columns = [c.strip() for c in df.columns]
        missing = [c for c in ('entrance_id', 'lat', 'lon') if c not in df.columns]
        if missing:
            raise MissingField(f"entrance CSV lacks columns {missing}")
        rows = list(zip(df['entrance_id'], df['lat'], df['lon']))

    entrances, seen = [], set()
    for entrance_id, lat, lon in rows:
        entrance_id = str(entrance_id).strip()
        if entrance_id in seen:
            logger.warning("duplicate rail entrance id %s, keeping the first", entrance_id)
            continue
        try:
            point = GeoPoint(float(lat), float(lon))
        except ValueError as e:
            raise MalformedDocument(f"entrance {entrance_id}: {e}") from e
        seen.add(entrance_id)
        entrances.append(RailEntrance(entrance_id=entrance_id, point=point))
    return entrances
