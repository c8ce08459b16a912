"""
Synthetic study area with known ground truth

Writes a GTFS archive, rail entrances, a boundary polygon, a snapshot archive
(one consistent-id scooter vendor, one dynamic-id vendor, one bikeshare
system) and a ready-to-run analysis config. Everything is a pure function of
the arguments, so two builds are byte-identical.
"""
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import yaml

from services.archive import STATIONS, VEHICLES, SnapshotArchive
from services.feeds import (BikeStationStatus, LocationType, Route, RouteMode, ScheduledTrip, ServiceCalendar, Stop,
                            StopTimeEvent, TransitNetwork, VehicleSnapshot, write_gtfs)
from services.geo import GeoPoint, haversine_mi, offset_point
from services.supply import local_instant
from services.tripinfer import InferredTrip

CENTER = GeoPoint(38.90, -77.03)
TIMEZONE = 'America/New_York'
DAY = date(2019, 7, 17)
HALF_WIDTH_MI = 2.0
CYCLES = 121  # 07:00 to 09:00 local, one per minute
SCOOTER_VENDOR = 'scoot'
DYNAMIC_VENDOR = 'dyn'
BIKESHARE_VENDOR = 'cabi'
INSTANTS = ['07:00', '07:30', '08:00', '08:30']

# (east, north) in miles from CENTER; the first four are idle-scooter clusters
PLACES = [
    (-1.2, 0.6), (0.9, 0.9), (-0.6, -1.4), (1.3, -0.5),
    (-1.25, 0.05), (0.75, -0.05), (0.3, 1.25), (0.2, -1.25),
    (1.5, -0.995), (-0.5, -0.9836), (-1.0, 1.3), (1.6, 0.4)
]

# route_id -> (route_type, stop positions, seconds between stops, first departure offset)
LINES = {
    'B1': (3, [(-1.75 + 0.5 * i, 0.0) for i in range(8)], 150, 0),
    'B2': (3, [(0.25, -1.75 + 0.5 * i) for i in range(8)], 150, 300),
    'B3': (3, [(-1.5 + 0.5 * i, 1.25) for i in range(7)], 150, 120),
    'R1': (1, [(-1.5 + 1.0 * i, -1.0) for i in range(4)], 120, 180),
}
ENTRANCE_OFFSET_MI = 0.005
SERVICE_START = 5 * 3600
SERVICE_END = 11 * 3600
HEADWAY = 600


def place(index, east_shift=0.0, north_shift=0.0):
    east, north = PLACES[index]
    return offset_point(CENTER, east + east_shift, north + north_shift)


# === TRANSIT ===

def build_network():
    stops, routes, trips, events = [], [], [], []
    for route_id, (route_type, positions, hop, offset) in LINES.items():
        mode = RouteMode.RAIL if route_type == 1 else RouteMode.BUS
        routes.append(Route(route_id=route_id, mode=mode, route_type=route_type))
        stop_ids = [f"{route_id.lower()}_{i}" for i in range(len(positions))]
        for stop_id, (east, north) in zip(stop_ids, positions):
            stops.append(Stop(stop_id, offset_point(CENTER, east, north)))
            if mode == RouteMode.RAIL:
                stops.append(Stop(f"{stop_id}_e", offset_point(CENTER, east, north + ENTRANCE_OFFSET_MI),
                                  LocationType.ENTRANCE))
        for direction, order in ((0, stop_ids), (1, stop_ids[::-1])):
            for start in range(SERVICE_START + offset, SERVICE_END, HEADWAY):
                trip_id = f"{route_id}_{direction}_{start // 60:04d}"
                trips.append(ScheduledTrip(trip_id=trip_id, route_id=route_id, service_id='wk'))
                for seq, stop_id in enumerate(order, 1):
                    t = start + hop * (seq - 1)
                    events.append(StopTimeEvent(trip_id, stop_id, t, t, seq))

    calendar = ServiceCalendar(service_id='wk', day_mask=0b0011111,
                               start_date=date(2019, 1, 1), end_date=date(2020, 12, 31))
    return TransitNetwork(
        stops=tuple(sorted(stops, key=lambda s: s.stop_id)),
        routes=tuple(sorted(routes, key=lambda r: r.route_id)),
        scheduled_trips=tuple(sorted(trips, key=lambda t: t.trip_id)),
        stop_time_events=tuple(sorted(events, key=lambda e: (e.trip_id, e.sequence))),
        calendars=(calendar,),
        timezone=TIMEZONE
    )


# === SCOOTERS ===

@dataclass
class _Vehicle:
    """Presence intervals [start, end) in cycles, each with a point, battery and id"""
    vehicle_id: str
    intervals: list = field(default_factory=list)

    def at(self, cycle):
        for start, end, point, battery, shown_id in self.intervals:
            if start <= cycle < end:
                return point, battery, shown_id
        return None


def _duration_min(origin, destination, speed_mph):
    return max(6, math.ceil(haversine_mi(origin, destination) * 60.0 / speed_mph))


def _destination(origin_index, origin, seed):
    """First place (scanning from seed) other than the origin at least half a mile away"""
    for j in range(len(PLACES)):
        candidate = (seed + j) % len(PLACES)
        if candidate != origin_index and haversine_mi(origin, place(candidate)) >= 0.5:
            return candidate
    raise ValueError('no destination far enough')


def _scooter_fleet(t0, speed_boost):
    """Vehicles, planted trips and planted relocations of the consistent-id vendor"""
    vehicles, planted, relocations = [], [], []
    for v in range(20):
        origin_index = v % len(PLACES)
        origin = place(origin_index, east_shift=0.004 * (v // len(PLACES)))
        battery = round(0.9 - 0.01 * v, 4)
        vehicle = _Vehicle(f"s{v:02d}")
        cycle = 0
        for leg, (k, seed) in enumerate(((v, v * 5 + 3), (v + 20, v * 7 + 1))):
            dest_index = _destination(origin_index, origin, seed)
            destination = place(dest_index)
            speed = 7.0 if k % 10 == 9 else 10.0 + (k % 4) + speed_boost
            start = 3 + v if leg == 0 else cycle + 3 + (v % 4)
            end = start + _duration_min(origin, destination, speed)
            vehicle.intervals.append((cycle, start, origin, battery, vehicle.vehicle_id))
            planted.append(InferredTrip(SCOOTER_VENDOR, vehicle.vehicle_id, origin, destination,
                                        t0 + 60 * start, t0 + 60 * end))
            origin_index, origin, cycle = dest_index, destination, end
            battery = round(battery - 0.05, 4)
        vehicle.intervals.append((cycle, CYCLES, origin, battery, vehicle.vehicle_id))
        vehicles.append(vehicle)

    for i in range(10):
        vehicle = _Vehicle(f"s{20 + i:02d}")
        home = place(i % 4, north_shift=0.003 * (i // 4 + 1))
        if i < 2:
            # Relocated by the operator with a fresh battery
            moved = place((i + 2) % 4)
            vehicle.intervals += [(0, 30, home, 0.3, vehicle.vehicle_id),
                                  (60, CYCLES, moved, 0.75, vehicle.vehicle_id)]
            relocations.append((vehicle.vehicle_id, t0 + 60 * 30, t0 + 60 * 60))
        else:
            vehicle.intervals.append((0, CYCLES, home, 0.8, vehicle.vehicle_id))
        vehicles.append(vehicle)
    return vehicles, planted, relocations


def _dynamic_fleet():
    """Six vehicles whose id changes after their one ride"""
    vehicles = []
    for j in range(6):
        vehicle = _Vehicle(f"d{j}")
        leave = 10 + 7 * j
        vehicle.intervals += [(0, leave, place((2 * j) % len(PLACES)), None, f"d{j}-g0"),
                              (leave + 12, CYCLES, place((2 * j + 5) % len(PLACES)), None, f"d{j}-g1")]
        vehicles.append(vehicle)
    return vehicles


def _snapshots(vendor_id, vehicles, cycle, observed_at):
    snapshots = []
    for vehicle in vehicles:
        state = vehicle.at(cycle)
        if state is not None:
            point, battery, shown_id = state
            snapshots.append(VehicleSnapshot(vendor_id, shown_id, point, observed_at, battery_pct=battery))
    return snapshots


# === BIKESHARE ===

def station_sites(colocated=False):
    """(station_id, point, base bikes); colocated puts one station beside every scooter place"""
    sites = []
    for i in range(12):
        if colocated:
            parked = sum(1 for v in range(20) if v % len(PLACES) == i) + sum(1 for j in range(10) if j % 4 == i)
            sites.append((f"cb{i:02d}", place(i, east_shift=0.01), 2 + 2 * parked))
        else:
            angle = math.radians(30 * i + 15)
            sites.append((f"cb{i:02d}", offset_point(CENTER, 1.5 * math.cos(angle), 1.5 * math.sin(angle)),
                          4 + i % 5))
    return sites


def _station_statuses(sites, cycle, observed_at):
    return [BikeStationStatus(station_id, point, base + (cycle // 15 + i) % 3, observed_at, BIKESHARE_VENDOR)
            for i, (station_id, point, base) in enumerate(sites)]


# === FILES ===

def boundary_geojson():
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1), (-1, -1)]
    ring = []
    for east, north in corners:
        p = offset_point(CENTER, east * HALF_WIDTH_MI, north * HALF_WIDTH_MI)
        ring.append([round(p.lon, 7), round(p.lat, 7)])
    return {'type': 'FeatureCollection', 'features': [
        {'type': 'Feature', 'properties': {'name': 'minicity'}, 'geometry': {'type': 'Polygon', 'coordinates': [ring]}}
    ]}


def entrances_csv(network):
    lines = ['entrance_id,lat,lon']
    lines += [f"{s.stop_id},{s.point.lat!r},{s.point.lon!r}" for s in network.entrances]
    return '\n'.join(lines) + '\n'


def config_document(periods):
    return {
        'study': {'name': 'minicity', 'boundary': 'boundary.geojson', 'timezone': TIMEZONE, 'archive': 'archive',
                  'entrances': 'entrances.csv'},
        'vendors': [
            {'vendor_id': SCOOTER_VENDOR, 'id_mode': 'consistent', 'poll_interval': 60},
            {'vendor_id': DYNAMIC_VENDOR, 'id_mode': 'dynamic', 'poll_interval': 60}
        ],
        'bikeshare': {'vendors': [BIKESHARE_VENDOR]},
        'supply': {'instants': list(INSTANTS)},
        'periods': [
            {'label': label, 'start_date': day.isoformat(), 'end_date': day.isoformat(), 'gtfs': 'gtfs.zip'}
            for label, day in periods
        ]
    }


@dataclass
class MiniCity:
    root: Path
    config_path: Path
    network: TransitNetwork
    days: list
    planted: dict = field(default_factory=dict)
    relocations: dict = field(default_factory=dict)
    dynamic_events: dict = field(default_factory=dict)
    stations: list = field(default_factory=list)


def build_minicity(root, periods=1, colocated=False):
    """
    Write the synthetic city under root

    periods=2 adds a second analysis week (same weekday, faster riders) so the
    between-period comparison has something to compare.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    network = build_network()
    (root / 'gtfs.zip').write_bytes(write_gtfs(network))
    (root / 'entrances.csv').write_text(entrances_csv(network), encoding='utf-8')
    (root / 'boundary.geojson').write_text(json.dumps(boundary_geojson(), indent=1) + '\n', encoding='utf-8')

    labels = [('pre', DAY), ('post', DAY + timedelta(days=7))][:periods]
    archive = SnapshotArchive(root / 'archive')
    sites = station_sites(colocated)
    city = MiniCity(root=root, config_path=root / 'config.yaml', network=network, days=[d for _, d in labels],
                    stations=[(sid, point) for sid, point, _ in sites])

    for n, (label, day) in enumerate(labels):
        t0 = local_instant(day, '07:00', TIMEZONE)
        scooters, planted, relocations = _scooter_fleet(t0, speed_boost=2.0 * n)
        dynamic = _dynamic_fleet()
        for cycle in range(CYCLES):
            observed_at = t0 + 60 * cycle
            archive.append(VEHICLES, DYNAMIC_VENDOR, _snapshots(DYNAMIC_VENDOR, dynamic, cycle, observed_at))
            archive.append(VEHICLES, SCOOTER_VENDOR, _snapshots(SCOOTER_VENDOR, scooters, cycle, observed_at))
            archive.append(STATIONS, BIKESHARE_VENDOR, _station_statuses(sites, cycle, observed_at))
        city.planted[label] = sorted(planted, key=lambda t: (t.start_time, t.vehicle_id))
        city.relocations[label] = relocations
        city.dynamic_events[label] = 2 * len(dynamic)

    city.config_path.write_text(yaml.safe_dump(config_document(labels), sort_keys=False), encoding='utf-8')
    return city
