"""
Earliest-arrival transit routing with walk access, egress and transfers

The router scans the service day's connections once per ride count. Times
inside the router are seconds after local midnight of the service day.
"""
import logging
import math
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from services.errors import ConfigError, MalformedDocument, Unreachable
from services.geo import GeoPoint, LocalProjection, haversine_mi
from services.supply import SECONDS_PER_DAY, local_clock, local_instant
from services.tripinfer import parse_utc

logger = logging.getLogger(__name__)

BATCH_IN_COLUMNS = ['olat', 'olon', 'dlat', 'dlon', 'start_utc']
BATCH_OUT_COLUMNS = ['median_min', 'n_reachable', 'best_n_transfers']
# KD-tree radius slack so projected distances never clip a great-circle match
_SEARCH_SLACK = 1.01


@dataclass(frozen=True)
class RouterConfig:
    walk_speed_mph: float = 3.0
    max_access_walk_mi: float = 0.5
    max_transfer_walk_mi: float = 0.25
    max_transfers: int = 3
    boarding_alighting_min: float = 0.5
    departure_window_min: int = 10
    window_step_min: int = 1

    def __post_init__(self):
        if self.walk_speed_mph <= 0 or self.max_access_walk_mi <= 0 or self.max_transfer_walk_mi <= 0:
            raise ConfigError('router: walk speed and walk caps must be positive')
        if self.max_transfers < 0:
            raise ConfigError('router: max_transfers must be >= 0')
        if self.boarding_alighting_min < 0:
            raise ConfigError('router: boarding_alighting_min must be >= 0')
        if self.departure_window_min < 1 or self.window_step_min < 1:
            raise ConfigError('router: departure_window_min and window_step_min must be >= 1')

    def walk_seconds(self, distance_mi):
        return distance_mi / self.walk_speed_mph * 3600.0

    def window_offsets_min(self):
        """Departure offsets in minutes, both window ends included"""
        steps = self.departure_window_min // self.window_step_min
        return [k * self.window_step_min for k in range(-steps, steps + 1)]


class LegKind(str, Enum):
    WALK = 'walk'
    RIDE = 'ride'


@dataclass(frozen=True)
class Leg:
    kind: LegKind
    from_stop: str | None = None
    to_stop: str | None = None
    route_id: str | None = None
    trip_id: str | None = None
    mode: str | None = None
    board_time: float | None = None
    alight_time: float | None = None
    walk_minutes: float | None = None


@dataclass
class Journey:
    legs: list
    components: dict
    total_min: float

    @property
    def rides(self):
        return [leg for leg in self.legs if leg.kind == LegKind.RIDE]

    @property
    def n_transfers(self):
        return len(self.rides) - 1

    @property
    def first_ride_mode(self):
        return self.rides[0].mode

    def to_dict(self):
        return {
            'total_min': self.total_min,
            'n_transfers': self.n_transfers,
            'components': dict(self.components),
            'legs': [{k: (v.value if isinstance(v, Enum) else v) for k, v in leg.__dict__.items() if v is not None}
                     for leg in self.legs]
        }


@dataclass
class WindowedTime:
    median_min: float
    samples: list = field(default_factory=list)
    n_reachable: int = 0
    best_n_transfers: int | None = None
    median_journey: Journey | None = None


class TransitRouter:
    """Router over one service day; immutable after construction and safe to share"""

    def __init__(self, network, day, config=None):
        self.network = network
        self.day = day
        self.config = config or RouterConfig()
        self.midnight = local_instant(day, 0, network.timezone)

        stops = sorted(network.served_stops, key=lambda s: s.stop_id)
        self.stop_ids = [s.stop_id for s in stops]
        self.stop_points = [s.point for s in stops]
        self._index = {stop_id: i for i, stop_id in enumerate(self.stop_ids)}
        self.projection = LocalProjection(stops[0].point) if stops else None
        if stops:
            x, y = self.projection.project([p.lat for p in self.stop_points], [p.lon for p in self.stop_points])
            self._tree = cKDTree(np.column_stack([x, y]))
        else:
            self._tree = None

        self.connections = self._build_connections()
        self._deps = [c[0] for c in self.connections]
        self.footpaths = self._build_footpaths()
        logger.info("router for %s: %d stops, %d connections", day, len(self.stop_ids), len(self.connections))

    def _build_connections(self):
        today = self.network.active_trip_ids(self.day)
        yesterday = self.network.active_trip_ids(self.day - timedelta(days=1))
        # yesterday's late trips are kept down to the earliest windowed departure
        earliest = -self.config.departure_window_min * 60
        connections = []
        for trip_id, events in self.network.events_by_trip.items():
            shifts = ([0] if trip_id in today else []) + ([SECONDS_PER_DAY] if trip_id in yesterday else [])
            if not shifts:
                continue
            trip = self.network.trip_by_id[trip_id]
            route = self.network.route_by_id[trip.route_id]
            events = sorted(events, key=lambda e: e.sequence)
            for shift in shifts:
                trip_key = (trip_id, shift)
                for a, b in zip(events, events[1:]):
                    if a.stop_id not in self._index or b.stop_id not in self._index:
                        continue
                    dep = a.departure - shift
                    if dep < earliest:
                        continue
                    connections.append((dep, b.arrival - shift, trip_key, a.sequence,
                                        self._index[a.stop_id], self._index[b.stop_id],
                                        route.route_id, route.mode.value))
        connections.sort(key=lambda c: (c[0], c[1], c[2], c[3]))
        return connections

    def _build_footpaths(self):
        paths = [[(i, 0.0)] for i in range(len(self.stop_ids))]
        if self._tree is None:
            return paths
        cap = self.config.max_transfer_walk_mi
        for i, j in sorted(self._tree.query_pairs(cap * _SEARCH_SLACK)):
            d = haversine_mi(self.stop_points[i], self.stop_points[j])
            if d <= cap:
                walk = self.config.walk_seconds(d)
                paths[i].append((j, walk))
                paths[j].append((i, walk))
        return paths

    def stops_near(self, point, radius_mi):
        """[(stop index, distance_mi)] for stops within radius, by distance then id"""
        if self._tree is None:
            return []
        x, y = self.projection.project_point(point)
        found = []
        for i in self._tree.query_ball_point([x, y], r=radius_mi * _SEARCH_SLACK):
            d = haversine_mi(point, self.stop_points[i])
            if d <= radius_mi:
                found.append((i, d))
        return sorted(found, key=lambda item: (item[1], self.stop_ids[item[0]]))

    def _scan(self, board_ready, bound):
        """One ride from board_ready labels; returns (ready, parents)"""
        n = len(self.stop_ids)
        penalty = 2.0 * self.config.boarding_alighting_min * 60.0
        ready = [math.inf] * n
        parents = [None] * n
        boarded = {}
        earliest = min(board_ready)
        for c in self.connections[bisect_left(self._deps, earliest):]:
            dep, arr, trip_key, _, u, v, route_id, mode = c
            if dep > bound:
                break
            board = boarded.get(trip_key)
            if board is None:
                if board_ready[u] > dep:
                    continue
                board = boarded[trip_key] = (u, dep)
            t = arr + penalty
            if t < ready[v]:
                ready[v] = t
                parents[v] = (trip_key[0], route_id, mode, board[0], board[1], arr)
        return ready, parents

    def _walk_on(self, ready):
        """Labels after one optional footpath from each reached stop"""
        n = len(self.stop_ids)
        out = [math.inf] * n
        via = [None] * n
        for s in range(n):
            if ready[s] == math.inf:
                continue
            for u, walk in self.footpaths[s]:
                t = ready[s] + walk
                if t < out[u]:
                    out[u] = t
                    via[u] = (s, walk)
        return out, via

    def query(self, origin, destination, depart_at):
        """Fastest journey leaving origin at depart_at (UTC seconds)"""
        cfg = self.config
        depart = float(depart_at - self.midnight)
        access = self.stops_near(origin, cfg.max_access_walk_mi)
        egress = self.stops_near(destination, cfg.max_access_walk_mi)
        if not access or not egress:
            raise Unreachable('no stop within walking range of ' + ('origin' if not access else 'destination'))

        n = len(self.stop_ids)
        board_ready = [math.inf] * n
        access_walk = {}
        for i, d in access:
            access_walk[i] = cfg.walk_seconds(d)
            board_ready[i] = depart + access_walk[i]
        egress_walk = {i: cfg.walk_seconds(d) for i, d in egress}

        levels = []
        best = None
        for k in range(1, cfg.max_transfers + 2):
            if min(board_ready) == math.inf:
                break
            ready, parents = self._scan(board_ready, best[0] if best is not None else math.inf)
            # Ties: fewer transfers, then earlier egress start, then stop id
            for i, walk in egress_walk.items():
                if ready[i] == math.inf:
                    continue
                candidate = (ready[i] + walk, k, ready[i], self.stop_ids[i], i)
                if best is None or candidate[:4] < best[:4]:
                    best = candidate
            board_ready, walk_via = self._walk_on(ready)
            levels.append((ready, parents, walk_via))

        if best is None:
            raise Unreachable('no feasible itinerary on this service day')
        return self._journey(best, levels, depart, access_walk, egress_walk)

    def _journey(self, best, levels, depart, access_walk, egress_walk):
        _, k, _, _, stop = best
        penalty_s = self.config.boarding_alighting_min * 60.0
        rides = []
        transfers = []
        v = stop
        for level in range(k, 0, -1):
            parents = levels[level - 1][1]
            trip_id, route_id, mode, u, dep, arr = parents[v]
            rides.append((trip_id, route_id, mode, u, v, dep, arr))
            if level > 1:
                s, walk = levels[level - 2][2][u]
                transfers.append((s, u, walk))
                v = s
        rides.reverse()
        transfers.reverse()

        first_board = rides[0][3]
        legs = [Leg(LegKind.WALK, to_stop=self.stop_ids[first_board], walk_minutes=access_walk[first_board] / 60.0)]
        ride_s = 0.0
        transfer_s = 0.0
        for idx, (trip_id, route_id, mode, u, v, dep, arr) in enumerate(rides):
            legs.append(Leg(LegKind.RIDE, from_stop=self.stop_ids[u], to_stop=self.stop_ids[v], route_id=route_id,
                            trip_id=trip_id, mode=mode, board_time=dep / 60.0, alight_time=arr / 60.0))
            ride_s += arr - dep
            if idx + 1 < len(rides):
                s, nxt, walk = transfers[idx]
                legs.append(Leg(LegKind.WALK, from_stop=self.stop_ids[s], to_stop=self.stop_ids[nxt],
                                walk_minutes=walk / 60.0))
                transfer_s += rides[idx + 1][5] - (arr + 2.0 * penalty_s)
        last = rides[-1][4]
        legs.append(Leg(LegKind.WALK, from_stop=self.stop_ids[last], walk_minutes=egress_walk[last] / 60.0))

        components = {
            'access_walk_min': access_walk[first_board] / 60.0,
            'wait_min': (rides[0][5] - depart - access_walk[first_board]) / 60.0,
            'ride_min': ride_s / 60.0,
            'transfer_min': transfer_s / 60.0,
            'egress_walk_min': egress_walk[last] / 60.0,
            'boarding_alighting_min': 2.0 * self.config.boarding_alighting_min * len(rides)
        }
        return Journey(legs=legs, components=components, total_min=sum(components.values()))

    def windowed(self, origin, destination, trip_start):
        """Median transit time over departures spread around trip_start"""
        samples, journeys = [], []
        for offset in self.config.window_offsets_min():
            try:
                journey = self.query(origin, destination, trip_start + offset * 60)
            except Unreachable:
                samples.append(None)
                continue
            samples.append(journey.total_min)
            journeys.append(journey)

        if len(journeys) * 2 < len(samples):
            raise Unreachable(f"only {len(journeys)} of {len(samples)} departures reach the destination")
        # even counts take the lower middle
        ordered = sorted(journeys, key=lambda j: j.total_min)
        median_journey = ordered[(len(ordered) - 1) // 2]
        return WindowedTime(
            median_min=median_journey.total_min,
            samples=samples,
            n_reachable=len(journeys),
            best_n_transfers=min(j.n_transfers for j in journeys),
            median_journey=median_journey
        )


def earliest_arrival(network, origin, destination, depart_at, day, config=None):
    return TransitRouter(network, day, config).query(origin, destination, depart_at)


def windowed_transit_time(network, origin, destination, trip_start, day, config=None):
    return TransitRouter(network, day, config).windowed(origin, destination, trip_start)


class RouterPool:
    """Routers built lazily per service day"""

    def __init__(self, network, config=None):
        self.network = network
        self.config = config or RouterConfig()
        self._routers = {}

    def for_instant(self, instant):
        day, _ = local_clock(instant, self.network.timezone)
        return self.for_day(day)

    def for_day(self, day):
        if day not in self._routers:
            self._routers[day] = TransitRouter(self.network, day, self.config)
        return self._routers[day]


def route_batch(network, frame, config=None, jobs=1):
    """Windowed transit time for each (olat, olon, dlat, dlon, start_utc) row"""
    missing = [c for c in BATCH_IN_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedDocument(f"batch query CSV lacks columns {missing}")
    pool = RouterPool(network, config)
    queries = []
    for row in frame.itertuples(index=False):
        start = parse_utc(row.start_utc) if isinstance(row.start_utc, str) else int(row.start_utc)
        queries.append((GeoPoint(float(row.olat), float(row.olon)), GeoPoint(float(row.dlat), float(row.dlon)), start))
    # Build every day's router up front; workers only read them
    for _, _, start in queries:
        pool.for_instant(start)

    def answer(query):
        origin, destination, start = query
        try:
            result = pool.for_instant(start).windowed(origin, destination, start)
        except Unreachable:
            return {'median_min': None, 'n_reachable': 0, 'best_n_transfers': None}
        return {'median_min': round(result.median_min, 6), 'n_reachable': result.n_reachable,
                'best_n_transfers': result.best_n_transfers}

    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        rows = list(executor.map(answer, queries))
    return pd.DataFrame(rows, columns=BATCH_OUT_COLUMNS)
