"""
Reference implementations the production code is checked against

Each one is written the slow, obvious way and shares no code with the module
it checks beyond the data models, haversine distance and the local plane.
"""
import math
import statistics
from dataclasses import replace
from datetime import timedelta

import pytest

from services.feeds import RouteMode
from services.geo import LocalProjection, haversine_mi


def direct_kde(features, spec):
    """Quartic/uniform kernel summed feature by feature at every cell center"""
    projection = LocalProjection(spec.center)
    x0, y0 = projection.project_point(spec.origin)
    placed = [(projection.project_point(f.point), f.weight, f.radius_mi) for f in features]
    rows = []
    for r in range(spec.nrows):
        row = []
        for c in range(spec.ncols):
            cx = x0 + (c + 0.5) * spec.cell_size_mi
            cy = y0 + (r + 0.5) * spec.cell_size_mi
            total = 0.0
            for (fx, fy), weight, radius in placed:
                d = math.sqrt((cx - fx) ** 2 + (cy - fy) ** 2)
                if d >= radius:
                    continue
                if spec.kernel == 'uniform':
                    total += weight / (math.pi * radius ** 2)
                else:
                    total += weight * 3.0 / math.pi * (1.0 - (d / radius) ** 2) ** 2 / radius ** 2
            row.append(total)
        rows.append(row)
    return rows


def two_pass_pearson(xs, ys):
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    return cov / math.sqrt(var_x * var_y)


def sites_in_radius(point, sites, radius_mi):
    return [site_id for site_id, site in sites if haversine_mi(point, site) <= radius_mi]


def transit_type(trip, stops, radius_mi, trips_by_id):
    """
    T1..T4 by point-in-radius; trips_by_id maps trip id to its ordered stop ids

    T1 needs one trip visiting an origin-side stop before a destination-side stop.
    """
    origin_side = set(sites_in_radius(trip.origin, stops, radius_mi))
    destination_side = set(sites_in_radius(trip.destination, stops, radius_mi))
    if origin_side and destination_side:
        for stop_ids in trips_by_id.values():
            for i, a in enumerate(stop_ids):
                if a in origin_side and any(b in destination_side for b in stop_ids[i + 1:]):
                    return 'T1'
        return 'T2'
    if origin_side or destination_side:
        return 'T3'
    return 'T4'


def bike_class(trip, stations, radius_mi):
    covered = sum(bool(sites_in_radius(p, stations, radius_mi)) for p in (trip.origin, trip.destination))
    return ('C3', 'C2', 'C1')[covered]


# === ITINERARIES ===

def _trip_events(network, day):
    active = network.active_trip_ids(day)
    return [sorted(events, key=lambda e: e.sequence)
            for trip_id, events in sorted(network.events_by_trip.items()) if trip_id in active]


def enumerate_earliest(network, origin, destination, depart, config, day):
    """
    Best total minutes over every itinerary of up to max_transfers + 1 rides

    depart is in seconds after local midnight. Round k extends every k-1 ride
    itinerary by one whole trip: board wherever the rider is at the stop by
    the departure, alight at any later stop, then walk to any stop within the
    transfer cap. Each ride adds boarding plus alighting time after it ends.
    Returns None when nothing is feasible.
    """
    trips = _trip_events(network, day)
    stops = {s.stop_id: s.point for s in network.served_stops}
    speed = config.walk_speed_mph
    penalty = 2.0 * config.boarding_alighting_min * 60.0

    def walk(a, b):
        return haversine_mi(a, b) / speed * 3600.0

    access = {s: walk(origin, p) for s, p in stops.items() if haversine_mi(origin, p) <= config.max_access_walk_mi}
    egress = {s: walk(destination, p) for s, p in stops.items()
              if haversine_mi(destination, p) <= config.max_access_walk_mi}
    if not access or not egress:
        return None

    best = math.inf
    at_stop = {s: depart + w for s, w in access.items()}
    for _ in range(config.max_transfers + 1):
        alighted = {}
        for events in trips:
            for i, boarding in enumerate(events):
                if at_stop.get(boarding.stop_id, math.inf) > boarding.departure:
                    continue
                for later in events[i + 1:]:
                    ready = later.arrival + penalty
                    if ready < alighted.get(later.stop_id, math.inf):
                        alighted[later.stop_id] = ready
        for s, ready in alighted.items():
            if s in egress:
                best = min(best, ready + egress[s])
        at_stop = {}
        for s, ready in alighted.items():
            for u, q in stops.items():
                if u == s or haversine_mi(stops[s], q) <= config.max_transfer_walk_mi:
                    t = ready + (0.0 if u == s else walk(stops[s], q))
                    if t < at_stop.get(u, math.inf):
                        at_stop[u] = t
        if not at_stop:
            break
    return None if best == math.inf else (best - depart) / 60.0


# === SUPPLY ===

def archived_entries(archive, kind, vendor_id):
    """Every record and cycle marker of one vendor, segment by segment"""
    entries = []
    for segment in archive.segments(kind, vendor_id):
        entries.extend(archive.read(segment, markers=True))
    return entries


def newest_cycle(entries, instant, staleness_horizon):
    """Entries of the newest cycle at or before instant; empty when there is none or it is stale"""
    seen = [e for e in entries if e.observed_at <= instant]
    if not seen:
        return []
    newest = max(e.observed_at for e in seen)
    if instant - newest > staleness_horizon:
        return []
    return [e for e in seen if e.observed_at == newest and hasattr(e, 'point')]


def departures_in_window(network, day, start_s, window_s, rail_weight):
    """Weighted departures per served stop, counting previous-day trips that run past midnight"""
    counts = {stop.stop_id: 0 for stop in network.served_stops}
    for shift, service_day in ((0, day), (86400, day - timedelta(days=1))):
        active = network.active_trip_ids(service_day)
        for event in network.stop_time_events:
            t = event.departure - shift
            if event.trip_id in active and event.stop_id in counts and start_s <= t < start_s + window_s:
                counts[event.stop_id] += rail_weight if network.trip_mode(event.trip_id) == RouteMode.RAIL else 1
    return counts


def fishnet_kde(features, spec):
    """Direct summation on the sub-cell raster, then the plain mean of each cell's sub-cells"""
    s = spec.subdivisions
    fine = direct_kde(features, replace(spec, ncols=spec.ncols * s, nrows=spec.nrows * s,
                                        cell_size_mi=spec.cell_size_mi / s, subdivisions=1))
    rows = []
    for r in range(spec.nrows):
        row = []
        for c in range(spec.ncols):
            block = [fine[r * s + i][c * s + j] for i in range(s) for j in range(s)]
            row.append(sum(block) / len(block))
        rows.append(row)
    return rows


# === SUMMARY ===

TYPE_LABELS = ('T1', 'T2', 'T3', 'T4')
CLASS_LABELS = ('C1', 'C2', 'C3')


def _missing(value):
    return value is None or (isinstance(value, float) and math.isnan(value))


def _flag(value):
    return str(value).lower() == 'true'


def spreadsheet_summary(rows, bin_hours=1, morning_peak=(6, 9)):
    """
    Summary tables recomputed row by row from assessment rows (dicts)

    Same shape as the golden summary fixture: hour -> list for the tables,
    name -> value for medians and counts.
    """
    bins = {}
    for row in rows:
        bins.setdefault(int(row['local_hour']) // bin_hours * bin_hours, []).append(row)

    def shares(column, labels):
        return {hour: [round(100.0 * sum(r[column] == label for r in group) / len(group), 6) for label in labels]
                for hour, group in sorted(bins.items())}

    def median(values):
        return round(statistics.median(values), 6) if values else None

    with_alt = [r for r in rows if not _missing(r['transit_median_min'])]
    lb = sum(_flag(r['connecting_lb']) for r in rows)
    ub = sum(_flag(r['connecting_ub']) for r in rows)
    peak = sum(morning_peak[0] <= int(r['local_hour']) < morning_peak[1] for r in rows)
    return {
        'type_shares': shares('transit_type', TYPE_LABELS),
        'class_shares': shares('bike_class', CLASS_LABELS),
        'connecting': {hour: [sum(_flag(r['connecting_lb']) for r in group),
                              sum(_flag(r['connecting_ub']) for r in group)]
                       for hour, group in sorted(bins.items())},
        'medians': {
            'trip_length_mi': median([float(r['dist_mi']) for r in rows]),
            'duration_min': median([float(r['dur_min']) for r in rows]),
            'transit_alt_min': median([float(r['transit_median_min']) for r in with_alt]),
            'time_saved_min': median([float(r['time_saved_min']) for r in with_alt]),
            'scooter_cost_usd': median([float(r['scooter_cost_usd']) for r in rows]),
            'price_premium_usd': median([float(r['price_premium_usd']) for r in with_alt])
        },
        'counts': {
            'trips': len(rows),
            'with_transit_alternative': len(with_alt),
            'morning_peak_share_pct': round(100.0 * peak / len(rows), 6),
            'connecting_lb': lb,
            'connecting_ub': ub,
            'connecting_lb_share_pct': round(100.0 * lb / len(rows), 6),
            'connecting_ub_share_pct': round(100.0 * ub / len(rows), 6)
        }
    }


def summary_tables(summary):
    """A Summary in the shape spreadsheet_summary returns"""
    def table(frame, labels):
        values = frame[list(labels)].to_numpy()
        return {int(hour): [float(v) for v in row] for hour, row in zip(frame.index, values)}

    return {
        'type_shares': table(summary.type_shares, TYPE_LABELS),
        'class_shares': table(summary.class_shares, CLASS_LABELS),
        'connecting': {int(hour): [int(values[0]), int(values[1])]
                       for hour, values in zip(summary.connecting.index, summary.connecting[['lb', 'ub']].to_numpy())},
        'medians': dict(summary.medians),
        'counts': dict(summary.counts)
    }


def assert_same_summary(actual, expected):
    for section in ('type_shares', 'class_shares', 'connecting'):
        assert sorted(actual[section]) == sorted(expected[section]), section
        for hour, values in expected[section].items():
            assert actual[section][hour] == pytest.approx(values, abs=1e-6), (section, hour)
    for section in ('medians', 'counts'):
        assert set(actual[section]) == set(expected[section]), section
        for name, value in expected[section].items():
            if value is None:
                assert actual[section][name] is None, name
            else:
                assert actual[section][name] == pytest.approx(value, abs=1e-6), name
