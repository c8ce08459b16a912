"""
Tests for the GBFS, GTFS and rail-entrance parsers.
"""
import gzip
import io
import json
import zipfile
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from services.errors import DanglingReference, MalformedDocument, MissingField, MissingTable, NonMonotonicStopTimes
from services.feeds import (BatteryScale, IdMode, LocationType, RouteMode, VendorProfile, VehicleSnapshot,
                            check_stop_times, format_gtfs_time, parse_gbfs_status, parse_gtfs, parse_gtfs_time,
                            parse_rail_entrances, parse_station_status, route_mode, write_gtfs)
from services.geo import GeoPoint

FIXTURES = Path(__file__).parent / 'fixtures'
OBSERVED_AT = 1563364800
SPIN = VendorProfile('spin')

MINI_TABLES = {
    'agency.txt': "agency_id,agency_name,agency_url,agency_timezone\n"
                  "wm,Metro,https://example.invalid,America/New_York\n",
    'stops.txt': "stop_id,stop_name,stop_lat,stop_lon,location_type\n"
                 "A,Alpha,38.9000,-77.0400,0\n"
                 "B,Bravo,38.9050,-77.0350,0\n"
                 "C,Charlie,38.9100,-77.0300,\n"
                 "D,Delta,38.9150,-77.0250,0\n"
                 "E1,Delta entrance,38.9152,-77.0248,2\n",
    'routes.txt': "route_id,agency_id,route_short_name,route_type\n"
                  "RED,wm,Red,1\n",
    'trips.txt': "route_id,service_id,trip_id\n"
                 "RED,WKDY,t1\n"
                 "RED,WKDY,t2\n",
    'stop_times.txt': "trip_id,arrival_time,departure_time,stop_id,stop_sequence\n"
                      "t1,08:00:00,08:00:00,A,1\n"
                      "t1,08:03:00,08:03:30,B,2\n"
                      "t1,08:06:00,08:06:00,C,3\n"
                      "t1,08:09:00,08:09:00,D,4\n"
                      "t2,24:10:00,24:10:00,A,1\n"
                      "t2,24:13:00,24:13:00,B,2\n"
                      "t2,24:16:00,24:16:00,C,3\n"
                      "t2,24:19:00,24:19:00,D,4\n",
    'calendar.txt': "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n"
                    "WKDY,1,1,1,1,1,0,0,20190701,20190731\n",
    'calendar_dates.txt': "service_id,date,exception_type\n"
                          "WKDY,20190704,2\n"
                          "WKDY,20190706,1\n",
}


def gtfs_zip(tables):
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, 'w') as zf:
        for name, text in tables.items():
            zf.writestr(name, text)
    return buffer.getvalue()


def status_payload(*vehicles, key='bikes'):
    return json.dumps({'last_updated': OBSERVED_AT, 'data': {key: list(vehicles)}}).encode('utf-8')


def vehicle(vehicle_id, lat=38.9, lon=-77.03, **extra):
    return {'bike_id': vehicle_id, 'lat': lat, 'lon': lon, 'is_reserved': 0, 'is_disabled': 0, **extra}


class TestVendorProfile:
    """Vendor settings validation"""

    def test_rejects_sub_minute_polling(self):
        with pytest.raises(ValueError):
            VendorProfile('spin', poll_interval=30)

    def test_defaults(self):
        profile = VendorProfile('bird')
        assert profile.id_mode == IdMode.CONSISTENT
        assert profile.poll_interval == 60
        assert profile.battery_scale == BatteryScale.AUTO


class TestGbfsStatus:
    """Free-vehicle-status parsing"""

    def test_two_valid_vehicles(self):
        result = parse_gbfs_status(status_payload(vehicle('a'), vehicle('b')), SPIN, OBSERVED_AT)
        assert len(result.snapshots) == 2
        assert result.dropped == 0
        assert {s.vehicle_id for s in result.snapshots} == {'a', 'b'}
        assert all(s.observed_at == OBSERVED_AT and s.vendor_id == 'spin' for s in result.snapshots)

    def test_out_of_range_vehicle_dropped(self):
        result = parse_gbfs_status(status_payload(vehicle('a'), vehicle('b', lat=91.0)), SPIN, OBSERVED_AT)
        assert len(result.snapshots) == 1
        assert result.out_of_range == 1
        assert len(result.snapshots) + result.dropped == result.records

    def test_missing_fields_skipped_and_tallied(self):
        no_id = {'lat': 38.9, 'lon': -77.0}
        no_coords = {'bike_id': 'c'}
        result = parse_gbfs_status(status_payload(vehicle('a'), no_id, no_coords, 'junk'), SPIN, OBSERVED_AT)
        assert [s.vehicle_id for s in result.snapshots] == ['a']
        assert result.missing_fields == 3
        assert len(result.snapshots) + result.dropped == result.records == 4

    def test_sample_fixture(self):
        document = (FIXTURES / 'gbfs_spin_sample.json').read_bytes()
        result = parse_gbfs_status(document, SPIN, OBSERVED_AT)
        assert len(result.snapshots) == 12
        assert sum(s.is_disabled for s in result.snapshots) == 1
        assert sum(s.is_reserved for s in result.snapshots) == 1
        assert sum(s.is_available for s in result.snapshots) == 10
        assert result.battery_scale == BatteryScale.PERCENT
        assert all(0.0 <= s.battery_pct <= 1.0 for s in result.snapshots)

    def test_vehicles_array_and_id_aliases(self):
        payload = status_payload({'vehicle_id': 'v1', 'lat': 38.9, 'lon': -77.0},
                                 {'id': 'v2', 'lat': '38.91', 'lon': '-77.01'}, key='vehicles')
        result = parse_gbfs_status(payload, SPIN, OBSERVED_AT)
        assert [s.vehicle_id for s in result.snapshots] == ['v1', 'v2']
        assert result.snapshots[1].point == GeoPoint(38.91, -77.01)

    def test_numeric_zero_id(self):
        result = parse_gbfs_status(status_payload({'bike_id': 0, 'lat': 38.9, 'lon': -77.0}), SPIN, OBSERVED_AT)
        assert [s.vehicle_id for s in result.snapshots] == ['0']
        assert result.missing_fields == 0

    def test_gzip_payload(self):
        payload = gzip.compress(status_payload(vehicle('a')))
        assert len(parse_gbfs_status(payload, SPIN, OBSERVED_AT).snapshots) == 1

    def test_string_booleans(self):
        payload = status_payload(vehicle('a', is_reserved='true', is_disabled='false'))
        snapshot = parse_gbfs_status(payload, SPIN, OBSERVED_AT).snapshots[0]
        assert snapshot.is_reserved and not snapshot.is_disabled
        assert not snapshot.is_available

    @pytest.mark.parametrize('document', [b'not json', b'[1, 2]', b'{"data": {"stations": []}}', b'\x1f\x8bxx'])
    def test_malformed_documents(self, document):
        with pytest.raises(MalformedDocument):
            parse_gbfs_status(document, SPIN, OBSERVED_AT)


class TestBatteryScale:
    """Battery levels are normalized to fractions"""

    def test_percent_detected(self):
        payload = status_payload(vehicle('a', battery_level=80), vehicle('b', battery_level=5))
        result = parse_gbfs_status(payload, SPIN, OBSERVED_AT)
        assert result.battery_scale == BatteryScale.PERCENT
        assert [s.battery_pct for s in result.snapshots] == [0.8, 0.05]

    def test_fraction_detected(self):
        payload = status_payload(vehicle('a', current_fuel_percent=0.8), vehicle('b', current_fuel_percent=0.25))
        result = parse_gbfs_status(payload, SPIN, OBSERVED_AT)
        assert result.battery_scale == BatteryScale.FRACTION
        assert [s.battery_pct for s in result.snapshots] == [0.8, 0.25]
        assert not result.battery_ambiguous

    def test_all_zero_one_is_ambiguous(self):
        payload = status_payload(vehicle('a', battery=1), vehicle('b', battery=0))
        result = parse_gbfs_status(payload, SPIN, OBSERVED_AT)
        assert result.battery_ambiguous
        assert result.battery_scale == BatteryScale.FRACTION

    def test_forced_percent_flags_invalid(self):
        vendor = VendorProfile('spin', battery_scale=BatteryScale.PERCENT)
        payload = status_payload(vehicle('a', battery_level=150), vehicle('b', battery_level=50))
        result = parse_gbfs_status(payload, vendor, OBSERVED_AT)
        assert result.battery_invalid == 1
        assert [s.battery_pct for s in result.snapshots] == [None, 0.5]

    def test_missing_battery_is_none(self):
        snapshot = parse_gbfs_status(status_payload(vehicle('a')), SPIN, OBSERVED_AT).snapshots[0]
        assert snapshot.battery_pct is None

    def test_snapshot_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            VehicleSnapshot('spin', 'a', GeoPoint(38.9, -77.0), OBSERVED_AT, battery_pct=1.5)


class TestStationStatus:
    """station_status joined with station_information"""

    INFO = json.dumps({'data': {'stations': [
        {'station_id': '31000', 'lat': 38.858, 'lon': -77.053},
        {'station_id': '31001', 'lat': 38.857, 'lon': -77.059},
        {'station_id': '31002', 'lat': 38.856, 'lon': -77.049},
    ]}})

    def test_join(self):
        status = json.dumps({'data': {'stations': [
            {'station_id': '31000', 'num_bikes_available': 7, 'is_installed': 1, 'is_renting': 1},
            {'station_id': '31001', 'num_bikes_available': 3, 'is_installed': 1, 'is_renting': 0},
            {'station_id': '31002', 'num_bikes_available': -2},
            {'station_id': '39999', 'num_bikes_available': 4},
        ]}})
        result = parse_station_status(status, self.INFO, OBSERVED_AT, vendor_id='cabi')
        assert result.records == 4
        assert result.missing_information == 1
        by_id = {s.station_id: s for s in result.statuses}
        assert by_id['31000'].bikes_available == 7
        assert by_id['31001'].bikes_available == 0
        assert by_id['31002'].bikes_available == 0
        assert by_id['31000'].point == GeoPoint(38.858, -77.053)
        assert all(s.vendor_id == 'cabi' for s in result.statuses)

    def test_missing_stations_array(self):
        with pytest.raises(MalformedDocument):
            parse_station_status('{"data": {}}', self.INFO, OBSERVED_AT)


class TestGtfs:
    """GTFS archive parsing and validation"""

    def test_mini_feed_counts(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        assert len(network.served_stops) == 4
        assert [e.stop_id for e in network.entrances] == ['E1']
        assert len(network.routes) == 1
        assert len(network.scheduled_trips) == 2
        assert len(network.stop_time_events) == 8
        assert network.rejected_trips == ()

    def test_agency_timezone_and_rail_mode(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES), fallback_timezone='UTC')
        assert network.timezone == 'America/New_York'
        assert network.route_by_id['RED'].mode == RouteMode.RAIL
        assert network.trip_mode('t1') == RouteMode.RAIL

    def test_after_midnight_times_kept(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        first = network.events_by_trip['t2'][0]
        assert first.arrival == 24 * 3600 + 600

    def test_dwell_preserved(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        b = network.events_by_trip['t1'][1]
        assert (b.arrival, b.departure) == (8 * 3600 + 180, 8 * 3600 + 210)

    def test_calendar_with_exceptions(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        assert network.active_trip_ids(date(2019, 7, 17)) == {'t1', 't2'}
        assert network.active_trip_ids(date(2019, 7, 4)) == set()
        assert network.active_trip_ids(date(2019, 7, 6)) == {'t1', 't2'}
        assert network.active_trip_ids(date(2019, 7, 7)) == set()
        assert network.active_trip_ids(date(2019, 8, 1)) == set()

    def test_canonical_order(self):
        tables = dict(MINI_TABLES)
        lines = MINI_TABLES['stop_times.txt'].splitlines()
        tables['stop_times.txt'] = '\n'.join([lines[0], *reversed(lines[1:])]) + '\n'
        shuffled = parse_gtfs(gtfs_zip(tables))
        assert shuffled == parse_gtfs(gtfs_zip(MINI_TABLES))
        keys = [(e.trip_id, e.sequence) for e in shuffled.stop_time_events]
        assert keys == sorted(keys)
        assert [s.stop_id for s in shuffled.stops] == sorted(s.stop_id for s in shuffled.stops)

    def test_missing_stop_times(self):
        tables = {k: v for k, v in MINI_TABLES.items() if k != 'stop_times.txt'}
        with pytest.raises(MissingTable):
            parse_gtfs(gtfs_zip(tables))

    def test_missing_calendars(self):
        tables = {k: v for k, v in MINI_TABLES.items() if not k.startswith('calendar')}
        with pytest.raises(MissingTable):
            parse_gtfs(gtfs_zip(tables))

    def test_unknown_stop_rejects_archive(self):
        tables = dict(MINI_TABLES)
        tables['stop_times.txt'] += "t2,24:22:00,24:22:00,Z,5\n"
        with pytest.raises(DanglingReference):
            parse_gtfs(gtfs_zip(tables))

    def test_unknown_route_rejects_archive(self):
        tables = dict(MINI_TABLES)
        tables['trips.txt'] += "BLUE,WKDY,t3\n"
        with pytest.raises(DanglingReference):
            parse_gtfs(gtfs_zip(tables))

    def test_out_of_order_sequence_rejects_trip(self):
        tables = dict(MINI_TABLES)
        tables['trips.txt'] += "RED,WKDY,t3\n"
        tables['stop_times.txt'] += ("t3,09:00:00,09:00:00,A,1\n"
                                     "t3,09:05:00,09:05:00,C,3\n"
                                     "t3,09:10:00,09:10:00,B,2\n")
        network = parse_gtfs(gtfs_zip(tables))
        assert network.rejected_trips == ('t3',)
        assert sorted(network.trip_by_id) == ['t1', 't2']
        assert 't3' not in network.events_by_trip

    def test_blank_intermediate_time_interpolated(self):
        tables = dict(MINI_TABLES)
        tables['stop_times.txt'] = tables['stop_times.txt'].replace('t1,08:06:00,08:06:00,C,3', 't1,,,C,3')
        network = parse_gtfs(gtfs_zip(tables))
        c = network.events_by_trip['t1'][2]
        assert c.arrival == c.departure == round((8 * 3600 + 180 + 8 * 3600 + 540) / 2)

    def test_missing_column(self):
        tables = dict(MINI_TABLES)
        tables['stop_times.txt'] = tables['stop_times.txt'].replace(',stop_sequence', '', 1)
        with pytest.raises(MissingField, match='stop_sequence'):
            parse_gtfs(gtfs_zip(tables))

    def test_not_a_zip(self):
        with pytest.raises(MalformedDocument):
            parse_gtfs(b'PK but not really')

    def test_round_trip(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        again = parse_gtfs(write_gtfs(network))
        assert again == network
        assert write_gtfs(again) == write_gtfs(network)


class TestGtfsHelpers:
    """Route modes and time strings"""

    @pytest.mark.parametrize('route_type, mode', [
        (0, RouteMode.RAIL), (1, RouteMode.RAIL), (2, RouteMode.RAIL), (5, RouteMode.RAIL),
        (12, RouteMode.RAIL), (3, RouteMode.BUS), (11, RouteMode.BUS), (109, RouteMode.RAIL),
        (700, RouteMode.BUS),
    ])
    def test_route_mode(self, route_type, mode):
        assert route_mode(route_type) == (mode, True)

    def test_unknown_route_type_is_bus(self):
        assert route_mode(4) == (RouteMode.BUS, False)

    def test_times(self):
        assert parse_gtfs_time('25:01:02') == 25 * 3600 + 62
        assert format_gtfs_time(25 * 3600 + 62) == '25:01:02'
        with pytest.raises(MalformedDocument):
            parse_gtfs_time('8:00')


class TestStopTimeChecks:
    """Per-trip stop time invariants"""

    def test_monotonic_trip(self):
        check_stop_times('t', np.array([1, 2, 5]), np.array([100.0, 200.0, 300.0]), np.array([100.0, 220.0, 300.0]))

    @pytest.mark.parametrize('sequence, arrival, departure, reason', [
        ([1, 1, 2], [100.0, 200.0, 300.0], [100.0, 200.0, 300.0], 'repeated'),
        ([1, 2, 3], [100.0, 250.0, 300.0], [100.0, 200.0, 300.0], 'before arriving'),
        ([1, 2, 3], [100.0, 200.0, 150.0], [100.0, 200.0, 150.0], 'previous stop'),
        ([1, 2, 3], [100.0, np.nan, 300.0], [100.0, np.nan, 300.0], 'missing'),
    ])
    def test_rejected(self, sequence, arrival, departure, reason):
        with pytest.raises(NonMonotonicStopTimes, match=reason):
            check_stop_times('t', np.array(sequence), np.array(arrival), np.array(departure))


class TestRailEntrances:
    """Rail entrance point files"""

    def test_three_rows(self):
        document = b"entrance_id,lat,lon\ne1,38.90,-77.03\ne2,38.91,-77.04\ne3,38.92,-77.05\n"
        entrances = parse_rail_entrances(document)
        assert [e.entrance_id for e in entrances] == ['e1', 'e2', 'e3']
        assert entrances[1].point == GeoPoint(38.91, -77.04)

    def test_duplicate_id_keeps_first(self, caplog):
        document = b"entrance_id,lat,lon\ne1,38.90,-77.03\ne1,38.95,-77.09\n"
        entrances = parse_rail_entrances(document)
        assert len(entrances) == 1
        assert entrances[0].point == GeoPoint(38.90, -77.03)
        assert 'duplicate' in caplog.text

    @pytest.mark.parametrize('document', [b'', b'   \n', b'entrance_id,lat,lon\n'])
    def test_empty_is_valid(self, document):
        assert parse_rail_entrances(document) == []

    def test_missing_columns(self):
        with pytest.raises(MissingField):
            parse_rail_entrances(b"id,lat,lon\ne1,38.9,-77.0\n")

    def test_bad_coordinates(self):
        with pytest.raises(MalformedDocument):
            parse_rail_entrances(b"entrance_id,lat,lon\ne1,95.0,-77.0\n")

    def test_from_network(self):
        network = parse_gtfs(gtfs_zip(MINI_TABLES))
        entrances = parse_rail_entrances(network)
        assert [(e.entrance_id, e.point) for e in entrances] == [
            (s.stop_id, s.point) for s in network.stops if s.location_type == LocationType.ENTRANCE]
