"""
Tests for trip inference, plausibility filters and leisure exclusion.

The recovery tests replay the synthetic mini-city, whose generator records
every trip it plants.
"""
import pytest
from shapely.geometry import box

from services.archive import SnapshotArchive, replay
from services.errors import ConfigError, MalformedDocument, MixedVendors, UnsortedStream
from services.feeds import IdMode, VehicleSnapshot, VendorProfile
from services.geo import GeoPoint, offset_point
from services.tripinfer import (EventKind, FilterPolicy, InferredTrip, LeisurePolicy, RelocationPolicy,
                                UnlinkedEvent, apply_filters, exclude_leisure, infer_trips, read_trips_csv,
                                write_events_csv, write_trips_csv)
from utils.minicity import DYNAMIC_VENDOR, SCOOTER_VENDOR

T0 = 1563364800
ORIGIN = GeoPoint(38.9, -77.03)
SCOOT = VendorProfile(SCOOTER_VENDOR)
DYN = VendorProfile(DYNAMIC_VENDOR, id_mode=IdMode.DYNAMIC)
EPS = 1e-6


def snap(vehicle_id, cycle, point=ORIGIN, vendor='scoot', battery=None, **flags):
    return VehicleSnapshot(vendor, vehicle_id, point, T0 + 60 * cycle, battery_pct=battery, **flags)


def trip(distance_mi, duration_min, origin=ORIGIN):
    return InferredTrip('scoot', 'x', origin, offset_point(origin, 0.0, distance_mi),
                        T0, T0 + round(duration_min * 60))


class TestInferredTrip:
    """Derived quantities"""

    def test_properties(self):
        t = trip(1.0, 6)
        assert t.distance_mi == pytest.approx(1.0, rel=1e-9)
        assert t.duration_min == 6.0
        assert t.speed_mph == pytest.approx(10.0, rel=1e-9)

    def test_end_after_start(self):
        with pytest.raises(ValueError):
            InferredTrip('scoot', 'x', ORIGIN, ORIGIN, T0, T0)


class TestConsistentIds:
    """Linking disappearances to reappearances"""

    def test_single_trip(self):
        far = offset_point(ORIGIN, 0.8, 0.0)
        stream = [snap('x', c) for c in (1, 2, 3)] + [snap('x', 14, far)]
        # other vehicles keep the cycles ticking while x is away
        stream = sorted(stream + [snap('y', c) for c in range(1, 15)], key=lambda s: (s.observed_at, s.vehicle_id))
        result = infer_trips(stream, SCOOT)
        [t] = result.trips
        assert t.duration_min == 10.0
        assert t.distance_mi == pytest.approx(0.8, rel=1e-6)
        assert (t.origin, t.destination) == (ORIGIN, far)
        assert t.linked and t.vehicle_id == 'x'

    def test_static_vehicle(self):
        result = infer_trips([snap('x', c) for c in range(30)], SCOOT)
        assert result.trips == [] and result.suppressed == []

    def test_never_returns(self):
        stream = [snap('x', 0), snap('y', 0), snap('y', 1), snap('y', 2)]
        assert infer_trips(stream, SCOOT).trips == []

    def test_reserved_counts_as_away(self):
        far = offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('x', 0), snap('x', 1, is_reserved=True), snap('x', 2, is_disabled=True), snap('x', 3, far)]
        [t] = infer_trips(stream, SCOOT).trips
        assert (t.start_time, t.end_time) == (T0 + 60, T0 + 180)

    def test_battery_jump_suppressed(self):
        far = offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('x', 0, battery=0.3), snap('y', 1), snap('x', 20, far, battery=0.7)]
        result = infer_trips(stream, SCOOT)
        assert result.trips == []
        [move] = result.suppressed
        assert move.reason == 'battery_jump'
        assert move.battery_gain == pytest.approx(0.4)

    def test_small_battery_gain_is_a_trip(self):
        far = offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('x', 0, battery=0.3), snap('y', 1), snap('x', 20, far, battery=0.4)]
        assert len(infer_trips(stream, SCOOT).trips) == 1

    def test_long_gap_suppressed(self):
        far = offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('x', 0), snap('y', 1), snap('x', 1 + 6 * 60 + 1, far)]
        [move] = infer_trips(stream, SCOOT).suppressed
        assert move.reason == 'long_gap'

    def test_suppression_disabled(self):
        far = offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('x', 0, battery=0.3), snap('y', 1), snap('x', 1 + 7 * 60, far, battery=0.9)]
        result = infer_trips(stream, SCOOT, RelocationPolicy(enabled=False))
        assert len(result.trips) == 1 and result.suppressed == []

    def test_invalid_policy(self):
        with pytest.raises(ConfigError):
            RelocationPolicy(max_gap_hours=0)

    def test_unsorted_stream(self):
        with pytest.raises(UnsortedStream):
            infer_trips([snap('x', 2), snap('x', 1)], SCOOT)

    def test_mixed_vendors(self):
        with pytest.raises(MixedVendors):
            infer_trips([snap('x', 0), snap('y', 1, vendor='lime')], SCOOT)


class TestDynamicIds:
    """Unlinked appearance and disappearance events"""

    def test_events(self):
        here, there = ORIGIN, offset_point(ORIGIN, 1.0, 0.0)
        stream = [snap('g0', 0, here, vendor='dyn'), snap('g0', 1, here, vendor='dyn'),
                  snap('z', 2, vendor='dyn'), snap('g1', 3, there, vendor='dyn')]
        result = infer_trips(stream, DYN)
        assert result.trips == []
        assert [(e.kind, e.point, e.time) for e in result.events] == [
            (EventKind.DISAPPEARANCE, here, T0 + 120),
            (EventKind.APPEARANCE, ORIGIN, T0 + 120),
            (EventKind.DISAPPEARANCE, ORIGIN, T0 + 180),
            (EventKind.APPEARANCE, there, T0 + 180),
        ]

    def test_no_events_for_first_cycle(self):
        result = infer_trips([snap('a', 0, vendor='dyn'), snap('b', 0, vendor='dyn')], DYN)
        assert result.events == []


class TestPlantedRecovery:
    """Inference on the mini-city archive against the generator's ground truth"""

    @pytest.fixture(scope='class')
    def inferred(self, minicity):
        archive = SnapshotArchive(minicity.root / 'archive')
        return infer_trips(replay(archive, vendors=[SCOOTER_VENDOR]), SCOOT)

    def test_precision_and_recall(self, minicity, inferred):
        planted = set(minicity.planted['pre'])
        found = set(inferred.trips)
        assert len(planted) == 40
        assert found == planted

    def test_relocations_suppressed(self, minicity, inferred):
        suppressed = {(m.vehicle_id, m.start_time, m.end_time) for m in inferred.suppressed}
        assert suppressed == set(minicity.relocations['pre'])
        assert all(m.reason == 'battery_jump' for m in inferred.suppressed)

    def test_no_trip_gains_battery(self, minicity):
        archive = SnapshotArchive(minicity.root / 'archive')
        policy = RelocationPolicy()
        batteries = {}
        for s in replay(archive, vendors=[SCOOTER_VENDOR]):
            batteries[(s.vehicle_id, s.observed_at)] = s.battery_pct
        for t in infer_trips(replay(archive, vendors=[SCOOTER_VENDOR]), SCOOT, policy).trips:
            before = batteries[(t.vehicle_id, t.start_time - 60)]
            after = batteries[(t.vehicle_id, t.end_time)]
            assert after - before <= policy.max_battery_gain

    def test_all_planted_pass_filters(self, inferred):
        kept, rejected = apply_filters(inferred.trips)
        assert rejected == [] and len(kept) == 40

    def test_dynamic_vendor_events(self, minicity):
        archive = SnapshotArchive(minicity.root / 'archive')
        result = infer_trips(replay(archive, vendors=[DYNAMIC_VENDOR]), DYN)
        assert len(result.events) == minicity.dynamic_events['pre'] == 12
        kinds = [e.kind for e in result.events]
        assert kinds.count(EventKind.APPEARANCE) == kinds.count(EventKind.DISAPPEARANCE) == 6


class TestFilterBoundaries:
    """Each plausibility threshold just inside and just outside"""

    @pytest.mark.parametrize('distance, duration, expected', [
        (0.02 - EPS, 10.0, 'below_min_distance'),
        (0.02, 10.0, None),
        (10.0 + EPS, 60.0, 'above_max_distance'),
        (10.0, 60.0, None),
        (1.0, 5.0 - EPS, 'below_min_duration'),
        (1.0, 5.0, None),
        (5.0, 90.0 + EPS, 'above_max_duration'),
        (5.0, 90.0, None),
        (2.0 + EPS, 6.0, 'above_max_speed'),
        (2.0 - EPS, 6.0, None),
        (4.0, 12.0 - EPS * 10, 'above_max_speed'),
        (4.0, 12.0 + EPS * 10, None),
    ])
    def test_boundary(self, distance, duration, expected):
        assert FilterPolicy().check(distance, duration) == expected

    def test_first_rule_wins(self):
        assert FilterPolicy().check(0.01, 1.0) == 'below_min_distance'

    @pytest.mark.parametrize('kwargs', [
        {'min_distance_mi': 10, 'max_distance_mi': 1},
        {'min_duration_min': 90, 'max_duration_min': 90},
        {'max_speed_mph': 0},
    ])
    def test_invalid_policy(self, kwargs):
        with pytest.raises(ConfigError):
            FilterPolicy(**kwargs)


class TestApplyFilters:
    """Splitting trips into kept and rejected"""

    def test_examples(self):
        short, median, fast = trip(0.01, 10), trip(0.74, 10), trip(5.0, 10)
        kept, rejected = apply_filters([short, median, fast])
        assert kept == [median]
        assert [(r.trip, r.reason) for r in rejected] == [(short, 'below_min_distance'), (fast, 'above_max_speed')]

    def test_partition(self):
        trips = [trip(d, m) for d in (0.01, 0.5, 3.0, 12.0) for m in (2, 10, 45, 120)]
        kept, rejected = apply_filters(trips)
        assert len(kept) + len(rejected) == len(trips)
        assert set(kept).isdisjoint(r.trip for r in rejected)

    def test_loosening_never_shrinks(self):
        trips = [trip(d, m) for d in (0.01, 0.03, 0.5, 3.0, 9.0, 12.0) for m in (2, 6, 10, 45, 89, 120)]
        tight = FilterPolicy()
        loose = FilterPolicy(min_distance_mi=0.01, max_distance_mi=15, min_duration_min=1,
                             max_duration_min=150, max_speed_mph=40)
        kept_tight, _ = apply_filters(trips, tight)
        kept_loose, _ = apply_filters(trips, loose)
        assert set(kept_tight) <= set(kept_loose)


class TestLeisure:
    """Leisure-trip exclusion"""

    MALL = box(ORIGIN.lon - 0.001, ORIGIN.lat - 0.001, ORIGIN.lon + 0.001, ORIGIN.lat + 0.001)

    def test_short_trip(self):
        assert LeisurePolicy().reason(trip(0.2, 1.2)) == 'short_distance'

    def test_slow_trip(self):
        assert LeisurePolicy().reason(trip(1.0, 10)) == 'low_speed'

    def test_utilitarian(self):
        away = trip(1.0, 5, origin=offset_point(ORIGIN, 2.0, 0.0))
        utilitarian, leisure = exclude_leisure([away], LeisurePolicy(exclusion_zones=(self.MALL,)))
        assert len(utilitarian) == 1 and leisure == []

    def test_exclusion_zone(self):
        t = trip(1.0, 5)
        policy = LeisurePolicy(exclusion_zones=(self.MALL,))
        assert policy.reason(t) == 'exclusion_zone'

    def test_destination_in_zone(self):
        start = offset_point(ORIGIN, 0.0, -1.0)
        t = InferredTrip('scoot', 'x', start, ORIGIN, T0, T0 + 300)
        assert LeisurePolicy(exclusion_zones=(self.MALL,)).reason(t) == 'exclusion_zone'

    def test_partition(self):
        trips = [trip(0.2, 1.2), trip(1.0, 10), trip(1.0, 5), trip(2.0, 8)]
        utilitarian, leisure = exclude_leisure(trips)
        assert sorted(utilitarian + leisure, key=trips.index) == trips
        assert len(utilitarian) == 2


class TestTripCsv:
    """Trip export files"""

    def test_write_and_read(self, tmp_path):
        trips = [trip(0.74, 10), InferredTrip('scoot', None, ORIGIN, offset_point(ORIGIN, 1, 1), T0, T0 + 600,
                                              linked=False)]
        path = tmp_path / 'trips.csv'
        write_trips_csv(trips, path, metadata={'period': 'pre'})
        header = path.read_text().splitlines()[1]
        assert header == 'vendor,vehicle,olat,olon,dlat,dlon,start_utc,end_utc,dist_mi,dur_min,linked'
        back = read_trips_csv(path)
        assert [(t.vehicle_id, t.start_time, t.end_time, t.linked) for t in back] == [
            ('x', T0, T0 + 600, True), (None, T0, T0 + 600, False)]
        assert back[0].destination.lat == pytest.approx(trips[0].destination.lat, abs=1e-12)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / 'trips.csv'
        path.write_text('vendor,vehicle\nscoot,x\n')
        with pytest.raises(MalformedDocument):
            read_trips_csv(path)

    def test_events(self, tmp_path):
        events = [UnlinkedEvent(EventKind.DISAPPEARANCE, ORIGIN, T0, 'dyn'),
                  UnlinkedEvent(EventKind.APPEARANCE, ORIGIN, T0 + 60, 'dyn')]
        path = tmp_path / 'events.csv'
        write_events_csv(events, path)
        lines = path.read_text().splitlines()
        assert lines[1] == 'vendor,kind,lat,lon,time_utc'
        assert [line.split(',')[1] for line in lines[2:]] == ['disappearance', 'appearance']
