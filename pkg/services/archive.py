"""
Append-only snapshot archive

Layout: <root>/<kind>/<vendor>/<YYYY-MM-DD>.seg where kind is ``vehicles``
or ``stations``. Each segment is a run of length-prefixed binary records in
non-decreasing observed_at order. A poll that succeeded with no records is
kept as a cycle marker, so readers still see that cycle.
"""
import heapq
import json
import logging
import math
import os
import struct
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from services.errors import ArchiveWriteFailure, InvalidWindow, NoCoverage, UnknownVendor
from services.feeds import BikeStationStatus, VehicleSnapshot
from services.geo import GeoPoint

logger = logging.getLogger(__name__)

VEHICLES = 'vehicles'
STATIONS = 'stations'
KINDS = (VEHICLES, STATIONS)

# observed_at, lat, lon, flags, value; the record id follows as utf-8
_HEADER = struct.Struct('<qddBd')
_LENGTH = struct.Struct('<I')
_RESERVED = 0x01
_DISABLED = 0x02
_HAS_VALUE = 0x04
_MARKER = 0x08

DEFAULT_STALENESS_HORIZON = 600


def utc_day(timestamp):
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).date()


@dataclass(frozen=True)
class CycleMarker:
    """A poll cycle that returned no records"""
    vendor_id: str
    observed_at: int


def encode_record(record):
    """VehicleSnapshot or BikeStationStatus -> length-prefixed bytes"""
    if isinstance(record, VehicleSnapshot):
        flags = (_RESERVED if record.is_reserved else 0) | (_DISABLED if record.is_disabled else 0)
        value = record.battery_pct
        record_id = record.vehicle_id
    else:
        flags = 0
        value = float(record.bikes_available)
        record_id = record.station_id
    if value is not None:
        flags |= _HAS_VALUE
    body = _HEADER.pack(record.observed_at, record.point.lat, record.point.lon, flags,
                        value if value is not None else math.nan) + record_id.encode('utf-8')
    return _LENGTH.pack(len(body)) + body


def encode_marker(observed_at):
    body = _HEADER.pack(observed_at, 0.0, 0.0, _MARKER, math.nan)
    return _LENGTH.pack(len(body)) + body


def decode_record(kind, vendor_id, body):
    observed_at, lat, lon, flags, value = _HEADER.unpack_from(body)
    if flags & _MARKER:
        return CycleMarker(vendor_id=vendor_id, observed_at=observed_at)
    record_id = body[_HEADER.size:].decode('utf-8')
    point = GeoPoint(lat, lon)
    if kind == STATIONS:
        return BikeStationStatus(station_id=record_id, point=point, bikes_available=int(value),
                                 observed_at=observed_at, vendor_id=vendor_id)
    return VehicleSnapshot(
        vendor_id=vendor_id,
        vehicle_id=record_id,
        point=point,
        observed_at=observed_at,
        is_reserved=bool(flags & _RESERVED),
        is_disabled=bool(flags & _DISABLED),
        battery_pct=value if flags & _HAS_VALUE else None
    )


def record_id(record):
    return record.vehicle_id if isinstance(record, VehicleSnapshot) else record.station_id


@dataclass
class SegmentInfo:
    kind: str
    vendor_id: str
    day: object
    path: Path
    size_bytes: int = 0
    record_count: int = 0
    first_observed_at: int | None = None
    last_observed_at: int | None = None

    def to_dict(self):
        return {
            'kind': self.kind,
            'vendor_id': self.vendor_id,
            'day': self.day.isoformat(),
            'path': str(self.path),
            'size_bytes': self.size_bytes,
            'record_count': self.record_count,
            'first_observed_at': self.first_observed_at,
            'last_observed_at': self.last_observed_at
        }


@dataclass
class AppendResult:
    appended: int = 0
    duplicates: int = 0
    markers: int = 0


class _SegmentState:
    """Tail state and running totals of one segment"""

    def __init__(self):
        self.lock = threading.Lock()
        self.last_observed_at = None
        self.ids_at_last = set()
        self.first_observed_at = None
        self.record_count = 0
        self.size_bytes = 0

    def track(self, entry):
        if self.first_observed_at is None:
            self.first_observed_at = entry.observed_at
        if entry.observed_at != self.last_observed_at:
            self.last_observed_at = entry.observed_at
            self.ids_at_last = set()
        if not isinstance(entry, CycleMarker):
            self.record_count += 1
            self.ids_at_last.add(record_id(entry))


class SnapshotArchive:
    def __init__(self, root):
        self.root = Path(root)
        self._states = {}
        self._states_lock = threading.Lock()

    # === WRITE SIDE ===

    def segment_path(self, kind, vendor_id, day):
        return self.root / kind / vendor_id / f"{day.isoformat()}.seg"

    def _load_state(self, kind, vendor_id, day, repair=True):
        state = _SegmentState()
        path = self.segment_path(kind, vendor_id, day)
        if path.exists():
            entries, valid_end = self._scan(kind, vendor_id, path)
            for entry in entries:
                state.track(entry)
            state.size_bytes = valid_end
            if repair and valid_end < path.stat().st_size:
                # Partial tail from an interrupted writer; appends must start on a record boundary
                logger.warning("%s: dropping %d bytes of partial tail", path, path.stat().st_size - valid_end)
                os.truncate(path, valid_end)
        return state

    def _state(self, kind, vendor_id, day):
        key = (kind, vendor_id, day)
        with self._states_lock:
            state = self._states.get(key)
            if state is None:
                state = self._load_state(kind, vendor_id, day)
                self._states[key] = state
            return state

    def append(self, kind, vendor_id, records, observed_at=None):
        """
        Append records for one vendor; duplicates of (vehicle, observed_at) are skipped

        With observed_at set and no records, a cycle marker is written instead
        so the empty poll survives replay. Writes to one (vendor, day) segment
        are serialized by a per-segment lock; the tail state only moves once
        the bytes are on disk.
        """
        result = AppendResult()
        by_day = {}
        for record in records:
            by_day.setdefault(utc_day(record.observed_at), []).append(record)
        if not by_day and observed_at is not None:
            by_day[utc_day(observed_at)] = []

        for day in sorted(by_day):
            state = self._state(kind, vendor_id, day)
            path = self.segment_path(kind, vendor_id, day)
            with state.lock:
                last, ids = state.last_observed_at, set(state.ids_at_last)
                written = []
                chunks = []
                for record in sorted(by_day[day], key=lambda r: r.observed_at):
                    if last is not None and record.observed_at < last:
                        raise ArchiveWriteFailure(
                            f"{kind}/{vendor_id}: record at {record.observed_at} older than segment tail {last}")
                    if record.observed_at != last:
                        last, ids = record.observed_at, set()
                    rid = record_id(record)
                    if rid in ids:
                        result.duplicates += 1
                        continue
                    ids.add(rid)
                    written.append(record)
                    chunks.append(encode_record(record))
                if not by_day[day]:
                    if last is not None and observed_at < last:
                        raise ArchiveWriteFailure(
                            f"{kind}/{vendor_id}: cycle at {observed_at} older than segment tail {last}")
                    if observed_at != last:
                        written.append(CycleMarker(vendor_id, int(observed_at)))
                        chunks.append(encode_marker(int(observed_at)))
                if not chunks:
                    continue
                data = b''.join(chunks)
                try:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    with open(path, 'ab') as handle:
                        handle.write(data)
                except OSError as e:
                    raise ArchiveWriteFailure(f"cannot append to {path}: {e}") from e
                for entry in written:
                    state.track(entry)
                state.size_bytes += len(data)
                markers = sum(isinstance(e, CycleMarker) for e in written)
                result.markers += markers
                result.appended += len(written) - markers
        return result

    def segment_info(self, kind, vendor_id, day):
        """Counts and time bounds from the running totals, without rereading the segment"""
        path = self.segment_path(kind, vendor_id, day)
        with self._states_lock:
            state = self._states.get((kind, vendor_id, day))
        size = path.stat().st_size if path.exists() else 0
        if state is None or state.size_bytes != size:
            # Not written through this archive, or written by another process since
            state = self._load_state(kind, vendor_id, day, repair=False)
        return SegmentInfo(kind=kind, vendor_id=vendor_id, day=day, path=path, size_bytes=state.size_bytes,
                           record_count=state.record_count, first_observed_at=state.first_observed_at,
                           last_observed_at=state.last_observed_at)

    # === READ SIDE ===

    def segments(self, kind=VEHICLES, vendor_id=None):
        """Segments on disk, sorted by (vendor, day)"""
        base = self.root / kind
        if not base.exists():
            return []
        found = []
        for vendor_dir in sorted(p for p in base.iterdir() if p.is_dir()):
            if vendor_id is not None and vendor_dir.name != vendor_id:
                continue
            for path in sorted(vendor_dir.glob('*.seg')):
                day = datetime.strptime(path.stem, '%Y-%m-%d').date()
                found.append(SegmentInfo(kind=kind, vendor_id=vendor_dir.name, day=day, path=path,
                                         size_bytes=path.stat().st_size))
        return found

    def vendors(self, kind=VEHICLES):
        return sorted({seg.vendor_id for seg in self.segments(kind)})

    def _scan(self, kind, vendor_id, path):
        """All complete entries of a segment and the offset where they end"""
        data = path.read_bytes()
        entries = []
        offset = 0
        while offset + _LENGTH.size <= len(data):
            (length,) = _LENGTH.unpack_from(data, offset)
            end = offset + _LENGTH.size + length
            if end > len(data):
                # Partial tail from a writer mid-append
                break
            entries.append(decode_record(kind, vendor_id, data[offset + _LENGTH.size:end]))
            offset = end
        return entries, offset

    def _read_segment(self, kind, vendor_id, path, markers=False):
        entries, _ = self._scan(kind, vendor_id, path)
        for entry in entries:
            if markers or not isinstance(entry, CycleMarker):
                yield entry

    def read(self, segment, markers=False):
        return self._read_segment(segment.kind, segment.vendor_id, segment.path, markers=markers)

    def first_observed_at(self, kind=VEHICLES):
        """Earliest observed cycle over all segments of a kind, from the first record header of each"""
        firsts = []
        for segment in self.segments(kind):
            with open(segment.path, 'rb') as handle:
                head = handle.read(_LENGTH.size + _HEADER.size)
            if len(head) == _LENGTH.size + _HEADER.size:
                (observed_at,) = struct.unpack_from('<q', head, _LENGTH.size)
                firsts.append(observed_at)
        return min(firsts) if firsts else None

    def export_jsonl(self, kind, vendor_id, day, out):
        """Write one segment as JSON lines; returns the record count"""
        path = self.segment_path(kind, vendor_id, day)
        if not path.exists():
            raise UnknownVendor(f"no {kind} segment for {vendor_id} on {day}")
        count = 0
        with open(out, 'w', encoding='utf-8') as handle:
            for record in self._read_segment(kind, vendor_id, path):
                handle.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')
                count += 1
        return count


def replay(archive, vendors=None, start=None, end=None, kind=VEHICLES, markers=False):
    """
    Stream archived records with start <= observed_at < end in time order

    Ties across vendors are broken by vendor id, so the order is deterministic.
    With markers=True the stream also carries a CycleMarker for every poll
    that returned no records.
    """
    if start is not None and end is not None and start > end:
        raise InvalidWindow(f"window start {start} is after end {end}")
    known = archive.vendors(kind)
    if vendors is not None:
        unknown = sorted(set(vendors) - set(known))
        if unknown:
            raise UnknownVendor(f"no archived {kind} for vendors {unknown}")
        selected = sorted(vendors)
    else:
        selected = known
    if start is not None and end is not None and start == end:
        return iter(())

    first_day = utc_day(start) if start is not None else None
    last_day = utc_day(end) if end is not None else None

    def vendor_stream(vendor_id):
        for segment in archive.segments(kind, vendor_id):
            if first_day is not None and segment.day < first_day:
                continue
            if last_day is not None and segment.day > last_day:
                continue
            for record in archive.read(segment, markers=markers):
                if start is not None and record.observed_at < start:
                    continue
                if end is not None and record.observed_at >= end:
                    return
                yield record

    streams = [vendor_stream(v) for v in selected]
    return heapq.merge(*streams, key=lambda r: (r.observed_at, r.vendor_id))


def _latest_cycles(archive, instant, staleness_horizon, kind, vendors=None):
    """Records of each vendor's most recent cycle within the horizon; an empty poll gives an empty cycle"""
    first = archive.first_observed_at(kind)
    if first is None or instant < first:
        raise NoCoverage(f"instant {instant} precedes the first archived {kind} record")

    latest = {}
    for entry in replay(archive, vendors=vendors, start=instant - staleness_horizon, end=instant + 1, kind=kind,
                        markers=True):
        cycle = latest.get(entry.vendor_id)
        if cycle is None or entry.observed_at > cycle[0]:
            cycle = latest[entry.vendor_id] = (entry.observed_at, [])
        if not isinstance(entry, CycleMarker):
            cycle[1].append(entry)
    return latest


def availability_at(archive, instant, staleness_horizon=DEFAULT_STALENESS_HORIZON, vendors=None):
    """
    Vehicles available at an instant

    A vehicle counts when it appears in its vendor's latest cycle at or before
    the instant, that cycle is no older than the staleness horizon, and it is
    neither reserved nor disabled. Vehicles absent from that cycle are in use.
    """
    available = []
    latest = _latest_cycles(archive, instant, staleness_horizon, VEHICLES, vendors)
    for vendor_id in sorted(latest):
        _, records = latest[vendor_id]
        seen = set()
        for record in records:
            if record.vehicle_id in seen or not record.is_available:
                continue
            seen.add(record.vehicle_id)
            available.append(record)
    return available


def station_status_at(archive, instant, staleness_horizon=DEFAULT_STALENESS_HORIZON, vendors=None):
    """Latest station cycle per bikeshare vendor within the horizon"""
    statuses = []
    latest = _latest_cycles(archive, instant, staleness_horizon, STATIONS, vendors)
    for vendor_id in sorted(latest):
        statuses.extend(latest[vendor_id][1])
    return statuses
