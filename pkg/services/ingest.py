"""
GBFS poller: samples every endpoint on its own interval and appends to the archive

The clock and the fetcher are injectable so runs against local fixtures are
deterministic.
"""
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests
import yaml

from services.archive import STATIONS, VEHICLES, utc_day
from services.errors import ConfigError, ConfigParseError, MalformedDocument
from services.feeds import BatteryScale, IdMode, VendorProfile, parse_gbfs_status, parse_station_status

logger = logging.getLogger(__name__)

FREE_BIKE_STATUS = 'free_bike_status'
STATION_STATUS = 'station_status'


@dataclass(frozen=True)
class Endpoint:
    vendor: VendorProfile
    locator: str
    kind: str = FREE_BIKE_STATUS
    info_locator: str | None = None

    @property
    def archive_kind(self):
        return STATIONS if self.kind == STATION_STATUS else VEHICLES


@dataclass(frozen=True)
class PollPlan:
    endpoints: tuple
    jitter: float = 0.0

    def __post_init__(self):
        ids = [e.vendor.vendor_id for e in self.endpoints]
        if len(ids) != len(set(ids)):
            raise ConfigError(f"poll plan has duplicate vendor ids: {sorted(ids)}")
        if self.jitter < 0:
            raise ConfigError('poll plan jitter must be >= 0')


@dataclass
class VendorPollStats:
    fetches: int = 0
    fetch_failures: int = 0
    parse_failures: int = 0
    appended_cycles: int = 0
    records_appended: int = 0
    records_dropped: int = 0
    duplicates_skipped: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class PollStats:
    per_vendor: dict = field(default_factory=dict)

    def _total(self, name):
        return sum(getattr(v, name) for v in self.per_vendor.values())

    @property
    def fetches(self):
        return self._total('fetches')

    @property
    def fetch_failures(self):
        return self._total('fetch_failures')

    @property
    def parse_failures(self):
        return self._total('parse_failures')

    @property
    def appended_cycles(self):
        return self._total('appended_cycles')

    @property
    def records_appended(self):
        return self._total('records_appended')

    @property
    def duplicates_skipped(self):
        return self._total('duplicates_skipped')

    def to_dict(self):
        return {vendor: stats.to_dict() for vendor, stats in self.per_vendor.items()}


class SystemClock:
    def now(self):
        return time.time()

    def sleep(self, seconds, stop_signal):
        stop_signal.wait(seconds)


class SimulatedClock:
    """Clock that advances only when slept on"""

    def __init__(self, start):
        self.current = float(start)

    def now(self):
        return self.current

    def sleep(self, seconds, stop_signal):
        self.current += max(seconds, 0.0)


class FetchError(Exception):
    pass


class Fetcher:
    """Reads http(s) locators with requests and anything else from disk"""

    def __init__(self, timeout=20):
        self.timeout = timeout

    def fetch(self, locator):
        if locator.startswith(('http://', 'https://')):
            try:
                response = requests.get(locator, timeout=self.timeout)
                response.raise_for_status()
            except requests.RequestException as e:
                raise FetchError(str(e)) from e
            return response.content
        try:
            return Path(locator).read_bytes()
        except OSError as e:
            raise FetchError(str(e)) from e


def load_plan(path):
    """Read a poll plan YAML file; relative locators resolve against its folder"""
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigParseError(f"cannot read poll plan {path}: {e}") from e

    def resolve(locator):
        if locator is None or locator.startswith(('http://', 'https://')):
            return locator
        candidate = Path(locator)
        return str(candidate if candidate.is_absolute() else path.parent / candidate)

    endpoints = []
    for i, entry in enumerate(document.get('endpoints', [])):
        try:
            vendor = VendorProfile(
                vendor_id=entry['vendor_id'],
                id_mode=IdMode(entry.get('id_mode', 'consistent')),
                poll_interval=int(entry.get('poll_interval', 60)),
                battery_scale=BatteryScale(entry.get('battery_scale', 'auto'))
            )
            kind = entry.get('kind', FREE_BIKE_STATUS)
            if kind not in (FREE_BIKE_STATUS, STATION_STATUS):
                raise ValueError(f"unknown kind {kind!r}")
            if kind == STATION_STATUS and not entry.get('info_url'):
                raise ValueError('station_status endpoints need info_url')
            endpoints.append(Endpoint(vendor=vendor, locator=resolve(entry['url']), kind=kind,
                                      info_locator=resolve(entry.get('info_url'))))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"endpoints[{i}]: {e}") from e
    if not endpoints:
        raise ConfigError('endpoints: must be nonempty')
    return PollPlan(endpoints=tuple(endpoints), jitter=float(document.get('jitter', 0.0)))


@dataclass
class _CycleOutcome:
    endpoint: Endpoint
    records: list = field(default_factory=list)
    dropped: int = 0
    fetch_error: str | None = None
    parse_error: str | None = None


def _fetch_and_parse(endpoint, fetcher, observed_at, info_cache):
    outcome = _CycleOutcome(endpoint=endpoint)
    try:
        document = fetcher.fetch(endpoint.locator)
        info = None
        if endpoint.kind == STATION_STATUS:
            info = info_cache.get(endpoint.vendor.vendor_id)
            if info is None:
                info = fetcher.fetch(endpoint.info_locator)
    except FetchError as e:
        outcome.fetch_error = str(e)
        return outcome

    try:
        if endpoint.kind == STATION_STATUS:
            parsed = parse_station_status(document, info, observed_at, vendor_id=endpoint.vendor.vendor_id)
            info_cache[endpoint.vendor.vendor_id] = info
            outcome.records = parsed.statuses
            outcome.dropped = parsed.missing_information + parsed.out_of_range
        else:
            parsed = parse_gbfs_status(document, endpoint.vendor, observed_at)
            outcome.records = parsed.snapshots
            outcome.dropped = parsed.dropped
    except MalformedDocument as e:
        outcome.parse_error = str(e)
    return outcome


def run_poller(plan, archive, stop_signal=None, clock=None, fetcher=None, duration=None,
               max_backoff=600, on_append=None, seed=0):
    """
    Poll every endpoint until stop_signal is set or duration elapses

    Fetch and parse failures are counted per vendor and never abort the run;
    archive write failures do. ``on_append(kind, vendor_id, day)`` is called
    after each successful append.
    """
    clock = clock or SystemClock()
    stop_signal = stop_signal or threading.Event()
    fetcher = fetcher or Fetcher()
    rng = random.Random(seed)

    stats = PollStats(per_vendor={e.vendor.vendor_id: VendorPollStats() for e in plan.endpoints})
    started = clock.now()
    deadline = started + duration if duration is not None else None
    base_due = {e.vendor.vendor_id: started for e in plan.endpoints}
    fire_at = dict(base_due)
    failures = {e.vendor.vendor_id: 0 for e in plan.endpoints}
    info_cache = {}

    logger.info("poller started: %d endpoints", len(plan.endpoints))
    with ThreadPoolExecutor(max_workers=max(len(plan.endpoints), 1)) as pool:
        while not stop_signal.is_set():
            now = clock.now()
            if deadline is not None and now >= deadline:
                break

            due = [e for e in plan.endpoints if fire_at[e.vendor.vendor_id] <= now]
            observed_at = int(now)
            futures = [pool.submit(_fetch_and_parse, e, fetcher, observed_at, info_cache) for e in due]

            # Appends happen here, in plan order, so the archive bytes are reproducible
            for future in futures:
                outcome = future.result()
                vendor = outcome.endpoint.vendor
                vstats = stats.per_vendor[vendor.vendor_id]
                vstats.fetches += 1
                if outcome.fetch_error is not None:
                    vstats.fetch_failures += 1
                    failures[vendor.vendor_id] += 1
                    delay = min(vendor.poll_interval * 2 ** (failures[vendor.vendor_id] - 1), max_backoff)
                    logger.warning("%s: fetch failed (%s), retrying in %.0f s",
                                   vendor.vendor_id, outcome.fetch_error, delay)
                    base_due[vendor.vendor_id] = now + delay
                else:
                    failures[vendor.vendor_id] = 0
                    if outcome.parse_error is not None:
                        vstats.parse_failures += 1
                        logger.warning("%s: unparseable payload: %s", vendor.vendor_id, outcome.parse_error)
                    else:
                        kind = outcome.endpoint.archive_kind
                        appended = archive.append(kind, vendor.vendor_id, outcome.records, observed_at=observed_at)
                        vstats.appended_cycles += 1
                        vstats.records_appended += appended.appended
                        vstats.duplicates_skipped += appended.duplicates
                        vstats.records_dropped += outcome.dropped
                        if on_append is not None:
                            on_append(kind, vendor.vendor_id, utc_day(observed_at))
                    nxt = base_due[vendor.vendor_id] + vendor.poll_interval
                    while nxt <= now:
                        nxt += vendor.poll_interval
                    base_due[vendor.vendor_id] = nxt
                offset = rng.uniform(-plan.jitter, plan.jitter) if plan.jitter else 0.0
                fire_at[vendor.vendor_id] = max(base_due[vendor.vendor_id] + offset, now + 1e-6)

            wake = min(fire_at.values())
            if deadline is not None:
                wake = min(wake, deadline)
            clock.sleep(max(wake - clock.now(), 0.0), stop_signal)

    logger.info("poller stopped: %d fetches, %d fetch failures, %d parse failures",
                stats.fetches, stats.fetch_failures, stats.parse_failures)
    return stats
