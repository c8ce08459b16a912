"""
Analysis configuration: one YAML document describing the study, its periods
and every tunable used by the pipeline
"""
import copy
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import yaml

from services.classify import SCOPES, PricingScheme, normalize_thresholds
from services.errors import ConfigError, ConfigParseError
from services.feeds import BatteryScale, IdMode, VendorProfile
from services.geo import load_polygons
from services.router import RouterConfig
from services.supply import KERNELS, ModeRadii
from services.tripinfer import FilterPolicy, LeisurePolicy, RelocationPolicy

logger = logging.getLogger(__name__)

_TIME_OF_DAY = re.compile(r'^([01]\d|2[0-3]):[0-5]\d$')

DEFAULTS = {
    'study': {
        'name': 'study',
        'boundary': 'boundary.geojson',
        'timezone': 'America/New_York',
        'archive': 'archive',
        'entrances': None,
        'exclusion_zones': None,
        'street_nodes': None,
        'street_edges': None,
        'jobs': 1
    },
    'vendors': [],
    'bikeshare': {'vendors': None},
    'supply': {
        'instants': ['07:00', '12:00', '17:00', '20:00'],
        'cell_size_mi': 0.25,
        'subdivisions': 5,
        'kernel': 'quartic',
        'rail_weight': 5,
        'window_min': 60,
        'staleness_horizon_s': 600,
        'radii': {'transit': 0.25, 'bikeshare': 0.125, 'escooter': 0.0625}
    },
    'filter': {
        'min_distance_mi': 0.02,
        'max_distance_mi': 10.0,
        'min_duration_min': 5.0,
        'max_duration_min': 90.0,
        'max_speed_mph': 20.0
    },
    'leisure': {'min_speed_mph': 8.0, 'min_distance_mi': 0.25},
    'relocation': {'enabled': True, 'max_battery_gain': 0.15, 'max_gap_hours': 6.0},
    'router': {
        'walk_speed_mph': 3.0,
        'max_access_walk_mi': 0.5,
        'max_transfer_walk_mi': 0.25,
        'max_transfers': 3,
        'boarding_alighting_min': 0.5,
        'departure_window_min': 10,
        'window_step_min': 1
    },
    'classify': {
        'scope': 'utilitarian',
        'transit_radius_mi': 0.25,
        'bikeshare_radius_mi': 0.125,
        'bin_hours': 1
    },
    'connect': {'thresholds_ft': [30, 100]},
    'periods': []
}

PERIOD_DEFAULTS = {
    'label': None,
    'start_date': None,
    'end_date': None,
    'gtfs': None,
    'supply_dates': None,
    'pricing': {'unlock_usd': 1.0, 'per_min_usd': 0.15, 'bus_fare_usd': 2.0, 'rail_fare_usd': 2.25}
}


def defaults_yaml():
    """Every default as a YAML document, with one example vendor and period"""
    document = copy.deepcopy(DEFAULTS)
    document['vendors'] = [{'vendor_id': 'scooters', 'id_mode': 'consistent', 'poll_interval': 60,
                            'battery_scale': 'auto'}]
    period = copy.deepcopy(PERIOD_DEFAULTS)
    period.update({'label': 'pre', 'start_date': date(2019, 7, 17), 'end_date': date(2019, 7, 17),
                   'gtfs': 'gtfs.zip'})
    document['periods'] = [period]
    return yaml.safe_dump(document, sort_keys=False)


def _merged(defaults, given):
    """Recursive dict merge; lists and scalars in given replace defaults"""
    result = copy.deepcopy(defaults)
    for key, value in (given or {}).items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _merged(result[key], value)
        else:
            result[key] = value
    return result



def _check_sections(document, defaults, where, diagnostics):
    """Null sections take their defaults; sections that are not mappings are reported and defaulted"""
    for key, default in defaults.items():
        value = document.get(key)
        name = f"{where}{key}"
        if isinstance(default, dict):
            if value is None:
                document[key] = copy.deepcopy(default)
            elif not isinstance(value, dict):
                diagnostics.append(f"{name}: must be a mapping, got {value!r}")
                document[key] = copy.deepcopy(default)
            else:
                _check_sections(value, default, f"{name}.", diagnostics)
        elif isinstance(default, list) and not isinstance(value, list):
            if value is not None:
                diagnostics.append(f"{name}: must be a list, got {value!r}")
            document[key] = copy.deepcopy(default)

@dataclass(frozen=True)
class Period:
    label: str
    start_date: date
    end_date: date
    gtfs_path: Path
    pricing: PricingScheme
    supply_dates: tuple

    def to_dict(self):
        return {
            'label': self.label,
            'start_date': self.start_date.isoformat(),
            'end_date': self.end_date.isoformat(),
            'gtfs': self.gtfs_path.name,
            'supply_dates': [d.isoformat() for d in self.supply_dates],
            'pricing': self.pricing.to_dict()
        }


@dataclass(frozen=True)
class SupplySettings:
    instants: tuple
    cell_size_mi: float
    subdivisions: int
    kernel: str
    rail_weight: int
    window_min: int
    staleness_horizon_s: int
    radii: ModeRadii


@dataclass(frozen=True)
class ClassifySettings:
    scope: str
    transit_radius_mi: float
    bikeshare_radius_mi: float
    bin_hours: int


@dataclass
class AnalysisConfig:
    source: Path
    raw: dict
    name: str
    boundary_path: Path
    timezone: str
    archive_root: Path
    vendors: tuple
    bikeshare_vendors: tuple | None
    supply: SupplySettings
    filter: FilterPolicy
    leisure: LeisurePolicy
    relocation: RelocationPolicy
    router: RouterConfig
    classify: ClassifySettings
    connect_thresholds_ft: tuple
    periods: tuple
    jobs: int = 1
    entrances_path: Path | None = None
    exclusion_zones_path: Path | None = None
    street_nodes_path: Path | None = None
    street_edges_path: Path | None = None
    warnings: list = field(default_factory=list)

    @property
    def base_dir(self):
        return self.source.parent

    def to_dict(self):
        """The effective settings, as recorded in every output's metadata"""
        document = copy.deepcopy(self.raw)
        document['connect']['thresholds_ft'] = list(self.connect_thresholds_ft)
        return document


@dataclass
class ValidationReport:
    diagnostics: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: AnalysisConfig | None = None

    @property
    def ok(self):
        return not self.diagnostics


def _as_date(value, where, diagnostics):
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        diagnostics.append(f"{where}: expected a YYYY-MM-DD date, got {value!r}")
        return None


def _existing(base, value, where, diagnostics, required=True):
    if value in (None, ''):
        if required:
            diagnostics.append(f"{where}: must be set")
        return None
    path = Path(value)
    path = path if path.is_absolute() else base / path
    if not path.exists():
        diagnostics.append(f"{where}: file not found: {value}")
    return path


def _build(where, factory, diagnostics, **kwargs):
    try:
        return factory(**kwargs)
    except (ConfigError, ValueError, TypeError) as e:
        diagnostics.append(f"{where}: {e}")
        return None


def read_document(path):
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding='utf-8'))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigParseError(f"cannot parse {path}: {e}") from e
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigParseError(f"{path}: top level must be a mapping")
    return document


def validate_config(path):
    """Check every setting; diagnostics name the field and the violation"""
    path = Path(path)
    raw = _merged(DEFAULTS, read_document(path))
    base = path.parent
    report = ValidationReport()
    diag = report.diagnostics
    _check_sections(raw, DEFAULTS, '', diag)

    study = raw['study']
    boundary = _existing(base, study.get('boundary'), 'study.boundary', diag)
    archive = study.get('archive')
    archive_root = None
    if not archive:
        diag.append('study.archive: must be set')
    else:
        archive_root = Path(archive) if Path(archive).is_absolute() else base / archive
        if not archive_root.is_dir():
            diag.append(f"study.archive: directory not found: {archive}")
    entrances = _existing(base, study.get('entrances'), 'study.entrances', diag, required=False)
    zones_path = _existing(base, study.get('exclusion_zones'), 'study.exclusion_zones', diag, required=False)
    street_nodes = _existing(base, study.get('street_nodes'), 'study.street_nodes', diag, required=False)
    street_edges = _existing(base, study.get('street_edges'), 'study.street_edges', diag, required=False)
    if (street_nodes is None) != (street_edges is None):
        diag.append('study.street_nodes: street_nodes and street_edges must be given together')
    timezone = study.get('timezone')
    try:
        ZoneInfo(str(timezone))
    except (ZoneInfoNotFoundError, ValueError):
        diag.append(f"study.timezone: unknown timezone {timezone!r}")
    jobs = study.get('jobs', 1)
    if not isinstance(jobs, int) or jobs < 1:
        diag.append(f"study.jobs: must be a positive integer, got {jobs!r}")
        jobs = 1

    vendors = []
    if not raw['vendors']:
        diag.append('vendors: must be nonempty')
    for i, entry in enumerate(raw['vendors']):
        where = f"vendors[{i}]"
        if not isinstance(entry, dict) or 'vendor_id' not in entry:
            diag.append(f"{where}: vendor_id is required")
            continue
        try:
            vendors.append(VendorProfile(
                vendor_id=str(entry['vendor_id']),
                id_mode=IdMode(entry.get('id_mode', 'consistent')),
                poll_interval=int(entry.get('poll_interval', 60)),
                battery_scale=BatteryScale(entry.get('battery_scale', 'auto'))
            ))
        except (ValueError, TypeError) as e:
            diag.append(f"{where}: {e}")
    if len({v.vendor_id for v in vendors}) != len(vendors):
        diag.append('vendors: vendor ids must be distinct')

    bikeshare_vendors = raw['bikeshare'].get('vendors')
    if bikeshare_vendors is not None:
        bikeshare_vendors = tuple(str(v) for v in bikeshare_vendors)

    sup = raw['supply']
    instants = []
    for i, value in enumerate(sup.get('instants') or []):
        if not isinstance(value, str) or not _TIME_OF_DAY.match(value):
            diag.append(f"supply.instants[{i}]: expected a quoted 'HH:MM' time, got {value!r}")
        else:
            instants.append(value)
    if not sup.get('instants'):
        diag.append('supply.instants: must be nonempty')
    if sup.get('kernel') not in KERNELS:
        diag.append(f"supply.kernel: must be one of {list(KERNELS)}, got {sup.get('kernel')!r}")
    for key in ('cell_size_mi', 'window_min', 'staleness_horizon_s'):
        if not isinstance(sup.get(key), (int, float)) or sup[key] <= 0:
            diag.append(f"supply.{key}: must be positive, got {sup.get(key)!r}")
    for key in ('subdivisions', 'rail_weight'):
        if not isinstance(sup.get(key), int) or sup[key] < 1:
            diag.append(f"supply.{key}: must be a positive integer, got {sup.get(key)!r}")
    radii = _build('supply.radii', ModeRadii, diag, **sup['radii'])
    supply = None
    if radii is not None and not any(d.startswith('supply.') for d in diag):
        supply = SupplySettings(instants=tuple(instants), cell_size_mi=float(sup['cell_size_mi']),
                                subdivisions=sup['subdivisions'], kernel=sup['kernel'],
                                rail_weight=sup['rail_weight'], window_min=sup['window_min'],
                                staleness_horizon_s=sup['staleness_horizon_s'], radii=radii)

    filter_policy = _build('filter', FilterPolicy, diag, **raw['filter'])
    zones = ()
    if zones_path is not None and zones_path.exists():
        try:
            zones = tuple(load_polygons(zones_path))
        except ConfigError as e:
            diag.append(f"study.exclusion_zones: {e}")
    leisure = _build('leisure', LeisurePolicy, diag, exclusion_zones=zones, **raw['leisure'])
    relocation = _build('relocation', RelocationPolicy, diag, **raw['relocation'])
    router = _build('router', RouterConfig, diag, **raw['router'])

    cls = raw['classify']
    if cls.get('scope') not in SCOPES:
        diag.append(f"classify.scope: must be one of {list(SCOPES)}, got {cls.get('scope')!r}")
    for key in ('transit_radius_mi', 'bikeshare_radius_mi'):
        if not isinstance(cls.get(key), (int, float)) or cls[key] <= 0:
            diag.append(f"classify.{key}: must be positive, got {cls.get(key)!r}")
    if cls.get('bin_hours') not in (1, 2, 3, 4, 6, 8, 12, 24):
        diag.append(f"classify.bin_hours: must divide 24, got {cls.get('bin_hours')!r}")
    classify = ClassifySettings(scope=cls.get('scope'), transit_radius_mi=cls.get('transit_radius_mi'),
                                bikeshare_radius_mi=cls.get('bikeshare_radius_mi'), bin_hours=cls.get('bin_hours'))

    thresholds = raw['connect'].get('thresholds_ft') or []
    connect = None
    if len(thresholds) != 2 or not all(isinstance(t, (int, float)) and t > 0 for t in thresholds):
        diag.append(f"connect.thresholds_ft: expected two positive distances, got {thresholds!r}")
    else:
        connect = normalize_thresholds(thresholds)
        if list(connect) != list(thresholds):
            report.warnings.append(f"connect.thresholds_ft: normalized {thresholds} to {list(connect)}")

    periods = []
    if not raw['periods']:
        diag.append('periods: must be nonempty')
    for i, entry in enumerate(raw['periods']):
        where = f"periods[{i}]"
        if not isinstance(entry, dict):
            diag.append(f"{where}: must be a mapping, got {entry!r}")
            continue
        entry = raw['periods'][i] = _merged(PERIOD_DEFAULTS, entry)
        _check_sections(entry, PERIOD_DEFAULTS, f"{where}.", diag)
        if not entry.get('label'):
            diag.append(f"{where}.label: must be set")
        start = _as_date(entry.get('start_date'), f"{where}.start_date", diag)
        end = _as_date(entry.get('end_date'), f"{where}.end_date", diag)
        if start and end and end < start:
            diag.append(f"{where}.end_date: must not precede start_date")
        gtfs = _existing(base, entry.get('gtfs'), f"{where}.gtfs", diag)
        pricing = _build(f"{where}.pricing", PricingScheme, diag, **entry['pricing'])
        supply_dates = entry.get('supply_dates') or ([start] if start else [])
        supply_dates = tuple(d for d in (_as_date(v, f"{where}.supply_dates", diag) for v in supply_dates) if d)
        if start and end and any(not (start <= d <= end) for d in supply_dates):
            diag.append(f"{where}.supply_dates: must lie within the period")
        if all(v is not None for v in (start, end, gtfs, pricing)) and entry.get('label'):
            periods.append(Period(label=str(entry['label']), start_date=start, end_date=end, gtfs_path=gtfs,
                                  pricing=pricing, supply_dates=supply_dates))
    labels = [p.label for p in periods]
    if len(labels) != len(set(labels)):
        diag.append('periods: labels must be distinct')
    ordered = sorted(periods, key=lambda p: p.start_date)
    for earlier, later in zip(ordered, ordered[1:]):
        if later.start_date <= earlier.end_date:
            diag.append(f"periods: {earlier.label} and {later.label} overlap")

    for warning in report.warnings:
        logger.warning(warning)
    if report.ok:
        report.config = AnalysisConfig(
            source=path, raw=raw, name=str(study.get('name')), boundary_path=boundary,
            timezone=str(timezone), archive_root=archive_root, vendors=tuple(vendors),
            bikeshare_vendors=bikeshare_vendors, supply=supply, filter=filter_policy, leisure=leisure,
            relocation=relocation, router=router, classify=classify, connect_thresholds_ft=connect,
            periods=tuple(periods), jobs=jobs, entrances_path=entrances, exclusion_zones_path=zones_path,
            street_nodes_path=street_nodes, street_edges_path=street_edges, warnings=list(report.warnings)
        )
    return report


def load_config(path):
    """Validated AnalysisConfig, or ConfigError listing every diagnostic"""
    report = validate_config(path)
    if not report.ok:
        raise ConfigError('invalid config:\n  ' + '\n  '.join(report.diagnostics))
    return report.config
