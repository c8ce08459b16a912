"""
Full analysis run: load, infer, supply, classify, report

Each stage has its own function so the CLI can run it alone against the
intermediate files of the previous one. Failures carry the stage name.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from services.archive import STATIONS, SnapshotArchive, replay
from services.classify import (AssessmentContext, ServiceArea, assess_trips, assessments_frame, compare_frames,
                               summarize_frame)
from services.errors import StageError
from services.feeds import parse_gtfs, parse_rail_entrances
from services.geo import load_polygons
from services.router import RouterPool
from services.supply import (GridSpec, boundary_mask, correlation_table, grid_frame, grid_geojson, local_instant,
                             supply_snapshot)
from services.tripinfer import apply_filters, events_frame, infer_trips, read_trips_csv, trips_frame
from services.walkshed import StreetGraph
from utils.excel_generator import generate_report_excel
from utils.package_generator import BundleWriter, read_csv
from utils.pdf_generator import generate_report_pdf

logger = logging.getLogger(__name__)


@contextmanager
def stage(name):
    """Re-raise anything escaping the block as StageError(name, cause)"""
    logger.info("stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e
    logger.info("stage %s done", name)


# === LOAD ===

@dataclass
class Study:
    polygons: list
    spec: GridSpec
    mask: np.ndarray
    archive: SnapshotArchive
    street_graph: StreetGraph | None = None

    @property
    def distance_model(self):
        return 'street network' if self.street_graph is not None else 'great-circle'


def load_study(config):
    polygons = load_polygons(config.boundary_path)
    spec = GridSpec.covering(polygons, cell_size_mi=config.supply.cell_size_mi,
                             subdivisions=config.supply.subdivisions, kernel=config.supply.kernel)
    street_graph = None
    if config.street_nodes_path is not None:
        street_graph = StreetGraph.from_csv(config.street_nodes_path, config.street_edges_path)
    logger.info("study grid %dx%d cells of %.4f mi", spec.ncols, spec.nrows, spec.cell_size_mi)
    return Study(polygons=polygons, spec=spec, mask=boundary_mask(spec, polygons),
                 archive=SnapshotArchive(config.archive_root), street_graph=street_graph)


def load_network(config, period):
    network = parse_gtfs(Path(period.gtfs_path).read_bytes(), fallback_timezone=config.timezone)
    logger.info("period %s network: %s", period.label, network.summary())
    return network


def load_entrances(config, network):
    """Configured entrance CSV, else the entrance records of the GTFS feed"""
    if config.entrances_path is not None:
        return parse_rail_entrances(Path(config.entrances_path).read_bytes())
    return parse_rail_entrances(network)


def period_window(config, period):
    """UTC [start, end) covering the period's local dates"""
    return (local_instant(period.start_date, '00:00', config.timezone),
            local_instant(period.end_date + timedelta(days=1), '00:00', config.timezone))


def base_metadata(config, study):
    return {
        'config': config.to_dict(),
        'grid': study.spec.to_dict(),
        'distance_model': study.distance_model
    }


# === INFER ===

@dataclass
class PeriodTrips:
    """Filtered trips of one period plus everything set aside on the way"""
    kept: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    suppressed: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def utilitarian_flags(self, leisure_policy):
        return [leisure_policy.reason(t) is None for t in self.kept]


def infer_period(config, archive, period):
    start, end = period_window(config, period)
    result = PeriodTrips()
    for vendor in config.vendors:
        inferred = infer_trips(replay(archive, vendors=[vendor.vendor_id], start=start, end=end, markers=True),
                               vendor, config.relocation)
        kept, rejected = apply_filters(inferred.trips, config.filter)
        result.kept.extend(kept)
        result.rejected.extend(rejected)
        result.suppressed.extend(inferred.suppressed)
        result.events.extend(inferred.events)
    result.kept.sort(key=lambda t: (t.start_time, t.vendor_id, t.vehicle_id or ''))
    logger.info("period %s: %d trips kept, %d rejected, %d suppressed, %d unlinked events", period.label,
                len(result.kept), len(result.rejected), len(result.suppressed), len(result.events))
    return result


def rejected_frame(rejected):
    frame = trips_frame([r.trip for r in rejected])
    frame['reason'] = [r.reason for r in rejected]
    return frame


def suppressed_frame(suppressed):
    rows = [{
        'vendor': s.vendor_id,
        'vehicle': s.vehicle_id,
        'olat': s.origin.lat,
        'olon': s.origin.lon,
        'dlat': s.destination.lat,
        'dlon': s.destination.lon,
        'start': s.start_time,
        'end': s.end_time,
        'reason': s.reason,
        'battery_gain': None if s.battery_gain is None else round(s.battery_gain, 6)
    } for s in suppressed]
    return pd.DataFrame(rows, columns=['vendor', 'vehicle', 'olat', 'olon', 'dlat', 'dlon', 'start', 'end',
                                       'reason', 'battery_gain'])


def write_trips(writer, period, trips, metadata):
    label = period.label
    writer.csv(f"trips/{label}_trips.csv", trips_frame(trips.kept), metadata)
    writer.csv(f"trips/{label}_rejected.csv", rejected_frame(trips.rejected), metadata)
    writer.csv(f"trips/{label}_suppressed.csv", suppressed_frame(trips.suppressed), metadata)
    writer.csv(f"trips/{label}_events.csv", events_frame(trips.events), metadata)


def read_period_trips(directory, period):
    """Kept trips of a period from an earlier infer run"""
    return read_trips_csv(Path(directory) / 'trips' / f"{period.label}_trips.csv")


# === SUPPLY ===

def instant_label(period, day, time_of_day):
    return f"{period.label} {day.isoformat()} {time_of_day}"


def supply_period(config, study, period, network):
    """{instant label: {mode: SupplyGrid}} over the period's supply dates and instants"""
    settings = config.supply
    grids = {}
    for day in period.supply_dates:
        for time_of_day in settings.instants:
            instant = local_instant(day, time_of_day, config.timezone)
            grids[instant_label(period, day, time_of_day)] = supply_snapshot(
                study.archive, network, instant, study.spec,
                radii=settings.radii,
                vendors=[v.vendor_id for v in config.vendors],
                bike_vendors=config.bikeshare_vendors,
                staleness_horizon=settings.staleness_horizon_s,
                rail_weight=settings.rail_weight,
                window_s=settings.window_min * 60,
                tz=config.timezone,
                allow_gaps=True
            )
    return grids


def write_supply(writer, period, grids, metadata):
    for label, by_mode in grids.items():
        _, day, time_of_day = label.rsplit(' ', 2)
        stem = f"supply/{period.label}/{day}_{time_of_day.replace(':', '')}"
        for mode in sorted(by_mode):
            properties = {'period': period.label, 'date': day, 'time': time_of_day, 'mode': mode}
            writer.geojson(f"{stem}_{mode}.geojson", grid_geojson(by_mode[mode], properties),
                           dict(metadata, **properties))
            writer.csv(f"{stem}_{mode}.csv", grid_frame(by_mode[mode]), dict(metadata, **properties))


def write_correlations(writer, correlations, metadata):
    writer.csv('supply/correlations.csv', correlations, metadata)
    table = correlations.pivot(index='pair', columns='instant', values='r') if not correlations.empty else None
    writer.markdown('supply/correlations.md', [('Pearson r between supply surfaces', table)], metadata,
                    title='Kernel density correlations')


# === CLASSIFY ===

def period_stations(config, archive, period):
    """Every bikeshare station reported during the period, first report wins"""
    if not archive.vendors(STATIONS):
        return []
    start, end = period_window(config, period)
    stations = {}
    for status in replay(archive, vendors=config.bikeshare_vendors, start=start, end=end, kind=STATIONS):
        stations.setdefault((status.vendor_id, status.station_id), status)
    return [stations[key] for key in sorted(stations)]


def classify_period(config, study, period, network, entrances, trips, jobs=1):
    """(assessment frame, Summary) for a period's filtered trips"""
    kept = list(trips.kept)
    flags = trips.utilitarian_flags(config.leisure)
    if config.classify.scope == 'utilitarian':
        kept = [t for t, f in zip(kept, flags) if f]
        flags = [True] * len(kept)

    context = AssessmentContext(
        network=network,
        transit_area=ServiceArea.for_transit(network, config.classify.transit_radius_mi, study.street_graph),
        bike_area=ServiceArea.for_bikeshare(period_stations(config, study.archive, period),
                                            config.classify.bikeshare_radius_mi, study.street_graph),
        entrances=entrances,
        pricing=period.pricing,
        routers=RouterPool(network, config.router),
        thresholds_ft=config.connect_thresholds_ft
    )
    assessments = assess_trips(kept, context, flags, jobs=jobs)
    frame = assessments_frame(assessments, config.timezone, period.label)
    logger.info("period %s: %d trips assessed (%s scope)", period.label, len(frame), config.classify.scope)
    return frame, summarize_frame(frame, period.label, config.classify.bin_hours)


def write_assessments(writer, period, frame, summary, metadata):
    writer.csv(f"assessments/{period.label}.csv", frame, metadata)
    writer.markdown(f"assessments/{period.label}_summary.md", summary_sections(summary), metadata,
                    title=f"Period {period.label}")


def read_assessments(directory, period):
    frame, _ = read_csv(Path(directory) / 'assessments' / f"{period.label}.csv",
                        dtype={'vehicle': str})
    return frame


# === REPORT ===

def summary_sections(summary):
    return [
        ('Counts', summary.counts),
        ('Medians', summary.medians),
        ('Transit trip types by hour (%)', summary.type_shares),
        ('Bikeshare classes by hour (%)', summary.class_shares),
        ('Transit-connecting trips by hour', summary.connecting)
    ]


def compare_consecutive(config, frames):
    """Comparison table for each pair of consecutive periods"""
    ordered = sorted(config.periods, key=lambda p: p.start_date)
    return [compare_frames((a.label, frames[a.label]), (b.label, frames[b.label]))
            for a, b in zip(ordered, ordered[1:])]


def write_report(writer, config, summaries, correlations, comparisons, metadata):
    sections = []
    for summary in summaries:
        sections += [(f"{summary.period}: {heading}", table) for heading, table in summary_sections(summary)]
    if correlations is not None and not correlations.empty:
        sections.append(('Kernel density correlations',
                         correlations.pivot(index='pair', columns='instant', values='r')))
    for i, comparison in enumerate(comparisons):
        sections.append((f"Between-period comparison {i + 1}", comparison))
        labels = [c for c in comparison.columns if c not in ('metric', 'p_value', 'significance')]
        writer.csv(f"comparison_{'_'.join(labels)}.csv", comparison, metadata)
    writer.markdown('report.md', sections, metadata, title=f"Mobility gap report - {config.name}")
    writer.binary('report.xlsx', generate_report_excel(config.name, summaries, correlations, comparisons))
    writer.binary('report.pdf', generate_report_pdf(config.name, summaries, correlations, comparisons))


def report_from_directory(config, assessments_dir, out_dir, supply_dir=None):
    """Rebuild the report files from the tables of earlier classify (and supply) runs"""
    with stage('report'):
        frames = {p.label: read_assessments(assessments_dir, p) for p in config.periods}
        correlations_path = Path(supply_dir or assessments_dir) / 'supply' / 'correlations.csv'
        correlations = read_csv(correlations_path)[0] if correlations_path.exists() else None
        summaries = [summarize_frame(frames[p.label], p.label, config.classify.bin_hours) for p in config.periods]
        comparisons = compare_consecutive(config, frames)
        metadata = {'config': config.to_dict(), 'source': Path(assessments_dir).name}
        with BundleWriter(out_dir, settings=config.to_dict()) as writer:
            write_report(writer, config, summaries, correlations, comparisons, metadata)
        return writer


# === FULL RUN ===

@dataclass
class RunResult:
    out_dir: Path
    outputs: list
    summaries: list
    correlations: pd.DataFrame
    comparisons: list


def run_pipeline(config, out_dir, jobs=None):
    """
    Run every stage for every period into one bundle

    The bundle is staged next to out_dir and only moved into place when every
    stage succeeded; on failure nothing is left behind.
    """
    jobs = jobs or config.jobs
    with stage('load'):
        study = load_study(config)
        loaded = {}
        for period in config.periods:
            network = load_network(config, period)
            loaded[period.label] = (network, load_entrances(config, network))
    metadata = base_metadata(config, study)

    try:
        with BundleWriter(out_dir, settings=config.to_dict()) as writer:
            writer.add_input('config', config.source)
            writer.add_input('boundary', config.boundary_path)
            writer.add_input('archive', config.archive_root)
            if config.entrances_path is not None:
                writer.add_input('entrances', config.entrances_path)
            for period in config.periods:
                writer.add_input(f"gtfs {period.label}", period.gtfs_path)

            grids_by_instant, frames, summaries = {}, {}, []
            for period in config.periods:
                network, entrances = loaded[period.label]
                with stage('infer'):
                    trips = infer_period(config, study.archive, period)
                    write_trips(writer, period, trips, dict(metadata, period=period.to_dict()))
                with stage('supply'):
                    grids = supply_period(config, study, period, network)
                    write_supply(writer, period, grids, dict(metadata, period=period.to_dict()))
                    grids_by_instant.update(grids)
                with stage('classify'):
                    frame, summary = classify_period(config, study, period, network, entrances, trips, jobs)
                    write_assessments(writer, period, frame, summary, dict(metadata, period=period.to_dict()))
                    frames[period.label] = frame
                    summaries.append(summary)

            with stage('supply'):
                correlations = correlation_table(grids_by_instant, study.mask)
                write_correlations(writer, correlations, metadata)
            with stage('report'):
                comparisons = compare_consecutive(config, frames)
                write_report(writer, config, summaries, correlations, comparisons, metadata)
    except OSError as e:
        raise StageError('report', e) from e

    return RunResult(out_dir=Path(out_dir), outputs=sorted(writer.outputs), summaries=summaries,
                     correlations=correlations, comparisons=comparisons)

