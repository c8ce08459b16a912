"""
mobgap command line

Every command runs inside the Flask app context (catalog and run registry
live in the app database). Exit codes: 0 ok, 2 config error, 3 data error,
4 anything else.
"""
import functools
import json
import logging
import signal
import sys
import threading
from datetime import date
from pathlib import Path

import click
from flask import current_app
from flask.cli import FlaskGroup

from app import create_app
from services import catalog, pipeline
from services.archive import KINDS, VEHICLES, SnapshotArchive
from services.errors import MobgapError
from services.ingest import Fetcher, SimulatedClock, load_plan, run_poller
from services.router import route_batch
from services.settings import defaults_yaml, load_config, validate_config
from services.supply import correlation_table
from utils.minicity import build_minicity
from utils.package_generator import BundleWriter, read_csv, write_csv

logger = logging.getLogger('mobgap')

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s: %(message)s'


def exits(func):
    """Map escaping errors to the documented exit codes"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MobgapError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
        except (click.ClickException, click.exceptions.Exit):
            raise
        except Exception as e:
            logger.exception("unexpected failure")
            click.echo(f"internal error: {e}", err=True)
            sys.exit(4)
    return wrapper


def _out_dir(out):
    return Path(out) if out else Path(current_app.config['MOBGAP_OUTPUT_ROOT'])


def _archive(path):
    return SnapshotArchive(path or current_app.config['MOBGAP_ARCHIVE_ROOT'])


def _jobs(jobs, config):
    """--jobs, then MOBGAP_JOBS, then study.jobs"""
    return jobs or current_app.config.get('MOBGAP_JOBS') or config.jobs


def _period(config, label):
    if label is None:
        return config.periods[0]
    for period in config.periods:
        if period.label == label:
            return period
    raise click.BadParameter(f"no period labelled {label!r}", param_hint='--period')


@click.group(cls=FlaskGroup, create_app=create_app, add_default_commands=False, load_dotenv=True)
@click.option('-v', '--verbose', count=True, help='-v for info, -vv for debug logging.')
def cli(verbose):
    """Micromobility and transit gap analysis."""
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format=LOG_FORMAT)


# === INGEST ===

@cli.command()
@click.option('--plan', 'plan', required=True, type=click.Path(exists=True, dir_okay=False), help='Poll plan (YAML).')
@click.option('--out', '--archive', 'archive_root', type=click.Path(file_okay=False),
              help='Archive root folder (default MOBGAP_ARCHIVE_ROOT).')
@click.option('--duration', type=float, help='Stop after this many seconds.')
@click.option('--simulate-from', type=int, help='Use a simulated clock starting at this UTC timestamp.')
@exits
def ingest(plan, archive_root, duration, simulate_from):
    """Poll the endpoints of the plan into the snapshot archive until interrupted."""
    poll_plan = load_plan(plan)
    archive = _archive(archive_root)
    stop_signal = threading.Event()
    if simulate_from is None:
        for signum in (signal.SIGINT, signal.SIGTERM):
            signal.signal(signum, lambda *_: stop_signal.set())
    clock = SimulatedClock(simulate_from) if simulate_from is not None else None

    stats = run_poller(poll_plan, archive, stop_signal=stop_signal, clock=clock,
                       fetcher=Fetcher(timeout=current_app.config['MOBGAP_HTTP_TIMEOUT']), duration=duration,
                       max_backoff=current_app.config['MOBGAP_MAX_BACKOFF'],
                       on_append=lambda kind, vendor, day: catalog.record_segment(archive, kind, vendor, day))
    click.echo(json.dumps(stats.to_dict(), indent=1, sort_keys=True))
    click.echo(f"✓ {stats.appended_cycles} cycles archived ({stats.fetch_failures} fetch failures, "
               f"{stats.parse_failures} parse failures)")


# === STAGES ===

@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(file_okay=False), help='Output folder.')
@exits
def infer(config_path, out):
    """Infer and filter trips for every period."""
    config = load_config(config_path)
    archive = SnapshotArchive(config.archive_root)
    with pipeline.stage('infer'), BundleWriter(_out_dir(out), settings=config.to_dict()) as writer:
        writer.add_input('config', config.source)
        for period in config.periods:
            trips = pipeline.infer_period(config, archive, period)
            pipeline.write_trips(writer, period, trips, {'config': config.to_dict(), 'period': period.to_dict()})
            click.echo(f"✓ {period.label}: {len(trips.kept)} trips kept, {len(trips.rejected)} rejected")


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(file_okay=False), help='Output folder.')
@exits
def supply(config_path, out):
    """Supply surfaces at every instant plus their correlation table."""
    config = load_config(config_path)
    with pipeline.stage('load'):
        study = pipeline.load_study(config)
        networks = {p.label: pipeline.load_network(config, p) for p in config.periods}
    metadata = pipeline.base_metadata(config, study)
    with pipeline.stage('supply'), BundleWriter(_out_dir(out), settings=config.to_dict()) as writer:
        grids_by_instant = {}
        for period in config.periods:
            grids = pipeline.supply_period(config, study, period, networks[period.label])
            pipeline.write_supply(writer, period, grids, dict(metadata, period=period.to_dict()))
            grids_by_instant.update(grids)
        pipeline.write_correlations(writer, correlation_table(grids_by_instant, study.mask), metadata)
    click.echo(f"✓ {len(grids_by_instant)} instants written")


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.argument('queries', type=click.Path(exists=True, dir_okay=False))
@click.option('--period', 'label', help='Period whose GTFS to route on (default: the first).')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Result CSV.')
@click.option('--jobs', type=int, help='Worker threads.')
@exits
def route(config_path, queries, label, out, jobs):
    """Windowed transit time for each row (olat, olon, dlat, dlon, start_utc) of QUERIES."""
    config = load_config(config_path)
    period = _period(config, label)
    with pipeline.stage('load'):
        network = pipeline.load_network(config, period)
        frame, _ = read_csv(queries)
    with pipeline.stage('route'):
        result = route_batch(network, frame, config.router, _jobs(jobs, config))
    write_csv(frame.join(result), out, {'config': config.to_dict(), 'period': period.to_dict()})
    click.echo(f"✓ {int((result['n_reachable'] > 0).sum())}/{len(result)} queries reachable")


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--trips', 'trips_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Output folder of an earlier infer run.')
@click.option('--out', type=click.Path(file_okay=False), help='Output folder.')
@click.option('--jobs', type=int, help='Worker threads.')
@exits
def classify(config_path, trips_dir, out, jobs):
    """Classify the trips of an infer run and compare them with transit."""
    config = load_config(config_path)
    with pipeline.stage('load'):
        study = pipeline.load_study(config)
    metadata = pipeline.base_metadata(config, study)
    with pipeline.stage('classify'), BundleWriter(_out_dir(out), settings=config.to_dict()) as writer:
        for period in config.periods:
            network = pipeline.load_network(config, period)
            entrances = pipeline.load_entrances(config, network)
            trips = pipeline.PeriodTrips(kept=pipeline.read_period_trips(trips_dir, period))
            frame, summary = pipeline.classify_period(config, study, period, network, entrances, trips,
                                                      _jobs(jobs, config))
            pipeline.write_assessments(writer, period, frame, summary, dict(metadata, period=period.to_dict()))
            click.echo(f"✓ {period.label}: {len(frame)} trips assessed")


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--assessments', 'assessments_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Output folder of an earlier classify run.')
@click.option('--supply', 'supply_dir', type=click.Path(exists=True, file_okay=False),
              help='Output folder of an earlier supply run.')
@click.option('--out', type=click.Path(file_okay=False), help='Output folder.')
@exits
def report(config_path, assessments_dir, supply_dir, out):
    """Summary tables, comparison and Markdown/Excel/PDF reports from earlier stage outputs."""
    config = load_config(config_path)
    writer = pipeline.report_from_directory(config, assessments_dir, _out_dir(out), supply_dir)
    click.echo(f"✓ report written to {writer.out_dir}")


@cli.command('run')
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(file_okay=False), help='Output folder.')
@click.option('--jobs', type=int, help='Worker threads.')
@exits
def run_command(config_path, out, jobs):
    """Run the whole pipeline into one report bundle."""
    config = load_config(config_path)
    out_dir = _out_dir(out)
    run = catalog.start_run(config_path, out_dir, [p.label for p in config.periods])
    try:
        result = pipeline.run_pipeline(config, out_dir, _jobs(jobs, config))
    except Exception as e:
        catalog.finish_run(run, error=e)
        raise
    catalog.finish_run(run, outputs=result.outputs)
    click.echo(f"✓ run {run.id}: {len(result.outputs)} files written to {out_dir}")


# === CONFIG ===

@cli.group(invoke_without_command=True)
@click.option('--defaults', is_flag=True, help='Print every default setting as YAML.')
@click.pass_context
def config(ctx, defaults):
    """Analysis config helpers."""
    if defaults:
        click.echo(defaults_yaml(), nl=False)
    elif ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@config.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@exits
def validate(path):
    """Check a config file and list every problem found."""
    result = validate_config(path)
    for warning in result.warnings:
        click.echo(f"warning: {warning}")
    if not result.ok:
        for diagnostic in result.diagnostics:
            click.echo(diagnostic, err=True)
        sys.exit(2)
    click.echo(f"✓ {path} is valid")


# === ARCHIVE ===

@cli.group()
def archive():
    """Snapshot archive maintenance."""


@archive.command()
@click.option('--archive', 'archive_root', type=click.Path(exists=True, file_okay=False), help='Archive root folder.')
@click.option('--kind', type=click.Choice(KINDS), default=VEHICLES, show_default=True)
@click.option('--vendor', required=True)
@click.option('--day', required=True, type=click.DateTime(formats=['%Y-%m-%d']), help='UTC day, YYYY-MM-DD.')
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@exits
def export(archive_root, kind, vendor, day, out):
    """Write one segment as JSON lines."""
    count = _archive(archive_root).export_jsonl(kind, vendor, date(day.year, day.month, day.day), out)
    click.echo(f"✓ {count} records exported to {out}")


@archive.command()
@click.option('--archive', 'archive_root', type=click.Path(exists=True, file_okay=False), help='Archive root folder.')
@exits
def reindex(archive_root):
    """Rebuild the segment catalog from the files on disk."""
    count = catalog.reindex(_archive(archive_root))
    click.echo(f"✓ {count} segments catalogued")


# === SAMPLE DATA ===

@cli.command()
@click.argument('root', type=click.Path(file_okay=False))
@click.option('--periods', type=click.IntRange(1, 2), default=1, show_default=True)
@click.option('--colocated', is_flag=True, help='Place bikeshare stations beside the scooter clusters.')
@exits
def minicity(root, periods, colocated):
    """Write the synthetic study area (GTFS, archive, boundary, config) under ROOT."""
    city = build_minicity(root, periods=periods, colocated=colocated)
    catalog.reindex(SnapshotArchive(Path(root) / 'archive'))
    planted = sum(len(t) for t in city.planted.values())
    click.echo(f"✓ mini-city written to {root} ({planted} planted trips)")
    click.echo(f"  config: {city.config_path}")


def main():
    cli(prog_name='mobgap')


if __name__ == '__main__':
    main()
