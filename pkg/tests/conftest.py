import numpy as np
import pytest

from app import create_app, db
from services.archive import STATIONS, VEHICLES, SnapshotArchive
from services.pipeline import load_study, run_pipeline
from services.settings import load_config
from services.supply import SupplyFeature, local_instant
from tests.oracles import archived_entries, departures_in_window, fishnet_kde, newest_cycle
from utils import minicity as city
from utils.minicity import build_minicity


@pytest.fixture
def app(tmp_path):
    app = create_app('testing')
    app.config.update(MOBGAP_ARCHIVE_ROOT=str(tmp_path / 'archive'), MOBGAP_OUTPUT_ROOT=str(tmp_path / 'output'))
    with app.app_context():
        db.create_all()
        yield app
        db.session.remove()
        db.drop_all()


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def archive(tmp_path):
    return SnapshotArchive(tmp_path / 'archive')


@pytest.fixture(scope='session')
def minicity(tmp_path_factory):
    return build_minicity(tmp_path_factory.mktemp('minicity'))


@pytest.fixture(scope='session')
def minicity_two_periods(tmp_path_factory):
    return build_minicity(tmp_path_factory.mktemp('minicity2'), periods=2)


@pytest.fixture(scope='session')
def colocated_minicity(tmp_path_factory):
    return build_minicity(tmp_path_factory.mktemp('colocated'), colocated=True)


@pytest.fixture(scope='session')
def minicity_config(minicity):
    return load_config(minicity.config_path)


@pytest.fixture(scope='session')
def minicity_run(minicity, minicity_config, tmp_path_factory):
    out = tmp_path_factory.mktemp('runs') / 'bundle'
    return run_pipeline(minicity_config, out)


@pytest.fixture(scope='session')
def golden_supply(minicity, minicity_config):
    """
    The pre-period 07:00 surfaces, rebuilt from the raw archive and timetable
    by the slow reference code: {'spec': GridSpec, mode: 2-d array}
    """
    config = minicity_config
    spec = load_study(config).spec
    archive = SnapshotArchive(config.archive_root)
    settings = config.supply
    instant = local_instant(city.DAY, '07:00', config.timezone)
    radii = settings.radii

    vehicles = []
    for vendor in config.vendors:
        cycle = newest_cycle(archived_entries(archive, VEHICLES, vendor.vendor_id), instant,
                             settings.staleness_horizon_s)
        vehicles += [v for v in cycle if not v.is_reserved and not v.is_disabled]
    stations = []
    for vendor_id in config.bikeshare_vendors or ():
        stations += newest_cycle(archived_entries(archive, STATIONS, vendor_id), instant,
                                 settings.staleness_horizon_s)
    counts = departures_in_window(minicity.network, city.DAY, 7 * 3600, settings.window_min * 60,
                                  settings.rail_weight)

    features = {
        'escooter': [SupplyFeature(v.point, 1.0, radii.escooter) for v in vehicles],
        'bikeshare': [SupplyFeature(s.point, float(s.bikes_available), radii.bikeshare) for s in stations],
        'transit': [SupplyFeature(stop.point, float(counts[stop.stop_id]), radii.transit)
                    for stop in minicity.network.served_stops]
    }
    golden = {mode: np.array(fishnet_kde(layer, spec)) for mode, layer in features.items()}
    golden['spec'] = spec
    return golden
