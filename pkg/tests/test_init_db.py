"""
Tests for the database initialization script.
"""
import pytest

from services.archive import VEHICLES, SnapshotArchive
from services.feeds import VehicleSnapshot
from services.geo import GeoPoint
from utils import init_db

T0 = 1563364800


@pytest.fixture(autouse=True)
def testing_env(monkeypatch):
    monkeypatch.setenv('FLASK_ENV', 'testing')


def test_init(capsys):
    init_db.init_db()
    assert '✓ Tables created successfully' in capsys.readouterr().out


def test_reindex(tmp_path, capsys):
    archive = SnapshotArchive(tmp_path / 'archive')
    archive.append(VEHICLES, 'scoot', [VehicleSnapshot('scoot', 'a', GeoPoint(38.9, -77.03), T0)])
    init_db.reindex_archive(str(archive.root))
    assert '✓ Indexed 1 segments' in capsys.readouterr().out


def test_minicity(tmp_path, capsys):
    init_db.create_minicity(str(tmp_path / 'city'))
    out = capsys.readouterr().out
    assert '✓ Mini-city created' in out
    assert 'Periods: pre' in out
    assert (tmp_path / 'city' / 'config.yaml').exists()


def test_reset_cancelled(monkeypatch, capsys):
    monkeypatch.setattr('builtins.input', lambda prompt: 'no')
    init_db.reset_db()
    assert 'Cancelled.' in capsys.readouterr().out
