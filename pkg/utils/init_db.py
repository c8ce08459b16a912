"""
Database initialization script
Creates the catalog tables and indexes archives into them
"""
# Load environment variables FIRST
from dotenv import load_dotenv
import os
import sys

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

# Load .env file
load_dotenv()

from app import create_app, db
from services import catalog
from services.archive import SnapshotArchive
from utils.minicity import build_minicity


def init_db():
    """Initialize database tables"""
    app = create_app()
    with app.app_context():
        print("Creating database tables...")
        db.create_all()
        print("✓ Tables created successfully")


def reindex_archive(root=None):
    """Rebuild the segment catalog of one archive root"""
    app = create_app()
    with app.app_context():
        root = root or app.config['MOBGAP_ARCHIVE_ROOT']
        archive = SnapshotArchive(root)
        count = catalog.reindex(archive)
        print(f"✓ Indexed {count} segments")
        print(f"  Archive: {archive.root}")


def create_minicity(root, periods=1):
    """Write the synthetic mini-city and index its archive"""
    app = create_app()
    with app.app_context():
        city = build_minicity(root, periods=periods)
        count = catalog.reindex(SnapshotArchive(os.path.join(root, 'archive')))
        print("✓ Mini-city created")
        print(f"  Config: {city.config_path}")
        print(f"  Periods: {', '.join(city.planted)}")
        print(f"  Segments: {count}")


def reset_db():
    """Drop and recreate all tables (DESTRUCTIVE!)"""
    app = create_app()
    with app.app_context():
        response = input("⚠️  This will DELETE the catalog and run history. Continue? (yes/no): ")
        if response.lower() != 'yes':
            print("Cancelled.")
            return

        print("Dropping all tables...")
        db.drop_all()
        print("Creating tables...")
        db.create_all()
        print("✓ Database reset complete")


if __name__ == '__main__':
    if len(sys.argv) < 2:
        print("Usage:")
        print("  python utils/init_db.py init               - Create tables")
        print("  python utils/init_db.py reindex [ARCHIVE]  - Rebuild the segment catalog")
        print("  python utils/init_db.py minicity DIR [N]   - Write the mini-city (N periods) and index it")
        print("  python utils/init_db.py reset              - Reset database (DESTRUCTIVE)")
        sys.exit(1)

    command = sys.argv[1]

    if command == 'init':
        init_db()
    elif command == 'reindex':
        reindex_archive(sys.argv[2] if len(sys.argv) > 2 else None)
    elif command == 'minicity':
        if len(sys.argv) < 3:
            print("minicity needs a target directory")
            sys.exit(1)
        create_minicity(sys.argv[2], int(sys.argv[3]) if len(sys.argv) > 3 else 1)
    elif command == 'reset':
        reset_db()
    else:
        print(f"Unknown command: {command}")
        sys.exit(1)
