import os

from dotenv import load_dotenv
from flask import Flask
from flask_cors import CORS
from flask_sqlalchemy import SQLAlchemy

load_dotenv()

from config import config  # noqa: E402  (reads the environment loaded above)

# Initialize extensions
db = SQLAlchemy()


def create_app(config_name=None):
    """Application factory pattern"""
    if config_name is None:
        config_name = os.environ.get('FLASK_ENV', 'development')

    app = Flask(__name__)
    app.config.from_object(config[config_name])

    # Disable strict slashes to prevent 308 redirects
    app.url_map.strict_slashes = False

    db.init_app(app)

    # Read-only API; any origin may read it
    CORS(app, resources={r"/api/*": {"origins": "*", "methods": ["GET", "OPTIONS"]}})

    from routes.archive import archive_bp
    from routes.runs import runs_bp

    app.register_blueprint(archive_bp, url_prefix='/api/archive')
    app.register_blueprint(runs_bp, url_prefix='/api/runs')

    with app.app_context():
        import models  # noqa: F401  (registers tables)
        db.create_all()

    # Health check endpoint
    @app.route('/health')
    def health_check():
        return {'status': 'healthy', 'service': 'mobgap API'}, 200

    return app
