"""
Development server for the read-only catalog API

    python run.py            # serves /api/archive and /api/runs on $PORT (5000)
"""
import os

from app import create_app

if __name__ == '__main__':
    app = create_app(os.environ.get('FLASK_ENV', 'development'))
    port = int(os.environ.get('PORT', 5000))
    app.logger.info("archive root: %s", app.config['MOBGAP_ARCHIVE_ROOT'])
    app.run(host='0.0.0.0', port=port, debug=app.config.get('DEBUG', False))
