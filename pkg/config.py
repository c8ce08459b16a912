import os


def _database_url(default):
    database_url = os.environ.get('DATABASE_URL') or default
    # Heroku uses postgres:// but SQLAlchemy needs postgresql://
    if database_url and database_url.startswith('postgres://'):
        database_url = database_url.replace('postgres://', 'postgresql://', 1)
    return database_url


class Config:
    """Base configuration"""
    SECRET_KEY = os.environ.get('SECRET_KEY') or 'dev-secret-key-change-in-production'
    SQLALCHEMY_TRACK_MODIFICATIONS = False
    MOBGAP_HTTP_TIMEOUT = float(os.environ.get('MOBGAP_HTTP_TIMEOUT', 20))
    MOBGAP_STALENESS_HORIZON = int(os.environ.get('MOBGAP_STALENESS_HORIZON', 600))
    MOBGAP_MAX_BACKOFF = int(os.environ.get('MOBGAP_MAX_BACKOFF', 600))
    MOBGAP_ARCHIVE_ROOT = os.environ.get('MOBGAP_ARCHIVE_ROOT') or 'archive'
    MOBGAP_OUTPUT_ROOT = os.environ.get('MOBGAP_OUTPUT_ROOT') or 'output'
    # unset leaves the worker count to the analysis config
    MOBGAP_JOBS = int(os.environ.get('MOBGAP_JOBS', 0)) or None


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    SQLALCHEMY_DATABASE_URI = _database_url('sqlite:///mobgap_dev.db')


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    SQLALCHEMY_DATABASE_URI = _database_url(None)


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    SQLALCHEMY_DATABASE_URI = 'sqlite://'


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
