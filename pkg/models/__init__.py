from datetime import datetime

from app import db


class ArchiveSegment(db.Model):
    """Catalog row for one archive segment file (kind, vendor, UTC day)"""
    __tablename__ = 'archive_segments'
    __table_args__ = (db.UniqueConstraint('archive_root', 'kind', 'vendor_id', 'day', name='uq_segment'),)

    id = db.Column(db.Integer, primary_key=True)
    archive_root = db.Column(db.String(500), nullable=False, index=True)
    kind = db.Column(db.String(20), nullable=False)
    vendor_id = db.Column(db.String(100), nullable=False, index=True)
    day = db.Column(db.Date, nullable=False)
    path = db.Column(db.String(500), nullable=False)
    size_bytes = db.Column(db.BigInteger, default=0)
    record_count = db.Column(db.Integer, default=0)
    first_observed_at = db.Column(db.BigInteger)
    last_observed_at = db.Column(db.BigInteger)
    updated_at = db.Column(db.DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)

    def to_dict(self):
        return {
            'id': self.id,
            'archive_root': self.archive_root,
            'kind': self.kind,
            'vendor_id': self.vendor_id,
            'day': self.day.isoformat(),
            'path': self.path,
            'size_bytes': self.size_bytes,
            'record_count': self.record_count,
            'first_observed_at': self.first_observed_at,
            'last_observed_at': self.last_observed_at,
            'updated_at': self.updated_at.isoformat() if self.updated_at else None
        }


class PipelineRun(db.Model):
    """Registry of report bundles written by the pipeline"""
    __tablename__ = 'pipeline_runs'

    id = db.Column(db.Integer, primary_key=True)
    config_path = db.Column(db.String(500), nullable=False)
    output_dir = db.Column(db.String(500), nullable=False)
    status = db.Column(db.String(20), nullable=False, default='running')  # running, completed, failed
    stage = db.Column(db.String(50))
    error = db.Column(db.Text)
    periods = db.Column(db.String(500))
    file_count = db.Column(db.Integer, default=0)
    started_at = db.Column(db.DateTime, default=datetime.utcnow)
    finished_at = db.Column(db.DateTime)

    def to_dict(self):
        return {
            'id': self.id,
            'config_path': self.config_path,
            'output_dir': self.output_dir,
            'status': self.status,
            'stage': self.stage,
            'error': self.error,
            'periods': self.periods.split(',') if self.periods else [],
            'file_count': self.file_count,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None
        }
