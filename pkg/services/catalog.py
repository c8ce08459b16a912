"""Database bookkeeping: archive segment catalog and pipeline run registry (needs an app context)"""
import logging
from datetime import datetime

from app import db
from models import ArchiveSegment, PipelineRun
from services.archive import KINDS

logger = logging.getLogger(__name__)


def record_segment(archive, kind, vendor_id, day):
    """Insert or refresh the catalog row for one segment"""
    path = archive.segment_path(kind, vendor_id, day)
    if not path.exists():
        return None
    info = archive.segment_info(kind, vendor_id, day)
    root = str(archive.root.resolve())
    row = ArchiveSegment.query.filter_by(archive_root=root, kind=kind, vendor_id=vendor_id, day=day).first()
    if row is None:
        row = ArchiveSegment(archive_root=root, kind=kind, vendor_id=vendor_id, day=day)
        db.session.add(row)
    row.path = str(info.path)
    row.size_bytes = info.size_bytes
    row.record_count = info.record_count
    row.first_observed_at = info.first_observed_at
    row.last_observed_at = info.last_observed_at
    db.session.commit()
    return row


def reindex(archive):
    """Rebuild the catalog rows of one archive root from its segment files"""
    root = str(archive.root.resolve())
    ArchiveSegment.query.filter_by(archive_root=root).delete()
    db.session.commit()
    count = 0
    for kind in KINDS:
        for segment in archive.segments(kind):
            record_segment(archive, kind, segment.vendor_id, segment.day)
            count += 1
    logger.info("catalog for %s rebuilt: %d segments", root, count)
    return count


def start_run(config_path, output_dir, periods):
    run = PipelineRun(config_path=str(config_path), output_dir=str(output_dir), status='running',
                      periods=','.join(periods))
    db.session.add(run)
    db.session.commit()
    return run


def finish_run(run, outputs=None, error=None):
    """Mark a run completed, or failed with the stage and message of error"""
    run.finished_at = datetime.utcnow()
    if error is None:
        run.status = 'completed'
        run.file_count = len(outputs or [])
    else:
        run.status = 'failed'
        run.stage = getattr(error, 'stage', None)
        run.error = str(error)
    db.session.commit()
    return run
