from datetime import date

from flask import Blueprint, current_app, jsonify, request

from models import ArchiveSegment
from services.archive import KINDS, STATIONS, VEHICLES, SnapshotArchive, availability_at, station_status_at

archive_bp = Blueprint('archive', __name__)


def _archive():
    return SnapshotArchive(current_app.config['MOBGAP_ARCHIVE_ROOT'])


@archive_bp.route('/segments', methods=['GET'])
def get_segments():
    """Get catalogued archive segments"""
    try:
        kind = request.args.get('kind')
        vendor = request.args.get('vendor')
        day = request.args.get('day')

        query = ArchiveSegment.query
        if kind:
            if kind not in KINDS:
                return jsonify({'error': f'Unknown kind: {kind}'}), 400
            query = query.filter_by(kind=kind)
        if vendor:
            query = query.filter_by(vendor_id=vendor)
        if day:
            query = query.filter_by(day=date.fromisoformat(day))

        segments = query.order_by(ArchiveSegment.kind, ArchiveSegment.vendor_id, ArchiveSegment.day).all()
        return jsonify([s.to_dict() for s in segments]), 200

    except ValueError as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        return jsonify({'error': str(e)}), 500


@archive_bp.route('/vendors', methods=['GET'])
def get_vendors():
    """Get vendors with archived data, per kind"""
    try:
        archive = _archive()
        return jsonify({kind: archive.vendors(kind) for kind in KINDS}), 200
    except Exception as e:
        return jsonify({'error': str(e)}), 500


@archive_bp.route('/availability', methods=['GET'])
def get_availability():
    """Get vehicles (or station statuses) available at an instant"""
    try:
        at = request.args.get('at', type=int)
        if at is None:
            return jsonify({'error': 'Missing required parameter: at'}), 400

        kind = request.args.get('kind', VEHICLES)
        if kind not in KINDS:
            return jsonify({'error': f'Unknown kind: {kind}'}), 400

        horizon = request.args.get('horizon', current_app.config['MOBGAP_STALENESS_HORIZON'], type=int)
        vendors = request.args.getlist('vendor') or None

        if kind == STATIONS:
            records = station_status_at(_archive(), at, horizon, vendors)
        else:
            records = availability_at(_archive(), at, horizon, vendors)

        return jsonify({
            'at': at,
            'kind': kind,
            'staleness_horizon': horizon,
            'count': len(records),
            'records': [r.to_dict() for r in records]
        }), 200

    except Exception as e:
        return jsonify({'error': str(e)}), 500
