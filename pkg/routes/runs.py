from pathlib import Path

from flask import Blueprint, jsonify, request, send_from_directory
from werkzeug.security import safe_join

from models import PipelineRun
from utils.package_generator import load_manifest

runs_bp = Blueprint('runs', __name__)


@runs_bp.route('/', methods=['GET'])
def get_runs():
    """Get all pipeline runs"""
    try:
        status = request.args.get('status')

        query = PipelineRun.query
        if status:
            query = query.filter_by(status=status)

        runs = query.order_by(PipelineRun.started_at.desc(), PipelineRun.id.desc()).all()
        return jsonify([r.to_dict() for r in runs]), 200

    except Exception as e:
        return jsonify({'error': str(e)}), 500


@runs_bp.route('/<int:run_id>', methods=['GET'])
def get_run(run_id):
    """Get single run with its bundle manifest"""
    try:
        run = PipelineRun.query.get(run_id)
        if not run:
            return jsonify({'error': 'Run not found'}), 404

        data = run.to_dict()
        manifest_path = Path(run.output_dir) / 'manifest.json'
        data['manifest'] = load_manifest(run.output_dir) if manifest_path.exists() else None
        return jsonify(data), 200

    except Exception as e:
        return jsonify({'error': str(e)}), 500


@runs_bp.route('/<int:run_id>/files/<path:name>', methods=['GET'])
def get_run_file(run_id, name):
    """Download one file of a completed bundle"""
    try:
        run = PipelineRun.query.get(run_id)
        if not run:
            return jsonify({'error': 'Run not found'}), 404
        if run.status != 'completed':
            return jsonify({'error': f'Run is {run.status}'}), 409

        root = Path(run.output_dir).resolve()
        target = safe_join(str(root), name)
        if target is None or not Path(target).is_file():
            return jsonify({'error': 'File not found'}), 404

        return send_from_directory(root, name, as_attachment=True)

    except Exception as e:
        return jsonify({'error': str(e)}), 500
