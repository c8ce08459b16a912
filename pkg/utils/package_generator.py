"""Report bundle writer - CSV/Markdown/GeoJSON with metadata headers, manifest, staging"""
import hashlib
import io
import json
import logging
import os
import shutil
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

METADATA_PREFIX = '# mobgap-metadata: '
MARKDOWN_PREFIX = '<!-- mobgap-metadata: '


def _metadata_json(metadata):
    return json.dumps(metadata or {}, sort_keys=True, default=str, separators=(',', ':'))


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(frame, path, metadata=None):
    """CSV with one leading metadata comment line"""
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(METADATA_PREFIX + _metadata_json(metadata) + '\n')
        frame.to_csv(handle, index=False, lineterminator='\n')


def read_csv(path, **kwargs):
    """(DataFrame, metadata) from a CSV that may carry metadata comment lines"""
    metadata = {}
    body = []
    with open(path, encoding='utf-8') as handle:
        for line in handle:
            if not body and line.startswith('#'):
                if line.startswith(METADATA_PREFIX):
                    metadata = json.loads(line[len(METADATA_PREFIX):])
                continue
            body.append(line)
    return pd.read_csv(io.StringIO(''.join(body)), **kwargs), metadata


def write_markdown(sections, path, metadata=None, title=None):
    """
    Markdown report from (heading, table) sections

    Tables are DataFrames (rendered with tabulate) or dicts (rendered as
    two-column key/value tables).
    """
    lines = [MARKDOWN_PREFIX + _metadata_json(metadata) + ' -->', '']
    if title:
        lines += [f"# {title}", '']
    for heading, table in sections:
        lines += [f"## {heading}", '']
        if isinstance(table, dict):
            table = pd.DataFrame({'value': pd.Series(table, dtype=object)}).rename_axis('metric')
            lines.append(table.to_markdown())
        elif table is None or table.empty:
            lines.append('_no rows_')
        else:
            lines.append(table.to_markdown(index=table.index.name is not None))
        lines.append('')
    Path(path).write_text('\n'.join(lines), encoding='utf-8')


def write_json(document, path, metadata=None):
    if metadata is not None:
        document = dict(document, metadata=metadata)
    Path(path).write_text(json.dumps(document, sort_keys=True, indent=1, default=str) + '\n', encoding='utf-8')


class BundleWriter:
    """
    Writes a report bundle into a staging folder beside the target and
    moves it into place only when the block completes

    On failure the staging folder is removed and the target is untouched.
    """

    def __init__(self, out_dir, settings=None):
        self.out_dir = Path(out_dir)
        self.staging = self.out_dir.parent / f".{self.out_dir.name}.staging-{os.getpid()}"
        self.settings = settings or {}
        self.inputs = {}
        self.outputs = []

    def __enter__(self):
        if self.staging.exists():
            shutil.rmtree(self.staging)
        self.staging.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.staging, ignore_errors=True)
            logger.info("bundle %s discarded", self.out_dir)
            return False
        try:
            self._write_manifest()
            if self.out_dir.exists():
                shutil.rmtree(self.out_dir)
            os.replace(self.staging, self.out_dir)
        except OSError:
            shutil.rmtree(self.staging, ignore_errors=True)
            raise
        logger.info("bundle written to %s (%d files)", self.out_dir, len(self.outputs))
        return False

    def path(self, name):
        target = self.staging / name
        target.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return target

    def add_input(self, label, path):
        path = Path(path)
        if path.is_dir():
            files = sorted(p for p in path.rglob('*') if p.is_file())
            digest = hashlib.sha256()
            for f in files:
                digest.update(str(f.relative_to(path)).encode('utf-8'))
                digest.update(sha256_file(f).encode('ascii'))
            self.inputs[label] = {'path': path.name, 'sha256': digest.hexdigest(), 'files': len(files)}
        else:
            self.inputs[label] = {'path': path.name, 'sha256': sha256_file(path)}

    def csv(self, name, frame, metadata=None):
        write_csv(frame, self.path(name), metadata)

    def markdown(self, name, sections, metadata=None, title=None):
        write_markdown(sections, self.path(name), metadata, title)

    def geojson(self, name, document, metadata=None):
        write_json(document, self.path(name), metadata)

    def binary(self, name, payload):
        """payload is a BytesIO from the Excel/PDF generators"""
        self.path(name).write_bytes(payload.getvalue())

    def _write_manifest(self):
        manifest = {
            'generated_at': datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ'),
            'inputs': self.inputs,
            'outputs': {name: sha256_file(self.staging / name) for name in sorted(self.outputs)},
            'settings': self.settings
        }
        (self.staging / 'manifest.json').write_text(
            json.dumps(manifest, sort_keys=True, indent=1, default=str) + '\n', encoding='utf-8')


def load_manifest(bundle_dir):
    return json.loads((Path(bundle_dir) / 'manifest.json').read_text(encoding='utf-8'))
