"""
Atomic artifact persistence: binary files, JSON, CSV and text.
Every write goes to a temp file in the target directory, then os.replace().
"""

import csv
import io
import json
import logging
import os
import tempfile

log = logging.getLogger(__name__)


def atomic_write(path, data):
    """Write bytes to path atomically. Leaves no partial file on error."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        dir=directory, suffix=".tmp", prefix=os.path.basename(path) + "_"
    )
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except OSError:
        log.exception("Failed to write %s", path)
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise
    log.debug("Saved %s (%d bytes)", path, len(data))


def json_bytes(data):
    """Canonical JSON encoding: sorted keys, 2-space indent, trailing newline."""
    return (json.dumps(data, indent=2, sort_keys=True) + "\n").encode("utf-8")


def csv_bytes(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def provenance_path(path):
    return os.fspath(path) + ".provenance.json"


class ArtifactWriter:
    """Writes run artifacts below one output directory."""

    def __init__(self, out_dir):
        self._out_dir = os.fspath(out_dir)

    @property
    def out_dir(self):
        return self._out_dir

    def path(self, name):
        return os.path.join(self._out_dir, name)

    def write_bytes(self, name, data):
        target = self.path(name)
        atomic_write(target, data)
        log.info("Saved %s", target)
        return target

    def write_text(self, name, text):
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name, data):
        return self.write_bytes(name, json_bytes(data))

    def write_csv(self, name, header, rows):
        return self.write_bytes(name, csv_bytes(header, rows))

    def write_provenance(self, name, provenance):
        """Store provenance next to an artifact as <name>.provenance.json."""
        return self.write_json(os.path.basename(provenance_path(name)), provenance)
