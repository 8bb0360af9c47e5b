"""Run outputs: JSONL metric streams and versioned CSV tables.

Every CSV schema round-trips (parse of a serialization is the identity);
JSONL lines carry a fixed key set and are flushed per line so consumers can
tail a run in progress.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

__all__ = [
    "MetricsWriter",
    "write_result_rows",
    "read_result_rows",
    "write_spectrum_rows",
    "read_spectrum_rows",
    "write_sk_rows",
    "read_sk_rows",
]

SCHEMA_VERSION = 1

RESULT_FIELDS = [
    ("schema_version", int),
    ("qx", lambda v: None if v == "" else int(v)),
    ("qy", lambda v: None if v == "" else int(v)),
    ("q_sf", lambda v: None if v == "" else int(v)),
    ("state_index", int),
    ("energy_per_site", float),
    ("energy_err", float),
    ("v_score", float),
]

SPECTRUM_FIELDS = [
    ("schema_version", int),
    ("level", int),
    ("energy", float),
    ("degeneracy", int),
]

SK_FIELDS = [
    ("schema_version", int),
    ("kx", int),
    ("ky", int),
    ("state_index", int),
    ("value", float),
    ("err", float),
]


class MetricsWriter:
    """Append-only JSONL stream, one flushed record per line."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _write_csv(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [name for name, _ in fields]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out.setdefault("schema_version", SCHEMA_VERSION)
            writer.writerow({k: ("" if out[k] is None else out[k]) for k in names})


def _read_csv(path, fields):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append({name: conv(raw[name]) for name, conv in fields})
    return rows


def write_result_rows(path, rows):
    _write_csv(path, RESULT_FIELDS, rows)


def read_result_rows(path):
    return _read_csv(path, RESULT_FIELDS)


def write_spectrum_rows(path, rows):
    _write_csv(path, SPECTRUM_FIELDS, rows)


def read_spectrum_rows(path):
    return _read_csv(path, SPECTRUM_FIELDS)


def write_sk_rows(path, rows):
    _write_csv(path, SK_FIELDS, rows)


def read_sk_rows(path):
    return _read_csv(path, SK_FIELDS)
