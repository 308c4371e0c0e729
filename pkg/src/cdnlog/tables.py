"""Labeled CSV files exchanged between pipeline stages.

Columns: latency_seconds, client_ip, status, timestamp (ISO 8601 with
offset), content_path, size_bytes, service, packaging, and for enriched
files isp, province, country (empty when the lookup was invalid or failed).
"""
from __future__ import annotations

import csv
from datetime import datetime

from ._io import atomic_write, open_text
from .classify import ClassifiedRecord, PackagingClass, ServiceClass
from .geoip import EnrichedRecord
from .logline import HitStatus, format_latency

CLASSIFIED_COLUMNS = ("latency_seconds", "client_ip", "status", "timestamp", "content_path",
                      "size_bytes", "service", "packaging")
ENRICHED_COLUMNS = CLASSIFIED_COLUMNS + ("isp", "province", "country")


class TableError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def is_labeled_csv(first_line: str) -> bool:
    return first_line.startswith(CLASSIFIED_COLUMNS[0] + ",")


def _row(r) -> list:
    row = [format_latency(r.latency_seconds), r.client_ip, r.status.value,
           r.timestamp.isoformat(), r.content_path, str(r.size_bytes),
           r.service.value, r.packaging.value]
    if isinstance(r, EnrichedRecord):
        row += [r.isp or "", r.province or "", r.country or ""]
    return row


def write_records(path, records, enriched: bool = False) -> int:
    n = 0
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENRICHED_COLUMNS if enriched else CLASSIFIED_COLUMNS)
        for r in records:
            w.writerow(_row(r))
            n += 1
    return n


_STATUS = {s.value: s for s in HitStatus}


def read_records(path) -> list:
    """Read a classified or enriched CSV back into records."""
    out = []
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header not in (CLASSIFIED_COLUMNS, ENRICHED_COLUMNS):
            raise TableError(path, 1, "unrecognized header")
        enriched = header == ENRICHED_COLUMNS
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise TableError(path, lineno, f"expected {len(header)} columns, got {len(row)}")
            try:
                base = (float(row[0]), row[1], _STATUS[row[2]], datetime.fromisoformat(row[3]),
                        row[4], int(row[5]), ServiceClass(row[6]), PackagingClass(row[7]))
            except (KeyError, ValueError) as exc:
                raise TableError(path, lineno, f"bad value ({exc})") from None
            if base[3].utcoffset() is None:
                raise TableError(path, lineno, "timestamp lacks a UTC offset")
            if enriched:
                out.append(EnrichedRecord(*base, *(v or None for v in row[8:11])))
            else:
                out.append(ClassifiedRecord(*base))
    return out
