"""Report assembly and CSV/JSON writers.

:func:`build_report` computes every aggregate into a JSON-ready dict with
stable key order.  :func:`write_report` writes it as ``report.json`` plus
one CSV per table; with ``plot_data`` it also writes narrow CSVs shaped for
plotting (hourly series, boxplot rows, bar fractions).
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

from ._io import atomic_write
from .classify import PackagingClass, ServiceClass, count_classes
from .metrics import (MIME_CLASSES, HitRateReport, hit_counts, latency_summary,
                      mime_breakdown, request_counts, size_distribution, time_series)

BOX_FIELDS = ("lower_whisker", "q1", "median", "q3", "upper_whisker", "mean", "count",
              "approximate")
RATE_FIELDS = ("n_miss", "n_hit", "n_hit1", "n_local", "edge_rate", "regional_rate",
               "system_rate")


def group_label(k) -> str:
    if isinstance(k, (ServiceClass, PackagingClass)):
        return k.value
    if isinstance(k, tuple) and len(k) == 2 and isinstance(k[0], datetime):
        local, off = k
        return local.replace(tzinfo=timezone(off)).isoformat()
    return str(k)


def _labeled(d: dict, fn) -> dict:
    return {group_label(k): fn(v) for k, v in sorted(d.items(), key=lambda kv: group_label(kv[0]))}


def build_report(records, include_local: bool = False, geo: bool | None = None) -> dict:
    """All aggregates over ``records`` (classified, optionally enriched).

    ``geo`` enables the ISP/province/country groupings; by default they are
    included when the records carry geo fields.
    """
    records = list(records)
    if geo is None:
        geo = bool(records) and hasattr(records[0], "isp")
    keys = ["all", "service", "hour"] + (["isp", "province", "country"] if geo else [])

    def rates(c):
        return HitRateReport.from_counts(c, include_local).to_dict()

    report = {
        "n_records": len(records),
        "include_local": include_local,
        "hit_rates": {k: _labeled(hit_counts(records, k), rates) for k in keys},
        "latency_seconds": {k: _labeled(latency_summary(records, k), lambda b: b.to_dict())
                            for k in keys if k != "hour"},
        "size_mb": _labeled(size_distribution(records), lambda b: b.to_dict()),
        "time_series": [{"bucket_start": b.bucket_start.isoformat(),
                         "request_count": b.request_count, "total_bytes": b.total_bytes,
                         "latency_sum": b.latency_sum,
                         "latency_mean": b.latency_mean if b.request_count else None}
                        for b in time_series(records)],
        "mime": _mime(records),
        "class_counts": {f"{s.value}:{p.value}": n for (s, p), n in
                         sorted(count_classes(records).items(),
                                key=lambda kv: (kv[0][0].value, kv[0][1].value))},
        "requests": {k: _labeled(request_counts(records, k), int)
                     for k in keys if k not in ("all", "hour")},
    }
    return report


def _mime(records) -> dict:
    b = mime_breakdown(records)
    return {m: {"requests": b.requests[m], "bytes": b.bytes[m],
                "request_fraction": b.request_fraction[m], "byte_fraction": b.byte_fraction[m]}
            for m in MIME_CLASSES}


def _csv(path: Path, header, rows) -> None:
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def write_report(report: dict, out_dir, plot_data: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, header, rows):
        p = out / name
        _csv(p, header, rows)
        written.append(p)

    with atomic_write(out / "report.json") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    written.append(out / "report.json")

    emit("hit_rates.csv", ("group_key", "group") + RATE_FIELDS,
         ((k, g) + tuple(v[f] for f in RATE_FIELDS)
          for k, groups in report["hit_rates"].items() for g, v in groups.items()))
    emit("latency_summary.csv", ("group_key", "group") + BOX_FIELDS,
         ((k, g) + tuple(v[f] for f in BOX_FIELDS)
          for k, groups in report["latency_seconds"].items() for g, v in groups.items()))
    emit("size_distribution.csv", ("service",) + BOX_FIELDS,
         ((g,) + tuple(v[f] for f in BOX_FIELDS) for g, v in report["size_mb"].items()))
    emit("time_series.csv", ("bucket_start", "request_count", "total_bytes", "latency_sum",
                             "latency_mean"),
         ((b["bucket_start"], b["request_count"], b["total_bytes"], b["latency_sum"],
           b["latency_mean"]) for b in report["time_series"]))
    emit("mime_breakdown.csv", ("mime", "requests", "bytes", "request_fraction", "byte_fraction"),
         ((m, v["requests"], v["bytes"], v["request_fraction"], v["byte_fraction"])
          for m, v in report["mime"].items()))
    emit("class_counts.csv", ("service", "packaging", "count"),
         (tuple(k.split(":")) + (n,) for k, n in report["class_counts"].items()))
    emit("requests_by_group.csv", ("group_key", "group", "requests"),
         ((k, g, n) for k, groups in report["requests"].items() for g, n in groups.items()))

    if plot_data:
        written += _write_plot_data(report, out)
    return written


def _write_plot_data(report: dict, out: Path) -> list[Path]:
    written = []

    def emit(name, header, rows):
        p = out / name
        _csv(p, header, rows)
        written.append(p)

    ts = report["time_series"]
    emit("plot_hourly_requests_and_bytes.csv", ("bucket_start", "request_count", "total_gb"),
         ((b["bucket_start"], b["request_count"], b["total_bytes"] / 1e9) for b in ts))
    emit("plot_hourly_latency.csv", ("bucket_start", "latency_sum", "latency_mean"),
         ((b["bucket_start"], b["latency_sum"], b["latency_mean"]) for b in ts))
    hourly = report["hit_rates"]["hour"]
    emit("plot_hourly_hit_rates.csv", ("bucket_start", "edge_rate", "regional_rate", "system_rate"),
         ((g, v["edge_rate"], v["regional_rate"], v["system_rate"]) for g, v in hourly.items()))
    emit("plot_hit_rates_by_service.csv", ("service", "edge_rate", "regional_rate", "system_rate"),
         ((g, v["edge_rate"], v["regional_rate"], v["system_rate"])
          for g, v in report["hit_rates"]["service"].items()))
    emit("plot_mime_fractions.csv", ("mime", "request_fraction", "byte_fraction"),
         ((m, v["request_fraction"], v["byte_fraction"]) for m, v in report["mime"].items()))
    box = ("lower_whisker", "q1", "median", "q3", "upper_whisker", "mean")
    emit("plot_size_box_by_service.csv", ("service",) + box,
         ((g,) + tuple(v[f] for f in box) for g, v in report["size_mb"].items()))
    total = sum(report["class_counts"].values())
    emit("plot_class_shares.csv", ("service", "packaging", "share"),
         (tuple(k.split(":")) + (n / total,) for k, n in report["class_counts"].items()))
    for key in ("service", "isp", "province"):
        if key in report["latency_seconds"]:
            emit(f"plot_latency_box_by_{key}.csv", (key,) + box,
                 ((g,) + tuple(v[f] for f in box)
                  for g, v in report["latency_seconds"][key].items()))
        if key in report["requests"] and key != "service":
            counts = report["requests"][key]
            n = sum(counts.values())
            emit(f"plot_request_share_by_{key}.csv", (key, "requests", "share"),
                 ((g, c, c / n) for g, c in Counter(counts).most_common()))
    return written
