"""Columnar bulk engine for cleaning and classifying large log corpora.

:func:`scan_text` produces the same accepted records and rejection counts as
:func:`cdnlog.logline.clean_stream`, but vectorized with polars.  Lines in the
common canonical shape are validated column-wise; anything else (IPv6,
brackets in paths, odd whitespace, every malformed line) goes through
:func:`cdnlog.logline.parse_line`, which stays the single source of truth for
rejection reasons.
"""
from __future__ import annotations

from collections import Counter
from datetime import timedelta, timezone

import polars as pl

from .classify import (DEFAULT_PATTERNS, ClassifiedRecord, PackagingClass, PatternConfig,
                       ServiceClass)
from .logline import (MONTHS, HitStatus, LogRecord, ParseError, RejectionStats,
                      parse_line)

SCHEMA = {
    "row": pl.Int64,
    "latency_ms": pl.Int64,
    "client_ip": pl.String,
    "status": pl.String,
    "ts_local": pl.Datetime("us"),
    "utc_offset_min": pl.Int32,
    "content_path": pl.String,
    "size_bytes": pl.Int64,
}

_OCTET = r"(?:25[0-5]|2[0-4][0-9]|1[0-9][0-9]|[1-9]?[0-9])"
_IPV4 = rf"^{_OCTET}\.{_OCTET}\.{_OCTET}\.{_OCTET}$"
_LATENCY = r"^[0-9]{1,12}(?:\.[0-9]{1,3})?$"
_TS_BODY = (r"[0-9]{2}/(?:" + "|".join(MONTHS) + r")/[1-9][0-9]{3}:"
            r"(?:[01][0-9]|2[0-3]):[0-5][0-9]:[0-5][0-9]")
_TS = rf"^\[{_TS_BODY} [+-](?:[01][0-9]|2[0-3])[0-5][0-9]\]$"
_TS_HEAD = rf"^\[{_TS_BODY}$"
_TS_TAIL = r"^[+-](?:[01][0-9]|2[0-3])[0-5][0-9]\]$"
# Characters Python's str.strip() removes at path edges, plus brackets.
_EDGE = r"[^\s\x1c-\x1f\[\]]"
_PATH = rf"^{_EDGE}(?:[^\[\]]*{_EDGE})?$"
_SIZE = r"^[0-9]{1,18}$"
_STATUSES = [s.value for s in HitStatus]


def split_lines(text: str) -> list[str]:
    """Split on ``\\n`` only; a final newline does not start an extra line."""
    if not text:
        return []
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    return lines


def _fast_columns(lines: pl.Series) -> pl.DataFrame:
    f = [f"f{i}" for i in range(8)]
    df = (pl.DataFrame({"line": lines})
          .with_row_index("row")
          .with_columns(pl.col("row").cast(pl.Int64),
                        pl.col("line").str.strip_suffix("\r")
                        .str.splitn(", ", 8).struct.rename_fields(f).alias("s"))
          .unnest("s"))
    six = pl.col("f5").is_not_null() & pl.col("f6").is_null()
    seven = (pl.col("f6").is_not_null() & pl.col("f7").is_null()
             & pl.col("f3").str.contains(_TS_HEAD) & pl.col("f4").str.contains(_TS_TAIL))
    df = df.with_columns(
        ts=pl.when(six).then(pl.col("f3"))
        .when(seven).then(pl.concat_str([pl.col("f3"), pl.col("f4")], separator=" ")),
        path=pl.when(six).then(pl.col("f4")).when(seven).then(pl.col("f5")),
        size=pl.when(six).then(pl.col("f5")).when(seven).then(pl.col("f6")),
    )
    ok = (
        pl.col("ts").str.contains(_TS).fill_null(False)
        & pl.col("f0").str.contains(_LATENCY)
        & pl.col("f1").str.contains(_IPV4)
        & pl.col("f2").is_in(_STATUSES)
        & pl.col("path").str.contains(_PATH)
        & pl.col("size").str.contains(_SIZE)
    )
    df = df.with_columns(ok=ok.fill_null(False))
    lat = pl.col("f0").str.split_exact(".", 1)
    df = df.with_columns(
        latency_ms=(lat.struct.field("field_0").cast(pl.Int64, strict=False) * 1000
                    + lat.struct.field("field_1").fill_null("").str.pad_end(3, "0")
                    .cast(pl.Int64, strict=False)),
        ts_local=pl.col("ts").str.slice(1, 20)
        .str.strptime(pl.Datetime("us"), "%d/%b/%Y:%H:%M:%S", strict=False),
        utc_offset_min=(pl.when(pl.col("ts").str.slice(22, 1) == "-").then(-1).otherwise(1)
                        * (pl.col("ts").str.slice(23, 2).cast(pl.Int32, strict=False) * 60
                           + pl.col("ts").str.slice(25, 2).cast(pl.Int32, strict=False))
                        ).cast(pl.Int32),
        size_bytes=pl.col("size").cast(pl.Int64, strict=False),
    )
    # Calendar-invalid dates (31/Feb) come back null from strptime.
    return df.with_columns(ok=pl.col("ok") & pl.col("ts_local").is_not_null()
                           & pl.col("latency_ms").is_not_null()
                           & pl.col("size_bytes").is_not_null())


def _records_to_frame(rows: list[int], records: list[LogRecord]) -> pl.DataFrame:
    return pl.DataFrame({
        "row": rows,
        "latency_ms": [round(r.latency_seconds * 1000) for r in records],
        "client_ip": [r.client_ip for r in records],
        "status": [r.status.value for r in records],
        "ts_local": [r.timestamp.replace(tzinfo=None) for r in records],
        "utc_offset_min": [int(r.timestamp.utcoffset().total_seconds()) // 60 for r in records],
        "content_path": [r.content_path for r in records],
        "size_bytes": [r.size_bytes for r in records],
    }, schema=SCHEMA)


def scan_lines(lines, row_offset: int = 0) -> tuple[pl.DataFrame, RejectionStats]:
    """Parse ``lines`` (already split, no newlines) into a record frame."""
    series = pl.Series("line", lines, dtype=pl.String)
    if series.len() == 0:
        return pl.DataFrame(schema=SCHEMA), RejectionStats()
    df = _fast_columns(series)
    fast = (df.filter(pl.col("ok"))
            .select(pl.col("row"), pl.col("latency_ms"), pl.col("f1").alias("client_ip"),
                    pl.col("f2").alias("status"), pl.col("ts_local"), pl.col("utc_offset_min"),
                    pl.col("path").alias("content_path"), pl.col("size_bytes")))
    slow = df.filter(~pl.col("ok")).select("row", "line")

    stats = RejectionStats()
    stats.add_accepted(fast.height)
    rows, recs = [], []
    for row, line in slow.iter_rows():
        try:
            rec = parse_line(line)
        except ParseError as exc:
            stats.add_rejection(exc.reason)
            continue
        stats.add_accepted()
        rows.append(row)
        recs.append(rec)
    out = fast.cast(SCHEMA)
    if recs:
        out = pl.concat([out, _records_to_frame(rows, recs)]).sort("row")
    if row_offset:
        out = out.with_columns(pl.col("row") + row_offset)
    return out, stats


def scan_text(text: str, row_offset: int = 0) -> tuple[pl.DataFrame, RejectionStats]:
    return scan_lines(split_lines(text), row_offset)


def _identity_expr(cfg: PatternConfig) -> pl.Expr:
    path = pl.col("content_path")
    if cfg.normalize_identity:
        return path.str.replace(r"^/[0-9a-fA-F]{32,}/", "/")
    return path


def service_expr(cfg: PatternConfig = DEFAULT_PATTERNS) -> pl.Expr:
    lower = pl.col("content_path").str.to_lowercase()
    ext = lower.str.extract(r"(\.[^./]*)$", 0).fill_null("")
    return (pl.when(lower.str.contains_any(list(cfg.live_patterns)))
            .then(pl.lit(ServiceClass.LIVE.value))
            .when(ext.is_in(list(cfg.streaming_extensions)))
            .then(pl.lit(ServiceClass.VOD.value))
            .otherwise(pl.lit(ServiceClass.WEBSITE.value)))


def miss_identities(df: pl.DataFrame, cfg: PatternConfig = DEFAULT_PATTERNS) -> pl.Series:
    return (df.lazy().filter(pl.col("status") == HitStatus.MISS.value)
            .select(_identity_expr(cfg).alias("identity")).unique()
            .collect().get_column("identity"))


def classify_frame(df: pl.DataFrame, cfg: PatternConfig = DEFAULT_PATTERNS,
                   misses: pl.Series | None = None) -> pl.DataFrame:
    """Add ``service`` and ``packaging`` columns (enum values as strings).

    ``misses`` defaults to the MISS identities of ``df`` itself; pass the
    union over several frames to classify a window spread across chunks.
    """
    if misses is None:
        misses = miss_identities(df, cfg)
    return df.with_columns(
        service=service_expr(cfg),
        packaging=pl.when(_identity_expr(cfg).is_in(misses.implode()))
        .then(pl.lit(PackagingClass.NON_PACKAGED.value))
        .otherwise(pl.lit(PackagingClass.PACKAGED.value)),
    )


def class_counts(df: pl.DataFrame) -> Counter:
    counts = Counter()
    if df.height == 0:
        return counts
    for svc, pk, n in df.group_by("service", "packaging").len().iter_rows():
        counts[(ServiceClass(svc), PackagingClass(pk))] = n
    return counts


def format_lines(df: pl.DataFrame) -> pl.Series:
    """Canonical log lines for every row of a record frame."""
    off = pl.col("utc_offset_min")
    return df.select(pl.concat_str([
        (pl.col("latency_ms") // 1000).cast(pl.String), pl.lit("."),
        (pl.col("latency_ms") % 1000).cast(pl.String).str.zfill(3), pl.lit(", "),
        pl.col("client_ip"), pl.lit(", "),
        pl.col("status"), pl.lit(", ["),
        pl.col("ts_local").dt.strftime("%d/%b/%Y:%H:%M:%S"), pl.lit(" "),
        pl.when(off < 0).then(pl.lit("-")).otherwise(pl.lit("+")),
        (off.abs() // 60).cast(pl.String).str.zfill(2),
        (off.abs() % 60).cast(pl.String).str.zfill(2), pl.lit("], "),
        pl.col("content_path"), pl.lit(", "),
        pl.col("size_bytes").cast(pl.String),
    ]).alias("line")).get_column("line")


def iter_records(df: pl.DataFrame):
    """Yield :class:`LogRecord` objects for each row (for row-wise consumers)."""
    tzs: dict[int, timezone] = {}
    statuses = {s.value: s for s in HitStatus}
    for lat, ip, st, ts, off, path, size in df.select(
            "latency_ms", "client_ip", "status", "ts_local", "utc_offset_min",
            "content_path", "size_bytes").iter_rows():
        tz = tzs.get(off)
        if tz is None:
            tz = tzs[off] = timezone(timedelta(minutes=off))
        yield LogRecord(lat / 1000, ip, statuses[st], ts.replace(tzinfo=tz), path, size)


def to_records(df: pl.DataFrame) -> list[LogRecord]:
    return list(iter_records(df))


def records_to_frame(records) -> pl.DataFrame:
    records = list(records)
    return _records_to_frame(list(range(len(records))), records)


def iter_classified(df: pl.DataFrame):
    """Yield :class:`ClassifiedRecord` objects from a classified frame."""
    services = {s.value: s for s in ServiceClass}
    packagings = {p.value: p for p in PackagingClass}
    for rec, svc, pk in zip(iter_records(df), df.get_column("service").to_list(),
                            df.get_column("packaging").to_list()):
        yield ClassifiedRecord(*rec, services[svc], packagings[pk])


__all__ = ["scan_text", "scan_lines", "split_lines", "classify_frame", "class_counts",
           "iter_classified", "format_lines", "iter_records", "to_records", "records_to_frame",
           "miss_identities", "service_expr", "SCHEMA"]
