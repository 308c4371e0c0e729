"""Parsing, validation and canonical serialization of CDN access-log lines.

A line carries six fields separated by ``", "``::

    0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00 +0700], /a/b.ts, 437664

The timestamp is a bracketed span and may itself contain ``", "`` before
the UTC offset; the tokenizer never splits inside brackets.
"""
from __future__ import annotations

import enum
import ipaddress
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import lru_cache
from typing import Iterable, Iterator, NamedTuple

SEPARATOR = ", "

# Precedence order: when a line has several problems, the first reason wins.
REASONS = (
    "field_count",
    "bad_latency",
    "bad_ip",
    "bad_status",
    "bad_timestamp",
    "bad_size",
    "empty_path",
)

MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_MONTH_NUM = {name: i + 1 for i, name in enumerate(MONTHS)}

# Bounds keep sizes inside int64 and latencies exact at 3 decimals in a double.
_LATENCY_RE = re.compile(r"[0-9]{1,12}(?:\.[0-9]{1,3})?")
_SIZE_RE = re.compile(r"[0-9]{1,19}")
MAX_SIZE = (1 << 63) - 1
_TS_RE = re.compile(
    r"\[([0-9]{2})/([A-Z][a-z]{2})/([0-9]{4}):([0-9]{2}):([0-9]{2}):([0-9]{2})"
    r"(?:, | )([+-])([0-9]{2})([0-9]{2})\]"
)


class HitStatus(enum.Enum):
    MISS = "MISS"
    HIT = "HIT"
    HIT1 = "HIT1"
    LOCAL = "-"

    @property
    def wire(self) -> str:
        return self.value


_STATUS_BY_WIRE = {s.value: s for s in HitStatus}


class TokenizeError(ValueError):
    """Raised when a line opens a ``[`` span that is never closed."""


class ParseError(ValueError):
    def __init__(self, reason: str, line: str = ""):
        if reason not in REASONS:
            raise ValueError(f"unknown rejection reason {reason!r}")
        super().__init__(reason)
        self.reason = reason
        self.line = line


class LogRecord(NamedTuple):
    latency_seconds: float
    client_ip: str
    status: HitStatus
    timestamp: datetime
    content_path: str
    size_bytes: int

    # datetime equality ignores the UTC offset; records compare field-exact.
    def __eq__(self, other):
        if not isinstance(other, LogRecord):
            return NotImplemented
        return (tuple.__eq__(self, other)
                and self.timestamp.utcoffset() == other.timestamp.utcoffset())

    def __ne__(self, other):
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq

    def __hash__(self):
        return hash((tuple(self), self.timestamp.utcoffset()))


@dataclass
class RejectionStats:
    total_lines: int = 0
    accepted: int = 0
    rejected: int = 0
    rejected_by_reason: Counter = field(default_factory=Counter)

    def add_rejection(self, reason: str) -> None:
        self.total_lines += 1
        self.rejected += 1
        self.rejected_by_reason[reason] += 1

    def add_accepted(self, n: int = 1) -> None:
        self.total_lines += n
        self.accepted += n

    def merge(self, other: RejectionStats) -> RejectionStats:
        return RejectionStats(
            self.total_lines + other.total_lines,
            self.accepted + other.accepted,
            self.rejected + other.rejected,
            self.rejected_by_reason + other.rejected_by_reason,
        )

    __add__ = merge

    def to_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "rejected_by_reason": {r: self.rejected_by_reason.get(r, 0) for r in REASONS},
        }

    def __eq__(self, other):
        if not isinstance(other, RejectionStats):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def tokenize_line(text: str) -> list[str]:
    """Split ``text`` on ``", "`` except inside ``[...]`` spans."""
    if "[" not in text:
        return text.split(SEPARATOR)
    # The separator holds no bracket characters, so it never straddles a
    # bracket boundary and each bracket-free segment can be split directly.
    tokens = [""]
    pos = 0
    while True:
        open_ = text.find("[", pos)
        parts = (text[pos:] if open_ < 0 else text[pos:open_]).split(SEPARATOR)
        tokens[-1] += parts[0]
        tokens += parts[1:]
        if open_ < 0:
            return tokens
        close = text.find("]", open_ + 1)
        if close < 0:
            raise TokenizeError(f"unterminated '[' at column {open_}")
        tokens[-1] += text[open_:close + 1]
        pos = close + 1


@lru_cache(maxsize=None)
def _tz(sign: str, hh: int, mm: int) -> timezone | None:
    if hh > 23 or mm > 59:
        return None
    delta = timedelta(hours=hh, minutes=mm)
    return timezone(-delta if sign == "-" else delta)


@lru_cache(maxsize=1 << 17)
def parse_timestamp(token: str) -> datetime | None:
    """Parse ``[DD/Mon/YYYY:HH:MM:SS +ZZZZ]`` (comma before the offset optional)."""
    m = _TS_RE.fullmatch(token)
    if m is None:
        return None
    day, mon, year, hh, mi, ss, sign, oh, om = m.groups()
    month = _MONTH_NUM.get(mon)
    tz = _tz(sign, int(oh), int(om))
    if month is None or tz is None:
        return None
    try:
        return datetime(int(year), month, int(day), int(hh), int(mi), int(ss), tzinfo=tz)
    except ValueError:
        return None


@lru_cache(maxsize=1 << 17)
def canonical_ip(token: str) -> str | None:
    try:
        return str(ipaddress.ip_address(token))
    except ValueError:
        return None


@lru_cache(maxsize=1 << 14)
def _parse_latency(token: str) -> float | None:
    if _LATENCY_RE.fullmatch(token) is None:
        return None
    whole, _, frac = token.partition(".")
    return (int(whole) * 1000 + int(frac.ljust(3, "0") or 0)) / 1000


def parse_line(text: str) -> LogRecord:
    """Parse one log line, raising :class:`ParseError` with a single reason."""
    try:
        tokens = tokenize_line(text.rstrip())
    except TokenizeError:
        raise ParseError("field_count", text) from None
    if len(tokens) != 6:
        raise ParseError("field_count", text)
    lat_t, ip_t, status_t, ts_t, path_t, size_t = (t.strip() for t in tokens)

    latency = _parse_latency(lat_t)
    if latency is None:
        raise ParseError("bad_latency", text)
    ip = canonical_ip(ip_t)
    if ip is None:
        raise ParseError("bad_ip", text)
    status = _STATUS_BY_WIRE.get(status_t)
    if status is None:
        raise ParseError("bad_status", text)
    ts = parse_timestamp(ts_t)
    if ts is None:
        raise ParseError("bad_timestamp", text)
    if _SIZE_RE.fullmatch(size_t) is None or int(size_t) > MAX_SIZE:
        raise ParseError("bad_size", text)
    if not path_t:
        raise ParseError("empty_path", text)
    return LogRecord(latency, ip, status, ts, path_t, int(size_t))


def format_timestamp(ts: datetime) -> str:
    off = ts.utcoffset()
    if off is None:
        raise ValueError("timestamp must carry a UTC offset")
    minutes = int(off.total_seconds()) // 60
    sign = "-" if minutes < 0 else "+"
    hh, mm = divmod(abs(minutes), 60)
    return (f"[{ts.day:02d}/{MONTHS[ts.month - 1]}/{ts.year:04d}:"
            f"{ts.hour:02d}:{ts.minute:02d}:{ts.second:02d} {sign}{hh:02d}{mm:02d}]")


def format_latency(seconds: float) -> str:
    return f"{seconds:.3f}"


def format_record(r: LogRecord) -> str:
    """Canonical line for ``r``: 3-decimal latency, no comma before the offset."""
    return SEPARATOR.join((
        format_latency(r.latency_seconds),
        r.client_ip,
        r.status.value,
        format_timestamp(r.timestamp),
        r.content_path,
        str(r.size_bytes),
    ))


def iter_clean(lines: Iterable[str], stats: RejectionStats) -> Iterator[LogRecord]:
    """Lazily parse ``lines``, updating ``stats`` in place."""
    for line in lines:
        try:
            rec = parse_line(line)
        except ParseError as exc:
            stats.add_rejection(exc.reason)
            continue
        stats.add_accepted()
        yield rec


def clean_stream(lines: Iterable[str]) -> tuple[list[LogRecord], RejectionStats]:
    stats = RejectionStats()
    records = list(iter_clean(lines, stats))
    return records, stats


def read_lines(path) -> Iterator[str]:
    """Yield lines of a (possibly gzip-compressed) UTF-8 log file, without EOLs."""
    from ._io import open_text

    with open_text(path) as fh:
        for line in fh:
            yield line.rstrip("\r\n")
