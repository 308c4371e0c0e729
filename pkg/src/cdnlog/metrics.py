"""Aggregate statistics over parsed (and optionally classified/enriched) records.

Every aggregation has a shard/merge form: compute partials on disjoint shards
and combine them with :func:`merge`; the result equals a single pass.

Quantiles use linear interpolation between order statistics (numpy's
``"linear"`` method, Hyndman-Fan type 7).  Whiskers follow Tukey: the most
extreme observations still within 1.5 IQR of the quartiles, clamped so they
never fall inside the box.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import singledispatch
from typing import Callable, Iterable

import numpy as np

from .classify import ServiceClass, extension
from .logline import HitStatus

EXACT_QUANTILE_LIMIT = 10_000_000
RESERVOIR_SIZE = 1_000_000
RESERVOIR_SEED = 0x5EED

MIME_CLASSES = ("m3u8", "mpd", "ts", "dash", "mp3", "mp4", "image", "other")
IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".gif", ".webp", ".svg", ".ico", ".bmp"})
_MIME_BY_EXT = {".m3u8": "m3u8", ".mpd": "mpd", ".ts": "ts", ".dash": "dash",
                ".mp3": "mp3", ".mp4": "mp4", **{e: "image" for e in IMAGE_EXTENSIONS}}


# -- hit rates ---------------------------------------------------------------

@dataclass(frozen=True)
class HitCounts:
    n_miss: int = 0
    n_hit: int = 0
    n_hit1: int = 0
    n_local: int = 0

    def __post_init__(self):
        if min(self.n_miss, self.n_hit, self.n_hit1, self.n_local) < 0:
            raise ValueError("hit counts must be non-negative")

    def __add__(self, other: HitCounts) -> HitCounts:
        return HitCounts(self.n_miss + other.n_miss, self.n_hit + other.n_hit,
                         self.n_hit1 + other.n_hit1, self.n_local + other.n_local)

    @property
    def cdn_requests(self) -> int:
        return self.n_miss + self.n_hit + self.n_hit1

    @classmethod
    def from_statuses(cls, statuses: Iterable[HitStatus]) -> HitCounts:
        c = Counter(statuses)
        return cls(c[HitStatus.MISS], c[HitStatus.HIT], c[HitStatus.HIT1], c[HitStatus.LOCAL])


@dataclass(frozen=True)
class HitRateReport:
    counts: HitCounts
    edge_rate: float | None
    regional_rate: float | None
    system_rate: float | None

    @classmethod
    def from_counts(cls, c: HitCounts, include_local: bool = False) -> HitRateReport:
        """Rates from counts; ``None`` where the denominator is zero.

        LOCAL requests never reach the CDN and are excluded from all
        denominators unless ``include_local`` (then they count as system hits).
        """
        total = c.cdn_requests
        escalated = c.n_hit1 + c.n_miss
        edge = c.n_hit / total if total else None
        regional = c.n_hit1 / escalated if escalated else None
        if include_local:
            denom = total + c.n_local
            system = (c.n_hit + c.n_hit1 + c.n_local) / denom if denom else None
        else:
            system = (c.n_hit + c.n_hit1) / total if total else None
        return cls(c, edge, regional, system)

    def to_dict(self) -> dict:
        return {**asdict(self.counts), "edge_rate": self.edge_rate,
                "regional_rate": self.regional_rate, "system_rate": self.system_rate}


def hour_start(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def _hour_key(r):
    # Offset is part of the key: aware datetimes in different zones may compare equal.
    ts = r.timestamp
    return (hour_start(ts).replace(tzinfo=None), ts.utcoffset())


GROUP_KEYS: dict[str, Callable] = {
    "all": lambda r: "all",
    "service": lambda r: r.service,
    "isp": lambda r: r.isp,
    "province": lambda r: r.province,
    "country": lambda r: r.country,
    "hour": _hour_key,
}


def resolve_key(group_key) -> Callable:
    if callable(group_key):
        return group_key
    try:
        return GROUP_KEYS[group_key]
    except KeyError:
        raise ValueError(f"unknown group key {group_key!r}; "
                         f"expected one of {sorted(GROUP_KEYS)} or a callable") from None


def _grouped(records, group_key):
    key = resolve_key(group_key)
    skip_none = group_key in ("isp", "province", "country")
    for r in records:
        k = key(r)
        if k is None and skip_none:
            continue
        yield k, r


def hit_counts(records, group_key="all") -> dict:
    raw: dict = {}
    for k, r in _grouped(records, group_key):
        c = raw.get(k)
        if c is None:
            c = raw[k] = Counter()
        c[r.status] += 1
    return {k: HitCounts(c[HitStatus.MISS], c[HitStatus.HIT], c[HitStatus.HIT1],
                         c[HitStatus.LOCAL]) for k, c in raw.items()}


def hit_rates(records, group_key="all", include_local: bool = False) -> dict:
    """Map group -> :class:`HitRateReport`."""
    return {k: HitRateReport.from_counts(c, include_local)
            for k, c in hit_counts(records, group_key).items()}


# -- five-number summaries ---------------------------------------------------

@dataclass(frozen=True)
class BoxStats:
    lower_whisker: float
    q1: float
    median: float
    q3: float
    upper_whisker: float
    mean: float
    count: int
    approximate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


LatencySummary = BoxStats


def quantile_sorted(a, p: float) -> float:
    """Type-7 quantile of ascending ``a``: x[lo] + frac * (x[lo+1] - x[lo]), h = (n-1)p."""
    h = (len(a) - 1) * p
    lo = math.floor(h)
    frac = h - lo
    if frac == 0 or lo + 1 >= len(a):
        return float(a[lo])
    return float(a[lo] + frac * (a[lo + 1] - a[lo]))


def box_stats(values, approximate: bool = False, count: int | None = None,
              mean: float | None = None) -> BoxStats:
    """Five-number summary of ``values`` (exact: sorts everything)."""
    a = np.sort(np.asarray(values, dtype=np.float64))
    if a.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q1, med, q3 = (quantile_sorted(a, p) for p in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    # Interpolated quartiles can lie beyond every in-fence point; clamp so
    # the whiskers never cross the box.
    lo = min(a[np.searchsorted(a, q1 - 1.5 * iqr, side="left")], q1)
    hi = max(a[np.searchsorted(a, q3 + 1.5 * iqr, side="right") - 1], q3)
    if mean is None:
        mean = math.fsum(a.tolist()) / a.size
    return BoxStats(float(lo), float(q1), float(med), float(q3), float(hi), float(mean),
                    int(count if count is not None else a.size), approximate)


class QuantileAccumulator:
    """Collects values for a summary; exact up to ``exact_limit`` values.

    Past the limit it keeps a uniform reservoir of ``reservoir_size`` values
    drawn with a fixed seed, so results stay deterministic but approximate.
    Count and mean always cover every value.
    """

    def __init__(self, exact_limit: int = EXACT_QUANTILE_LIMIT,
                 reservoir_size: int = RESERVOIR_SIZE, seed: int = RESERVOIR_SEED):
        if reservoir_size > exact_limit:
            raise ValueError("reservoir_size must not exceed exact_limit")
        self.exact_limit = exact_limit
        self.reservoir_size = reservoir_size
        self._rng = np.random.default_rng(seed)
        self._values: list[float] = []
        self._reservoir: np.ndarray | None = None
        self.count = 0
        self._sum = 0.0
        self._partials: list[float] = []

    @property
    def approximate(self) -> bool:
        return self._reservoir is not None

    def add(self, v: float) -> None:
        self.count += 1
        self._partials.append(v)
        if len(self._partials) >= 4096:
            self._sum = math.fsum([self._sum, *self._partials])
            self._partials.clear()
        if self._reservoir is None:
            self._values.append(v)
            if len(self._values) > self.exact_limit:
                arr = np.asarray(self._values, dtype=np.float64)
                idx = self._rng.choice(arr.size, self.reservoir_size, replace=False)
                self._reservoir = arr[np.sort(idx)]
                self._values = []
            return
        j = int(self._rng.integers(0, self.count))
        if j < self.reservoir_size:
            self._reservoir[j] = v

    def extend(self, values: Iterable[float]) -> None:
        for v in values:
            self.add(v)

    @property
    def mean(self) -> float:
        return math.fsum([self._sum, *self._partials]) / self.count

    def summary(self) -> BoxStats:
        if self.count == 0:
            raise ValueError("no values collected")
        sample = self._values if self._reservoir is None else self._reservoir
        if self._reservoir is None:
            return box_stats(sample)
        return box_stats(sample, True, self.count, self.mean)


def _summaries(pairs, exact_limit: int) -> dict:
    accs: dict = {}
    for k, v in pairs:
        acc = accs.get(k)
        if acc is None:
            acc = accs[k] = QuantileAccumulator(exact_limit, min(RESERVOIR_SIZE, exact_limit))
        acc.add(v)
    return {k: acc.summary() for k, acc in accs.items()}


def latency_summary(records, group_key="all",
                    exact_limit: int = EXACT_QUANTILE_LIMIT) -> dict:
    """Map group -> :class:`BoxStats` of latency in seconds; empty groups absent."""
    return _summaries(((k, r.latency_seconds) for k, r in _grouped(records, group_key)),
                      exact_limit)


def size_distribution(records, exact_limit: int = EXACT_QUANTILE_LIMIT) -> dict:
    """Map :class:`ServiceClass` -> :class:`BoxStats` of size in decimal megabytes."""
    return _summaries(((r.service, r.size_bytes / 1e6) for r in records), exact_limit)


# -- hourly time series ------------------------------------------------------

@dataclass(frozen=True)
class TimeSeriesBucket:
    bucket_start: datetime
    request_count: int
    total_bytes: int
    latency_sum: float

    @property
    def latency_mean(self) -> float:
        return self.latency_sum / self.request_count if self.request_count else float("nan")

    def __add__(self, other: TimeSeriesBucket) -> TimeSeriesBucket:
        if (self.bucket_start != other.bucket_start
                or self.bucket_start.utcoffset() != other.bucket_start.utcoffset()):
            raise ValueError("cannot add buckets for different hours")
        return TimeSeriesBucket(self.bucket_start, self.request_count + other.request_count,
                                self.total_bytes + other.total_bytes,
                                self.latency_sum + other.latency_sum)


@dataclass
class TimeSeriesTally:
    """Per-hour partial sums keyed by (local hour, UTC offset)."""
    counts: Counter = field(default_factory=Counter)
    bytes: Counter = field(default_factory=Counter)
    # Latency in integer milliseconds so shard sums are exact and order-free.
    latency_ms: Counter = field(default_factory=Counter)
    _tz: dict = field(default_factory=dict, repr=False)

    def add(self, r) -> None:
        ts = r.timestamp
        off = ts.utcoffset()
        k = (hour_start(ts).replace(tzinfo=None), off)
        self._tz.setdefault(off, ts.tzinfo)
        self.counts[k] += 1
        self.bytes[k] += r.size_bytes
        self.latency_ms[k] += round(r.latency_seconds * 1000)

    def __add__(self, other: TimeSeriesTally) -> TimeSeriesTally:
        return TimeSeriesTally(self.counts + other.counts, self.bytes + other.bytes,
                               self.latency_ms + other.latency_ms, {**self._tz, **other._tz})

    def buckets(self) -> list[TimeSeriesBucket]:
        out = []
        for (local, off) in self.counts:
            tz = self._tz.get(off) or timezone(off)
            out.append(TimeSeriesBucket(local.replace(tzinfo=tz), self.counts[(local, off)],
                                        self.bytes[(local, off)],
                                        self.latency_ms[(local, off)] / 1000))
        out.sort(key=lambda b: (b.bucket_start, b.bucket_start.utcoffset()))
        return out

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesTally):
            return NotImplemented
        return (+self.counts == +other.counts and +self.bytes == +other.bytes
                and +self.latency_ms == +other.latency_ms)


def time_series_tally(records) -> TimeSeriesTally:
    t = TimeSeriesTally()
    for r in records:
        t.add(r)
    return t


def time_series(records) -> list[TimeSeriesBucket]:
    """Hourly buckets in each record's own UTC offset, ordered by instant."""
    return time_series_tally(records).buckets()


# -- MIME breakdown ----------------------------------------------------------

def mime_class(content_path: str) -> str:
    return _MIME_BY_EXT.get(extension(content_path), "other")


@dataclass
class MimeTally:
    requests: Counter = field(default_factory=Counter)
    bytes: Counter = field(default_factory=Counter)

    def add(self, content_path: str, size_bytes: int) -> None:
        m = mime_class(content_path)
        self.requests[m] += 1
        self.bytes[m] += size_bytes

    def __add__(self, other: MimeTally) -> MimeTally:
        return MimeTally(self.requests + other.requests, self.bytes + other.bytes)

    def __eq__(self, other):
        if not isinstance(other, MimeTally):
            return NotImplemented
        return +self.requests == +other.requests and +self.bytes == +other.bytes

    def breakdown(self) -> MimeBreakdown:
        return MimeBreakdown.from_tally(self)


@dataclass(frozen=True)
class MimeBreakdown:
    """Request and byte fractions per MIME class (``None`` when totals are 0)."""
    request_fraction: dict
    byte_fraction: dict
    requests: dict
    bytes: dict

    @classmethod
    def from_tally(cls, t: MimeTally) -> MimeBreakdown:
        nreq = sum(t.requests.values())
        nbytes = sum(t.bytes.values())
        return cls(
            {m: (t.requests[m] / nreq if nreq else None) for m in MIME_CLASSES},
            {m: (t.bytes[m] / nbytes if nbytes else None) for m in MIME_CLASSES},
            {m: t.requests[m] for m in MIME_CLASSES},
            {m: t.bytes[m] for m in MIME_CLASSES},
        )


def mime_tally(records) -> MimeTally:
    t = MimeTally()
    for r in records:
        t.add(r.content_path, r.size_bytes)
    return t


def mime_breakdown(records) -> MimeBreakdown:
    return mime_tally(records).breakdown()


# -- merging -----------------------------------------------------------------

@singledispatch
def merge(a, b):
    """Combine two partial aggregates computed on disjoint shards."""
    raise TypeError(f"no merge defined for {type(a).__name__}")


@merge.register
def _(a: HitCounts, b: HitCounts) -> HitCounts:
    return a + b


@merge.register
def _(a: TimeSeriesTally, b: TimeSeriesTally) -> TimeSeriesTally:
    return a + b


@merge.register
def _(a: MimeTally, b: MimeTally) -> MimeTally:
    return a + b


@merge.register
def _(a: dict, b: dict) -> dict:
    # Group maps (e.g. hit_counts output): merge value-wise.
    out = dict(a)
    for k, v in b.items():
        out[k] = merge(out[k], v) if k in out else v
    return out


def request_counts(records, group_key) -> Counter:
    """Request count per group (ISP, province, country ...)."""
    return Counter(k for k, _ in _grouped(records, group_key))


__all__ = [
    "HitCounts", "HitRateReport", "hit_counts", "hit_rates", "BoxStats", "LatencySummary",
    "box_stats", "QuantileAccumulator", "latency_summary", "size_distribution",
    "TimeSeriesBucket", "TimeSeriesTally", "time_series", "time_series_tally",
    "MimeTally", "MimeBreakdown", "mime_class", "mime_tally", "mime_breakdown",
    "merge", "request_counts", "MIME_CLASSES", "ServiceClass",
]
