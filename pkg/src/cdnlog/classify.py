"""Service and packaging classification of parsed log records.

Service class comes from the content path alone.  Packaging class needs two
passes over a window of records: content that never shows a ``MISS`` is
pre-stored (packaged) content.
"""
from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._hashing import fnv1a64
from ._validation import check_records
from .logline import HitStatus, LogRecord

DEFAULT_LIVE_PATTERNS = ("live", "tv")
DEFAULT_STREAMING_EXTENSIONS = (".ts", ".m3u8", ".mpd", ".dash")

_SESSION_TOKEN_RE = re.compile(r"/[0-9a-fA-F]{32,}(?=/)")


class ServiceClass(enum.Enum):
    LIVE = "LiveStreaming"
    VOD = "VideoOnDemand"
    WEBSITE = "Website"


class PackagingClass(enum.Enum):
    PACKAGED = "Packaged"
    NON_PACKAGED = "NonPackaged"


@dataclass(frozen=True)
class PatternConfig:
    live_patterns: tuple[str, ...] = DEFAULT_LIVE_PATTERNS
    streaming_extensions: tuple[str, ...] = DEFAULT_STREAMING_EXTENSIONS
    # Strip a leading 32+-hex session segment from content identities.
    normalize_identity: bool = False

    def __post_init__(self):
        live = tuple(p.lower() for p in self.live_patterns)
        exts = tuple(e.lower() if e.startswith(".") else "." + e.lower()
                     for e in self.streaming_extensions)
        if not live or any(not p for p in live):
            raise ValueError("live_patterns must be a non-empty list of non-empty strings")
        if not exts or any(e == "." for e in exts):
            raise ValueError("streaming_extensions must be a non-empty list")
        object.__setattr__(self, "live_patterns", live)
        object.__setattr__(self, "streaming_extensions", exts)

    @classmethod
    def from_dict(cls, d: dict) -> PatternConfig:
        unknown = set(d) - {"live_patterns", "channel_names", "streaming_extensions",
                            "normalize_identity"}
        if unknown:
            raise ValueError(f"unknown pattern config keys: {sorted(unknown)}")
        live = tuple(d.get("live_patterns", DEFAULT_LIVE_PATTERNS)) + tuple(d.get("channel_names", ()))
        return cls(live, tuple(d.get("streaming_extensions", DEFAULT_STREAMING_EXTENSIONS)),
                   bool(d.get("normalize_identity", False)))


DEFAULT_PATTERNS = PatternConfig()


class ClassifiedRecord(NamedTuple):
    latency_seconds: float
    client_ip: str
    status: HitStatus
    timestamp: object
    content_path: str
    size_bytes: int
    service: ServiceClass
    packaging: PackagingClass


def extension(content_path: str) -> str:
    """Lowercased suffix after the last ``.`` of the last path segment, dot included."""
    seg = content_path.rpartition("/")[2]
    dot = seg.rfind(".")
    return seg[dot:].lower() if dot >= 0 else ""


def content_identity(content_path: str, cfg: PatternConfig = DEFAULT_PATTERNS) -> str:
    if cfg.normalize_identity:
        m = _SESSION_TOKEN_RE.match(content_path)
        if m:
            return content_path[m.end():]
    return content_path


def classify_service(content_path: str, cfg: PatternConfig = DEFAULT_PATTERNS) -> ServiceClass:
    lower = content_path.lower()
    for p in cfg.live_patterns:
        if p in lower:
            return ServiceClass.LIVE
    if extension(content_path) in cfg.streaming_extensions:
        return ServiceClass.VOD
    return ServiceClass.WEBSITE


class ContentMissSet:
    """Content identities seen with a ``MISS`` at least once.

    Above ``hash_threshold`` entries the set stores 64-bit FNV-1a digests
    instead of strings.  With n stored identities the chance that some
    unseen identity collides with a stored one is about n / 2**64 per query.
    ``hash_threshold=None`` keeps exact strings forever.
    """

    def __init__(self, hash_threshold: int | None = 5_000_000):
        self.hash_threshold = hash_threshold
        self._items: set = set()
        self._hashed = False
        self._frozen = False

    @property
    def hashed(self) -> bool:
        return self._hashed

    def add(self, identity: str) -> None:
        if self._frozen:
            raise RuntimeError("miss set is frozen")
        if self._hashed:
            self._items.add(fnv1a64(identity))
            return
        self._items.add(identity)
        if self.hash_threshold is not None and len(self._items) > self.hash_threshold:
            self._items = {fnv1a64(s) for s in self._items}
            self._hashed = True

    def freeze(self) -> ContentMissSet:
        self._frozen = True
        return self

    def union(self, other: ContentMissSet) -> ContentMissSet:
        out = ContentMissSet(self.hash_threshold)
        for s in (self, other):
            for item in s._items:
                if isinstance(item, int):
                    if not out._hashed:
                        out._items = {fnv1a64(x) for x in out._items}
                        out._hashed = True
                    out._items.add(item)
                else:
                    out.add(item)
        return out

    def __contains__(self, identity: str) -> bool:
        if self._hashed:
            return fnv1a64(identity) in self._items
        return identity in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        if self._hashed:
            raise TypeError("a hashed miss set cannot enumerate identities")
        return iter(self._items)


def build_miss_set(records: Iterable[LogRecord], cfg: PatternConfig = DEFAULT_PATTERNS,
                   hash_threshold: int | None = 5_000_000) -> ContentMissSet:
    ms = ContentMissSet(hash_threshold)
    miss = HitStatus.MISS
    for r in records:
        if r.status is miss:
            ms.add(content_identity(r.content_path, cfg))
    return ms.freeze()


def classify_packaging(content_path: str, miss_set: ContentMissSet,
                       cfg: PatternConfig = DEFAULT_PATTERNS) -> PackagingClass:
    if content_identity(content_path, cfg) in miss_set:
        return PackagingClass.NON_PACKAGED
    return PackagingClass.PACKAGED


def classify_stream(records: Iterable[LogRecord], cfg: PatternConfig = DEFAULT_PATTERNS,
                    hash_threshold: int | None = 5_000_000):
    """Label every record; returns ``(classified, class_counts)``."""
    records = check_records(records)
    clf = RecordClassifier(cfg.live_patterns, cfg.streaming_extensions,
                           cfg.normalize_identity, hash_threshold).fit(records)
    out = clf.transform(records)
    return out, count_classes(out)


def count_classes(classified: Iterable[ClassifiedRecord]) -> Counter:
    return Counter((r.service, r.packaging) for r in classified)


class RecordClassifier(TransformerMixin, BaseEstimator):
    """Two-pass classifier: ``fit`` builds the miss set, ``transform`` labels.

    Fit and transform on the same window; a record whose content was never
    seen during ``fit`` is labelled packaged.
    """

    def __init__(self, live_patterns=DEFAULT_LIVE_PATTERNS,
                 streaming_extensions=DEFAULT_STREAMING_EXTENSIONS,
                 normalize_identity=False, hash_threshold=5_000_000):
        self.live_patterns = live_patterns
        self.streaming_extensions = streaming_extensions
        self.normalize_identity = normalize_identity
        self.hash_threshold = hash_threshold

    def _config(self) -> PatternConfig:
        return PatternConfig(tuple(self.live_patterns), tuple(self.streaming_extensions),
                             bool(self.normalize_identity))

    def fit(self, X, y=None):
        records = check_records(X, ("status", "content_path"))
        self.patterns_ = self._config()
        self.miss_set_ = build_miss_set(records, self.patterns_, self.hash_threshold)
        self.n_records_seen_ = len(records)
        return self

    def transform(self, X) -> list[ClassifiedRecord]:
        check_is_fitted(self, "miss_set_")
        records = check_records(X, ("status", "content_path"))
        cfg, ms = self.patterns_, self.miss_set_
        service_cache: dict[str, ServiceClass] = {}
        out = []
        for r in records:
            path = r.content_path
            svc = service_cache.get(path)
            if svc is None:
                svc = service_cache[path] = classify_service(path, cfg)
            pk = classify_packaging(path, ms, cfg)
            out.append(ClassifiedRecord(*r[:6], svc, pk))
        return out

    def predict(self, X) -> list[tuple[ServiceClass, PackagingClass]]:
        return [(r.service, r.packaging) for r in self.transform(X)]
