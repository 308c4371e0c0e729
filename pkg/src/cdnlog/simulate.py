"""Trace-driven replay through a two-layer edge/regional LRU cache hierarchy.

Requests enter at an edge chosen by client-IP hash.  An edge miss escalates
to the regional chosen by content hash; a regional miss goes to the origin.
On the way back the content is stored at every cache it passed through.
Packaged content is pre-stored at its regional and never misses there.
"""
from __future__ import annotations

import copy
import csv
import enum
import math
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, NamedTuple

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._hashing import fnv1a64
from ._io import atomic_write
from ._validation import check_scalar
from .classify import (DEFAULT_PATTERNS, PackagingClass, PatternConfig, ServiceClass,
                       build_miss_set, classify_packaging, classify_service, content_identity)
from .logline import HitStatus, LogRecord
from .metrics import HitCounts

GiB = 1 << 30

__all__ = ["fnv1a64", "LatencyModel", "TopologyConfig", "CacheNode", "cache_access",
           "cache_insert", "route_edge", "route_regional", "RequestEvent", "SimOutcome",
           "SimResult", "ReplayError", "replay", "compare", "AgreementReport",
           "CacheHierarchy", "read_events", "write_events", "events_from_records",
           "outcomes_to_records", "EVENT_COLUMNS"]


class Level(enum.IntEnum):
    LOCAL = 0
    EDGE = 1
    REGIONAL = 2
    ORIGIN = 3


@dataclass(frozen=True)
class LatencyModel:
    """Per-level base delay (seconds) plus size / bandwidth (bytes per second)."""
    t_local: float = 0.0
    t_edge: float = 0.005
    t_regional: float = 0.02
    t_origin: float = 0.08
    bw_local: float = math.inf
    bw_edge: float = 1.25e9
    bw_regional: float = 6.25e8
    bw_origin: float = 1.25e8

    def __post_init__(self):
        bases = (self.t_local, self.t_edge, self.t_regional, self.t_origin)
        if any(b < 0 for b in bases) or list(bases) != sorted(bases):
            raise ValueError("latency bases must be non-negative and non-decreasing "
                             "local <= edge <= regional <= origin")
        if any(bw <= 0 for bw in (self.bw_local, self.bw_edge, self.bw_regional, self.bw_origin)):
            raise ValueError("bandwidths must be positive")

    def latency(self, level: Level, size_bytes: int) -> float:
        base, bw = ((self.t_local, self.bw_local), (self.t_edge, self.bw_edge),
                    (self.t_regional, self.bw_regional), (self.t_origin, self.bw_origin))[level]
        return base + size_bytes / bw


def _default_ttls():
    return {ServiceClass.LIVE: 0.0, ServiceClass.VOD: 0.0, ServiceClass.WEBSITE: 0.0}


@dataclass(frozen=True)
class TopologyConfig:
    n_edges: int = 3
    n_regionals: int = 2
    edge_capacity_bytes: int = 32 * GiB
    regional_capacity_bytes: int = 32 * GiB
    # Seconds per service class; 0 disables expiry.
    ttl_by_service: Mapping = field(default_factory=_default_ttls)
    latency: LatencyModel = field(default_factory=LatencyModel)
    packaged_always_hit_at_edge: bool = False
    # "insert": age since insertion; "access": idle time since last access.
    ttl_mode: str = "insert"
    # Per-client browser cache in bytes; 0 disables LOCAL outcomes.
    client_cache_bytes: int = 0

    def __post_init__(self):
        check_scalar(self.n_edges, "n_edges", int, min_val=1)
        check_scalar(self.n_regionals, "n_regionals", int, min_val=1)
        check_scalar(self.edge_capacity_bytes, "edge_capacity_bytes", int, min_val=1)
        check_scalar(self.regional_capacity_bytes, "regional_capacity_bytes", int, min_val=1)
        check_scalar(self.client_cache_bytes, "client_cache_bytes", int, min_val=0)
        if self.ttl_mode not in ("insert", "access"):
            raise ValueError(f"ttl_mode must be 'insert' or 'access', got {self.ttl_mode!r}")
        ttls = _default_ttls()
        for k, v in dict(self.ttl_by_service).items():
            svc = k if isinstance(k, ServiceClass) else ServiceClass(k)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"TTL for {svc.value} must be a finite number >= 0, got {v!r}")
            ttls[svc] = float(v)
        object.__setattr__(self, "ttl_by_service", ttls)

    @classmethod
    def from_dict(cls, d: Mapping) -> TopologyConfig:
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown topology keys: {sorted(unknown)}")
        if "latency" in d:
            d["latency"] = LatencyModel(**d["latency"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ttl_by_service"] = {k.value: v for k, v in self.ttl_by_service.items()}
        return d


class CacheNode:
    """Byte-capacity LRU cache with lazy TTL expiry.

    Objects larger than the capacity bypass the node: they always miss and
    are never stored.
    """

    def __init__(self, capacity_bytes: int, ttl_mode: str = "insert", name: str = ""):
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be positive")
        self.capacity_bytes = capacity_bytes
        self.ttl_mode = ttl_mode
        self.name = name
        # identity -> [size, insert_time, last_access]; order = recency, LRU first
        self._entries: OrderedDict[str, list] = OrderedDict()
        self.used_bytes = 0
        self.hits = 0
        self.misses = 0
        self.hit_bytes = 0
        self.request_bytes = 0
        self.evictions = 0
        self.expirations = 0
        self.bypasses = 0

    def __contains__(self, identity) -> bool:
        return identity in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def resident(self) -> list[str]:
        """Resident identities, least recently used first."""
        return list(self._entries)

    def entry(self, identity):
        size, inserted, last = self._entries[identity]
        return {"size_bytes": size, "insert_time": inserted, "last_access_time": last}

    def access(self, identity: str, size: int, now: float, ttl: float = 0.0) -> bool:
        self.request_bytes += size
        if size > self.capacity_bytes:
            self.bypasses += 1
            self.misses += 1
            return False
        e = self._entries.get(identity)
        if e is not None:
            ref = e[1] if self.ttl_mode == "insert" else e[2]
            if ttl and now - ref > ttl:
                del self._entries[identity]
                self.used_bytes -= e[0]
                self.expirations += 1
            else:
                e[2] = now
                self._entries.move_to_end(identity)
                self.hits += 1
                self.hit_bytes += size
                return True
        self.misses += 1
        return False

    def insert(self, identity: str, size: int, now: float) -> list[str]:
        if size > self.capacity_bytes:
            return []
        old = self._entries.pop(identity, None)
        if old is not None:
            self.used_bytes -= old[0]
        self._entries[identity] = [size, now, now]
        self.used_bytes += size
        evicted = []
        while self.used_bytes > self.capacity_bytes:
            victim, (vsize, _, _) = self._entries.popitem(last=False)
            self.used_bytes -= vsize
            evicted.append(victim)
        self.evictions += len(evicted)
        return evicted

    def check_invariants(self) -> None:
        total = sum(e[0] for e in self._entries.values())
        if total != self.used_bytes:
            raise AssertionError(f"{self.name}: byte accounting drifted ({total} != {self.used_bytes})")
        if self.used_bytes > self.capacity_bytes:
            raise AssertionError(f"{self.name}: {self.used_bytes} bytes resident, "
                                 f"capacity {self.capacity_bytes}")

    def stats(self) -> dict:
        return {"name": self.name, "capacity_bytes": self.capacity_bytes,
                "used_bytes": self.used_bytes, "resident_objects": len(self._entries),
                "hits": self.hits, "misses": self.misses, "hit_bytes": self.hit_bytes,
                "request_bytes": self.request_bytes, "evictions": self.evictions,
                "expirations": self.expirations, "bypasses": self.bypasses}


def cache_access(node: CacheNode, identity: str, size: int, now: float, ttl: float = 0.0) -> bool:
    """True on a hit.  A miss does not insert; see :func:`cache_insert`."""
    return node.access(identity, size, now, ttl)


def cache_insert(node: CacheNode, identity: str, size: int, now: float) -> list[str]:
    """Store ``identity``; returns evicted identities in eviction order."""
    return node.insert(identity, size, now)


def route_edge(client_ip: str, cfg: TopologyConfig) -> int:
    return fnv1a64(client_ip) % cfg.n_edges


def route_regional(identity: str, cfg: TopologyConfig) -> int:
    return fnv1a64(identity) % cfg.n_regionals


class RequestEvent(NamedTuple):
    time: float  # seconds since the epoch
    client_ip: str
    content: str
    size_bytes: int
    service: ServiceClass
    packaged: bool


class SimOutcome(NamedTuple):
    status: HitStatus
    latency_seconds: float
    edge: int | None
    regional: int | None


class ReplayError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"event {index}: {message}")
        self.index = index


@dataclass
class SimResult:
    outcomes: list[SimOutcome]
    counts: HitCounts
    edges: list[dict]
    regionals: list[dict]
    hit_bytes: int
    total_bytes: int

    @property
    def statuses(self) -> list[HitStatus]:
        return [o.status for o in self.outcomes]

    @property
    def byte_hit_ratio(self) -> float | None:
        return self.hit_bytes / self.total_bytes if self.total_bytes else None

    def summary(self) -> dict:
        return {"events": len(self.outcomes), "hit_counts": asdict(self.counts),
                "byte_hit_ratio": self.byte_hit_ratio, "hit_bytes": self.hit_bytes,
                "total_bytes": self.total_bytes, "edges": self.edges,
                "regionals": self.regionals,
                "evictions": sum(n["evictions"] for n in self.edges + self.regionals)}


class _State:
    def __init__(self, cfg: TopologyConfig):
        self.cfg = cfg
        self.edges = [CacheNode(cfg.edge_capacity_bytes, cfg.ttl_mode, f"edge{i}")
                      for i in range(cfg.n_edges)]
        self.regionals = [CacheNode(cfg.regional_capacity_bytes, cfg.ttl_mode, f"regional{i}")
                          for i in range(cfg.n_regionals)]
        self.clients: dict[str, CacheNode] = {}
        self.edge_route: dict[str, int] = {}
        self.regional_route: dict[str, int] = {}
        self.last_time = -math.inf

    def nodes(self):
        yield from self.edges
        yield from self.regionals
        yield from self.clients.values()


def _step(st: _State, ev: RequestEvent) -> SimOutcome:
    cfg = st.cfg
    lat = cfg.latency
    ttl = cfg.ttl_by_service[ev.service]
    now, ident, size = ev.time, ev.content, ev.size_bytes

    client = None
    if cfg.client_cache_bytes:
        client = st.clients.get(ev.client_ip)
        if client is None:
            client = st.clients[ev.client_ip] = CacheNode(
                cfg.client_cache_bytes, cfg.ttl_mode, f"client:{ev.client_ip}")
        if client.access(ident, size, now, ttl):
            return SimOutcome(HitStatus.LOCAL, lat.latency(Level.LOCAL, size), None, None)

    ei = st.edge_route.get(ev.client_ip)
    if ei is None:
        ei = st.edge_route[ev.client_ip] = route_edge(ev.client_ip, cfg)
    edge = st.edges[ei]
    if edge.access(ident, size, now, ttl):
        if client is not None:
            client.insert(ident, size, now)
        return SimOutcome(HitStatus.HIT, lat.latency(Level.EDGE, size), ei, None)

    ri = st.regional_route.get(ident)
    if ri is None:
        ri = st.regional_route[ident] = route_regional(ident, cfg)
    if ev.packaged:
        # Pre-stored at its regional: never evicted, never expires.
        if cfg.packaged_always_hit_at_edge:
            out = SimOutcome(HitStatus.HIT, lat.latency(Level.EDGE, size), ei, ri)
        else:
            out = SimOutcome(HitStatus.HIT1, lat.latency(Level.REGIONAL, size), ei, ri)
    else:
        regional = st.regionals[ri]
        if regional.access(ident, size, now, ttl):
            out = SimOutcome(HitStatus.HIT1, lat.latency(Level.REGIONAL, size), ei, ri)
        else:
            regional.insert(ident, size, now)
            out = SimOutcome(HitStatus.MISS, lat.latency(Level.ORIGIN, size), ei, ri)
    edge.insert(ident, size, now)
    if client is not None:
        client.insert(ident, size, now)
    return out


def _run(st: _State, events: Iterable[RequestEvent], check_invariants: bool,
         first_index: int = 0) -> list[SimOutcome]:
    outcomes = []
    for i, ev in enumerate(events, first_index):
        if ev.time < st.last_time:
            raise ReplayError(i, f"time {ev.time} precedes previous event time {st.last_time}")
        if ev.size_bytes < 0:
            raise ReplayError(i, "negative size")
        st.last_time = ev.time
        outcomes.append(_step(st, ev))
        if check_invariants:
            for node in st.nodes():
                node.check_invariants()
    return outcomes


def _result(st: _State, outcomes: list[SimOutcome], events: list[RequestEvent]) -> SimResult:
    counts = HitCounts.from_statuses(o.status for o in outcomes)
    total = sum(e.size_bytes for e in events)
    served = sum(e.size_bytes for e, o in zip(events, outcomes) if o.status is not HitStatus.MISS)
    return SimResult(outcomes, counts, [n.stats() for n in st.edges],
                     [n.stats() for n in st.regionals], served, total)


def replay(events: Iterable[RequestEvent], cfg: TopologyConfig | None = None,
           check_invariants: bool = False, warmup: Iterable[RequestEvent] = ()) -> SimResult:
    """Replay time-ordered ``events`` from cold caches (after optional ``warmup``).

    ``check_invariants`` verifies byte accounting and capacity at every node
    after every event; it is slow and meant for tests.
    """
    st = _State(cfg or TopologyConfig())
    warm = list(warmup)
    _run(st, warm, check_invariants)
    for node in st.nodes():
        node.hits = node.misses = node.hit_bytes = node.request_bytes = 0
        node.evictions = node.expirations = node.bypasses = 0
    events = list(events)
    outcomes = _run(st, events, check_invariants, len(warm))
    return _result(st, outcomes, events)


@dataclass
class AgreementReport:
    confusion: Counter  # (simulated, logged) -> count
    agreement: float | None
    n: int

    def to_dict(self) -> dict:
        labels = [s.value for s in HitStatus]
        return {"n": self.n, "agreement": self.agreement, "labels": labels,
                "confusion": [[self.confusion[(HitStatus(a), HitStatus(b))] for b in labels]
                              for a in labels]}


def compare(simulated, logged) -> AgreementReport:
    """Confusion matrix (rows simulated, columns logged) and agreement fraction."""
    simulated, logged = list(simulated), list(logged)
    if len(simulated) != len(logged):
        raise ValueError(f"length mismatch: {len(simulated)} simulated vs {len(logged)} logged")
    sim = [o.status if isinstance(o, SimOutcome) else o for o in simulated]
    log = [r.status if isinstance(r, LogRecord) else r for r in logged]
    conf = Counter(zip(sim, log))
    agree = sum(n for (a, b), n in conf.items() if a is b)
    return AgreementReport(conf, agree / len(sim) if sim else None, len(sim))


class CacheHierarchy(BaseEstimator):
    """Estimator wrapper around :func:`replay`.

    ``fit`` warms the caches with an optional event prefix; ``predict``
    replays events against a copy of the fitted state, so repeated calls
    give identical answers.  ``score`` is the status agreement with logged
    statuses.
    """

    def __init__(self, n_edges=3, n_regionals=2, edge_capacity_bytes=32 * GiB,
                 regional_capacity_bytes=32 * GiB, ttl_by_service=None, latency=None,
                 packaged_always_hit_at_edge=False, ttl_mode="insert", client_cache_bytes=0):
        self.n_edges = n_edges
        self.n_regionals = n_regionals
        self.edge_capacity_bytes = edge_capacity_bytes
        self.regional_capacity_bytes = regional_capacity_bytes
        self.ttl_by_service = ttl_by_service
        self.latency = latency
        self.packaged_always_hit_at_edge = packaged_always_hit_at_edge
        self.ttl_mode = ttl_mode
        self.client_cache_bytes = client_cache_bytes

    def _config(self) -> TopologyConfig:
        return TopologyConfig(
            self.n_edges, self.n_regionals, self.edge_capacity_bytes,
            self.regional_capacity_bytes, self.ttl_by_service or {},
            self.latency or LatencyModel(), self.packaged_always_hit_at_edge,
            self.ttl_mode, self.client_cache_bytes)

    @classmethod
    def from_config(cls, cfg: TopologyConfig) -> CacheHierarchy:
        return cls(cfg.n_edges, cfg.n_regionals, cfg.edge_capacity_bytes,
                   cfg.regional_capacity_bytes, dict(cfg.ttl_by_service), cfg.latency,
                   cfg.packaged_always_hit_at_edge, cfg.ttl_mode, cfg.client_cache_bytes)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.state_ = _State(self.config_)
        if X is not None:
            warm = list(X)
            _run(self.state_, warm, False)
            self.n_warmup_events_ = len(warm)
        else:
            self.n_warmup_events_ = 0
        return self

    def replay(self, X, check_invariants: bool = False) -> SimResult:
        check_is_fitted(self, "state_")
        st = copy.deepcopy(self.state_)
        for node in st.nodes():
            node.hits = node.misses = node.hit_bytes = node.request_bytes = 0
            node.evictions = node.expirations = node.bypasses = 0
        events = list(X)
        return _result(st, _run(st, events, check_invariants, self.n_warmup_events_), events)

    def predict(self, X) -> list[HitStatus]:
        return self.replay(X).statuses

    def score(self, X, y) -> float:
        return compare(self.predict(X), y).agreement


# -- event files and log conversion -----------------------------------------

EVENT_COLUMNS = ("time_unix_ms", "ip", "path", "size", "service", "packaged")


def write_events(path, events: Iterable[RequestEvent]) -> int:
    n = 0
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for ev in events:
            w.writerow((round(ev.time * 1000), ev.client_ip, ev.content, ev.size_bytes,
                        ev.service.value, int(ev.packaged)))
            n += 1
    return n


class EventFileError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def read_events(path) -> list[RequestEvent]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            return out
        if tuple(header) != EVENT_COLUMNS:
            raise EventFileError(path, 1, f"expected header {','.join(EVENT_COLUMNS)}")
        for lineno, row in enumerate(r, 2):
            if len(row) != len(EVENT_COLUMNS):
                raise EventFileError(path, lineno, f"expected 6 columns, got {len(row)}")
            t, ip, p, size, svc, pk = row
            try:
                ev = RequestEvent(int(t) / 1000, ip, p, int(size), ServiceClass(svc),
                                  {"0": False, "1": True}[pk])
            except (ValueError, KeyError) as exc:
                raise EventFileError(path, lineno, f"bad value ({exc})") from None
            if ev.size_bytes < 0 or not p:
                raise EventFileError(path, lineno, "size must be >= 0 and path non-empty")
            out.append(ev)
    return out


def events_from_records(records, patterns: PatternConfig = DEFAULT_PATTERNS) -> list[RequestEvent]:
    """Turn parsed records into replay events; logged statuses are ignored.

    The packaged flag is inferred from the MISS criterion over ``records``.
    """
    records = list(records)
    ms = build_miss_set(records, patterns)
    out = []
    for r in records:
        out.append(RequestEvent(
            r.timestamp.timestamp(), r.client_ip, content_identity(r.content_path, patterns),
            r.size_bytes, classify_service(r.content_path, patterns),
            classify_packaging(r.content_path, ms, patterns) is PackagingClass.PACKAGED))
    return out


def outcomes_to_records(events, outcomes, tz: timezone) -> list[LogRecord]:
    """Log records (second-resolution timestamps, ms latency) for a replay."""
    out = []
    for ev, o in zip(events, outcomes):
        ts = datetime.fromtimestamp(math.floor(ev.time), tz)
        out.append(LogRecord(round(o.latency_seconds * 1000) / 1000, ev.client_ip, o.status,
                             ts, ev.content, ev.size_bytes))
    return out

