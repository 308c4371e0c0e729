"""Client-IP enrichment: pluggable resolvers, synonym normalization, on-disk cache.

Two resolvers ship: an offline CIDR table (the default; no network) and an
HTTP JSON client.  Resolved answers are normalized through a synonym table
and a deny-list; anything empty or denied becomes :data:`INVALID`.  The
cache remembers both good and Invalid answers, so each IP is asked about
once per process.
"""
from __future__ import annotations

import csv
import ipaddress
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Protocol

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._io import atomic_write, open_text
from .classify import ClassifiedRecord
from .logline import canonical_ip


class GeoInfo(NamedTuple):
    isp_name: str
    province: str
    country: str


class _Invalid:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INVALID"

    def __reduce__(self):
        return (_Invalid, ())


INVALID = _Invalid()
INVALID_MARK = "!"

DEFAULT_DENY = frozenset({"", "unknown", "n/a", "na", "none", "null", "-", "?", INVALID_MARK})


class ResolverError(Exception):
    def __init__(self, reason: str, retryable: bool = False, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason
        self.retryable = retryable


class Resolver(Protocol):
    def resolve(self, ip: str) -> GeoInfo: ...


class GeoFileError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _rows(path):
    with open_text(path) as fh:
        yield from enumerate(csv.reader(fh), 1)


class CidrTableResolver:
    """Longest-prefix match over ``cidr,isp,province,country`` rows."""

    def __init__(self, rows: Iterable[tuple] = ()):
        # (version, prefixlen) -> {network int: GeoInfo}
        self._tables: dict[tuple[int, int], dict[int, GeoInfo]] = {}
        self._order: list[tuple[int, int]] = []
        self.calls = 0
        for cidr, isp, prov, country in rows:
            self.add(cidr, GeoInfo(isp, prov, country))

    def add(self, cidr: str, info: GeoInfo) -> None:
        net = ipaddress.ip_network(cidr, strict=False)
        self._tables.setdefault((net.version, net.prefixlen), {})[int(net.network_address)] = info
        self._order = sorted(self._tables, key=lambda k: -k[1])

    @classmethod
    def from_csv(cls, path) -> CidrTableResolver:
        res = cls()
        for lineno, row in _rows(path):
            if not row or (lineno == 1 and row[0].strip().lower() == "cidr"):
                continue
            if len(row) != 4:
                raise GeoFileError(path, lineno, f"expected 4 columns, got {len(row)}")
            try:
                res.add(row[0].strip(), GeoInfo(*row[1:]))
            except ValueError as exc:
                raise GeoFileError(path, lineno, str(exc)) from None
        return res

    def __len__(self) -> int:
        return sum(len(t) for t in self._tables.values())

    def resolve(self, ip: str) -> GeoInfo:
        self.calls += 1
        addr = ipaddress.ip_address(ip)
        bits = addr.max_prefixlen
        value = int(addr)
        for version, plen in self._order:
            if version != addr.version:
                continue
            mask = ((1 << plen) - 1) << (bits - plen)
            hit = self._tables[(version, plen)].get(value & mask)
            if hit is not None:
                return hit
        raise ResolverError("not_found", retryable=False, detail=ip)


class HttpResolver:
    """JSON-over-HTTP resolver, e.g. ``http://ip-api.com/json/{ip}``.

    ``fields`` names the (isp, province, country) keys in the response.
    Calls are spaced at least ``60 / rate_per_minute`` seconds apart.
    """

    def __init__(self, url_template: str = "http://ip-api.com/json/{ip}",
                 fields: tuple[str, str, str] = ("isp", "regionName", "country"),
                 rate_per_minute: float = 45.0, timeout: float = 5.0, client=None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        import httpx

        if "{ip}" not in url_template:
            raise ValueError("url_template must contain '{ip}'")
        if rate_per_minute <= 0:
            raise ValueError("rate_per_minute must be positive")
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.url_template = url_template
        self.fields = tuple(fields)
        self.rate_per_minute = rate_per_minute
        self.timeout = timeout
        self._httpx = httpx
        self._client = client or httpx.Client(timeout=timeout)
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_slot = -float("inf")
        self.calls = 0

    def _wait_turn(self) -> None:
        with self._lock:
            now = self._clock()
            slot = max(now, self._next_slot)
            self._next_slot = slot + 60.0 / self.rate_per_minute
        if slot > now:
            self._sleep(slot - now)

    def resolve(self, ip: str) -> GeoInfo:
        httpx = self._httpx
        self._wait_turn()
        self.calls += 1
        try:
            resp = self._client.get(self.url_template.format(ip=ip), timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise ResolverError("timeout", retryable=True, detail=str(exc)) from None
        except httpx.HTTPError as exc:
            raise ResolverError("network", retryable=True, detail=str(exc)) from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ResolverError(f"http_{resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise ResolverError(f"http_{resp.status_code}", retryable=False)
        try:
            payload = resp.json()
        except ValueError:
            raise ResolverError("bad_response", retryable=False, detail="body is not JSON") from None
        if not isinstance(payload, Mapping):
            raise ResolverError("bad_response", retryable=False, detail="body is not an object")
        # Missing fields come back empty; normalization turns them Invalid.
        return GeoInfo(*(str(payload.get(f) or "") for f in self.fields))

    def close(self) -> None:
        self._client.close()


class SynonymTable:
    """Variant -> canonical location names, matched case-insensitively.

    Unknown names pass through; canonical names map to themselves.
    """

    def __init__(self, mapping: Mapping[str, str] | None = None):
        self._map: dict[str, str] = {}
        for variant, canonical in (mapping or {}).items():
            self.add(variant, canonical)
        self._check()

    def add(self, variant: str, canonical: str) -> None:
        variant, canonical = variant.strip(), canonical.strip()
        if not variant or not canonical:
            raise ValueError("synonym entries must be non-empty")
        key = variant.casefold()
        prev = self._map.get(key)
        if prev is not None and prev != canonical:
            raise ValueError(f"{variant!r} maps to both {prev!r} and {canonical!r}")
        self._map[key] = canonical

    def _check(self) -> None:
        for canonical in set(self._map.values()):
            target = self._map.get(canonical.casefold(), canonical)
            if target != canonical:
                raise ValueError(f"canonical name {canonical!r} is itself mapped to "
                                 f"{target!r}; chains are not allowed")

    @classmethod
    def from_csv(cls, path) -> SynonymTable:
        table = cls()
        for lineno, row in _rows(path):
            if not row or (lineno == 1 and [c.strip().lower() for c in row] == ["variant", "canonical"]):
                continue
            if len(row) != 2:
                raise GeoFileError(path, lineno, f"expected 2 columns, got {len(row)}")
            try:
                table.add(*row)
            except ValueError as exc:
                raise GeoFileError(path, lineno, str(exc)) from None
        try:
            table._check()
        except ValueError as exc:
            raise GeoFileError(path, 0, str(exc)) from None
        return table

    def __call__(self, name: str) -> str:
        name = name.strip()
        return self._map.get(name.casefold(), name)

    def __len__(self) -> int:
        return len(self._map)


def normalize(raw, syn: SynonymTable | None = None, deny: Iterable[str] = DEFAULT_DENY):
    """Canonical :class:`GeoInfo`, or :data:`INVALID` for empty/denied fields."""
    if raw is INVALID:
        return INVALID
    syn = syn or SynonymTable()
    deny = {d.casefold() for d in deny} | {"", INVALID_MARK}
    isp = raw.isp_name.strip()
    province = syn(raw.province)
    country = syn(raw.country)
    for v in (isp, province, country):
        if v.casefold() in deny or "\n" in v or "\r" in v:
            return INVALID
    return GeoInfo(isp, province, country)


class GeoCache:
    """Thread-safe IP -> GeoInfo | INVALID map with CSV persistence."""

    HEADER = ("ip", "isp", "province", "country")

    def __init__(self, entries: Mapping | None = None):
        self._data: dict = {}
        self._lock = threading.Lock()
        for ip, v in (entries or {}).items():
            self.put(ip, v)

    def get(self, ip: str, default=None):
        with self._lock:
            return self._data.get(ip, default)

    def put(self, ip: str, value) -> None:
        key = canonical_ip(ip)
        if key is None:
            raise ValueError(f"not an IP address: {ip!r}")
        if value is not INVALID and not isinstance(value, GeoInfo):
            raise TypeError(f"cache values must be GeoInfo or INVALID, got {value!r}")
        with self._lock:
            self._data[key] = value

    def __contains__(self, ip) -> bool:
        return ip in self._data

    def __len__(self) -> int:
        return len(self._data)

    def items(self):
        with self._lock:
            return list(self._data.items())

    def to_dict(self) -> dict:
        with self._lock:
            return dict(self._data)

    def __eq__(self, other):
        if not isinstance(other, GeoCache):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def save(self, path) -> None:
        """Write atomically: readers see the old file or the new one, never a mix."""
        items = sorted(self.items())
        with atomic_write(path, newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for ip, v in items:
                w.writerow((ip,) + ((INVALID_MARK,) * 3 if v is INVALID else tuple(v)))

    @classmethod
    def load(cls, path) -> GeoCache:
        cache = cls()
        for lineno, row in _rows(path):
            if lineno == 1 and tuple(row) == cls.HEADER:
                continue
            if len(row) != 4:
                raise GeoFileError(path, lineno, f"expected 4 columns, got {len(row)}")
            ip, fields = row[0], row[1:]
            if canonical_ip(ip) is None:
                raise GeoFileError(path, lineno, f"bad IP {ip!r}")
            marks = sum(f == INVALID_MARK for f in fields)
            if marks == 3:
                value = INVALID
            elif marks or not all(fields):
                raise GeoFileError(path, lineno, "fields must be all '!' or all non-empty")
            else:
                value = GeoInfo(*fields)
            cache.put(ip, value)
        return cache


def save_cache(cache: GeoCache, path) -> None:
    cache.save(path)


def load_cache(path) -> GeoCache:
    return GeoCache.load(path)


def lookup(ip: str, cache: GeoCache, resolver: Resolver, syn: SynonymTable | None = None,
           deny: Iterable[str] = DEFAULT_DENY):
    """Cached, normalized answer for ``ip``.

    Resolver failures propagate as :class:`ResolverError` and are not cached,
    so a later lookup retries.
    """
    key = canonical_ip(ip)
    if key is None:
        raise ValueError(f"not an IP address: {ip!r}")
    hit = cache.get(key)
    if hit is not None:
        return hit
    value = normalize(resolver.resolve(key), syn, deny)
    cache.put(key, value)
    return value


def lookup_many(ips: Iterable[str], cache: GeoCache, resolver: Resolver,
                syn: SynonymTable | None = None, deny: Iterable[str] = DEFAULT_DENY,
                threads: int = 1) -> dict:
    """Resolve each distinct IP once; failures map to their :class:`ResolverError`."""
    distinct = list(dict.fromkeys(canonical_ip(ip) or ip for ip in ips))

    def one(ip):
        try:
            return ip, lookup(ip, cache, resolver, syn, deny)
        except ResolverError as exc:
            return ip, exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return dict(pool.map(one, distinct))
    return dict(map(one, distinct))


class EnrichedRecord(NamedTuple):
    latency_seconds: float
    client_ip: str
    status: object
    timestamp: object
    content_path: str
    size_bytes: int
    service: object
    packaging: object
    isp: str | None
    province: str | None
    country: str | None


def enrich_record(rec: ClassifiedRecord, geo) -> EnrichedRecord:
    if isinstance(geo, GeoInfo):
        return EnrichedRecord(*rec, geo.isp_name, geo.province, geo.country)
    return EnrichedRecord(*rec, None, None, None)


class GeoEnricher(TransformerMixin, BaseEstimator):
    """Joins classified records with geo information.

    ``fit`` resolves every distinct client IP; ``transform`` attaches the
    answers.  Invalid or failed lookups give ``None`` geo fields.
    """

    def __init__(self, resolver=None, synonyms=None, deny_list=DEFAULT_DENY, cache=None,
                 threads=1):
        self.resolver = resolver
        self.synonyms = synonyms
        self.deny_list = deny_list
        self.cache = cache
        self.threads = threads

    def fit(self, X, y=None):
        if self.resolver is None:
            raise ValueError("GeoEnricher needs a resolver")
        self.cache_ = self.cache if self.cache is not None else GeoCache()
        self.results_ = lookup_many((r.client_ip for r in X), self.cache_, self.resolver,
                                    self.synonyms, self.deny_list, self.threads)
        self.n_errors_ = sum(isinstance(v, ResolverError) for v in self.results_.values())
        return self

    def transform(self, X) -> list[EnrichedRecord]:
        check_is_fitted(self, "cache_")
        out = []
        for r in X:
            geo = self.results_.get(r.client_ip)
            if geo is None:
                try:
                    geo = lookup(r.client_ip, self.cache_, self.resolver, self.synonyms,
                                 self.deny_list)
                except ResolverError as exc:
                    geo = exc
                self.results_[r.client_ip] = geo
            out.append(enrich_record(r, geo))
        return out


def resolver_from_config(cfg: Mapping, base_dir: Path | None = None):
    """Build a resolver from ``{"kind": "table", "table": path}`` or ``{"kind": "http", ...}``."""
    kind = cfg.get("kind", "table")
    if kind == "table":
        table = cfg.get("table")
        if not table:
            raise ValueError("geo.table is required for the table resolver")
        p = Path(table)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return CidrTableResolver.from_csv(p)
    if kind == "http":
        kw = {k: cfg[k] for k in ("url_template", "rate_per_minute", "timeout") if k in cfg}
        if "fields" in cfg:
            kw["fields"] = tuple(cfg["fields"])
        return HttpResolver(**kw)
    raise ValueError(f"unknown geo resolver kind {kind!r}; expected 'table' or 'http'")
