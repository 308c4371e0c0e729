"""Synthetic request traces shaped like a live-streaming-heavy CDN workload.

Each request draws a (service, packaged) class from ``class_mix``, a content
item by Zipf rank within that class's catalog, and a client from a pool
with an ISP/province mix.  Arrivals are an hourly inhomogeneous Poisson
process.  Everything flows from one seed.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._io import atomic_write
from ._validation import check_fractions, check_scalar, check_weights
from .classify import ServiceClass, classify_service
from .metrics import MIME_CLASSES, mime_class
from .simulate import RequestEvent, write_events

# Standard-normal 75th percentile.
Z75 = 0.674489750196082

# Requests per (service, packaged) class over the 7-day reference corpus.
REFERENCE_CLASS_COUNTS = {
    (ServiceClass.LIVE, False): 152_697_608,
    (ServiceClass.LIVE, True): 129_278_868,
    (ServiceClass.VOD, False): 2_069_393,
    (ServiceClass.WEBSITE, False): 14_301_252,
}
_total = sum(REFERENCE_CLASS_COUNTS.values())
DEFAULT_CLASS_MIX = {k: v / _total for k, v in REFERENCE_CLASS_COUNTS.items()}

# Request-size quartiles in MB per service (lower quartile, median, upper quartile).
DEFAULT_SIZE_QUARTILES_MB = {
    ServiceClass.LIVE: (0.03936665, 0.075, 0.12234965),
    ServiceClass.VOD: (0.0866492, 0.2026076, 0.3279754),
    ServiceClass.WEBSITE: (0.00713175, 0.0578163, 0.49207115),
}

# Evening peak at 19-21h, secondary bump at 03-05h.
DEFAULT_HOURLY_WEIGHTS = (
    0.032, 0.026, 0.030, 0.046, 0.050, 0.044, 0.024, 0.022,
    0.028, 0.034, 0.036, 0.038, 0.040, 0.038, 0.036, 0.036,
    0.038, 0.042, 0.050, 0.064, 0.070, 0.066, 0.048, 0.040,
)

DEFAULT_EXTENSION_MIX = {
    ServiceClass.LIVE: {".ts": 0.40, ".m3u8": 0.33, ".dash": 0.18, ".mpd": 0.09},
    ServiceClass.VOD: {".dash": 0.45, ".ts": 0.30, ".mpd": 0.10, ".m3u8": 0.15},
    ServiceClass.WEBSITE: {".jpg": 0.35, ".png": 0.25, ".js": 0.20, ".css": 0.10,
                           ".mp4": 0.06, ".mp3": 0.02, ".html": 0.02},
}

# Illustrative shares, not measured values.
DEFAULT_ISP_MIX = {"FPT": 0.60, "VNPT": 0.18, "Viettel": 0.14, "Mobifone": 0.03,
                   "SCTV": 0.01, "Other": 0.04}
DEFAULT_PROVINCE_MIX = {
    "Ha Noi": 0.2352, "Ho Chi Minh": 0.18, "Hai Phong": 0.06, "Bac Ninh": 0.05,
    "Nam Dinh": 0.05, "Thai Binh": 0.045, "Nghe An": 0.045, "Thanh Hoa": 0.045,
    "Quang Ninh": 0.04, "Hai Duong": 0.04, "Other": 0.2098,
}


def class_key(service: ServiceClass, packaged: bool) -> str:
    return f"{service.value}:{'Packaged' if packaged else 'NonPackaged'}"


def parse_class_key(key: str) -> tuple[ServiceClass, bool]:
    svc, _, pk = key.partition(":")
    if pk not in ("Packaged", "NonPackaged"):
        raise ValueError(f"class key {key!r} must look like 'LiveStreaming:Packaged'")
    return ServiceClass(svc), pk == "Packaged"


def fit_lognormal(q1: float, median: float, q3: float) -> tuple[float, float]:
    """Log-normal ``(mu, sigma)`` from quartiles via the symmetric-quartile estimator."""
    if not (0 < q1 < median < q3):
        raise ValueError(f"quartiles must satisfy 0 < q1 < median < q3, got {(q1, median, q3)}")
    return math.log(median), (math.log(q3) - math.log(q1)) / (2 * Z75)


class LogNormalSizeModel(BaseEstimator):
    """Object-size model in megabytes, fitted to (q1, median, q3)."""

    def __init__(self, min_bytes=1):
        self.min_bytes = min_bytes

    def fit(self, X, y=None):
        q1, med, q3 = (float(v) for v in X)
        self.mu_, self.sigma_ = fit_lognormal(q1, med, q3)
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        check_is_fitted(self, "mu_")
        return rng.lognormal(self.mu_, self.sigma_, n)

    def sample_bytes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mb = self.sample(n, rng)
        return np.maximum(np.rint(mb * 1e6).astype(np.int64), self.min_bytes)

    def quartiles(self) -> tuple[float, float, float]:
        check_is_fitted(self, "mu_")
        return (math.exp(self.mu_ - Z75 * self.sigma_), math.exp(self.mu_),
                math.exp(self.mu_ + Z75 * self.sigma_))


class ZipfSampler:
    """Ranks 1..n with P(k) = k^-s / H(n, s), drawn by inverse CDF."""

    def __init__(self, n: int, s: float):
        check_scalar(n, "n", int, min_val=1)
        check_scalar(s, "s", (int, float), min_val=0)
        self.n, self.s = n, float(s)
        w = np.arange(1, n + 1, dtype=np.float64) ** -self.s
        self.pmf = w / w.sum()
        self._cdf = np.cumsum(self.pmf)
        self._cdf[-1] = 1.0

    def sample(self, rng: np.random.Generator, size: int | None = None):
        u = rng.random(size)
        k = np.searchsorted(self._cdf, u, side="right") + 1
        return int(k) if size is None else k


def zipf_sample(n: int, s: float, rng: np.random.Generator) -> int:
    return ZipfSampler(n, s).sample(rng)


@dataclass
class WorkloadConfig:
    seed: int = 0
    days: int = 1
    start: str = "2018-12-03T00:00:00+07:00"
    requests_per_day: float = 100_000
    class_mix: Mapping = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    catalog_size: Mapping = field(default_factory=lambda: {
        (ServiceClass.LIVE, False): 2000, (ServiceClass.LIVE, True): 2000,
        (ServiceClass.VOD, False): 5000, (ServiceClass.WEBSITE, False): 5000})
    zipf_exponent: Mapping = field(default_factory=dict)  # class -> s; default 0.8
    hourly_weights: tuple = DEFAULT_HOURLY_WEIGHTS
    size_quartiles_mb: Mapping = field(default_factory=lambda: dict(DEFAULT_SIZE_QUARTILES_MB))
    extension_mix: Mapping = field(default_factory=lambda: {
        k: dict(v) for k, v in DEFAULT_EXTENSION_MIX.items()})
    n_clients: int = 5000
    isp_mix: Mapping = field(default_factory=lambda: dict(DEFAULT_ISP_MIX))
    province_mix: Mapping = field(default_factory=lambda: dict(DEFAULT_PROVINCE_MIX))
    country: str = "Vietnam"
    default_zipf_exponent: float = 0.8
    default_catalog_size: int = 1000

    def __post_init__(self):
        check_scalar(self.seed, "seed", int, min_val=0, max_val=2**64 - 1)
        check_scalar(self.days, "days", int, min_val=1)
        check_scalar(self.requests_per_day, "requests_per_day", (int, float), min_val=0)
        check_scalar(self.n_clients, "n_clients", int, min_val=1)
        self.start_dt  # validates
        self.class_mix = {self._key(k): v for k, v in
                          check_fractions(self.class_mix, "class_mix").items()}
        self.catalog_size = {self._key(k): v for k, v in self.catalog_size.items()}
        self.zipf_exponent = {self._key(k): float(v) for k, v in self.zipf_exponent.items()}
        for k in self.class_mix:
            n = self.catalog(k)
            check_scalar(n, f"catalog_size[{class_key(*k)}]", int, min_val=1)
            check_scalar(self.exponent(k), f"zipf_exponent[{class_key(*k)}]", float, min_val=0)
        self.hourly_weights = tuple(check_weights(self.hourly_weights, "hourly_weights", 24))
        self.size_quartiles_mb = {ServiceClass(k): tuple(v) for k, v in self.size_quartiles_mb.items()}
        self.extension_mix = {ServiceClass(k): check_fractions(v, f"extension_mix[{ServiceClass(k).value}]")
                              for k, v in self.extension_mix.items()}
        for svc, _ in self.class_mix:
            if svc not in self.size_quartiles_mb:
                raise ValueError(f"no size quartiles for {svc.value}")
            fit_lognormal(*self.size_quartiles_mb[svc])
            if svc not in self.extension_mix:
                raise ValueError(f"no extension mix for {svc.value}")
        self.isp_mix = check_fractions(self.isp_mix, "isp_mix")
        self.province_mix = check_fractions(self.province_mix, "province_mix")

    @staticmethod
    def _key(k) -> tuple[ServiceClass, bool]:
        if isinstance(k, str):
            return parse_class_key(k)
        svc, pk = k
        return ServiceClass(svc), bool(pk)

    @property
    def start_dt(self) -> datetime:
        dt = datetime.fromisoformat(self.start)
        if dt.utcoffset() is None:
            raise ValueError(f"start must carry a UTC offset, got {self.start!r}")
        return dt

    def catalog(self, k) -> int:
        return self.catalog_size.get(k, self.default_catalog_size)

    def exponent(self, k) -> float:
        return self.zipf_exponent.get(k, self.default_zipf_exponent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_mix"] = {class_key(*k): v for k, v in self.class_mix.items()}
        d["catalog_size"] = {class_key(*k): v for k, v in self.catalog_size.items()}
        d["zipf_exponent"] = {class_key(*k): v for k, v in self.zipf_exponent.items()}
        d["hourly_weights"] = list(self.hourly_weights)
        d["size_quartiles_mb"] = {k.value: list(v) for k, v in self.size_quartiles_mb.items()}
        d["extension_mix"] = {k.value: v for k, v in self.extension_mix.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> WorkloadConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown workload keys: {sorted(unknown)}")
        return cls(**d)


def gen_arrivals(cfg: WorkloadConfig, rng: np.random.Generator) -> np.ndarray:
    """Sorted arrival times in unix milliseconds."""
    start = cfg.start_dt
    start_ms = round(start.timestamp() * 1000)
    w = np.asarray(cfg.hourly_weights, dtype=np.float64)
    rate = cfg.requests_per_day * w / w.sum()
    chunks = []
    for h in range(cfg.days * 24):
        hour_of_day = (start.hour + h) % 24
        k = rng.poisson(rate[hour_of_day])
        if k:
            chunks.append(start_ms + h * 3_600_000 + rng.integers(0, 3_600_000, k))
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chunks)).astype(np.int64)


@dataclass
class CatalogEntry:
    path: str
    size_bytes: int
    service: ServiceClass
    packaged: bool


def _hex(rng, n=32) -> str:
    return "".join("0123456789abcdef"[i] for i in rng.integers(0, 16, n))


def _path(svc: ServiceClass, packaged: bool, i: int, ext: str, rng) -> str:
    if svc is ServiceClass.LIVE:
        channel = f"ch{int(rng.integers(0, 60)):02d}"
        scope = "pkg" if packaged else "_definst_"
        return f"/{_hex(rng)}/tv/{scope}/{channel}tv-mid-{i:07d}{ext}"
    if svc is ServiceClass.VOD:
        return f"/vod/{'p' if packaged else 'n'}/movie{i // 50:05d}/seg-{i:07d}{ext}"
    folder = {".jpg": "img", ".png": "img", ".mp4": "download", ".mp3": "audio"}.get(ext, "static")
    return f"/web/{'p' if packaged else 'n'}/{folder}/asset{i:07d}{ext}"


def build_catalog(cfg: WorkloadConfig, rng: np.random.Generator) -> dict:
    """Class key -> list of :class:`CatalogEntry` ordered by popularity rank."""
    models = {svc: LogNormalSizeModel().fit(q) for svc, q in cfg.size_quartiles_mb.items()}
    out = {}
    for k in sorted(cfg.class_mix, key=lambda k: class_key(*k)):
        svc, pk = k
        n = cfg.catalog(k)
        exts = list(cfg.extension_mix[svc])
        p = np.asarray([cfg.extension_mix[svc][e] for e in exts])
        p = p / p.sum()
        ext_idx = rng.choice(len(exts), n, p=p)
        sizes = models[svc].sample_bytes(n, rng)
        entries = []
        for i in range(n):
            path = _path(svc, pk, i, exts[ext_idx[i]], rng)
            got = classify_service(path)
            if got is not svc:
                raise AssertionError(f"synthesized path {path} classifies as {got.value}")
            entries.append(CatalogEntry(path, int(sizes[i]), svc, pk))
        out[k] = entries
    return out


def build_clients(cfg: WorkloadConfig, rng: np.random.Generator):
    """Client IPs plus a CIDR table; each (ISP, province) pair owns one /16."""
    isps = list(cfg.isp_mix)
    provinces = list(cfg.province_mix)
    isp_p = np.asarray([cfg.isp_mix[i] for i in isps])
    prov_p = np.asarray([cfg.province_mix[p] for p in provinces])
    isp_idx = rng.choice(len(isps), cfg.n_clients, p=isp_p / isp_p.sum())
    prov_idx = rng.choice(len(provinces), cfg.n_clients, p=prov_p / prov_p.sum())
    if len(isps) * len(provinces) > 256 * 250:
        raise ValueError("too many ISP/province combinations for the address plan")
    blocks: dict = {}
    used: Counter = Counter()
    clients = []
    for a, b in zip(isp_idx, prov_idx):
        pair = (isps[a], provinces[b])
        if pair not in blocks:
            n = len(blocks)
            blocks[pair] = (10 + n // 256, n % 256)
        hi, lo = blocks[pair]
        host = used[pair] + 1
        used[pair] += 1
        if host > 65534:
            raise ValueError("more than 65534 clients in one ISP/province block")
        clients.append((f"{hi}.{lo}.{host // 256}.{host % 256}", pair[0], pair[1]))
    table = [(f"{hi}.{lo}.0.0/16", isp, prov, cfg.country)
             for (isp, prov), (hi, lo) in sorted(blocks.items(), key=lambda kv: kv[1])]
    return clients, table


@dataclass
class Trace:
    events: list
    ledger: dict
    geo_table: list

    def write(self, out_dir) -> dict:
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.csv", "ledger": out / "ledger.json",
                 "geo_table": out / "geo_table.csv"}
        write_events(paths["events"], self.events)
        with atomic_write(paths["ledger"]) as fh:
            json.dump(self.ledger, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with atomic_write(paths["geo_table"]) as fh:
            fh.write("cidr,isp,province,country\n")
            for row in self.geo_table:
                fh.write(",".join(row) + "\n")
        return paths


def gen_trace(cfg: WorkloadConfig) -> Trace:
    rng = np.random.default_rng(cfg.seed)
    catalog = build_catalog(cfg, rng)
    clients, table = build_clients(cfg, rng)
    times = gen_arrivals(cfg, rng)
    n = times.size

    keys = sorted(cfg.class_mix, key=lambda k: class_key(*k))
    mix = np.asarray([cfg.class_mix[k] for k in keys])
    cls_idx = rng.choice(len(keys), n, p=mix / mix.sum()) if n else np.empty(0, dtype=np.int64)
    ranks = np.zeros(n, dtype=np.int64)
    for ci, k in enumerate(keys):
        sel = np.flatnonzero(cls_idx == ci)
        if sel.size:
            ranks[sel] = ZipfSampler(len(catalog[k]), cfg.exponent(k)).sample(rng, sel.size)
    client_idx = rng.integers(0, len(clients), n)

    events = []
    class_counts: Counter = Counter()
    mime_req: Counter = Counter()
    mime_bytes: Counter = Counter()
    for t, ci, rank, cl in zip(times.tolist(), cls_idx.tolist(), ranks.tolist(), client_idx.tolist()):
        k = keys[ci]
        e = catalog[k][rank - 1]
        events.append(RequestEvent(t / 1000, clients[cl][0], e.path, e.size_bytes, e.service, e.packaged))
        class_counts[class_key(*k)] += 1
        m = mime_class(e.path)
        mime_req[m] += 1
        mime_bytes[m] += e.size_bytes

    expected_mime = Counter()
    for k in keys:
        pmf = ZipfSampler(len(catalog[k]), cfg.exponent(k)).pmf
        for p, e in zip(pmf, catalog[k]):
            expected_mime[mime_class(e.path)] += cfg.class_mix[k] * p

    ledger = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "n_requests": n,
        "class_counts": {class_key(*k): class_counts[class_key(*k)] for k in keys},
        "contents": {e.path: {"service": e.service.value, "packaged": e.packaged,
                              "size_bytes": e.size_bytes}
                     for k in keys for e in catalog[k]},
        "mime_request_counts": {m: mime_req[m] for m in MIME_CLASSES},
        "mime_byte_counts": {m: mime_bytes[m] for m in MIME_CLASSES},
        "expected_mime_request_fractions": {m: float(expected_mime[m]) for m in MIME_CLASSES},
        "clients": {ip: {"isp": isp, "province": prov, "country": cfg.country}
                    for ip, isp, prov in clients},
    }
    return Trace(events, ledger, table)
