"""Command-line front end: clean, classify, enrich, report, simulate, generate.

Stdout carries one JSON summary per run; diagnostics go to stderr.
Exit codes: 0 success, 1 input error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import timedelta, timezone
from pathlib import Path

import polars as pl

from . import frame
from ._io import atomic_write, open_text
from .classify import PackagingClass, ServiceClass, count_classes
from .config import ConfigError, RunConfig, load_config
from .generate import WorkloadConfig, gen_trace
from .geoip import (DEFAULT_DENY, GeoCache, GeoEnricher, GeoFileError, ResolverError,
                    SynonymTable, resolver_from_config)
from .logline import RejectionStats, format_record
from .metrics import HitRateReport
from .reports import build_report, write_report
from .simulate import (EVENT_COLUMNS, EventFileError, ReplayError, compare,
                       events_from_records, outcomes_to_records, read_events, replay)
from .tables import TableError, is_labeled_csv, read_records, write_records

CHUNK_CHARS = 64 << 20


class InputError(Exception):
    """Unreadable or malformed input (exit code 1)."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- input handling ----------------------------------------------------------

def first_line(path) -> str:
    with open_text(path) as fh:
        return fh.readline().rstrip("\r\n")


def input_kind(path) -> str:
    head = first_line(path)
    if is_labeled_csv(head):
        return "table"
    if head == ",".join(EVENT_COLUMNS):
        return "events"
    return "log"


def iter_chunks(path, chunk_chars: int = CHUNK_CHARS):
    """Text chunks of ``path`` that end on line boundaries."""
    with open_text(path) as fh:
        while True:
            text = fh.read(chunk_chars)
            if not text:
                return
            if not text.endswith("\n"):
                text += fh.readline()
            yield text


def scan_file(path) -> tuple[pl.DataFrame, RejectionStats]:
    frames, stats = [], RejectionStats()
    for text in iter_chunks(path):
        df, st = frame.scan_text(text)
        frames.append(df)
        stats = stats + st
    if not frames:
        return pl.DataFrame(schema=frame.SCHEMA), stats
    return pl.concat(frames), stats


def scan_files(paths, threads: int = 1) -> tuple[pl.DataFrame, RejectionStats]:
    """Parse log files in parallel; output order follows ``paths``."""
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(scan_file, paths))
    else:
        parts = [scan_file(p) for p in paths]
    stats = RejectionStats()
    for _, st in parts:
        stats = stats + st
    frames = [df for df, _ in parts]
    df = pl.concat(frames) if frames else pl.DataFrame(schema=frame.SCHEMA)
    return df.with_columns(pl.int_range(pl.len(), dtype=pl.Int64).alias("row")), stats


def check_inputs(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise InputError(f"{p}: no such file")
        out.append(p)
    return out


def load_classified(paths, cfg: RunConfig, threads: int):
    """Classified records from logs or from labeled CSV files, plus parse stats."""
    kinds = {input_kind(p) for p in paths}
    if kinds == {"table"}:
        records = []
        for p in paths:
            records += read_records(p)
        return records, None
    if kinds - {"log"}:
        raise InputError("inputs must be all log files or all labeled CSV files")
    df, stats = scan_files(paths, threads)
    df = frame.classify_frame(df, cfg.patterns)
    return list(frame.iter_classified(df)), stats


def _geo_enricher(cfg: RunConfig, threads: int):
    try:
        resolver = resolver_from_config(cfg.geo, cfg.base_dir)
        syn = SynonymTable.from_csv(cfg.path(cfg.geo["synonyms"])) if cfg.geo.get("synonyms") \
            else SynonymTable()
    except GeoFileError as exc:
        raise ConfigError(str(exc)) from None
    cache_path = cfg.path(cfg.geo["cache"]) if cfg.geo.get("cache") else None
    try:
        cache = GeoCache.load(cache_path) if cache_path and cache_path.exists() else GeoCache()
    except GeoFileError as exc:
        raise InputError(str(exc)) from None
    deny = frozenset(cfg.geo.get("deny_list", ())) | DEFAULT_DENY
    return GeoEnricher(resolver, syn, deny, cache, threads), cache_path


# -- subcommands ---------------------------------------------------------------

def cmd_clean(inputs, cfg: RunConfig, out: Path, args) -> dict:
    df, stats = scan_files(inputs, args.threads)
    with atomic_write(out / "clean.log") as fh:
        for line in frame.format_lines(df).to_list():
            fh.write(line)
            fh.write("\n")
    with atomic_write(out / "clean_stats.json") as fh:
        json.dump(stats.to_dict(), fh, indent=1)
        fh.write("\n")
    return {"stats": stats.to_dict(), "outputs": [str(out / "clean.log"),
                                                  str(out / "clean_stats.json")]}


def _class_count_rows(records):
    counts = count_classes(records)
    return [(s.value, p.value, counts.get((s, p), 0)) for s in ServiceClass for p in PackagingClass]


def cmd_classify(inputs, cfg: RunConfig, out: Path, args) -> dict:
    records, stats = load_classified(inputs, cfg, args.threads)
    write_records(out / "classified.csv", records)
    rows = _class_count_rows(records)
    with atomic_write(out / "class_counts.csv") as fh:
        fh.write("service,packaging,count\n")
        for s, p, n in rows:
            fh.write(f"{s},{p},{n}\n")
    return {"records": len(records), "stats": stats.to_dict() if stats else None,
            "class_counts": {f"{s}:{p}": n for s, p, n in rows},
            "outputs": [str(out / "classified.csv"), str(out / "class_counts.csv")]}


def _enrich(records, cfg: RunConfig, threads: int):
    if not cfg.geo:
        raise ConfigError("enrich needs a 'geo' section in the config")
    enricher, cache_path = _geo_enricher(cfg, threads)
    enriched = enricher.fit(records).transform(records)
    errors = {ip: e for ip, e in enricher.results_.items() if isinstance(e, ResolverError)}
    for ip, e in sorted(errors.items())[:20]:
        _log(f"geo lookup failed for {ip}: {e}")
    return enriched, enricher, cache_path


def cmd_enrich(inputs, cfg: RunConfig, out: Path, args) -> dict:
    records, _ = load_classified(inputs, cfg, args.threads)
    enriched, enricher, cache_path = _enrich(records, cfg, args.threads)
    write_records(out / "enriched.csv", enriched, enriched=True)
    cache_path = cache_path or out / "geo_cache.csv"
    enricher.cache_.save(cache_path)
    n_invalid = sum(1 for r in enriched if r.isp is None)
    return {"records": len(enriched), "distinct_ips": len(enricher.results_),
            "lookup_errors": enricher.n_errors_, "records_without_geo": n_invalid,
            "outputs": [str(out / "enriched.csv"), str(cache_path)]}


def cmd_report(inputs, cfg: RunConfig, out: Path, args) -> dict:
    records, _ = load_classified(inputs, cfg, args.threads)
    if cfg.geo and records and not hasattr(records[0], "isp"):
        records, enricher, cache_path = _enrich(records, cfg, args.threads)
        if cache_path:
            enricher.cache_.save(cache_path)
    include_local = args.include_local or bool(cfg.report.get("include_local", False))
    plot_data = args.plot_data or bool(cfg.report.get("plot_data", False))
    report = build_report(records, include_local=include_local)
    written = write_report(report, out, plot_data=plot_data)
    return {"records": len(records), "hit_rates": report["hit_rates"]["all"],
            "outputs": [str(p) for p in written]}


_OFFSET_RE = re.compile(r"([+-])([0-9]{2}):?([0-9]{2})")


def parse_offset(text: str) -> timezone:
    m = _OFFSET_RE.fullmatch(text)
    if m is None or int(m.group(2)) > 23 or int(m.group(3)) > 59:
        raise ConfigError(f"bad UTC offset {text!r}; expected e.g. +0700")
    delta = timedelta(hours=int(m.group(2)), minutes=int(m.group(3)))
    return timezone(-delta if m.group(1) == "-" else delta)


def cmd_simulate(inputs, cfg: RunConfig, out: Path, args) -> dict:
    tz = parse_offset(args.utc_offset)
    kinds = {input_kind(p) for p in inputs}
    logged = None
    if kinds == {"events"}:
        events = []
        for p in inputs:
            events += read_events(p)
    elif kinds == {"log"}:
        df, _ = scan_files(inputs, args.threads)
        records = frame.to_records(df)
        if args.sort:
            records.sort(key=lambda r: r.timestamp)
        events = events_from_records(records, cfg.patterns)
        logged = [r.status for r in records]
    else:
        raise InputError("simulate inputs must be all event CSVs or all log files")
    if args.sort and logged is None:
        events.sort(key=lambda e: e.time)
    try:
        result = replay(events, cfg.topology, check_invariants=args.check_invariants)
    except ReplayError as exc:
        raise InputError(f"event {exc.index}: {exc} (use --sort to order by time)") from None
    sim_records = outcomes_to_records(events, result.outcomes, tz)
    with atomic_write(out / "simulated.log") as fh:
        for r in sim_records:
            fh.write(format_record(r))
            fh.write("\n")
    summary = result.summary()
    summary["hit_rates"] = HitRateReport.from_counts(result.counts).to_dict()
    summary["topology"] = cfg.topology.to_dict()
    if logged is not None:
        summary["agreement_with_log"] = compare(result.outcomes, logged).to_dict()
    with atomic_write(out / "sim_summary.json") as fh:
        json.dump(summary, fh, indent=1, default=str)
        fh.write("\n")
    return {"events": len(events), "hit_rates": summary["hit_rates"],
            "outputs": [str(out / "simulated.log"), str(out / "sim_summary.json")]}


def cmd_generate(inputs, cfg: RunConfig, out: Path, args) -> dict:
    try:
        wl = dict(cfg.workload)
        seed = args.seed if args.seed is not None else cfg.seed
        if seed is not None:
            wl["seed"] = seed
        if args.requests_per_day is not None:
            wl["requests_per_day"] = args.requests_per_day
        if args.days is not None:
            wl["days"] = args.days
        workload = WorkloadConfig.from_dict(wl)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"workload: {exc}") from None
    trace = gen_trace(workload)
    paths = trace.write(out)
    return {"events": len(trace.events), "class_counts": trace.ledger["class_counts"],
            "outputs": [str(p) for p in paths.values()]}


COMMANDS = {
    "clean": (cmd_clean, "parse and validate logs, write canonical lines and rejection stats"),
    "classify": (cmd_classify, "label records by service and packaging"),
    "enrich": (cmd_enrich, "join records with ISP and location"),
    "report": (cmd_report, "hit rates, latency, time series, MIME and size reports"),
    "simulate": (cmd_simulate, "replay requests through the edge/regional cache hierarchy"),
    "generate": (cmd_generate, "synthesize a request trace with a ground-truth ledger"),
}
NEEDS_INPUT = {"clean", "classify", "enrich", "report", "simulate"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdnlog", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        if name in NEEDS_INPUT:
            sp.add_argument("inputs", nargs="*", help="input files (.gz ok); default: config inputs")
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default: config 'out' or ./out)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads for file-level parallelism")
        if name == "report":
            sp.add_argument("--include-local", action="store_true",
                            help="count LOCAL requests as hits in the system rate")
            sp.add_argument("--plot-data", action="store_true",
                            help="also write narrow CSVs shaped for plotting")
        if name == "simulate":
            sp.add_argument("--utc-offset", default="+0700",
                            help="offset for simulated log timestamps (default +0700)")
            sp.add_argument("--sort", action="store_true",
                            help="sort inputs by time instead of rejecting out-of-order events")
            sp.add_argument("--check-invariants", action="store_true",
                            help="verify cache accounting after every event (slow)")
        if name == "generate":
            sp.add_argument("--requests-per-day", type=float)
            sp.add_argument("--days", type=int)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        cfg.check_paths()
        if args.threads is None:
            args.threads = cfg.threads
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        out = Path(args.out) if args.out else (cfg.out or Path("out"))
        inputs = []
        if args.command in NEEDS_INPUT:
            inputs = check_inputs(args.inputs or cfg.inputs)
        out.mkdir(parents=True, exist_ok=True)
        summary = fn(inputs, cfg, out, args)
    except ConfigError as exc:
        _log(f"cdnlog {args.command}: config error: {exc}")
        return 2
    except (InputError, EventFileError, TableError, GeoFileError) as exc:
        _log(f"cdnlog {args.command}: input error: {exc}")
        return 1
    except OSError as exc:
        _log(f"cdnlog {args.command}: input error: {exc}")
        return 1
    print(json.dumps({"command": args.command, **summary}, default=str))
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
