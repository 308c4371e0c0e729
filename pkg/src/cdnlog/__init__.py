"""CDN access-log analytics and trace-driven hierarchical cache simulation."""
from .classify import (ClassifiedRecord, PackagingClass, PatternConfig, RecordClassifier,
                       ServiceClass, classify_stream)
from .generate import WorkloadConfig, gen_trace
from .geoip import INVALID, GeoCache, GeoEnricher, GeoInfo, SynonymTable, lookup, normalize
from .logline import HitStatus, LogRecord, ParseError, clean_stream, format_record, parse_line
from .metrics import HitCounts, HitRateReport, box_stats, hit_rates, latency_summary
from .simulate import CacheHierarchy, RequestEvent, TopologyConfig, replay

__version__ = "0.1.0"

__all__ = [
    "ClassifiedRecord", "PackagingClass", "PatternConfig", "RecordClassifier", "ServiceClass",
    "classify_stream", "WorkloadConfig", "gen_trace", "INVALID", "GeoCache", "GeoEnricher",
    "GeoInfo", "SynonymTable", "lookup", "normalize", "HitStatus", "LogRecord", "ParseError",
    "clean_stream", "format_record", "parse_line", "HitCounts", "HitRateReport", "box_stats",
    "hit_rates", "latency_summary", "CacheHierarchy", "RequestEvent", "TopologyConfig", "replay",
]
