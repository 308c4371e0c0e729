import math
import random
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import count_statuses, five_numbers, rates_oracle
from cdnlog.classify import ClassifiedRecord, PackagingClass, ServiceClass
from cdnlog.logline import HitStatus
from cdnlog.metrics import (MIME_CLASSES, HitCounts, HitRateReport, QuantileAccumulator,
                            box_stats, hit_counts, hit_rates, latency_summary, merge,
                            mime_breakdown, mime_class, mime_tally, request_counts,
                            size_distribution, time_series, time_series_tally)

ICT = timezone(timedelta(hours=7))
T0 = datetime(2018, 12, 3, tzinfo=ICT)


def crec(status=HitStatus.HIT, latency=0.1, size=100, path="/a.ts", ts=T0,
         service=ServiceClass.LIVE):
    return ClassifiedRecord(latency, "1.2.3.4", status, ts, path, size, service,
                            PackagingClass.NON_PACKAGED)


def random_records(n, seed=0):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        out.append(crec(rng.choice(list(HitStatus)), rng.randrange(0, 100_000) / 1000,
                        rng.randrange(0, 10**7), rng.choice(["/a.ts", "/b.m3u8", "/c.png", "/d"]),
                        T0 + timedelta(seconds=rng.randrange(0, 3 * 86400)),
                        rng.choice(list(ServiceClass))))
    return out


def test_hit_rates_example():
    r = HitRateReport.from_counts(HitCounts(n_miss=1, n_hit=8, n_hit1=1))
    assert (r.edge_rate, r.regional_rate, r.system_rate) == (0.8, 0.5, 0.9)
    assert r.edge_rate + (1 - r.edge_rate) * r.regional_rate == pytest.approx(0.9, abs=1e-12)


def test_all_local_is_undefined():
    r = hit_rates([crec(HitStatus.LOCAL)] * 3)["all"]
    assert r.edge_rate is None and r.regional_rate is None and r.system_rate is None
    assert r.counts.n_local == 3


def test_include_local():
    r = HitRateReport.from_counts(HitCounts(1, 1, 0, 2), include_local=True)
    assert r.system_rate == 3 / 4
    assert r.edge_rate == 0.5


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        HitCounts(-1, 0, 0, 0)


def test_hit_rates_match_counting_oracle():
    records = random_records(10_000, seed=1)
    got = hit_rates(records, "service")
    for svc in ServiceClass:
        m, h, h1, loc = count_statuses(r.status.value for r in records if r.service is svc)
        rep = got[svc]
        assert (rep.counts.n_miss, rep.counts.n_hit, rep.counts.n_hit1, rep.counts.n_local) == (m, h, h1, loc)
        assert (rep.edge_rate, rep.regional_rate, rep.system_rate) == rates_oracle(m, h, h1)


@given(st.integers(0, 10**9), st.integers(0, 10**9), st.integers(0, 10**9), st.integers(0, 10**9))
def test_identity_property(m, h, h1, loc):
    r = HitRateReport.from_counts(HitCounts(m, h, h1, loc))
    if None not in (r.edge_rate, r.regional_rate, r.system_rate):
        assert abs(r.system_rate - (r.edge_rate + (1 - r.edge_rate) * r.regional_rate)) <= 1e-12


def test_geo_groups_skip_missing():
    from cdnlog.geoip import EnrichedRecord
    a = EnrichedRecord(*crec(), "FPT", "Ha Noi", "Vietnam")
    b = EnrichedRecord(*crec(), None, None, None)
    assert set(hit_counts([a, b], "isp")) == {"FPT"}
    assert request_counts([a, b, a], "province") == {"Ha Noi": 2}
    with pytest.raises(ValueError):
        hit_counts([a], "planet")


def test_box_stats_small():
    b = box_stats([1, 2, 3, 4, 5])
    assert (b.lower_whisker, b.q1, b.median, b.q3, b.upper_whisker, b.mean) == (1, 2, 3, 4, 5, 3)
    b = box_stats([0.437664])
    assert {b.lower_whisker, b.q1, b.median, b.q3, b.upper_whisker} == {0.437664}


def test_box_stats_whiskers_exclude_outliers():
    b = box_stats([1, 2, 3, 4, 100])
    assert b.upper_whisker == 4 and b.lower_whisker == 1


def test_box_stats_matches_sort_oracle():
    rng = np.random.default_rng(5)
    for values in (rng.lognormal(0, 2, 100_000), rng.integers(0, 50, 1001).astype(float)):
        b = box_stats(values)
        want = five_numbers(values.tolist())
        assert (b.lower_whisker, b.q1, b.median, b.q3, b.upper_whisker, b.mean) == want


def test_box_stats_empty():
    with pytest.raises(ValueError):
        box_stats([])


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=200))
def test_box_ordering_property(xs):
    b = box_stats(xs)
    assert b.lower_whisker <= b.q1 <= b.median <= b.q3 <= b.upper_whisker
    assert (b.lower_whisker, b.q1, b.median, b.q3, b.upper_whisker, b.mean) == five_numbers(xs)


def test_reservoir_fallback_is_flagged_and_deterministic():
    def run():
        acc = QuantileAccumulator(exact_limit=1000, reservoir_size=500, seed=7)
        acc.extend(float(i) for i in range(5000))
        return acc.summary()
    a, b = run(), run()
    assert a == b
    assert a.approximate and a.count == 5000 and a.mean == 2499.5
    assert abs(a.median - 2499.5) < 500


def test_latency_summary_groups():
    records = [crec(latency=x, service=s) for x, s in
               [(1, ServiceClass.LIVE), (2, ServiceClass.LIVE), (3, ServiceClass.VOD)]]
    out = latency_summary(records, "service")
    assert set(out) == {ServiceClass.LIVE, ServiceClass.VOD}
    assert out[ServiceClass.LIVE].median == 1.5


def test_size_distribution_megabytes():
    out = size_distribution([crec(size=437664)])
    assert out[ServiceClass.LIVE].median == 0.437664


def test_time_series_examples():
    recs = [crec(size=s, ts=T0 + timedelta(minutes=m)) for s, m in [(1, 1), (2, 2), (3, 3)]]
    (b,) = time_series(recs)
    assert (b.request_count, b.total_bytes) == (3, 6)
    assert b.bucket_start == T0
    edge = [crec(ts=T0.replace(minute=59, second=59)), crec(ts=T0.replace(hour=1))]
    assert len(time_series(edge)) == 2


def test_time_series_keeps_zones_apart():
    a = crec(ts=datetime(2018, 12, 3, 7, tzinfo=ICT))
    b = crec(ts=datetime(2018, 12, 3, 0, tzinfo=timezone.utc))
    buckets = time_series([a, b])
    assert len(buckets) == 2
    assert sum(x.request_count for x in buckets) == 2


def test_time_series_conserves_totals():
    records = random_records(5000, seed=2)
    buckets = time_series(records)
    assert sum(b.request_count for b in buckets) == len(records)
    assert sum(b.total_bytes for b in buckets) == sum(r.size_bytes for r in records)
    starts = [b.bucket_start for b in buckets]
    assert starts == sorted(starts) and len(set(starts)) == len(starts)
    assert all(s.minute == 0 and s.second == 0 for s in starts)


def test_mime_example():
    b = mime_breakdown([crec(path="/a.ts", size=100), crec(path="/b.m3u8", size=0)])
    assert b.request_fraction["ts"] == 0.5 and b.request_fraction["m3u8"] == 0.5
    assert b.byte_fraction["ts"] == 1.0 and b.byte_fraction["m3u8"] == 0.0


def test_mime_classes():
    assert [mime_class(p) for p in ["/a.JPG", "/b.webp", "/c.mp4", "/d.mp3", "/e", "/f.dash"]] == \
        ["image", "image", "mp4", "mp3", "other", "dash"]
    empty = mime_breakdown([])
    assert all(v is None for v in empty.request_fraction.values())


def test_mime_fractions_sum_to_one():
    b = mime_breakdown(random_records(3000, seed=4))
    assert abs(sum(b.request_fraction.values()) - 1) <= 1e-9
    assert abs(sum(b.byte_fraction.values()) - 1) <= 1e-9
    assert set(b.request_fraction) == set(MIME_CLASSES)


def test_sharded_merge_equals_single_pass():
    records = random_records(100_000, seed=9)
    shards = [records[i::4] for i in range(4)]
    assert merge(merge(hit_counts(shards[0], "service"), hit_counts(shards[1], "service")),
                 merge(hit_counts(shards[2], "service"), hit_counts(shards[3], "service"))) \
        == hit_counts(records, "service")
    tallies = [time_series_tally(s) for s in shards]
    merged = tallies[0]
    for t in tallies[1:]:
        merged = merge(merged, t)
    assert merged.buckets() == time_series(records)
    m = [mime_tally(s) for s in shards]
    assert merge(merge(m[0], m[1]), merge(m[2], m[3])) == mime_tally(records)


def test_merge_identity_and_commutativity():
    a, b = mime_tally(random_records(50, 1)), mime_tally(random_records(50, 2))
    assert merge(a, mime_tally([])) == a
    assert merge(a, b) == merge(b, a)
    x, y = HitCounts(1, 2, 3, 4), HitCounts(5, 6, 7, 8)
    assert merge(x, y) == merge(y, x) and merge(x, HitCounts()) == x
    with pytest.raises(TypeError):
        merge(1, 2)


def test_permutation_invariance():
    records = random_records(2000, seed=11)
    shuffled = records[::-1]
    assert hit_rates(records, "hour") == hit_rates(shuffled, "hour")
    assert latency_summary(records, "service") == latency_summary(shuffled, "service")
    assert time_series(records) == time_series(shuffled)
    assert math.isclose(sum(b.latency_sum for b in time_series(records)),
                        math.fsum(r.latency_seconds for r in records))
