import random
from datetime import timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import NaiveLRU, fnv1a64_reference, naive_hierarchy
from cdnlog._hashing import fnv1a64
from cdnlog.classify import ServiceClass
from cdnlog.logline import HitStatus, clean_stream, format_record
from cdnlog.simulate import (CacheHierarchy, CacheNode, EventFileError, LatencyModel, Level,
                             ReplayError, RequestEvent, TopologyConfig, compare,
                             events_from_records, outcomes_to_records, read_events, replay,
                             route_edge, write_events)

LIVE = ServiceClass.LIVE


def ev(t, content, ip="1.1.1.1", size=1, packaged=False, service=LIVE):
    return RequestEvent(t, ip, content, size, service, packaged)


def test_fnv_known_value():
    assert fnv1a64("a") == 12638187200555641996
    assert fnv1a64("") == 14695981039346656037
    assert fnv1a64("118.68.222.40") == fnv1a64_reference(b"118.68.222.40")


def test_fnv_spreads_ips_evenly():
    n_edges = 4
    counts = [0] * n_edges
    for i in range(20_000):
        counts[route_edge(f"10.{i // 256 % 256}.{i % 256}.{i // 65536}", TopologyConfig(n_edges=n_edges))] += 1
    expected = 20_000 / n_edges
    chi2 = sum((c - expected) ** 2 / expected for c in counts)
    assert chi2 < 16.27  # p = 0.001, 3 degrees of freedom


def test_lru_example():
    node = CacheNode(2)
    got = []
    for k in "abac":
        hit = node.access(k, 1, 0)
        if not hit:
            node.insert(k, 1, 0)
        got.append(hit)
    assert got == [False, False, True, False]
    assert node.resident() == ["a", "c"]


def test_ttl_example():
    node = CacheNode(100)
    node.insert("x", 1, 0)
    assert node.access("x", 1, 60, ttl=60)
    node2 = CacheNode(100)
    node2.insert("x", 1, 0)
    assert not node2.access("x", 1, 61, ttl=60)
    assert node2.expirations == 1


def test_ttl_access_mode_refreshes():
    node = CacheNode(100, ttl_mode="access")
    node.insert("x", 1, 0)
    assert node.access("x", 1, 50, ttl=60)
    assert node.access("x", 1, 100, ttl=60)
    assert not node.access("x", 1, 161, ttl=60)


def test_oversized_object_bypasses():
    node = CacheNode(10)
    assert node.insert("big", 11, 0) == []
    assert not node.access("big", 11, 0)
    assert node.used_bytes == 0 and node.bypasses == 1


def random_trace(rng, n, n_contents, sizes, t_step):
    out, t = [], 0.0
    size_of = {f"c{i}": rng.choice(sizes) for i in range(n_contents)}
    for _ in range(n):
        t += rng.choice(t_step)
        c = f"c{rng.randrange(n_contents)}"
        out.append((c, size_of[c], t))
    return out


@pytest.mark.parametrize("seed", range(40))
def test_cache_node_matches_naive_lru(seed):
    rng = random.Random(seed)
    cap = rng.randint(1, 10)
    ttl = rng.choice([0, 0, 5, 20])
    mode = rng.choice(["insert", "access"])
    sizes = [1] if seed % 2 else [1, 2, 3]
    trace = random_trace(rng, rng.randint(1, 1000), rng.randint(1, 30), sizes, [0, 1, 2, 7])
    fast, slow = CacheNode(cap, mode), NaiveLRU(cap, mode)
    for c, size, t in trace:
        a = fast.access(c, size, t, ttl)
        b = slow.access(c, size, t, ttl)
        assert a == b
        if not a:
            fast.insert(c, size, t)
            slow.insert(c, size, t)
        fast.check_invariants()
        assert fast.resident() == [e[0] for e in sorted(slow.entries, key=lambda e: e[4])]


@pytest.mark.parametrize("seed", range(30))
def test_replay_matches_naive_hierarchy(seed):
    rng = random.Random(1000 + seed)
    ttl = rng.choice([0, 0, 10])
    cfg = TopologyConfig(n_edges=rng.randint(1, 3), n_regionals=rng.randint(1, 2),
                         edge_capacity_bytes=rng.randint(1, 5),
                         regional_capacity_bytes=rng.randint(1, 10),
                         ttl_by_service={LIVE: ttl})
    trace = random_trace(rng, rng.randint(1, 800), rng.randint(1, 25), [1, 2], [0, 1, 3])
    ips = [f"10.0.0.{i}" for i in range(6)]
    packaged = {f"c{i}" for i in range(25) if rng.random() < 0.3}
    events = [ev(t, c, rng.choice(ips), size, c in packaged) for c, size, t in trace]
    got = [o.status.value for o in replay(events, cfg, check_invariants=True).outcomes]
    want = naive_hierarchy(events, cfg.n_edges, cfg.n_regionals, cfg.edge_capacity_bytes,
                           cfg.regional_capacity_bytes, cfg.ttl_by_service)
    assert got == want


def test_cold_start_and_packaged():
    r = replay([ev(0, "a"), ev(1, "a"), ev(2, "p", packaged=True), ev(3, "p", packaged=True)])
    assert r.statuses == [HitStatus.MISS, HitStatus.HIT, HitStatus.HIT1, HitStatus.HIT]


def test_packaged_always_hit_at_edge_flag():
    cfg = TopologyConfig(packaged_always_hit_at_edge=True)
    r = replay([ev(0, "p", packaged=True)], cfg)
    assert r.statuses == [HitStatus.HIT]
    assert r.outcomes[0].latency_seconds == cfg.latency.latency(Level.EDGE, 1)


def test_regional_hit_from_other_edge():
    cfg = TopologyConfig(n_edges=2)
    ips = {}
    for i in range(50):
        ips.setdefault(route_edge(f"9.9.9.{i}", cfg), f"9.9.9.{i}")
    r = replay([ev(0, "a", ips[0]), ev(1, "a", ips[1])], cfg)
    assert r.statuses == [HitStatus.MISS, HitStatus.HIT1]


def test_client_cache_gives_local():
    cfg = TopologyConfig(n_edges=1, client_cache_bytes=10)
    r = replay([ev(0, "a"), ev(1, "a"), ev(2, "a", ip="2.2.2.2")], cfg)
    assert r.statuses == [HitStatus.MISS, HitStatus.LOCAL, HitStatus.HIT]


def test_latency_ordering():
    lat = LatencyModel()
    sizes = [0, 1000, 10**6]
    for s in sizes:
        vals = [lat.latency(level, s) for level in Level]
        assert vals == sorted(vals)
    with pytest.raises(ValueError):
        LatencyModel(t_edge=1.0, t_regional=0.5)


def test_out_of_order_rejected():
    with pytest.raises(ReplayError) as e:
        replay([ev(5, "a"), ev(4, "a")])
    assert e.value.index == 1


def test_warmup_and_estimator():
    warm = [ev(0, "a")]
    r = replay([ev(1, "a")], warmup=warm)
    assert r.statuses == [HitStatus.HIT]
    h = CacheHierarchy(n_edges=2).fit(warm)
    assert h.predict([ev(1, "a")]) == [HitStatus.HIT]
    assert h.predict([ev(1, "a")]) == [HitStatus.HIT]  # fitted state is not mutated
    assert clone(h).get_params()["n_edges"] == 2
    assert h.score([ev(1, "a")], [HitStatus.HIT]) == 1.0


def test_compare_confusion():
    rep = compare([HitStatus.MISS, HitStatus.HIT], [HitStatus.MISS, HitStatus.HIT1])
    assert rep.agreement == 0.5
    assert rep.confusion[(HitStatus.HIT, HitStatus.HIT1)] == 1
    with pytest.raises(ValueError):
        compare([HitStatus.MISS], [])


def test_config_validation():
    with pytest.raises(ValueError):
        TopologyConfig(n_edges=0)
    with pytest.raises(ValueError):
        TopologyConfig(ttl_by_service={"LiveStreaming": -1})
    with pytest.raises(ValueError):
        TopologyConfig.from_dict({"n_edge": 3})
    cfg = TopologyConfig.from_dict({"ttl_by_service": {"Website": 30},
                                    "latency": {"t_edge": 0.001}})
    assert cfg.ttl_by_service[ServiceClass.WEBSITE] == 30.0
    assert TopologyConfig.from_dict(cfg.to_dict()) == cfg


def test_event_file_round_trip(tmp_path):
    events = [ev(1.5, "/a,b.ts", size=10), ev(2.0, "/p", packaged=True)]
    p = tmp_path / "e.csv"
    write_events(p, events)
    assert read_events(p) == events
    p.write_text("time_unix_ms,ip,path,size,service,packaged\n1,1.1.1.1,/a,x,LiveStreaming,0\n")
    with pytest.raises(EventFileError) as e:
        read_events(p)
    assert e.value.line == 2


def test_simulated_log_is_classifiable():
    events = [ev(1543770000 + i, "/tv/a.ts") for i in range(3)]
    r = replay(events)
    recs = outcomes_to_records(events, r.outcomes, timezone(timedelta(hours=7)))
    lines = [format_record(x) for x in recs]
    parsed, stats = clean_stream(lines)
    assert stats.rejected == 0 and parsed == recs
    assert events_from_records(parsed)[0].packaged is False


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 4), st.booleans()), max_size=200),
       st.integers(1, 8), st.integers(1, 12))
def test_hierarchy_invariants(items, edge_cap, reg_cap):
    cfg = TopologyConfig(n_edges=2, n_regionals=2, edge_capacity_bytes=edge_cap,
                         regional_capacity_bytes=reg_cap)
    pk = {c: p for c, _, p in items}
    events = [ev(i, f"c{c}", f"1.1.1.{i % 3}", s, pk[c]) for i, (c, s, _) in enumerate(items)]
    out = replay(events, cfg, check_invariants=True).outcomes
    seen = set()
    for e, o in zip(events, out):
        if e.packaged:
            assert o.status is not HitStatus.MISS
        elif e.content not in seen:
            assert o.status is HitStatus.MISS
        seen.add(e.content)
