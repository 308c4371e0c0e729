import json
import math

import numpy as np
import pytest

from oracles import zipf_pmf
from cdnlog.classify import ServiceClass, classify_service
from cdnlog.generate import (DEFAULT_CLASS_MIX, DEFAULT_HOURLY_WEIGHTS, REFERENCE_CLASS_COUNTS,
                             LogNormalSizeModel, WorkloadConfig, ZipfSampler, class_key,
                             fit_lognormal, gen_arrivals, gen_trace, zipf_sample)
from cdnlog.metrics import MIME_CLASSES, mime_breakdown
from cdnlog.simulate import read_events

LIVE_Q = (0.03936665, 0.075, 0.12234965)


def test_fit_lognormal_live():
    mu, sigma = fit_lognormal(*LIVE_Q)
    assert mu == math.log(0.075)
    assert mu == pytest.approx(-2.5903, abs=1e-4)
    assert sigma == pytest.approx(0.8406, abs=1e-4)


def test_fit_lognormal_symmetric():
    q1, q3 = 0.5, 8.0
    mu, sigma = fit_lognormal(q1, math.sqrt(q1 * q3), q3)
    z = 0.674489750196082
    assert (mu - math.log(q1)) / z == pytest.approx(sigma)
    assert (math.log(q3) - mu) / z == pytest.approx(sigma)


@pytest.mark.parametrize("q", [(1, 1, 1), (2, 1, 3), (0, 1, 2), (1, 3, 2)])
def test_fit_lognormal_rejects(q):
    with pytest.raises(ValueError):
        fit_lognormal(*q)


def test_size_model_quartiles_within_ten_percent():
    m = LogNormalSizeModel().fit(LIVE_Q)
    draws = m.sample(1_000_000, np.random.default_rng(0))
    got = np.quantile(draws, [0.25, 0.5, 0.75])
    for g, t in zip(got, LIVE_Q):
        assert abs(g - t) / t < 0.10


def test_zipf_pmf_oracle():
    assert ZipfSampler(5, 0).pmf.tolist() == pytest.approx([0.2] * 5)
    assert ZipfSampler(2, 1).pmf.tolist() == pytest.approx([2 / 3, 1 / 3])
    assert ZipfSampler(1000, 0.8).pmf.tolist() == pytest.approx(zipf_pmf(1000, 0.8), rel=1e-12)


def test_zipf_empirical_l1_at_noise_floor():
    # A perfect sampler's expected L1 error is about sqrt(2 / (pi N)) * sum(sqrt(p)).
    n, N = 1000, 1_000_000
    pmf = np.asarray(zipf_pmf(n, 0.8))
    draws = ZipfSampler(n, 0.8).sample(np.random.default_rng(1), N)
    assert draws.min() >= 1 and draws.max() <= n
    counts = np.bincount(draws, minlength=n + 1)[1:]
    floor = math.sqrt(2 / (math.pi * N)) * np.sqrt(pmf * (1 - pmf)).sum()
    assert np.abs(counts / N - pmf).sum() < 1.15 * floor
    chi2 = ((counts - N * pmf) ** 2 / (N * pmf)).sum()
    assert chi2 < 1142.85  # 999 degrees of freedom, p = 0.001


def test_zipf_l1_below_one_percent_with_ten_million_draws():
    sampler = ZipfSampler(1000, 0.8)
    rng = np.random.default_rng(2)
    counts = np.zeros(1001, dtype=np.int64)
    for _ in range(10):
        counts += np.bincount(sampler.sample(rng, 1_000_000), minlength=1001)
    emp = counts[1:] / counts.sum()
    assert np.abs(emp - np.asarray(zipf_pmf(1000, 0.8))).sum() < 0.01


def test_zipf_sample_deterministic():
    a = [zipf_sample(50, 1.1, np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1 and 1 <= a[0] <= 50


def hourly_counts(times_ms, cfg):
    start = cfg.start_dt
    local_hours = ((times_ms - round(start.timestamp() * 1000)) // 3_600_000 + start.hour) % 24
    return np.bincount(local_hours, minlength=24)


def test_default_profile_peaks_in_evening():
    assert int(np.argmax(DEFAULT_HOURLY_WEIGHTS)) in (19, 20, 21)
    cfg = WorkloadConfig(seed=2, days=3, requests_per_day=200_000)
    counts = hourly_counts(gen_arrivals(cfg, np.random.default_rng(2)), cfg)
    assert int(np.argmax(counts)) in (19, 20, 21)
    night = counts[3:6].max()
    assert night > counts[0:3].max() and night > counts[6:9].max()


def test_flat_profile_within_three_sigma():
    cfg = WorkloadConfig(requests_per_day=240_000, hourly_weights=[1] * 24)
    counts = hourly_counts(gen_arrivals(cfg, np.random.default_rng(4)), cfg)
    assert np.all(np.abs(counts - 10_000) < 3 * math.sqrt(10_000) + 1)


def test_zero_weight_hour_is_empty_and_sorted():
    w = [1.0] * 24
    w[5] = 0.0
    cfg = WorkloadConfig(requests_per_day=50_000, hourly_weights=w)
    times = gen_arrivals(cfg, np.random.default_rng(5))
    assert hourly_counts(times, cfg)[5] == 0
    assert np.all(np.diff(times) >= 0)


def test_default_mix_from_reference_counts():
    assert sum(REFERENCE_CLASS_COUNTS.values()) == 298_347_121
    assert math.fsum(DEFAULT_CLASS_MIX.values()) == pytest.approx(1, abs=1e-12)
    assert DEFAULT_CLASS_MIX[(ServiceClass.LIVE, False)] == pytest.approx(0.5118, abs=1e-4)
    live = sum(v for (s, _), v in DEFAULT_CLASS_MIX.items() if s is ServiceClass.LIVE)
    assert live > 0.945


def test_config_validation():
    with pytest.raises(ValueError):
        WorkloadConfig(class_mix={"LiveStreaming:NonPackaged": 0.5})
    with pytest.raises(ValueError):
        WorkloadConfig(hourly_weights=[0] * 24)
    with pytest.raises(ValueError):
        WorkloadConfig(catalog_size={"Website:NonPackaged": 0})
    with pytest.raises(ValueError):
        WorkloadConfig(start="2018-12-03T00:00:00")
    with pytest.raises(ValueError):
        WorkloadConfig.from_dict({"sede": 1})
    cfg = WorkloadConfig(seed=9, requests_per_day=10)
    assert WorkloadConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()


def test_trace_ledger_self_consistent():
    tr = gen_trace(WorkloadConfig(seed=3, requests_per_day=20_000))
    contents = tr.ledger["contents"]
    for path, info in contents.items():
        assert classify_service(path).value == info["service"]
    for e in tr.events:
        assert contents[e.content]["packaged"] == e.packaged
        assert contents[e.content]["size_bytes"] == e.size_bytes
    assert sum(tr.ledger["class_counts"].values()) == len(tr.events) == tr.ledger["n_requests"]
    assert set(tr.ledger["clients"]) >= {e.client_ip for e in tr.events}


def test_same_seed_byte_identical(tmp_path):
    cfg = WorkloadConfig(seed=11, requests_per_day=5000)
    a = gen_trace(cfg).write(tmp_path / "a")
    b = gen_trace(WorkloadConfig(seed=11, requests_per_day=5000)).write(tmp_path / "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
    c = gen_trace(WorkloadConfig(seed=12, requests_per_day=5000)).write(tmp_path / "c")
    assert a["events"].read_bytes() != c["events"].read_bytes()
    assert len(read_events(a["events"])) > 0


@pytest.mark.slow
def test_class_fractions_at_a_million():
    cfg = WorkloadConfig(seed=21, requests_per_day=1_000_000)
    tr = gen_trace(cfg)
    n = len(tr.events)
    for k, p in cfg.class_mix.items():
        got = tr.ledger["class_counts"][class_key(*k)] / n
        assert abs(got - p) < 0.01


def test_mime_fractions_match_ledger_expectation():
    tr = gen_trace(WorkloadConfig(seed=5, requests_per_day=200_000))

    class R:
        def __init__(self, e):
            self.content_path, self.size_bytes = e.content, e.size_bytes

    got = mime_breakdown([R(e) for e in tr.events]).request_fraction
    want = tr.ledger["expected_mime_request_fractions"]
    assert sum(abs(got[m] - want[m]) for m in MIME_CLASSES) < 0.01
