import os
import sys
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from cdnlog.logline import HitStatus, LogRecord  # noqa: E402

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# The four example lines of wrong/right records; rows 1 and 3 are malformed.
MIXED_LINES = [
    "0.017, 118.69.133.153, -, [03/Dec/2018:00:00:00 +0700], /img_songs/Nonstop, TONNY",
    "0.136, 118.68.222.40, MISS, [03/Dec/2018:00:00:00 +0700], "
    "/38f16b08fd/dongthap1tv-mid-5803464.ts, 437664",
    "0.019, 118.69.133.153, -, [03/Dec/2018:00:00:00 +0700], /img_songs/Nonstop, ",
    "0.000, 1.52.122.25, HIT, [03/Dec/2018:00:00:00, +0700], "
    "/live/prod_kplus_pm_hd-audio_vie=56000-video=2499968.m3u8, 0",
]


@pytest.fixture
def mixed_lines():
    return list(MIXED_LINES)


ipv4 = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: ".".join(map(str, t)))
ipv6 = st.integers(0, (1 << 128) - 1).map(
    lambda n: str(__import__("ipaddress").IPv6Address(n)))
offsets = st.integers(-23 * 60 - 59, 23 * 60 + 59).map(lambda m: timezone(timedelta(minutes=m)))
timestamps = st.builds(
    lambda dt, tz: dt.replace(tzinfo=tz),
    st.datetimes(min_value=datetime(1000, 1, 1), max_value=datetime(9999, 12, 31)), offsets,
).map(lambda d: d.replace(microsecond=0))
path_chars = st.characters(blacklist_categories=("Cs",), blacklist_characters="[]\n\r")
paths = st.text(path_chars, min_size=1, max_size=40).map(lambda p: "/" + p.strip().replace(", ", "_"))
latencies = st.integers(0, 10**12 - 1).map(lambda ms: ms / 1000)


@st.composite
def log_records(draw):
    return LogRecord(draw(latencies), draw(st.one_of(ipv4, ipv6)),
                     draw(st.sampled_from(list(HitStatus))), draw(timestamps),
                     draw(paths), draw(st.integers(0, (1 << 63) - 1)))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
