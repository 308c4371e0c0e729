"""The columnar engine must agree with the row-wise parser line for line."""
import random

import polars as pl
from hypothesis import given
from hypothesis import strategies as st

from conftest import MIXED_LINES, log_records
from cdnlog import frame
from cdnlog.classify import (DEFAULT_PATTERNS, PatternConfig, classify_stream)
from cdnlog.logline import clean_stream, format_record


def check_equivalent(lines):
    df, stats = frame.scan_lines(lines)
    records, expected = clean_stream(lines)
    assert stats == expected
    assert frame.to_records(df) == records
    return df


def test_mixed_lines():
    df = check_equivalent(MIXED_LINES)
    assert frame.format_lines(df).to_list() == [
        format_record(r) for r in clean_stream(MIXED_LINES)[0]]


def test_empty():
    df, stats = frame.scan_lines([])
    assert df.height == 0 and stats.total_lines == 0
    assert frame.scan_text("")[0].height == 0


def test_split_lines_final_newline():
    assert frame.split_lines("a\nb\n") == ["a", "b"]
    assert frame.split_lines("a\n\nb") == ["a", "", "b"]


def test_odd_but_valid_lines_take_slow_path():
    lines = [
        "0.1, 2001:db8::1, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 1",
        " 0.1 ,  1.2.3.4 , HIT, [03/Dec/2018:00:00:00 +0700], /a b.ts , 2",
        "0.1, 01.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 3",
        "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00, -0930], /a[1].ts, 4",
        "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts, 99999999999999999999",
        "0.1, 1.2.3.4, HIT, [03/Dec/2018:00:00:00 +0700], /a.ts\x1f, 5",
        "0.1, 1.2.3.4, HIT, [31/Apr/2018:00:00:00 +0700], /a.ts, 5",
    ]
    check_equivalent(lines)


MUTATIONS = [", ", ",", " ", "[", "]", "-", ".", "0", "9", "x", "\t", "\r", ":", "+", "\x1c"]


def mutate(line, rng):
    chars = list(line)
    for _ in range(rng.randint(1, 3)):
        i = rng.randrange(len(chars) + 1)
        op = rng.random()
        if op < 0.4 and chars:
            del chars[min(i, len(chars) - 1)]
        elif op < 0.8:
            chars.insert(i, rng.choice(MUTATIONS))
        elif chars:
            chars[min(i, len(chars) - 1)] = rng.choice(MUTATIONS)
    return "".join(chars)


def test_fuzzed_lines_agree():
    rng = random.Random(42)
    base = [MIXED_LINES[1], MIXED_LINES[3],
            "12.345, 200.1.2.3, HIT1, [01/Jan/2019:23:59:59 -0000], /vod/x.mpd, 9",
            "0.5, 1.2.3.4, -, [15/Jun/2020:12:00:00 +1400], /live/ch1/a.m3u8, 100"]
    lines = []
    for _ in range(5000):
        line = rng.choice(base)
        lines.append(mutate(line, rng) if rng.random() < 0.7 else line)
    check_equivalent(lines)


@given(st.lists(log_records(), max_size=20))
def test_generated_records_agree(records):
    lines = [format_record(r) for r in records]
    df = check_equivalent(lines)
    assert frame.format_lines(df).to_list() == lines


@given(st.lists(st.text(max_size=50), max_size=20))
def test_arbitrary_text_agrees(lines):
    lines = [x.replace("\n", "") for x in lines]
    check_equivalent(lines)


def test_classify_frame_matches_row_wise():
    lines = [
        "0.1, 1.1.1.1, MISS, [03/Dec/2018:00:00:00 +0700], /tv/a.ts, 1",
        "0.1, 1.1.1.1, HIT, [03/Dec/2018:00:00:01 +0700], /tv/a.ts, 1",
        "0.1, 1.1.1.1, HIT, [03/Dec/2018:00:00:01 +0700], /LIVE/b.m3u8, 1",
        "0.1, 1.1.1.1, HIT1, [03/Dec/2018:00:00:01 +0700], /vod/c.DASH, 1",
        "0.1, 1.1.1.1, MISS, [03/Dec/2018:00:00:01 +0700], /web/d.png, 1",
        "0.1, 1.1.1.1, -, [03/Dec/2018:00:00:01 +0700], /web/noext, 1",
        "0.1, 1.1.1.1, -, [03/Dec/2018:00:00:01 +0700], /web.ts/dir, 1",
    ]
    for cfg in (DEFAULT_PATTERNS, PatternConfig(live_patterns=("kplus",),
                                                streaming_extensions=("ts", ".mpd"))):
        df, _ = frame.scan_lines(lines)
        got = list(frame.iter_classified(frame.classify_frame(df, cfg)))
        want, counts = classify_stream(clean_stream(lines)[0], cfg)
        assert got == want
        assert frame.class_counts(frame.classify_frame(df, cfg)) == counts


def test_identity_normalization_matches():
    token = "38f16b08fdbe2b3e7a0c672c7a154377"
    lines = [
        f"0.1, 1.1.1.1, MISS, [03/Dec/2018:00:00:00 +0700], /{token}/tv/a.ts, 1",
        f"0.1, 1.1.1.1, HIT, [03/Dec/2018:00:00:00 +0700], /{token[::-1]}/tv/a.ts, 1",
    ]
    cfg = PatternConfig(normalize_identity=True)
    df, _ = frame.scan_lines(lines)
    got = frame.classify_frame(df, cfg).get_column("packaging").to_list()
    want = [r.packaging.value for r in classify_stream(clean_stream(lines)[0], cfg)[0]]
    assert got == want == ["NonPackaged", "NonPackaged"]


def test_records_to_frame_round_trip():
    records = clean_stream(MIXED_LINES)[0]
    assert frame.to_records(frame.records_to_frame(records)) == records
    assert frame.records_to_frame(records).schema == pl.Schema(frame.SCHEMA)
