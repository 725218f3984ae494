import io

import pytest
from hypothesis import given, settings, strategies as st

from strokelab.inkio import (FormatError, RawSample, RawTrace, SleepRecord, fmt, parse_inkml,
                             read_sleep_csv, read_traces_csv, write_sleep_csv, write_traces_csv)

NS = 'xmlns="http://www.w3.org/2003/InkML"'


def test_inkml_synthesized_time():
    traces = parse_inkml(f"<ink {NS}><trace>0 0, 1 0, 2 0</trace></ink>")
    assert len(traces) == 1
    assert [s.t for s in traces[0].samples] == [0.0, 1 / 480, 2 / 480]
    assert [s.x for s in traces[0].samples] == [0, 1, 2]


def test_inkml_empty_document():
    assert parse_inkml(f"<ink {NS}></ink>") == []


def test_inkml_declared_channels():
    doc = (f'<ink {NS}><traceFormat><channel name="X"/><channel name="Y"/><channel name="T"/></traceFormat>'
           '<trace>1 2 0.5</trace></ink>')
    s = parse_inkml(doc)[0].samples[0]
    assert (s.t, s.x, s.y) == (0.5, 1, 2)


def test_inkml_units_and_pressure():
    doc = ('<ink><traceFormat><channel name="X" units="cm"/><channel name="Y" units="cm"/>'
           '<channel name="F"/></traceFormat><trace>1 2 0.3, 2 2 0.4</trace><trace></trace></ink>')
    traces = parse_inkml(doc, source_id="doc")
    assert len(traces) == 1
    assert traces[0].samples[1].x == 20.0 and traces[0].samples[0].pressure == 0.3
    assert traces[0].stroke_id == "doc#0"


@pytest.mark.parametrize("doc", [
    "<ink><trace>0 0, 1",
    "<ink><traceFormat><channel name='Q'/></traceFormat><trace>1</trace></ink>",
    "<ink><traceFormat><channel name='X'/></traceFormat><trace>1</trace></ink>",
    "<ink><trace>0 0 0</trace></ink>",
    "<ink><trace>0 a</trace></ink>",
    "<ink><trace>0 0, '1 1</trace></ink>",
])
def test_inkml_errors(doc):
    with pytest.raises(FormatError):
        parse_inkml(doc)


def test_traces_csv_grouping():
    text = "source_id,stroke,t,x,y,pressure\na,0,0,0,0,1\na,0,1,1,0,1\na,1,2,0,0,1\na,1,3,1,1,1\n"
    traces = read_traces_csv(text)
    assert [(tr.stroke, len(tr.samples)) for tr in traces] == [(0, 2), (1, 2)]


def test_traces_csv_decreasing_time():
    text = "source_id,stroke,t,x,y,pressure\na,0,1,0,0,1\na,0,0.5,1,0,1\n"
    with pytest.raises(FormatError, match="a#0"):
        read_traces_csv(text)


def test_traces_csv_header_only_and_bad_header():
    assert read_traces_csv("source_id,stroke,t,x,y,pressure\n") == []
    with pytest.raises(FormatError):
        read_traces_csv("a,b\n1,2\n")


finite = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.tuples(finite, finite, st.floats(0, 1)), min_size=1, max_size=6), min_size=1, max_size=4))
def test_traces_round_trip(strokes):
    traces = []
    for k, pts in enumerate(strokes):
        samples = [RawSample(float(fmt(i * 0.01)), float(fmt(x)), float(fmt(y)), float(fmt(p)))
                   for i, (x, y, p) in enumerate(pts)]
        traces.append(RawTrace(samples, "u01/1/wake/circle", k))
    buf = io.StringIO()
    write_traces_csv(traces, buf)
    back = read_traces_csv(buf.getvalue())
    assert back == traces
    again = io.StringIO()
    write_traces_csv(back, again)
    assert again.getvalue() == buf.getvalue()


def test_fmt():
    assert fmt(0) == "0"
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(1.5e-12) == "0.0000000000015"
    assert "e" not in fmt(1.23456789e15)


SLEEP_HEAD = "user,day,total_sleep_h,avg_hrv_ms,lowest_hr_bpm,avg_hr_bpm\n"


def test_sleep_record():
    (r,) = read_sleep_csv(SLEEP_HEAD + "u1,3,6.6,56.3,51.8,57.4\n")
    assert r == SleepRecord("u1", 3, 6.6, 56.3, 51.8, 57.4)


def test_sleep_duplicate_and_invalid():
    with pytest.raises(FormatError, match="duplicate"):
        read_sleep_csv(SLEEP_HEAD + "u1,3,6.6,56.3,51.8,57.4\nu1,3,6.0,50,50,55\n")
    with pytest.raises(FormatError):
        read_sleep_csv(SLEEP_HEAD + "u1,3,6.6,-1,51.8,57.4\n")
    with pytest.raises(FormatError):
        read_sleep_csv(SLEEP_HEAD + "u1,x,6.6,1,51.8,57.4\n")


def test_sleep_round_trip():
    recs = [SleepRecord("u1", 1, 6.5, 50.25, 52.0, 58.125), SleepRecord("u2", 2, 7.0, 61.0, 49.5, 55.0)]
    buf = io.StringIO()
    write_sleep_csv(recs, buf)
    assert read_sleep_csv(buf.getvalue()) == recs
    assert "\r" not in buf.getvalue()
