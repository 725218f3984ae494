"""Readers and writers for pen traces (InkML subset, CSV) and sleep records."""
from __future__ import annotations

import csv
from dataclasses import dataclass
import io
import math
from typing import Iterable
import xml.etree.ElementTree as ET

INKML_DEFAULT_FS = 480.0
SLEEP_FIELDS = ("total_sleep_h", "avg_hrv_ms", "lowest_hr_bpm", "avg_hr_bpm")
TRACE_HEADER = ("source_id", "stroke", "t", "x", "y", "pressure")
SLEEP_HEADER = ("user", "day") + SLEEP_FIELDS

# InkML channel name -> RawSample field
CHANNELS = {"X": "x", "Y": "y", "T": "t", "F": "pressure", "OA": "tilt_x", "OE": "tilt_y", "Z": "hover"}
# length-unit conversion to millimetres
_UNIT_MM = {"mm": 1.0, "cm": 10.0, "m": 1000.0, "in": 25.4, "pt": 25.4 / 72, "himetric": 0.01}


class FormatError(ValueError):
    """Input file does not follow the expected layout."""


@dataclass(frozen=True)
class RawSample:
    t: float
    x: float
    y: float
    pressure: float = 1.0
    tilt_x: float | None = None
    tilt_y: float | None = None
    hover: float | None = None


@dataclass
class RawTrace:
    samples: list
    source_id: str = ""
    stroke: int | None = None

    @property
    def stroke_id(self) -> str:
        if self.stroke is None:
            return self.source_id
        return f"{self.source_id}#{self.stroke}"


@dataclass(frozen=True)
class SleepRecord:
    user: str
    day: int
    total_sleep_h: float
    avg_hrv_ms: float
    lowest_hr_bpm: float
    avg_hr_bpm: float

    def value(self, name: str) -> float:
        return getattr(self, name)


def fmt(v: float) -> str:
    """Nine significant digits, plain decimal notation."""
    if v == 0:
        return "0"
    s = f"{v:.9g}"
    if "e" in s or "E" in s:
        digits = max(0, 8 - int(math.floor(math.log10(abs(v)))))
        s = f"{v:.{digits}f}".rstrip("0").rstrip(".")
    return s


# -- InkML ---------------------------------------------------------------------

def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_inkml(document: str, fs: float = INKML_DEFAULT_FS, source_id: str = "") -> list:
    """Parse explicit-value InkML traces into RawTraces.

    Missing T channels get synthesized timestamps ``i / fs``.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise FormatError(f"malformed XML: {exc}") from None

    formats = [el for el in root.iter() if _local(el.tag) == "traceFormat"]
    traces = [el for el in root.iter() if _local(el.tag) == "trace"]
    if not traces:
        return []
    if formats:
        channels = [el for el in formats[0] if _local(el.tag) == "channel"]
        names = [ch.get("name", "") for ch in channels]
        units = [ch.get("units") for ch in channels]
    else:
        names, units = ["X", "Y"], [None, None]
    for name in names:
        if name not in CHANNELS:
            raise FormatError(f"unknown channel {name!r}")
    if "X" not in names or "Y" not in names:
        raise FormatError("traceFormat must declare channels X and Y")
    scale = {}
    for name, unit in zip(names, units):
        if name in ("X", "Y"):
            if unit is not None and unit not in _UNIT_MM:
                raise FormatError(f"unsupported unit {unit!r} on channel {name}")
            scale[name] = _UNIT_MM[unit] if unit is not None else 1.0

    out = []
    for ti, el in enumerate(traces):
        text = (el.text or "").strip()
        if any(ch in text for ch in "'\"!"):
            raise FormatError(f"trace {ti}: unsupported encoding (difference-coded values)")
        samples = []
        points = [p for p in text.split(",") if p.strip()]
        for pi, point in enumerate(points):
            fields = point.split()
            if len(fields) != len(names):
                raise FormatError(
                    f"trace {ti}: point {pi} has {len(fields)} values, traceFormat declares {len(names)}")
            try:
                values = {CHANNELS[n]: float(v) for n, v in zip(names, fields)}
            except ValueError:
                raise FormatError(f"trace {ti}: non-numeric value in point {pi}") from None
            values["x"] *= scale["X"]
            values["y"] *= scale["Y"]
            values.setdefault("t", pi / fs)
            samples.append(RawSample(**values))
        if not samples:
            continue
        out.append(RawTrace(samples, source_id or "inkml", stroke=ti))
    return out


# -- traces CSV ----------------------------------------------------------------

def _require_header(reader, header, what):
    fields = reader.fieldnames or []
    missing = [c for c in header if c not in fields]
    if missing:
        raise FormatError(f"{what}: missing column(s) {', '.join(missing)}")


def _number(row, col, where) -> float:
    try:
        v = float(row[col])
    except (TypeError, ValueError):
        raise FormatError(f"{where}: non-numeric {col}={row[col]!r}") from None
    if not math.isfinite(v):
        raise FormatError(f"{where}: non-finite {col}")
    return v


def read_traces_csv(stream) -> list:
    """One RawTrace per (source_id, stroke) group, in order of first appearance."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    _require_header(reader, TRACE_HEADER, "traces CSV")
    groups: dict = {}
    for lineno, row in enumerate(reader, start=2):
        where = f"line {lineno}"
        try:
            stroke = int(row["stroke"])
        except (TypeError, ValueError):
            raise FormatError(f"{where}: non-numeric stroke={row['stroke']!r}") from None
        key = (row["source_id"], stroke)
        sample = RawSample(t=_number(row, "t", where), x=_number(row, "x", where),
                           y=_number(row, "y", where), pressure=_number(row, "pressure", where))
        group = groups.setdefault(key, [])
        if group and sample.t < group[-1].t:
            raise FormatError(f"{where}: t decreases within {key[0]}#{key[1]}")
        group.append(sample)
    return [RawTrace(samples, sid, stroke) for (sid, stroke), samples in groups.items()]


def write_traces_csv(traces: Iterable[RawTrace], stream) -> None:
    stream.write(",".join(TRACE_HEADER) + "\n")
    for tr in traces:
        stroke = 0 if tr.stroke is None else tr.stroke
        prefix = f"{tr.source_id},{stroke},"
        stream.write("".join(
            f"{prefix}{fmt(s.t)},{fmt(s.x)},{fmt(s.y)},{fmt(s.pressure)}\n" for s in tr.samples))


# -- sleep CSV -----------------------------------------------------------------

def read_sleep_csv(stream) -> list:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    _require_header(reader, SLEEP_HEADER, "sleep CSV")
    seen = set()
    out = []
    for lineno, row in enumerate(reader, start=2):
        where = f"line {lineno}"
        try:
            day = int(row["day"])
        except (TypeError, ValueError):
            raise FormatError(f"{where}: non-integer day={row['day']!r}") from None
        key = (row["user"], day)
        if key in seen:
            raise FormatError(f"{where}: duplicate record for user {key[0]} day {day}")
        seen.add(key)
        values = {f: _number(row, f, where) for f in SLEEP_FIELDS}
        for f, v in values.items():
            if v <= 0:
                raise FormatError(f"{where}: {f} must be > 0, got {v}")
        out.append(SleepRecord(row["user"], day, **values))
    return out


def write_sleep_csv(records: Iterable[SleepRecord], stream) -> None:
    stream.write(",".join(SLEEP_HEADER) + "\n")
    for r in records:
        stream.write(",".join([r.user, str(r.day)] + [fmt(r.value(f)) for f in SLEEP_FIELDS]) + "\n")
