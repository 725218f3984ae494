"""Ten summary features per task sample, computed from stroke decompositions."""
from __future__ import annotations

from dataclasses import dataclass
import csv
import io
import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .inkio import FormatError, fmt

log = logging.getLogger(__name__)

FEATURE_NAMES = ("d_mean", "d_std", "t0_mean", "t0_std", "nblog_mean", "nblog_std",
                 "snr_mean", "snr_std", "snr_per_nblog_mean", "snr_per_nblog_std")
META_NAMES = ("user", "day", "timing", "task")
FEATURE_HEADER = META_NAMES + FEATURE_NAMES
TIMINGS = ("wake", "lunch", "bed")
TASKS = ("circle", "triangle", "square", "pos_phrase", "neg_phrase")
POOLING = ("component", "stroke")


def source_id(user: str, day: int, timing: str, task: str) -> str:
    return f"{user}/{day}/{timing}/{task}"


def parse_source_id(sid: str) -> dict:
    """Split ``user/day/timing/task`` (an optional ``#stroke`` suffix is ignored)."""
    parts = sid.split("#", 1)[0].split("/")
    if len(parts) != 4:
        raise ValueError(f"source id {sid!r} is not user/day/timing/task")
    user, day, timing, task = parts
    try:
        day = int(day)
    except ValueError:
        raise ValueError(f"source id {sid!r}: day is not an integer") from None
    return {"user": user, "day": day, "timing": timing, "task": task}


@dataclass(frozen=True)
class FeatureVector:
    user: str
    day: int
    timing: str
    task: str
    d_mean: float
    d_std: float
    t0_mean: float
    t0_std: float
    nblog_mean: float
    nblog_std: float
    snr_mean: float
    snr_std: float
    snr_per_nblog_mean: float
    snr_per_nblog_std: float

    @property
    def values(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURE_NAMES])

    @property
    def key(self) -> tuple:
        return (self.user, self.day, self.timing, self.task)


def _mean_std(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def task_features(decomps, meta: dict, pooling: str = "component") -> FeatureVector:
    """Aggregate one task sample's decompositions.

    D and t0 are per-component quantities and, with ``pooling="component"``,
    are pooled over every component of every stroke; ``pooling="stroke"``
    averages them within each stroke first. nblog, SNR and SNR/nblog are
    per-stroke quantities. Standard deviations use n - 1 and are 0 for n = 1.
    Strokes with no components are ignored.
    """
    if pooling not in POOLING:
        raise ValueError(f"pooling must be one of {POOLING}")
    decomps = [d for d in decomps if d.nblog > 0]
    if not decomps:
        raise ValueError("no decomposed strokes")
    if pooling == "component":
        d_vals = [c.D for d in decomps for c in d.components]
        t0_vals = [c.t0 for d in decomps for c in d.components]
    else:
        d_vals = [np.mean([c.D for c in d.components]) for d in decomps]
        t0_vals = [np.mean([c.t0 for c in d.components]) for d in decomps]
    nblog = [d.nblog for d in decomps]
    snr = [d.snr_db for d in decomps]
    ratio = [d.snr_db / d.nblog for d in decomps]
    stats = [*_mean_std(d_vals), *_mean_std(t0_vals), *_mean_std(nblog), *_mean_std(snr), *_mean_std(ratio)]
    return FeatureVector(meta["user"], int(meta["day"]), meta["timing"], meta["task"], *stats)


def group_by_sample(decomps) -> dict:
    """{(user, day, timing, task): [decompositions]} in first-seen order."""
    groups: dict = {}
    for d in decomps:
        m = parse_source_id(d.stroke_id)
        groups.setdefault((m["user"], m["day"], m["timing"], m["task"]), []).append(d)
    return groups


class TaskFeatureAggregator(BaseEstimator, TransformerMixin):
    """Decompositions (ids ``user/day/timing/task#k``) -> FeatureVectors.

    Samples whose strokes all came back empty are skipped; their keys are in
    ``skipped_`` after :meth:`transform`.
    """

    def __init__(self, pooling="component"):
        self.pooling = pooling

    def fit(self, X, y=None):
        if self.pooling not in POOLING:
            raise ValueError(f"pooling must be one of {POOLING}")
        return self

    def transform(self, X):
        out, self.skipped_ = [], []
        for key, group in group_by_sample(X).items():
            meta = dict(zip(META_NAMES, key))
            try:
                out.append(task_features(group, meta, self.pooling))
            except ValueError:
                self.skipped_.append(key)
        if self.skipped_:
            log.warning("%d task samples had no decomposed strokes", len(self.skipped_))
        return out


def feature_matrix(vectors) -> np.ndarray:
    return np.vstack([v.values for v in vectors]) if vectors else np.empty((0, len(FEATURE_NAMES)))


def write_features_csv(vectors, stream) -> None:
    stream.write(",".join(FEATURE_HEADER) + "\n")
    for v in vectors:
        stream.write(",".join([v.user, str(v.day), v.timing, v.task] +
                              [fmt(getattr(v, f)) for f in FEATURE_NAMES]) + "\n")


def read_features_csv(stream) -> list:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    missing = [c for c in FEATURE_HEADER if c not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"features CSV: missing column(s) {', '.join(missing)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            values = [float(row[f]) for f in FEATURE_NAMES]
            day = int(row["day"])
        except (TypeError, ValueError):
            raise FormatError(f"line {lineno}: non-numeric feature value") from None
        out.append(FeatureVector(row["user"], day, row["timing"], row["task"], *values))
    return out

