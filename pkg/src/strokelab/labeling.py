"""Per-user quartile labels for the four sleep indicators."""
from __future__ import annotations

from dataclasses import dataclass, asdict
import io
import json
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .inkio import FormatError, fmt

# target -> (record field, direction)
TARGET_FIELDS = {
    "total_sleep": ("total_sleep_h", "below_q25"),
    "avg_hrv": ("avg_hrv_ms", "below_q25"),
    "lowest_hr": ("lowest_hr_bpm", "above_q75"),
    "avg_hr": ("avg_hr_bpm", "above_q75"),
}
MIN_DAYS = 8
LABEL_HEADER = ("user", "day", "target", "label")


@dataclass(frozen=True)
class LabelRule:
    target: str
    direction: str
    threshold: float
    user: str

    def apply(self, value: float) -> int:
        if self.direction == "below_q25":
            return int(value < self.threshold)
        return int(value > self.threshold)


def quantile(values, q: float) -> float:
    """Linear interpolation between order statistics at h = (n - 1) q."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("quantile of an empty sample")
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    h = (len(v) - 1) * q
    lo = int(math.floor(h))
    if lo + 1 >= len(v):
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


def label_days(records, target: str) -> tuple:
    """Label one user's days for ``target``.

    Returns ({day: label}, LabelRule). Values strictly beyond the user's Q25
    (or Q75) are positive; ties with the threshold are negative.
    """
    if target not in TARGET_FIELDS:
        raise ValueError(f"unknown target {target!r}; expected one of {', '.join(TARGET_FIELDS)}")
    records = list(records)
    users = {r.user for r in records}
    if len(users) != 1:
        raise ValueError("label_days expects the records of exactly one user")
    if len(records) < MIN_DAYS:
        raise ValueError(f"user {records[0].user}: need at least {MIN_DAYS} days, got {len(records)}")
    name, direction = TARGET_FIELDS[target]
    values = [r.value(name) for r in records]
    q = 0.25 if direction == "below_q25" else 0.75
    rule = LabelRule(target, direction, quantile(values, q), records[0].user)
    return {r.day: rule.apply(r.value(name)) for r in records}, rule


def by_user(records) -> dict:
    out: dict = {}
    for r in records:
        out.setdefault(r.user, []).append(r)
    return out


class QuartileLabeler(BaseEstimator, TransformerMixin):
    """Fit per-user thresholds on sleep records; transform records to labels.

    ``transform`` returns a list of (user, day, target, label) tuples in
    record order for every fitted target.
    """

    def __init__(self, targets=("total_sleep", "avg_hrv", "lowest_hr", "avg_hr")):
        self.targets = targets

    def fit(self, X, y=None):
        self.rules_ = {}
        for user, recs in by_user(X).items():
            for target in self.targets:
                _, rule = label_days(recs, target)
                self.rules_[(user, target)] = rule
        return self

    def transform(self, X):
        out = []
        for target in self.targets:
            name, _ = TARGET_FIELDS[target]
            for r in X:
                rule = self.rules_.get((r.user, target))
                if rule is None:
                    raise ValueError(f"no fitted rule for user {r.user}")
                out.append((r.user, r.day, target, rule.apply(r.value(name))))
        return out


def write_labels_csv(labels, stream) -> None:
    stream.write(",".join(LABEL_HEADER) + "\n")
    for user, day, target, label in labels:
        stream.write(f"{user},{day},{target},{int(label)}\n")


def read_labels_csv(stream) -> dict:
    """{(user, day, target): label}."""
    import csv

    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    missing = [c for c in LABEL_HEADER if c not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"labels CSV: missing column(s) {', '.join(missing)}")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            day, label = int(row["day"]), int(row["label"])
        except (TypeError, ValueError):
            raise FormatError(f"line {lineno}: day and label must be integers") from None
        if label not in (0, 1):
            raise FormatError(f"line {lineno}: label must be 0 or 1")
        out[(row["user"], day, row["target"])] = label
    return out


def rules_to_json(rules) -> str:
    items = sorted(rules, key=lambda r: (r.user, r.target))
    return json.dumps([{**asdict(r), "threshold": float(fmt(r.threshold))} for r in items], indent=1) + "\n"
