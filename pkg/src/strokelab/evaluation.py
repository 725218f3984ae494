"""Leave-one-day-out evaluation of per-user forests.

A slice is a subset of one user's task samples: ``task=<name>`` (one model
per task), ``timing=<name>`` (one model per session timing) or ``all``.
Every day is held out once; the model for that fold never sees any sample
from the held-out day, which is asserted on every fold.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
import io
import json
import logging

import numpy as np
from sklearn.model_selection import LeaveOneGroupOut
from sklearn.model_selection._split import BaseCrossValidator

from ._util import stable_seed
from .features import TASKS, TIMINGS, feature_matrix
from .forest import RandomForest

log = logging.getLogger(__name__)

SLICE_KINDS = ("task", "timing", "all")
MODES = ("per_slice", "pooled")


class LeakageError(AssertionError):
    """A training fold contained a sample from the held-out (user, day)."""


@dataclass(frozen=True)
class FoldPrediction:
    user: str
    day: int
    timing: str
    task: str
    target: str
    slice: str
    score: float
    label: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 400
    max_features: int | None = None
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")


class LeaveOneDayOut(BaseCrossValidator):
    """Leave-one-group-out over day labels, with a leakage check per fold."""

    def get_n_splits(self, X=None, y=None, groups=None):
        return len(np.unique(groups))

    def split(self, X, y=None, groups=None):
        days = np.asarray(groups)
        for train, test in LeaveOneGroupOut().split(X, y, days):
            check_fold(days[train], days[test])
            yield train, test

    def _iter_test_indices(self, X=None, y=None, groups=None):  # pragma: no cover - split is overridden
        raise NotImplementedError


def check_fold(train_days, test_days) -> None:
    held = set(np.unique(test_days).tolist())
    if len(held) != 1:
        raise LeakageError(f"a fold must hold out exactly one day, got {sorted(held)}")
    if held & set(np.unique(train_days).tolist()):
        raise LeakageError(f"day {held.pop()} appears on both sides of a fold")


def slice_members(samples, slice_name: str) -> list:
    """Indices of ``samples`` that belong to a slice."""
    if slice_name == "all":
        return list(range(len(samples)))
    kind, _, level = slice_name.partition("=")
    if kind not in ("task", "timing") or not level:
        raise ValueError(f"bad slice {slice_name!r}")
    return [i for i, s in enumerate(samples) if getattr(s, kind) == level]


def slice_names(kind: str, samples=None) -> list:
    if kind == "all":
        return ["all"]
    levels = TASKS if kind == "task" else TIMINGS
    if samples is not None:
        present = {getattr(s, kind) for s in samples}
        levels = [lv for lv in levels if lv in present] + sorted(present - set(levels))
    return [f"{kind}={lv}" for lv in levels]


def lodocv(samples, labels, cfg: ForestConfig, target: str, slice_name: str = "all", audit=None):
    """Out-of-fold scores for one user's samples.

    ``samples`` are FeatureVectors of a single user, ``labels`` their 0/1
    labels. With ``audit`` (a list) one (user, held-out day, training keys)
    record per fold is appended for independent checking.
    """
    if not samples:
        return []
    users = {s.user for s in samples}
    if len(users) != 1:
        raise ValueError("lodocv runs on one user's samples")
    user = users.pop()
    X = feature_matrix(samples)
    y = np.asarray(labels, dtype=int)
    days = np.array([s.day for s in samples])
    scores = np.full(len(samples), np.nan)
    for train, test in LeaveOneDayOut().split(X, y, days):
        d = int(days[test[0]])
        model = RandomForest(cfg.n_trees, cfg.max_features, cfg.min_leaf, cfg.max_depth,
                             seed=stable_seed(cfg.seed, user, target, d), n_jobs=1)
        model.fit(X[train], y[train])
        scores[test] = model.predict_proba(X[test])[:, 1]
        if audit is not None:
            audit.append((user, d, frozenset((samples[i].user, samples[i].day) for i in train)))
    return [FoldPrediction(s.user, s.day, s.timing, s.task, target, slice_name, float(sc), int(lb))
            for s, sc, lb in zip(samples, scores, y)]


def assert_no_leakage(predictions, audit) -> None:
    """Every prediction's (user, day) is absent from the training set of its fold."""
    folds = {}
    for user, day, train in audit:
        if (user, day) in train:
            raise LeakageError(f"fold for {user} day {day} trained on its own day")
        folds.setdefault((user, day), []).append(train)
    for p in predictions:
        if (p.user, p.day) not in folds:
            raise LeakageError(f"no fold produced the prediction for {p.user} day {p.day}")


def evaluate(features, labels: dict, targets, slices=("task",), mode: str = "per_slice",
             cfg: ForestConfig | None = None, audit=None) -> list:
    """LODOCV predictions for every user, target and slice.

    ``labels`` maps (user, day, target) -> 0/1. In ``per_slice`` mode each
    slice gets its own models; in ``pooled`` mode one model per user is
    trained on all samples and its scores are reported under every slice.
    The leakage check runs on every call.
    """
    cfg = cfg or ForestConfig()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    for kind in slices:
        if kind not in SLICE_KINDS:
            raise ValueError(f"slice kind must be one of {SLICE_KINDS}")
    by_user: dict = {}
    for fv in features:
        by_user.setdefault(fv.user, []).append(fv)
    own_audit = [] if audit is None else audit
    out = []
    for user in sorted(by_user):
        samples = sorted(by_user[user], key=lambda s: (s.day, TIMINGS.index(s.timing) if s.timing in TIMINGS
                                                       else len(TIMINGS), s.timing, s.task))
        for target in targets:
            try:
                y = [labels[(user, s.day, target)] for s in samples]
            except KeyError as exc:
                raise KeyError(f"no {target} label for user {user} day {exc.args[0][1]}") from None
            if mode == "pooled":
                preds = lodocv(samples, y, cfg, target, "all", own_audit)
                for kind in slices:
                    for name in slice_names(kind, samples):
                        members = set(slice_members(samples, name))
                        out.extend(FoldPrediction(**{**asdict(p), "slice": name})
                                   for i, p in enumerate(preds) if i in members)
                continue
            for kind in slices:
                for name in slice_names(kind, samples):
                    idx = slice_members(samples, name)
                    out.extend(lodocv([samples[i] for i in idx], [y[i] for i in idx], cfg, target,
                                      name, own_audit))
    assert_no_leakage(out, own_audit)
    return out


def write_predictions(predictions, stream) -> None:
    for p in predictions:
        stream.write(p.to_json() + "\n")


def read_predictions(stream) -> list:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return [FoldPrediction(**json.loads(line)) for line in stream if line.strip()]
