"""Ranking metrics and the nonparametric tests used to summarise them.

Everything here is small and exact: average precision with tie groups,
top-k recall, an exact one-sided Wilcoxon signed-rank test, Benjamini-Hochberg
step-up, and the Friedman test with its chi-square tail.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, asdict
import math

import numpy as np

# display order of the four targets
TARGETS = ("avg_hrv", "lowest_hr", "avg_hr", "total_sleep")
TARGET_LABELS = {"avg_hrv": "Avg HRV", "lowest_hr": "Lowest HR", "avg_hr": "Avg HR",
                 "total_sleep": "Total Sleep"}
METRICS = ("pr_auc", "recall_at_25")
METRIC_LABELS = {"pr_auc": "PR-AUC", "recall_at_25": "Recall@25%"}
BASELINE = 0.25
ALPHA = 0.05


# -- ranking metrics -------------------------------------------------------------

def _check_pair(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(int)


def pr_auc(scores, labels) -> float:
    """Average precision, treating tied scores as one block.

    Walking down the distinct scores, each block adds its recall gain times
    the precision reached after the whole block, so the value does not depend
    on the input order.
    """
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("pr_auc needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of every tie block
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(gain * tp / seen))


def recall_at_fraction(scores, labels, f: float = 0.25, precision: bool = False) -> float:
    """Share of all positives found among the top ``round(f * n)`` samples.

    k is rounded half-up and at least 1; equal scores keep input order. With
    ``precision`` the hit count is divided by k instead.
    """
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("recall needs at least one positive")
    if not 0 < f <= 1:
        raise ValueError("f must lie in (0, 1]")
    k = max(1, int(math.floor(f * len(scores) + 0.5)))
    top = np.argsort(-scores, kind="stable")[:k]
    hits = int(labels[top].sum())
    return hits / k if precision else hits / n_pos


@dataclass(frozen=True)
class EvalMetrics:
    pr_auc: float
    recall_at_25: float
    n: int
    prevalence: float


def eval_metrics(scores, labels) -> EvalMetrics:
    scores, labels = _check_pair(scores, labels)
    return EvalMetrics(pr_auc(scores, labels), recall_at_fraction(scores, labels, 0.25),
                       len(labels), float(labels.mean()))


# -- rank helpers -----------------------------------------------------------------

def midranks(values) -> np.ndarray:
    """1-based ranks, ties share the average of the ranks they span."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


# -- Wilcoxon signed-rank -----------------------------------------------------------

def signed_rank_null(ranks) -> tuple:
    """Null distribution of W+ for a rank multiset.

    Ranks are mid-ranks, so doubling them gives integers; a subset-sum count
    over those integers enumerates all 2^n sign patterns at once. Returns
    (doubled sums, counts).
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=float)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        counts[r:] = counts[r:] + counts[:len(counts) - r].copy()
    return np.arange(total + 1), counts


def wilcoxon_one_sided(values, baseline: float = BASELINE) -> tuple:
    """Exact one-sided signed-rank test of "values exceed baseline".

    Zero differences are dropped; returns (W+, p) with p = P(W+* >= W+).
    """
    d = np.asarray(values, dtype=float) - baseline
    d = d[d != 0]
    if len(d) == 0:
        raise ValueError("degenerate sample: every value equals the baseline")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    sums, counts = signed_rank_null(ranks)
    tail = sum(counts[sums >= int(round(2 * w_plus))])
    return w_plus, float(tail) / 2 ** len(d)


# -- multiple testing -----------------------------------------------------------------

def bh_fdr(p_values, m: int | None = None) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p) if m is None else m
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, len(p) + 1)
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty_like(p)
    out[order] = np.minimum(q, 1.0)
    return out


# -- chi-square tail and Friedman ------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300


def _gamma_p_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_fraction(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x: float, dof: float) -> float:
    """Upper tail of the chi-square distribution, Q(dof/2, x/2)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 1.0
    a, h = dof / 2.0, x / 2.0
    if x < dof + 2:
        return max(0.0, 1.0 - _gamma_p_series(a, h))
    return min(1.0, _gamma_q_fraction(a, h))


def friedman(matrix) -> tuple:
    """Friedman test over the columns of an (n subjects x k conditions) table.

    Ranks are mid-ranks within each row and the statistic is divided by the
    usual tie correction. Returns (chi2, p) with k - 1 degrees of freedom.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise ValueError("friedman needs a 2-D table")
    n, k = x.shape
    if k < 2:
        raise ValueError("friedman needs at least 2 conditions")
    if n < 2:
        raise ValueError("friedman needs at least 2 subjects")
    ranks = np.vstack([midranks(row) for row in x])
    r = ranks.sum(axis=0)
    ties = 0.0
    for row in x:
        _, cnt = np.unique(row, return_counts=True)
        ties += float(np.sum(cnt**3 - cnt))
    correction = 1.0 - ties / (n * k * (k * k - 1))
    if correction <= 0:
        return 0.0, 1.0
    stat = (12.0 * np.sum(r**2) / (n * k * (k + 1)) - 3.0 * n * (k + 1)) / correction
    stat = max(float(stat), 0.0)
    return stat, chi2_sf(stat, k - 1)


# -- report assembly -------------------------------------------------------------------

def stars(q: float) -> str:
    if q < 0.001:
        return "***"
    if q < 0.01:
        return "**"
    if q < ALPHA:
        return "*"
    return ""


def _slice_kind(name: str) -> str:
    return name.split("=", 1)[0]


def _slice_level(name: str) -> str:
    return name.split("=", 1)[-1]


def evaluate_predictions(predictions) -> dict:
    """{target: {slice: {user: EvalMetrics}}} from fold predictions."""
    groups = defaultdict(lambda: ([], []))
    for p in predictions:
        s, y = groups[(p.target, p.slice, p.user)]
        s.append(p.score)
        y.append(p.label)
    out: dict = {}
    for (target, sl, user), (s, y) in sorted(groups.items()):
        if 0 < sum(y) < len(y):
            m = eval_metrics(s, y)
        else:
            m = EvalMetrics(math.nan, math.nan, len(y), float(np.mean(y)))
        out.setdefault(target, {}).setdefault(sl, {})[user] = m
    return out


def _headline_slices(slices):
    for kind in ("task", "timing", "all"):
        chosen = sorted(s for s in slices if _slice_kind(s) == kind)
        if chosen:
            return kind, chosen
    raise ValueError("no slices to summarise")


def _user_table(per_slice, slices, users, metric):
    """users x slices array of one metric; raises on missing coverage."""
    table = np.empty((len(users), len(slices)))
    for j, sl in enumerate(slices):
        for i, u in enumerate(users):
            m = per_slice[sl].get(u)
            if m is None:
                raise ValueError(f"missing slice coverage: user {u} has no {sl} predictions")
            table[i, j] = getattr(m, metric)
    return table


@dataclass
class StatReport:
    table2: list
    table3: list

    def to_dict(self) -> dict:
        return {"table2": self.table2, "table3": self.table3}


def build_reports(predictions, targets=None) -> tuple:
    """Per-user metrics plus the Wilcoxon/BH and Friedman/BH summaries.

    The per-user headline is the mean over task slices (over timing slices
    when only those exist, or the pooled slice). Returns (eval dict,
    StatReport).
    """
    evals = evaluate_predictions(predictions)
    targets = [t for t in (targets or TARGETS) if t in evals] + \
        sorted(t for t in evals if t not in TARGETS and (targets is None or t in targets))
    if not targets:
        raise ValueError("no predictions to summarise")
    users = sorted({u for t in targets for sl in evals[t].values() for u in sl})
    if len(users) < 2:
        raise ValueError("need predictions for at least 2 users")

    rows = []
    for target in targets:
        kind, slices = _headline_slices(evals[target])
        for metric in METRICS:
            per_user = np.nanmean(_user_table(evals[target], slices, users, metric), axis=1)
            vals = per_user[~np.isnan(per_user)]
            try:
                w, p = wilcoxon_one_sided(vals, BASELINE)
            except ValueError:
                w, p = 0.0, 1.0
            rows.append({"target": target, "metric": metric, "headline": kind,
                         "mean": float(np.mean(vals)),
                         "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                         "n_users": int(len(vals)), "W": w, "p": p,
                         "per_user": {u: float(v) for u, v in zip(users, per_user)}})
    for row, q in zip(rows, bh_fdr([r["p"] for r in rows])):
        row["q"] = float(q)
        row["significant"] = bool(q < ALPHA)

    friedman_rows = []
    for factor in ("task", "timing"):
        for target in targets:
            slices = sorted(s for s in evals[target] if _slice_kind(s) == factor)
            if len(slices) < 2:
                continue
            for metric in METRICS:
                table = _user_table(evals[target], slices, users, metric)
                table = table[~np.isnan(table).any(axis=1)]
                chi2, p = friedman(table) if len(table) >= 2 else (0.0, 1.0)
                friedman_rows.append({"factor": factor, "target": target, "metric": metric,
                                      "levels": [_slice_level(s) for s in slices],
                                      "chi2": chi2, "dof": len(slices) - 1, "p": p})
    for row, q in zip(friedman_rows, bh_fdr([r["p"] for r in friedman_rows])):
        row["q"] = float(q)
        row["significant"] = bool(q < ALPHA)

    eval_json = {t: {sl: {u: asdict(m) for u, m in us.items()} for sl, us in ss.items()}
                 for t, ss in evals.items()}
    return eval_json, StatReport(rows, friedman_rows)


def render_text(report: StatReport) -> str:
    """Plain-text tables in the column order of the published summaries."""
    lines = ["Wilcoxon one-sided vs 0.25 (user mean +- SD), BH over "
             f"{len(report.table2)} comparisons", ""]
    head = f"{'Target':<12}"
    for metric in METRICS:
        head += f" | {METRIC_LABELS[metric] + ' mean +- SD':<24}{'p':>8}{'q':>8} sig"
    lines.append(head)
    by_key = {(r["target"], r["metric"]): r for r in report.table2}
    for target in dict.fromkeys(r["target"] for r in report.table2):
        line = f"{TARGET_LABELS.get(target, target):<12}"
        for metric in METRICS:
            r = by_key.get((target, metric))
            if r is None:
                line += " | " + " " * 44
                continue
            cell = f"{r['mean']:.3f} +- {r['sd']:.3f}"
            line += f" | {cell:<24}{r['p']:>8.4f}{r['q']:>8.4f} {stars(r['q']):<3}"
        lines.append(line.rstrip())
    if report.table3:
        lines += ["", f"Friedman tests, BH over {len(report.table3)} comparisons", ""]
        lines.append(f"{'Factor':<8}{'Target':<13}{'Metric':<12}{'chi2':>7}{'p':>8}{'q':>8}")
        for r in report.table3:
            lines.append(f"{r['factor']:<8}{TARGET_LABELS.get(r['target'], r['target']):<13}"
                         f"{METRIC_LABELS[r['metric']]:<12}{r['chi2']:>7.2f}{r['p']:>8.3f}{r['q']:>8.3f}")
    return "\n".join(lines) + "\n"
