"""Exact ranking and regression metrics plus the per-lead-time report.

AUROC is the probability-of-correct-ranking form with ties worth 1/2.
AUPRC is average precision; tied score groups contribute their exact
expectation over all orderings of the group (see _group_expectation).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def auroc(scores_pos, scores_neg) -> float:
    """(#correctly ranked pairs + 0.5 * #ties) / (n_pos * n_neg), exact."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auroc: both classes must be non-empty")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    rank_sum = ranks[: pos.size].sum()
    return float((rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


def _group_expectation(t: int, f: int, p: int, n: int) -> float:
    """Expected AP mass of one tied group under a uniform order of its members.

    Before the group, t positives and f negatives are already ranked. The
    group holds p positives and n negatives. The j-th positive of the group
    lands at in-group rank r with hypergeometric probability
    C(r-1, j-1) * C(g-r, p-j) / C(g, p), contributing (t+j) / (t+f+r).
    """
    g = p + n
    total = 0.0
    denom = math.comb(g, p)
    for j in range(1, p + 1):
        for r in range(j, g - (p - j) + 1):
            weight = math.comb(r - 1, j - 1) * math.comb(g - r, p - j) / denom
            total += weight * (t + j) / (t + f + r)
    return total


def auprc(scores_pos, scores_neg) -> float:
    """Average precision with exact expectation over tie-group orderings."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0:
        raise ValueError("auprc: positive class must be non-empty")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size, dtype=bool), np.zeros(neg.size, dtype=bool)])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]

    total = 0.0
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[j] == scores[i]:
            j += 1
        p = int(labels[i:j].sum())
        n = (j - i) - p
        if p:
            total += _group_expectation(tp, fp, p, n)
        tp += p
        fp += n
        i = j
    return total / pos.size


def tte_mae(pred_hours, true_hours, mask) -> float:
    """Masked mean absolute error in hours."""
    p = np.asarray(pred_hours, dtype=np.float64)
    t = np.asarray(true_hours, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if m.sum() == 0:
        raise ValueError("tte_mae: empty mask")
    return float(np.abs(p[m] - t[m]).mean())


@dataclass(frozen=True)
class LeadTimeRow:
    lead_hours: int
    auroc: float | None
    auprc: float | None
    tte_mae: float | None
    n_pos: int
    n_neg: int

    @property
    def present(self) -> bool:
        return self.auroc is not None


@dataclass
class LeadTimeReport:
    rows: list[LeadTimeRow] = field(default_factory=list)

    @property
    def time_averaged_auroc(self) -> float:
        return time_averaged(self.rows)[0]

    @property
    def time_averaged_auprc(self) -> float:
        return time_averaged(self.rows)[1]


def time_averaged(rows) -> tuple[float, float]:
    """Unweighted means over the lead-time rows that are present."""
    present = [r for r in rows if r.present]
    if not present:
        raise ValueError("time_averaged: no rows present")
    return (
        float(np.mean([r.auroc for r in present])),
        float(np.mean([r.auprc for r in present])),
    )


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_report_csv(report: LeadTimeReport, path) -> None:
    """Per-lead rows then a trailing `time_avg` summary row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lead_hours", "auroc", "auprc", "tte_mae", "n_pos", "n_neg"])
        for r in report.rows:
            writer.writerow([r.lead_hours, _fmt(r.auroc), _fmt(r.auprc), _fmt(r.tte_mae), r.n_pos, r.n_neg])
        avg_roc, avg_prc = time_averaged(report.rows)
        maes = [r.tte_mae for r in report.rows if r.tte_mae is not None]
        writer.writerow(
            [
                "time_avg",
                repr(avg_roc),
                repr(avg_prc),
                _fmt(float(np.mean(maes)) if maes else None),
                sum(r.n_pos for r in report.rows),
                sum(r.n_neg for r in report.rows),
            ]
        )


def read_report_csv(path) -> LeadTimeReport:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            if raw["lead_hours"] == "time_avg":
                continue
            rows.append(
                LeadTimeRow(
                    lead_hours=int(raw["lead_hours"]),
                    auroc=float(raw["auroc"]) if raw["auroc"] else None,
                    auprc=float(raw["auprc"]) if raw["auprc"] else None,
                    tte_mae=float(raw["tte_mae"]) if raw["tte_mae"] else None,
                    n_pos=int(raw["n_pos"]),
                    n_neg=int(raw["n_neg"]),
                )
            )
    return LeadTimeReport(rows=rows)
