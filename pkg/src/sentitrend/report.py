"""Multiple-testing adjustment and negative-share summaries.

The false-discovery-rate step-up adjustment maps each raw p-value to
min over j >= rank of (m * p_(j) / j), capped at 1, which preserves the
raw ordering. Shares are exact counts per (school, year) cell with
percentage-point differences against the baseline year.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BASELINE_YEAR = 2019


@dataclass
class PValueSet:
    names: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.names) != len(self.values):
            raise ValueError("one name per p-value required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("test names must be unique")
        if len(self.values) and (self.values.min() <= 0.0 or self.values.max() > 1.0):
            raise ValueError("p-values must lie in (0, 1]")


def bh_adjust(pvalues: PValueSet) -> PValueSet:
    """Step-up adjusted p-values, returned in the input's name order.

    Ties sort stably, so equal raw values get equal adjusted values and
    the original ordering of tied names is preserved internally.
    """
    m = len(pvalues.values)
    if m == 0:
        raise ValueError("need at least one p-value")
    order = np.argsort(pvalues.values, kind="stable")
    ranks = np.arange(1, m + 1, dtype=np.float64)
    scaled = m * pvalues.values[order] / ranks
    adjusted_sorted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return PValueSet(names=list(pvalues.names), values=adjusted)


@dataclass(frozen=True)
class ShareCell:
    school_id: str
    year: int
    n: int
    n_negative: int

    @property
    def share(self) -> float:
        return self.n_negative / self.n if self.n else 0.0


@dataclass
class NegativeShareTable:
    cells: list  # ShareCell, sorted by (school, year)
    diffs: list  # (school_id, year, diff in percentage points) for year != baseline
    missing_baseline: list  # schools without a baseline-year denominator
    baseline_year: int = BASELINE_YEAR

    def cell(self, school_id: str, year: int) -> Optional[ShareCell]:
        for c in self.cells:
            if c.school_id == school_id and c.year == year:
                return c
        return None

    def total_messages(self) -> int:
        return sum(c.n for c in self.cells)


def negative_share(predictions, baseline_year: int = BASELINE_YEAR) -> NegativeShareTable:
    """Counts, shares, and against-baseline differences per school-year."""
    counts = {}
    for p in predictions:
        key = (p.school_id, p.year)
        n, neg = counts.get(key, (0, 0))
        counts[key] = (n + 1, neg + (1 if p.is_negative else 0))
    cells = [
        ShareCell(school_id=s, year=y, n=n, n_negative=neg)
        for (s, y), (n, neg) in sorted(counts.items())
    ]
    baseline = {c.school_id: c.share for c in cells if c.year == baseline_year}
    diffs = []
    missing = sorted({c.school_id for c in cells} - set(baseline))
    for c in cells:
        if c.year == baseline_year or c.school_id not in baseline:
            continue
        diffs.append((c.school_id, c.year,
                      100.0 * (c.share - baseline[c.school_id])))
    return NegativeShareTable(cells=cells, diffs=diffs, missing_baseline=missing,
                              baseline_year=baseline_year)


def shares_csv(table: NegativeShareTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["school_id", "year", "n", "n_neg", "share"])
    for c in table.cells:
        w.writerow([c.school_id, c.year, c.n, c.n_negative, repr(c.share)])
    return buf.getvalue()


def diffs_csv(table: NegativeShareTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["school_id", "year", "diff_points"])
    for school_id, year, diff in table.diffs:
        w.writerow([school_id, year, repr(diff)])
    return buf.getvalue()


def odds_ratio_csv(or_table, adjusted: PValueSet, alpha: float = 0.05) -> str:
    """Covariate effects with raw and adjusted p-values and a significance
    column driven by the adjusted values."""
    adj = dict(zip(adjusted.names, adjusted.values))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "or", "lo", "hi", "p_raw", "p_adj", "significant"])
    for row in or_table.rows:
        p_adj = adj.get(row.name)
        w.writerow([
            row.name,
            repr(row.odds_ratio),
            "" if row.ci_low is None else repr(row.ci_low),
            "" if row.ci_high is None else repr(row.ci_high),
            "" if row.p_raw is None else repr(row.p_raw),
            "" if p_adj is None else repr(float(p_adj)),
            "yes" if (p_adj is not None and p_adj < alpha) else "no",
        ])
    return buf.getvalue()
