"""Empirical base-rate ranking by crime category.

Every open case gets its category's historical six-month finalization rate,
shrunk toward the office-wide rate with ``prior_strength`` pseudo-observations.
Observations are office-wide snapshots taken every ``stride_days`` days whose
label window closed strictly before ``as_of``.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import pandas as pd

from triage import case_store
from triage.case_store import to_day
from triage.config import HORIZON_DAYS
from triage.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

DEFAULT_PRIOR_STRENGTH = 20.0
GLOBAL_ROW = "*"


def shrink(n, p_raw, global_rate, prior_strength):
    if n + prior_strength == 0:
        return global_rate
    return (n * p_raw + prior_strength * global_rate) / (n + prior_strength)


@dataclass(frozen=True)
class CrimeRate:
    n: int
    p_raw: float
    p_smoothed: float


@dataclass
class BaseRateTable:
    as_of: date
    global_rate: float
    prior_strength: float
    per_crime: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, as_of, counts, prior_strength=DEFAULT_PRIOR_STRENGTH, global_rate=None):
        """``counts``: category -> (n, positives)."""
        if prior_strength < 0:
            raise ConfigError("prior_strength must be >= 0")
        total_n = sum(n for n, _ in counts.values())
        if global_rate is None:
            if total_n == 0:
                raise DataError(f"No labeled historical observations before {as_of}")
            global_rate = sum(p for _, p in counts.values()) / total_n
        per_crime = {}
        for category in sorted(counts):
            n, pos = counts[category]
            p_raw = pos / n if n else 0.0
            per_crime[category] = CrimeRate(int(n), p_raw, shrink(n, p_raw, global_rate, prior_strength))
        return cls(as_of=as_of, global_rate=global_rate, prior_strength=prior_strength, per_crime=per_crime)

    def rate(self, category):
        entry = self.per_crime.get(category)
        return self.global_rate if entry is None else entry.p_smoothed

    def to_frame(self):
        rows = [
            {"crime_category": c, "n": r.n, "p_raw": r.p_raw, "p_smoothed": r.p_smoothed}
            for c, r in self.per_crime.items()
        ]
        rows.append(
            {
                "crime_category": GLOBAL_ROW,
                "n": sum(r.n for r in self.per_crime.values()),
                "p_raw": self.global_rate,
                "p_smoothed": self.global_rate,
            }
        )
        return pd.DataFrame(rows, columns=["crime_category", "n", "p_raw", "p_smoothed"])


def snapshot_dates(store, as_of, horizon_days=HORIZON_DAYS, stride_days=28, max_snapshots=None):
    """Dates s with s + horizon < as_of, stepping back from the latest one."""
    if store.start_date is None:
        return []
    latest = as_of - timedelta(days=horizon_days + 1)
    out = []
    s = latest
    while s >= store.start_date and (max_snapshots is None or len(out) < max_snapshots):
        out.append(s)
        s -= timedelta(days=stride_days)
    return out[::-1]


def category_outcomes(store, snapshot, horizon_days=HORIZON_DAYS, cache=None):
    """Per category (n, positives) over the cases open office-wide on ``snapshot``."""
    key = ("baseline", to_day(snapshot), horizon_days)
    if cache is not None and key in cache:
        return cache[key]
    spells = case_store.open_spells(store, snapshot)
    labels = case_store.finalization_labels(spells, snapshot, horizon_days)
    category = spells["case_id"].map(dict(zip(store.cases["case_id"], store.cases["crime_category"])))
    grouped = pd.DataFrame({"category": category.to_numpy(), "label": labels.to_numpy()}).groupby("category")["label"]
    result = pd.DataFrame({"n": grouped.size(), "positives": grouped.sum()})
    if cache is not None:
        cache[key] = result
    return result


def build_table(
    store,
    as_of,
    prior_strength=DEFAULT_PRIOR_STRENGTH,
    horizon_days=HORIZON_DAYS,
    stride_days=28,
    max_snapshots=None,
    cache=None,
):
    dates = snapshot_dates(store, as_of, horizon_days, stride_days, max_snapshots)
    frames = [category_outcomes(store, s, horizon_days, cache) for s in dates]
    frames = [f for f in frames if len(f)]
    if not frames:
        raise DataError(f"No labeled historical observations before {as_of}")
    totals = pd.concat(frames).groupby(level=0).sum()
    counts = {c: (int(r.n), int(r.positives)) for c, r in totals.iterrows()}
    table = BaseRateTable.from_counts(as_of, counts, prior_strength)
    logger.debug(
        "Base-rate table at %s: %d categories, global rate %.3f over %d snapshots",
        as_of,
        len(counts),
        table.global_rate,
        len(dates),
    )
    return table


def score_baseline(table, cases):
    """Smoothed category rate per case; unseen categories get the global rate."""
    return [table.rate(c.crime_category) for c in cases]


def score_categories(table, categories):
    return [table.rate(c) for c in categories]
