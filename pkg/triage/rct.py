"""Weekly randomized cohorts over the top of the ranking.

Each week the ranking is walked top-down, skipping cases already enrolled in
an earlier week, until ``cohort_size`` cases are collected; a seeded
permutation splits them evenly into treatment and control. The enrollment
ledger is an append-only CSV so the once-only rule holds across runs.
"""

import csv
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from triage.case_store import to_day
from triage.config import HORIZON_DAYS
from triage.errors import ConfigError, DataError, InsufficientFollowUpError
from triage.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

COHORT_SIZE = 600
COHORT_COLUMNS = ["case_id", "rank", "arm", "week_index", "as_of"]
LEDGER_COLUMNS = ["case_id", "week_index", "arm", "as_of"]


@dataclass
class RctCohort:
    week_index: int
    as_of: date
    treatment: list
    control: list
    replacements_used: int
    seed: int
    ranks: dict = field(default_factory=dict)
    shortfall: bool = False

    @property
    def case_ids(self):
        return set(self.treatment) | set(self.control)

    def to_frame(self):
        rows = [(c, "treatment") for c in self.treatment] + [(c, "control") for c in self.control]
        frame = pd.DataFrame(
            {
                "case_id": [c for c, _ in rows],
                "rank": [self.ranks[c] for c, _ in rows],
                "arm": [a for _, a in rows],
                "week_index": self.week_index,
                "as_of": self.as_of.isoformat() if self.as_of else "",
            },
            columns=COHORT_COLUMNS,
        )
        return frame.sort_values("rank", kind="mergesort").reset_index(drop=True)


class EnrollmentLedger:
    """Append-only record of every enrolled case."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._ids = set()
        self._rows = []
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self):
        with open(self.path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            missing = set(LEDGER_COLUMNS) - set(reader.fieldnames or [])
            if missing:
                raise DataError(f"{self.path}: ledger missing columns {', '.join(sorted(missing))}")
            for row in reader:
                if row["case_id"] in self._ids:
                    raise DataError(f"{self.path}: case {row['case_id']} enrolled twice")
                self._ids.add(row["case_id"])
                self._rows.append(row)
        logger.info("Ledger %s: %d enrolled cases", self.path, len(self._ids))

    @property
    def ids(self):
        return frozenset(self._ids)

    def __contains__(self, case_id):
        return case_id in self._ids

    def __len__(self):
        return len(self._ids)

    @property
    def next_week_index(self):
        if not self._rows:
            return 0
        return max(int(r["week_index"]) for r in self._rows) + 1

    def append(self, cohort):
        clash = cohort.case_ids & self._ids
        if clash:
            raise DataError(f"Cases already enrolled: {', '.join(sorted(clash)[:5])}")
        rows = [
            {
                "case_id": c,
                "week_index": str(cohort.week_index),
                "arm": arm,
                "as_of": cohort.as_of.isoformat() if cohort.as_of else "",
            }
            for arm, ids in (("treatment", cohort.treatment), ("control", cohort.control))
            for c in sorted(ids, key=lambda c: cohort.ranks[c])
        ]
        if self.path is not None:
            new = not self.path.exists()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
                if new:
                    writer.writeheader()
                writer.writerows(rows)
        self._rows += rows
        self._ids |= cohort.case_ids


def assign_week(ranked, ledger, seed, cohort_size=COHORT_SIZE, week_index=0):
    """Top-down selection skipping enrolled cases, then a seeded even split."""
    if cohort_size <= 0 or cohort_size % 2:
        raise ConfigError("cohort_size must be a positive even number")
    enrolled = ledger.ids if isinstance(ledger, EnrollmentLedger) else set(ledger)
    entries = ranked.entries
    selected, ranks = [], {}
    skipped = 0
    for case_id, rank in zip(entries["case_id"], entries["rank"]):
        if len(selected) == cohort_size:
            break
        if case_id in enrolled:
            skipped += 1
            continue
        selected.append(case_id)
        ranks[case_id] = int(rank)
    pool = len(selected)
    shortfall = pool < cohort_size
    if shortfall:
        size = pool - pool % 2
        selected = selected[:size]
        ranks = {c: ranks[c] for c in selected}
        logger.warning("Week %d: eligible pool of %d short of %d; cohort built at %d", week_index, pool, cohort_size, size)
    order = make_rng(seed).permutation(len(selected))
    half = len(selected) // 2
    treatment = sorted((selected[i] for i in order[:half]), key=ranks.get)
    control = sorted((selected[i] for i in order[half:]), key=ranks.get)
    return RctCohort(
        week_index=week_index,
        as_of=ranked.as_of,
        treatment=treatment,
        control=control,
        replacements_used=skipped,
        seed=int(seed),
        ranks=ranks,
        shortfall=shortfall,
    )


def run_weeks(rankings, ledger, master_seed, cohort_size=COHORT_SIZE):
    """Sequential assignment; week seeds are derived from the master seed."""
    cohorts = []
    start = ledger.next_week_index
    for offset, ranked in enumerate(rankings):
        week = start + offset
        cohort = assign_week(ranked, ledger, derive_seed(master_seed, "rct", week), cohort_size, week)
        ledger.append(cohort)
        cohorts.append(cohort)
        logger.info(
            "Week %d (%s): %d treatment, %d control, %d replacements",
            week,
            cohort.as_of,
            len(cohort.treatment),
            len(cohort.control),
            cohort.replacements_used,
        )
    return cohorts


def write_cohort(cohort, path):
    cohort.to_frame().to_csv(path, index=False, lineterminator="\n")


def read_cohorts(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"Cohort directory not found: {directory}")
    files = sorted(directory.glob("cohort_*.csv"))
    if not files:
        raise DataError(f"No cohort files in {directory}")
    cohorts = []
    for path in files:
        frame = pd.read_csv(path, dtype={"case_id": str, "as_of": str}, keep_default_na=False)
        missing = set(COHORT_COLUMNS) - set(frame.columns)
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(sorted(missing))}")
        as_of = date.fromisoformat(frame["as_of"].iloc[0]) if len(frame) else None
        cohorts.append(
            RctCohort(
                week_index=int(frame["week_index"].iloc[0]) if len(frame) else 0,
                as_of=as_of,
                treatment=list(frame.loc[frame["arm"] == "treatment", "case_id"]),
                control=list(frame.loc[frame["arm"] == "control", "case_id"]),
                replacements_used=0,
                seed=0,
                ranks=dict(zip(frame["case_id"], frame["rank"].astype(int))),
            )
        )
    return cohorts


def _days_to_resolution(store, case_ids, as_of, horizon_days):
    """Days until the case's spell open on ``as_of`` ends, NaN if not within the horizon."""
    d = to_day(as_of)
    spells = store.spells
    own = spells[spells["case_id"].isin(case_ids) & (spells["start"] <= d)]
    current = own.groupby("case_id", sort=False).last()
    end = current["end"].reindex(list(case_ids))
    days = end - d
    return days.where(days <= horizon_days).to_numpy(dtype=np.float64)


def outcomes_report(store, cohorts, horizon_days=HORIZON_DAYS):
    """Per-arm resolution rate and median days to resolution, per week and pooled."""
    if not cohorts:
        raise DataError("No cohorts to report on")
    last = max(c.as_of for c in cohorts)
    needed = last + timedelta(days=horizon_days)
    if store.extraction_date is None or store.extraction_date < needed:
        raise InsufficientFollowUpError(needed, store.extraction_date or last)

    per_case = []
    for c in cohorts:
        for arm, ids in (("treatment", c.treatment), ("control", c.control)):
            days = _days_to_resolution(store, ids, c.as_of, horizon_days)
            per_case += [(c.week_index, arm, cid, dd) for cid, dd in zip(ids, days)]
    frame = pd.DataFrame(per_case, columns=["week_index", "arm", "case_id", "days"])

    def summarize(part):
        n = len(part)
        resolved = part["days"].notna()
        rate = resolved.sum() / n if n else 0.0
        median = part.loc[resolved, "days"].median() if resolved.any() else None
        return {
            "n": n,
            "resolved": int(resolved.sum()),
            "resolution_rate": rate,
            "rate_se": float(np.sqrt(rate * (1 - rate) / n)) if n else 0.0,
            "median_days_to_resolution": "N/A" if median is None else f"{median:g}",
        }

    rows = []
    for (week, arm), part in frame.groupby(["week_index", "arm"], sort=True):
        rows.append({"week_index": str(week), "arm": arm, **summarize(part)})
    for arm, part in frame.groupby("arm", sort=True):
        rows.append({"week_index": "all", "arm": arm, **summarize(part)})
    return pd.DataFrame(rows)
