"""Statutory prescription screening.

Period per legal subtype:

    fine only            -> 1 year
    rights only          -> 2 years
    prison (min, max)    -> max(3, (min + max) / 2)
    imprescriptible      -> never

Per crime category the thresholds are the min, mean and max of its finite
subtype periods. A case in the bottom ``k`` of a ranking is *potentially
prescribed* under a rule when ``as_of - opened_at >= T_rule(category)`` days
(years x 365). Interruptions and tolling are not modeled.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from triage.case_store import to_day
from triage.config import YEAR_DAYS
from triage.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

PENALTY_KINDS = ("fine_only", "rights_only", "prison")
UNLEGISLATED = "unlegislated"
RULES = ("min", "mean", "max")
PENALTY_COLUMNS = ["category", "subtype_id", "penalty_kind", "prison_min_years", "prison_max_years", "imprescriptible"]

FINE_ONLY_YEARS = 1.0
RIGHTS_ONLY_YEARS = 2.0
PRISON_FLOOR_YEARS = 3.0

DEFAULT_PENALTIES = Path(__file__).parent / "data" / "penalties.csv"


class _Imprescriptible:
    def __repr__(self):
        return "IMPRESCRIPTIBLE"


IMPRESCRIPTIBLE = _Imprescriptible()


@dataclass(frozen=True)
class CrimeSubtype:
    category: str
    subtype_id: str
    penalty_kind: str
    prison_min_years: Optional[float] = None
    prison_max_years: Optional[float] = None
    imprescriptible: bool = False


@dataclass(frozen=True)
class PrescriptionThresholds:
    category: str
    t_min_years: Optional[float]
    t_mean_years: Optional[float]
    t_max_years: Optional[float]
    subtype_count: int
    all_imprescriptible: bool = False

    def years(self, rule):
        if rule not in RULES:
            raise ConfigError(f"Unknown rule {rule!r}; use min, mean or max")
        return getattr(self, f"t_{rule}_years")

    def days(self, rule):
        years = self.years(rule)
        return None if years is None else years * YEAR_DAYS


@dataclass
class PenaltyTable:
    thresholds: dict = field(default_factory=dict)
    unlegislated: frozenset = frozenset()
    subtypes: list = field(default_factory=list)

    def categories(self):
        return set(self.thresholds) | set(self.unlegislated)

    def to_frame(self):
        rows = [
            {
                "category": t.category,
                "subtype_count": t.subtype_count,
                "t_min_years": t.t_min_years,
                "t_mean_years": t.t_mean_years,
                "t_max_years": t.t_max_years,
                "all_imprescriptible": t.all_imprescriptible,
            }
            for t in self.thresholds.values()
        ]
        return pd.DataFrame(rows)


def subtype_period(s):
    """Prescription period in years, or ``IMPRESCRIPTIBLE``."""
    if s.imprescriptible:
        return IMPRESCRIPTIBLE
    if s.penalty_kind == "fine_only":
        return FINE_ONLY_YEARS
    if s.penalty_kind == "rights_only":
        return RIGHTS_ONLY_YEARS
    if s.penalty_kind == "prison":
        lo, hi = s.prison_min_years, s.prison_max_years
        if lo is None or hi is None or np.isnan(lo) or np.isnan(hi):
            raise DataError(f"{s.category}/{s.subtype_id}: prison subtype without both bounds")
        if not 0 < lo <= hi:
            raise DataError(f"{s.category}/{s.subtype_id}: prison bounds must satisfy 0 < min <= max")
        return max(PRISON_FLOOR_YEARS, (lo + hi) / 2.0)
    raise DataError(f"{s.category}/{s.subtype_id}: unknown penalty_kind {s.penalty_kind!r}")


def category_thresholds(subtypes):
    if not subtypes:
        raise DataError("category_thresholds needs at least one subtype")
    category = subtypes[0].category
    periods = [subtype_period(s) for s in subtypes]
    finite = [p for p in periods if p is not IMPRESCRIPTIBLE]
    if not finite:
        return PrescriptionThresholds(category, None, None, None, len(subtypes), all_imprescriptible=True)
    return PrescriptionThresholds(
        category,
        t_min_years=min(finite),
        t_mean_years=sum(finite) / len(finite),
        t_max_years=max(finite),
        subtype_count=len(subtypes),
    )


_TRUE = {"true", "1", "yes", "y"}
_FALSE = {"false", "0", "no", "n", ""}


def _optional_float(value, where):
    value = str(value).strip()
    if not value:
        return None
    try:
        return float(value)
    except ValueError as e:
        raise DataError(f"{where}: not a number: {value!r}") from e


def penalty_table_from_frame(frame, source="penalty table"):
    missing = [c for c in PENALTY_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{source}: missing columns {', '.join(missing)}")
    subtypes = []
    unlegislated = set()
    for i, row in enumerate(frame.to_dict("records"), start=2):
        where = f"{source} line {i}"
        category = str(row["category"]).strip()
        kind = str(row["penalty_kind"]).strip()
        if not category:
            raise DataError(f"{where}: blank category")
        if kind == UNLEGISLATED:
            unlegislated.add(category)
            continue
        if kind not in PENALTY_KINDS:
            raise DataError(f"{where}: unknown penalty_kind {kind!r}")
        flag = str(row["imprescriptible"]).strip().lower()
        if flag not in _TRUE | _FALSE:
            raise DataError(f"{where}: imprescriptible is not boolean: {flag!r}")
        subtypes.append(
            CrimeSubtype(
                category=category,
                subtype_id=str(row["subtype_id"]).strip(),
                penalty_kind=kind,
                prison_min_years=_optional_float(row["prison_min_years"], where),
                prison_max_years=_optional_float(row["prison_max_years"], where),
                imprescriptible=flag in _TRUE,
            )
        )
    by_category = {}
    for s in subtypes:
        by_category.setdefault(s.category, []).append(s)
    both = sorted(set(by_category) & unlegislated)
    if both:
        raise DataError(f"{source}: categories both legislated and unlegislated: {', '.join(both)}")
    thresholds = {c: category_thresholds(subs) for c, subs in sorted(by_category.items())}
    return PenaltyTable(thresholds=thresholds, unlegislated=frozenset(unlegislated), subtypes=subtypes)


def load_penalty_table(path=DEFAULT_PENALTIES):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Penalty table not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    table = penalty_table_from_frame(frame, source=str(path))
    logger.info(
        "Loaded %d subtypes over %d categories (%d unlegislated) from %s",
        len(table.subtypes),
        len(table.thresholds),
        len(table.unlegislated),
        path,
    )
    return table


def check_table_completeness(store, table):
    """Categories in the store that are neither legislated nor declared unlegislated."""
    present = set(store.cases["crime_category"].unique())
    return sorted(present - table.categories())


def _bottom_with_age(store, ranked, k_bottom, as_of):
    bottom = ranked.bottom(k_bottom)
    # lowest score first; ties keep the reverse of the ranking order
    bottom = bottom.iloc[::-1].sort_values("score", kind="mergesort")
    attrs = store.cases.set_index("case_id").loc[bottom["case_id"]]
    out = pd.DataFrame(
        {
            "case_id": bottom["case_id"].to_numpy(),
            "rank": bottom["rank"].to_numpy(),
            "score": bottom["score"].to_numpy(),
            "crime_category": attrs["crime_category"].to_numpy(),
            "opened_at": attrs["opened_at"].dt.strftime("%Y-%m-%d").to_numpy(),
            "age_days": (to_day(as_of) - attrs["opened_day"]).to_numpy(dtype=np.int64),
        }
    )
    return out


def _threshold_days(out, table, rule, warn=True):
    days = np.full(len(out), np.nan)
    unknown = set()
    for i, category in enumerate(out["crime_category"]):
        t = table.thresholds.get(category)
        if t is None:
            if category not in table.unlegislated:
                unknown.add(category)
            continue
        d = t.days(rule)
        if d is not None:
            days[i] = d
    if warn:
        for category in sorted(unknown):
            n = int((out["crime_category"] == category).sum())
            logger.warning("No prescription thresholds for category %s; %d case(s) left unflagged", category, n)
    return days


def _flag(out, days, rule):
    flagged = ~np.isnan(days) & (out["age_days"].to_numpy() >= np.nan_to_num(days, nan=np.inf))
    result = out[flagged].copy()
    result["threshold_days"] = days[flagged]
    result["rule"] = rule
    result["status"] = "potentially prescribed"
    return result.reset_index(drop=True)


def flag_prescribed(store, ranked, table, rule="mean", k_bottom=1000, as_of=None):
    """Potentially prescribed cases among the ``k_bottom`` lowest-scored, ascending by score."""
    out = _bottom_with_age(store, ranked, k_bottom, as_of or ranked.as_of)
    return _flag(out, _threshold_days(out, table, rule), rule)


def flag_all_rules(store, ranked, table, k_bottom=1000, as_of=None):
    """Flags under min, mean and max from one bottom-tail pass."""
    out = _bottom_with_age(store, ranked, k_bottom, as_of or ranked.as_of)
    flags = {rule: _flag(out, _threshold_days(out, table, rule, warn=i == 0), rule) for i, rule in enumerate(RULES)}
    return flags, len(out)


def prescription_summary(entries):
    """``entries``: iterable of (as_of, model_tag, flags_by_rule, bottom_n)."""
    rows = []
    for as_of, tag, flags, bottom_n in entries:
        for rule in RULES:
            n = len(flags[rule])
            rows.append(
                {
                    "as_of": as_of.isoformat() if hasattr(as_of, "isoformat") else as_of,
                    "model_tag": tag,
                    "rule": rule,
                    "flagged": n,
                    "bottom_n": bottom_n,
                    "share": n / bottom_n if bottom_n else 0.0,
                }
            )
    return pd.DataFrame(rows, columns=["as_of", "model_tag", "rule", "flagged", "bottom_n", "share"])
