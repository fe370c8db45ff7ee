"""As-of-date feature extraction.

Five feature groups are computed for each (case, as_of) pair from events and
closures dated on or before ``as_of``:

- ``case_level``: per event type totals, trailing window counts and per-30-day
  rates, case ages, crime-to-report delay, time with the current lawyer,
  arrest flag and the crime category one-hot
- ``milestones``: ever/total/window counts per milestone type
- ``lawyer``: the assigned lawyer's caseload, opened/closed/transferred counts,
  closure ratio and rank among active lawyers
- ``unit``: the same structure aggregated over the case's current unit
- ``crime_type``: open/closed counts, mean event volume, closure ratio and
  rank of the case's crime category

Closure ratios everywhere are ``closed_in_window / (open_now + closed_in_window)``
and 0 when the denominator is 0. Ranks are dense, best first.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from triage import case_store
from triage.case_store import CORE_EVENT_TYPES, EVENT_TYPES, MILESTONE_TYPES, UNITS, to_day
from triage.config import MONTH_DAYS
from triage.errors import ConfigError, NotFoundError

logger = logging.getLogger(__name__)

GROUPS = ("case_level", "milestones", "lawyer", "unit", "crime_type")
FAMILIES = (
    "moves",
    "estados_investigacion",
    "days_since_open",
    "days_since_last_event",
    "case_static",
    "lawyer",
    "unit",
    "crime_type",
)
OTHER_BUCKET = "OTHER"
MISSING_SUFFIX = "__missing"


@dataclass(frozen=True)
class FeatureConfig:
    case_windows: tuple = (90, 183, 365, 730)
    # None is the whole history
    aggregate_windows: tuple = (30, 90, 183, None)
    crime_vocab_size: int = 40

    def __post_init__(self):
        if not self.case_windows or any(w <= 0 for w in self.case_windows):
            raise ConfigError("case_windows must be positive day counts")
        if list(self.case_windows) != sorted(self.case_windows):
            raise ConfigError("case_windows must be increasing")
        if any(w is not None and w <= 0 for w in self.aggregate_windows):
            raise ConfigError("aggregate_windows must be positive or null")
        if self.crime_vocab_size < 0:
            raise ConfigError("crime_vocab_size must be >= 0")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        for key in ("case_windows", "aggregate_windows"):
            if key in data:
                data[key] = tuple(data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"features config: unknown fields {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class FeatureVector:
    case_id: Optional[str]
    as_of: object
    values: dict = field(default_factory=dict)
    group_of: dict = field(default_factory=dict)

    @property
    def names(self):
        return list(self.values)


def window_label(w):
    return "all" if w is None else f"{w}d"


def _in_window(day, d, w):
    if w is None:
        return day <= d
    return (day <= d) & (day > d - w)


def _ratio(closed, open_now):
    closed = np.asarray(closed, dtype=np.float64)
    denom = closed + np.asarray(open_now, dtype=np.float64)
    out = np.zeros_like(closed)
    np.divide(closed, denom, out=out, where=denom > 0)
    return out


def dense_rank(values):
    """Dense rank, highest value first."""
    s = pd.Series(values, dtype="float64")
    if s.empty:
        return s.astype("int64")
    return s.rank(method="dense", ascending=False).astype("int64")


def group_of(name):
    if name.startswith("ms_"):
        return "milestones"
    if name.startswith("lawyer_") or name.startswith("case_distinct_lawyers"):
        return "lawyer"
    if name.startswith("unit_"):
        return "unit"
    if name.startswith("crime_") and not name.startswith(("crime_is_", "crime_to_report")):
        return "crime_type"
    return "case_level"


def family_of(name):
    if name.startswith("ev_progress_update_"):
        return "estados_investigacion"
    if name.startswith(("ev_", "ms_")):
        return "moves"
    if name == "days_since_open":
        return "days_since_open"
    if name == "days_since_last_event":
        return "days_since_last_event"
    group = group_of(name)
    if group in ("lawyer", "unit", "crime_type"):
        return group
    return "case_static"


def crime_vocabulary(store, as_of, size=40):
    """Most frequent categories among cases opened by ``as_of``."""
    d = to_day(as_of)
    seen = store.cases.loc[store.cases["opened_day"] <= d, "crime_category"]
    counts = seen[seen != OTHER_BUCKET].value_counts()
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(c for c, _ in ranked[:size])


# ---------------------------------------------------------------------------
# Office-wide tables (one row per lawyer / unit / category)
# ---------------------------------------------------------------------------


def _with_actor(ev):
    """Events carrying a non-blank acting lawyer."""
    ev = ev[ev["actor_lawyer"].notna()]
    return ev[ev["actor_lawyer"].astype(str).str.strip().str.len() > 0]


def _distinct_lawyers(store, case_id, d):
    if case_id is None:
        return 0.0
    ev = store.events
    ev = _with_actor(ev[(ev["case_id"] == case_id) & (ev["day"] <= d)])
    return float(ev["actor_lawyer"].nunique())


def _assignment_segments(store, d):
    """Runs of consecutive events by one lawyer per case, as [start, end)."""
    ev = store.events
    acted = _with_actor(ev[ev["day"] <= d])
    if acted.empty:
        return pd.DataFrame(columns=["case_id", "lawyer", "start", "end"])
    case = acted["case_id"].to_numpy()
    actor = acted["actor_lawyer"].to_numpy()
    change = np.r_[True, (case[1:] != case[:-1]) | (actor[1:] != actor[:-1])]
    seg = pd.DataFrame(
        {
            "case_id": case[change],
            "lawyer": actor[change],
            "start": acted["day"].to_numpy()[change].astype(np.int64),
        }
    )
    nxt = seg.groupby("case_id", sort=False)["start"].shift(-1)
    closed = seg["case_id"].map(dict(zip(store.cases["case_id"], store.cases["closed_day"])))
    closed = closed.where(closed <= d)
    seg["end"] = nxt.fillna(closed).fillna(np.inf).astype(np.float64)
    return seg


def _caseload_at(segments, queries):
    """Open assignments of ``queries.lawyer`` on ``queries.day``."""
    if segments.empty or queries.empty:
        return np.zeros(len(queries))
    starts = segments[["lawyer", "start"]].rename(columns={"start": "day"}).assign(delta=1)
    ends = segments.loc[np.isfinite(segments["end"]), ["lawyer", "end"]].rename(columns={"end": "day"})
    ends = ends.assign(delta=-1)
    moves = pd.concat([starts, ends], ignore_index=True)
    moves["day"] = moves["day"].astype(np.int64)
    level = (
        moves.groupby(["lawyer", "day"], sort=True)["delta"]
        .sum()
        .groupby(level="lawyer")
        .cumsum()
        .rename("caseload")
        .reset_index()
        .sort_values("day", kind="mergesort")
    )
    left = queries.assign(_pos=np.arange(len(queries)), day=queries["day"].astype(np.int64))
    left = left.sort_values("day", kind="mergesort")
    merged = pd.merge_asof(left, level, on="day", by="lawyer", direction="backward")
    return merged.sort_values("_pos")["caseload"].fillna(0).to_numpy(dtype=np.float64)


def lawyer_table(store, as_of, windows=(30, 90, 183, None), segments=None):
    d = to_day(as_of)
    if segments is None:
        segments = _assignment_segments(store, d)
    ev = store.events
    acted = _with_actor(ev[ev["day"] <= d])
    lawyers = pd.Index(sorted(acted["actor_lawyer"].unique()), name="lawyer")
    table = pd.DataFrame(index=lawyers)
    open_segs = segments[(segments["start"] <= d) & (segments["end"] > d)]
    open_now = open_segs.groupby("lawyer").size().reindex(lawyers, fill_value=0).astype(np.float64)
    table["open_now"] = open_now
    for w in windows:
        lab = window_label(w)
        sub = acted[_in_window(acted["day"], d, w)]
        by_type = sub.groupby(["actor_lawyer", "event_type"]).size().unstack(fill_value=0)
        by_type = by_type.reindex(index=lawyers, fill_value=0)

        def col(t):
            return by_type[t].astype(np.float64) if t in by_type else pd.Series(0.0, index=lawyers)

        closed = col("closure")
        table[f"opened_{lab}"] = col("initialized")
        table[f"closed_{lab}"] = closed
        table[f"transferred_{lab}"] = col("unit_transfer")
        ratio = pd.Series(_ratio(closed, open_now), index=lawyers)
        table[f"closure_ratio_{lab}"] = ratio
        active = pd.Index(sub["actor_lawyer"].unique())
        rank = pd.Series(0, index=lawyers, dtype=np.int64)
        if len(active):
            ranks = dense_rank(ratio.loc[active].to_numpy())
            rank.loc[active] = ranks.to_numpy()
            worst = int(ranks.max()) + 1
        else:
            worst = 1
        rank[~lawyers.isin(active)] = worst
        table[f"rank_{lab}"] = rank.astype(np.float64)
    return table


def unit_table(store, as_of, windows=(30, 90, 183, None)):
    d = to_day(as_of)
    spells = store.spells
    started = spells["start"] <= d
    end = spells["end"]
    is_open = started & (end.isna() | (end > d))
    units = pd.Index(UNITS, name="unit")
    table = pd.DataFrame(index=units)
    open_now = spells[is_open].groupby("unit").size().reindex(units, fill_value=0).astype(np.float64)
    table["open_now"] = open_now
    for w in windows:
        lab = window_label(w)
        entered = spells[_in_window(spells["start"], d, w)].groupby("unit").size()
        ended = spells[end.notna() & _in_window(end, d, w)]
        closed = ended[ended["end_kind"] == "closure"].groupby("unit").size().reindex(units, fill_value=0)
        transferred = ended[ended["end_kind"] == "transfer"].groupby("unit").size()
        closed = closed.astype(np.float64)
        table[f"entered_{lab}"] = entered.reindex(units, fill_value=0).astype(np.float64)
        table[f"closed_{lab}"] = closed
        table[f"transferred_{lab}"] = transferred.reindex(units, fill_value=0).astype(np.float64)
        table[f"closure_ratio_{lab}"] = _ratio(closed, open_now)
        table[f"rank_{lab}"] = dense_rank(closed.to_numpy()).to_numpy().astype(np.float64)
    return table


def crime_table(store, as_of, windows=(30, 90, 183, None)):
    d = to_day(as_of)
    cases = store.cases
    seen = cases[cases["opened_day"] <= d]
    categories = pd.Index(sorted(seen["crime_category"].unique()), name="crime_category")
    table = pd.DataFrame(index=categories)
    closed_known = seen["closed_day"] <= d
    open_now = seen[~closed_known].groupby("crime_category").size().reindex(categories, fill_value=0)
    open_now = open_now.astype(np.float64)
    table["open_now"] = open_now
    ev = store.events
    per_case = ev[ev["day"] <= d].groupby("case_id").size()
    volume = seen["case_id"].map(per_case).fillna(0)
    table["mean_events"] = volume.groupby(seen["crime_category"]).mean().reindex(categories, fill_value=0.0)
    for w in windows:
        lab = window_label(w)
        opened = seen[_in_window(seen["opened_day"], d, w)].groupby("crime_category").size()
        closed_rows = seen[seen["closed_day"].notna() & _in_window(seen["closed_day"], d, w)]
        closed = closed_rows.groupby("crime_category").size().reindex(categories, fill_value=0).astype(np.float64)
        table[f"opened_{lab}"] = opened.reindex(categories, fill_value=0).astype(np.float64)
        table[f"closed_{lab}"] = closed
        table[f"closure_ratio_{lab}"] = _ratio(closed, open_now)
        table[f"rank_{lab}"] = dense_rank(closed.to_numpy()).to_numpy().astype(np.float64)
    return table


# ---------------------------------------------------------------------------
# Extractor
# ---------------------------------------------------------------------------


class FeatureExtractor:
    """Builds the stable-column feature frame for a set of cases on one date.

    With ``vocabulary`` unset the crime one-hot uses the top categories as of
    each call's date; pin it with ``with_vocabulary`` to share one schema
    across dates.
    """

    def __init__(self, config=None, vocabulary=None):
        self.config = config or FeatureConfig()
        self.vocabulary = tuple(vocabulary) if vocabulary is not None else None

    def with_vocabulary(self, vocabulary):
        return FeatureExtractor(self.config, vocabulary)

    def vocabulary_for(self, store, as_of):
        if self.vocabulary is not None:
            return self.vocabulary
        return crime_vocabulary(store, as_of, self.config.crime_vocab_size)

    # -- names --------------------------------------------------------------

    def case_level_names(self, vocabulary):
        names = []
        for et in ("all",) + CORE_EVENT_TYPES:
            names.append(f"ev_{et}_total")
            names += [f"ev_{et}_{w}d" for w in self.config.case_windows]
            names += [f"ev_{et}_rate_{w}d" for w in self.config.case_windows]
        names += [
            "days_since_open",
            "days_since_last_event",
            "crime_to_report_days",
            "crime_to_report_days" + MISSING_SUFFIX,
            "days_with_lawyer",
            "days_with_lawyer" + MISSING_SUFFIX,
            "arrested_at_intake",
        ]
        names += [f"crime_is_{c}" for c in vocabulary] + [f"crime_is_{OTHER_BUCKET}"]
        return names

    def milestone_names(self):
        names = []
        for m in MILESTONE_TYPES:
            names += [f"ms_{m}_ever", f"ms_{m}_total"]
            names += [f"ms_{m}_{w}d" for w in self.config.case_windows]
        return names

    def _aggregate_stems(self, prefix, stems):
        out = [f"{prefix}_open_now"] if prefix != "crime" else [f"{prefix}_open_now", f"{prefix}_mean_events"]
        for w in self.config.aggregate_windows:
            out += [f"{prefix}_{s}_{window_label(w)}" for s in stems]
        return out

    def lawyer_names(self):
        names = ["lawyer_caseload"]
        for w in self.config.aggregate_windows:
            lab = window_label(w)
            names += [f"lawyer_{s}_{lab}" for s in ("opened", "closed", "transferred", "closure_ratio", "rank")]
        with_missing = []
        for n in names:
            with_missing += [n, n + MISSING_SUFFIX]
        return with_missing + ["case_distinct_lawyers"]

    def unit_names(self):
        return self._aggregate_stems("unit", ("entered", "closed", "transferred", "closure_ratio", "rank"))

    def crime_names(self):
        return self._aggregate_stems("crime", ("opened", "closed", "closure_ratio", "rank"))

    def feature_names(self, vocabulary):
        return (
            self.case_level_names(vocabulary)
            + self.milestone_names()
            + self.lawyer_names()
            + self.unit_names()
            + self.crime_names()
        )

    def groups(self, names):
        return {n: group_of(n) for n in names}

    def families(self, names):
        return {n: family_of(n) for n in names}

    # -- computation ----------------------------------------------------------

    def _event_counts(self, store, ids, d):
        ev = store.events
        ev = ev[(ev["day"] <= d) & ev["case_id"].isin(ids)]
        n, t = len(ids), len(EVENT_TYPES)
        code = ids.get_indexer(ev["case_id"])
        tcode = pd.Categorical(ev["event_type"], categories=list(EVENT_TYPES)).codes.astype(np.int64)
        age = d - ev["day"].to_numpy()
        flat = code * t + tcode

        def count(mask):
            return np.bincount(flat[mask], minlength=n * t).reshape(n, t).astype(np.float64)

        total = count(np.ones(len(flat), dtype=bool))
        windowed = {w: count(age < w) for w in self.config.case_windows}
        last_day = pd.Series(ev["day"].to_numpy(), index=code).groupby(level=0).max()
        last_day = last_day.reindex(np.arange(n)).to_numpy(dtype=np.float64)
        distinct = _with_actor(ev).groupby("case_id")["actor_lawyer"].nunique()
        return total, windowed, last_day, distinct.reindex(ids, fill_value=0).to_numpy(dtype=np.float64)

    def frame(self, store, case_ids, as_of):
        """Feature frame indexed by case_id, columns in ``feature_names`` order."""
        d = to_day(as_of)
        ids = pd.Index(list(case_ids), name="case_id")
        vocab = self.vocabulary_for(store, as_of)
        names = self.feature_names(vocab)
        if len(ids) == 0:
            return pd.DataFrame({n: pd.Series(dtype="float64") for n in names}, index=ids)
        unknown = ids[~ids.isin(store.cases["case_id"])]
        if len(unknown):
            raise NotFoundError(f"Unknown case_id: {unknown[0]}")
        cases = store.cases.set_index("case_id").loc[ids]
        cols = {}

        total, windowed, last_day, distinct = self._event_counts(store, ids, d)
        type_index = {t: i for i, t in enumerate(EVENT_TYPES)}
        for et in ("all",) + CORE_EVENT_TYPES:
            pick = (lambda m: m.sum(axis=1)) if et == "all" else (lambda m, i=type_index[et]: m[:, i])
            cols[f"ev_{et}_total"] = pick(total)
            for w in self.config.case_windows:
                cols[f"ev_{et}_{w}d"] = pick(windowed[w])
            for w in self.config.case_windows:
                cols[f"ev_{et}_rate_{w}d"] = pick(windowed[w]) / w * MONTH_DAYS
        opened = cases["opened_day"].to_numpy(dtype=np.float64)
        cols["days_since_open"] = d - opened
        cols["days_since_last_event"] = d - np.where(np.isnan(last_day), opened, last_day)
        crime_day = cases["crime_day"].to_numpy(dtype=np.float64)
        report_missing = np.isnan(crime_day)
        cols["crime_to_report_days"] = np.where(report_missing, 0.0, opened - crime_day)
        cols["crime_to_report_days" + MISSING_SUFFIX] = report_missing.astype(np.float64)
        cols["arrested_at_intake"] = cases["arrested_at_intake"].to_numpy().astype(np.float64)
        categories = cases["crime_category"].to_numpy()
        vocab_set = set(vocab)
        for c in vocab:
            cols[f"crime_is_{c}"] = (categories == c).astype(np.float64)
        cols[f"crime_is_{OTHER_BUCKET}"] = np.array([c not in vocab_set for c in categories], dtype=np.float64)

        for m in MILESTONE_TYPES:
            i = type_index[m]
            cols[f"ms_{m}_ever"] = (total[:, i] > 0).astype(np.float64)
            cols[f"ms_{m}_total"] = total[:, i]
            for w in self.config.case_windows:
                cols[f"ms_{m}_{w}d"] = windowed[w][:, i]

        self._lawyer_columns(store, ids, d, as_of, last_day, cols)
        cols["case_distinct_lawyers"] = distinct
        self._unit_columns(store, ids, d, as_of, cols)
        self._crime_columns(store, categories, as_of, cols)

        out = pd.DataFrame(cols, index=ids)
        return out.loc[:, names].astype(np.float64)

    def _lawyer_columns(self, store, ids, d, as_of, last_day, cols):
        segments = _assignment_segments(store, d)
        table = lawyer_table(store, as_of, self.config.aggregate_windows, segments=segments)
        current = segments.groupby("case_id", sort=False).last().reindex(ids)
        lawyer = current["lawyer"]
        known = lawyer.notna().to_numpy()
        days_with = np.where(known, d - current["start"].to_numpy(dtype=np.float64), 0.0)
        cols["days_with_lawyer"] = days_with
        cols["days_with_lawyer" + MISSING_SUFFIX] = (~known).astype(np.float64)

        caseload = np.zeros(len(ids))
        if known.any():
            queries = pd.DataFrame({"lawyer": lawyer[known].to_numpy(), "day": last_day[known]})
            caseload[known] = _caseload_at(segments, queries)
        rows = table.reindex(lawyer.to_numpy())
        flag = (~known).astype(np.float64)
        cols["lawyer_caseload"] = caseload
        cols["lawyer_caseload" + MISSING_SUFFIX] = flag
        for w in self.config.aggregate_windows:
            lab = window_label(w)
            for stem in ("opened", "closed", "transferred", "closure_ratio", "rank"):
                values = rows[f"{stem}_{lab}"].to_numpy(dtype=np.float64)
                cols[f"lawyer_{stem}_{lab}"] = np.where(known, values, 0.0)
                cols[f"lawyer_{stem}_{lab}" + MISSING_SUFFIX] = flag

    def _unit_columns(self, store, ids, d, as_of, cols):
        spells = store.spells
        held = spells[(spells["start"] <= d) & spells["case_id"].isin(ids)]
        unit = held.groupby("case_id", sort=False)["unit"].last().reindex(ids)
        table = unit_table(store, as_of, self.config.aggregate_windows)
        rows = table.reindex(unit.to_numpy())
        for name in self.unit_names():
            cols[name] = rows[name[len("unit_"):]].fillna(0.0).to_numpy(dtype=np.float64)

    def _crime_columns(self, store, categories, as_of, cols):
        table = crime_table(store, as_of, self.config.aggregate_windows)
        rows = table.reindex(categories)
        unseen = rows["open_now"].isna().to_numpy()
        for name in self.crime_names():
            col = name[len("crime_"):]
            values = rows[col].to_numpy(dtype=np.float64)
            if col.startswith("rank_"):
                worst = (table[col].max() if len(table) else 0) + 1
                values = np.where(unseen, worst, values)
            cols[name] = np.where(np.isnan(values), 0.0, values)

    def vectors(self, store, case_ids, as_of):
        frame = self.frame(store, case_ids, as_of)
        groups = self.groups(frame.columns)
        return [
            FeatureVector(case_id=cid, as_of=as_of, values=dict(zip(frame.columns, row)), group_of=groups)
            for cid, row in zip(frame.index, frame.to_numpy())
        ]


def vectors_to_frame(vectors):
    if not vectors:
        return pd.DataFrame()
    names = vectors[0].names
    return pd.DataFrame(
        [[v.values[n] for n in names] for v in vectors],
        index=pd.Index([v.case_id for v in vectors], name="case_id"),
        columns=names,
    )


# ---------------------------------------------------------------------------
# Per-case operations
# ---------------------------------------------------------------------------


def _partial(store, case_id, as_of, group, extractor=None):
    if not store.has_case(case_id):
        raise NotFoundError(f"Unknown case_id: {case_id}")
    extractor = extractor or FeatureExtractor()
    frame = extractor.frame(store, [case_id], as_of)
    names = [n for n in frame.columns if group_of(n) == group]
    return FeatureVector(
        case_id=case_id,
        as_of=as_of,
        values={n: float(frame.at[case_id, n]) for n in names},
        group_of={n: group for n in names},
    )


def case_level(store, case_id, as_of, extractor=None):
    return _partial(store, case_id, as_of, "case_level", extractor)


def milestones(store, case_id, as_of, extractor=None):
    return _partial(store, case_id, as_of, "milestones", extractor)


def lawyer_activity(store, lawyer_id, as_of, case_id=None, config=None):
    """Lawyer group for one lawyer.

    The caseload is measured on the date of ``case_id``'s latest event when a
    case is given, otherwise on ``as_of``. ``case_distinct_lawyers`` counts the
    lawyers who acted on ``case_id`` so far (0 without a case). Unknown lawyers
    get the missing encoding.
    """
    config = config or FeatureConfig()
    d = to_day(as_of)
    extractor = FeatureExtractor(config)
    names = extractor.lawyer_names()
    segments = _assignment_segments(store, d)
    table = lawyer_table(store, as_of, config.aggregate_windows, segments=segments)
    values = {}
    known = lawyer_id is not None and lawyer_id in table.index
    if known:
        day = d
        if case_id is not None:
            events = case_store.events_as_of(store, case_id, as_of)
            day = case_store.to_day(events[-1].occurred_at) if events else d
        values["lawyer_caseload"] = float(_caseload_at(segments, pd.DataFrame({"lawyer": [lawyer_id], "day": [day]}))[0])
        row = table.loc[lawyer_id]
        for n in names:
            if n.endswith(MISSING_SUFFIX):
                values[n] = 0.0
            elif n not in ("lawyer_caseload", "case_distinct_lawyers"):
                values[n] = float(row[n[len("lawyer_"):]])
    else:
        for n in names:
            values[n] = 1.0 if n.endswith(MISSING_SUFFIX) else 0.0
    values["case_distinct_lawyers"] = _distinct_lawyers(store, case_id, d)
    values = {n: values[n] for n in names}
    return FeatureVector(case_id=case_id, as_of=as_of, values=values, group_of={n: "lawyer" for n in names})


def unit_indicators(store, unit, as_of, config=None):
    if unit not in UNITS:
        raise ConfigError(f"Unknown unit {unit!r}")
    config = config or FeatureConfig()
    names = FeatureExtractor(config).unit_names()
    row = unit_table(store, as_of, config.aggregate_windows).loc[unit]
    values = {n: float(row[n[len("unit_"):]]) for n in names}
    return FeatureVector(case_id=None, as_of=as_of, values=values, group_of={n: "unit" for n in names})


def crime_aggregates(store, crime_category, as_of, config=None):
    config = config or FeatureConfig()
    names = FeatureExtractor(config).crime_names()
    table = crime_table(store, as_of, config.aggregate_windows)
    values = {}
    for n in names:
        col = n[len("crime_"):]
        if crime_category in table.index:
            values[n] = float(table.at[crime_category, col])
        elif col.startswith("rank_"):
            values[n] = float((table[col].max() if len(table) else 0) + 1)
        else:
            values[n] = 0.0
    return FeatureVector(case_id=None, as_of=as_of, values=values, group_of={n: "crime_type" for n in names})


def open_case_ids(store, unit, as_of):
    return sorted(case_store.open_cases(store, unit, as_of))


def assemble(store, unit, as_of, extractor=None):
    """One vector per open case of ``unit`` on ``as_of``, sorted by case_id."""
    extractor = extractor or FeatureExtractor()
    return extractor.vectors(store, open_case_ids(store, unit, as_of), as_of)


def finalization_labels(store, as_of, horizon_days, unit=None):
    """Six-month finalization label for every case open (in ``unit``) on ``as_of``."""
    spells = case_store.open_spells(store, as_of, unit)
    labels = case_store.finalization_labels(spells, as_of, horizon_days)
    return pd.Series(labels.to_numpy(), index=pd.Index(spells["case_id"].to_numpy(), name="case_id"), name="label")


def write_frame(frame, path):
    frame.reset_index().to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    logger.info("Wrote %d feature rows (%d columns) to %s", len(frame), frame.shape[1], path)
