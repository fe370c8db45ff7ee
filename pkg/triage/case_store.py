"""Case register and procedural event log.

A ``CaseStore`` is built once (ingestion, synthesis or loading from disk) and
never mutated afterwards; every operation that "changes" a store returns a new
one. Internally all dates are kept twice: as ``datetime64`` columns for I/O and
as integer day ordinals (``date.toordinal()``) for window arithmetic.

File schema
-----------
``cases.csv``: case_id, opened_at, crime_date, crime_category, municipality,
unit, lawyer_id, arrested_at_intake, closed_at, closure_kind

``events.csv``: case_id, seq, event_type, occurred_at, actor_lawyer,
from_unit, to_unit

Dates are ISO-8601 days. ``crime_date``, ``lawyer_id``, ``closed_at``,
``closure_kind``, ``actor_lawyer`` and the transfer units may be blank.
JSONL files carry one object per line with the same keys.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from sqlalchemy import Boolean, Date, Integer, String, create_engine, insert, text
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column

from triage.errors import ConfigError, DataError, NotFoundError

logger = logging.getLogger(__name__)

UNITS = ("MAT", "UTMC", "UIE", "OEMASC", "UID")

CORE_EVENT_TYPES = (
    "initialized",
    "progress_update",
    "unit_transfer",
    "search_warrant",
    "suspect_update",
    "party_update",
    "closure",
)
MILESTONE_TYPES = (
    "judicialization",
    "preventive_detention",
    "judicial_authorization",
    "arrest_warrant",
    "conciliation_referral",
    "vinculacion_a_proceso",
    "alternative_mechanism",
)
EVENT_TYPES = CORE_EVENT_TYPES + MILESTONE_TYPES

CLOSURE_KINDS = ("administrative_closure", "alternative_mechanism", "transfer_out", "judicial_resolution")

CASE_COLUMNS = [
    "case_id",
    "opened_at",
    "crime_date",
    "crime_category",
    "municipality",
    "unit",
    "lawyer_id",
    "arrested_at_intake",
    "closed_at",
    "closure_kind",
]
EVENT_COLUMNS = ["case_id", "seq", "event_type", "occurred_at", "actor_lawyer", "from_unit", "to_unit"]

STORE_SCHEMA_VERSION = 1

_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    opened_at: date
    crime_category: str
    municipality: str
    unit: str
    lawyer_id: Optional[str]
    arrested_at_intake: bool
    closed_at: Optional[date] = None
    closure_kind: Optional[str] = None
    crime_date: Optional[date] = None


@dataclass(frozen=True)
class ProceduralEvent:
    case_id: str
    seq: int
    event_type: str
    occurred_at: date
    actor_lawyer: Optional[str]
    from_unit: Optional[str] = None
    to_unit: Optional[str] = None


@dataclass(frozen=True)
class RowReject:
    table: str
    line: int
    reason: str


def to_day(d):
    return d.toordinal()


def from_day(n):
    return date.fromordinal(int(n))


_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


def _day_numbers(series):
    """datetime64 series → float day ordinals, NaN where the date is missing."""
    values = series.values.astype("datetime64[D]")
    out = values.astype("int64").astype("float64") + _EPOCH_ORDINAL
    out[pd.isna(series.values)] = np.nan
    return out


def _blank_to_none(value):
    if value is None:
        return None
    if isinstance(value, float) and np.isnan(value):
        return None
    s = str(value).strip()
    return s or None


class CaseStore:
    """Immutable case register plus event log."""

    def __init__(self, cases, events, extraction_date=None, rejects=()):
        cases = cases.loc[:, CASE_COLUMNS].copy()
        events = events.loc[:, EVENT_COLUMNS].copy()
        for col in ("opened_at", "crime_date", "closed_at"):
            cases[col] = pd.to_datetime(cases[col])
        events["occurred_at"] = pd.to_datetime(events["occurred_at"])
        events["seq"] = events["seq"].astype("int64")
        cases["arrested_at_intake"] = cases["arrested_at_intake"].astype(bool)

        cases = cases.sort_values("case_id", kind="mergesort").reset_index(drop=True)
        cases["opened_day"] = _day_numbers(cases["opened_at"]).astype("int64") if len(cases) else np.array([], dtype="int64")
        cases["closed_day"] = _day_numbers(cases["closed_at"])
        cases["crime_day"] = _day_numbers(cases["crime_date"])

        events["day"] = _day_numbers(events["occurred_at"]).astype("int64") if len(events) else np.array([], dtype="int64")
        events = events.sort_values(["case_id", "day", "seq"], kind="mergesort").reset_index(drop=True)

        self._cases = cases
        self._events = events
        self.rejects = list(rejects)
        if extraction_date is None:
            extraction_date = self._max_date()
        self.extraction_date = extraction_date

    def _max_date(self):
        candidates = []
        if len(self._cases):
            candidates.append(int(self._cases["opened_day"].max()))
            closed = self._cases["closed_day"].dropna()
            if len(closed):
                candidates.append(int(closed.max()))
        if len(self._events):
            candidates.append(int(self._events["day"].max()))
        return from_day(max(candidates)) if candidates else None

    # read-only views; callers must not mutate them
    @property
    def cases(self):
        return self._cases

    @property
    def events(self):
        return self._events

    def __len__(self):
        return len(self._cases)

    @property
    def start_date(self):
        if not len(self._cases):
            return None
        return from_day(int(self._cases["opened_day"].min()))

    @cached_property
    def _case_index(self):
        return pd.Index(self._cases["case_id"])

    def has_case(self, case_id):
        return case_id in self._case_index

    def case(self, case_id):
        if not self.has_case(case_id):
            raise NotFoundError(f"Unknown case_id: {case_id}")
        row = self._cases.iloc[self._case_index.get_loc(case_id)]
        return CaseRecord(
            case_id=row["case_id"],
            opened_at=row["opened_at"].date(),
            crime_category=row["crime_category"],
            municipality=row["municipality"],
            unit=row["unit"],
            lawyer_id=_blank_to_none(row["lawyer_id"]),
            arrested_at_intake=bool(row["arrested_at_intake"]),
            closed_at=None if pd.isna(row["closed_at"]) else row["closed_at"].date(),
            closure_kind=_blank_to_none(row["closure_kind"]),
            crime_date=None if pd.isna(row["crime_date"]) else row["crime_date"].date(),
        )

    def case_records(self, case_ids=None):
        ids = self._cases["case_id"] if case_ids is None else case_ids
        return [self.case(cid) for cid in ids]

    @cached_property
    def _event_bounds(self):
        """case_id → (first row, last row + 1) in the sorted event frame."""
        if not len(self._events):
            return {}
        ids = self._events["case_id"].values
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
        ends = np.r_[starts[1:], len(ids)]
        return {ids[s]: (s, e) for s, e in zip(starts, ends)}

    def case_events(self, case_id):
        s, e = self._event_bounds.get(case_id, (0, 0))
        return self._events.iloc[s:e]

    @cached_property
    def spells(self):
        return unit_spells(self)

    def copy_with(self, cases=None, events=None, extraction_date=None):
        return CaseStore(
            self._cases if cases is None else cases,
            self._events if events is None else events,
            extraction_date=extraction_date,
        )


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _read_rows(path, fmt):
    """Yield (line_number, dict | None, error) for each data row."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Input file not found: {path}")
    if fmt == "csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None:
                return
            header = [h.strip() for h in header]
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    yield line, None, f"expected {len(header)} fields, found {len(row)}"
                    continue
                yield line, dict(zip(header, row)), None
    elif fmt == "jsonl":
        with open(path, "r", encoding="utf-8") as f:
            for line, raw in enumerate(f, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as e:
                    yield line, None, f"invalid JSON: {e.msg}"
                    continue
                if not isinstance(obj, dict):
                    yield line, None, "expected a JSON object"
                    continue
                yield line, {k: "" if v is None else str(v) for k, v in obj.items()}, None
    else:
        raise ConfigError(f"Unsupported format: {fmt!r} (use csv or jsonl)")


def _parse_date(value):
    value = (value or "").strip()
    if not value:
        return None
    return date.fromisoformat(value)


def _parse_case(row):
    missing = [c for c in CASE_COLUMNS if c not in row and c != "crime_date"]
    if missing:
        raise ValueError(f"missing columns: {', '.join(missing)}")
    case_id = row["case_id"].strip()
    if not case_id:
        raise ValueError("blank case_id")
    opened = _parse_date(row["opened_at"])
    if opened is None:
        raise ValueError("blank opened_at")
    crime_date = _parse_date(row.get("crime_date", ""))
    if crime_date is not None and crime_date > opened:
        raise ValueError("crime_date after opened_at")
    unit = row["unit"].strip()
    if unit not in UNITS:
        raise ValueError(f"unknown unit {unit!r}")
    category = row["crime_category"].strip()
    if not category:
        raise ValueError("blank crime_category")
    municipality = row["municipality"].strip()
    if not municipality:
        raise ValueError("blank municipality")
    arrested = row["arrested_at_intake"].strip().lower()
    if arrested not in _TRUE | _FALSE:
        raise ValueError(f"arrested_at_intake is not boolean: {arrested!r}")
    closed = _parse_date(row["closed_at"])
    kind = row["closure_kind"].strip() or None
    if (closed is None) != (kind is None):
        raise ValueError("closed_at and closure_kind must be both present or both blank")
    if kind is not None and kind not in CLOSURE_KINDS:
        raise ValueError(f"unknown closure_kind {kind!r}")
    if closed is not None and closed < opened:
        raise ValueError("closed_at before opened_at")
    return {
        "case_id": case_id,
        "opened_at": opened,
        "crime_date": crime_date,
        "crime_category": category,
        "municipality": municipality,
        "unit": unit,
        "lawyer_id": row["lawyer_id"].strip() or None,
        "arrested_at_intake": arrested in _TRUE,
        "closed_at": closed,
        "closure_kind": kind,
    }


def _parse_event(row):
    missing = [c for c in EVENT_COLUMNS if c not in row]
    if missing:
        raise ValueError(f"missing columns: {', '.join(missing)}")
    case_id = row["case_id"].strip()
    if not case_id:
        raise ValueError("blank case_id")
    seq = int(row["seq"])
    if seq < 0:
        raise ValueError("negative seq")
    event_type = row["event_type"].strip()
    if event_type not in EVENT_TYPES:
        raise ValueError(f"unknown event_type {event_type!r}")
    occurred = _parse_date(row["occurred_at"])
    if occurred is None:
        raise ValueError("blank occurred_at")
    from_unit = row["from_unit"].strip() or None
    to_unit = row["to_unit"].strip() or None
    if event_type == "unit_transfer":
        if from_unit not in UNITS or to_unit not in UNITS:
            raise ValueError("unit_transfer needs declared from_unit and to_unit")
        if from_unit == to_unit:
            raise ValueError("unit_transfer with from_unit == to_unit")
    elif from_unit is not None or to_unit is not None:
        raise ValueError("from_unit/to_unit only allowed on unit_transfer")
    return {
        "case_id": case_id,
        "seq": seq,
        "event_type": event_type,
        "occurred_at": occurred,
        "actor_lawyer": row["actor_lawyer"].strip() or None,
        "from_unit": from_unit,
        "to_unit": to_unit,
    }


def _validate_histories(cases, events):
    """Cross-row invariants. Violations are hard errors naming the case."""
    by_case = cases.set_index("case_id")
    without_events = sorted(set(by_case.index) - set(events["case_id"]))
    if without_events:
        raise DataError(f"Cases without an initialized event: {', '.join(without_events[:5])}")
    if events.empty:
        return

    ordered = events.sort_values(["case_id", "occurred_at", "seq"], kind="mergesort")
    grouped = ordered.groupby("case_id", sort=True)

    first = grouped["occurred_at"].min()
    opened = by_case.loc[first.index, "opened_at"]
    early = first < opened
    if early.any():
        cid = early[early].index[0]
        raise DataError(f"Case {cid}: event dated {first[cid].date()} before opened_at {opened[cid].date()}")

    last = grouped["occurred_at"].max()
    close = by_case.loc[last.index, "closed_at"]
    late = close.notna() & (last > close)
    if late.any():
        cid = late[late].index[0]
        raise DataError(f"Case {cid}: event dated {last[cid].date()} after closed_at {close[cid].date()}")

    closure_cases = set(ordered.loc[ordered["event_type"] == "closure", "case_id"])
    bad = sorted(closure_cases & set(by_case.index[by_case["closed_at"].isna()]))
    if bad:
        raise DataError(f"Case {bad[0]}: closure event on a case without closed_at")

    n_init = ordered["event_type"].eq("initialized").groupby(ordered["case_id"]).sum()
    n_transfer = ordered["event_type"].eq("unit_transfer").groupby(ordered["case_id"]).sum()
    mismatch = n_init != 1 + n_transfer
    if mismatch.any():
        cid = mismatch[mismatch].index[0]
        raise DataError(
            f"Case {cid}: {int(n_init[cid])} initialized events for {int(n_transfer[cid]) + 1} unit entries"
        )

    # each transfer must leave the unit the previous one entered
    transfers = ordered.loc[ordered["event_type"] == "unit_transfer", ["case_id", "from_unit", "to_unit"]]
    expected = transfers.groupby("case_id", sort=False)["to_unit"].shift(1)
    expected = expected.fillna(transfers["case_id"].map(by_case["unit"]))
    broken = transfers["from_unit"] != expected
    if broken.any():
        row = transfers[broken].iloc[0]
        raise DataError(
            f"Case {row['case_id']}: transfer from {row['from_unit']} while the case is in {expected[broken].iloc[0]}"
        )


def ingest(cases_path, events_path, fmt="csv"):
    """Load and validate a case register and event log.

    Malformed rows become ``RowReject`` records on the returned store; the
    remaining rows load. Violations that span rows (events outside the case's
    life, unknown cases, broken transfer chains) raise ``DataError``.
    """
    rejects = []
    case_rows = []
    seen_cases = set()
    rejected_cases = set()
    for line, row, error in _read_rows(cases_path, fmt):
        if error is None:
            try:
                parsed = _parse_case(row)
            except ValueError as e:
                error = str(e)
        if error is not None:
            rejects.append(RowReject("cases", line, error))
            if row and row.get("case_id", "").strip():
                rejected_cases.add(row["case_id"].strip())
            continue
        if parsed["case_id"] in seen_cases:
            rejects.append(RowReject("cases", line, f"duplicate case_id {parsed['case_id']}"))
            continue
        seen_cases.add(parsed["case_id"])
        case_rows.append(parsed)

    event_rows = []
    seen_keys = set()
    for line, row, error in _read_rows(events_path, fmt):
        if error is None:
            try:
                parsed = _parse_event(row)
            except ValueError as e:
                error = str(e)
        if error is not None:
            rejects.append(RowReject("events", line, error))
            continue
        key = (parsed["case_id"], parsed["seq"])
        if key in seen_keys:
            rejects.append(RowReject("events", line, f"duplicate (case_id, seq) {key}"))
            continue
        if parsed["case_id"] not in seen_cases:
            if parsed["case_id"] in rejected_cases - seen_cases:
                rejects.append(RowReject("events", line, f"case {parsed['case_id']} was rejected"))
                continue
            raise DataError(f"Event on line {line} references unknown case_id {parsed['case_id']}")
        seen_keys.add(key)
        event_rows.append(parsed)

    cases = pd.DataFrame(case_rows, columns=CASE_COLUMNS)
    events = pd.DataFrame(event_rows, columns=EVENT_COLUMNS)
    for col in ("opened_at", "crime_date", "closed_at"):
        cases[col] = pd.to_datetime(cases[col])
    events["occurred_at"] = pd.to_datetime(events["occurred_at"])
    _validate_histories(cases, events)

    store = CaseStore(cases, events, rejects=rejects)
    logger.info(
        "Ingested %d cases, %d events (%d rejected rows)", len(cases), len(events), len(rejects)
    )
    for r in rejects[:20]:
        logger.warning("Rejected %s line %d: %s", r.table, r.line, r.reason)
    return store


def _canonical_frames(store):
    cases = store.cases.loc[:, CASE_COLUMNS].copy()
    for col in ("opened_at", "crime_date", "closed_at"):
        cases[col] = cases[col].dt.strftime("%Y-%m-%d").fillna("")
    cases["arrested_at_intake"] = np.where(cases["arrested_at_intake"], "true", "false")
    cases = cases.fillna("")
    events = store.events.loc[:, EVENT_COLUMNS].copy()
    events["occurred_at"] = events["occurred_at"].dt.strftime("%Y-%m-%d")
    events = events.fillna("")
    return cases, events


def export(store, cases_path, events_path, fmt="csv"):
    """Write the canonical form: cases by case_id, events by (case_id, date, seq)."""
    cases, events = _canonical_frames(store)
    if fmt == "csv":
        cases.to_csv(cases_path, index=False, lineterminator="\n")
        events.to_csv(events_path, index=False, lineterminator="\n")
    elif fmt == "jsonl":
        for frame, path in ((cases, cases_path), (events, events_path)):
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for rec in frame.to_dict("records"):
                    if "seq" in rec:
                        rec["seq"] = int(rec["seq"])
                    f.write(json.dumps(rec, sort_keys=False) + "\n")
    else:
        raise ConfigError(f"Unsupported format: {fmt!r} (use csv or jsonl)")


# ---------------------------------------------------------------------------
# SQLite persistence
# ---------------------------------------------------------------------------


class Base(DeclarativeBase):
    pass


class CaseRow(Base):
    __tablename__ = "cases"
    case_id: Mapped[str] = mapped_column(String(64), primary_key=True)
    opened_at: Mapped[date] = mapped_column(Date, nullable=False)
    crime_date: Mapped[Optional[date]] = mapped_column(Date)
    crime_category: Mapped[str] = mapped_column(String(64), nullable=False)
    municipality: Mapped[str] = mapped_column(String(64), nullable=False)
    unit: Mapped[str] = mapped_column(String(16), nullable=False)
    lawyer_id: Mapped[Optional[str]] = mapped_column(String(64))
    arrested_at_intake: Mapped[bool] = mapped_column(Boolean, nullable=False)
    closed_at: Mapped[Optional[date]] = mapped_column(Date)
    closure_kind: Mapped[Optional[str]] = mapped_column(String(32))


class EventRow(Base):
    __tablename__ = "events"
    case_id: Mapped[str] = mapped_column(String(64), primary_key=True)
    seq: Mapped[int] = mapped_column(Integer, primary_key=True)
    event_type: Mapped[str] = mapped_column(String(32), nullable=False)
    occurred_at: Mapped[date] = mapped_column(Date, nullable=False)
    actor_lawyer: Mapped[Optional[str]] = mapped_column(String(64))
    from_unit: Mapped[Optional[str]] = mapped_column(String(16))
    to_unit: Mapped[Optional[str]] = mapped_column(String(16))


class StoreMeta(Base):
    __tablename__ = "store_meta"
    key: Mapped[str] = mapped_column(String(64), primary_key=True)
    value: Mapped[str] = mapped_column(String(256), nullable=False)


def _records(frame, date_cols):
    out = []
    for rec in frame.to_dict("records"):
        for k, v in rec.items():
            if k in date_cols:
                rec[k] = None if pd.isna(v) else v.date()
            elif v is None or (isinstance(v, float) and np.isnan(v)):
                rec[k] = None
        out.append(rec)
    return out


def save(store, path):
    path = Path(path)
    if path.exists():
        path.unlink()
    engine = create_engine(f"sqlite:///{path}")
    Base.metadata.create_all(engine)
    cases = store.cases.loc[:, CASE_COLUMNS]
    events = store.events.loc[:, EVENT_COLUMNS].copy()
    events["seq"] = events["seq"].astype(int)
    with engine.begin() as conn:
        case_records = _records(cases, {"opened_at", "crime_date", "closed_at"})
        for rec in case_records:
            rec["arrested_at_intake"] = bool(rec["arrested_at_intake"])
        if case_records:
            conn.execute(insert(CaseRow), case_records)
        event_records = _records(events, {"occurred_at"})
        for rec in event_records:
            rec["seq"] = int(rec["seq"])
        if event_records:
            conn.execute(insert(EventRow), event_records)
        meta = [
            {"key": "schema_version", "value": str(STORE_SCHEMA_VERSION)},
            {"key": "extraction_date", "value": store.extraction_date.isoformat() if store.extraction_date else ""},
        ]
        conn.execute(insert(StoreMeta), meta)
    engine.dispose()
    logger.info("Saved store (%d cases, %d events) to %s", len(cases), len(events), path)


def load(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Store not found: {path}")
    engine = create_engine(f"sqlite:///{path}")
    try:
        with engine.connect() as conn:
            meta = dict(conn.execute(text("SELECT key, value FROM store_meta")).all())
            if meta.get("schema_version") != str(STORE_SCHEMA_VERSION):
                raise DataError(f"{path}: unsupported store schema {meta.get('schema_version')!r}")
            cases = pd.read_sql_query(
                text("SELECT * FROM cases ORDER BY case_id"),
                conn,
                parse_dates=["opened_at", "crime_date", "closed_at"],
            )
            events = pd.read_sql_query(
                text("SELECT * FROM events ORDER BY case_id, occurred_at, seq"),
                conn,
                parse_dates=["occurred_at"],
            )
    finally:
        engine.dispose()
    extraction = meta.get("extraction_date") or None
    cases = cases.astype({"lawyer_id": object, "closure_kind": object})
    cases = cases.where(pd.notna(cases), None)
    events = events.where(pd.notna(events), None)
    return CaseStore(
        cases,
        events,
        extraction_date=date.fromisoformat(extraction) if extraction else None,
    )


# ---------------------------------------------------------------------------
# As-of queries
# ---------------------------------------------------------------------------


def unit_spells(store):
    """Intervals each case spends in one unit.

    Columns: case_id, unit, start (day), end (day or NaN), end_kind
    ('transfer' | 'closure' | None). A spell covers days ``start <= d < end``.
    """
    cases = store.cases
    events = store.events
    entries = pd.DataFrame(
        {
            "case_id": cases["case_id"].values,
            "unit": cases["unit"].values,
            "start": cases["opened_day"].values.astype("int64"),
            "order": -1,
        }
    )
    transfers = events.loc[events["event_type"] == "unit_transfer", ["case_id", "to_unit", "day", "seq"]]
    transfers = transfers.rename(columns={"to_unit": "unit", "day": "start", "seq": "order"})
    spells = pd.concat([entries, transfers], ignore_index=True)
    spells = spells.sort_values(["case_id", "start", "order"], kind="mergesort").reset_index(drop=True)
    nxt = spells.groupby("case_id", sort=False)["start"].shift(-1)
    closed = spells["case_id"].map(dict(zip(cases["case_id"], cases["closed_day"])))
    is_last = nxt.isna()
    spells["end"] = np.where(is_last, closed, nxt).astype("float64")
    spells["end_kind"] = np.where(is_last, np.where(closed.notna(), "closure", None), "transfer")
    spells.loc[spells["end"].isna(), "end_kind"] = None
    return spells.drop(columns="order")


def open_spells(store, as_of, unit=None):
    """Spells containing ``as_of``, i.e. cases open (in ``unit``) on that day."""
    d = to_day(as_of)
    spells = store.spells
    mask = (spells["start"] <= d) & (spells["end"].isna() | (spells["end"] > d))
    if unit is not None:
        mask &= spells["unit"] == unit
    return spells.loc[mask]


def open_cases(store, unit, as_of):
    if unit not in UNITS:
        raise ConfigError(f"Unknown unit {unit!r}; declared units are {', '.join(UNITS)}")
    return set(open_spells(store, as_of, unit)["case_id"])


def current_unit(store, case_id, as_of):
    """Unit holding the case on ``as_of`` (the closing unit once closed)."""
    if not store.has_case(case_id):
        raise NotFoundError(f"Unknown case_id: {case_id}")
    d = to_day(as_of)
    spells = store.spells
    own = spells[(spells["case_id"] == case_id) & (spells["start"] <= d)]
    if own.empty:
        return None
    return own["unit"].iloc[-1]


def events_as_of(store, case_id, as_of):
    if not store.has_case(case_id):
        raise NotFoundError(f"Unknown case_id: {case_id}")
    frame = store.case_events(case_id)
    frame = frame[frame["day"] <= to_day(as_of)]
    return [
        ProceduralEvent(
            case_id=r.case_id,
            seq=int(r.seq),
            event_type=r.event_type,
            occurred_at=r.occurred_at.date(),
            actor_lawyer=_blank_to_none(r.actor_lawyer),
            from_unit=_blank_to_none(r.from_unit),
            to_unit=_blank_to_none(r.to_unit),
        )
        for r in frame.itertuples(index=False)
    ]


def assigned_lawyer(store, case_id, as_of):
    """Actor of the latest event on or before ``as_of``."""
    events = events_as_of(store, case_id, as_of)
    for ev in reversed(events):
        if ev.actor_lawyer:
            return ev.actor_lawyer
    return None


def finalization_labels(spells, as_of, horizon_days):
    """1 when the spell ends (closure or transfer out) within the horizon."""
    d = to_day(as_of)
    end = spells["end"]
    return (end.notna() & (end <= d + horizon_days)).astype("int64")


def truncate(store, as_of):
    """The store as it would have been extracted on ``as_of``."""
    d = to_day(as_of)
    cases = store.cases.loc[store.cases["opened_day"] <= d, CASE_COLUMNS].copy()
    events = store.events.loc[store.events["day"] <= d].copy()
    late = store.cases.loc[cases.index, "closed_day"] > d
    cases.loc[late, "closed_at"] = pd.NaT
    cases.loc[late, "closure_kind"] = None
    # lawyer_id is the assignment at extraction time
    last_actor = (
        events.dropna(subset=["actor_lawyer"]).groupby("case_id", sort=False)["actor_lawyer"].last()
    )
    cases["lawyer_id"] = cases["case_id"].map(last_actor).where(lambda s: s.notna(), None)
    return CaseStore(cases, events.loc[:, EVENT_COLUMNS], extraction_date=as_of)
