"""Synthetic case histories with a planted, tunable resolution signal.

The simulation runs in weekly steps. Each open case emits Poisson activity
events at a case-specific rate that decays with age. Every week a calibrated
number of closures, alternative-mechanism resolutions and unit transfers is
drawn without replacement from the open cases, with weights

    exp(activity_effect * log(1 + events in the last 13 weeks)
        + age_effect * age_in_years + crime_offset)

so the hazard of leaving the unit rises with recent activity while office-wide
monthly volumes match the configured rates. All draws come from one PCG64
stream seeded by ``SynthConfig.seed``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from triage import case_store
from triage.case_store import CASE_COLUMNS, EVENT_COLUMNS, UNITS, CaseStore, from_day, to_day
from triage.config import MONTH_DAYS, load_yaml, parse_date
from triage.errors import ConfigError
from triage.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_CRIME_MIX = {
    "ROBO_SIMPLE": 0.20,
    "ROBO_VEHICULO": 0.06,
    "ROBO_CASA_HABITACION": 0.07,
    "LESIONES": 0.10,
    "VIOLENCIA_FAMILIAR": 0.12,
    "DANO_PROPIEDAD": 0.08,
    "AMENAZAS": 0.07,
    "FRAUDE": 0.06,
    "ABUSO_DE_CONFIANZA": 0.04,
    "ALLANAMIENTO_MORADA": 0.03,
    "NARCOMENUDEO": 0.05,
    "HOMICIDIO": 0.02,
    "INJURIAS": 0.05,
    "ABUSO_SEXUAL_MENOR": 0.02,
    "RESPONSABILIDAD_PROFESIONAL": 0.03,
}

DEFAULT_CRIME_OFFSETS = {
    "VIOLENCIA_FAMILIAR": 0.3,
    "INJURIAS": 0.4,
    "AMENAZAS": 0.2,
    "HOMICIDIO": -0.6,
    "ABUSO_SEXUAL_MENOR": -0.6,
    "FRAUDE": -0.3,
}

DEFAULT_UNIT_MIX = {"MAT": 0.55, "UTMC": 0.12, "UIE": 0.10, "OEMASC": 0.05, "UID": 0.18}

# weekly activity events (structural events are emitted separately)
ACTIVITY_MIX = {
    "progress_update": 0.42,
    "suspect_update": 0.12,
    "party_update": 0.16,
    "search_warrant": 0.06,
    "judicialization": 0.04,
    "preventive_detention": 0.02,
    "judicial_authorization": 0.04,
    "arrest_warrant": 0.03,
    "conciliation_referral": 0.05,
    "vinculacion_a_proceso": 0.03,
    "alternative_mechanism": 0.03,
}

CLOSURE_KIND_MIX = {"administrative_closure": 0.7, "judicial_resolution": 0.2, "transfer_out": 0.1}

RECENT_WEEKS = 13


@dataclass
class SynthConfig:
    seed: int
    start: date
    end: date
    n_cases: Optional[int] = None
    monthly_arrivals: float = 1831.0
    monthly_closures: float = 746.0
    monthly_alternative: float = 217.0
    monthly_transfers: float = 120.0
    crime_mix: dict = field(default_factory=lambda: dict(DEFAULT_CRIME_MIX))
    crime_offsets: dict = field(default_factory=lambda: dict(DEFAULT_CRIME_OFFSETS))
    unit_mix: dict = field(default_factory=lambda: dict(DEFAULT_UNIT_MIX))
    activity_effect: float = 1.5
    age_effect: float = 0.0
    activity_decay_days: float = 365.0
    base_event_rate: float = 0.6
    arrest_rate: float = 0.15
    reassign_rate: float = 0.01
    lawyer_count: int = 60
    unit_count: int = 5
    municipality_count: int = 12

    def validate(self):
        if self.end <= self.start:
            raise ConfigError("date_span must be non-empty (end after start)")
        rates = {
            "monthly_arrivals": self.monthly_arrivals,
            "monthly_closures": self.monthly_closures,
            "monthly_alternative": self.monthly_alternative,
            "monthly_transfers": self.monthly_transfers,
            "activity_effect": self.activity_effect,
            "base_event_rate": self.base_event_rate,
            "arrest_rate": self.arrest_rate,
            "reassign_rate": self.reassign_rate,
        }
        for name, value in rates.items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.n_cases is not None and self.n_cases <= 0:
            raise ConfigError("n_cases must be positive when set")
        if self.n_cases is None and self.monthly_arrivals <= 0:
            raise ConfigError("monthly_arrivals must be positive when n_cases is unset")
        if not self.crime_mix or abs(sum(self.crime_mix.values()) - 1.0) > 1e-9:
            raise ConfigError("crime_mix must sum to 1 within 1e-9")
        if any(p < 0 for p in self.crime_mix.values()):
            raise ConfigError("crime_mix probabilities must be >= 0")
        if not 1 <= self.unit_count <= len(UNITS):
            raise ConfigError(f"unit_count must be between 1 and {len(UNITS)}")
        if self.lawyer_count < self.unit_count:
            raise ConfigError("lawyer_count must be at least unit_count")
        if self.activity_decay_days <= 0:
            raise ConfigError("activity_decay_days must be positive")
        unknown = set(self.unit_mix) - set(UNITS)
        if unknown:
            raise ConfigError(f"unit_mix names unknown units: {', '.join(sorted(unknown))}")
        return self

    @property
    def units(self):
        return UNITS[: self.unit_count]

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.pop("schema_version", None)
        span = data.pop("date_span", None)
        if span is not None:
            data["start"], data["end"] = span
        try:
            data["start"] = parse_date(data["start"], "start")
            data["end"] = parse_date(data["end"], "end")
        except KeyError as e:
            raise ConfigError(f"synth config: missing {e.args[0]}") from e
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"synth config: unknown fields {', '.join(sorted(unknown))}")
        return cls(**data).validate()

    @classmethod
    def from_yaml(cls, path):
        return cls.from_dict(load_yaml(path))

    def to_dict(self):
        d = asdict(self)
        d["start"] = self.start.isoformat()
        d["end"] = self.end.isoformat()
        return d


class _EventLog:
    """Columnar accumulator with per-case sequence numbers."""

    def __init__(self, n_cases):
        self.next_seq = np.zeros(n_cases, dtype=np.int64)
        self.chunks = []

    def add(self, case_idx, days, types, actors, from_units=None, to_units=None):
        case_idx = np.asarray(case_idx, dtype=np.int64)
        if case_idx.size == 0:
            return
        days = np.asarray(days, dtype=np.int64)
        order = np.lexsort((days, case_idx))
        case_idx, days = case_idx[order], days[order]
        types = np.asarray(types, dtype=object)[order]
        actors = np.asarray(actors, dtype=np.int64)[order]
        n = case_idx.size
        from_units = np.full(n, -1, dtype=np.int64) if from_units is None else np.asarray(from_units)[order]
        to_units = np.full(n, -1, dtype=np.int64) if to_units is None else np.asarray(to_units)[order]
        # rank of each event within its case inside this batch
        starts = np.r_[0, np.flatnonzero(case_idx[1:] != case_idx[:-1]) + 1]
        run_start = np.repeat(starts, np.diff(np.r_[starts, n]))
        seq = self.next_seq[case_idx] + (np.arange(n) - run_start)
        np.add.at(self.next_seq, case_idx, 1)
        self.chunks.append((case_idx, seq, days, types, actors, from_units, to_units))

    def frame(self, case_ids, lawyer_ids, units):
        cols = list(zip(*self.chunks)) if self.chunks else [[np.array([], dtype=np.int64)]] * 7
        case_idx, seq, days, types, actors, from_u, to_u = (np.concatenate(c) for c in cols)
        unit_arr = np.array(list(units) + [None], dtype=object)
        return pd.DataFrame(
            {
                "case_id": np.asarray(case_ids, dtype=object)[case_idx],
                "seq": seq,
                "event_type": types,
                "occurred_at": pd.to_datetime([from_day(d) for d in days]) if len(days) else pd.to_datetime([]),
                "actor_lawyer": np.asarray(lawyer_ids, dtype=object)[actors],
                "from_unit": unit_arr[from_u],
                "to_unit": unit_arr[to_u],
            },
            columns=EVENT_COLUMNS,
        )


def _arrival_days(config, rng, start_day, end_day):
    span = end_day - start_day
    blocks = [(s, min(s + MONTH_DAYS, end_day)) for s in range(start_day, end_day, MONTH_DAYS)]
    lengths = np.array([b - a for a, b in blocks], dtype=np.float64)
    if config.n_cases is not None:
        counts = rng.multinomial(config.n_cases, lengths / lengths.sum())
    else:
        counts = rng.poisson(config.monthly_arrivals * lengths / MONTH_DAYS)
    days = []
    for (a, b), c in zip(blocks, counts):
        per_day = rng.multinomial(int(c), np.full(b - a, 1.0 / (b - a)))
        days.append(np.repeat(np.arange(a, b), per_day))
    days = np.concatenate(days) if days else np.array([], dtype=np.int64)
    logger.debug("Placed %d arrivals over %d days", days.size, span)
    return days.astype(np.int64)


def _normalized(mix, keys):
    p = np.array([mix.get(k, 0.0) for k in keys], dtype=np.float64)
    if p.sum() <= 0:
        p = np.ones(len(keys))
    return p / p.sum()


def simulate(config):
    """Run the weekly simulation and return an in-memory ``CaseStore``."""
    config.validate()
    rng = make_rng(config.seed)
    start_day, end_day = to_day(config.start), to_day(config.end)
    n_months = (end_day - start_day) / MONTH_DAYS

    opened = _arrival_days(config, rng, start_day, end_day + 1)
    n = opened.size
    scale = 1.0
    if config.n_cases is not None and config.monthly_arrivals > 0:
        scale = config.n_cases / (config.monthly_arrivals * n_months)

    units = config.units
    categories = sorted(config.crime_mix)
    municipalities = [f"MUN{i:02d}" for i in range(1, config.municipality_count + 1)]
    lawyer_ids = [f"L{i:03d}" for i in range(1, config.lawyer_count + 1)]
    lawyer_unit = np.arange(config.lawyer_count) % len(units)
    unit_lawyers = [np.flatnonzero(lawyer_unit == u) for u in range(len(units))]

    category = rng.choice(len(categories), size=n, p=_normalized(config.crime_mix, categories))
    muni_weights = 1.0 / np.arange(1, len(municipalities) + 1)
    municipality = rng.choice(len(municipalities), size=n, p=muni_weights / muni_weights.sum())
    intake_unit = rng.choice(len(units), size=n, p=_normalized(config.unit_mix, units))
    arrested = rng.random(n) < config.arrest_rate
    activity = rng.gamma(2.0, config.base_event_rate / 2.0, size=n) * np.where(arrested, 1.5, 1.0)
    crime_delay = np.minimum(rng.geometric(0.2, size=n) - 1, 365)
    lawyer = np.array([rng.choice(unit_lawyers[u]) for u in intake_unit], dtype=np.int64)
    offsets = np.array([config.crime_offsets.get(c, 0.0) for c in categories])[category]

    cur_unit = intake_unit.copy()
    closed_day = np.full(n, -1, dtype=np.int64)
    closure_kind = np.full(n, None, dtype=object)
    last_event_day = opened.copy()
    recent = np.zeros((n, RECENT_WEEKS), dtype=np.int32)

    log = _EventLog(n)
    log.add(np.arange(n), opened, np.full(n, "initialized", dtype=object), lawyer)

    activity_types = list(ACTIVITY_MIX)
    activity_p = _normalized(ACTIVITY_MIX, activity_types)
    kind_names = list(CLOSURE_KIND_MIX)
    kind_p = _normalized(CLOSURE_KIND_MIX, kind_names)
    weekly = 7.0 / MONTH_DAYS * scale

    for week, d0 in enumerate(range(start_day, end_day + 1, 7)):
        d1 = min(d0 + 6, end_day)
        col = week % RECENT_WEEKS
        recent[:, col] = 0
        is_open = (opened <= d1) & (closed_day < 0)
        open_idx = np.flatnonzero(is_open)
        if open_idx.size == 0:
            continue
        low = np.maximum(opened[open_idx], d0)

        # activity events
        age = (d0 - opened[open_idx]).clip(min=0)
        rate = activity[open_idx] * np.exp(-age / config.activity_decay_days)
        counts = rng.poisson(rate)
        ev_case = np.repeat(open_idx, counts)
        if ev_case.size:
            ev_day = rng.integers(np.repeat(low, counts), d1 + 1)
            ev_type = np.array(activity_types, dtype=object)[rng.choice(len(activity_types), size=ev_case.size, p=activity_p)]
            log.add(ev_case, ev_day, ev_type, lawyer[ev_case])
            np.maximum.at(last_event_day, ev_case, ev_day)
            recent[:, col] += np.bincount(ev_case, minlength=n).astype(np.int32)

        # lawyer reassignment inside the unit
        moves = open_idx[rng.random(open_idx.size) < config.reassign_rate]
        if moves.size:
            new_lawyer = np.array([rng.choice(unit_lawyers[cur_unit[i]]) for i in moves], dtype=np.int64)
            mv_day = np.maximum(rng.integers(np.maximum(opened[moves], d0), d1 + 1), last_event_day[moves])
            lawyer[moves] = new_lawyer
            log.add(moves, mv_day, np.full(moves.size, "progress_update", dtype=object), new_lawyer)
            last_event_day[moves] = mv_day
            recent[:, col] += np.bincount(moves, minlength=n).astype(np.int32)

        # exits, weighted by recent activity
        weight = np.exp(
            config.activity_effect * np.log1p(recent[open_idx].sum(axis=1))
            + config.age_effect * age / 365.0
            + offsets[open_idx]
        )
        n_close = int(rng.poisson(config.monthly_closures * weekly))
        n_alt = int(rng.poisson(config.monthly_alternative * weekly))
        n_exit = min(n_close + n_alt, open_idx.size)
        if n_exit:
            chosen = rng.choice(open_idx.size, size=n_exit, replace=False, p=weight / weight.sum())
            exiting = open_idx[chosen]
            ex_day = np.maximum(rng.integers(low[chosen], d1 + 1), last_event_day[exiting])
            kinds = np.array(kind_names, dtype=object)[rng.choice(len(kind_names), size=n_exit, p=kind_p)]
            kinds[min(n_close, n_exit):] = "alternative_mechanism"
            alt = kinds == "alternative_mechanism"
            log.add(exiting[alt], ex_day[alt], np.full(int(alt.sum()), "alternative_mechanism", dtype=object), lawyer[exiting[alt]])
            log.add(exiting, ex_day, np.full(n_exit, "closure", dtype=object), lawyer[exiting])
            closed_day[exiting] = ex_day
            closure_kind[exiting] = kinds
            last_event_day[exiting] = ex_day

        if len(units) > 1:
            still = open_idx[closed_day[open_idx] < 0]
            n_tr = min(int(rng.poisson(config.monthly_transfers * weekly)), still.size)
            if n_tr:
                w = weight[closed_day[open_idx] < 0]
                picked = still[rng.choice(still.size, size=n_tr, replace=False, p=w / w.sum())]
                tr_day = np.maximum(rng.integers(np.maximum(opened[picked], d0), d1 + 1), last_event_day[picked])
                shift = rng.integers(1, len(units), size=n_tr)
                new_unit = (cur_unit[picked] + shift) % len(units)
                new_lawyer = np.array([rng.choice(unit_lawyers[u]) for u in new_unit], dtype=np.int64)
                log.add(
                    picked,
                    tr_day,
                    np.full(n_tr, "unit_transfer", dtype=object),
                    lawyer[picked],
                    from_units=cur_unit[picked],
                    to_units=new_unit,
                )
                log.add(picked, tr_day, np.full(n_tr, "initialized", dtype=object), new_lawyer)
                cur_unit[picked] = new_unit
                lawyer[picked] = new_lawyer
                last_event_day[picked] = tr_day

    case_ids = [f"C{i:07d}" for i in range(1, n + 1)]
    cases = pd.DataFrame(
        {
            "case_id": case_ids,
            "opened_at": pd.to_datetime([from_day(d) for d in opened]),
            "crime_date": pd.to_datetime([from_day(d - k) for d, k in zip(opened, crime_delay)]),
            "crime_category": np.array(categories, dtype=object)[category],
            "municipality": np.array(municipalities, dtype=object)[municipality],
            "unit": np.array(units, dtype=object)[intake_unit],
            "lawyer_id": np.array(lawyer_ids, dtype=object)[lawyer],
            "arrested_at_intake": arrested,
            "closed_at": pd.to_datetime([from_day(d) if d >= 0 else None for d in closed_day]),
            "closure_kind": closure_kind,
        },
        columns=CASE_COLUMNS,
    )
    events = log.frame(case_ids, lawyer_ids, units)
    store = CaseStore(cases, events, extraction_date=config.end)
    logger.info(
        "Simulated %d cases, %d events, %d still open at %s",
        n,
        len(events),
        int((closed_day < 0).sum()),
        config.end,
    )
    return store


def generate(config, out_dir):
    """Simulate and write ``cases.csv`` / ``events.csv``; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = simulate(config)
    cases_path, events_path = out_dir / "cases.csv", out_dir / "events.csv"
    case_store.export(store, cases_path, events_path, fmt="csv")
    return cases_path, events_path


def select_tail(store, fraction, as_of=None, seed=0):
    """Deterministic choice of open cases for ``plant_prescription_tail``."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    as_of = as_of or store.extraction_date
    pool = np.array(sorted(set(case_store.open_spells(store, as_of)["case_id"])), dtype=object)
    n = int(math.floor(fraction * pool.size + 0.5))
    order = make_rng(seed).permutation(pool.size)
    return sorted(pool[order[:n]].tolist())


def plant_prescription_tail(store, fraction, min_age_days, as_of=None, quiet_days=365, seed=0):
    """Age a fraction of the open cases into a dormant, long-running tail.

    Selected cases lose any history after ``as_of`` and have their whole
    timeline shifted back so they are older than ``min_age_days`` with no
    event in the trailing ``quiet_days``.
    """
    if len(store) == 0:
        raise ConfigError("plant_prescription_tail needs a non-empty store")
    as_of = as_of or store.extraction_date
    chosen = select_tail(store, fraction, as_of, seed)
    if not chosen:
        return store
    d = to_day(as_of)
    chosen_set = set(chosen)

    cases = store.cases.copy()
    events = store.events.copy()
    in_cases = cases["case_id"].isin(chosen_set)
    in_events = events["case_id"].isin(chosen_set)
    events = events[~(in_events & (events["day"] > d))]
    in_events = events["case_id"].isin(chosen_set)
    reopened = in_cases & (cases["closed_day"] > d)
    cases.loc[reopened, "closed_at"] = pd.NaT
    cases.loc[reopened, "closure_kind"] = None

    last_event = events[in_events].groupby("case_id")["day"].max()
    opened = cases.loc[in_cases].set_index("case_id")["opened_day"]
    shift = np.maximum(
        0,
        np.maximum(opened - (d - min_age_days - 1), last_event.reindex(opened.index) - (d - quiet_days)),
    ).astype(np.int64)

    case_shift = pd.to_timedelta(cases["case_id"].map(shift).fillna(0).astype(np.int64), unit="D")
    cases["opened_at"] = cases["opened_at"] - case_shift
    cases["crime_date"] = cases["crime_date"] - case_shift
    event_shift = pd.to_timedelta(events["case_id"].map(shift).fillna(0).astype(np.int64), unit="D")
    events["occurred_at"] = events["occurred_at"] - event_shift

    logger.info("Planted %d dormant cases (fraction %.3f, min age %d days)", len(chosen), fraction, min_age_days)
    return CaseStore(cases, events, extraction_date=store.extraction_date)


def labeled_snapshot(store, as_of, horizon_days, unit=None, window_days=90):
    """Open cases on ``as_of`` with their recent event count and outcome."""
    spells = case_store.open_spells(store, as_of, unit)
    d = to_day(as_of)
    ev = store.events
    recent = ev[(ev["day"] <= d) & (ev["day"] > d - window_days)].groupby("case_id").size()
    out = pd.DataFrame({"case_id": spells["case_id"].values, "unit": spells["unit"].values})
    out["events_recent"] = out["case_id"].map(recent).fillna(0).astype(np.int64).values
    out["label"] = case_store.finalization_labels(spells, as_of, horizon_days).values
    return out


def backlog(store, as_of):
    """Office-wide open caseload on a date."""
    return int(case_store.open_spells(store, as_of)["case_id"].nunique())
