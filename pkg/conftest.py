"""Shared fixtures: hand-built stores and small synthetic offices."""

from datetime import date, timedelta

import pandas as pd
import pytest

from triage import synth
from triage.case_store import CASE_COLUMNS, EVENT_COLUMNS, CaseStore

D0 = date(2020, 1, 1)


def day(offset):
    return D0 + timedelta(days=offset)


def build_store(cases, extraction_date=None):
    """Store from compact case specs.

    Each spec is a dict with ``case_id`` and ``opened`` (day offset from D0)
    plus optional case fields. ``events`` lists ``(offset, type)`` or
    ``(offset, type, lawyer)`` or ``(offset, "unit_transfer", lawyer, from, to)``;
    when omitted the case gets one initialized event on its opening day. A
    ``closed`` offset adds the closure event automatically.
    """
    case_rows, event_rows = [], []
    for spec in cases:
        cid = spec["case_id"]
        lawyer = spec.get("lawyer", "L001")
        closed = spec.get("closed")
        case_rows.append(
            {
                "case_id": cid,
                "opened_at": pd.Timestamp(day(spec["opened"])),
                "crime_date": pd.Timestamp(day(spec["crime"])) if spec.get("crime") is not None else pd.NaT,
                "crime_category": spec.get("category", "ROBO_SIMPLE"),
                "municipality": spec.get("municipality", "MUN01"),
                "unit": spec.get("unit", "MAT"),
                "lawyer_id": lawyer,
                "arrested_at_intake": spec.get("arrested", False),
                "closed_at": pd.Timestamp(day(closed)) if closed is not None else pd.NaT,
                "closure_kind": spec.get("closure_kind", "administrative_closure") if closed is not None else None,
            }
        )
        events = list(spec.get("events", [(spec["opened"], "initialized")]))
        if closed is not None and not any(e[1] == "closure" for e in events):
            events.append((closed, "closure"))
        for seq, ev in enumerate(events):
            offset, etype = ev[0], ev[1]
            actor = ev[2] if len(ev) > 2 else lawyer
            from_unit = ev[3] if len(ev) > 3 else None
            to_unit = ev[4] if len(ev) > 4 else None
            event_rows.append(
                {
                    "case_id": cid,
                    "seq": seq,
                    "event_type": etype,
                    "occurred_at": pd.Timestamp(day(offset)),
                    "actor_lawyer": actor,
                    "from_unit": from_unit,
                    "to_unit": to_unit,
                }
            )
    return CaseStore(
        pd.DataFrame(case_rows, columns=CASE_COLUMNS),
        pd.DataFrame(event_rows, columns=EVENT_COLUMNS),
        extraction_date=extraction_date,
    )


@pytest.fixture
def make_store():
    return build_store


@pytest.fixture
def tiny_store():
    """Three MAT cases: one open, one closed, one transferred to UTMC."""
    return build_store(
        [
            {"case_id": "A", "opened": 0, "events": [(0, "initialized"), (5, "progress_update")]},
            {"case_id": "B", "opened": 2, "closed": 30, "category": "LESIONES", "lawyer": "L002"},
            {
                "case_id": "C",
                "opened": 3,
                "category": "FRAUDE",
                "events": [
                    (3, "initialized"),
                    (10, "unit_transfer", "L001", "MAT", "UTMC"),
                    (10, "initialized", "L003"),
                ],
            },
        ],
        extraction_date=day(400),
    )


SMALL_SYNTH = dict(
    seed=5,
    start=date(2019, 1, 1),
    end=date(2021, 6, 30),
    n_cases=1500,
    lawyer_count=15,
)


@pytest.fixture(scope="session")
def synth_config():
    return synth.SynthConfig(**SMALL_SYNTH)


@pytest.fixture(scope="session")
def synth_store(synth_config):
    return synth.simulate(synth_config)
