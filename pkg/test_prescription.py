import logging

import numpy as np
import pandas as pd
import pytest

from conftest import build_store, day
from triage import case_store, prescription
from triage.errors import ConfigError, DataError
from triage.harness import RankedList
from triage.prescription import IMPRESCRIPTIBLE, CrimeSubtype


def prison(lo, hi, category="X", imprescriptible=False):
    return CrimeSubtype(category, f"{lo}-{hi}", "prison", lo, hi, imprescriptible)


def table_frame(rows):
    return pd.DataFrame(
        [dict(zip(prescription.PENALTY_COLUMNS, r)) for r in rows],
        columns=prescription.PENALTY_COLUMNS,
    ).astype(str)


def test_subtype_periods():
    assert prescription.subtype_period(CrimeSubtype("X", "1", "fine_only")) == 1.0
    assert prescription.subtype_period(CrimeSubtype("X", "2", "rights_only")) == 2.0
    assert prescription.subtype_period(prison(1, 3)) == 3.0
    assert prescription.subtype_period(prison(2, 10)) == 6.0
    assert prescription.subtype_period(prison(1, 2, imprescriptible=True)) is IMPRESCRIPTIBLE


def test_bad_prison_bounds():
    with pytest.raises(DataError):
        prescription.subtype_period(prison(5, 2))
    with pytest.raises(DataError):
        prescription.subtype_period(CrimeSubtype("X", "1", "prison", 2.0, None))


def test_category_thresholds():
    t = prescription.category_thresholds([prison(1, 3), prison(4, 6), prison(8, 12)])
    assert (t.t_min_years, t.t_mean_years, t.t_max_years) == (3.0, 6.0, 10.0)
    t = prescription.category_thresholds([prison(2, 6)])
    assert (t.t_min_years, t.t_mean_years, t.t_max_years) == (4.0, 4.0, 4.0)
    t = prescription.category_thresholds([prison(1, 3), prison(30, 60, imprescriptible=True), prison(8, 10)])
    assert (t.t_min_years, t.t_mean_years, t.t_max_years) == (3.0, 6.0, 9.0)
    assert t.subtype_count == 3
    t = prescription.category_thresholds([prison(30, 60, imprescriptible=True)])
    assert t.all_imprescriptible
    assert t.days("mean") is None
    with pytest.raises(ConfigError):
        t.years("median")


def test_table_from_frame():
    table = prescription.penalty_table_from_frame(
        table_frame(
            [
                ("A", "A1", "prison", "2", "6", "false"),
                ("IMP", "I1", "prison", "30", "60", "true"),
                ("UNL", "U1", "unlegislated", "", "", "false"),
            ]
        )
    )
    assert table.thresholds["A"].days("mean") == 4 * 365
    assert table.unlegislated == {"UNL"}
    assert table.categories() == {"A", "IMP", "UNL"}


@pytest.mark.parametrize(
    "row",
    [
        ("A", "A1", "life", "", "", "false"),
        ("A", "A1", "prison", "x", "6", "false"),
        ("A", "A1", "prison", "2", "6", "maybe"),
        ("", "A1", "fine_only", "", "", "false"),
    ],
)
def test_table_rejects_bad_rows(row):
    with pytest.raises(DataError):
        prescription.penalty_table_from_frame(table_frame([row]))


def test_category_cannot_be_both():
    rows = [("A", "A1", "fine_only", "", "", "false"), ("A", "A2", "unlegislated", "", "", "false")]
    with pytest.raises(DataError):
        prescription.penalty_table_from_frame(table_frame(rows))


def test_missing_table_names_path(tmp_path):
    path = tmp_path / "nope.csv"
    with pytest.raises(ConfigError, match="nope.csv"):
        prescription.load_penalty_table(path)


def test_packaged_table_loads(synth_store):
    table = prescription.load_penalty_table()
    assert "HOMICIDIO" in table.thresholds
    assert prescription.check_table_completeness(synth_store, table) == []
    for t in table.thresholds.values():
        if not t.all_imprescriptible:
            assert t.t_min_years <= t.t_mean_years <= t.t_max_years


@pytest.fixture
def flag_setup():
    table = prescription.penalty_table_from_frame(
        table_frame(
            [
                ("A", "A1", "prison", "2", "6", "false"),
                ("IMP", "I1", "prison", "30", "60", "true"),
                ("UNL", "U1", "unlegislated", "", "", "false"),
            ]
        )
    )
    store = build_store(
        [
            {"case_id": "OLD", "opened": 0, "category": "A"},
            {"case_id": "YOUNG", "opened": 1, "category": "A"},
            {"case_id": "IMP", "opened": 0, "category": "IMP"},
            {"case_id": "UNL", "opened": 0, "category": "UNL"},
            {"case_id": "ODD", "opened": 0, "category": "ZZZ"},
        ]
    )
    as_of = day(4 * 365)
    ids = ["OLD", "YOUNG", "IMP", "UNL", "ODD"]
    ranked = RankedList.build(as_of, "m", ids, [0.1, 0.2, 0.3, 0.4, 0.5], store.cases)
    return store, ranked, table


def test_threshold_is_inclusive(flag_setup, caplog):
    store, ranked, table = flag_setup
    with caplog.at_level(logging.WARNING, logger="triage.prescription"):
        flags = prescription.flag_prescribed(store, ranked, table, "mean", k_bottom=10)
    assert list(flags["case_id"]) == ["OLD"]
    assert flags.iloc[0]["age_days"] == 1460
    assert flags.iloc[0]["status"] == "potentially prescribed"
    assert "ZZZ" in caplog.text


def test_only_bottom_k_is_screened(flag_setup):
    store, ranked, table = flag_setup
    bottom = prescription.flag_prescribed(store, ranked, table, "mean", k_bottom=1)
    assert list(bottom["case_id"]) == ["OLD"]
    # reverse the scores so OLD sits at the top
    flipped = RankedList.build(ranked.as_of, "m", ["OLD", "YOUNG"], [0.9, 0.1], store.cases)
    assert prescription.flag_prescribed(store, flipped, table, "mean", k_bottom=1).empty


def test_rules_nest(synth_store):
    table = prescription.load_penalty_table()
    as_of = synth_store.extraction_date
    ids = sorted(case_store.open_cases(synth_store, "MAT", as_of))
    scores = np.random.default_rng(0).random(len(ids))
    ranked = RankedList.build(as_of, "m", ids, scores, synth_store.cases)
    flags, bottom_n = prescription.flag_all_rules(synth_store, ranked, table, k_bottom=500)
    assert bottom_n == min(500, len(ids))
    sets = {rule: set(f["case_id"]) for rule, f in flags.items()}
    assert sets["max"] <= sets["mean"] <= sets["min"]
    assert set(prescription.flag_prescribed(synth_store, ranked, table, "mean", 500)["case_id"]) == sets["mean"]
    summary = prescription.prescription_summary([(as_of, "m", flags, bottom_n)])
    assert list(summary["rule"]) == ["min", "mean", "max"]
    assert (summary["share"] <= 1).all()
