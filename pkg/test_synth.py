from datetime import date

import numpy as np
import pytest

from triage import case_store, synth
from triage.errors import ConfigError


def test_same_seed_same_bytes(tmp_path, synth_config):
    a = synth.generate(synth_config, tmp_path / "a")
    b = synth.generate(synth_config, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_different_seed_differs(tmp_path, synth_config):
    other = synth.SynthConfig(**{**synth_config.to_dict(), "seed": 6, "start": synth_config.start, "end": synth_config.end})
    a = synth.generate(synth_config, tmp_path / "a")
    b = synth.generate(other, tmp_path / "b")
    assert a[1].read_bytes() != b[1].read_bytes()


def test_n_cases_is_exact(synth_store):
    assert len(synth_store) == 1500
    assert synth_store.extraction_date == date(2021, 6, 30)


def test_generated_files_pass_ingestion(tmp_path, synth_config):
    cases_path, events_path = synth.generate(synth_config, tmp_path)
    store = case_store.ingest(cases_path, events_path)
    assert store.rejects == []
    assert len(store) == 1500


def test_histories_are_consistent(synth_store):
    cases = synth_store.cases.set_index("case_id")
    events = synth_store.events
    first = events.groupby("case_id")["day"].min()
    last = events.groupby("case_id")["day"].max()
    assert (first >= cases.loc[first.index, "opened_day"]).all()
    closed = cases.loc[last.index, "closed_day"]
    assert ((last <= closed) | closed.isna()).all()
    assert set(synth_store.cases["unit"]) <= set(case_store.UNITS)


def test_backlog_growth_matches_rates():
    config = synth.SynthConfig(seed=3, start=date(2020, 1, 1), end=date(2020, 12, 31))
    store = synth.simulate(config)
    growth = synth.backlog(store, config.end)
    expected = (1831 - 746 - 217) * 12
    assert abs(growth - expected) <= 0.1 * expected


def test_select_tail_count_is_exact(synth_store):
    pool = case_store.open_spells(synth_store, synth_store.extraction_date)["case_id"].nunique()
    chosen = synth.select_tail(synth_store, 0.3, seed=1)
    assert len(chosen) == int(np.floor(0.3 * pool + 0.5))
    assert chosen == synth.select_tail(synth_store, 0.3, seed=1)


def test_plant_fraction_zero_is_identity(synth_store):
    assert synth.plant_prescription_tail(synth_store, 0.0, 4000) is synth_store


def test_plant_full_saturation(synth_store):
    as_of = synth_store.extraction_date
    planted = synth.plant_prescription_tail(synth_store, 1.0, 4000, seed=2)
    open_now = case_store.open_spells(planted, as_of)["case_id"].unique()
    opened = planted.cases.set_index("case_id").loc[open_now, "opened_day"]
    assert (case_store.to_day(as_of) - opened >= 4000).all()
    # planted cases are dormant for the trailing year
    recent = planted.events[planted.events["case_id"].isin(open_now)]
    assert (recent["day"] <= case_store.to_day(as_of) - 365).all()


def test_plant_keeps_store_valid(tmp_path, synth_store):
    planted = synth.plant_prescription_tail(synth_store, 0.3, 1500, seed=4)
    cases_path, events_path = tmp_path / "cases.csv", tmp_path / "events.csv"
    case_store.export(planted, cases_path, events_path)
    assert case_store.ingest(cases_path, events_path).rejects == []


def test_labeled_snapshot_columns(synth_store):
    snap = synth.labeled_snapshot(synth_store, date(2020, 6, 1), 183, unit="MAT")
    assert list(snap.columns) == ["case_id", "unit", "events_recent", "label"]
    assert set(snap["unit"]) == {"MAT"}
    assert set(snap["label"]) <= {0, 1}


@pytest.mark.parametrize(
    "field,value",
    [("monthly_closures", -1.0), ("unit_count", 9), ("crime_mix", {"A": 0.5, "B": 0.4})],
)
def test_invalid_config(field, value):
    with pytest.raises(ConfigError):
        synth.SynthConfig(seed=1, start=date(2020, 1, 1), end=date(2021, 1, 1), **{field: value}).validate()


def test_empty_span_rejected():
    with pytest.raises(ConfigError):
        synth.SynthConfig(seed=1, start=date(2020, 1, 1), end=date(2020, 1, 1)).validate()


def test_from_dict_accepts_date_span():
    config = synth.SynthConfig.from_dict({"seed": 9, "date_span": ["2020-01-01", "2020-06-30"], "n_cases": 50})
    assert config.start == date(2020, 1, 1)
    assert config.n_cases == 50
    with pytest.raises(ConfigError):
        synth.SynthConfig.from_dict({"seed": 9, "date_span": ["2020-01-01", "2020-06-30"], "bogus": 1})
