from datetime import date

import pytest

from conftest import build_store
from triage import baseline
from triage.baseline import BaseRateTable, shrink
from triage.errors import ConfigError, DataError


def test_shrinkage_examples():
    assert shrink(10, 0.8, 0.2, 10) == pytest.approx(0.5)
    assert shrink(0, 0.0, 0.2, 10) == pytest.approx(0.2)
    assert abs(shrink(10000, 0.8, 0.2, 10) - 0.8) < 0.001
    # no prior, no data
    assert shrink(0, 0.0, 0.3, 0) == 0.3


def test_table_from_counts():
    table = BaseRateTable.from_counts(date(2020, 1, 1), {"ROBO": (10, 8), "FRAUDE": (30, 0)}, prior_strength=10)
    assert table.global_rate == pytest.approx(0.2)
    assert table.rate("ROBO") == pytest.approx(0.5)
    assert table.rate("FRAUDE") == pytest.approx((0 + 10 * 0.2) / 40)
    assert table.rate("HOMICIDIO") == pytest.approx(0.2)
    frame = table.to_frame()
    assert list(frame["crime_category"]) == ["FRAUDE", "ROBO", baseline.GLOBAL_ROW]
    assert frame.iloc[-1]["n"] == 40


def test_empty_counts_is_data_error():
    with pytest.raises(DataError):
        BaseRateTable.from_counts(date(2020, 1, 1), {})
    with pytest.raises(ConfigError):
        BaseRateTable.from_counts(date(2020, 1, 1), {"A": (1, 1)}, prior_strength=-1)


def test_same_category_same_score():
    store = build_store(
        [
            {"case_id": "A", "opened": 0, "category": "FRAUDE"},
            {"case_id": "B", "opened": 5, "category": "FRAUDE"},
            {"case_id": "C", "opened": 5, "category": "ROBO_SIMPLE"},
        ]
    )
    table = BaseRateTable.from_counts(date(2021, 1, 1), {"FRAUDE": (20, 5), "ROBO_SIMPLE": (20, 15)})
    scores = baseline.score_baseline(table, [store.case(c) for c in "ABC"])
    assert scores[0] == scores[1]
    assert scores[2] > scores[0]


def test_snapshot_dates_respect_horizon(synth_store):
    as_of = date(2021, 1, 1)
    dates = baseline.snapshot_dates(synth_store, as_of, horizon_days=183, stride_days=28)
    assert dates == sorted(dates)
    assert all((as_of - s).days > 183 for s in dates)
    assert dates[-1] == date(2020, 7, 1)
    assert dates[0] >= synth_store.start_date


def test_nothing_before_start_is_data_error(synth_store):
    with pytest.raises(DataError):
        baseline.build_table(synth_store, synth_store.start_date)


def test_build_table_on_synthetic_office(synth_store):
    cache = {}
    table = baseline.build_table(synth_store, date(2021, 1, 1), max_snapshots=6, cache=cache)
    assert 0.0 < table.global_rate < 1.0
    assert len(cache) == 6
    for rate in table.per_crime.values():
        assert 0.0 <= rate.p_smoothed <= 1.0
        lo, hi = sorted((rate.p_raw, table.global_rate))
        assert lo - 1e-12 <= rate.p_smoothed <= hi + 1e-12
    again = baseline.build_table(synth_store, date(2021, 1, 1), max_snapshots=6, cache=cache)
    assert again.per_crime == table.per_crime
