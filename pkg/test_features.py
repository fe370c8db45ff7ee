from datetime import date

import pandas as pd
import pytest

from conftest import build_store, day
from triage import case_store, features
from triage.errors import NotFoundError
from triage.features import FeatureExtractor, dense_rank, family_of, group_of


def row(store, case_id, as_of):
    return FeatureExtractor().frame(store, [case_id], as_of).loc[case_id]


def test_new_case_counts():
    store = build_store([{"case_id": "A", "opened": 100}])
    r = row(store, "A", day(100))
    assert r["days_since_open"] == 0
    assert r["ev_all_total"] == 1
    for w in (90, 183, 365, 730):
        assert r[f"ev_all_{w}d"] == 1
        assert r[f"ev_initialized_{w}d"] == 1


def test_window_counts():
    store = build_store(
        [
            {
                "case_id": "A",
                "opened": 100,
                "events": [(100, "initialized"), (400, "progress_update"), (490, "progress_update")],
            }
        ]
    )
    r = row(store, "A", day(500))
    assert r["ev_all_365d"] == 2
    assert r["ev_all_90d"] == 1
    assert r["ev_all_730d"] == 3
    assert r["ev_progress_update_rate_90d"] == pytest.approx(1 / 90 * 30)


def test_days_since_last_event():
    store = build_store([{"case_id": "A", "opened": 0}])
    assert row(store, "A", day(200))["days_since_last_event"] == 200


def test_later_events_are_invisible():
    store = build_store(
        [{"case_id": "A", "opened": 0, "events": [(0, "initialized"), (50, "search_warrant"), (300, "search_warrant")]}]
    )
    r = row(store, "A", day(100))
    assert r["ev_search_warrant_total"] == 1
    assert r["days_since_last_event"] == 50


def test_missing_values_are_encoded():
    store = build_store([{"case_id": "A", "opened": 10, "crime": 4}, {"case_id": "B", "opened": 10}])
    frame = FeatureExtractor().frame(store, ["A", "B"], day(20))
    assert frame.loc["A", "crime_to_report_days"] == 6
    assert frame.loc["A", "crime_to_report_days__missing"] == 0
    assert frame.loc["B", "crime_to_report_days"] == 0
    assert frame.loc["B", "crime_to_report_days__missing"] == 1


def test_no_milestones():
    store = build_store([{"case_id": "A", "opened": 0}])
    r = row(store, "A", day(50))
    assert all(r[f"ms_{m}_ever"] == 0 for m in case_store.MILESTONE_TYPES)


def test_recent_milestone():
    store = build_store([{"case_id": "A", "opened": 0, "events": [(0, "initialized"), (450, "vinculacion_a_proceso")]}])
    r = row(store, "A", day(500))
    assert r["ms_vinculacion_a_proceso_ever"] == 1
    assert r["ms_vinculacion_a_proceso_total"] == 1
    for w in (90, 183, 365, 730):
        assert r[f"ms_vinculacion_a_proceso_{w}d"] == 1


def test_milestone_window_and_total():
    store = build_store(
        [{"case_id": "A", "opened": 0, "events": [(0, "initialized"), (100, "arrest_warrant"), (500, "arrest_warrant")]}]
    )
    r = row(store, "A", day(600))
    assert r["ms_arrest_warrant_365d"] == 1
    assert r["ms_arrest_warrant_total"] == 2


def test_dense_rank():
    assert list(dense_rank([0.5, 0.5, 0.2])) == [1, 1, 2]


def test_lawyer_degenerate_ratio():
    store = build_store([{"case_id": "A", "opened": 0, "closed": 10, "lawyer": "L002"}])
    v = features.lawyer_activity(store, "L002", day(200))
    assert v.values["lawyer_closure_ratio_30d"] == 0.0
    assert v.values["lawyer_caseload__missing"] == 0.0


def test_single_lawyer_ranks_first():
    store = build_store(
        [
            {"case_id": "A", "opened": 90, "events": [(90, "initialized"), (95, "progress_update")]},
            {"case_id": "B", "opened": 91},
        ]
    )
    v = features.lawyer_activity(store, "L001", day(100))
    assert v.values["lawyer_rank_30d"] == 1
    assert v.values["lawyer_opened_30d"] == 2


def test_unknown_lawyer_uses_missing_flags():
    store = build_store([{"case_id": "A", "opened": 0}])
    v = features.lawyer_activity(store, "NOBODY", day(10))
    assert v.values["lawyer_caseload__missing"] == 1.0
    assert v.values["lawyer_closed_30d"] == 0.0


def test_lawyer_activity_counts_case_lawyers():
    store = build_store(
        [
            {
                "case_id": "A",
                "opened": 0,
                "events": [(0, "initialized", "L001"), (10, "progress_update", "L002"), (20, "progress_update", "L001")],
            }
        ]
    )
    v = features.lawyer_activity(store, "L001", day(30), case_id="A")
    assert v.values["case_distinct_lawyers"] == 2
    assert v.values["case_distinct_lawyers"] == row(store, "A", day(30))["case_distinct_lawyers"]
    assert features.lawyer_activity(store, "L001", day(30)).values["case_distinct_lawyers"] == 0


def test_blank_actor_is_not_a_lawyer():
    store = build_store(
        [{"case_id": "A", "opened": 0, "events": [(0, "initialized", "L001"), (5, "progress_update", "")]}]
    )
    table = features.lawyer_table(store, day(10))
    assert list(table.index) == ["L001"]
    assert row(store, "A", day(10))["case_distinct_lawyers"] == 1


def _unit_fixture():
    specs = [{"case_id": f"M{i}", "opened": 0, "closed": 95} for i in range(10)]
    specs += [{"case_id": f"U{i}", "opened": 0, "closed": 95, "unit": "UTMC"} for i in range(4)]
    return build_store(specs)


def test_unit_ranks_by_closures():
    store = _unit_fixture()
    mat = features.unit_indicators(store, "MAT", day(100)).values
    utmc = features.unit_indicators(store, "UTMC", day(100)).values
    assert mat["unit_closed_30d"] == 10
    assert (mat["unit_rank_30d"], utmc["unit_rank_30d"]) == (1, 2)
    uie = features.unit_indicators(store, "UIE", day(100)).values
    assert uie["unit_open_now"] == 0
    assert uie["unit_closed_30d"] == 0


def test_crime_aggregates():
    specs = [{"case_id": f"F{i}", "opened": 0, "closed": 95, "category": "FRAUDE"} for i in range(8)]
    specs += [{"case_id": f"L{i}", "opened": 0, "closed": 95, "category": "LESIONES"} for i in range(3)]
    specs += [{"case_id": "L9", "opened": 0, "category": "LESIONES"}]
    store = build_store(specs)
    fraude = features.crime_aggregates(store, "FRAUDE", day(100)).values
    lesiones = features.crime_aggregates(store, "LESIONES", day(100)).values
    assert fraude["crime_closure_ratio_30d"] == 1.0
    assert lesiones["crime_closure_ratio_30d"] == 0.75
    assert (fraude["crime_rank_30d"], lesiones["crime_rank_30d"]) == (1, 2)
    absent = features.crime_aggregates(store, "HOMICIDIO", day(100)).values
    assert absent["crime_open_now"] == 0
    assert absent["crime_closed_30d"] == 0
    assert absent["crime_rank_30d"] == 3


def test_assemble_counts_and_schema(tiny_store):
    assert features.assemble(tiny_store, "UIE", day(11)) == []
    store = build_store([{"case_id": f"K{i}", "opened": i} for i in range(5)])
    vectors = features.assemble(store, "MAT", day(10))
    assert [v.case_id for v in vectors] == [f"K{i}" for i in range(5)]
    assert len({tuple(v.names) for v in vectors}) == 1


def test_unknown_case_raises(tiny_store):
    with pytest.raises(NotFoundError):
        FeatureExtractor().frame(tiny_store, ["NOPE"], day(11))


def test_names_are_stable_across_dates(synth_store):
    extractor = FeatureExtractor()
    extractor = extractor.with_vocabulary(extractor.vocabulary_for(synth_store, date(2020, 1, 1)))
    ids_a = features.open_case_ids(synth_store, "MAT", date(2020, 1, 1))
    ids_b = features.open_case_ids(synth_store, "MAT", date(2021, 1, 1))
    a = extractor.frame(synth_store, ids_a, date(2020, 1, 1))
    b = extractor.frame(synth_store, ids_b, date(2021, 1, 1))
    assert list(a.columns) == list(b.columns)
    assert list(a.columns) == extractor.feature_names(extractor.vocabulary)
    assert not a.isna().any().any()


def test_frame_ignores_data_after_as_of(synth_store):
    as_of = date(2020, 6, 15)
    extractor = FeatureExtractor()
    extractor = extractor.with_vocabulary(extractor.vocabulary_for(synth_store, as_of))
    ids = features.open_case_ids(synth_store, "MAT", as_of)
    full = extractor.frame(synth_store, ids, as_of)
    cut = extractor.frame(case_store.truncate(synth_store, as_of), ids, as_of)
    pd.testing.assert_frame_equal(full, cut)


def test_groups_and_families():
    assert group_of("ms_arrest_warrant_ever") == "milestones"
    assert family_of("ms_arrest_warrant_ever") == "moves"
    assert family_of("ev_progress_update_90d") == "estados_investigacion"
    assert group_of("ev_progress_update_90d") == "case_level"
    assert group_of("lawyer_rank_30d__missing") == "lawyer"
    assert group_of("crime_is_FRAUDE") == "case_level"
    assert group_of("crime_rank_all") == "crime_type"
    assert family_of("unit_open_now") == "unit"
    assert family_of("arrested_at_intake") == "case_static"


def test_labels_series(tiny_store):
    labels = features.finalization_labels(tiny_store, day(5), 183, unit="MAT")
    assert labels.to_dict() == {"A": 0, "B": 1, "C": 1}
