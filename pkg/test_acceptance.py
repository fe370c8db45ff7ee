"""End-to-end properties on larger synthetic offices. Run with ``pytest -m slow``."""

from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from triage import case_store, harness, models, prescription, rct, synth
from triage.case_store import to_day
from triage.features import family_of, group_of
from triage.harness import EvaluationPlan, RankedList
from triage.models import ModelSpec

pytestmark = pytest.mark.slow


def office(seed, start, end, n_cases, **kw):
    return synth.simulate(synth.SynthConfig(seed=seed, start=start, end=end, n_cases=n_cases, **kw))


def test_no_leakage_through_truncation():
    store = office(21, date(2018, 1, 1), date(2021, 6, 30), 10000, lawyer_count=30)
    rng = np.random.default_rng(0)
    first_ok = to_day(date(2019, 3, 1))
    last_ok = to_day(store.extraction_date) - 183 - 30
    for cut_day in sorted(rng.integers(first_ok + 183 + 14, last_ok + 183, size=10)):
        cut = case_store.from_day(int(cut_day))
        dates = [cut - timedelta(days=183 + 14), cut - timedelta(days=183 + 7)]
        plan = EvaluationPlan(
            prediction_dates=dates,
            k_top=100,
            max_train_snapshots=4,
            seed=5,
            model_specs=[
                ModelSpec.make("decision_tree", {"max_depth": 4, "min_leaf": 10}, 1),
                ModelSpec.make("scaled_logistic", {"l2": 1.0}, 2),
            ],
        )
        full = harness.run_plan(store, plan)
        truncated = harness.run_plan(case_store.truncate(store, cut), plan)
        pd.testing.assert_frame_equal(full.metrics, truncated.metrics)
        for key, ranked in full.rankings.items():
            pd.testing.assert_frame_equal(ranked.entries, truncated.rankings[key].entries)


@pytest.fixture(scope="module")
def signal_store():
    return office(31, date(2017, 1, 1), date(2020, 12, 31), 20000, activity_effect=3.0, lawyer_count=40)


def test_models_order_on_planted_signal(signal_store):
    plan = harness.default_plan(
        signal_store,
        k_top=300,
        max_train_snapshots=6,
        refit_every_weeks=4,
        include_empirical=False,
        seed=8,
        model_specs=[
            ModelSpec.make("random_forest", {"n_trees": 50, "max_depth": 8, "min_leaf": 5}, 1),
            ModelSpec.make("scaled_logistic", {"l2": 0.1}, 2),
        ],
    )
    plan.prediction_dates = plan.prediction_dates[-20:]
    assert len(plan.prediction_dates) == 20
    results = harness.run_plan(signal_store, plan)
    mean = results.metrics.groupby("family")["precision_at_k"].mean()
    assert mean["random_forest"] > mean["scaled_logistic"] > mean["dummy"]
    assert mean["random_forest"] - mean["dummy"] >= 0.20
    dummy = results.metrics[results.metrics["family"] == "dummy"]
    se = np.sqrt(dummy["positive_rate"].mean() * (1 - dummy["positive_rate"].mean()) / 300 / len(dummy))
    assert abs(dummy["precision_at_k"].mean() - dummy["positive_rate"].mean()) <= 3 * se


def test_event_counts_dominate_importance(signal_store):
    plan = EvaluationPlan(prediction_dates=[date(2019, 12, 2)], max_train_snapshots=6)
    X, y = harness.build_training_set(signal_store, plan.prediction_dates[0], plan)
    model = models.fit_frame("random_forest", {"n_trees": 30, "max_depth": 8}, X, y, seed=3)
    grouped = models.importance_by_group(model, group_of)
    assert sum(grouped.values()) == pytest.approx(1.0, abs=1e-9)
    by_family = models.importance_by_group(model, family_of)
    assert sum(by_family.values()) == pytest.approx(1.0, abs=1e-9)
    assert next(iter(by_family)) == "moves"


def test_empirical_ties_dummy_without_signal():
    # no activity, age or category effect on exits
    store = office(41, date(2017, 1, 1), date(2020, 12, 31), 15000, activity_effect=0.0, crime_offsets={}, lawyer_count=30)
    store_plan = harness.default_plan(store, k_top=300, max_train_snapshots=4, seed=9, model_specs=[])
    store_plan.prediction_dates = store_plan.prediction_dates[-20:]
    results = harness.run_plan(store, store_plan)
    m = results.metrics
    emp = m[m["family"] == "empirical"]
    dum = m[m["family"] == "dummy"]
    p = dum["positive_rate"].mean()
    k = 300
    weeks = len(dum)
    # dummy redraws weekly; the empirical top-K is the same category block every
    # week and its outcome windows overlap, so it counts as a single draw of K
    se = np.sqrt(p * (1 - p) / k * (1 + 1 / weeks))
    assert abs(emp["precision_at_k"].mean() - dum["precision_at_k"].mean()) <= 3 * se


def test_planted_tail_is_flagged():
    store = office(51, date(2019, 1, 1), date(2020, 12, 31), 10000, lawyer_count=30)
    min_age = 6500
    planted = synth.plant_prescription_tail(store, 0.3, min_age, seed=2)
    as_of = planted.extraction_date
    ids = sorted(case_store.open_cases(planted, "MAT", as_of))
    scores = np.random.default_rng(4).random(len(ids))
    ranked = RankedList.build(as_of, "dummy", ids, scores, planted.cases)
    table = prescription.load_penalty_table()
    flags, bottom_n = prescription.flag_all_rules(planted, ranked, table, k_bottom=1000)
    bottom = set(ranked.bottom(1000)["case_id"])
    opened = planted.cases.set_index("case_id")["opened_day"]
    planted_share = sum(1 for c in bottom if to_day(as_of) - opened[c] >= min_age) / bottom_n
    flagged_share = len(flags["mean"]) / bottom_n
    assert abs(flagged_share - planted_share) <= 0.05
    assert set(flags["max"]["case_id"]) <= set(flags["mean"]["case_id"]) <= set(flags["min"]["case_id"])


def test_rct_over_six_weeks():
    store = office(61, date(2017, 1, 1), date(2020, 12, 31), 20000, lawyer_count=40)
    ledger = rct.EnrollmentLedger()
    rankings = []
    for w in range(6):
        t = date(2020, 5, 4) + timedelta(days=7 * w)
        ids = sorted(case_store.open_cases(store, "MAT", t))
        scores = np.random.default_rng(w).random(len(ids))
        rankings.append(RankedList.build(t, "m", ids, scores, store.cases))
    cohorts = rct.run_weeks(rankings, ledger, master_seed=12)
    seen = set()
    for cohort, ranked in zip(cohorts, rankings):
        assert len(cohort.treatment) == len(cohort.control) == 300
        assert not (cohort.case_ids & seen)
        # every skipped rank above the last selected one was already enrolled
        last = max(cohort.ranks.values())
        above = set(ranked.entries.loc[ranked.entries["rank"] <= last, "case_id"])
        assert above - cohort.case_ids <= seen
        seen |= cohort.case_ids
    assert sum(len(c.treatment) for c in cohorts) == 1800
    assert sum(len(c.control) for c in cohorts) == 1800
