import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from conftest import build_store, day
from test_case_store import write_files
from triage import case_store, harness, models, synth
from triage.cli import cli
from triage.harness import RankedList

SMOKE = Path(__file__).parent / "triage" / "data" / "pipeline_smoke.yaml"


@pytest.fixture
def runner():
    return CliRunner()


def test_help_lists_commands(runner):
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for name in ("ingest", "synth", "features", "train", "baseline", "evaluate", "prescribe", "rct", "report", "run-all"):
        assert name in result.output


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "triage" in result.output


def test_missing_option_is_config_error(runner):
    result = runner.invoke(cli, ["features", "--store", "x.sqlite"])
    assert result.exit_code == 1


def test_bad_date_is_config_error(runner, tmp_path):
    result = runner.invoke(
        cli, ["features", "--store", str(tmp_path), "--as-of", "2020-13-01", "--out", str(tmp_path / "f.csv")]
    )
    assert result.exit_code == 1


def test_ingest_missing_file(runner, tmp_path):
    result = runner.invoke(cli, ["ingest", "--cases", str(tmp_path / "c.csv"), "--events", str(tmp_path / "e.csv")])
    assert result.exit_code == 1
    assert "c.csv" in result.output


def test_ingest_hard_error_exits_2(runner, tmp_path):
    cases_path, events_path = write_files(
        tmp_path,
        "X1,2020-01-10,,ROBO_SIMPLE,MUN01,MAT,L001,false,,\n",
        "X1,0,initialized,2020-01-05,L001,,\n",
    )
    result = runner.invoke(cli, ["ingest", "--cases", str(cases_path), "--events", str(events_path), "--out", str(tmp_path / "s.sqlite")])
    assert result.exit_code == 2
    assert "DataError" in result.output


def test_ingest_writes_store_and_rejects(runner, tmp_path):
    cases_path, events_path = write_files(
        tmp_path,
        "X1,2020-01-10,,ROBO_SIMPLE,MUN01,MAT,L001,false,,\nX2,2020-01-11,,LESIONES,MUN02,NOPE,L002,false,,\n",
        "X1,0,initialized,2020-01-10,L001,,\n",
    )
    out = tmp_path / "store.sqlite"
    rejects = tmp_path / "rejects.csv"
    result = runner.invoke(
        cli,
        ["ingest", "--cases", str(cases_path), "--events", str(events_path), "--out", str(out), "--rejects", str(rejects)],
    )
    assert result.exit_code == 0, result.output
    assert "1 rows rejected" in result.output
    assert len(case_store.load(out)) == 1
    assert list(pd.read_csv(rejects)["table"]) == ["cases"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    config = synth.SynthConfig.from_dict(
        {"seed": 2, "date_span": ["2019-01-01", "2021-06-30"], "n_cases": 1000, "lawyer_count": 10}
    )
    synth.generate(config, out)
    return out


def test_features_and_baseline_commands(runner, synth_dir, tmp_path):
    result = runner.invoke(
        cli, ["features", "--store", str(synth_dir), "--as-of", "2020-10-01", "--out", str(tmp_path / "f.csv")]
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "f.csv")
    assert len(frame) > 0
    result = runner.invoke(
        cli, ["baseline", "--store", str(synth_dir), "--as-of", "2020-10-01", "--out", str(tmp_path / "b.csv")]
    )
    assert result.exit_code == 0, result.output
    assert pd.read_csv(tmp_path / "b.csv")["crime_category"].iloc[-1] == "*"


def test_unknown_unit(runner, synth_dir, tmp_path):
    result = runner.invoke(
        cli,
        ["features", "--store", str(synth_dir), "--unit", "XYZ", "--as-of", "2020-10-01", "--out", str(tmp_path / "f.csv")],
    )
    assert result.exit_code == 1


def test_train_command(runner, synth_dir, tmp_path):
    out = tmp_path / "tree.model"
    result = runner.invoke(
        cli,
        [
            "train",
            "--store",
            str(synth_dir),
            "--through",
            "2020-12-01",
            "--family",
            "decision_tree",
            "--param",
            "max_depth=3",
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    header = models.read_model_header(out)
    assert header["hyperparameters"]["max_depth"] == 3


def _prescribe_inputs(tmp_path):
    store = build_store(
        [
            {"case_id": "OLD", "opened": 0},
            {"case_id": "NEW", "opened": 1900},
        ],
        extraction_date=day(2000),
    )
    store_path = tmp_path / "store.sqlite"
    case_store.save(store, store_path)
    ranked = RankedList.build(day(2000), "m", ["OLD", "NEW"], [0.1, 0.2], store.cases)
    ranked_path = tmp_path / f"{day(2000).isoformat()}__m.csv"
    ranked.to_csv(ranked_path)
    return store_path, ranked_path


def test_prescribe_command(runner, tmp_path):
    store_path, ranked_path = _prescribe_inputs(tmp_path)
    out = tmp_path / "flags.csv"
    result = runner.invoke(
        cli, ["prescribe", "--store", str(store_path), "--ranked", str(ranked_path), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert list(pd.read_csv(out)["case_id"]) == ["OLD"]
    result = runner.invoke(
        cli, ["prescribe", "--store", str(store_path), "--ranked", str(ranked_path), "--rule", "all", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert set(pd.read_csv(out)["rule"]) <= {"min", "mean", "max"}


def test_prescribe_missing_penalty_table(runner, tmp_path):
    store_path, ranked_path = _prescribe_inputs(tmp_path)
    missing = tmp_path / "no_such_penalties.csv"
    result = runner.invoke(
        cli,
        [
            "prescribe",
            "--store",
            str(store_path),
            "--ranked",
            str(ranked_path),
            "--penalties",
            str(missing),
            "--out",
            str(tmp_path / "flags.csv"),
        ],
    )
    assert result.exit_code == 1
    assert "no_such_penalties.csv" in result.output


def test_rct_assign_uses_ledger(runner, tmp_path):
    _, ranked_path = _prescribe_inputs(tmp_path)
    ledger = tmp_path / "ledger.csv"
    args = ["rct", "assign", "--ranked", str(ranked_path), "--ledger", str(ledger), "--seed", "1", "--cohort-size", "2"]
    first = runner.invoke(cli, args + ["--out", str(tmp_path / "cohort_000.csv")])
    assert first.exit_code == 0, first.output
    assert len(pd.read_csv(ledger)) == 2
    second = runner.invoke(cli, args + ["--out", str(tmp_path / "cohort_001.csv")])
    assert second.exit_code == 0, second.output
    assert "short" in second.output
    assert len(pd.read_csv(ledger)) == 2


def test_report_needs_results(runner, tmp_path):
    result = runner.invoke(cli, ["report", "--results", str(tmp_path)])
    assert result.exit_code == 2


def _run_smoke(runner, out_dir):
    result = runner.invoke(cli, ["run-all", "--config", str(SMOKE), "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    return json.loads((out_dir / "manifest.json").read_text())


def test_run_all_smoke_is_reproducible(runner, tmp_path):
    first = _run_smoke(runner, tmp_path / "a")
    second = _run_smoke(runner, tmp_path / "b")
    assert first["status"] == "ok"
    assert len(first["files"]) >= 6
    paths = {f["path"] for f in first["files"]}
    for expected in (
        "data/cases.csv",
        "evaluate/metrics_by_week.csv",
        "evaluate/best_models.csv",
        "evaluate/prescription_by_week.csv",
        "rct/outcomes.csv",
        "report/model_summary.csv",
        "report/report.xlsx",
    ):
        assert expected in paths
    assert first == second


def test_run_all_failure_writes_manifest(runner, tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text(
        "schema_version: 1\n"
        "seed: 1\n"
        "synth:\n"
        "  date_span: ['2021-01-01', '2022-06-30']\n"
        "  n_cases: 200\n"
        "plan:\n"
        "  prediction_dates: ['2022-06-01']\n"
    )
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run-all", "--config", str(config), "--out-dir", str(out)])
    assert result.exit_code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_stage"] == "evaluate"
    assert {f["path"] for f in manifest["files"]} == {"data/cases.csv", "data/events.csv"}


def test_run_all_unexpected_error_writes_manifest(runner, tmp_path, monkeypatch):
    def broken_plan(data, store):
        raise ValueError("plan exploded")

    monkeypatch.setattr(harness, "plan_from_dict", broken_plan)
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run-all", "--config", str(SMOKE), "--out-dir", str(out)])
    assert result.exit_code == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_stage"] == "evaluate"
    assert "plan exploded" in manifest["error"]
    assert {f["path"] for f in manifest["files"]} == {"data/cases.csv", "data/events.csv"}


def test_run_all_rejects_unknown_fields(runner, tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("schema_version: 1\nseed: 1\nsynth: {n_cases: 10}\ncolour: red\n")
    result = runner.invoke(cli, ["run-all", "--config", str(config), "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "colour" in result.output
