"""Command-line entry point.

Every subcommand maps ``ConfigError`` to exit 1, ``DataError`` to exit 2 and
anything unexpected to exit 3. ``run-all`` drives the whole pipeline from one
YAML file and writes ``manifest.json`` next to its outputs.
"""

import logging
import sys
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Optional

import click
import pandas as pd
import yaml

from triage import __version__, baseline, case_store, features, harness, models, prescription, rct, reports, synth
from triage.case_store import UNITS
from triage.config import (
    HORIZON_DAYS,
    N_JOBS,
    configure_logging,
    default_output_dir,
    load_yaml,
    parse_date,
    resolve_path,
)
from triage.errors import ConfigError, TriageError
from triage.seeding import derive_seed

logger = logging.getLogger(__name__)


class IsoDate(click.ParamType):
    name = "date"

    def convert(self, value, param, ctx):
        try:
            return parse_date(value, param.name if param else "date")
        except ConfigError as e:
            self.fail(str(e), param, ctx)


ISO_DATE = IsoDate()


class TriageGroup(click.Group):
    """Maps pipeline exceptions to the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.show()
            ctx.exit(ConfigError.exit_code)
        except (click.exceptions.Exit, click.Abort, click.ClickException):
            raise
        except TriageError as e:
            click.echo(f"✗ {type(e).__name__}: {e}", err=True)
            ctx.exit(e.exit_code)
        except Exception as e:
            logger.exception("Internal error")
            click.echo(f"✗ Internal error: {e}", err=True)
            ctx.exit(TriageError.exit_code)


def open_store(path):
    """SQLite store file, or a directory holding cases.csv and events.csv."""
    path = Path(path)
    if path.is_dir():
        return case_store.ingest(path / "cases.csv", path / "events.csv")
    return case_store.load(path)


def _check_unit(unit):
    if unit not in UNITS:
        raise ConfigError(f"Unknown unit {unit!r}; declared units are {', '.join(UNITS)}")
    return unit


def _parse_params(pairs):
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        params[key.strip()] = yaml.safe_load(value)
    return params


@click.group(cls=TriageGroup)
@click.version_option(__version__, prog_name="triage")
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def cli(verbose):
    """Case triage: rank open cases, screen the bottom tail, assign RCT cohorts."""
    configure_logging(verbose)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@cli.command()
@click.option("--cases", "cases_path", required=True, type=click.Path(), help="Case register file.")
@click.option("--events", "events_path", required=True, type=click.Path(), help="Event log file.")
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv", show_default=True)
@click.option("--out", "out_path", type=click.Path(), help="SQLite store to write.")
@click.option("--rejects", "rejects_path", type=click.Path(), help="Write rejected rows to this CSV.")
def ingest(cases_path, events_path, fmt, out_path, rejects_path):
    """Validate a case register and event log into a store."""
    for p in (cases_path, events_path):
        if not Path(p).exists():
            raise ConfigError(f"Input file not found: {p}")
    store = case_store.ingest(cases_path, events_path, fmt)
    out_path = Path(out_path) if out_path else default_output_dir() / "store.sqlite"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    case_store.save(store, out_path)
    if rejects_path:
        pd.DataFrame(
            [(r.table, r.line, r.reason) for r in store.rejects], columns=["table", "line", "reason"]
        ).to_csv(rejects_path, index=False, lineterminator="\n")
    click.echo(f"✓ Stored {len(store)} cases and {len(store.events)} events in {out_path}")
    if store.rejects:
        click.echo(f"⚠️  {len(store.rejects)} rows rejected")


@cli.command("synth")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Synthetic store YAML.")
@click.option("--out-dir", type=click.Path(), help="Directory for cases.csv and events.csv.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--plant-fraction", type=float, help="Age this share of the open cases into a dormant tail.")
@click.option("--plant-min-age", type=int, default=1825, show_default=True, help="Minimum planted age in days.")
def synth_cmd(config_path, out_dir, seed, plant_fraction, plant_min_age):
    """Generate a synthetic case register and event log."""
    data = load_yaml(config_path)
    if seed is not None:
        data["seed"] = seed
    config = synth.SynthConfig.from_dict(data)
    out_dir = Path(out_dir) if out_dir else default_output_dir() / "synth"
    if plant_fraction is None:
        cases_path, events_path = synth.generate(config, out_dir)
    else:
        store = synth.simulate(config)
        store = synth.plant_prescription_tail(
            store, plant_fraction, plant_min_age, seed=derive_seed(config.seed, "plant")
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        cases_path, events_path = out_dir / "cases.csv", out_dir / "events.csv"
        case_store.export(store, cases_path, events_path)
    click.echo(f"✓ Wrote {cases_path} and {events_path}")


@cli.command("features")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--unit", default="MAT", show_default=True)
@click.option("--as-of", required=True, type=ISO_DATE)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--vocab-size", type=int, default=40, show_default=True, help="Crime categories kept as indicators.")
def features_cmd(store_path, unit, as_of, out_path, vocab_size):
    """Feature matrix for the open cases of a unit on a date."""
    _check_unit(unit)
    store = open_store(store_path)
    config = features.FeatureConfig(crime_vocab_size=vocab_size)
    extractor = features.FeatureExtractor(config)
    extractor = extractor.with_vocabulary(extractor.vocabulary_for(store, as_of))
    frame = extractor.frame(store, features.open_case_ids(store, unit, as_of), as_of)
    features.write_frame(frame, out_path)
    click.echo(f"✓ {len(frame)} cases x {frame.shape[1]} features -> {out_path}")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--unit", default="MAT", show_default=True)
@click.option("--through", required=True, type=ISO_DATE, help="Labels must be observed by this date.")
@click.option("--family", type=click.Choice(models.FAMILIES), default="random_forest", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--param", "params", multiple=True, help="Hyperparameter override, key=value.")
@click.option("--horizon", type=int, default=HORIZON_DAYS, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def train(store_path, unit, through, family, seed, params, horizon, out_path):
    """Train one model on office-wide snapshots labeled by --through."""
    _check_unit(unit)
    store = open_store(store_path)
    hyper = dict(models.DEFAULT_HYPERPARAMETERS[family])
    hyper.update(_parse_params(params))
    plan = harness.EvaluationPlan(prediction_dates=[through], unit=unit, label_horizon_days=horizon)
    X, y = harness.build_training_set(store, through, plan)
    model = models.fit_frame(
        family, hyper, X, y, seed=seed, trained_through=through - timedelta(days=horizon), n_jobs=N_JOBS
    )
    models.save_model(model, out_path)
    click.echo(f"✓ {family} trained on {len(y)} examples ({int(y.sum())} positive) -> {out_path}")
    for row in models.top_features(model, 5).itertuples():
        click.echo(f"   {row.feature}: {row.importance:.4f}")


@cli.command("baseline")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--as-of", required=True, type=ISO_DATE)
@click.option("--prior", type=float, default=baseline.DEFAULT_PRIOR_STRENGTH, show_default=True)
@click.option("--horizon", type=int, default=HORIZON_DAYS, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def baseline_cmd(store_path, as_of, prior, horizon, out_path):
    """Smoothed per-category finalization rates."""
    store = open_store(store_path)
    table = baseline.build_table(store, as_of, prior_strength=prior, horizon_days=horizon)
    table.to_frame().to_csv(out_path, index=False, lineterminator="\n", float_format="%.10g")
    click.echo(f"✓ {len(table.per_crime)} categories, global rate {table.global_rate:.3f} -> {out_path}")


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path())
@click.option("--out-dir", type=click.Path())
def evaluate(store_path, plan_path, out_dir):
    """Rolling weekly evaluation of every model in a plan."""
    store = open_store(store_path)
    plan = harness.load_plan(plan_path, store)
    out_dir = Path(out_dir) if out_dir else default_output_dir() / "evaluate"
    results = harness.run_plan(store, plan)
    written = harness.write_results(results, out_dir)
    table = harness.best_models_table(results)
    click.echo(f"✓ {len(plan.prediction_dates)} weeks, {len(written)} files -> {out_dir}")
    for row in table.itertuples():
        click.echo(f"   {row.model_tag}: P@{plan.k_top} = {row.mean_precision_at_k:.3f}")


# ---------------------------------------------------------------------------
# Prescription, RCT, reports
# ---------------------------------------------------------------------------


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--ranked", "ranked_path", required=True, type=click.Path())
@click.option("--penalties", type=click.Path(), default=str(prescription.DEFAULT_PENALTIES), show_default=True)
@click.option("--rule", type=click.Choice(list(prescription.RULES) + ["all"]), default="mean", show_default=True)
@click.option("--k", "k_bottom", type=int, default=1000, show_default=True)
@click.option("--as-of", type=ISO_DATE, help="Defaults to the ranking's date.")
@click.option("--out", "out_path", required=True, type=click.Path())
def prescribe(store_path, ranked_path, penalties, rule, k_bottom, as_of, out_path):
    """Flag potentially prescribed cases in the bottom of a ranking."""
    table = prescription.load_penalty_table(penalties)
    store = open_store(store_path)
    ranked = harness.RankedList.from_csv(ranked_path, as_of=as_of)
    if ranked.as_of is None:
        raise ConfigError(f"Cannot infer a date from {ranked_path}; pass --as-of")
    missing = prescription.check_table_completeness(store, table)
    if missing:
        logger.warning("Penalty table has no entry for: %s", ", ".join(missing))
    if rule == "all":
        flags, bottom_n = prescription.flag_all_rules(store, ranked, table, k_bottom)
        out = pd.concat([flags[r] for r in prescription.RULES], ignore_index=True)
    else:
        out = prescription.flag_prescribed(store, ranked, table, rule, k_bottom)
        bottom_n = min(k_bottom, len(ranked))
    out.to_csv(out_path, index=False, lineterminator="\n", float_format="%.10g")
    click.echo(f"✓ {len(out)} flags among the {bottom_n} lowest-ranked cases -> {out_path}")


@cli.group("rct")
def rct_group():
    """Randomized cohorts over the top of the ranking."""


@rct_group.command("assign")
@click.option("--ranked", "ranked_path", required=True, type=click.Path())
@click.option("--ledger", "ledger_path", required=True, type=click.Path())
@click.option("--seed", type=int, required=True)
@click.option("--cohort-size", type=int, default=rct.COHORT_SIZE, show_default=True)
@click.option("--week-index", type=int, help="Defaults to the next week in the ledger.")
@click.option("--out", "out_path", required=True, type=click.Path())
def rct_assign(ranked_path, ledger_path, seed, cohort_size, week_index, out_path):
    """Enroll one week's cohort and append it to the ledger."""
    ranked = harness.RankedList.from_csv(ranked_path)
    ledger = rct.EnrollmentLedger(ledger_path)
    week = ledger.next_week_index if week_index is None else week_index
    cohort = rct.assign_week(ranked, ledger, seed, cohort_size, week)
    ledger.append(cohort)
    rct.write_cohort(cohort, out_path)
    click.echo(
        f"✓ Week {week}: {len(cohort.treatment)} treatment, {len(cohort.control)} control, "
        f"{cohort.replacements_used} replacements -> {out_path}"
    )
    if cohort.shortfall:
        click.echo(f"⚠️  Eligible pool short of {cohort_size}")


@rct_group.command("report")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--cohorts", "cohorts_dir", required=True, type=click.Path())
@click.option("--horizon", type=int, default=HORIZON_DAYS, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def rct_report(store_path, cohorts_dir, horizon, out_path):
    """Resolution outcomes per arm, per week and pooled."""
    cohorts = rct.read_cohorts(cohorts_dir)
    store = open_store(store_path)
    report = rct.outcomes_report(store, cohorts, horizon)
    report.to_csv(out_path, index=False, lineterminator="\n", float_format="%.10g")
    click.echo(f"✓ Outcomes for {len(cohorts)} cohorts -> {out_path}")


@cli.command("report")
@click.option("--results", "results_dir", required=True, type=click.Path())
@click.option("--out-dir", type=click.Path())
@click.option("--rule", type=click.Choice(prescription.RULES), default="mean", show_default=True)
def report_cmd(results_dir, out_dir, rule):
    """Summary tables and report.xlsx from an evaluation directory."""
    written = reports.report_tables(results_dir, out_dir, rule)
    click.echo(f"✓ {len(written)} report files -> {written[-1].parent}")


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    seed: int
    output_dir: Path
    unit: str = "MAT"
    store: Optional[Path] = None
    synth: Optional[dict] = None
    plant_tail: Optional[dict] = None
    plan: dict = field(default_factory=dict)
    penalties: Path = prescription.DEFAULT_PENALTIES
    rule: str = "mean"
    k_bottom: Optional[int] = None
    rct: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data, base_dir=None, output_dir=None):
        data = dict(data)
        data.pop("schema_version", None)
        if "seed" not in data:
            raise ConfigError("pipeline config: missing required field 'seed'")
        seed = int(data.pop("seed"))
        out = output_dir or resolve_path(data.pop("output_dir", None), base_dir) or default_output_dir()
        data.pop("output_dir", None)
        store = resolve_path(data.pop("store", None), base_dir)
        synth_cfg = data.pop("synth", None)
        plant = None
        if synth_cfg is not None:
            synth_cfg = dict(synth_cfg)
            plant = synth_cfg.pop("plant_tail", None)
        plan = data.pop("plan", None) or {}
        if isinstance(plan, str):
            plan = load_yaml(resolve_path(plan, base_dir))
        penalties = resolve_path(data.pop("penalties", None), base_dir) or prescription.DEFAULT_PENALTIES
        pres = data.pop("prescription", None) or {}
        rct_cfg = data.pop("rct", None) or {}
        unit = data.pop("unit", "MAT")
        if data:
            raise ConfigError(f"pipeline config: unknown fields {', '.join(sorted(data))}")
        config = cls(
            seed=seed,
            output_dir=Path(out),
            unit=unit,
            store=store,
            synth=synth_cfg,
            plant_tail=plant,
            plan=dict(plan),
            penalties=Path(penalties),
            rule=pres.get("rule", "mean"),
            k_bottom=pres.get("k_bottom"),
            rct=dict(rct_cfg),
        )
        return config.validate()

    @classmethod
    def from_yaml(cls, path, output_dir=None):
        path = Path(path)
        return cls.from_dict(load_yaml(path), base_dir=path.parent, output_dir=output_dir)

    def validate(self):
        _check_unit(self.unit)
        if (self.store is None) == (self.synth is None):
            raise ConfigError("pipeline config needs exactly one of 'store' or 'synth'")
        if self.store is not None and not self.store.exists():
            raise ConfigError(f"Store not found: {self.store}")
        if not self.penalties.exists():
            raise ConfigError(f"Penalty table not found: {self.penalties}")
        if self.rule not in prescription.RULES:
            raise ConfigError(f"prescription.rule must be one of {', '.join(prescription.RULES)}")
        unknown = set(self.rct) - {"enabled", "weeks", "cohort_size", "family"}
        if unknown:
            raise ConfigError(f"rct: unknown fields {', '.join(sorted(unknown))}")
        return self

    def plan_dict(self):
        plan = dict(self.plan)
        plan.setdefault("unit", self.unit)
        plan.setdefault("seed", self.seed)
        return plan


def _pipeline_store(config, written):
    if config.store is not None:
        return open_store(config.store)
    data = dict(config.synth)
    data.setdefault("seed", derive_seed(config.seed, "synth"))
    store = synth.simulate(synth.SynthConfig.from_dict(data))
    if config.plant_tail:
        plant = dict(config.plant_tail)
        store = synth.plant_prescription_tail(
            store,
            plant.get("fraction", 0.3),
            plant.get("min_age_days", 1825),
            quiet_days=plant.get("quiet_days", 365),
            seed=derive_seed(config.seed, "plant"),
        )
    data_dir = config.output_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    cases_path, events_path = data_dir / "cases.csv", data_dir / "events.csv"
    case_store.export(store, cases_path, events_path)
    written += [cases_path, events_path]
    return store


def _prescribe_stage(store, results, config, eval_dir, written):
    table = prescription.load_penalty_table(config.penalties)
    missing = prescription.check_table_completeness(store, table)
    if missing:
        logger.warning("Penalty table has no entry for: %s", ", ".join(missing))
    plan = results.plan
    k_bottom = config.k_bottom or plan.k_bottom
    tags = list(harness.best_models_table(results)["model_tag"])
    flags_dir = config.output_dir / "prescription"
    flags_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    flagged_ids = {}
    for t in plan.prediction_dates:
        for tag in tags:
            ranked = results.rankings.get((t, tag))
            if ranked is None:
                continue
            flags, bottom_n = prescription.flag_all_rules(store, ranked, table, k_bottom)
            entries.append((t, tag, flags, bottom_n))
            flagged_ids[(t, tag)] = list(flags[config.rule]["case_id"])
            path = flags_dir / f"{t.isoformat()}__{harness.slug(tag)}.csv"
            flags[config.rule].to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
            written.append(path)
    summary = prescription.prescription_summary(entries)
    path = eval_dir / "prescription_by_week.csv"
    summary.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    written.append(path)
    for grouping in ("municipality", "crime_category"):
        frames = [harness.subgroup_diagnostics(results, grouping, tag, flags=flagged_ids) for tag in tags]
        path = flags_dir / f"flag_shares_{grouping}.csv"
        pd.concat(frames, ignore_index=True).to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        written.append(path)
    return summary


def _rct_stage(store, results, config, written):
    settings = config.rct
    family = settings.get("family", "random_forest")
    best = harness.select_best_per_family(results)
    if family not in best:
        raise ConfigError(f"rct.family {family!r} was not evaluated; evaluated: {', '.join(best)}")
    tag = best[family].tag
    weeks = int(settings.get("weeks", len(results.plan.prediction_dates)))
    dates = results.plan.prediction_dates[:weeks]
    rct_dir = config.output_dir / "rct"
    rct_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = rct_dir / "ledger.csv"
    if ledger_path.exists():
        # each run-all starts its own enrollment
        ledger_path.unlink()
    ledger = rct.EnrollmentLedger(ledger_path)
    cohorts = rct.run_weeks(
        [results.ranking(t, tag) for t in dates],
        ledger,
        config.seed,
        int(settings.get("cohort_size", rct.COHORT_SIZE)),
    )
    written.append(ledger_path)
    for cohort in cohorts:
        path = rct_dir / f"cohort_{cohort.week_index:03d}.csv"
        rct.write_cohort(cohort, path)
        written.append(path)
    path = rct_dir / "outcomes.csv"
    rct.outcomes_report(store, cohorts, results.plan.label_horizon_days).to_csv(
        path, index=False, lineterminator="\n", float_format="%.10g"
    )
    written.append(path)
    return cohorts


def run_all(config):
    """Data, evaluate, prescribe, optional RCT and report; returns the manifest.

    On failure the manifest is still written, listing the outputs produced so
    far with the failed stage, and the error is re-raised.
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []
    stage = "data"
    try:
        store = _pipeline_store(config, written)
        stage = "evaluate"
        plan = harness.plan_from_dict(config.plan_dict(), store)
        results = harness.run_plan(store, plan)
        eval_dir = out / "evaluate"
        written += harness.write_results(results, eval_dir)
        stage = "prescribe"
        _prescribe_stage(store, results, config, eval_dir, written)
        if config.rct.get("enabled", False):
            stage = "rct"
            _rct_stage(store, results, config, written)
        stage = "report"
        written += reports.report_tables(eval_dir, out / "report", config.rule)
    except Exception as e:
        reports.write_manifest(out, written, status="failed", failed_stage=stage, error=str(e))
        logger.error("run-all failed during %s: %s", stage, e)
        raise
    _, manifest = reports.write_manifest(out, written)
    return manifest


@cli.command("run-all")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Pipeline YAML.")
@click.option("--out-dir", type=click.Path(), help="Overrides output_dir in the config.")
def run_all_cmd(config_path, out_dir):
    """Run the whole pipeline and write manifest.json."""
    config = PipelineConfig.from_yaml(config_path, output_dir=Path(out_dir) if out_dir else None)
    manifest = run_all(config)
    click.echo(f"✓ {len(manifest['files'])} artifacts -> {config.output_dir / reports.MANIFEST_NAME}")


def main():
    cli(prog_name="triage")


if __name__ == "__main__":
    sys.exit(main())
