"""Rolling temporal evaluation.

For each weekly prediction date ``t`` every model is trained on office-wide
snapshots whose six-month outcome is fully observed by ``t`` and then ranks
the open cases of the target unit. Rankings are scored with Precision@K and
Recall@K once their labels are realized.
"""

import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from triage import baseline, case_store, models
from triage.case_store import UNITS, to_day
from triage.config import HORIZON_DAYS, N_JOBS, load_yaml, parse_date
from triage.errors import ConfigError, DataError, SingleClassError
from triage.features import FeatureConfig, FeatureExtractor, crime_vocabulary, family_of, finalization_labels, group_of
from triage.models import ModelSpec
from triage.seeding import derive_seed

logger = logging.getLogger(__name__)

EMPIRICAL_TAG = "empirical"
DUMMY_TAG = "dummy"
BURN_IN_DAYS = 365


@dataclass
class EvaluationPlan:
    prediction_dates: list
    unit: str = "MAT"
    label_horizon_days: int = HORIZON_DAYS
    train_start: Optional[date] = None
    k_top: int = 300
    k_bottom: int = 1000
    model_specs: list = field(default_factory=list)
    include_dummy: bool = True
    include_empirical: bool = True
    refit_every_weeks: int = 1
    train_stride_days: int = 28
    max_train_snapshots: Optional[int] = 12
    prior_strength: float = baseline.DEFAULT_PRIOR_STRENGTH
    min_support: int = 20
    burn_in_days: int = BURN_IN_DAYS
    seed: int = 0
    n_jobs: Optional[int] = None
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def validate(self, store=None):
        if self.unit not in UNITS:
            raise ConfigError(f"Unknown unit {self.unit!r}; declared units are {', '.join(UNITS)}")
        if not self.prediction_dates:
            raise ConfigError("Plan has no prediction dates")
        if any(b <= a for a, b in zip(self.prediction_dates, self.prediction_dates[1:])):
            raise ConfigError("prediction_dates must be strictly increasing")
        if self.k_top <= 0 or self.k_bottom <= 0:
            raise ConfigError("k_top and k_bottom must be positive")
        if self.refit_every_weeks < 1:
            raise ConfigError("refit_every_weeks must be >= 1")
        if self.train_stride_days < 1:
            raise ConfigError("train_stride_days must be >= 1")
        if store is not None:
            last = self.prediction_dates[-1]
            needed = last + timedelta(days=self.label_horizon_days)
            if store.extraction_date is None or needed > store.extraction_date:
                raise ConfigError(
                    f"Prediction date {last} needs outcomes through {needed}, "
                    f"store ends {store.extraction_date}"
                )
            first = self.prediction_dates[0]
            if store.start_date is not None and (first - store.start_date).days < self.burn_in_days:
                raise ConfigError(
                    f"First prediction date {first} leaves less than {self.burn_in_days} days of history"
                )
        return self

    def all_specs(self):
        specs = list(self.model_specs)
        if self.include_dummy and not any(s.family == "dummy" for s in specs):
            specs.append(ModelSpec.make("dummy", {}, derive_seed(self.seed, "dummy")))
        return specs


def weekly_dates(first, weeks=None, last=None):
    out = []
    d = first
    while (weeks is None or len(out) < weeks) and (last is None or d <= last):
        out.append(d)
        d += timedelta(days=7)
        if weeks is None and last is None:
            break
    return out


def default_plan(store, unit="MAT", eval_fraction=0.25, burn_in_days=BURN_IN_DAYS, horizon_days=HORIZON_DAYS, **kwargs):
    """Weekly dates over the final ``eval_fraction`` of the observable span."""
    if store.start_date is None:
        raise ConfigError("Cannot build a default plan on an empty store")
    observable_end = store.extraction_date - timedelta(days=horizon_days)
    span = (observable_end - store.start_date).days
    first = store.start_date + timedelta(days=int(np.ceil(span * (1.0 - eval_fraction))))
    first = max(first, store.start_date + timedelta(days=burn_in_days))
    dates = weekly_dates(first, last=observable_end)
    if not dates:
        raise ConfigError(
            f"Store span {store.start_date}..{store.extraction_date} is too short for a "
            f"{burn_in_days}-day burn-in plus a {horizon_days}-day horizon"
        )
    return EvaluationPlan(
        prediction_dates=dates, unit=unit, label_horizon_days=horizon_days, burn_in_days=burn_in_days, **kwargs
    )


def _specs_from_config(entries, master_seed):
    specs = []
    for i, entry in enumerate(entries or []):
        family = entry.get("family")
        if family is None:
            raise ConfigError(f"models[{i}]: missing family")
        seed = entry.get("seed")
        if entry.get("grid"):
            grid = models.hyperparameter_grid(family)
            for s in grid:
                specs.append(ModelSpec(s.family, s.hyperparameters, seed if seed is not None else derive_seed(master_seed, "model", s.tag)))
            continue
        params = dict(models.DEFAULT_HYPERPARAMETERS.get(family, {}))
        params.update(entry.get("hyperparameters") or {})
        spec = ModelSpec.make(family, params, 0)
        specs.append(ModelSpec(spec.family, spec.hyperparameters, seed if seed is not None else derive_seed(master_seed, "model", spec.tag)))
    return specs


def plan_from_dict(data, store):
    data = dict(data)
    data.pop("schema_version", None)
    seed = int(data.pop("seed", 0))
    unit = data.pop("unit", "MAT")
    horizon = int(data.pop("label_horizon_days", HORIZON_DAYS))
    burn_in = int(data.pop("burn_in_days", BURN_IN_DAYS))
    dates_cfg = data.pop("prediction_dates", "default")
    specs = _specs_from_config(data.pop("models", [{"family": "random_forest"}]), seed)
    feature_cfg = FeatureConfig.from_dict(data.pop("features", None))
    train_start = data.pop("train_start", None)
    kwargs = {}
    for key in (
        "k_top",
        "k_bottom",
        "include_dummy",
        "include_empirical",
        "refit_every_weeks",
        "train_stride_days",
        "max_train_snapshots",
        "prior_strength",
        "min_support",
        "n_jobs",
    ):
        if key in data:
            kwargs[key] = data.pop(key)
    weeks_limit = data.pop("weeks", None)
    if data:
        raise ConfigError(f"plan: unknown fields {', '.join(sorted(data))}")

    common = dict(
        model_specs=specs,
        seed=seed,
        features=feature_cfg,
        train_start=parse_date(train_start, "train_start") if train_start else None,
        **kwargs,
    )
    if dates_cfg == "default":
        plan = default_plan(store, unit=unit, burn_in_days=burn_in, horizon_days=horizon, **common)
        if weeks_limit:
            plan.prediction_dates = plan.prediction_dates[: int(weeks_limit)]
    else:
        if isinstance(dates_cfg, dict):
            first = parse_date(dates_cfg.get("first"), "prediction_dates.first")
            last = parse_date(dates_cfg["last"], "prediction_dates.last") if dates_cfg.get("last") else None
            weeks = dates_cfg.get("weeks")
            if weeks is None and last is None:
                raise ConfigError("prediction_dates needs 'weeks' or 'last'")
            dates = weekly_dates(first, weeks=weeks, last=last)
        else:
            dates = [parse_date(d, "prediction_dates") for d in dates_cfg]
        plan = EvaluationPlan(
            prediction_dates=dates, unit=unit, label_horizon_days=horizon, burn_in_days=burn_in, **common
        )
    return plan.validate(store)


def load_plan(path, store):
    return plan_from_dict(load_yaml(path), store)


# ---------------------------------------------------------------------------
# Ranked lists and metrics
# ---------------------------------------------------------------------------


@dataclass
class RankedList:
    """Full ranking of one week's open cases; K is applied at metric time."""

    as_of: date
    model_tag: str
    entries: pd.DataFrame

    @classmethod
    def build(cls, as_of, model_tag, case_ids, scores, cases, labels=None):
        """``cases``: frame with case_id, opened_day and attribute columns."""
        attrs = cases.set_index("case_id").loc[list(case_ids)]
        frame = pd.DataFrame(
            {
                "case_id": list(case_ids),
                "score": np.asarray(scores, dtype=np.float64),
                "opened_day": attrs["opened_day"].to_numpy(dtype=np.int64),
                "municipality": attrs["municipality"].to_numpy(),
                "crime_category": attrs["crime_category"].to_numpy(),
            }
        )
        frame = frame.sort_values(
            ["score", "opened_day", "case_id"], ascending=[False, True, True], kind="mergesort"
        ).reset_index(drop=True)
        frame.insert(1, "rank", np.arange(1, len(frame) + 1))
        ranked = cls(as_of, model_tag, frame)
        if labels is not None:
            ranked.set_labels(labels)
        return ranked

    def set_labels(self, labels):
        self.entries["label"] = self.entries["case_id"].map(labels).astype("float64")

    @property
    def realized(self):
        return "label" in self.entries and self.entries["label"].notna().all()

    def labels(self):
        if not self.realized:
            raise DataError(f"Ranking {self.model_tag} at {self.as_of} has no realized labels")
        return self.entries["label"].to_numpy(dtype=np.int64)

    def top(self, k):
        return self.entries.iloc[: min(k, len(self.entries))]

    def bottom(self, k):
        return self.entries.iloc[max(0, len(self.entries) - k):]

    def __len__(self):
        return len(self.entries)

    def to_csv(self, path):
        out = self.entries.copy()
        out["opened_at"] = [case_store.from_day(d).isoformat() for d in out["opened_day"]]
        out = out.drop(columns="opened_day")
        out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")

    @classmethod
    def from_csv(cls, path, as_of=None, model_tag=None):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Ranked list not found: {path}")
        frame = pd.read_csv(path, dtype={"case_id": str})
        missing = {"case_id", "rank", "score"} - set(frame.columns)
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(sorted(missing))}")
        if "opened_at" in frame:
            frame["opened_day"] = [date.fromisoformat(d).toordinal() for d in frame["opened_at"]]
            frame = frame.drop(columns="opened_at")
        frame = frame.sort_values("rank", kind="mergesort").reset_index(drop=True)
        if as_of is None:
            stem = path.stem.split("__")[0]
            try:
                as_of = date.fromisoformat(stem)
            except ValueError:
                as_of = None
        return cls(as_of, model_tag or path.stem, frame)


def ranking_metrics(ranked, k):
    labels = ranked.labels()
    n = len(labels)
    used = min(k, n)
    positives = int(labels.sum())
    hits = int(labels[:used].sum())
    return {
        "precision_at_k": hits / used if used else 0.0,
        "recall_at_k": hits / positives if positives else 0.0,
        "k_used": used,
        "shortfall": used < k,
        "no_positives": positives == 0,
        "positives": positives,
        "n_scored": n,
    }


def precision_at_k(ranked, k):
    m = ranking_metrics(ranked, k)
    if m["shortfall"]:
        logger.warning("%s at %s: only %d cases for K=%d", ranked.model_tag, ranked.as_of, m["k_used"], k)
    return m["precision_at_k"]


def recall_at_k(ranked, k):
    m = ranking_metrics(ranked, k)
    if m["no_positives"]:
        logger.warning("%s at %s: no positives, recall reported as 0", ranked.model_tag, ranked.as_of)
    return m["recall_at_k"]


# ---------------------------------------------------------------------------
# Plan runner
# ---------------------------------------------------------------------------


@dataclass
class EvaluationResults:
    plan: EvaluationPlan
    rankings: dict = field(default_factory=dict)
    metrics: pd.DataFrame = None
    importances: dict = field(default_factory=dict)
    specs: dict = field(default_factory=dict)
    feature_names: list = field(default_factory=list)

    def tags(self):
        return list(self.specs) + ([EMPIRICAL_TAG] if self.plan.include_empirical else [])

    def family_of_tag(self, tag):
        return EMPIRICAL_TAG if tag == EMPIRICAL_TAG else self.specs[tag].family

    def ranking(self, as_of, tag):
        return self.rankings[(as_of, tag)]


def training_snapshot_dates(plan, t, earliest):
    """Snapshot grid every ``train_stride_days`` back from the first date minus the horizon."""
    anchor = to_day(plan.prediction_dates[0]) - plan.label_horizon_days
    latest_ok = to_day(t) - plan.label_horizon_days
    stride = plan.train_stride_days
    # largest grid point <= latest_ok
    latest = anchor + ((latest_ok - anchor) // stride) * stride
    floor = to_day(earliest)
    if plan.train_start is not None:
        floor = max(floor, to_day(plan.train_start))
    out = []
    s = latest
    while s >= floor and (plan.max_train_snapshots is None or len(out) < plan.max_train_snapshots):
        out.append(s)
        s -= stride
    return [case_store.from_day(s) for s in reversed(out)]


def _snapshot(store, s, plan, extractor, cache):
    key = ("snapshot", to_day(s))
    if key in cache:
        return cache[key]
    labels = finalization_labels(store, s, plan.label_horizon_days)
    X = extractor.frame(store, labels.index, s)
    cache[key] = (X, labels.to_numpy())
    return cache[key]


def build_training_set(store, t, plan, extractor=None, cache=None):
    """Office-wide training rows from snapshots with fully observed labels."""
    cache = {} if cache is None else cache
    extractor = extractor or FeatureExtractor(plan.features, crime_vocabulary(store, plan.prediction_dates[0], plan.features.crime_vocab_size))
    if store.start_date is None:
        raise DataError("Cannot train on an empty store")
    dates = training_snapshot_dates(plan, t, store.start_date)
    parts = [_snapshot(store, s, plan, extractor, cache) for s in dates]
    keep = {("snapshot", to_day(s)) for s in dates}
    oldest = min((to_day(s) for s in dates), default=None)
    for key in [k for k in cache if k[0] == "snapshot" and k not in keep and oldest is not None and k[1] < oldest]:
        del cache[key]
    parts = [p for p in parts if len(p[0])]
    if not parts:
        raise DataError(f"No training snapshots available before {t}")
    X = pd.concat([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    logger.debug("Training set at %s: %d rows from %d snapshots", t, len(y), len(parts))
    return X, y


def run_plan(store, plan, cache=None):
    plan.validate(store)
    cache = {} if cache is None else cache
    vocabulary = crime_vocabulary(store, plan.prediction_dates[0], plan.features.crime_vocab_size)
    extractor = FeatureExtractor(plan.features, vocabulary)
    specs = plan.all_specs()
    results = EvaluationResults(plan=plan, specs={s.tag: s for s in specs})
    results.feature_names = extractor.feature_names(vocabulary)
    rows = []
    fitted = {}

    for week, t in enumerate(plan.prediction_dates):
        ids = sorted(case_store.open_cases(store, plan.unit, t))
        labels = finalization_labels(store, t, plan.label_horizon_days, plan.unit)
        X_t = extractor.frame(store, ids, t)
        if len(ids) < plan.k_top:
            logger.warning("%s: %d open %s cases, fewer than K=%d", t, len(ids), plan.unit, plan.k_top)

        if week % plan.refit_every_weeks == 0 or not fitted:
            trainable = [s for s in specs if s.family != "dummy"]
            X_train, y_train = build_training_set(store, t, plan, extractor, cache) if trainable else (None, None)
            for spec in specs:
                try:
                    if spec.family == "dummy":
                        fitted[spec.tag] = models.fit_frame(
                            "dummy", spec.params, X_t, np.zeros(len(X_t)), seed=spec.seed, trained_through=t
                        )
                    else:
                        fitted[spec.tag] = models.fit_frame(
                            spec.family,
                            spec.params,
                            X_train,
                            y_train,
                            seed=spec.seed,
                            trained_through=t - timedelta(days=plan.label_horizon_days),
                            n_jobs=plan.n_jobs if plan.n_jobs is not None else N_JOBS,
                        )
                except SingleClassError as e:
                    logger.warning("%s at %s: %s", spec.tag, t, e)
                    fitted.pop(spec.tag, None)

        scored = {}
        for spec in specs:
            model = fitted.get(spec.tag)
            if model is None:
                continue
            if spec.family == "dummy":
                # fresh draws every week, reproducible from the spec seed
                draws = models.DummyModel(derive_seed(spec.seed, t.isoformat())).predict_proba(X_t)
                scored[spec.tag] = draws
            else:
                scored[spec.tag] = models.score_frame(model, X_t)
            results.importances[(t, spec.tag)] = model.importances
        if plan.include_empirical:
            table = baseline.build_table(
                store, t, plan.prior_strength, plan.label_horizon_days, plan.train_stride_days, cache=cache
            )
            categories = store.cases.set_index("case_id").loc[ids, "crime_category"] if ids else []
            scored[EMPIRICAL_TAG] = np.asarray(baseline.score_categories(table, categories), dtype=np.float64)

        for tag, scores in scored.items():
            ranked = RankedList.build(t, tag, ids, scores, store.cases, labels)
            results.rankings[(t, tag)] = ranked
            m = ranking_metrics(ranked, plan.k_top)
            rows.append(
                {
                    "as_of": t.isoformat(),
                    "model_tag": tag,
                    "family": results.family_of_tag(tag),
                    **m,
                    "positive_rate": m["positives"] / m["n_scored"] if m["n_scored"] else 0.0,
                }
            )
        logger.info("Week %d/%d (%s): %d open cases scored by %d models", week + 1, len(plan.prediction_dates), t, len(ids), len(scored))

    results.metrics = pd.DataFrame(
        rows,
        columns=[
            "as_of",
            "model_tag",
            "family",
            "precision_at_k",
            "recall_at_k",
            "k_used",
            "shortfall",
            "no_positives",
            "positives",
            "n_scored",
            "positive_rate",
        ],
    )
    return results


# ---------------------------------------------------------------------------
# Model selection and diagnostics
# ---------------------------------------------------------------------------


def mean_metrics(results):
    m = results.metrics
    summary = (
        m.groupby(["model_tag", "family"], sort=False)
        .agg(
            mean_precision_at_k=("precision_at_k", "mean"),
            sd_precision_at_k=("precision_at_k", "std"),
            mean_recall_at_k=("recall_at_k", "mean"),
            weeks=("as_of", "nunique"),
        )
        .reset_index()
    )
    return summary


def _ranked_specs(results, family):
    summary = mean_metrics(results)
    order = {tag: i for i, tag in enumerate(results.specs)}
    rows = summary[summary["family"] == family]
    candidates = [(r.mean_precision_at_k, results.specs[r.model_tag]) for r in rows.itertuples() if r.model_tag in results.specs]
    return sorted(candidates, key=lambda c: (-c[0], c[1].simplicity_key(), order[c[1].tag]))


def select_best_per_family(results):
    """Family -> spec with the highest mean Precision@K; ties go to the simpler spec."""
    best = {}
    for family in dict.fromkeys(s.family for s in results.specs.values()):
        ranked = _ranked_specs(results, family)
        if ranked:
            best[family] = ranked[0][1]
    return best


def top_specs_per_family(results, family, n=3):
    return [spec for _, spec in _ranked_specs(results, family)[:n]]


def subgroup_table(ranked, grouping, k, min_support=20, flagged=None):
    """Exposure and within-top-K precision/recall for each group of one ranking."""
    if grouping not in ("municipality", "crime_category"):
        raise ConfigError(f"Unknown grouping {grouping!r}")
    entries = ranked.entries
    labels = ranked.labels()
    n = len(entries)
    used = min(k, n)
    in_top = np.arange(n) < used
    groups = entries[grouping].to_numpy()
    flagged_set = set(flagged) if flagged is not None else None
    rows = []
    for g in sorted(set(groups)):
        member = groups == g
        top_g = member & in_top
        pos_g = int(labels[member].sum())
        hits = int(labels[top_g].sum())
        row = {
            "group": g,
            "support": int(member.sum()),
            "top_count": int(top_g.sum()),
            "share_scored": member.sum() / n if n else 0.0,
            "share_top": top_g.sum() / used if used else 0.0,
            "precision_at_k": hits / top_g.sum() if top_g.sum() else np.nan,
            "recall_at_k": hits / pos_g if pos_g else 0.0,
            "no_positives": pos_g == 0,
            "low_support": member.sum() < min_support,
        }
        row["exposure"] = row["share_top"] - row["share_scored"]
        if flagged_set is not None:
            ids = entries["case_id"].to_numpy()
            n_flagged = len(flagged_set)
            row["flag_share"] = sum(1 for c in ids[member] if c in flagged_set) / n_flagged if n_flagged else 0.0
        rows.append(row)
    return pd.DataFrame(rows)


def subgroup_diagnostics(results, grouping, model_tag=None, k=None, min_support=None, flags=None):
    """Per (model, group) means across weeks, with parity against the largest group.

    ``flags`` maps (as_of, model_tag) to flagged case ids when prescription
    shares should be included.
    """
    k = k or results.plan.k_top
    min_support = results.plan.min_support if min_support is None else min_support
    frames = []
    for (t, tag), ranked in sorted(results.rankings.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if model_tag is not None and tag != model_tag:
            continue
        flagged = flags.get((t, tag)) if flags is not None else None
        table = subgroup_table(ranked, grouping, k, min_support, flagged)
        table.insert(0, "model_tag", tag)
        table.insert(0, "as_of", t.isoformat())
        frames.append(table)
    if not frames:
        return pd.DataFrame()
    detail = pd.concat(frames, ignore_index=True)
    agg = {
        "support": ("support", "mean"),
        "share_scored": ("share_scored", "mean"),
        "share_top": ("share_top", "mean"),
        "exposure": ("exposure", "mean"),
        "precision_at_k": ("precision_at_k", "mean"),
        "recall_at_k": ("recall_at_k", "mean"),
        "weeks": ("as_of", "nunique"),
    }
    if "flag_share" in detail:
        agg["flag_share"] = ("flag_share", "mean")
    summary = detail.groupby(["model_tag", "group"], sort=True).agg(**agg).reset_index()
    summary["low_support"] = summary["support"] < min_support
    parts = []
    for tag, part in summary.groupby("model_tag", sort=False):
        part = part.copy()
        ref = part.sort_values(["support", "group"], ascending=[False, True]).iloc[0]
        part["reference_group"] = ref["group"]
        part["precision_ratio"] = part["precision_at_k"] / ref["precision_at_k"] if ref["precision_at_k"] else np.nan
        part["exposure_diff"] = part["exposure"] - ref["exposure"]
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def grouped_importance(results, mapping=group_of, model_tag=None):
    """Long frame of importance per group, per date and averaged over dates."""
    rows = []
    for (t, tag), imp in sorted(results.importances.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if model_tag is not None and tag != model_tag:
            continue
        for g, v in models.importance_by_group(imp, mapping).items():
            rows.append({"as_of": t.isoformat(), "model_tag": tag, "group": g, "importance": v})
    frame = pd.DataFrame(rows, columns=["as_of", "model_tag", "group", "importance"])
    if frame.empty:
        return frame
    mean = frame.groupby(["model_tag", "group"], sort=True)["importance"].mean().reset_index()
    mean.insert(0, "as_of", "mean")
    return pd.concat([frame, mean], ignore_index=True)


def mean_importances(results, model_tag):
    per_date = [imp for (t, tag), imp in results.importances.items() if tag == model_tag]
    if not per_date:
        return {}
    names = list(per_date[0])
    mean = np.mean([[imp[n] for n in names] for imp in per_date], axis=0)
    return dict(zip(names, mean / mean.sum()))


def slug(tag):
    return re.sub(r"[^A-Za-z0-9]+", "_", tag).strip("_")


def best_models_table(results):
    """Best spec per family plus the baselines."""
    summary = mean_metrics(results).set_index("model_tag")
    best = select_best_per_family(results)
    rows = []
    for family, spec in best.items():
        r = summary.loc[spec.tag]
        rows.append((family, spec.tag, r))
    if results.plan.include_empirical and EMPIRICAL_TAG in summary.index:
        rows.append((EMPIRICAL_TAG, EMPIRICAL_TAG, summary.loc[EMPIRICAL_TAG]))
    out = pd.DataFrame(
        [
            {
                "family": family,
                "model_tag": tag,
                "mean_precision_at_k": r["mean_precision_at_k"],
                "sd_precision_at_k": r["sd_precision_at_k"],
                "mean_recall_at_k": r["mean_recall_at_k"],
                "weeks": int(r["weeks"]),
            }
            for family, tag, r in rows
        ]
    )
    return out.sort_values(["mean_precision_at_k", "family"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def write_results(results, out_dir):
    """Write every evaluate artifact; returns the written paths."""
    out_dir = Path(out_dir)
    ranked_dir = out_dir / "ranked"
    ranked_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def csv(frame, name):
        path = out_dir / name
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        written.append(path)

    csv(results.metrics, "metrics_by_week.csv")
    for (t, tag), ranked in sorted(results.rankings.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        path = ranked_dir / f"{t.isoformat()}__{slug(tag)}.csv"
        ranked.to_csv(path)
        written.append(path)
    best = best_models_table(results)
    csv(best, "best_models.csv")
    best_tags = list(best["model_tag"])
    model_tags = [t for t in best_tags if t != EMPIRICAL_TAG]
    frames = [grouped_importance(results, group_of, tag) for tag in model_tags]
    csv(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(), "grouped_importance.csv")
    frames = [grouped_importance(results, family_of, tag) for tag in model_tags]
    csv(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(), "family_importance.csv")
    tops = []
    for tag in model_tags:
        imp = mean_importances(results, tag)
        ranked_imp = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))[:20]
        tops += [{"model_tag": tag, "feature": f, "importance": v} for f, v in ranked_imp]
    csv(pd.DataFrame(tops, columns=["model_tag", "feature", "importance"]), "top_features.csv")
    for grouping in ("municipality", "crime_category"):
        frames = [subgroup_diagnostics(results, grouping, tag) for tag in best_tags]
        csv(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(), f"subgroups_{grouping}.csv")
    logger.info("Wrote %d evaluation artifacts to %s", len(written), out_dir)
    return written
