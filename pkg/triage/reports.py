"""Report tables, the Excel workbook and the artifact manifest."""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path

import pandas as pd

from triage.errors import DataError

logger = logging.getLogger(__name__)

# fixed workbook timestamp so report.xlsx is byte-reproducible
WORKBOOK_CREATED = datetime(2000, 1, 1)
MANIFEST_NAME = "manifest.json"


def _read(path, required=True):
    path = Path(path)
    if not path.exists():
        if required:
            raise DataError(f"Missing results file: {path}")
        return None
    frame = pd.read_csv(path)
    if required and frame.empty:
        raise DataError(f"Results file is empty: {path}")
    return frame


def _write_csv(frame, path, written):
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    written.append(Path(path))


def report_tables(results_dir, out_dir=None, rule="mean"):
    """Summary tables from an evaluate directory, plus prescription tables when present."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    best = _read(results_dir / "best_models.csv")
    metrics = _read(results_dir / "metrics_by_week.csv")
    prescription = _read(results_dir / "prescription_by_week.csv", required=False)
    written = []
    sheets = {}

    summary = best.loc[:, ["family", "model_tag", "mean_precision_at_k", "mean_recall_at_k", "weeks"]]
    _write_csv(summary, out_dir / "model_summary.csv", written)
    sheets["Models"] = summary

    tags = list(best["model_tag"])
    weekly = metrics[metrics["model_tag"].isin(tags)]
    precision = weekly.pivot(index="as_of", columns="model_tag", values="precision_at_k").reset_index()
    precision = precision.loc[:, ["as_of"] + [t for t in tags if t in precision.columns]]
    _write_csv(precision, out_dir / "precision_by_week.csv", written)
    sheets["Precision by week"] = precision

    if prescription is not None and not prescription.empty:
        pres = prescription[prescription["model_tag"].isin(tags)]
        family = dict(zip(best["model_tag"], best["family"]))
        chosen = pres[pres["rule"] == rule]
        pres_summary = (
            chosen.groupby("model_tag", sort=False)
            .agg(mean_flagged=("flagged", "mean"), mean_bottom_n=("bottom_n", "mean"), weeks=("as_of", "nunique"))
            .reindex([t for t in tags if t in set(chosen["model_tag"])])
            .reset_index()
        )
        pres_summary.insert(1, "family", pres_summary["model_tag"].map(family))
        pres_summary["share_pct"] = 100.0 * pres_summary["mean_flagged"] / pres_summary["mean_bottom_n"]
        pres_summary["rule"] = rule
        _write_csv(pres_summary, out_dir / "prescription_summary.csv", written)
        sheets["Prescription"] = pres_summary

        by_rule = pres.groupby(["model_tag", "rule"])["flagged"].mean().unstack("rule")
        by_rule = by_rule.reindex(columns=["min", "mean", "max"]).reindex([t for t in tags if t in by_rule.index])
        by_rule = by_rule.reset_index()
        _write_csv(by_rule, out_dir / "prescription_by_rule.csv", written)
        sheets["Prescription by rule"] = by_rule

        share = chosen.pivot(index="as_of", columns="model_tag", values="share").reset_index()
        _write_csv(share, out_dir / "prescription_share_by_week.csv", written)
        sheets["Prescription by week"] = share

    xlsx = out_dir / "report.xlsx"
    with pd.ExcelWriter(xlsx, engine="xlsxwriter") as writer:
        writer.book.set_properties({"title": "Case triage evaluation", "created": WORKBOOK_CREATED})
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name, index=False)
            worksheet = writer.sheets[name]
            for i, col in enumerate(frame.columns):
                max_len = max(frame[col].astype(str).map(len).max() if len(frame) else 0, len(str(col))) + 2
                worksheet.set_column(i, i, min(max_len, 50))
    written.append(xlsx)
    logger.info("Wrote %d report tables to %s", len(written), out_dir)
    return written


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, paths, status="ok", failed_stage=None, error=None):
    """manifest.json: every written file with its size and SHA-256, sorted by path."""
    out_dir = Path(out_dir)
    entries = []
    for p in sorted({Path(p).resolve() for p in paths if Path(p).exists()}):
        rel = p.relative_to(out_dir.resolve()).as_posix()
        if rel == MANIFEST_NAME:
            continue
        entries.append({"path": rel, "bytes": p.stat().st_size, "sha256": file_sha256(p)})
    manifest = {"status": status, "files": entries}
    if failed_stage is not None:
        manifest["failed_stage"] = failed_stage
        manifest["error"] = error
    path = out_dir / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path, manifest
