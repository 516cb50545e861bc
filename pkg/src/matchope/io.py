"""Serialization: JSONL logged datasets and delimited experiment reports.

Floats are serialized with 17 significant digits so that export -> parse ->
export is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ContextSet, LoggedDataset, ValidationError

REPORT_COLUMNS = (
    "axis",
    "axis_value",
    "estimator",
    "mse",
    "squared_bias",
    "variance",
    "error_rate",
    "mean_estimate",
    "true_value",
    "n_reps",
    "se_mse",
)


def fmt_float(x: float) -> str:
    return f"{float(x):.17g}"


def export_logged_data(
    dataset: LoggedDataset,
    path: str | Path,
    contexts: ContextSet | None = None,
) -> None:
    """One JSON record per line; features included when contexts are given."""
    path = Path(path)
    lines = []
    for c in range(dataset.n_companies):
        j = int(dataset.chosen_seeker[c])
        rec = {
            "company_id": c,
            "seeker_id": j,
            "s": int(dataset.s[c]),
            "r": int(dataset.r[c]),
            "logging_prob": float(dataset.logging_prob[c]),
        }
        if contexts is not None:
            rec["company_features"] = contexts.company_contexts[c].tolist()
            rec["seeker_features"] = contexts.seeker_contexts[j].tolist()
        lines.append(
            json.dumps(rec, separators=(",", ":"))
        )
    path.write_text("\n".join(lines) + "\n")


def ingest_logged_data(
    path: str | Path, n_seekers: int | None = None
) -> tuple[LoggedDataset, dict | None]:
    """Parse a JSONL log into a LoggedDataset plus any feature table.

    One record per company; ``m`` is computed as ``s * r``. A missing
    ``logging_prob`` on any record flags the dataset as requiring propensity
    estimation (returned in the feature-table dict under
    ``needs_propensity_estimation``). ``n_seekers`` defaults to
    ``max(seeker_id) + 1`` since the line format carries no global header.
    """
    path = Path(path)
    records = []
    company_feats: dict[int, list] = {}
    seeker_feats: dict[int, list] = {}
    missing_prob = False
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON ({exc})") from exc
            try:
                cid = int(rec["company_id"])
                jid = int(rec["seeker_id"])
                s = int(rec["s"])
                r = int(rec["r"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"line {lineno}: missing or bad field ({exc})") from exc
            if s not in (0, 1) or r not in (0, 1):
                raise ValidationError(f"line {lineno}: s and r must be 0 or 1")
            if s == 0 and r == 1:
                raise ValidationError(
                    f"line {lineno}: s=0 with r=1 violates the m = s*r invariant"
                )
            prob = rec.get("logging_prob")
            if prob is None:
                missing_prob = True
            elif not 0.0 < float(prob) <= 1.0:
                raise ValidationError(f"line {lineno}: logging_prob must lie in (0, 1]")
            if "company_features" in rec:
                company_feats[cid] = rec["company_features"]
            if "seeker_features" in rec:
                seeker_feats[jid] = rec["seeker_features"]
            records.append((cid, jid, s, r, float(prob) if prob is not None else np.nan))
    if not records:
        raise ValidationError("no records")
    records.sort(key=lambda t: t[0])
    ids = [t[0] for t in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate company_id; expected one record per company")
    chosen = np.array([t[1] for t in records], dtype=np.int64)
    s_arr = np.array([t[2] for t in records], dtype=np.int64)
    r_arr = np.array([t[3] for t in records], dtype=np.int64)
    probs = np.array([t[4] for t in records])
    if n_seekers is None:
        n_seekers = int(chosen.max()) + 1
    if missing_prob:
        # Placeholder propensities; estimators must use propensity_source
        # 'estimated' for such datasets.
        probs = np.where(np.isnan(probs), 1.0, probs)
    dataset = LoggedDataset(
        chosen_seeker=chosen,
        s=s_arr,
        r=r_arr,
        m=s_arr * r_arr,
        logging_prob=probs,
        n_seekers=max(n_seekers, 2),
    )
    table = {
        "company_features": company_feats,
        "seeker_features": seeker_feats,
        "needs_propensity_estimation": missing_prob,
        "company_ids": ids,
    }
    return dataset, table


def _row_values(row) -> list:
    return [
        row.axis,
        fmt_float(row.axis_value),
        row.estimator,
        fmt_float(row.mse),
        fmt_float(row.squared_bias),
        fmt_float(row.variance),
        fmt_float(row.error_rate),
        fmt_float(row.mean_estimate),
        fmt_float(row.true_value),
        str(int(row.n_reps)),
        fmt_float(row.se_mse),
    ]


def export_report(report, path: str | Path, fmt: str = "csv") -> None:
    """Write an ExperimentReport in the fixed 11-column schema."""
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in report.rows:
            lines.append(",".join(_row_values(row)))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "json":
        chunks = []
        for row in report.rows:
            vals = _row_values(row)
            fields = []
            for col, val in zip(REPORT_COLUMNS, vals):
                if col in ("axis", "estimator"):
                    fields.append(f'"{col}":{json.dumps(val)}')
                else:
                    fields.append(f'"{col}":{val}')
            chunks.append("{" + ",".join(fields) + "}")
        path.write_text('{"rows":[' + ",".join(chunks) + "]}\n")
    else:
        raise ValidationError(f"unknown report format {fmt!r}")


def load_report(path: str | Path):
    """Parse a CSV report back into an ExperimentReport."""
    from .harness import ExperimentReport, SweepRow

    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != ",".join(REPORT_COLUMNS):
        raise ValidationError("unrecognized report header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(REPORT_COLUMNS):
            raise ValidationError(f"expected {len(REPORT_COLUMNS)} columns")
        rows.append(
            SweepRow(
                axis=parts[0],
                axis_value=float(parts[1]),
                estimator=parts[2],
                mse=float(parts[3]),
                squared_bias=float(parts[4]),
                variance=float(parts[5]),
                error_rate=float(parts[6]),
                mean_estimate=float(parts[7]),
                true_value=float(parts[8]),
                n_reps=int(parts[9]),
                se_mse=float(parts[10]),
            )
        )
    axis = rows[0].axis if rows else ""
    return ExperimentReport(axis=axis, rows=rows)
