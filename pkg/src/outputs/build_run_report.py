# Docstring for src/outputs/build_run_report module
"""
build_run_report.py

Turn adaptation reports, metrics and ablation results into summary DataFrames
and write them to the run directory.

Outputs
-------
- run_report.json    full-fidelity RunReport (config echo, rows, final metrics)
- epochs.csv         one row per epoch, fixed columns (EPOCH_COLUMNS)
- metrics.json       Metrics of one expert pair on one dataset
- ablation.csv       one row per loss-toggle row
- ablation_runs.csv  one row per (row, gamma, seed) run

Public API
----------
- build_epoch_frame(report) -> pd.DataFrame
- write_run_outputs(report, out_dir, *, digest) -> dict[str, Path]
- read_run_report(path) -> RunReport
- write_metrics(metrics, output_path, *, seed, digest, extra=None) -> Path
- write_ablation_outputs(result, out_dir, *, seed, digest) -> dict[str, Path]
- read_epoch_csv(path) -> pd.DataFrame
"""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
from jsonschema import Draft202012Validator
from jsonschema.exceptions import ValidationError

from ..config import ABLATION_CSV_FILE, ABLATION_RUNS_CSV_FILE, EPOCHS_CSV_FILE, RUN_REPORT_FILE
from ..engines.bench import AblationResult, Metrics
from ..engines.rain import EPOCH_COLUMNS, EpochMetrics, RunReport
from .export_utils import write_df_csv, write_json


def build_epoch_frame(report: RunReport) -> pd.DataFrame:
    frame = pd.DataFrame([row.to_dict() for row in report.rows], columns=list(EPOCH_COLUMNS))
    int_cols = ["epoch", "n_pseudo", "n_complex"]
    frame[int_cols] = frame[int_cols].astype("int64")
    return frame


def write_run_outputs(report: RunReport, out_dir: Path | str, *, digest: str) -> dict[str, Path]:
    out = Path(out_dir)
    document = {"config_digest": digest, **report.to_dict()}
    return {
        "report": write_json(document, out / RUN_REPORT_FILE),
        "epochs": write_df_csv(build_epoch_frame(report), out / EPOCHS_CSV_FILE, seed=report.seed, digest=digest),
    }


RUN_REPORT_SCHEMA: dict[str, object] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config_digest", "seed", "config", "rows", "final_metrics", "frozen_checksums"],
    "additionalProperties": False,
    "properties": {
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "seed": {"type": "integer", "minimum": 0},
        "config": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(EPOCH_COLUMNS),
                "additionalProperties": False,
                "properties": {name: {"type": ["number", "null"]} for name in EPOCH_COLUMNS},
            },
        },
        "final_metrics": {"type": ["object", "null"]},
        "frozen_checksums": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

_REPORT_VALIDATOR = Draft202012Validator(RUN_REPORT_SCHEMA)


def read_run_report(path: Path | str) -> RunReport:

    """

    Load a run_report.json written by write_run_outputs.

    Nulls in the rows read back as NaN; the config echo is returned as written
    and parses back through load_data.parse_config_text.

    Raises:
        FileNotFoundError: missing file (message names the expected path).
        ValueError: invalid JSON or schema violation.

    """

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Run report not found at: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        _REPORT_VALIDATOR.validate(document)
    except json.JSONDecodeError as exc:
        raise ValueError(f"Run report {path} is not valid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ValueError(f"Run report {path} failed schema validation: {exc.message}") from exc

    final = document["final_metrics"]
    return RunReport(
        seed=int(document["seed"]),
        config=document["config"],
        rows=[EpochMetrics.from_dict(row) for row in document["rows"]],
        final_metrics=None if final is None else Metrics.from_dict(final),
        frozen_checksums=dict(document["frozen_checksums"]),
    )


def write_metrics(
    metrics: Metrics,
    output_path: Path | str,
    *,
    seed: int,
    digest: str,
    extra: dict[str, object] | None = None,
) -> Path:
    document = {"seed": int(seed), "config_digest": digest, **(extra or {}), "metrics": metrics.to_dict()}
    return write_json(document, output_path)


def write_ablation_outputs(result: AblationResult, out_dir: Path | str, *, seed: int, digest: str) -> dict[str, Path]:
    out = Path(out_dir)
    return {
        "ablation": write_df_csv(result.table, out / ABLATION_CSV_FILE, seed=seed, digest=digest),
        "ablation_runs": write_df_csv(result.runs, out / ABLATION_RUNS_CSV_FILE, seed=seed, digest=digest),
    }


def read_epoch_csv(path: Path | str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Epoch CSV not found at: {path}")
    return pd.read_csv(path, comment="#", float_precision="round_trip")
