from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from src import cli
from src.config import (
    ABLATION_CSV_FILE,
    ABLATION_RUNS_CSV_FILE,
    ADAPTED_PROMPT_CHECKPOINT_FILE,
    ADAPTED_SOURCE_CHECKPOINT_FILE,
    DOMAIN_TRUTH_FILE,
    EPOCHS_CSV_FILE,
    FEATURES_CSV_FILE,
    METRICS_FILE,
    PROMPT_CHECKPOINT_FILE,
    RUN_REPORT_FILE,
    SOURCE_CHECKPOINT_FILE,
    SOURCE_DATASET_FILE,
    TARGET_DATASET_FILE,
)
from src.core.load_data import parse_config, parse_config_text
from src.engines.rain import EPOCH_COLUMNS
from src.outputs.build_run_report import read_epoch_csv, read_run_report, write_run_outputs
from src.outputs.export_utils import read_provenance

TINY_CONFIG = """\
samples_per_domain: 120
pretrain_max_epochs: 60
epochs: 2
init_epochs: 1
batch_size: 32
ablation_seeds: [0]
log_level: WARNING
"""


def _write_config(tmp_path: Path, text: str = TINY_CONFIG) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def _run(command: str, config: Path, out: Path, *extra: str, seed: int = 3) -> int:
    return cli.main([command, "--config", str(config), "--out", str(out), "--seed", str(seed), *extra])


@pytest.fixture
def pretrained_run(tmp_path: Path) -> tuple[Path, Path]:
    config = _write_config(tmp_path)
    out = tmp_path / "run"
    assert _run("generate", config, out) == cli.EXIT_OK
    assert _run("pretrain", config, out) == cli.EXIT_OK
    return config, out


def test_generate_writes_domains_with_provenance(tmp_path: Path) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "run"

    assert _run("generate", config, out) == cli.EXIT_OK

    for name in (SOURCE_DATASET_FILE, TARGET_DATASET_FILE, DOMAIN_TRUTH_FILE):
        assert (out / name).exists()
    provenance = read_provenance(out / SOURCE_DATASET_FILE)
    assert provenance["seed"] == "3"
    assert len(provenance["config_digest"]) == 16
    truth = json.loads((out / DOMAIN_TRUTH_FILE).read_text(encoding="utf-8"))
    assert truth["config_digest"] == provenance["config_digest"]


def test_generate_is_byte_identical_across_runs(tmp_path: Path) -> None:
    config = _write_config(tmp_path)
    assert _run("generate", config, tmp_path / "a") == cli.EXIT_OK
    assert _run("generate", config, tmp_path / "b") == cli.EXIT_OK

    for name in (SOURCE_DATASET_FILE, TARGET_DATASET_FILE, DOMAIN_TRUTH_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pretrain_writes_both_checkpoints(pretrained_run: tuple[Path, Path]) -> None:
    _, out = pretrained_run
    assert (out / SOURCE_CHECKPOINT_FILE).exists()
    assert (out / PROMPT_CHECKPOINT_FILE).exists()


def test_adapt_writes_report_epochs_and_adapted_checkpoints(pretrained_run: tuple[Path, Path]) -> None:
    config, out = pretrained_run

    assert _run("adapt", config, out) == cli.EXIT_OK

    for name in (RUN_REPORT_FILE, EPOCHS_CSV_FILE, ADAPTED_SOURCE_CHECKPOINT_FILE, ADAPTED_PROMPT_CHECKPOINT_FILE):
        assert (out / name).exists()
    epochs = read_epoch_csv(out / EPOCHS_CSV_FILE)
    assert list(epochs.columns) == list(EPOCH_COLUMNS)
    assert epochs["epoch"].tolist() == [0, 1, 2]
    report = json.loads((out / RUN_REPORT_FILE).read_text(encoding="utf-8"))
    assert report["seed"] == 3
    assert len(report["rows"]) == 3


def test_run_report_reads_back_and_its_config_reparses(tmp_path: Path, pretrained_run: tuple[Path, Path]) -> None:
    config, out = pretrained_run
    assert _run("adapt", config, out) == cli.EXIT_OK

    report = read_run_report(out / RUN_REPORT_FILE)
    digest = json.loads((out / RUN_REPORT_FILE).read_text(encoding="utf-8"))["config_digest"]
    write_run_outputs(report, tmp_path / "copy", digest=digest)

    assert (tmp_path / "copy" / RUN_REPORT_FILE).read_bytes() == (out / RUN_REPORT_FILE).read_bytes()
    assert (tmp_path / "copy" / EPOCHS_CSV_FILE).read_bytes() == (out / EPOCHS_CSV_FILE).read_bytes()
    assert report.final_metrics is not None
    assert np.isnan(report.rows[0].loss_mi_adapter_side)

    reparsed = parse_config_text(yaml.safe_dump(report.config))
    assert reparsed.echo() == parse_config(config, overrides={"seed": 3}).echo()
    assert reparsed.echo() == report.config


def test_run_report_reader_rejects_bad_documents(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError, match="Run report not found at:"):
        read_run_report(tmp_path / RUN_REPORT_FILE)

    broken = tmp_path / "broken.json"
    broken.write_text('{"seed": 1}', encoding="utf-8")
    with pytest.raises(ValueError, match="schema validation"):
        read_run_report(broken)


def test_adapt_is_byte_identical_across_runs(pretrained_run: tuple[Path, Path]) -> None:
    config, out = pretrained_run

    assert _run("adapt", config, out) == cli.EXIT_OK
    first = {name: (out / name).read_bytes() for name in (RUN_REPORT_FILE, EPOCHS_CSV_FILE, ADAPTED_SOURCE_CHECKPOINT_FILE)}
    assert _run("adapt", config, out) == cli.EXIT_OK

    for name, payload in first.items():
        assert (out / name).read_bytes() == payload


def test_adapt_with_zero_epochs_reports_baseline_only(tmp_path: Path, pretrained_run: tuple[Path, Path]) -> None:
    _, out = pretrained_run
    config = _write_config(tmp_path, TINY_CONFIG.replace("epochs: 2\ninit_epochs: 1", "epochs: 0\ninit_epochs: 0"))

    assert _run("adapt", config, out) == cli.EXIT_OK

    epochs = read_epoch_csv(out / EPOCHS_CSV_FILE)
    assert len(epochs) == 1
    assert epochs["epoch"].tolist() == [0]


def test_eval_scores_pretrained_and_adapted_pairs(pretrained_run: tuple[Path, Path]) -> None:
    config, out = pretrained_run

    assert _run("eval", config, out) == cli.EXIT_OK
    pretrained = json.loads((out / METRICS_FILE).read_text(encoding="utf-8"))
    assert pretrained["pair"] == "pretrained"
    assert pretrained["dataset"] == "target"
    assert 0.0 <= pretrained["metrics"]["acc_consensus"] <= 1.0

    assert _run("adapt", config, out) == cli.EXIT_OK
    assert _run("eval", config, out, "--adapted") == cli.EXIT_OK
    adapted = json.loads((out / METRICS_FILE).read_text(encoding="utf-8"))
    assert adapted["pair"] == "adapted"

    report = json.loads((out / RUN_REPORT_FILE).read_text(encoding="utf-8"))
    assert adapted["metrics"]["acc_consensus"] == report["final_metrics"]["acc_consensus"]


def test_features_export(pretrained_run: tuple[Path, Path]) -> None:
    config, out = pretrained_run

    assert _run("features", config, out) == cli.EXIT_OK

    frame = pd.read_csv(out / FEATURES_CSV_FILE, comment="#")
    assert list(frame.columns[:3]) == ["domain", "view", "label"]
    assert len(frame) == 3 * 120


def test_ablate_writes_both_tables(tmp_path: Path) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "run"

    assert _run("ablate", config, out) == cli.EXIT_OK

    table = pd.read_csv(out / ABLATION_CSV_FILE, comment="#")
    runs = pd.read_csv(out / ABLATION_RUNS_CSV_FILE, comment="#")
    assert table["row"].tolist() == ["none", "mi", "psc", "weisz", "psc+mi", "weisz+mi", "all"]
    assert len(runs) == 7


def test_ablate_none_row_matches_eval_on_pretrained_pair(tmp_path: Path) -> None:
    config = _write_config(tmp_path, TINY_CONFIG.replace("ablation_seeds: [0]", "ablation_seeds: [3]"))
    out = tmp_path / "run"

    for command in ("generate", "pretrain", "eval", "ablate"):
        assert _run(command, config, out, seed=3) == cli.EXIT_OK

    metrics = json.loads((out / METRICS_FILE).read_text(encoding="utf-8"))["metrics"]
    runs = pd.read_csv(out / ABLATION_RUNS_CSV_FILE, comment="#", float_precision="round_trip")
    none = runs[runs["row"] == "none"].iloc[0]
    assert none["acc_consensus"] == metrics["acc_consensus"]
    assert none["acc_source_expert"] == metrics["acc_source_expert"]


def test_missing_prerequisite_exits_with_path(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "empty"

    assert _run("adapt", config, out) == cli.EXIT_ERROR

    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert str(out / TARGET_DATASET_FILE) in err


def test_missing_checkpoint_exits_with_path(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "run"
    assert _run("generate", config, out) == cli.EXIT_OK
    capsys.readouterr()

    assert _run("eval", config, out) == cli.EXIT_ERROR

    assert str(out / SOURCE_CHECKPOINT_FILE) in capsys.readouterr().err


def test_out_of_range_momentum_is_rejected(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = _write_config(tmp_path, TINY_CONFIG + "momentum: 1.5\n")

    assert _run("generate", config, tmp_path / "run") == cli.EXIT_ERROR

    err = capsys.readouterr().err
    assert "momentum" in err
    assert "line 8" in err
    assert not (tmp_path / "run").exists()


def test_unknown_config_key_is_rejected(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = _write_config(tmp_path, "epochs: 2\nlearning_rate: 0.1\n")

    assert _run("generate", config, tmp_path / "run") == cli.EXIT_ERROR

    assert "key 'learning_rate' (line 2)" in capsys.readouterr().err


def test_log_file_key_writes_json_lines(tmp_path: Path) -> None:
    log_path = tmp_path / "logs" / "generate.jsonl"
    text = TINY_CONFIG.replace("log_level: WARNING", f"log_level: INFO\nlog_file: {log_path.as_posix()}")
    config = _write_config(tmp_path, text)

    assert _run("generate", config, tmp_path / "run") == cli.EXIT_OK

    records = [json.loads(line) for line in log_path.read_text(encoding="utf-8").splitlines()]
    generated = [r for r in records if r["message"] == "Generated benchmark domains"]
    assert len(generated) == 1
    assert generated[0]["level"] == "INFO"
    assert generated[0]["seed"] == 3


def test_seed_flag_must_be_unsigned() -> None:
    with pytest.raises(SystemExit):
        cli.main(["generate", "--seed", "-1"])
