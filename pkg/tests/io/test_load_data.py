from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.config import BenchmarkConfig, RunConfig
from src.core.generate_domains import SOURCE, TARGET, Dataset, generate_benchmark
from src.core.load_data import load_dataset, load_domain_truth, parse_config, parse_config_text
from src.core.validators import ConfigParseError
from src.outputs.export_utils import read_provenance, write_dataset_csv, write_json


def test_empty_config_gives_defaults() -> None:
    assert parse_config_text("") == RunConfig()
    assert parse_config(None) == RunConfig()


def test_config_values_and_overrides_apply() -> None:
    text = "epochs: 5\nlr_adapter: 0.2\nablation_seeds: [3, 4]\nloss_mi: false\n"

    cfg = parse_config_text(text, overrides={"seed": 9})

    assert cfg.epochs == 5
    assert cfg.lr_adapter == 0.2
    assert cfg.ablation_seeds == (3, 4)
    assert cfg.loss_mi is False
    assert cfg.seed == 9


def test_integers_are_accepted_for_reals() -> None:
    cfg = parse_config_text("temperature: 1\n")
    assert cfg.temperature == 1.0
    assert isinstance(cfg.temperature, float)


def test_exponent_floats_without_a_dot_are_numbers() -> None:
    cfg = parse_config_text("lr_prompt: 1e-2\nshift_norm: 1.5E+1\nlr_adapter: 2e-1\n")
    assert cfg.lr_prompt == 0.01
    assert cfg.shift_norm == 15.0
    assert cfg.lr_adapter == 0.2

    with pytest.raises(ConfigParseError, match=r"key 'epochs' \(line 1\).*integer"):
        parse_config_text("epochs: 1e2\n")
    assert parse_config_text("log_file: 1e2x\n").log_file == "1e2x"


def test_unknown_key_names_key_and_line() -> None:
    with pytest.raises(ConfigParseError, match=r"key 'learning_rate' \(line 3\)") as info:
        parse_config_text("epochs: 2\nbatch_size: 8\nlearning_rate: 0.1\n")
    assert info.value.key == "learning_rate"
    assert info.value.line == 3


def test_type_mismatch_names_key_and_line() -> None:
    with pytest.raises(ConfigParseError, match=r"key 'epochs' \(line 2\).*integer"):
        parse_config_text("seed: 1\nepochs: two\n")
    with pytest.raises(ConfigParseError, match="boolean"):
        parse_config_text("loss_psc: 1\n")
    with pytest.raises(ConfigParseError, match="integer"):
        parse_config_text("batch_size: true\n")


def test_range_violation_names_key_and_line() -> None:
    with pytest.raises(ConfigParseError, match=r"key 'momentum' \(line 2\)"):
        parse_config_text("epochs: 3\nmomentum: 1.5\n")


def test_duplicate_key_is_rejected() -> None:
    with pytest.raises(ConfigParseError, match=r"key 'epochs' \(line 2\).*duplicate"):
        parse_config_text("epochs: 3\nepochs: 4\n")


def test_non_mapping_config_is_rejected() -> None:
    with pytest.raises(ConfigParseError, match="mapping"):
        parse_config_text("- 1\n- 2\n")


def test_missing_config_file(tmp_path: Path) -> None:
    missing = tmp_path / "nope.yaml"
    with pytest.raises(FileNotFoundError, match="nope.yaml"):
        parse_config(missing)


def test_dataset_file_round_trips_bit_exactly(tmp_path: Path) -> None:
    bench = generate_benchmark(BenchmarkConfig(samples_per_domain=60), seed=4)
    path = write_dataset_csv(bench.target, tmp_path / "target.csv", seed=4, digest="0123456789abcdef")

    loaded = load_dataset(path)

    assert loaded.domain == TARGET
    assert loaded.num_categories == bench.target.num_categories
    assert np.array_equal(loaded.features, bench.target.features)
    assert np.array_equal(loaded.labels, bench.target.labels)
    assert read_provenance(path) == {"seed": "4", "config_digest": "0123456789abcdef"}


def test_dataset_header_line_follows_provenance(tmp_path: Path) -> None:
    dataset = Dataset(np.array([[0.5, -1.25], [2.0, 3.0]]), np.array([1, 0]), SOURCE, 2)
    path = write_dataset_csv(dataset, tmp_path / "source.csv", seed=0, digest="ffffffffffffffff")

    lines = path.read_text(encoding="utf-8").splitlines()

    assert lines[:3] == ["# seed=0", "# config_digest=ffffffffffffffff", "2,2,2,source"]
    assert lines[3] == "0.5,-1.25,1"
    assert len(lines) == 5


def test_dataset_row_count_mismatch(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("# seed=0\n2,2,3,source\n0.1,0.2,0\n0.3,0.4,1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="expected 3 rows"):
        load_dataset(path)


def test_dataset_bad_header(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("2,2,source\n0.1,0.2,0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="header"):
        load_dataset(path)


def test_missing_dataset_names_path(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError, match="target.csv"):
        load_dataset(tmp_path / "target.csv")


def test_domain_truth_file_round_trip(tmp_path: Path) -> None:
    truth = generate_benchmark(BenchmarkConfig(samples_per_domain=60), seed=1).truth
    path = write_json(truth.to_dict(), tmp_path / "truth.json")

    loaded = load_domain_truth(path)

    assert np.array_equal(loaded.category_means, truth.category_means)
    assert np.array_equal(loaded.shift.shift, truth.shift.shift)
    assert loaded.shift.noise_sigma == truth.shift.noise_sigma
