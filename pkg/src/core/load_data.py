# Docstring for src/load_data module
"""
load_data.py

Input loader utilities: the run configuration (YAML), benchmark dataset files
and the ground-truth document written by the `generate` subcommand.

This module provides thin, predictable I/O functions with minimal
transformation. Numeric work lives in the engines; these loaders only parse,
type-check and fail fast with a message naming the file, key or line.

Design goals
------------
- Separation of concerns: keep file I/O distinct from numerics and pipeline logic.
- Repeatability: datasets round-trip bit-exactly (17 significant digits,
  round-trip float parsing).
- Strictness: unknown config keys and type mismatches are hard errors.

Inputs
------
- Config file: flat YAML mapping, keys are RunConfig field names.
      epochs: 30
      lr_adapter: 0.1
      ablation_seeds: [0, 1, 2, 3, 4]
- Dataset file:
      # seed=<u64>
      # config_digest=<hex>
      <d_in>,<C>,<count>,<domain>
      <f_0>,...,<f_{d_in-1}>,<label>        (one line per sample)
- Truth file: JSON from DomainTruth.to_dict().

Public API
----------
- parse_config(path, overrides=None) -> RunConfig
- parse_config_text(text, overrides=None) -> RunConfig
- load_dataset(path) -> Dataset
- load_domain_truth(path) -> DomainTruth
"""

from __future__ import annotations

import io
import json
import re
import typing
from dataclasses import fields, replace
from pathlib import Path

import pandas as pd
import yaml

from ..config import RunConfig
from .generate_domains import DOMAINS, Dataset, DomainTruth
from .validators import ConfigParseError, validate_run_config


# --- Config ----------------------------------------------------------------------------

class _LineLoader(yaml.SafeLoader):

    """SafeLoader that records the 1-based line of every mapping key."""

    def __init__(self, stream) -> None:
        super().__init__(stream)
        self.key_lines: dict[str, int] = {}


def _mapping_with_lines(loader: _LineLoader, node: yaml.MappingNode) -> dict:
    seen: set[str] = set()
    for key_node, _ in node.value:
        key = str(key_node.value)
        line = key_node.start_mark.line + 1
        if key in seen:
            raise ConfigParseError("duplicate key.", key=key, line=line)
        seen.add(key)
        loader.key_lines.setdefault(key, line)
    return loader.construct_mapping(node, deep=True)


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_with_lines)

# YAML 1.1 needs a dot in exponent floats; accept the 1.2 form too (1e-2, 5E+3).
_LineLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?[0-9][0-9_]*(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _load_yaml(text: str) -> tuple[object, dict[str, int]]:
    loader = _LineLoader(text)
    try:
        data = loader.get_single_data()
        return data, dict(loader.key_lines)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigParseError(f"invalid YAML: {exc.problem}", line=line) from exc
    finally:
        loader.dispose()


_FIELD_TYPES: dict[str, object] = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: object, expected: object, line: int | None) -> object:

    """

    Check a YAML value against the RunConfig field type and convert it.

    Ints are accepted where reals are expected; bools are never accepted as
    numbers.

    """

    def fail(what: str) -> ConfigParseError:
        return ConfigParseError(
            f"expected {what}, got {type(value).__name__} ({value!r}).", key=key, line=line
        )

    if expected is bool:
        if not isinstance(value, bool):
            raise fail("a boolean")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise fail("an integer")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise fail("a number")
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise fail("a string")
        return value

    origin = typing.get_origin(expected)
    if origin is tuple:
        item_type = typing.get_args(expected)[0]
        if not isinstance(value, list):
            raise fail("a list")
        return tuple(_coerce(key, item, item_type, line) for item in value)
    raise fail(str(expected))


def parse_config_text(text: str, overrides: dict[str, object] | None = None) -> RunConfig:
    data, lines = _load_yaml(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigParseError(
            f"expected a mapping of config keys at the top level, got {type(data).__name__}.", line=1
        )

    values: dict[str, object] = {}
    for key, value in data.items():
        key = str(key)
        line = lines.get(key)
        if key not in _FIELD_TYPES:
            raise ConfigParseError(
                f"unknown config key. Expected one of {sorted(_FIELD_TYPES)}.", key=key, line=line
            )
        values[key] = _coerce(key, value, _FIELD_TYPES[key], line)

    cfg = RunConfig(**values)
    if overrides:
        cfg = replace(cfg, **overrides)
    validate_run_config(cfg, lines)
    return cfg


def parse_config(path: Path | str | None = None, overrides: dict[str, object] | None = None) -> RunConfig:

    """

    Load a RunConfig from a YAML file.

    Args:
        path:
            Config file. None means all defaults.
        overrides:
            Field values applied after the file (e.g. the CLI --seed flag).

    Raises:
        FileNotFoundError: path given but missing.
        ConfigParseError: unknown key, type mismatch or range violation (names
            the key and its line).

    """

    if path is None:
        return parse_config_text("", overrides)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found at: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), overrides)


# --- Datasets -----------------------------------------------------------------------------

def _split_header(path: Path) -> tuple[str, str]:
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        body_start += 1
    if body_start >= len(lines):
        raise ValueError(f"Dataset file {path} has no header line.")
    return lines[body_start].strip(), "".join(lines[body_start + 1 :])


def load_dataset(path: Path | str) -> Dataset:

    """

    Read a dataset file written by `export_utils.write_dataset_csv`.

    Raises:
        FileNotFoundError: missing file.
        ValueError: malformed header, wrong column or row count, bad labels.

    """

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found at: {path}")

    header, body = _split_header(path)
    parts = header.split(",")
    if len(parts) != 4:
        raise ValueError(f"Dataset {path}: header must be 'd_in,C,count,domain', got '{header}'.")
    try:
        d_in, num_categories, count = (int(p) for p in parts[:3])
    except ValueError as exc:
        raise ValueError(f"Dataset {path}: non-integer field in header '{header}'.") from exc
    domain = parts[3]
    if domain not in DOMAINS:
        raise ValueError(f"Dataset {path}: unknown domain '{domain}'.")

    if count == 0:
        frame = pd.DataFrame(columns=range(d_in + 1))
    else:
        frame = pd.read_csv(io.StringIO(body), header=None, float_precision="round_trip")
    if frame.shape != (count, d_in + 1):
        raise ValueError(
            f"Dataset {path}: expected {count} rows of {d_in + 1} values, got shape {frame.shape}."
        )

    features = frame.iloc[:, :d_in].to_numpy(dtype="float64")
    labels = frame.iloc[:, d_in].to_numpy(dtype="int64")
    return Dataset(features, labels, domain, num_categories)


def load_domain_truth(path: Path | str) -> DomainTruth:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Domain truth file not found at: {path}")
    return DomainTruth.from_dict(json.loads(path.read_text(encoding="utf-8")))
