# Docstring for src/export_utils module
"""
export_utils.py

Utilities for writing deterministic report files: CSV tables, JSON documents
and the seed / config-digest provenance every file carries.

Design goals
------------
- Byte-stable output: fixed column order, "\\n" line endings, every real printed
  with 17 significant digits (exact round-trip for 64-bit floats).
- Safe output: ensure parent directories exist before writing files.
- Provenance: CSV files open with `# seed=` and `# config_digest=` comment
  lines; JSON documents carry `seed` and `config_digest` keys.

Public API
----------
- config_digest(config: dict) -> str
- format_real(value) -> str
- to_json_text(obj) -> str
- write_json(obj, output_path) -> Path
- write_df_csv(df, output_path, *, seed, digest) -> Path
- read_provenance(path) -> dict[str, str]
- write_dataset_csv(dataset, output_path, *, seed, digest) -> Path
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import pandas as pd

from ..config import FLOAT_SIG_DIGITS
from ..core.generate_domains import Dataset

DIGEST_CHARS = 16
FLOAT_FORMAT = f"%.{FLOAT_SIG_DIGITS}g"
COMMENT_PREFIX = "# "


def _ensure_parent_dir(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def format_real(value: float) -> str:
    """17 significant digits; NaN/Inf have no JSON form and become null."""
    value = float(value)
    if not math.isfinite(value):
        return "null"
    text = format(value, f".{FLOAT_SIG_DIGITS}g")
    # keep a float-looking token so readers never see an int
    if all(ch not in text for ch in ".eEn"):
        text += ".0"
    return text


def _encode(obj: object, level: int) -> str:
    pad = "  " * (level + 1)
    close = "  " * level
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), level)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, bool, type(None))) for v in obj):
            return "[" + ", ".join(_encode(v, level + 1) for v in obj) + "]"
        items = [f"{pad}{_encode(v, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"Cannot serialize object of type {type(obj).__name__}")


def to_json_text(obj: object) -> str:
    return _encode(obj, 0) + "\n"


def config_digest(config: Mapping[str, object]) -> str:

    """

    First 16 hex characters of SHA-256 over the canonical JSON of `config`
    (sorted keys, compact separators, reals at 17 significant digits).

    """

    canonical = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:DIGEST_CHARS]


def _canonical(obj: object) -> object:
    if isinstance(obj, Mapping):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    return obj


def write_json(obj: object, output_path: Path | str) -> Path:
    path = Path(output_path)
    _ensure_parent_dir(path)
    path.write_text(to_json_text(obj), encoding="utf-8", newline="\n")
    return path


def provenance_lines(seed: int, digest: str) -> str:
    return f"{COMMENT_PREFIX}seed={int(seed)}\n{COMMENT_PREFIX}config_digest={digest}\n"


def write_df_csv(
    df: pd.DataFrame,
    output_path: Path | str,
    *,
    seed: int,
    digest: str,
    header: bool = True,
    preamble: str = "",
) -> Path:

    """

    Write a DataFrame as CSV behind the provenance comment lines.

    NaN cells are written empty. `preamble` (already newline-terminated) goes
    between the provenance lines and the table.

    """

    path = Path(output_path)
    _ensure_parent_dir(path)
    body = df.to_csv(
        index=False,
        header=header,
        float_format=FLOAT_FORMAT,
        na_rep="",
        lineterminator="\n",
    )
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(provenance_lines(seed, digest))
        handle.write(preamble)
        handle.write(body)
    return path


def read_provenance(path: Path | str) -> dict[str, str]:
    """Parse the leading `# key=value` comment lines of a CSV-like file."""
    out: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith(COMMENT_PREFIX):
                break
            key, _, value = line[len(COMMENT_PREFIX):].rstrip("\n").partition("=")
            out[key] = value
    return out


def write_dataset_csv(dataset: Dataset, output_path: Path | str, *, seed: int, digest: str) -> Path:
    """Dataset file: provenance lines, `d_in,C,count,domain`, then features and label per line."""
    frame = pd.DataFrame(dataset.features)
    frame["label"] = dataset.labels
    preamble = f"{dataset.d_in},{dataset.num_categories},{len(dataset)},{dataset.domain}\n"
    return write_df_csv(frame, output_path, seed=seed, digest=digest, header=False, preamble=preamble)
