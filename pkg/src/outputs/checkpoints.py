"""
checkpoints.py

Expert checkpoint files: one JSON document per expert.

Document layout
---------------
{
  "format": "dual-expert-checkpoint/1",
  "kind": "source" | "prompt",
  "seed": <u64>,
  "config_digest": "<16 hex>",
  "blocks": {
    "<block name>": {"shape": [...], "trainable": <bool>, "values": [row-major reals]}
  },
  "scalars": {"temperature": <real>}        (prompt expert only)
}

Block names are the expert's attribute names (backbone_w1, ..., adapter_up;
encoder_u, anchors, prompt). Documents are validated with jsonschema on load.

Public API
----------
- save_expert(expert, path, *, seed, digest) -> Path
- load_expert(path, kind=None) -> SourceExpert | PromptExpert
- load_checkpoint_document(path) -> dict
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import ValidationError

from ..engines.experts import PromptExpert, SourceExpert
from .export_utils import write_json

CHECKPOINT_FORMAT = "dual-expert-checkpoint/1"
KIND_SOURCE = "source"
KIND_PROMPT = "prompt"

CHECKPOINT_SCHEMA: dict[str, object] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "kind", "seed", "config_digest", "blocks", "scalars"],
    "additionalProperties": False,
    "properties": {
        "format": {"const": CHECKPOINT_FORMAT},
        "kind": {"enum": [KIND_SOURCE, KIND_PROMPT]},
        "seed": {"type": "integer", "minimum": 0},
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "blocks": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["shape", "trainable", "values"],
                "additionalProperties": False,
                "properties": {
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "trainable": {"type": "boolean"},
                    "values": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "scalars": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}

_VALIDATOR = Draft202012Validator(CHECKPOINT_SCHEMA)


def _kind_of(expert: SourceExpert | PromptExpert) -> str:
    if isinstance(expert, SourceExpert):
        return KIND_SOURCE
    if isinstance(expert, PromptExpert):
        return KIND_PROMPT
    raise TypeError(f"Unsupported expert type: {type(expert).__name__}")


def save_expert(expert: SourceExpert | PromptExpert, output_path: Path | str, *, seed: int, digest: str) -> Path:
    blocks: dict[str, object] = {}
    for name in expert.block_names():
        block = getattr(expert, name)
        blocks[name] = {
            "shape": list(block.shape),
            "trainable": name in expert.TRAINABLE_BLOCKS,
            "values": block.ravel().tolist(),
        }
    scalars = {"temperature": expert.temperature} if isinstance(expert, PromptExpert) else {}
    document = {
        "format": CHECKPOINT_FORMAT,
        "kind": _kind_of(expert),
        "seed": int(seed),
        "config_digest": digest,
        "blocks": blocks,
        "scalars": scalars,
    }
    return write_json(document, output_path)


def load_checkpoint_document(path: Path | str) -> dict[str, object]:

    """

    Read and schema-check a checkpoint document.

    Raises:
        FileNotFoundError: missing file (message names the expected path).
        ValueError: invalid JSON or schema violation.

    """

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Expert checkpoint not found at: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        _VALIDATOR.validate(document)
    except json.JSONDecodeError as exc:
        raise ValueError(f"Checkpoint {path} is not valid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ValueError(f"Checkpoint {path} failed schema validation: {exc.message}") from exc
    return document


def _block(document: dict[str, object], name: str) -> np.ndarray:
    blocks = document["blocks"]
    if name not in blocks:
        raise ValueError(f"Checkpoint is missing block '{name}'.")
    entry = blocks[name]
    values = np.asarray(entry["values"], dtype=np.float64)
    shape = tuple(entry["shape"])
    if values.size != int(np.prod(shape)):
        raise ValueError(f"Block '{name}' holds {values.size} values for shape {shape}.")
    return values.reshape(shape)


def load_expert(path: Path | str, kind: str | None = None) -> SourceExpert | PromptExpert:
    document = load_checkpoint_document(path)
    if kind is not None and document["kind"] != kind:
        raise ValueError(f"Checkpoint {path} holds a {document['kind']} expert, expected {kind}.")

    if document["kind"] == KIND_SOURCE:
        return SourceExpert(**{name: _block(document, name) for name in SourceExpert.block_names()})

    if "temperature" not in document["scalars"]:
        raise ValueError(f"Prompt checkpoint {path} is missing scalar 'temperature'.")
    return PromptExpert(
        **{name: _block(document, name) for name in PromptExpert.block_names()},
        temperature=float(document["scalars"]["temperature"]),
    )
