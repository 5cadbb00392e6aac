# Docstring for src/validators module
"""
validators.py

Shared validation helpers and error types for the numeric core, the experts,
the adaptation pipeline and the CLI.

This module centralizes argument checks (lengths, emptiness, finiteness,
ranges) so every module fails fast with the same message shape, and it owns the
project's exception hierarchy so callers can catch a single family.

Public API
----------
- require_non_empty(values, name) -> None
- require_same_length(a, b, name_a, name_b) -> None
- require_finite(values, name, *, epoch=None, batch=None) -> None
- require_in_range(value, name, low=None, high=None, *, low_inclusive=True, high_inclusive=True) -> None
- require_dim(values, expected, name) -> None
- validate_run_config(cfg) -> None

Errors
------
- NumericFaultError(ArithmeticError)
- ConfigParseError(ValueError)
- BenchmarkConstructionError(RuntimeError)
- TargetLabelAccessError(RuntimeError)
- FrozenParameterError(RuntimeError)

Internal helpers
----------------
Underscore-prefixed helpers are intentionally not part of the public API.
"""

from __future__ import annotations

from collections.abc import Sized
from typing import Any

import numpy as np

from ..config import RunConfig


# --- Errors ----------------------------------------------------------------------

class NumericFaultError(ArithmeticError):

    """A loss, gradient or finite-difference evaluation produced NaN/Inf."""

    def __init__(
        self,
        message: str,
        *,
        index: int | None = None,
        epoch: int | None = None,
        batch: int | None = None,
    ) -> None:
        context = []
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if batch is not None:
            context.append(f"batch={batch}")
        if index is not None:
            context.append(f"index={index}")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")
        self.index = index
        self.epoch = epoch
        self.batch = batch


class ConfigParseError(ValueError):

    """Config file problem tied to a key and (when known) its line."""

    def __init__(self, message: str, *, key: str | None = None, line: int | None = None) -> None:
        where = ""
        if key is not None:
            where = f"key '{key}'"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(f"{where}{message}")
        self.key = key
        self.line = line


class BenchmarkConstructionError(RuntimeError):
    """The synthetic benchmark could not be built with the requested settings."""


class TargetLabelAccessError(RuntimeError):
    """Target labels were read from the adaptation path."""


class FrozenParameterError(RuntimeError):
    """A frozen parameter block changed during adaptation."""


# --- Argument checks ---------------------------------------------------------------

def require_non_empty(values: Sized, name: str) -> None:
    if len(values) == 0:
        raise ValueError(f"{name} must be non-empty.")


def require_same_length(a: Sized, b: Sized, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise ValueError(
            f"Length mismatch: {name_a} has {len(a)} entries, {name_b} has {len(b)}."
        )


def require_dim(values: np.ndarray, expected: int, name: str) -> None:
    if values.ndim != 1 or values.shape[0] != expected:
        raise ValueError(
            f"Dimension mismatch for {name}: expected shape ({expected},), got {values.shape}."
        )


def require_finite(
    values: Any,
    name: str,
    *,
    epoch: int | None = None,
    batch: int | None = None,
) -> None:

    """

    Raise NumericFaultError naming the first non-finite position of `values`
    (and the epoch and batch, when the caller is inside a training loop).

    """

    arr = np.asarray(values, dtype=np.float64).ravel()
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericFaultError(f"Non-finite {name}", index=int(bad[0]), epoch=epoch, batch=batch)


def require_in_range(
    value: float,
    name: str,
    low: float | None = None,
    high: float | None = None,
    *,
    low_inclusive: bool = True,
    high_inclusive: bool = True,
) -> None:
    if low is not None:
        ok = value >= low if low_inclusive else value > low
        if not ok:
            op = ">=" if low_inclusive else ">"
            raise ValueError(f"Invalid {name}: {value}. Expected {name} {op} {low}.")
    if high is not None:
        ok = value <= high if high_inclusive else value < high
        if not ok:
            op = "<=" if high_inclusive else "<"
            raise ValueError(f"Invalid {name}: {value}. Expected {name} {op} {high}.")


# --- Run config ---------------------------------------------------------------------

# (key, low, high, low_inclusive, high_inclusive); None means unbounded.
_RANGE_RULES: tuple[tuple[str, float | None, float | None, bool, bool], ...] = (
    ("epochs", 0, None, True, True),
    ("init_epochs", 0, None, True, True),
    ("batch_size", 1, None, True, True),
    ("lr_adapter", 0.0, None, False, True),
    ("lr_prompt", 0.0, None, False, True),
    ("momentum", 0.0, 1.0, True, False),
    ("seed", 0, 2**64 - 1, True, True),
    ("d_hidden", 1, None, True, True),
    ("d_embed", 2, None, True, True),
    ("adapter_rank", 1, None, True, True),
    ("adapter_init_std", 0.0, None, True, True),
    ("temperature", 0.0, None, False, True),
    ("num_categories", 2, None, True, True),
    ("d_in", 2, None, True, True),
    ("radius", 0.0, None, False, True),
    ("source_sigma", 0.0, None, True, True),
    ("gamma", 0.0, None, True, True),
    ("shift_norm", 0.0, None, True, True),
    ("target_noise", 0.0, None, True, True),
    ("zero_shot_low", 0.0, 1.0, True, True),
    ("zero_shot_high", 0.0, 1.0, True, True),
    ("pretrain_max_epochs", 1, None, True, True),
    ("workers", 1, None, True, True),
)

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


def _check(key: str, fn, lines: dict[str, int] | None) -> None:
    try:
        fn()
    except ValueError as exc:
        raise ConfigParseError(str(exc), key=key, line=(lines or {}).get(key)) from exc


def validate_run_config(cfg: RunConfig, lines: dict[str, int] | None = None) -> None:

    """

    Range-check a resolved RunConfig.

    Args:
        cfg:
            The configuration to check.
        lines:
            Optional key -> line map from the YAML reader, used in error messages.

    Raises:
        ConfigParseError naming the offending key (and line when known).

    """

    for key, low, high, low_inc, high_inc in _RANGE_RULES:
        value = getattr(cfg, key)
        _check(
            key,
            lambda: require_in_range(
                value, key, low, high, low_inclusive=low_inc, high_inclusive=high_inc
            ),
            lines,
        )

    if cfg.init_epochs > cfg.epochs:
        raise ConfigParseError(
            f"init_epochs ({cfg.init_epochs}) must not exceed epochs ({cfg.epochs}).",
            key="init_epochs",
            line=(lines or {}).get("init_epochs"),
        )
    if cfg.zero_shot_low > cfg.zero_shot_high:
        raise ConfigParseError(
            f"zero_shot_low ({cfg.zero_shot_low}) must not exceed zero_shot_high ({cfg.zero_shot_high}).",
            key="zero_shot_low",
            line=(lines or {}).get("zero_shot_low"),
        )
    if cfg.samples_per_domain < cfg.num_categories:
        raise ConfigParseError(
            f"samples_per_domain ({cfg.samples_per_domain}) must be >= num_categories ({cfg.num_categories}).",
            key="samples_per_domain",
            line=(lines or {}).get("samples_per_domain"),
        )
    if not cfg.ablation_seeds:
        raise ConfigParseError("at least one seed is required.", key="ablation_seeds",
                               line=(lines or {}).get("ablation_seeds"))
    if not cfg.ablation_gammas:
        raise ConfigParseError("at least one gamma is required.", key="ablation_gammas",
                               line=(lines or {}).get("ablation_gammas"))
    if any(g < 0 for g in cfg.ablation_gammas):
        raise ConfigParseError("gammas must be >= 0.", key="ablation_gammas",
                               line=(lines or {}).get("ablation_gammas"))
    if cfg.log_level.upper() not in _LOG_LEVELS:
        raise ConfigParseError(
            f"unknown log level '{cfg.log_level}'. Expected one of {sorted(_LOG_LEVELS)}.",
            key="log_level",
            line=(lines or {}).get("log_level"),
        )
