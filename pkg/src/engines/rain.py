# Docstring for src/engines/rain module
"""
rain.py

Retrieval / augmentation / interaction schedule over an unlabeled target set.

Each epoch:
1) refresh_caches     - full-dataset outputs of both experts (adapter on, prompt on)
2) retrieve           - split the target set into pseudo-source (argmax agreement)
                        and complex (everything else) samples
3) compute_centers    - one Weiszfeld center per pseudo label, on adapted features
4) interaction        - minibatch SGD: adapter on L_weiszfeld + L_mi, prompt on
                        L_psc + L_mi, each against the partner's epoch-start cache
5) metrics            - set sizes, mean component losses, accuracies

A one-off consensus cross-entropy warm-up on the pseudo-source set runs before
the first epoch.

Design goals
------------
- Determinism: one seeded generator (STREAM_ADAPT) drives every shuffle and draw.
- Safety: frozen blocks are checksummed every epoch; target labels are never
  touched (the dataset given to run_adaptation is the unlabeled view, and
  accuracies come from an optional evaluation callback owned by the caller).
- Fail fast: a non-finite loss or gradient aborts with its epoch and batch.

Public API
----------
- RainState, EpochMetrics, RunReport
- retrieve(cached_os, cached_ov) -> (pseudo_indices, pseudo_labels, complex_indices)
- refresh_caches(source, prompt, dataset) -> (cached_os, cached_ov)
- compute_centers(source, dataset, state) -> CenterBank
- warmup_stage(source, prompt, dataset, state, cfg) -> WarmupSummary
- epoch_step(source, prompt, dataset, state, cfg, evaluate_fn=None) -> EpochMetrics
- run_adaptation(source, prompt, dataset, cfg, evaluate_fn=None) -> RunReport
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ..config import STREAM_ADAPT, AdaptConfig
from ..core.generate_domains import Dataset
from ..core.geometry import CenterBank, class_centers
from ..core.numerics import OptimizerState, Rng, sgd_momentum_step
from ..core.validators import (
    FrozenParameterError,
    NumericFaultError,
    require_finite,
    require_same_length,
)
from .experts import (
    PromptExpert,
    SourceExpert,
    flatten_params,
    frozen_checksum,
    prompt_forward_batch,
    source_forward_batch,
    trainable_size,
    write_params,
)
from .losses import (
    COMPONENT_CE,
    COMPONENT_MI,
    COMPONENT_PSC,
    COMPONENT_WEISZ,
    COUNT_WEISZ_SKIPPED,
    Batch,
    LossReport,
    adapter_objective,
    assign_categories,
    prompt_objective,
    warmup_adapter_objective,
    warmup_prompt_objective,
)

if TYPE_CHECKING:
    from .bench import Metrics

logger = logging.getLogger(__name__)

EvaluateFn = Callable[[SourceExpert, PromptExpert], "Metrics"]

NAN = float("nan")


# --- State and report types -------------------------------------------------------------

@dataclass
class RainState:

    """

    Mutable pipeline state.

    pseudo_indices and complex_indices partition range(len(dataset)); both are
    sorted ascending. cached_os / cached_ov hold one row per target sample.

    """

    pseudo_indices: np.ndarray
    pseudo_labels: np.ndarray
    complex_indices: np.ndarray
    centers: CenterBank
    cached_os: np.ndarray
    cached_ov: np.ndarray
    adapter_opt: OptimizerState
    prompt_opt: OptimizerState
    generator: np.random.Generator = field(repr=False)
    epoch: int = 0

    @property
    def n_pseudo(self) -> int:
        return int(self.pseudo_indices.shape[0])

    @property
    def n_complex(self) -> int:
        return int(self.complex_indices.shape[0])


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    n_pseudo: int
    n_complex: int
    loss_weisz: float
    loss_psc: float
    loss_mi_adapter_side: float
    loss_mi_prompt_side: float
    loss_ce_warmup: float
    acc_source_expert: float
    acc_prompt_expert: float
    acc_consensus: float

    def to_dict(self) -> dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> EpochMetrics:
        """Inverse of to_dict; JSON null (a NaN on write) reads back as NaN."""
        values: dict[str, object] = {}
        for name in cls.__dataclass_fields__:
            value = data[name]
            if name in _COUNT_FIELDS:
                values[name] = int(value)
            else:
                values[name] = NAN if value is None else float(value)
        return cls(**values)


_COUNT_FIELDS = frozenset({"epoch", "n_pseudo", "n_complex"})

EPOCH_COLUMNS: tuple[str, ...] = tuple(EpochMetrics.__dataclass_fields__)


@dataclass
class RunReport:

    """

    Everything a run produced. `wall_clock_seconds` is kept in memory and logged
    only, so serialized reports are byte-identical across repeated runs.

    """

    seed: int
    config: dict[str, object]
    rows: list[EpochMetrics]
    final_metrics: "Metrics | None"
    frozen_checksums: dict[str, str]
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict[str, object]:
        return {
            "seed": self.seed,
            "config": self.config,
            "rows": [row.to_dict() for row in self.rows],
            "final_metrics": None if self.final_metrics is None else self.final_metrics.to_dict(),
            "frozen_checksums": dict(self.frozen_checksums),
        }


@dataclass(frozen=True)
class WarmupSummary:
    steps: int
    mean_ce: float
    skipped: bool


# --- Retrieval --------------------------------------------------------------------------

def retrieve(cached_os, cached_ov) -> tuple[np.ndarray, np.ndarray, np.ndarray]:

    """

    Split sample indices by expert agreement.

    Index n is pseudo-source iff argmax cached_os[n] == argmax cached_ov[n]
    (ties toward the lower category index); its pseudo label is that shared
    argmax. Every other index is complex.

    Raises:
        ValueError: caches of different lengths or widths.

    """

    require_same_length(cached_os, cached_ov, "cached_os", "cached_ov")
    s = np.asarray(cached_os, dtype=np.float64)
    v = np.asarray(cached_ov, dtype=np.float64)
    if s.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    if s.shape != v.shape:
        raise ValueError(f"Cache shape mismatch: cached_os {s.shape}, cached_ov {v.shape}.")

    s_arg = np.argmax(s, axis=1)
    v_arg = np.argmax(v, axis=1)
    agree = s_arg == v_arg
    pseudo_indices = np.flatnonzero(agree).astype(np.int64)
    complex_indices = np.flatnonzero(~agree).astype(np.int64)
    return pseudo_indices, s_arg[agree].astype(np.int64), complex_indices


def refresh_caches(
    source: SourceExpert,
    prompt: PromptExpert,
    dataset: Dataset,
) -> tuple[np.ndarray, np.ndarray]:
    cached_os = source_forward_batch(source, dataset.features, use_adapter=True).probs
    cached_ov = prompt_forward_batch(prompt, dataset.features, use_prompt=True).probs
    return cached_os, cached_ov


def compute_centers(source: SourceExpert, dataset: Dataset, state: RainState) -> CenterBank:
    """Weiszfeld centers of the pseudo-source adapted features, grouped by pseudo label."""
    if state.n_pseudo == 0:
        return CenterBank()
    trace = source_forward_batch(source, dataset.features[state.pseudo_indices], use_adapter=True)
    return class_centers(trace.adapted, state.pseudo_labels, source.num_categories)


def _apply_retrieval(state: RainState, cached_os: np.ndarray, cached_ov: np.ndarray) -> None:
    pseudo, labels, complex_ = retrieve(cached_os, cached_ov)
    state.cached_os = cached_os
    state.cached_ov = cached_ov
    state.pseudo_indices = pseudo
    state.pseudo_labels = labels
    state.complex_indices = complex_


def init_state(
    source: SourceExpert,
    prompt: PromptExpert,
    dataset: Dataset,
    cfg: AdaptConfig,
) -> RainState:
    """Initial caches and partition, fresh optimizer states and the run generator."""
    cached_os, cached_ov = refresh_caches(source, prompt, dataset)
    pseudo, labels, complex_ = retrieve(cached_os, cached_ov)
    return RainState(
        pseudo_indices=pseudo,
        pseudo_labels=labels,
        complex_indices=complex_,
        centers=CenterBank(),
        cached_os=cached_os,
        cached_ov=cached_ov,
        adapter_opt=OptimizerState.zeros(trainable_size(source), cfg.lr_adapter, cfg.momentum),
        prompt_opt=OptimizerState.zeros(trainable_size(prompt), cfg.lr_prompt, cfg.momentum),
        generator=Rng(cfg.seed).child(STREAM_ADAPT).generator,
    )


# --- Optimizer plumbing ----------------------------------------------------------------------

def _check_report(report: LossReport, side: str, epoch: int, batch: int) -> None:
    if not math.isfinite(report.total):
        raise NumericFaultError(f"Non-finite {side} loss", epoch=epoch, batch=batch)
    require_finite(report.grad, f"{side} gradient", epoch=epoch, batch=batch)


def _apply_step(
    expert: SourceExpert | PromptExpert,
    report: LossReport,
    opt: OptimizerState,
    side: str,
    epoch: int,
    batch: int,
) -> OptimizerState:
    _check_report(report, side, epoch, batch)
    params, new_opt = sgd_momentum_step(flatten_params(expert).flat, report.grad, opt)
    write_params(expert, params)
    return new_opt


def _draw(gen: np.random.Generator, indices: np.ndarray, size: int) -> np.ndarray:
    # without replacement, capped at the set size
    if indices.shape[0] == 0:
        return indices
    take = min(size, int(indices.shape[0]))
    return np.sort(gen.choice(indices, size=take, replace=False))


def _minibatches(gen: np.random.Generator, indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    order = gen.permutation(indices)
    return [order[i : i + batch_size] for i in range(0, order.shape[0], batch_size)]


# --- Stages --------------------------------------------------------------------------------

def warmup_stage(
    source: SourceExpert,
    prompt: PromptExpert,
    dataset: Dataset,
    state: RainState,
    cfg: AdaptConfig,
) -> WarmupSummary:

    """

    Consensus cross-entropy warm-up on the current pseudo-source set.

    For init_epochs passes over shuffled pseudo-source minibatches, the adapter
    minimizes CE(O_s, cached O_v) and the prompt minimizes CE(cached O_s, O_v),
    each with its own learning rate. The partner side is the cache taken before
    the warm-up began.

    Returns:
        WarmupSummary with the mean per-sample CE over both sides (NaN when
        nothing ran).

    """

    if cfg.init_epochs == 0:
        return WarmupSummary(steps=0, mean_ce=NAN, skipped=True)
    if state.n_pseudo == 0:
        logger.warning("Warm-up skipped: empty pseudo-source set", extra={"epoch": state.epoch})
        return WarmupSummary(steps=0, mean_ce=NAN, skipped=True)

    ce_sum = 0.0
    sample_count = 0
    steps = 0
    for warm_epoch in range(cfg.init_epochs):
        for batch_no, idx in enumerate(_minibatches(state.generator, state.pseudo_indices, cfg.batch_size)):
            x = dataset.features[idx]
            adapter_report = warmup_adapter_objective(source, Batch(x, partner_probs=state.cached_ov[idx]))
            state.adapter_opt = _apply_step(
                source, adapter_report, state.adapter_opt, "warm-up adapter", warm_epoch, batch_no
            )
            prompt_report = warmup_prompt_objective(prompt, Batch(x, partner_probs=state.cached_os[idx]))
            state.prompt_opt = _apply_step(
                prompt, prompt_report, state.prompt_opt, "warm-up prompt", warm_epoch, batch_no
            )
            ce_sum += (adapter_report.total + prompt_report.total) * idx.shape[0]
            sample_count += 2 * idx.shape[0]
            steps += 1

    mean_ce = ce_sum / sample_count
    logger.info("Warm-up finished", extra={"steps": steps, "mean_ce": mean_ce, "n_pseudo": state.n_pseudo})
    return WarmupSummary(steps=steps, mean_ce=mean_ce, skipped=False)


def _mean_or_nan(values: list[float]) -> float:
    return float(np.mean(values)) if values else NAN


def _metrics_fields(evaluate_fn: EvaluateFn | None, source: SourceExpert, prompt: PromptExpert) -> tuple[float, float, float]:
    if evaluate_fn is None:
        return NAN, NAN, NAN
    m = evaluate_fn(source, prompt)
    return m.acc_source_expert, m.acc_prompt_expert, m.acc_consensus


def epoch_step(
    source: SourceExpert,
    prompt: PromptExpert,
    dataset: Dataset,
    state: RainState,
    cfg: AdaptConfig,
    evaluate_fn: EvaluateFn | None = None,
) -> EpochMetrics:

    """

    One retrieval / augmentation / interaction epoch.

    Each interaction step draws one minibatch from a shuffled pass over the
    whole target set (MI term, shared by both experts), one from the complex set
    (Weiszfeld cosine and consistency terms) and one from the pseudo-source set
    (consensus CE inside L_weiszfeld). The adapter is updated first, then the
    prompt; both use the epoch-start partner cache. A step with no active term
    leaves the parameters and optimizer state untouched.

    """

    state.epoch += 1
    epoch = state.epoch

    cached_os, cached_ov = refresh_caches(source, prompt, dataset)
    _apply_retrieval(state, cached_os, cached_ov)
    n_pseudo, n_complex = state.n_pseudo, state.n_complex

    toggles = cfg.toggles
    state.centers = compute_centers(source, dataset, state) if toggles.weisz else CenterBank()
    if toggles.weisz and n_pseudo == 0:
        logger.warning("Weiszfeld term skipped: empty pseudo-source set", extra={"epoch": epoch})

    complex_categories = np.full(len(dataset), -1, dtype=np.int64)
    if n_complex:
        complex_categories[state.complex_indices] = assign_categories(
            cached_os[state.complex_indices], cached_ov[state.complex_indices]
        )

    weisz_losses: list[float] = []
    psc_losses: list[float] = []
    mi_adapter: list[float] = []
    mi_prompt: list[float] = []
    weisz_skipped = 0

    all_indices = np.arange(len(dataset), dtype=np.int64)
    for batch_no, mi_idx in enumerate(_minibatches(state.generator, all_indices, cfg.batch_size)):
        complex_idx = _draw(state.generator, state.complex_indices, cfg.batch_size)
        pseudo_idx = _draw(state.generator, state.pseudo_indices, cfg.batch_size)
        x = dataset.features

        adapter_report = adapter_objective(
            source,
            pseudo_batch=Batch(x[pseudo_idx], partner_probs=cached_ov[pseudo_idx]),
            complex_batch=Batch(x[complex_idx], categories=complex_categories[complex_idx]),
            centers=state.centers,
            mi_batch=Batch(x[mi_idx], partner_probs=cached_ov[mi_idx]),
            toggles=toggles,
        )
        weisz_skipped += adapter_report.counts.get(COUNT_WEISZ_SKIPPED, 0)
        if adapter_report.components:
            state.adapter_opt = _apply_step(source, adapter_report, state.adapter_opt, "adapter", epoch, batch_no)
            weisz_part = [adapter_report.components[k] for k in (COMPONENT_WEISZ, COMPONENT_CE) if k in adapter_report.components]
            if weisz_part:
                weisz_losses.append(sum(weisz_part))
            if COMPONENT_MI in adapter_report.components:
                mi_adapter.append(adapter_report.components[COMPONENT_MI])

        prompt_report = prompt_objective(
            prompt,
            complex_batch=Batch(x[complex_idx]),
            mi_batch=Batch(x[mi_idx], partner_probs=cached_os[mi_idx]),
            toggles=toggles,
        )
        if prompt_report.components:
            state.prompt_opt = _apply_step(prompt, prompt_report, state.prompt_opt, "prompt", epoch, batch_no)
            if COMPONENT_PSC in prompt_report.components:
                psc_losses.append(prompt_report.components[COMPONENT_PSC])
            if COMPONENT_MI in prompt_report.components:
                mi_prompt.append(prompt_report.components[COMPONENT_MI])

    acc_s, acc_v, acc_c = _metrics_fields(evaluate_fn, source, prompt)
    row = EpochMetrics(
        epoch=epoch,
        n_pseudo=n_pseudo,
        n_complex=n_complex,
        loss_weisz=_mean_or_nan(weisz_losses),
        loss_psc=_mean_or_nan(psc_losses),
        loss_mi_adapter_side=_mean_or_nan(mi_adapter),
        loss_mi_prompt_side=_mean_or_nan(mi_prompt),
        loss_ce_warmup=NAN,
        acc_source_expert=acc_s,
        acc_prompt_expert=acc_v,
        acc_consensus=acc_c,
    )
    logger.info(
        "Epoch finished",
        extra={**row.to_dict(), "n_centers": len(state.centers), COUNT_WEISZ_SKIPPED: weisz_skipped},
    )
    return row


def _check_frozen(source: SourceExpert, prompt: PromptExpert, expected: dict[str, str], epoch: int) -> None:
    current = {"source": frozen_checksum(source), "prompt": frozen_checksum(prompt)}
    for name, digest in expected.items():
        if current[name] != digest:
            raise FrozenParameterError(f"Frozen blocks of the {name} expert changed (epoch {epoch}).")


def run_adaptation(
    source: SourceExpert,
    prompt: PromptExpert,
    dataset: Dataset,
    cfg: AdaptConfig,
    evaluate_fn: EvaluateFn | None = None,
    config_echo: dict[str, object] | None = None,
) -> RunReport:

    """

    Full pipeline: refresh -> retrieve -> warm-up -> epochs x epoch_step.

    The experts are updated in place. Row 0 of the report is the baseline:
    partition sizes and accuracies before any update, plus the warm-up CE.
    The warm-up only runs when at least one loss toggle is on, so the
    all-toggles-off run is a pure evaluation.

    Args:
        dataset:
            Target data. Pass the unlabeled view; labels are never read here.
        evaluate_fn:
            Optional callback scoring the current pair on labeled data owned by
            the caller. Without it, accuracy columns are NaN.
        config_echo:
            Resolved configuration to embed in the report (defaults to cfg).

    Raises:
        NumericFaultError: non-finite loss or gradient (epoch and batch attached).
        FrozenParameterError: a frozen block changed.

    """

    started = time.perf_counter()
    checksums = {"source": frozen_checksum(source), "prompt": frozen_checksum(prompt)}

    state = init_state(source, prompt, dataset, cfg)
    acc_s, acc_v, acc_c = _metrics_fields(evaluate_fn, source, prompt)
    n_pseudo0, n_complex0 = state.n_pseudo, state.n_complex

    if cfg.toggles.any_on():
        warmup = warmup_stage(source, prompt, dataset, state, cfg)
    else:
        warmup = WarmupSummary(steps=0, mean_ce=NAN, skipped=True)

    rows = [
        EpochMetrics(
            epoch=0,
            n_pseudo=n_pseudo0,
            n_complex=n_complex0,
            loss_weisz=NAN,
            loss_psc=NAN,
            loss_mi_adapter_side=NAN,
            loss_mi_prompt_side=NAN,
            loss_ce_warmup=warmup.mean_ce,
            acc_source_expert=acc_s,
            acc_prompt_expert=acc_v,
            acc_consensus=acc_c,
        )
    ]
    _check_frozen(source, prompt, checksums, epoch=0)

    for _ in range(cfg.epochs):
        rows.append(epoch_step(source, prompt, dataset, state, cfg, evaluate_fn=evaluate_fn))
        _check_frozen(source, prompt, checksums, epoch=state.epoch)

    final_metrics = evaluate_fn(source, prompt) if evaluate_fn is not None else None
    elapsed = time.perf_counter() - started
    logger.info(
        "Adaptation finished",
        extra={"seed": cfg.seed, "epochs": cfg.epochs, "wall_clock_seconds": elapsed},
    )

    return RunReport(
        seed=cfg.seed,
        config=dict(config_echo) if config_echo is not None else _adapt_config_echo(cfg),
        rows=rows,
        final_metrics=final_metrics,
        frozen_checksums=checksums,
        wall_clock_seconds=elapsed,
    )


def _adapt_config_echo(cfg: AdaptConfig) -> dict[str, object]:
    data = asdict(cfg)
    toggles = data.pop("toggles")
    data.update({f"loss_{k}": v for k, v in toggles.items()})
    return data
