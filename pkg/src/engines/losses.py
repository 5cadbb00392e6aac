# Docstring for src/engines/losses module
"""
losses.py

The adaptation losses and the two composite objectives, each with an analytic
gradient w.r.t. the owning expert's trainable parameters.

Stop-gradient contract
----------------------
Every objective treats the partner expert's outputs as constants: they arrive
precomputed inside a `Batch` (`partner_probs`) and never enter a backward pass.
Each expert computes its own loss and updates itself.

Conventions
-----------
- Logarithms are clamped at eps_log (numerics.safe_log), with 0 * log(.) = 0.
- consensus_ce_loss follows the summed form. Every objective divides it by the
  batch length, so steps are per-sample means and the learning rates do not
  depend on batch size.
- Weiszfeld cosine, prompt consistency and MI are batch means.
- Composite objectives use unit weights.
- adapter_objective reports how many complex samples had no center for their
  assigned category under LossReport.counts["weisz_skipped"].

Public API
----------
- consensus_ce_loss(ps_outputs, pv_outputs) -> float
- weiszfeld_style_loss(centers, complex_features, complex_categories, ce_term) -> StyleLoss
- prompt_consistency_loss(e, complex_inputs) -> float
- joint_distribution(os_batch, ov_batch) -> JointDist
- mutual_information_loss(j) -> float
- mutual_information_gradients(os_batch, ov_batch) -> (value, g_os, g_ov)
- assign_categories(os_outputs, ov_outputs) -> np.ndarray
- adapter_objective(e, pseudo_batch, complex_batch, centers, mi_batch, toggles) -> LossReport
- prompt_objective(e, complex_batch, mi_batch, toggles) -> LossReport
- warmup_adapter_objective(e, pseudo_batch) -> LossReport
- warmup_prompt_objective(e, pseudo_batch) -> LossReport
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..config import NUMERICS_CONFIG, LossToggles
from ..core.geometry import CenterBank
from ..core.numerics import cosine_similarity, safe_log
from ..core.validators import require_non_empty, require_same_length
from .experts import (
    PromptExpert,
    SourceExpert,
    prompt_backward,
    prompt_forward_batch,
    softmax_backward,
    source_backward,
    source_forward_batch,
    trainable_size,
)

EPS_LOG = NUMERICS_CONFIG.eps_log
NORM_FLOOR = NUMERICS_CONFIG.norm_floor

COMPONENT_WEISZ = "weisz_cosine"
COMPONENT_CE = "ce"
COMPONENT_PSC = "psc"
COMPONENT_MI = "mi"
COUNT_WEISZ_SKIPPED = "weisz_skipped"


# --- Types --------------------------------------------------------------------------

@dataclass(frozen=True)
class Batch:

    """

    One minibatch handed to an objective.

    inputs:
        (N, d_in) target features.
    partner_probs:
        (N, C) cached partner outputs for the same samples (constants).
    categories:
        Assigned category per sample (complex batches only).

    """

    inputs: np.ndarray
    partner_probs: np.ndarray | None = None
    categories: np.ndarray | None = None

    def __len__(self) -> int:
        return int(np.asarray(self.inputs).shape[0])


@dataclass(frozen=True)
class JointDist:
    table: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    batch_size: int


@dataclass(frozen=True)
class StyleLoss:

    """Weiszfeld style loss value with its bookkeeping."""

    value: float
    cosine_term: float
    ce_term: float
    used: int
    skipped: int
    skipped_all: bool

    def __float__(self) -> float:
        return self.value


@dataclass
class LossReport:
    total: float
    components: dict[str, float] = field(default_factory=dict)
    grad: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # bookkeeping that is not part of the loss, e.g. "weisz_skipped"
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if abs(self.total - sum(self.components.values())) > 1e-9 * max(1.0, abs(self.total)):
            raise ValueError(
                f"LossReport total {self.total} does not match its components {self.components}."
            )


def _as_prob_batch(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a sequence of probability vectors, got shape {arr.shape}.")
    return arr


# --- Consensus cross-entropy -----------------------------------------------------------

def consensus_ce_loss(ps_outputs: Sequence, pv_outputs: Sequence) -> float:

    """

    sum_n CE(ps[n], pv[n]) = -sum_n sum_c ps_nc log pv_nc.

    """

    require_same_length(ps_outputs, pv_outputs, "ps_outputs", "pv_outputs")
    if len(ps_outputs) == 0:
        return 0.0
    ps = _as_prob_batch(ps_outputs, "ps_outputs")
    pv = _as_prob_batch(pv_outputs, "pv_outputs")
    if ps.shape != pv.shape:
        raise ValueError(f"Shape mismatch: ps_outputs {ps.shape}, pv_outputs {pv.shape}.")
    terms = np.where(ps > 0, ps * safe_log(pv), 0.0)
    return float(-terms.sum())


def _ce_grad_wrt_ps(pv: np.ndarray) -> np.ndarray:
    return -safe_log(pv)


def _ce_grad_wrt_pv(ps: np.ndarray, pv: np.ndarray) -> np.ndarray:
    # zero where the log clamp is active
    live = pv > EPS_LOG
    return np.where(live, -ps / np.where(live, pv, 1.0), 0.0)


# --- Weiszfeld style loss ---------------------------------------------------------------

def weiszfeld_style_loss(
    centers: CenterBank,
    complex_features: Sequence,
    complex_categories: Sequence[int],
    ce_term: float,
) -> StyleLoss:

    """

    mean_k (1 - cos(y_w(c_k), h'_k)) + ce_term over complex samples.

    Samples whose assigned category has no center are skipped and counted.
    When no sample is usable, the loss is ce_term alone and skipped_all is set.

    """

    require_same_length(complex_features, complex_categories, "complex_features", "complex_categories")
    total_samples = len(complex_categories)
    cos_terms: list[float] = []
    for feature, category in zip(complex_features, complex_categories):
        if int(category) not in centers:
            continue
        center = centers[int(category)]
        if np.asarray(feature).shape != center.shape:
            raise ValueError(
                f"Feature dimension {np.asarray(feature).shape} does not match center dimension {center.shape}."
            )
        cos_terms.append(1.0 - cosine_similarity(center, feature))

    used = len(cos_terms)
    cosine_term = float(np.mean(cos_terms)) if used else 0.0
    return StyleLoss(
        value=cosine_term + float(ce_term),
        cosine_term=cosine_term,
        ce_term=float(ce_term),
        used=used,
        skipped=total_samples - used,
        skipped_all=used == 0,
    )


def _cosine_loss_grad(centers_rows: np.ndarray, features: np.ndarray) -> np.ndarray:

    """

    d/dh of -cos(y, h), row-wise: -(y / (|y||h|) - cos h / |h|^2).

    Rows where either norm is below the floor have a constant cosine of 0 and
    get a zero gradient.

    """

    y_norm = np.linalg.norm(centers_rows, axis=1)
    h_norm = np.linalg.norm(features, axis=1)
    live = (y_norm >= NORM_FLOOR) & (h_norm >= NORM_FLOOR)
    y_safe = np.where(live, y_norm, 1.0)
    h_safe = np.where(live, h_norm, 1.0)
    cos = (centers_rows * features).sum(axis=1) / (y_safe * h_safe)
    d_cos = centers_rows / (y_safe * h_safe)[:, None] - (cos / h_safe**2)[:, None] * features
    return np.where(live[:, None], -d_cos, 0.0)


# --- Prompt semantic consistency ----------------------------------------------------------

def prompt_consistency_loss(e: PromptExpert, complex_inputs) -> float:

    """

    mean_n KL(P_v(x_n, anchors) || P_v(x_n, anchors + psi)).

    The unprompted distribution is the constant reference.

    """

    require_non_empty(complex_inputs, "complex_inputs")
    x = np.asarray(complex_inputs, dtype=np.float64)
    p0 = prompt_forward_batch(e, x, use_prompt=False).probs
    p = prompt_forward_batch(e, x, use_prompt=True).probs
    return _mean_kl(p0, p)


def _mean_kl(p0: np.ndarray, p: np.ndarray) -> float:
    terms = np.where(p0 > 0, p0 * (safe_log(p0) - safe_log(p)), 0.0)
    return float(terms.sum(axis=1).mean())


# --- Mutual information -------------------------------------------------------------------

def joint_distribution(os_batch: Sequence, ov_batch: Sequence) -> JointDist:

    """

    O_ij = (1/N) sum_n os_n(i) ov_n(j), with row and column marginals.

    """

    require_same_length(os_batch, ov_batch, "os_batch", "ov_batch")
    require_non_empty(os_batch, "os_batch")
    s = _as_prob_batch(os_batch, "os_batch")
    v = _as_prob_batch(ov_batch, "ov_batch")
    if s.shape != v.shape:
        raise ValueError(f"Shape mismatch: os_batch {s.shape}, ov_batch {v.shape}.")
    n = s.shape[0]
    table = (s.T @ v) / n
    return JointDist(
        table=table,
        row_marginals=table.sum(axis=1),
        col_marginals=table.sum(axis=0),
        batch_size=n,
    )


def mutual_information_loss(j: JointDist) -> float:

    """

    -sum_ij O_ij log(O_ij / (O^s_i O^v_j)); never positive beyond rounding.

    """

    log_ratio = (
        safe_log(j.table)
        - safe_log(j.row_marginals)[:, None]
        - safe_log(j.col_marginals)[None, :]
    )
    terms = np.where(j.table > 0, j.table * log_ratio, 0.0)
    return float(-terms.sum())


def _mi_table_gradient(j: JointDist) -> np.ndarray:
    # dL/dO_ij with the marginals as functions of the table
    def d_xlogx(values: np.ndarray) -> np.ndarray:
        return safe_log(values) + (values > EPS_LOG)

    return (
        -d_xlogx(j.table)
        + d_xlogx(j.row_marginals)[:, None]
        + d_xlogx(j.col_marginals)[None, :]
    )


def mutual_information_gradients(os_batch, ov_batch) -> tuple[float, np.ndarray, np.ndarray]:

    """

    MI loss of the batch joint with its gradients w.r.t. both output batches.

    Returns:
        (value, dL/d os_batch, dL/d ov_batch), each gradient shaped (N, C).

    """

    j = joint_distribution(os_batch, ov_batch)
    s = np.asarray(os_batch, dtype=np.float64)
    v = np.asarray(ov_batch, dtype=np.float64)
    g_table = _mi_table_gradient(j)
    g_os = (v @ g_table.T) / j.batch_size
    g_ov = (s @ g_table) / j.batch_size
    return mutual_information_loss(j), g_os, g_ov


# --- Category assignment ---------------------------------------------------------------------

def assign_categories(os_outputs, ov_outputs) -> np.ndarray:
    """argmax of the averaged expert outputs; ties go to the lower index."""
    s = _as_prob_batch(os_outputs, "os_outputs")
    v = _as_prob_batch(ov_outputs, "ov_outputs")
    return np.argmax(0.5 * (s + v), axis=1)


# --- Composite objectives ---------------------------------------------------------------------

def _require_partner(batch: Batch, name: str) -> np.ndarray:
    if batch.partner_probs is None:
        raise ValueError(f"{name} needs partner_probs.")
    partner = np.asarray(batch.partner_probs, dtype=np.float64)
    if partner.shape[0] != len(batch):
        raise ValueError(
            f"{name}: {partner.shape[0]} partner outputs for {len(batch)} inputs."
        )
    return partner


def _has_rows(batch: Batch | None) -> bool:
    return batch is not None and len(batch) > 0


def adapter_objective(
    e: SourceExpert,
    pseudo_batch: Batch | None,
    complex_batch: Batch | None,
    centers: CenterBank,
    mi_batch: Batch | None,
    toggles: LossToggles = LossToggles(),
) -> LossReport:

    """

    L_weiszfeld + L_mi for the source adapter.

    L_weiszfeld = mean cosine distance of complex adapted features to their
    assigned centers + mean consensus CE on pseudo-source samples. Both parts
    follow the `weisz` toggle; L_mi follows the `mi` toggle. Terms whose batch is
    missing or empty are left out of the report.

    Args:
        pseudo_batch:
            Pseudo-source inputs with the prompt expert's cached outputs.
        complex_batch:
            Complex inputs with their assigned categories.
        centers:
            Center bank built from pseudo-source adapted features.
        mi_batch:
            Target inputs with the prompt expert's cached outputs.

    Returns:
        LossReport whose grad is in the adapter ParamView order.

    """

    components: dict[str, float] = {}
    grad = np.zeros(trainable_size(e))
    counts: dict[str, int] = {}

    if toggles.weisz and _has_rows(complex_batch):
        if complex_batch.categories is None:
            raise ValueError("complex_batch needs assigned categories.")
        categories = np.asarray(complex_batch.categories, dtype=np.int64)
        trace = source_forward_batch(e, complex_batch.inputs, use_adapter=True)
        style = weiszfeld_style_loss(centers, trace.adapted, categories, 0.0)
        counts[COUNT_WEISZ_SKIPPED] = style.skipped
        if not style.skipped_all:
            keep = np.array([int(c) in centers for c in categories], dtype=bool)
            rows = np.stack([centers[int(c)] for c in categories[keep]])
            components[COMPONENT_WEISZ] = style.cosine_term
            g_hidden = np.zeros_like(trace.adapted)
            g_hidden[keep] = _cosine_loss_grad(rows, trace.adapted[keep]) / style.used
            grad += source_backward(e, trace, g_hidden=g_hidden)

    if toggles.weisz and _has_rows(pseudo_batch):
        partner = _require_partner(pseudo_batch, "pseudo_batch")
        trace = source_forward_batch(e, pseudo_batch.inputs, use_adapter=True)
        n = len(pseudo_batch)
        components[COMPONENT_CE] = consensus_ce_loss(trace.probs, partner) / n
        g_probs = _ce_grad_wrt_ps(partner) / n
        grad += source_backward(e, trace, g_logits=softmax_backward(trace.probs, g_probs))

    if toggles.mi and _has_rows(mi_batch):
        partner = _require_partner(mi_batch, "mi_batch")
        trace = source_forward_batch(e, mi_batch.inputs, use_adapter=True)
        value, g_os, _ = mutual_information_gradients(trace.probs, partner)
        components[COMPONENT_MI] = value
        grad += source_backward(e, trace, g_logits=softmax_backward(trace.probs, g_os))

    return LossReport(total=float(sum(components.values())), components=components, grad=grad, counts=counts)


def prompt_objective(
    e: PromptExpert,
    complex_batch: Batch | None,
    mi_batch: Batch | None,
    toggles: LossToggles = LossToggles(),
) -> LossReport:

    """

    L_psc + L_mi for the prompt vector.

    L_psc is the mean KL from unprompted to prompted outputs on complex inputs
    (`psc` toggle); L_mi pairs the live prompted outputs with the source
    expert's cached outputs (`mi` toggle).

    """

    components: dict[str, float] = {}
    grad = np.zeros(trainable_size(e))

    if toggles.psc and _has_rows(complex_batch):
        x = np.asarray(complex_batch.inputs, dtype=np.float64)
        p0 = prompt_forward_batch(e, x, use_prompt=False).probs
        trace = prompt_forward_batch(e, x, use_prompt=True)
        components[COMPONENT_PSC] = _mean_kl(p0, trace.probs)
        g_logits = (trace.probs - p0) / x.shape[0]
        grad += prompt_backward(e, trace, g_logits)

    if toggles.mi and _has_rows(mi_batch):
        partner = _require_partner(mi_batch, "mi_batch")
        trace = prompt_forward_batch(e, mi_batch.inputs, use_prompt=True)
        value, _, g_ov = mutual_information_gradients(partner, trace.probs)
        components[COMPONENT_MI] = value
        grad += prompt_backward(e, trace, softmax_backward(trace.probs, g_ov))

    return LossReport(total=float(sum(components.values())), components=components, grad=grad)


def warmup_adapter_objective(e: SourceExpert, pseudo_batch: Batch) -> LossReport:
    """Per-sample consensus CE with the adapter output as the gradient-carrying side."""
    partner = _require_partner(pseudo_batch, "pseudo_batch")
    trace = source_forward_batch(e, pseudo_batch.inputs, use_adapter=True)
    n = len(pseudo_batch)
    value = consensus_ce_loss(trace.probs, partner) / n
    g_logits = softmax_backward(trace.probs, _ce_grad_wrt_ps(partner) / n)
    return LossReport(
        total=value,
        components={COMPONENT_CE: value},
        grad=source_backward(e, trace, g_logits=g_logits),
    )


def warmup_prompt_objective(e: PromptExpert, pseudo_batch: Batch) -> LossReport:
    """Per-sample consensus CE with the prompted output as the gradient-carrying side."""
    partner = _require_partner(pseudo_batch, "pseudo_batch")
    trace = prompt_forward_batch(e, pseudo_batch.inputs, use_prompt=True)
    n = len(pseudo_batch)
    value = consensus_ce_loss(partner, trace.probs) / n
    g_logits = softmax_backward(trace.probs, _ce_grad_wrt_pv(partner, trace.probs) / n)
    return LossReport(
        total=value,
        components={COMPONENT_CE: value},
        grad=prompt_backward(e, trace, g_logits),
    )
