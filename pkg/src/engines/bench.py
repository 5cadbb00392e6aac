# Docstring for src/engines/bench module
"""
bench.py

Benchmark engine: source-expert pretraining, prompt-expert construction,
evaluation metrics, the loss ablation runner and hidden-feature export.

Design goals
------------
- Everything is seeded: pretraining, prompt construction and adapter init each
  draw from their own sub-stream of the run seed.
- Ground truth (category means, target labels for calibration) is consumed only
  while building the benchmark; the adaptation path sees the unlabeled view.
- Summary outputs are pandas DataFrames ready for the export helpers.

Inputs
------
- Dataset objects from `core.generate_domains`
- RunConfig / BenchmarkConfig / ExpertConfig from `config`

Outputs
-------
- SourceExpert / PromptExpert ready for adaptation
- Metrics (per expert, consensus, per category)
- Ablation table (one row per loss-toggle row) and long-form per-run table

Public API
----------
- pretrain_source(source, cfg, seed, expert_cfg) -> SourceExpert
- build_prompt_expert(category_means, cfg, seed, calibration, expert_cfg) -> PromptExpert
- evaluate(source, prompt, dataset) -> Metrics
- evaluate_outputs(os_outputs, ov_outputs, labels, num_categories) -> Metrics
- prepare_pair(cfg, seed, gamma=None) -> PreparedPair
- run_ablation(cfg, seeds, gammas=None, workers=1) -> AblationResult
- export_hidden_features(source_expert, source, target) -> pd.DataFrame
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from ..config import (
    ABLATION_ROWS,
    BENCHMARK_CONFIG,
    EXPERT_CONFIG,
    STREAM_ADAPTER_INIT,
    STREAM_PRETRAIN,
    STREAM_PROMPT,
    BenchmarkConfig,
    ExpertConfig,
    RunConfig,
)
from ..core.generate_domains import Benchmark, Dataset, generate_benchmark
from ..core.numerics import OptimizerState, Rng, sgd_momentum_step, softmax_rows
from ..core.validators import BenchmarkConstructionError
from .experts import (
    PromptExpert,
    SourceExpert,
    prompt_forward_batch,
    source_forward_batch,
)
from .rain import run_adaptation

logger = logging.getLogger(__name__)


# --- Metrics -------------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:

    """

    Accuracies of both experts and of their consensus (argmax of the averaged
    distributions). per_category_acc holds None for categories with no samples.

    """

    acc_source_expert: float
    acc_prompt_expert: float
    acc_consensus: float
    per_category_acc: tuple[float | None, ...]

    def to_dict(self) -> dict[str, object]:
        return {
            "acc_source_expert": self.acc_source_expert,
            "acc_prompt_expert": self.acc_prompt_expert,
            "acc_consensus": self.acc_consensus,
            "per_category_acc": list(self.per_category_acc),
        }

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> Metrics:
        def real(value: object) -> float:
            return float("nan") if value is None else float(value)

        return cls(
            acc_source_expert=real(data["acc_source_expert"]),
            acc_prompt_expert=real(data["acc_prompt_expert"]),
            acc_consensus=real(data["acc_consensus"]),
            per_category_acc=tuple(None if v is None else float(v) for v in data["per_category_acc"]),
        )


def evaluate_outputs(os_outputs, ov_outputs, labels, num_categories: int) -> Metrics:
    s = np.asarray(os_outputs, dtype=np.float64)
    v = np.asarray(ov_outputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != v.shape or s.shape[0] != y.shape[0]:
        raise ValueError(
            f"Shape mismatch: os {s.shape}, ov {v.shape}, labels {y.shape}."
        )
    if y.size == 0:
        raise ValueError("Cannot evaluate an empty dataset.")

    consensus = np.argmax(0.5 * (s + v), axis=1)
    hits = consensus == y
    per_category: list[float | None] = []
    for c in range(num_categories):
        mask = y == c
        per_category.append(float(hits[mask].mean()) if mask.any() else None)

    return Metrics(
        acc_source_expert=float((np.argmax(s, axis=1) == y).mean()),
        acc_prompt_expert=float((np.argmax(v, axis=1) == y).mean()),
        acc_consensus=float(hits.mean()),
        per_category_acc=tuple(per_category),
    )


def evaluate(source: SourceExpert, prompt: PromptExpert, dataset: Dataset) -> Metrics:
    """Score both experts (adapter on, prompt on) and their consensus on labeled data."""
    os_outputs = source_forward_batch(source, dataset.features, use_adapter=True).probs
    ov_outputs = prompt_forward_batch(prompt, dataset.features, use_prompt=True).probs
    return evaluate_outputs(os_outputs, ov_outputs, dataset.labels, dataset.num_categories)


# --- Source pretraining -----------------------------------------------------------------------

def _mlp_forward(blocks: dict[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.tanh(x @ blocks["w1"].T + blocks["b1"])
    return h, softmax_rows(h @ blocks["w2"].T + blocks["b2"])


def _mlp_gradients(blocks: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    # mean cross-entropy against one-hot labels
    h, p = _mlp_forward(blocks, x)
    g_logits = p.copy()
    g_logits[np.arange(y.shape[0]), y] -= 1.0
    g_logits /= y.shape[0]
    g_pre = (g_logits @ blocks["w2"]) * (1.0 - h**2)
    return {
        "w1": g_pre.T @ x,
        "b1": g_pre.sum(axis=0),
        "w2": g_logits.T @ h,
        "b2": g_logits.sum(axis=0),
    }


_MLP_ORDER = ("w1", "b1", "w2", "b2")


def _pack(blocks: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([blocks[name].ravel() for name in _MLP_ORDER])


def _unpack(flat: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name in _MLP_ORDER:
        size = like[name].size
        out[name] = flat[offset : offset + size].reshape(like[name].shape)
        offset += size
    return out


def _accuracy(blocks: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    _, p = _mlp_forward(blocks, x)
    return float((np.argmax(p, axis=1) == y).mean())


def pretrain_source(
    source: Dataset,
    cfg: BenchmarkConfig = BENCHMARK_CONFIG,
    seed: int = 0,
    expert_cfg: ExpertConfig = EXPERT_CONFIG,
) -> SourceExpert:

    """

    Train the backbone and label head on labeled source data, then freeze them
    behind a fresh adapter.

    Minibatch SGD with momentum on mean cross-entropy, until the training
    accuracy reaches cfg.pretrain_target_acc or cfg.pretrain_max_epochs passes.

    Raises:
        BenchmarkConstructionError: final source accuracy below cfg.pretrain_min_acc.

    """

    gen = Rng(seed).child(STREAM_PRETRAIN).generator
    x = source.features
    y = source.labels
    d_in, d_hidden, c = source.d_in, expert_cfg.d_hidden, source.num_categories

    blocks = {
        "w1": gen.standard_normal((d_hidden, d_in)) / np.sqrt(d_in),
        "b1": np.zeros(d_hidden),
        "w2": gen.standard_normal((c, d_hidden)) / np.sqrt(d_hidden),
        "b2": np.zeros(c),
    }
    params = _pack(blocks)
    opt = OptimizerState.zeros(params.size, cfg.pretrain_lr, cfg.pretrain_momentum)

    acc = _accuracy(blocks, x, y)
    epochs_run = 0
    for epoch in range(cfg.pretrain_max_epochs):
        if acc >= cfg.pretrain_target_acc:
            break
        order = gen.permutation(x.shape[0])
        for start in range(0, order.shape[0], cfg.pretrain_batch_size):
            idx = order[start : start + cfg.pretrain_batch_size]
            grads = _mlp_gradients(blocks, x[idx], y[idx])
            params, opt = sgd_momentum_step(params, _pack(grads), opt)
            blocks = _unpack(params, blocks)
        acc = _accuracy(blocks, x, y)
        epochs_run = epoch + 1

    logger.info("Source pretraining finished", extra={"seed": seed, "epochs": epochs_run, "source_acc": acc})
    if acc < cfg.pretrain_min_acc:
        raise BenchmarkConstructionError(
            f"Source pretraining reached only {acc:.3f} accuracy after {epochs_run} epochs "
            f"(minimum {cfg.pretrain_min_acc}). The benchmark config is too hard."
        )

    return SourceExpert.with_adapter(
        blocks["w1"],
        blocks["b1"],
        blocks["w2"],
        blocks["b2"],
        gen=Rng(seed).child(STREAM_ADAPTER_INIT).generator,
        rank=expert_cfg.adapter_rank,
        init_std=expert_cfg.adapter_init_std,
    )


# --- Prompt expert construction -----------------------------------------------------------------

def _random_encoder(gen: np.random.Generator, d_embed: int, d_in: int) -> np.ndarray:
    # orthonormal rows (d_embed <= d_in) or orthonormal columns (d_embed > d_in)
    q, _ = np.linalg.qr(gen.standard_normal((max(d_embed, d_in), min(d_embed, d_in))))
    return q.T if d_embed <= d_in else q


def _anchors(encoder_u: np.ndarray, means: np.ndarray, noise: np.ndarray, sigma: float) -> np.ndarray:
    raw = means @ encoder_u.T + sigma * noise
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _zero_shot_accuracy(expert: PromptExpert, dataset: Dataset) -> float:
    probs = prompt_forward_batch(expert, dataset.features, use_prompt=False).probs
    return float((np.argmax(probs, axis=1) == dataset.labels).mean())


def build_prompt_expert(
    category_means: np.ndarray,
    cfg: BenchmarkConfig = BENCHMARK_CONFIG,
    seed: int = 0,
    calibration: Dataset | None = None,
    expert_cfg: ExpertConfig = EXPERT_CONFIG,
    anchor_sigma: float | None = None,
) -> PromptExpert:

    """

    Frozen random encoder plus noisy category anchors; psi starts at zero.

    anchors_c = normalize(E mu_c + sigma * eta_c), eta fixed by the seed.
    The benchmark passes the target-domain means (DomainTruth.target_means), so
    the noise-free anchors already follow the shift and the zero-shot errors
    come from the anchor noise.
    sigma is chosen by bisection on [0, cfg.bisection_sigma_max] so that
    zero-shot accuracy on `calibration` lands in cfg.zero_shot_band. Without a
    calibration set (or with an explicit anchor_sigma) no search happens.

    Raises:
        BenchmarkConstructionError: band not reachable within the bisection cap.

    """

    means = np.asarray(category_means, dtype=np.float64)
    gen = Rng(seed).child(STREAM_PROMPT).generator
    d_in = means.shape[1]
    encoder = _random_encoder(gen, expert_cfg.d_embed, d_in)
    noise = gen.standard_normal((means.shape[0], expert_cfg.d_embed))

    def make(sigma: float) -> PromptExpert:
        return PromptExpert(
            encoder_u=encoder,
            anchors=_anchors(encoder, means, noise, sigma),
            prompt=np.zeros(expert_cfg.d_embed),
            temperature=expert_cfg.temperature,
        )

    if anchor_sigma is not None:
        return make(anchor_sigma)
    if calibration is None:
        return make(0.0)

    low, high = cfg.zero_shot_band
    acc = _zero_shot_accuracy(make(0.0), calibration)
    if acc < low:
        raise BenchmarkConstructionError(
            f"Zero-shot accuracy with noise-free anchors is {acc:.3f}, below the band [{low}, {high}]."
        )
    if acc <= high:
        return make(0.0)

    lo, hi = 0.0, cfg.bisection_sigma_max
    acc_hi = _zero_shot_accuracy(make(hi), calibration)
    if low <= acc_hi <= high:
        return make(hi)
    if acc_hi > high:
        raise BenchmarkConstructionError(
            f"Zero-shot accuracy stays at {acc_hi:.3f} even with anchor noise {hi}; band [{low}, {high}] unreachable."
        )

    for step in range(cfg.bisection_max_iter):
        mid = 0.5 * (lo + hi)
        acc = _zero_shot_accuracy(make(mid), calibration)
        logger.debug("Anchor noise bisection", extra={"step": step, "sigma": mid, "zero_shot_acc": acc})
        if low <= acc <= high:
            logger.info("Prompt expert calibrated", extra={"seed": seed, "sigma": mid, "zero_shot_acc": acc})
            return make(mid)
        if acc > high:
            lo = mid
        else:
            hi = mid

    raise BenchmarkConstructionError(
        f"Anchor noise bisection did not reach the band [{low}, {high}] in {cfg.bisection_max_iter} steps."
    )


# --- Benchmark assembly -------------------------------------------------------------------------

@dataclass(frozen=True)
class PreparedPair:
    benchmark: Benchmark
    source_expert: SourceExpert
    prompt_expert: PromptExpert


def prepare_pair(cfg: RunConfig, seed: int, gamma: float | None = None) -> PreparedPair:
    """Generate the domains, pretrain the source expert and calibrate the prompt expert."""
    bench_cfg = cfg.benchmark_config(gamma)
    expert_cfg = cfg.expert_config()
    benchmark = generate_benchmark(bench_cfg, seed)
    source_expert = pretrain_source(benchmark.source, bench_cfg, seed, expert_cfg)
    prompt_expert = build_prompt_expert(
        benchmark.truth.target_means(),
        bench_cfg,
        seed,
        calibration=benchmark.target,
        expert_cfg=expert_cfg,
    )
    return PreparedPair(benchmark=benchmark, source_expert=source_expert, prompt_expert=prompt_expert)


# --- Ablation ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationResult:
    table: pd.DataFrame
    runs: pd.DataFrame


def _ablation_unit(cfg: RunConfig, seed: int, gamma: float) -> list[dict[str, object]]:
    pair = prepare_pair(cfg, seed, gamma)
    target = pair.benchmark.target
    unlabeled = target.unlabeled()

    records: list[dict[str, object]] = []
    for row_name, toggles in ABLATION_ROWS:
        source = pair.source_expert.copy()
        prompt = pair.prompt_expert.copy()
        adapt_cfg = replace(cfg.adapt_config(), toggles=toggles, seed=seed)
        report = run_adaptation(
            source,
            prompt,
            unlabeled,
            adapt_cfg,
            evaluate_fn=lambda s, p: evaluate(s, p, target),
        )
        m = report.final_metrics
        records.append(
            {
                "row": row_name,
                "gamma": float(gamma),
                "seed": int(seed),
                "acc_source_expert": m.acc_source_expert,
                "acc_prompt_expert": m.acc_prompt_expert,
                "acc_consensus": m.acc_consensus,
            }
        )
    logger.info("Ablation unit finished", extra={"seed": seed, "gamma": gamma})
    return records


def build_ablation_frame(runs: pd.DataFrame) -> pd.DataFrame:

    """

    Aggregate per-run records into the ablation table, one row per toggle row in
    table order. Standard deviations are population (ddof=0), so a single run
    reports 0.

    """

    order = [name for name, _ in ABLATION_ROWS]
    toggles = dict(ABLATION_ROWS)
    grouped = runs.groupby("row", sort=False)
    table = pd.DataFrame(
        {
            "row": order,
            "weisz": [toggles[name].weisz for name in order],
            "psc": [toggles[name].psc for name in order],
            "mi": [toggles[name].mi for name in order],
            "n_runs": [int(grouped.size().get(name, 0)) for name in order],
            "mean_acc_consensus": [grouped["acc_consensus"].mean().get(name, np.nan) for name in order],
            "std_acc_consensus": [grouped["acc_consensus"].std(ddof=0).get(name, np.nan) for name in order],
            "mean_acc_source_expert": [grouped["acc_source_expert"].mean().get(name, np.nan) for name in order],
            "mean_acc_prompt_expert": [grouped["acc_prompt_expert"].mean().get(name, np.nan) for name in order],
        }
    )
    return table


def run_ablation(
    cfg: RunConfig,
    seeds: tuple[int, ...] | list[int],
    gammas: tuple[float, ...] | list[float] | None = None,
    workers: int = 1,
) -> AblationResult:

    """

    Run every loss-toggle row for every (gamma, seed) pair.

    One benchmark and one expert pair are built per (gamma, seed) and shared by
    the seven rows. With workers > 1 the pairs run in a process pool; results
    are merged keyed by (row, gamma, seed), so output order never depends on
    completion order.

    Returns:
        AblationResult(table, runs): the aggregated table (mean/std consensus
        accuracy per row over all runs) and the long-form per-run table.

    """

    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("run_ablation needs at least one seed.")
    gammas = [float(g) for g in (gammas if gammas is not None else cfg.ablation_gammas)]
    if not gammas:
        raise ValueError("run_ablation needs at least one gamma.")

    units = [(gamma, seed) for gamma in gammas for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_ablation_unit, cfg, seed, gamma) for gamma, seed in units]
            results = [future.result() for future in futures]
    else:
        results = [_ablation_unit(cfg, seed, gamma) for gamma, seed in units]

    row_rank = {name: i for i, (name, _) in enumerate(ABLATION_ROWS)}
    records = sorted(
        (record for unit in results for record in unit),
        key=lambda r: (row_rank[r["row"]], r["gamma"], r["seed"]),
    )
    runs = pd.DataFrame.from_records(records)
    return AblationResult(table=build_ablation_frame(runs), runs=runs)


# --- Feature export -------------------------------------------------------------------------------

def export_hidden_features(
    source_expert: SourceExpert,
    source: Dataset,
    target: Dataset,
) -> pd.DataFrame:

    """

    Hidden features for external embedding plots.

    Views: source data without adapter, target data without adapter, target
    data with adapter. Columns: domain, view, label, f0..f{d_hidden-1}.

    """

    views = (
        (source, "frozen", False),
        (target, "frozen", False),
        (target, "adapted", True),
    )
    frames = []
    for dataset, view, use_adapter in views:
        hidden = source_forward_batch(source_expert, dataset.features, use_adapter=use_adapter).adapted
        frame = pd.DataFrame(hidden, columns=[f"f{i}" for i in range(hidden.shape[1])])
        frame.insert(0, "label", dataset.labels)
        frame.insert(0, "view", view)
        frame.insert(0, "domain", dataset.domain)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
