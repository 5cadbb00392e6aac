"""
generate_domains.py

Seeded generator for the synthetic two-domain benchmark.

Source samples are Gaussian clusters around category means on a sphere.
Target samples are fresh draws from the same law pushed through a linear mix,
a translation and extra noise, all scaled by one shift-strength knob (gamma).
Category structure survives the shift while a source-trained classifier
degrades, which is what the adaptation pipeline needs to recover from.

The outputs are deterministic given a seed: all draws come from the
STREAM_DOMAINS sub-stream of the run seed, in a fixed order.

Public API
----------
- Dataset                                   (features, guarded labels, domain tag)
- DomainShift / DomainTruth                 (ground-truth side channel)
- generate_benchmark(cfg, seed) -> Benchmark
- generate_domains(cfg, seed) -> (Dataset, Dataset)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..config import BENCHMARK_CONFIG, STREAM_DOMAINS, BenchmarkConfig
from .numerics import Rng
from .validators import TargetLabelAccessError

logger = logging.getLogger(__name__)

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)


@dataclass(frozen=True)
class Dataset:

    """

    Feature matrix plus labels, tagged with its domain.

    `labels` is an access-guarded property: the unlabeled view returned by
    `unlabeled()` raises TargetLabelAccessError on any read. The adaptation
    path only ever receives that view; evaluation keeps the labeled one.

    """

    features: np.ndarray
    _labels: np.ndarray = field(repr=False)
    domain: str
    num_categories: int
    labels_visible: bool = True

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self._labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-D array, got shape {feats.shape}.")
        if labels.shape != (feats.shape[0],):
            raise ValueError(
                f"Length mismatch: {feats.shape[0]} feature rows, {labels.shape[0]} labels."
            )
        if self.domain not in DOMAINS:
            raise ValueError(f"Unknown domain '{self.domain}'. Expected one of {DOMAINS}.")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_categories):
            raise ValueError(f"Labels must lie in [0, {self.num_categories}).")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "_labels", labels)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.features.shape[1])

    @property
    def labels(self) -> np.ndarray:
        if not self.labels_visible:
            raise TargetLabelAccessError(
                f"Labels of the {self.domain} dataset are not available on the adaptation path."
            )
        return self._labels

    def unlabeled(self) -> "Dataset":
        return Dataset(
            features=self.features,
            _labels=self._labels,
            domain=self.domain,
            num_categories=self.num_categories,
            labels_visible=False,
        )


@dataclass(frozen=True)
class DomainShift:

    """x -> mix_matrix @ x + shift, then N(0, noise_sigma^2) noise."""

    mix_matrix: np.ndarray
    shift: np.ndarray
    gamma: float
    noise_sigma: float

    def apply(self, x: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return x @ self.mix_matrix.T + self.shift + self.noise_sigma * noise


@dataclass(frozen=True)
class DomainTruth:

    """

    Ground truth kept out of the adaptation path. Prompt construction reads the
    target-domain means; nothing else does.

    """

    category_means: np.ndarray
    shift: DomainShift

    def to_dict(self) -> dict[str, object]:
        return {
            "category_means": self.category_means.tolist(),
            "mix_matrix": self.shift.mix_matrix.tolist(),
            "shift": self.shift.shift.tolist(),
            "gamma": float(self.shift.gamma),
            "noise_sigma": float(self.shift.noise_sigma),
        }

    def target_means(self) -> np.ndarray:
        """Category means as they appear in the target domain (shift applied, no noise)."""
        return self.category_means @ self.shift.mix_matrix.T + self.shift.shift

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> "DomainTruth":
        return cls(
            category_means=np.asarray(data["category_means"], dtype=np.float64),
            shift=DomainShift(
                mix_matrix=np.asarray(data["mix_matrix"], dtype=np.float64),
                shift=np.asarray(data["shift"], dtype=np.float64),
                gamma=float(data["gamma"]),
                noise_sigma=float(data["noise_sigma"]),
            ),
        )


@dataclass(frozen=True)
class Benchmark:
    source: Dataset
    target: Dataset
    truth: DomainTruth


def _validate_benchmark_config(cfg: BenchmarkConfig) -> None:
    if cfg.num_categories < 2:
        raise ValueError(f"Invalid num_categories: {cfg.num_categories}. Expected >= 2.")
    if cfg.d_in < 2:
        raise ValueError(f"Invalid d_in: {cfg.d_in}. Expected >= 2.")
    if cfg.samples_per_domain < cfg.num_categories:
        raise ValueError(
            f"Invalid samples_per_domain: {cfg.samples_per_domain}. "
            f"Expected >= num_categories ({cfg.num_categories})."
        )
    if cfg.gamma < 0:
        raise ValueError(f"Invalid gamma: {cfg.gamma}. Expected gamma >= 0.")


def _build_category_means(gen: np.random.Generator, cfg: BenchmarkConfig) -> np.ndarray:
    directions = gen.standard_normal((cfg.num_categories, cfg.d_in))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return cfg.radius * directions


def _build_balanced_labels(gen: np.random.Generator, count: int, num_categories: int) -> np.ndarray:
    # counts differ by at most one across categories
    labels = np.arange(count, dtype=np.int64) % num_categories
    return gen.permutation(labels)


def _build_shift(gen: np.random.Generator, cfg: BenchmarkConfig) -> DomainShift:
    # G and b are always drawn so the stream position does not depend on gamma.
    g = gen.standard_normal((cfg.d_in, cfg.d_in)) / np.sqrt(cfg.d_in)
    direction = gen.standard_normal(cfg.d_in)
    direction /= np.linalg.norm(direction)
    return DomainShift(
        mix_matrix=np.eye(cfg.d_in) + cfg.gamma * g,
        shift=cfg.gamma * cfg.shift_norm * direction,
        gamma=cfg.gamma,
        noise_sigma=cfg.gamma * cfg.target_noise,
    )


def _draw_source_law(
    gen: np.random.Generator,
    means: np.ndarray,
    labels: np.ndarray,
    sigma: float,
) -> np.ndarray:
    noise = gen.standard_normal((labels.shape[0], means.shape[1]))
    return means[labels] + sigma * noise


def generate_benchmark(cfg: BenchmarkConfig = BENCHMARK_CONFIG, seed: int = 0) -> Benchmark:

    """

    Build the labeled source set, the labeled target set and the ground truth.

    Draw order (fixed): means, shift, source labels, source noise, target
    labels, target source-law noise, target extra noise.

    """

    _validate_benchmark_config(cfg)
    gen = Rng(seed).child(STREAM_DOMAINS).generator

    means = _build_category_means(gen, cfg)
    shift = _build_shift(gen, cfg)

    source_labels = _build_balanced_labels(gen, cfg.samples_per_domain, cfg.num_categories)
    source_x = _draw_source_law(gen, means, source_labels, cfg.source_sigma)

    target_labels = _build_balanced_labels(gen, cfg.samples_per_domain, cfg.num_categories)
    target_clean = _draw_source_law(gen, means, target_labels, cfg.source_sigma)
    target_x = shift.apply(target_clean, gen.standard_normal(target_clean.shape))

    logger.info(
        "Generated benchmark domains",
        extra={
            "seed": seed,
            "gamma": cfg.gamma,
            "samples_per_domain": cfg.samples_per_domain,
            "num_categories": cfg.num_categories,
        },
    )

    return Benchmark(
        source=Dataset(source_x, source_labels, SOURCE, cfg.num_categories),
        target=Dataset(target_x, target_labels, TARGET, cfg.num_categories),
        truth=DomainTruth(category_means=means, shift=shift),
    )


def generate_domains(cfg: BenchmarkConfig = BENCHMARK_CONFIG, seed: int = 0) -> tuple[Dataset, Dataset]:
    bench = generate_benchmark(cfg, seed)
    return bench.source, bench.target
