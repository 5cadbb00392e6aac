#Docstring for src/config module
"""
config.py

Central configuration for the dual-expert adaptation engine and its synthetic
domain-shift benchmark.

This module is intentionally the single source of truth for:
- Paths and report locations
- Numeric tolerances shared by every loss, gradient and center computation
- Expert dimensions (backbone, adapter, prompt)
- Benchmark generation and pretraining parameters
- Adaptation schedule (epochs, learning rates, loss toggles)
- PRNG stream identifiers (one independent stream per pipeline stage)

Design goals
------------
- Reproducibility: every random draw is derived from a seed plus a fixed stream id.
- Maintainability: defaults are edited in one place; modules import them.
- Safety: configs are frozen dataclasses, so a run cannot mutate its own settings.

Contents
--------
1) Paths and project defaults
2) PRNG stream ids
3) NumericsConfig   - eps_log, cosine floor, finite-difference step, Weiszfeld controls
4) ExpertConfig     - d_hidden, d_embed, adapter rank, prompt temperature
5) BenchmarkConfig  - category count, dimensions, shift strength, zero-shot band
6) AdaptConfig      - epochs, warm-up epochs, batch size, learning rates, toggles
7) ABLATION_ROWS    - the seven loss-toggle rows of the ablation table
8) RunConfig        - flat union of the above plus I/O settings (what the CLI parses)

Usage
-----
    from src.config import ADAPT_CONFIG, NUMERICS_CONFIG, RunConfig

    cfg = RunConfig(epochs=5, seed=3)
    adapt_cfg = cfg.adapt_config()
"""


from dataclasses import asdict, dataclass, field, fields #create simple classes for configuration
from pathlib import Path #object-oriented filesystem paths instead of strings



# --- Base paths ----------------------------------------------------------------

# src/ -> project root
BASE_DIR = Path(__file__).resolve().parents[1]

REPORTS_DIR = BASE_DIR / "reports"
REPORTS_RUNS_DIR = REPORTS_DIR / "runs"
LOGS_DIR = BASE_DIR / "logs"

# Ensure key folders exist when running locally (safe no-op if they exist)
for _path in [REPORTS_DIR, REPORTS_RUNS_DIR, LOGS_DIR]:
    _path.mkdir(parents=True, exist_ok=True)

# File names written by the CLI inside the --out directory.
SOURCE_DATASET_FILE = "source.csv"
TARGET_DATASET_FILE = "target.csv"
DOMAIN_TRUTH_FILE = "domain_truth.json"
SOURCE_CHECKPOINT_FILE = "source_expert.json"
PROMPT_CHECKPOINT_FILE = "prompt_expert.json"
ADAPTED_SOURCE_CHECKPOINT_FILE = "source_expert_adapted.json"
ADAPTED_PROMPT_CHECKPOINT_FILE = "prompt_expert_adapted.json"
RUN_REPORT_FILE = "run_report.json"
EPOCHS_CSV_FILE = "epochs.csv"
METRICS_FILE = "metrics.json"
ABLATION_CSV_FILE = "ablation.csv"
ABLATION_RUNS_CSV_FILE = "ablation_runs.csv"
FEATURES_CSV_FILE = "features.csv"

# Significant digits for every serialized real (round-trips 64-bit floats exactly).
FLOAT_SIG_DIGITS = 17



# --- PRNG streams ---------------------------------------------------------------

# Each pipeline stage draws from its own stream: Rng(seed).child(STREAM_*).
STREAM_DOMAINS = 1
STREAM_PRETRAIN = 2
STREAM_PROMPT = 3
STREAM_ADAPTER_INIT = 4
STREAM_ADAPT = 5



# --- Numerics -------------------------------------------------------------------

@dataclass(frozen=True)
class NumericsConfig:

    """

    Tolerances shared by the probability functions, the gradient oracle and the
    Weiszfeld iteration.

    eps_log:
        Floor applied before every logarithm so one-hot inputs stay finite.
    norm_floor:
        Vectors with a norm below this are treated as zero by cosine similarity.
    fd_step:
        Central-difference step of the gradient oracle.
    weiszfeld_floor:
        Lower clamp of the distance denominators in the Weiszfeld update.

    """

    eps_log: float = 1e-12
    norm_floor: float = 1e-12
    fd_step: float = 1e-5
    weiszfeld_floor: float = 1e-9
    weiszfeld_max_iter: int = 100
    weiszfeld_eps_conv: float = 1e-9
    prob_sum_tol: float = 1e-9


NUMERICS_CONFIG = NumericsConfig()



# --- Experts --------------------------------------------------------------------

@dataclass(frozen=True)
class ExpertConfig:

    """

    Shapes and initialization of the two experts.

    adapter_rank:
        Bottleneck width r of the residual adapter on the backbone hidden feature.
    adapter_init_std:
        Standard deviation of the adapter down-projection at initialization
        (the up-projection always starts at zero).
    temperature:
        Logit scale of the prompt expert's cosine classifier.

    """

    d_hidden: int = 32
    d_embed: int = 16
    adapter_rank: int = 8
    adapter_init_std: float = 0.05
    temperature: float = 0.1


EXPERT_CONFIG = ExpertConfig()



# --- Benchmark ------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:

    """

    Synthetic two-domain benchmark.

    Category means sit on a sphere of `radius`; source samples add isotropic
    noise `source_sigma`. Target samples pass fresh source-law draws through
    x -> (I + gamma * G) x + b, then add noise of std gamma * target_noise,
    where G has entries N(0, 1) / sqrt(d_in) and b is a random direction of
    norm gamma * shift_norm. gamma is the single shift-strength knob: at
    gamma = 0 both domains follow the same law.

    zero_shot_band:
        Target accuracy band the prompt expert is calibrated into by bisecting
        the anchor noise.

    """

    num_categories: int = 6
    d_in: int = 16
    samples_per_domain: int = 1200
    radius: float = 4.0
    source_sigma: float = 0.5
    gamma: float = 0.6
    shift_norm: float = 9.0
    target_noise: float = 0.4
    zero_shot_band: tuple[float, float] = (0.70, 0.85)
    bisection_max_iter: int = 40
    bisection_sigma_max: float = 64.0
    pretrain_lr: float = 0.05
    pretrain_momentum: float = 0.9
    pretrain_batch_size: int = 64
    pretrain_max_epochs: int = 200
    pretrain_target_acc: float = 0.99
    pretrain_min_acc: float = 0.90


BENCHMARK_CONFIG = BenchmarkConfig()



# --- Adaptation -----------------------------------------------------------------

@dataclass(frozen=True)
class LossToggles:

    """Switches for the three adaptation losses (ablation rows)."""

    weisz: bool = True
    psc: bool = True
    mi: bool = True

    def any_on(self) -> bool:
        return self.weisz or self.psc or self.mi


@dataclass(frozen=True)
class AdaptConfig:

    """

    Retrieval / augmentation / interaction schedule.

    init_epochs:
        Warm-up epochs of consensus cross-entropy on the pseudo-source set.
        The warm-up runs once, before the first interaction epoch.
    lr_adapter / lr_prompt:
        SGD learning rates of the source adapter and the prompt vector.

    """

    epochs: int = 30
    init_epochs: int = 1
    batch_size: int = 64
    lr_adapter: float = 0.1
    lr_prompt: float = 0.01
    momentum: float = 0.9
    toggles: LossToggles = field(default_factory=LossToggles)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.init_epochs < 0 or self.epochs < self.init_epochs:
            raise ValueError(
                f"Invalid epoch budget: epochs={self.epochs}, init_epochs={self.init_epochs}. "
                "Expected epochs >= init_epochs >= 0."
            )
        if self.batch_size < 1:
            raise ValueError(f"Invalid batch_size: {self.batch_size}. Expected >= 1.")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Invalid momentum: {self.momentum}. Expected 0 <= momentum < 1.")


ADAPT_CONFIG = AdaptConfig()


# Ablation rows in table order: (row name, toggles).
ABLATION_ROWS: tuple[tuple[str, LossToggles], ...] = (
    ("none", LossToggles(weisz=False, psc=False, mi=False)),
    ("mi", LossToggles(weisz=False, psc=False, mi=True)),
    ("psc", LossToggles(weisz=False, psc=True, mi=False)),
    ("weisz", LossToggles(weisz=True, psc=False, mi=False)),
    ("psc+mi", LossToggles(weisz=False, psc=True, mi=True)),
    ("weisz+mi", LossToggles(weisz=True, psc=False, mi=True)),
    ("all", LossToggles(weisz=True, psc=True, mi=True)),
)



# --- Run configuration (CLI) ------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:

    """

    Flat union of every setting the CLI accepts. Field names are the YAML keys.

    Range checks live in `core.validators.validate_run_config`; the YAML reader
    lives in `core.load_data.parse_config`.

    """

    # adaptation
    epochs: int = ADAPT_CONFIG.epochs
    init_epochs: int = ADAPT_CONFIG.init_epochs
    batch_size: int = ADAPT_CONFIG.batch_size
    lr_adapter: float = ADAPT_CONFIG.lr_adapter
    lr_prompt: float = ADAPT_CONFIG.lr_prompt
    momentum: float = ADAPT_CONFIG.momentum
    loss_weisz: bool = True
    loss_psc: bool = True
    loss_mi: bool = True
    seed: int = 0

    # experts
    d_hidden: int = EXPERT_CONFIG.d_hidden
    d_embed: int = EXPERT_CONFIG.d_embed
    adapter_rank: int = EXPERT_CONFIG.adapter_rank
    adapter_init_std: float = EXPERT_CONFIG.adapter_init_std
    temperature: float = EXPERT_CONFIG.temperature

    # benchmark
    num_categories: int = BENCHMARK_CONFIG.num_categories
    d_in: int = BENCHMARK_CONFIG.d_in
    samples_per_domain: int = BENCHMARK_CONFIG.samples_per_domain
    radius: float = BENCHMARK_CONFIG.radius
    source_sigma: float = BENCHMARK_CONFIG.source_sigma
    gamma: float = BENCHMARK_CONFIG.gamma
    shift_norm: float = BENCHMARK_CONFIG.shift_norm
    target_noise: float = BENCHMARK_CONFIG.target_noise
    zero_shot_low: float = BENCHMARK_CONFIG.zero_shot_band[0]
    zero_shot_high: float = BENCHMARK_CONFIG.zero_shot_band[1]
    pretrain_max_epochs: int = BENCHMARK_CONFIG.pretrain_max_epochs

    # ablation
    ablation_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ablation_gammas: tuple[float, ...] = (BENCHMARK_CONFIG.gamma,)
    workers: int = 1

    # i/o
    out_dir: str = str(REPORTS_RUNS_DIR)
    source_checkpoint: str = ""
    prompt_checkpoint: str = ""
    log_level: str = "INFO"
    # empty: stderr only; relative names land under logs/
    log_file: str = ""

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(
            epochs=self.epochs,
            init_epochs=self.init_epochs,
            batch_size=self.batch_size,
            lr_adapter=self.lr_adapter,
            lr_prompt=self.lr_prompt,
            momentum=self.momentum,
            toggles=LossToggles(weisz=self.loss_weisz, psc=self.loss_psc, mi=self.loss_mi),
            seed=self.seed,
        )

    def expert_config(self) -> ExpertConfig:
        return ExpertConfig(
            d_hidden=self.d_hidden,
            d_embed=self.d_embed,
            adapter_rank=self.adapter_rank,
            adapter_init_std=self.adapter_init_std,
            temperature=self.temperature,
        )

    def benchmark_config(self, gamma: float | None = None) -> BenchmarkConfig:
        return BenchmarkConfig(
            num_categories=self.num_categories,
            d_in=self.d_in,
            samples_per_domain=self.samples_per_domain,
            radius=self.radius,
            source_sigma=self.source_sigma,
            gamma=self.gamma if gamma is None else gamma,
            shift_norm=self.shift_norm,
            target_noise=self.target_noise,
            zero_shot_band=(self.zero_shot_low, self.zero_shot_high),
            pretrain_max_epochs=self.pretrain_max_epochs,
        )

    def to_dict(self) -> dict[str, object]:
        data = asdict(self)
        data["ablation_seeds"] = list(self.ablation_seeds)
        data["ablation_gammas"] = list(self.ablation_gammas)
        return data

    def echo(self) -> dict[str, object]:
        """Settings that shape results (I/O and logging keys removed); also the digest input."""
        return {k: v for k, v in self.to_dict().items() if k not in RUN_CONFIG_IO_KEYS}


RUN_CONFIG_KEYS: tuple[str, ...] = tuple(f.name for f in fields(RunConfig))

# Keys that never change numbers: left out of report echoes and config digests.
RUN_CONFIG_IO_KEYS: tuple[str, ...] = (
    "out_dir",
    "source_checkpoint",
    "prompt_checkpoint",
    "log_level",
    "log_file",
    "workers",
)
