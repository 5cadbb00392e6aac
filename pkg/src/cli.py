"""
cli.py

Command-line entry point for the dual-expert adaptation benchmark.

Subcommands
-----------
generate   write source.csv, target.csv and domain_truth.json
pretrain   train the source expert, calibrate the prompt expert, write both checkpoints
adapt      run the adaptation pipeline; write run_report.json, epochs.csv and the
           adapted checkpoints
eval       score an expert pair on the target set; write metrics.json
ablate     run every loss-toggle row over the configured seeds; write ablation.csv
features   export hidden features for external plots; write features.csv

Flags
-----
--config <path>   YAML config (flat RunConfig keys); defaults apply when omitted
--out <dir>       run directory (overrides `out_dir`)
--seed <u64>      overrides `seed`

Exit status is 0 on success and 2 on any validation, numeric or missing-file
error (one line on stderr).

Usage
-----
    python -m src.cli generate --out reports/runs/demo --seed 3
    python -m src.cli pretrain --out reports/runs/demo --seed 3
    python -m src.cli adapt --out reports/runs/demo --seed 3 --config run.yaml
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from .config import (
    ADAPTED_PROMPT_CHECKPOINT_FILE,
    ADAPTED_SOURCE_CHECKPOINT_FILE,
    DOMAIN_TRUTH_FILE,
    FEATURES_CSV_FILE,
    METRICS_FILE,
    PROMPT_CHECKPOINT_FILE,
    SOURCE_CHECKPOINT_FILE,
    SOURCE_DATASET_FILE,
    TARGET_DATASET_FILE,
    RunConfig,
)
from .core.generate_domains import generate_benchmark
from .core.load_data import load_dataset, load_domain_truth, parse_config
from .core.log_config import configure_logging
from .core.validators import (
    BenchmarkConstructionError,
    ConfigParseError,
    FrozenParameterError,
    NumericFaultError,
    TargetLabelAccessError,
)
from .engines.bench import (
    build_prompt_expert,
    evaluate,
    export_hidden_features,
    pretrain_source,
    run_ablation,
)
from .engines.rain import run_adaptation
from .outputs.build_run_report import write_ablation_outputs, write_metrics, write_run_outputs
from .outputs.checkpoints import KIND_PROMPT, KIND_SOURCE, load_expert, save_expert
from .outputs.export_utils import config_digest, write_dataset_csv, write_df_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2

_HANDLED_ERRORS = (
    ConfigParseError,
    NumericFaultError,
    BenchmarkConstructionError,
    TargetLabelAccessError,
    FrozenParameterError,
    FileNotFoundError,
    ValueError,
)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_paths(cfg: RunConfig, out: Path, adapted: bool) -> tuple[Path, Path]:
    if adapted:
        return out / ADAPTED_SOURCE_CHECKPOINT_FILE, out / ADAPTED_PROMPT_CHECKPOINT_FILE
    source = Path(cfg.source_checkpoint) if cfg.source_checkpoint else out / SOURCE_CHECKPOINT_FILE
    prompt = Path(cfg.prompt_checkpoint) if cfg.prompt_checkpoint else out / PROMPT_CHECKPOINT_FILE
    return source, prompt


# --- Subcommands --------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    bench = generate_benchmark(cfg.benchmark_config(), cfg.seed)
    paths = {
        "source": write_dataset_csv(bench.source, out / SOURCE_DATASET_FILE, seed=cfg.seed, digest=digest),
        "target": write_dataset_csv(bench.target, out / TARGET_DATASET_FILE, seed=cfg.seed, digest=digest),
        "truth": write_json(
            {"seed": cfg.seed, "config_digest": digest, **bench.truth.to_dict()},
            out / DOMAIN_TRUTH_FILE,
        ),
    }
    for label, path in paths.items():
        print(f"Wrote {label} to: {path}")
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    source = load_dataset(out / SOURCE_DATASET_FILE)
    target = load_dataset(out / TARGET_DATASET_FILE)
    truth = load_domain_truth(out / DOMAIN_TRUTH_FILE)

    bench_cfg = cfg.benchmark_config()
    expert_cfg = cfg.expert_config()
    source_expert = pretrain_source(source, bench_cfg, cfg.seed, expert_cfg)
    prompt_expert = build_prompt_expert(
        truth.target_means(), bench_cfg, cfg.seed, calibration=target, expert_cfg=expert_cfg
    )

    source_path, prompt_path = _checkpoint_paths(cfg, out, adapted=False)
    print(f"Wrote source expert to: {save_expert(source_expert, source_path, seed=cfg.seed, digest=digest)}")
    print(f"Wrote prompt expert to: {save_expert(prompt_expert, prompt_path, seed=cfg.seed, digest=digest)}")
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    target = load_dataset(out / TARGET_DATASET_FILE)
    source_path, prompt_path = _checkpoint_paths(cfg, out, adapted=False)
    source_expert = load_expert(source_path, kind=KIND_SOURCE)
    prompt_expert = load_expert(prompt_path, kind=KIND_PROMPT)

    report = run_adaptation(
        source_expert,
        prompt_expert,
        target.unlabeled(),
        cfg.adapt_config(),
        evaluate_fn=lambda s, p: evaluate(s, p, target),
        config_echo=cfg.echo(),
    )

    paths = write_run_outputs(report, out, digest=digest)
    paths["source_adapted"] = save_expert(
        source_expert, out / ADAPTED_SOURCE_CHECKPOINT_FILE, seed=cfg.seed, digest=digest
    )
    paths["prompt_adapted"] = save_expert(
        prompt_expert, out / ADAPTED_PROMPT_CHECKPOINT_FILE, seed=cfg.seed, digest=digest
    )
    for label, path in paths.items():
        print(f"Wrote {label} to: {path}")
    if report.final_metrics is not None:
        print(f"Final consensus accuracy: {report.final_metrics.acc_consensus:.4f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    adapted = bool(getattr(args, "adapted", False))
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    target = load_dataset(out / TARGET_DATASET_FILE)
    source_path, prompt_path = _checkpoint_paths(cfg, out, adapted=adapted)
    metrics = evaluate(
        load_expert(source_path, kind=KIND_SOURCE),
        load_expert(prompt_path, kind=KIND_PROMPT),
        target,
    )
    path = write_metrics(
        metrics,
        out / METRICS_FILE,
        seed=cfg.seed,
        digest=digest,
        extra={"dataset": target.domain, "pair": "adapted" if adapted else "pretrained"},
    )
    print(f"Wrote metrics to: {path}")
    print(f"Consensus accuracy: {metrics.acc_consensus:.4f}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    result = run_ablation(cfg, cfg.ablation_seeds, cfg.ablation_gammas, workers=cfg.workers)
    paths = write_ablation_outputs(result, out, seed=cfg.seed, digest=digest)
    for label, path in paths.items():
        print(f"Wrote {label} to: {path}")
    print(result.table[["row", "mean_acc_consensus", "std_acc_consensus"]].to_string(index=False))
    return EXIT_OK


def cmd_features(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    adapted = bool(getattr(args, "adapted", False))
    out = _out_dir(cfg)
    digest = config_digest(cfg.echo())
    source = load_dataset(out / SOURCE_DATASET_FILE)
    target = load_dataset(out / TARGET_DATASET_FILE)
    source_path, _ = _checkpoint_paths(cfg, out, adapted=adapted)
    frame = export_hidden_features(load_expert(source_path, kind=KIND_SOURCE), source, target)
    path = write_df_csv(frame, out / FEATURES_CSV_FILE, seed=cfg.seed, digest=digest)
    print(f"Wrote features to: {path}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace | None], int]] = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "features": cmd_features,
}


# --- Argument parsing --------------------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Dual-expert source-free domain adaptation on a synthetic benchmark."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config file")
    common.add_argument("--out", type=Path, default=None, help="Run directory for inputs and outputs")
    common.add_argument("--seed", type=_seed, default=None, help="Deterministic RNG seed (overrides config)")

    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common])
        if name in ("eval", "features"):
            sub.add_argument(
                "--adapted",
                action="store_true",
                help="Use the adapted checkpoints written by `adapt`",
            )
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)

    try:
        cfg = parse_config(args.config, overrides=overrides)
        configure_logging(cfg.log_level, cfg.log_file or None)
        return COMMANDS[args.command](cfg, args)
    except _HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
