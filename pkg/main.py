"""
Command-line entry point for adaptorx

    adaptorx generate-data --config <path> [--out <dir>] [--seed <n>]
    adaptorx train         --config <path> [--out <dir>] [--seed <n>]
    adaptorx evaluate      --config <path> [--out <dir>] [--checkpoint <dir>]
    adaptorx grid          --config <dir or file> [--out <dir>] [--seed <n>] [--jobs <n>]
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from config.experiment import ExperimentConfig
from config.settings import DEFAULT_OUTPUT_DIR, LOG_LEVEL, RESULTS_FILE
from experiments.runner import evaluate_checkpoint, generate_data, load_grid, run_experiment, run_grid
from utils.errors import AdaptorError

COMMANDS = ['generate-data', 'train', 'evaluate', 'grid']


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptorx", description="Objective-centric multi-task training")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="Config file, or a directory of *.cfg files for grid")
    parser.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="Training seed (overrides seed); corpus seed for generate-data (overrides data.seed)")
    parser.add_argument("--jobs", type=int, default=1, help="Parallel experiments for grid")
    parser.add_argument("--checkpoint", default=None, help="Checkpoint directory for evaluate")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    changes = {}
    if args.out is not None:
        changes['output_dir'] = args.out
    if args.seed is not None:
        changes['data_seed' if args.command == 'generate-data' else 'seed'] = args.seed
    return config.replace(**changes) if changes else config


def _load_grid(args: argparse.Namespace) -> List[ExperimentConfig]:
    path = Path(args.config)
    configs = load_grid(path) if path.is_dir() else [ExperimentConfig.from_file(path)]
    if args.seed is not None:
        configs = [config.replace(seed=args.seed) for config in configs]
    return configs


def run(args: argparse.Namespace) -> None:
    if args.command == 'generate-data':
        config = _load_config(args)
        generate_data(config, args.out or Path(config.output_dir) / "data")
    elif args.command == 'train':
        outcome = run_experiment(_load_config(args))
        logger.info(f"results written to {Path(outcome.output_dir) / RESULTS_FILE}")
    elif args.command == 'evaluate':
        config = _load_config(args)
        metrics = evaluate_checkpoint(config, args.checkpoint, Path(config.output_dir) / config.experiment / "evaluation.tsv")
        for name, value in metrics.items():
            logger.info(f"{name} = {value:.4f}")
    else:
        run_grid(_load_grid(args), args.out or DEFAULT_OUTPUT_DIR, jobs=max(1, args.jobs))


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)

    logger.remove()
    logger.add(sys.stderr, level=LOG_LEVEL)

    try:
        run(args)
    except AdaptorError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
