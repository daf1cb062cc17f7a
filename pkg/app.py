"""
One-bit MIMO-OFDM detection benchmark - command-line entry point

Subcommands:
    ber    paired Monte-Carlo BER sweep over the configured SNR grid
    trace  NLL-per-iteration traces of the iterative detectors at one SNR

Every run writes its CSV output plus a manifest.json holding the resolved
configuration, seed and version string.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, List

from dotenv import load_dotenv

from components.config_loader import (
    ConfigError, apply_environment_overrides, load_experiment_config, preset_configs, write_manifest,
)
from components.harness import run_ber_experiment, run_convergence_trace
from components.models import ExperimentConfig

EXIT_OK = 0
EXIT_IO_ERROR = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the ber and trace subcommands"""
    parser = argparse.ArgumentParser(
        prog='onebit-ofdm',
        description='EM-based one-bit MIMO-OFDM detection benchmarks',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', help='JSON experiment file')
    source.add_argument('--preset', choices=sorted(preset_configs()), help='published figure setting')
    common.add_argument('--seed', type=int, help='override base_seed')
    common.add_argument('--trials', type=int, help='override trials')
    common.add_argument('--out', help='output directory (overrides output_dir)')
    common.add_argument('--workers', type=int, help='worker threads for trials')
    common.add_argument('--verbose', action='store_true', help='log progress at INFO level')

    subparsers.add_parser('ber', parents=[common], help='BER versus SNR sweep')
    trace = subparsers.add_parser('trace', parents=[common], help='convergence traces at one SNR')
    trace.add_argument('--snr-db', type=float, default=5.0, help='SNR of the traced realization (dB)')
    return parser


def configure_logging(verbose: bool) -> None:
    level_name = 'INFO' if verbose else os.getenv('ONEBIT_LOG_LEVEL', 'WARNING').upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """File (or preset) values, then environment, then command-line flags"""
    if args.preset:
        config = preset_configs()[args.preset]
    else:
        config = load_experiment_config(args.config)
    config = apply_environment_overrides(config)

    if args.seed is not None:
        config.base_seed = args.seed
    if args.trials is not None:
        config.trials = args.trials
    if args.workers is not None:
        config.workers = args.workers
    if args.out is not None:
        config.output_dir = args.out

    errors = config.validation_errors()
    if errors:
        raise ConfigError('; '.join(errors))
    return config


def run_ber(config: ExperimentConfig) -> Path:
    output_dir = Path(config.output_dir)
    curve = run_ber_experiment(config, output_dir)
    sigma_table = {f"{snr:g}": values for snr, values in curve.sigma_c_sq.items()}
    write_manifest(output_dir / 'manifest.json', config, 'ber', {'sigma_c_sq': sigma_table})
    return output_dir / 'ber.csv'


def run_trace(config: ExperimentConfig, snr_db: float) -> Path:
    output_dir = Path(config.output_dir)
    traces = run_convergence_trace(config, snr_db, output_dir)
    extra = {
        'snr_db': snr_db,
        'traces': {label: {'iterations': t.iterations, 'converged': t.converged} for label, t in traces.items()},
    }
    write_manifest(output_dir / 'manifest.json', config, 'trace', extra)
    return output_dir


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the requested subcommand, and return the exit status"""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    configure_logging(args.verbose)

    try:
        config = resolve_config(args)
    except ConfigError as e:
        print(f"onebit-ofdm: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == 'ber':
            written = run_ber(config)
        else:
            written = run_trace(config, args.snr_db)
    except OSError as e:
        print(f"onebit-ofdm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO_ERROR

    logging.info(f"Results written to {written}")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(cli_main())
