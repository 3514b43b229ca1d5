#!/usr/bin/env python3
"""
proxdiff CLI

Command-line interface for training, sampling, experiments and verification.

Exit codes: 0 success, 1 usage or parse error, 2 failed run or experiment
cell, 3 verification failure.
"""

import sys
import argparse
import json
import logging
from pathlib import Path

from .config import PGMConfig
from .experiments import BUILTIN_SPECS, builtin_spec, load_spec
from .reports import write_json
from .services.experiment import ExperimentService
from .services.sampling import SamplingService
from .services.training import TrainingService
from .services.verification import SUITES, VerificationService
from ..core.errors import ConfigError, ProxDiffError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUN_FAILED = 2
EXIT_VERIFY_FAILED = 3

logger = logging.getLogger("proxdiff.cli")


def _load_config(args) -> PGMConfig:
    config = PGMConfig(args.config)
    if getattr(args, 'seed', None) is not None:
        config.set('sampler.seed', args.seed)
        config.set('train.seed', args.seed)
    if getattr(args, 'chains', None) is not None:
        config.set('sampler.chains', args.chains)
    if getattr(args, 'workers', None) is not None:
        config.set('sampler.workers', args.workers)
    if getattr(args, 'out', None):
        config.set('output.dir', args.out)
    if getattr(args, 'emit_hist', None) is not None:
        config.set('output.emit_hist', args.emit_hist)
    return config


def _print_result(result) -> None:
    if result.get('success'):
        print(json.dumps(result.get('data'), indent=2, default=str)[:4000])
    else:
        print(f"Error: {result.get('error')}", file=sys.stderr)


def cmd_train(args):
    """Train a proximal network by Moreau score matching."""
    config = _load_config(args)
    service = TrainingService({
        'train': config.get_section('train'),
        'prior': config.get_section('prior'),
        'schedule': config.get_section('schedule'),
        'out': config.get('output.dir'),
    })
    result = service.run()
    _print_result(result)
    return EXIT_OK if result['success'] else EXIT_RUN_FAILED


def cmd_sample(args):
    """Draw samples with one sampler."""
    config = _load_config(args)
    service = SamplingService({
        'schedule': config.get_section('schedule'),
        'potential': config.get_section('potential'),
        'sampler': config.get_section('sampler'),
        'params': args.params or config.get('sampler.params'),
        'out': config.get('output.dir'),
        'emit_hist': config.get('output.emit_hist'),
    })
    result = service.run()
    _print_result(result)
    return EXIT_OK if result['success'] else EXIT_RUN_FAILED


def cmd_experiment(args):
    """Run an experiment spec (file or built-in)."""
    if bool(args.config) == bool(args.builtin):
        print("Error: give exactly one of --config or --builtin", file=sys.stderr)
        return EXIT_USAGE
    seeds = [args.seed] if args.seed is not None else None
    if args.builtin:
        spec = builtin_spec(args.builtin, chains=args.chains, seeds=seeds)
    else:
        spec = load_spec(args.config)
        if args.chains is not None:
            spec.chains = args.chains
        if seeds is not None:
            spec.seeds = seeds
    if args.emit_hist is not None:
        spec.emit_hist = args.emit_hist
    service = ExperimentService({'spec': spec, 'workers': args.workers or 1, 'out': args.out})
    result = service.run()
    report = result.get('data') or {}
    print(f"Experiment {spec.name}: {len(report.get('cells', []))} cells, {report.get('failures', 0)} failed")
    for check in report.get('checks', []):
        flag = {True: '✓', False: '✗', None: '?'}[check.get('within_band')]
        print(f"  {flag} {check.get('kind')} {check.get('label', '')} {check.get('metric', '')}")
    return EXIT_OK if result['success'] else EXIT_RUN_FAILED


def cmd_verify(args):
    """Run the invariant suites and write a pass/fail report."""
    service = VerificationService({'suites': args.suites})
    result = service.run()
    report = result.get('data') or {}
    out = Path(args.out or 'runs') / 'verify_report.json'
    write_json(out, dict(report, success=result['success']))
    for entry in report.get('checks', []):
        flag = '✓' if entry['passed'] else '✗'
        print(f"  {flag} {entry['suite']}/{entry['name']}")
    print(f"\n{report.get('total', 0) - report.get('failed', 0)}/{report.get('total', 0)} checks passed")
    print(f"Report: {out}")
    return EXIT_OK if result['success'] else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='proxdiff',
        description='Proximal diffusion sampling toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Train a proximal network on the configured prior
  proxdiff train --config run.json --out runs/train

  # Sample the truncated normal with the default configuration
  proxdiff sample --out runs/sample --chains 10000 --emit-hist 50

  # Reproduce a built-in study
  proxdiff experiment --builtin table1-feasibility --out runs --workers 4

  # Run every invariant suite
  proxdiff verify --out runs
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable debug logging')

    subparsers = parser.add_subparsers(dest='command', help='Commands')

    train_parser = subparsers.add_parser('train', help='Train a proximal network')
    train_parser.add_argument('--config', help='Path to configuration file')
    train_parser.add_argument('--out', help='Output directory')
    train_parser.add_argument('--seed', type=int, help='Random seed')
    train_parser.set_defaults(func=cmd_train)

    sample_parser = subparsers.add_parser('sample', help='Draw samples')
    sample_parser.add_argument('--config', help='Path to configuration file')
    sample_parser.add_argument('--out', help='Output directory')
    sample_parser.add_argument('--seed', type=int, help='Random seed')
    sample_parser.add_argument('--chains', type=int, help='Number of chains')
    sample_parser.add_argument('--workers', type=int, help='Worker threads')
    sample_parser.add_argument('--params', help='Trained parameter file (prox "learned")')
    sample_parser.add_argument('--emit-hist', type=int, dest='emit_hist', help='Write a histogram with this many bins')
    sample_parser.set_defaults(func=cmd_sample)

    exp_parser = subparsers.add_parser('experiment', help='Run an experiment')
    exp_parser.add_argument('--config', help='Path to experiment spec')
    exp_parser.add_argument('--builtin', choices=sorted(BUILTIN_SPECS), help='Built-in experiment')
    exp_parser.add_argument('--out', help='Output directory')
    exp_parser.add_argument('--seed', type=int, help='Run a single seed')
    exp_parser.add_argument('--chains', type=int, help='Number of chains per cell')
    exp_parser.add_argument('--workers', type=int, help='Worker threads')
    exp_parser.add_argument('--emit-hist', type=int, dest='emit_hist', help='Histogram bins per cell')
    exp_parser.set_defaults(func=cmd_experiment)

    verify_parser = subparsers.add_parser('verify', help='Run the invariant suites')
    verify_parser.add_argument('--out', help='Output directory')
    verify_parser.add_argument('--suites', nargs='*', choices=sorted(SUITES), help='Suites to run')
    verify_parser.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    """Main entry point for CLI."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        return args.func(args) or EXIT_OK
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ProxDiffError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
