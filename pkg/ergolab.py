#!/usr/bin/env python3
"""
ergolab
A numerical laboratory for weighted ergodic averages, rescaled random measures
and quenched homogenization of random walks on random environments.

Usage:
    python ergolab.py <verb> [options]

Verbs:
    gen-env, ergodic-avg, maximal, covering-test, measure-limit, resolvent,
    semigroup, paths, operator-identities, effective-matrix, msd-crosscheck,
    homog-convergence, sep-hydro, accept

Options:
    --config, -c   Experiment config (JSON or TOML)
    --settings     Runtime settings file (default: config/config.json)
    --out-dir, -o  Output directory for reports
    --seed         Override the master seed
    --threads, -t  Worker threads
    --verbose, -v  Enable verbose logging
    --nocache      Disable the effective-matrix cache
    --cleancache   Clear the cache before running

Exit status: 0 when every asserted criterion passes, 1 when one fails,
2 on configuration or numerical errors, 130 when interrupted.
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional

from modules.cache import ResultCache
from modules.errors import ErgolabError
from modules.experiments import KINDS, ExperimentConfig, RunContext, run
from modules.utils import load_config, read_structured, setup_logging

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ergolab', description='Ergodic averages and homogenization lab')
    parser.add_argument('verb', choices=KINDS, help='Experiment to run')
    parser.add_argument('--config', '-c', type=str, help='Experiment config file (JSON or TOML)')
    parser.add_argument('--settings', type=str, help='Runtime settings file')
    parser.add_argument('--out-dir', '-o', type=str, help='Output directory')
    parser.add_argument('--seed', type=int, help='Master seed override')
    parser.add_argument('--threads', '-t', type=int, help='Worker threads')
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    parser.add_argument('--nocache', action='store_true', help='Disable the effective-matrix cache')
    parser.add_argument('--cleancache', action='store_true', help='Clear the cache before running')

    # operator verbs
    parser.add_argument('--env', type=str, help='Environment file (resolvent, semigroup, paths)')
    parser.add_argument('--eps', type=float, help='Scale parameter eps')
    parser.add_argument('--lambda', dest='lam', type=float, help='Resolvent parameter')
    parser.add_argument('--f', type=str, help='Test function, e.g. gaussian:1')
    parser.add_argument('--t', type=float, help='Semigroup time')
    parser.add_argument('--T', type=float, help='Path horizon')
    parser.add_argument('--n', type=int, help='Number of paths')
    parser.add_argument('--instances', type=int, help='Number of random instances')
    return parser


def experiment_dict(args: argparse.Namespace) -> Dict[str, Any]:
    """Experiment config from --config with the verb flags merged into params"""
    data: Dict[str, Any] = {}
    if args.config:
        data = read_structured(Path(args.config))
        if data.get('kind', args.verb) != args.verb:
            raise ErgolabError(f"Config {args.config} is for '{data['kind']}', not '{args.verb}'")
    data = dict(data)
    data['kind'] = args.verb
    params = dict(data.get('params', {}))
    flags = {'env_file': args.env, 'eps': args.eps, 'lambda': args.lam, 'f': args.f, 't': args.t,
             'T': args.T, 'n': args.n, 'instances': args.instances}
    params.update({key: value for key, value in flags.items() if value is not None})
    data['params'] = params
    return data


def print_summary(report) -> None:
    print(f"\n=== {report.kind} complete ===")
    print(f"Rows: {len(report.rows)}")
    print(f"Wall clock: {report.wall_clock:.2f} seconds")
    for name, ok in report.criteria.items():
        print(f"  {name}: {'PASS' if ok else 'FAIL'}")
    print(f"\nReport available in {report.csv_path}")


def write_diagnostics():
    try:
        with open('error_diagnostics.log', 'w') as f:
            f.write("Detailed Error Traceback:\n")
            traceback.print_exc(file=f)
    except Exception as log_error:
        logging.error(f"Could not write error diagnostics: {log_error}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for ergolab"""
    args = build_parser().parse_args(argv)

    # Load runtime settings
    try:
        settings = load_config(Path(args.settings) if args.settings else None)
    except Exception as e:
        print(f"Error loading settings: {e}")
        return EXIT_ERROR

    if args.nocache:
        settings['enable_cache'] = False
    log_level = logging.DEBUG if args.verbose else getattr(logging, str(settings.get('logging_level', 'INFO')), logging.INFO)
    setup_logging(log_level, settings.get('log_file', 'ergolab.log'))

    cache = None
    try:
        config = ExperimentConfig.from_dict(experiment_dict(args)).with_overrides(seed=args.seed)
        if settings.get('enable_cache', True):
            cache = ResultCache(settings)
            if args.cleancache:
                print("Clearing effective-matrix cache...")
                cache.clear()
        ctx = RunContext(out_dir=Path(args.out_dir or settings.get('out_dir', './results')),
                         threads=int(args.threads or settings.get('threads', 1)),
                         include_timings=bool(settings.get('include_timings', False)),
                         cache=cache, settings=settings)
        logging.info(f"ergolab {config.kind}, output directory {ctx.out_dir}, {ctx.threads} threads")
        report = run(config, ctx)
        print_summary(report)
        return EXIT_OK if report.passed else EXIT_FAILED
    except KeyboardInterrupt:
        print("\nRun interrupted by user")
        logging.info("Run interrupted by user")
        return EXIT_INTERRUPTED
    except (ErgolabError, ValueError, OSError) as e:
        print(f"Error: {e}")
        logging.critical(f"{type(e).__name__}: {e}", exc_info=True)
        write_diagnostics()
        return EXIT_ERROR
    finally:
        if cache is not None:
            try:
                cache.shutdown()
            except Exception as shutdown_error:
                logging.error(f"Error during cache shutdown: {shutdown_error}")


if __name__ == "__main__":
    sys.exit(main())
