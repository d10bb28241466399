import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from cli.config import (SEED_MAX, EnvironmentDefaults, ExperimentConfig, environment_defaults,
                        load_config)
from cli.report import emit_report
from cli.suites import SuiteResult, get_suite
from shared.errors import AuditFailureError, ConfigurationError
from shared.serialization import save_json, write_csv

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="ricci-lab",
                                     description="Run the Ricci flow verification suites from a JSON config.")
    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="Run the suite named in a config file.")
    run.add_argument("config", type=Path, help="Path to the JSON experiment config.")
    run.add_argument("--out", type=Path, default=None, help="Output directory, overrides output_dir.")
    run.add_argument("--seed", type=int, default=None, help="Random seed, overrides the config seed.")
    run.add_argument("--strict", action="store_true",
                     help="Abort on the first failed a-priori audit instead of reporting it.")
    return parser.parse_args(argv)


def apply_overrides(config: ExperimentConfig, out: Optional[Path], seed: Optional[int],
                    strict: bool) -> ExperimentConfig:
    if seed is not None and not 0 <= seed < SEED_MAX:
        raise ConfigurationError(f"--seed must lie in [0, 2^64), got {seed}")
    return replace(config,
                   output_dir=config.output_dir if out is None else Path(out),
                   seed=config.seed if seed is None else seed,
                   strict=config.strict or strict)


def write_results(config: ExperimentConfig, result: SuiteResult) -> Path:
    """results.csv (one row per check) and manifest.json (every fitted constant once)"""
    out_dir = config.output_dir
    write_csv(out_dir / "results.csv", result.to_frame(), description="suite checks")
    manifest = {
        "suite": config.suite,
        "config": config.to_dict(),
        "passed": result.passed,
        "failures": result.failures,
        "constants": {name: constant.to_dict() for name, constant in sorted(result.constants.items())},
        "checks": [c.to_dict() for c in result.checks],
        "artifacts": result.artifacts,
    }
    return save_json(out_dir / "manifest.json", manifest)


def run_experiment(config: ExperimentConfig) -> int:
    """Run one configured suite and write its artifacts; returns the process exit status"""
    print(f"[ricci-lab] suite={config.suite} seed={config.seed} m={config.resolution.m} "
          f"dt={config.resolution.dt} strict={config.strict}")
    logger.debug("config: %s", config.to_dict())
    try:
        suite = get_suite(config.suite)
        result = suite.run(config, config.output_dir)
    except ConfigurationError as e:
        print(f"[error] {e}")
        return 2
    except AuditFailureError as e:
        print(f"[ricci-lab] FAIL: audit {e.audit} at stage {e.stage}, cell {e.cell}: {e}")
        return 1

    write_results(config, result)
    emit_report(result.series, config.output_dir)
    result.display()

    if result.failures:
        print(f"[ricci-lab] FAIL ({len(result.failures)} failed checks)")
        for failure in result.failures:
            print(f"  - {failure}")
        return 1
    print(f"[ricci-lab] OK (checks={len(result.checks)}, constants={len(result.constants)}, "
          f"output={config.output_dir})")
    return 0


def configure_logging(defaults: EnvironmentDefaults):
    level = getattr(logging, defaults.log_level, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    try:
        defaults = environment_defaults()
    except ConfigurationError as e:
        print(f"[error] {e}")
        return 2
    configure_logging(defaults)

    try:
        config = load_config(args.config, defaults)
        config = apply_overrides(config, args.out, args.seed, args.strict)
    except ConfigurationError as e:
        print(f"[error] {args.config}: {e}")
        return 2
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
