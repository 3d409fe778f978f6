import argparse
import asyncio
import configparser
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from experiments import Experiment, create_experiment_registry
from run_config import RunConfig, unknown_experiment
from runner import EXIT_INVALID, Runner

PACKAGE_CONFIG = Path(__file__).with_name("config.ini")


def load_config():
    config = configparser.ConfigParser()
    config.read([str(PACKAGE_CONFIG), 'config.ini'])
    return config


def setup_logging(config):
    log_file = config["DEFAULT"].get("log_file", "polyvar.log")
    log_level_str = config["DEFAULT"].get("log_level", "INFO").upper()
    log_level = getattr(logging, log_level_str, logging.INFO)

    logging.basicConfig(
        filename=log_file,
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        filemode='a'
    )


def _add_parameter(parser: argparse.ArgumentParser, name: str, spec: Dict) -> None:
    flag = "--" + spec.get("flag", name.replace("_", "-"))
    help_text = spec.get("description", "")
    if "default" in spec:
        default = spec["default"]
        if isinstance(default, list):
            default = ",".join(str(v) for v in default)
        help_text += f" (default: {default})"
    if spec.get("type") == "boolean":
        parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None,
                            help=help_text)
        return
    metavar = "LIST" if spec.get("type") == "array" else name.upper()
    # values stay strings here; RunConfig converts and range-checks them
    parser.add_argument(flag, dest=name, default=None, metavar=metavar,
                        choices=spec.get("enum"), help=help_text)


def build_parser(registry: Dict[str, Experiment]) -> argparse.ArgumentParser:
    """
    Build the command-line parser with one subcommand per experiment.

    Every flag defaults to None so that config.ini and --config values are
    only replaced by flags the user actually passed.
    """
    parser = argparse.ArgumentParser(
        prog="polyvar",
        description="Numerical experiments on polyconvex energies, null Lagrangians and "
                    "generalized maps.")
    subparsers = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT")
    for name, experiment in registry.items():
        sub = subparsers.add_parser(name, help=experiment.description,
                                    description=experiment.description)
        for key, spec in experiment.parameters["properties"].items():
            _add_parameter(sub, key, spec)
        sub.add_argument("--out", dest="output_dir", default=None,
                         help="Output directory (default: results/<experiment>)")
        sub.add_argument("--config", dest="config_file", default=None,
                         help="File of key = value lines applied before the flags")
    return parser


async def async_main(argv: Optional[List[str]] = None,
                     config: Optional[configparser.ConfigParser] = None) -> int:
    """
    Main async entry point for the application.

    Parses the command line, builds the run configuration and runs the
    experiment.

    Returns:
        Process exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if config is None:
        config = load_config()
        setup_logging(config)
    logger = logging.getLogger(__name__)

    registry = create_experiment_registry()
    runner = Runner(registry=registry)

    if argv and not argv[0].startswith("-") and argv[0] not in registry:
        error = unknown_experiment(argv[0], list(registry))
        logger.error(str(error))
        runner.console.print(f"[bold red]✖ Error:[/bold red] {error}")
        return EXIT_INVALID

    parser = build_parser(registry)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code not in (0, None) else 0
    if args.experiment is None:
        parser.print_help()
        return EXIT_INVALID

    overrides = {key: value for key, value in vars(args).items()
                 if key not in ("experiment", "output_dir", "config_file")}
    try:
        run_config = RunConfig.from_sources(config, args.experiment, overrides,
                                            config_file=args.config_file,
                                            output_dir=args.output_dir, registry=registry)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Invalid configuration: {e}")
        runner.console.print(f"[bold red]✖ Error:[/bold red] {e}")
        return EXIT_INVALID

    logger.info(f"Starting {run_config.experiment} with {run_config.parameters}")
    try:
        return await runner.run(run_config)
    except Exception as e:
        logger.error(f"Fatal error in {run_config.experiment}: {e}", exc_info=True)
        raise


def main():
    """
    Synchronous wrapper for the async main function.

    Uses asyncio.run() to manage the event loop lifecycle.
    """
    try:
        code = asyncio.run(async_main())
    except KeyboardInterrupt:
        print("\nInterrupted.")
        code = 130
    except Exception as e:
        print(f"\nFatal error: {e}")
        raise
    sys.exit(code)


if __name__ == "__main__":
    main()
