import argparse
import logging
import sys

from .const import __version__  # noqa
from .pipeline import Pipeline
from .util import ConfigError, StageError

logging.basicConfig(
    datefmt="%H:%M:%S",
    format="%(asctime)s %(levelname)-8s %(name)-12s %(message)s",
)
logger = logging.getLogger(__package__)

EXIT_CONFIG = 2
EXIT_STAGE = 3


def add_common_arguments(parser):
    parser.add_argument("--config", help="path to a roadpatch.yml config file")
    parser.add_argument("--out", help="output directory for every stage")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--workers", type=int, help="sweep worker processes")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Attack an end-to-end driving model with painted road patterns"
    )
    add_common_arguments(parser)
    # Options given after the subcommand only override what they name.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    add_common_arguments(common)

    subparsers = parser.add_subparsers(
        dest="command", metavar="", required=True, title="subcommands"
    )
    for name, summary in (
        ("demonstrate", "Collect expert demonstrations"),
        ("train", "Train the imitation network"),
        ("baseline", "Run every scenario without a pattern"),
        ("sweep", "Sweep the pattern grids"),
    ):
        subparsers.add_parser(name, help=summary, parents=[common])
    analyze = subparsers.add_parser(
        "analyze", help="Summarize sweep reports", parents=[common]
    )
    analyze.add_argument(
        "reports", nargs="*", help="sweep report directories (default: all sweeps)"
    )
    interpret = subparsers.add_parser(
        "interpret", help="Deconvolution case studies", parents=[common]
    )
    interpret.add_argument(
        "--pattern-id", type=int, help="double line pattern to attack with"
    )

    arguments = parser.parse_args(argv)
    if arguments.verbose:
        logger.setLevel(logging.DEBUG)

    try:
        pipeline = Pipeline(
            config_path=arguments.config,
            output_dir=arguments.out,
            seed=arguments.seed,
            workers=arguments.workers,
        )
        if arguments.command == "analyze":
            pipeline.analyze(arguments.reports)
        elif arguments.command == "interpret":
            pipeline.interpret(pattern_id=arguments.pattern_id)
        else:
            getattr(pipeline, arguments.command)()
    except ConfigError as exception:
        logger.error(f"config error: {exception}")
        return EXIT_CONFIG
    except (StageError, ValueError) as exception:
        logger.error(f"{arguments.command} failed: {exception}")
        return EXIT_STAGE
    except Exception:
        logger.exception(f"{arguments.command} failed")
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
