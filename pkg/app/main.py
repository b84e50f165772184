"""Command-line entry point."""
import argparse
import logging
import sys
from typing import Optional, Sequence

from app import __version__
from app.config import settings
from app.errors import EXIT_OK, SimulatorError
from app.schemas import FtlPolicy, SystemName
from app.services import scenario
from app.utils.presets import get_all_presets
from app.utils.profiles import get_all_profiles

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drainsim",
        description="Simulate host writeback against an SSD write buffer and FTL.",
    )
    parser.add_argument("--config", help="TOML scenario file or JSON run manifest")
    parser.add_argument("--scenario", choices=get_all_presets(), help="latency-critical preset")
    parser.add_argument("--system", choices=[s.value for s in SystemName])
    parser.add_argument("--ftl-policy", choices=[p.value for p in FtlPolicy])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--duration-s", type=float)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--profile", choices=get_all_profiles())
    parser.add_argument("--sweep", choices=["systems"], help="run vanilla, fd-buf, fd-ftl and fd")
    parser.add_argument("--jobs", type=int, default=settings.SWEEP_JOBS)
    parser.add_argument(
        "--log-level",
        default=settings.LOG_LEVEL,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    """Config keys set explicitly on the command line."""
    overrides: dict = {}
    if args.scenario:
        overrides["workload"] = {"preset": args.scenario}
    for key, value in (
        ("system", args.system),
        ("ftl_policy", args.ftl_policy),
        ("seed", args.seed),
        ("duration_s", args.duration_s),
        ("output_dir", args.out),
        ("profile", args.profile),
    ):
        if value is not None:
            overrides[key] = value
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    logger.info(f"Starting {settings.APP_NAME} {__version__}")
    try:
        config = scenario.load_config(args.config, overrides_from_args(args))
        if args.sweep:
            scenario.sweep(config, jobs=max(1, args.jobs))
        else:
            scenario.run(config)
    except SimulatorError as exc:
        logger.error(f"{type(exc).__name__}: {exc}", exc_info=True)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
