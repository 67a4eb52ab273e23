import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from src import __version__
from src.config import AppConfig
from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import DEFAULT_ONSET, TimeIndex
from src.estimation.sdid import BOOTSTRAP_MODES
from src.ingest.exposure import ExposureVariant
from src.services.pipeline import PipelineService
from src.simulation.simlab import ESTIMATORS
from src.utils.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ESTIMATION = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Argument errors exit with the validation code instead of argparse's 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _onset(text: str) -> TimeIndex:
    try:
        return TimeIndex.parse(text)
    except PanelValidationError as e:
        raise argparse.ArgumentTypeError(str(e))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="output directory (default: PANELDID_OUTPUT_DIR or ./output)")
    parser.add_argument("--threads", type=int, help="worker cap for parallel fits")
    parser.add_argument("--seed", type=int, help="bootstrap / simulation seed")


def _add_treatment(parser: argparse.ArgumentParser, continuous: bool = True) -> None:
    parser.add_argument("--panel", required=True, help="panel CSV: unit,year,month,value,n_obs")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--treatment", help="assignment CSV: unit,group")
    source.add_argument("--exposure", help="exposure scores CSV; treated = above-median occupations")
    parser.add_argument("--variant", choices=[v.value for v in ExposureVariant], default="overall")
    parser.add_argument("--onset", type=_onset, default=DEFAULT_ONSET, help="first treated month, YYYY-MM")
    if continuous:
        parser.add_argument("--unweighted", action="store_true", help="do not weight cells by n_obs")
        parser.add_argument("--continuous", action="store_true", help="use exposure x post (needs --exposure)")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="paneldid", description="Occupation-panel DiD, event-study and SDiD toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="aggregate micro records into outcome panels")
    ingest.add_argument("--micro", required=True)
    ingest.add_argument("--deflator", help="CPI CSV year,month,index; enables the earnings panel")
    _add_common(ingest)

    exposure = commands.add_parser("exposure", help="occupation exposure scores from task records")
    exposure.add_argument("--tasks", required=True)
    exposure.add_argument("--variant", choices=[v.value for v in ExposureVariant], default="overall")
    exposure.add_argument("--top", type=int, default=6, help="size of the most-exposed list")
    _add_common(exposure)

    for name in ("did", "event-study"):
        sub = commands.add_parser(name, help=f"TWFE {name}")
        _add_treatment(sub)
        _add_common(sub)

    sdid = commands.add_parser("sdid", help="per-unit synthetic difference-in-differences")
    _add_treatment(sdid, continuous=False)
    sdid.add_argument("--nboot", type=int, help="bootstrap replicates (default: PANELDID_NBOOT or 1000)")
    sdid.add_argument("--bootstrap-mode", choices=BOOTSTRAP_MODES, default="units")
    sdid.add_argument("--ridge", type=float, default=0.0, help="unit-weight ridge penalty")
    sdid.add_argument("--intercept", action="store_true", help="demeaned weight matching")
    sdid.add_argument("--bins", type=int, default=20, help="bins of the tau histogram")
    _add_common(sdid)

    simulate = commands.add_parser("simulate", help="Monte Carlo comparison of DiD and SDiD")
    simulate.add_argument("--config", required=True, help="key=value DGP file")
    simulate.add_argument("--reps", type=int, default=200)
    simulate.add_argument("--estimators", nargs="+", choices=ESTIMATORS, default=list(ESTIMATORS))
    simulate.add_argument("--nboot", type=int, default=200)
    _add_common(simulate)

    trends = commands.add_parser("trends", help="raw outcome trends by exposure quartile")
    trends.add_argument("--panel", required=True)
    trends.add_argument("--exposure", required=True)
    trends.add_argument("--variant", choices=[v.value for v in ExposureVariant], default="overall")
    trends.add_argument("--onset", type=_onset, default=DEFAULT_ONSET)
    _add_common(trends)
    return parser


def _resolve_config(args: argparse.Namespace) -> AppConfig:
    config = AppConfig.from_env()
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "nboot", None) is not None and args.command == "sdid":
        overrides["n_boot"] = args.nboot
    if args.out is not None:
        overrides["output_dir"] = args.out
    config = replace(config, **overrides)
    if config.threads < 1:
        raise PanelValidationError(f"--threads must be >= 1, got {config.threads}")
    if config.n_boot < 1:
        raise PanelValidationError(f"--nboot must be >= 1, got {config.n_boot}")
    return config


def _dispatch(service: PipelineService, args: argparse.Namespace):
    variant = ExposureVariant(args.variant) if hasattr(args, "variant") else ExposureVariant.OVERALL
    if args.command == "ingest":
        return service.ingest(args.micro, args.deflator)
    if args.command == "exposure":
        return service.exposure(args.tasks, variant, args.top)
    if args.command in ("did", "event-study"):
        run = service.did if args.command == "did" else service.event_study
        return run(args.panel, args.treatment, args.exposure, variant, args.onset,
                   weighted=not args.unweighted, continuous=args.continuous)
    if args.command == "sdid":
        return service.sdid(args.panel, args.treatment, args.exposure, variant, args.onset,
                            n_boot=service.config.n_boot, bootstrap_mode=args.bootstrap_mode,
                            ridge=args.ridge, intercept=args.intercept, bins=args.bins)
    if args.command == "simulate":
        return service.simulate(args.config, args.reps, args.estimators, n_boot=args.nboot)
    return service.trends(args.panel, args.exposure, variant, args.onset)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the command and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = _resolve_config(args)
        setup_logging(config.log_level, config.log_file)
        outputs = _dispatch(PipelineService(config), args)
    except PanelValidationError as e:
        logger.error(f"Invalid input: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as e:
        logger.error(f"Estimation failed: {str(e)}")
        print(f"estimation error: {str(e)}", file=sys.stderr)
        return EXIT_ESTIMATION

    for name, path in outputs.items():
        logger.info(f"{args.command} {name}: {path}")
    return EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
