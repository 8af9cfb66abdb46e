from __future__ import annotations
import argparse
import logging
import os
from typing import List, Optional, Sequence, Tuple

from models.dataset import Dataset, DesignModel, load_dataset_csv, load_sigma_csv
from models.errors import ConfigInvalid, EstimationError, ValidationError
from models.links import get_link
from models.run_config import load_run_config, parse_int_list
from utils.config import EXIT_ESTIMATION, EXIT_OK, EXIT_SELFTEST_FAILED, EXIT_VALIDATION, SEED_ENV_VAR
from utils.paths import get_output_dir
from utils.workers import default_thread_count
from views.cli_parser import build_parser
from views.report_writer import format_summary, write_estimate_report, write_sim_result
from .estimators import estimate
from .selftest import run_selftest
from .simlab import run_experiment

logger = logging.getLogger(__name__)

UNKNOWN_SIGMA_TAGS = ("glm-unknown-sigma", "linear-unknown-sigma")
PROPENSITY_TAGS = ("ce", "mar")


class CliApp:
    """Owns the parsed command line and the worker count; one method per subcommand."""

    def __init__(self, threads: Optional[int] = None):
        self.parser = build_parser()
        self._threads = threads

    @property
    def threads(self) -> int:
        if self._threads is None:
            self._threads = default_thread_count()
            logger.info("Max threads: %d", self._threads)
        return self._threads

    def run(self, argv: Sequence[str]) -> int:
        try:
            args = self.parser.parse_args(list(argv))
        except SystemExit as e:
            # argparse exits 2 on usage errors and 0 on --help
            return EXIT_VALIDATION if e.code else EXIT_OK
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        if getattr(args, "threads", None):
            self._threads = args.threads

        handler = {
            "estimate": self.cmd_estimate,
            "simulate": self.cmd_simulate,
            "selftest": self.cmd_selftest,
        }[args.command]
        try:
            return handler(args)
        except ValidationError as e:
            logger.error("%s: %s", type(e).__name__, e)
            return EXIT_VALIDATION
        except EstimationError as e:
            logger.error("%s: %s", type(e).__name__, e)
            return EXIT_ESTIMATION

    # --- estimate ---

    @staticmethod
    def _design(args: argparse.Namespace, ds: Dataset) -> Optional[DesignModel]:
        if args.estimand in UNKNOWN_SIGMA_TAGS:
            return None
        mu_known_zero = args.estimand == "glm0"
        if args.sigma.strip().lower() == "identity":
            return DesignModel.identity(ds.p, mu_known_zero=mu_known_zero)
        return DesignModel.known(load_sigma_csv(args.sigma, ds.p), mu_known_zero=mu_known_zero)

    @staticmethod
    def _coords(text: str) -> Tuple[int, ...]:
        return parse_int_list(text, "--coords") if text.strip() else ()

    def cmd_estimate(self, args: argparse.Namespace) -> int:
        ds = load_dataset_csv(args.data)
        design = self._design(args, ds)
        link = get_link(args.link)
        link_a = None
        if args.estimand in PROPENSITY_TAGS:
            link_a = link
        elif args.estimand == "gcm":
            link_a = get_link(args.link_a) if args.link_a else link
        elif args.link_a:
            logger.warning("--link-a is ignored for estimand '%s'", args.estimand)

        report = estimate(
            args.estimand, ds, design, link, link_a=link_a,
            coords=self._coords(args.coords), cross_check=args.cross_check,
        )
        write_estimate_report(report.record(), args.out)
        return EXIT_OK

    # --- simulate ---

    @staticmethod
    def _seed_override() -> Optional[int]:
        text = os.environ.get(SEED_ENV_VAR)
        if text is None or not text.strip():
            return None
        try:
            return int(text)
        except ValueError:
            raise ConfigInvalid(f"{SEED_ENV_VAR} must be an integer, got '{text}'") from None

    def cmd_simulate(self, args: argparse.Namespace) -> int:
        run_config = load_run_config(args.config)
        seed = self._seed_override()
        if seed is not None:
            logger.info("Seed %d taken from %s", seed, SEED_ENV_VAR)
        config = run_config.to_sim_config(threads=self.threads, seed=seed)

        result = run_experiment(config, progress=lambda n, r: logger.info("n=%d: %d replicates done", n, r))
        out_dir = get_output_dir(run_config.output_dir)
        write_sim_result(result, out_dir)
        print(format_summary(result.summary))
        return EXIT_OK

    # --- selftest ---

    def cmd_selftest(self, args: argparse.Namespace) -> int:
        results = run_selftest(quick=args.quick, threads=1 if args.quick else self.threads)
        for result in results:
            print(result.line())
        failed: List[str] = [result.name for result in results if not result.passed]
        if failed:
            print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
            return EXIT_SELFTEST_FAILED
        print(f"All {len(results)} checks passed.")
        return EXIT_OK
