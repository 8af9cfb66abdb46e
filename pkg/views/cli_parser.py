from __future__ import annotations
import argparse

from controllers.estimators import ESTIMATOR_TAGS
from models.links import builtin_link_names


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momglm",
        description="Method-of-moments estimators for high-dimensional GLM functionals.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    # --- estimate ---
    estimate = commands.add_parser("estimate", help="estimate a functional from a CSV dataset")
    estimate.add_argument("--data", required=True, help="CSV with columns x1..xp, y and optionally a")
    estimate.add_argument("--estimand", required=True, choices=ESTIMATOR_TAGS)
    estimate.add_argument("--link", required=True,
                          help=f"outcome link ({', '.join(builtin_link_names())}); "
                               "the propensity link for ce and mar")
    estimate.add_argument("--link-a", dest="link_a", default=None,
                          help="link of the A index for gcm (defaults to --link)")
    estimate.add_argument("--sigma", default="identity",
                          help="covariance CSV (p x p, no header) or 'identity'")
    estimate.add_argument("--coords", default="", help="comma-separated 1-based coordinates, e.g. 1,2")
    estimate.add_argument("--cross-check", dest="cross_check", action="store_true",
                          help="mar: also collect m_XAY_XA and report the alternative identity's residual")
    estimate.add_argument("--out", default=None, help="output CSV (stdout when omitted)")

    # --- simulate ---
    simulate = commands.add_parser("simulate", help="run a simulation campaign from a config file")
    simulate.add_argument("--config", required=True, help="INI campaign file")
    simulate.add_argument("--threads", type=_positive_int, default=None,
                          help="worker threads (default: available parallelism)")

    # --- selftest ---
    selftest = commands.add_parser("selftest", help="run the numerical self-checks")
    selftest.add_argument("--quick", action="store_true", help="skip the Monte-Carlo suites")
    selftest.add_argument("--threads", type=_positive_int, default=None)

    return parser
