"""
Self-test suite behind `momglm selftest`: quadrature closed forms, Stein
derivative checks, U-statistic enumeration oracles, forward/inverse round trips
and the m2 consistency report. Full mode adds the Monte-Carlo identity suite.
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.special import ndtr

from models.dataset import Dataset, DesignModel
from models.errors import MomglmError
from models.gauss_link_moments import BivariateIndexLaw, IndexLaw, eval_bivariate, eval_fk, eval_fk_grad, link_moments
from models.links import IDENTITY, LOG_LINEAR, LOGISTIC, PROBIT, SHIFTED_LOGISTIC, builtin_link_names, get_link
from models.moment_systems import (
    forward_ce,
    forward_gcm,
    forward_glm,
    forward_glm0,
    forward_glm_moments,
    forward_mar,
    glm_jacobian,
    invert_glm,
    invert_glm0,
    reduce_glm_moments,
    solve_ce,
    solve_gcm,
    solve_mar,
)
from models.ustat_moments import Estimand, collect_moments, naive_collect_moments
from .stein_oracles import run_oracle_suite

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_TOL = 1e-6
ROUND_TRIP_TOL = 1e-7
ENUMERATION_TOL = 1e-12
QUICK_INSTANCES = 20
FULL_INSTANCES = 100
ORACLE_SAMPLES = 1_000_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "[PASS]" if self.passed else "[FAIL]"
        return f"{tag} {self.name}" + (f": {self.detail}" if self.detail else "")


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(b))


# --- Quadrature ---

def check_closed_forms() -> CheckResult:
    worst = []
    for lam, gamma2 in ((-1.0, 0.5), (0.0, 1.0), (0.7, 2.0)):
        law = IndexLaw(lam, gamma2)
        exact = math.exp(lam + gamma2 / 2.0)
        for k, value in enumerate(link_moments(LOG_LINEAR, law)):
            if not _close(value, exact, 1e-10):
                worst.append(f"log-linear f_{k}{(lam, gamma2)} = {value:.12g}, expected {exact:.12g}")

        s = 1.0 + gamma2
        f0 = float(ndtr(lam / math.sqrt(s)))
        f1 = math.exp(-lam * lam / (2.0 * s)) / math.sqrt(2.0 * math.pi * s)
        got0, got1 = link_moments(PROBIT, law, (0, 1))
        if abs(got0 - f0) > 1e-8 or abs(got1 - f1) > 1e-8:
            worst.append(f"probit f_0/f_1 at {(lam, gamma2)}")

        half = eval_fk(LOGISTIC, 0, IndexLaw(0.0, gamma2))
        if abs(half - 0.5) > 1e-10:
            worst.append(f"logistic f_0(0, {gamma2}) = {half:.12g}")
    return CheckResult("quadrature closed forms", not worst, "; ".join(worst))


def check_stein_derivatives() -> CheckResult:
    """d f_k / d lam = f_{k+1} and d f_k / d gamma2 = f_{k+2} / 2 against central differences."""
    failures = []
    for name in builtin_link_names():
        link = get_link(name)
        for lam in np.linspace(-2.0, 2.0, 5):
            for gamma2 in np.linspace(0.05, 4.0, 5):
                for k in (0, 1):
                    d_lam, d_gamma2 = eval_fk_grad(link, k, IndexLaw(lam, gamma2))
                    fd_lam = (
                        eval_fk(link, k, IndexLaw(lam + FD_STEP, gamma2))
                        - eval_fk(link, k, IndexLaw(lam - FD_STEP, gamma2))
                    ) / (2.0 * FD_STEP)
                    fd_gamma2 = (
                        eval_fk(link, k, IndexLaw(lam, gamma2 + FD_STEP))
                        - eval_fk(link, k, IndexLaw(lam, gamma2 - FD_STEP))
                    ) / (2.0 * FD_STEP)
                    if not (_close(d_lam, fd_lam, FD_TOL) and _close(d_gamma2, fd_gamma2, FD_TOL)):
                        failures.append(f"{name} k={k} at ({lam:g}, {gamma2:g})")
    return CheckResult("Stein derivative chain", not failures, ", ".join(failures[:5]))


def check_probit_determinant() -> CheckResult:
    failures = []
    for lam in (-1.0, 0.0, 0.5, 1.5):
        for gamma2 in (0.1, 1.0, 3.0):
            s = 1.0 + gamma2
            exact = (2.0 * math.pi * s) ** -1.5 * math.exp(-3.0 * lam * lam / (2.0 * s)) / s
            det = float(np.linalg.det(glm_jacobian(PROBIT, IndexLaw(lam, gamma2))))
            if abs(det - exact) > 1e-8:
                failures.append(f"({lam:g}, {gamma2:g}): {det:.10g} vs {exact:.10g}")
    return CheckResult("probit Jacobian determinant", not failures, ", ".join(failures))


# --- U-statistics ---

def _random_instance(rng: np.random.Generator) -> Tuple[Dataset, np.ndarray]:
    n = int(rng.integers(3, 51))
    p = int(rng.integers(1, 9))
    root = rng.normal(size=(p, p))
    sigma = root @ root.T + p * np.eye(p)
    X = rng.normal(size=(n, p)) + rng.normal(size=p)
    A = (rng.random(n) < 0.5).astype(float)
    return Dataset(X=X, Y=rng.normal(size=n), A=A), sigma


def check_ustat_enumeration(instances: int = QUICK_INSTANCES, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(instances):
        ds, sigma = _random_instance(rng)
        design = DesignModel.known(sigma)
        coords = (1, ds.p)
        for estimand in Estimand:
            cross_check = estimand == Estimand.MAR
            fast = collect_moments(ds, design, estimand, coords, cross_check).as_dict()
            slow = naive_collect_moments(ds, sigma, estimand, coords, cross_check)
            for name, value in slow.items():
                if not _close(fast[name], value, ENUMERATION_TOL):
                    failures.append(f"instance {i} {estimand.value}:{name}")
    return CheckResult(
        f"U-statistic enumeration ({instances} instances)", not failures, ", ".join(failures[:5]),
    )


# --- Round trips ---

def _max_error(truth: Dict[str, float], solution: Dict[str, float]) -> float:
    return max(abs(solution[key] - value) for key, value in truth.items())


def check_glm_round_trips() -> CheckResult:
    failures = []
    for link in (LOGISTIC, PROBIT):
        for gamma2 in (0.3, 1.0, 2.5):
            solved = invert_glm0(link, forward_glm0(link, gamma2))["gamma2"]
            if abs(solved - gamma2) > ROUND_TRIP_TOL:
                failures.append(f"glm0 {link.name} gamma2={gamma2}: {solved:.10g}")
            for lam in (-1.0, 0.0, 0.8):
                m1, m2 = forward_glm(link, IndexLaw(lam, gamma2))
                report = invert_glm(link, m1, m2)
                error = _max_error({"lambda": lam, "gamma2": gamma2}, report.solution)
                if error > ROUND_TRIP_TOL:
                    failures.append(f"glm {link.name} ({lam}, {gamma2}): error {error:.3e}")
    return CheckResult("GLM round trips", not failures, ", ".join(failures))


CE_POINTS = (
    {"psi": 0.7, "lambda_alpha": 0.3, "gamma2_alpha": 1.0, "lambda_beta": 0.2, "gamma_alpha_beta": 0.4},
    {"psi": -0.4, "lambda_alpha": -0.5, "gamma2_alpha": 0.6, "lambda_beta": 0.5, "gamma_alpha_beta": -0.2},
)
MAR_POINTS = (
    {"psi": 0.5, "lambda_alpha": 0.3, "gamma2_alpha": 0.8, "gamma_alpha_beta": 0.3},
    {"psi": 0.0, "lambda_alpha": -0.2, "gamma2_alpha": 1.5, "gamma_alpha_beta": -0.4},
)
GCM_POINTS = (
    {"lambda_alpha": 0.2, "gamma2_alpha": 1.0, "lambda_beta": -0.3, "gamma2_beta": 0.7, "gamma_alpha_beta": 0.3},
    {"lambda_alpha": -0.4, "gamma2_alpha": 0.5, "lambda_beta": 0.1, "gamma2_beta": 1.2, "gamma_alpha_beta": -0.2},
)


def check_staged_round_trips() -> CheckResult:
    m_x2 = 0.5
    failures = []
    for params in CE_POINTS:
        report = solve_ce(forward_ce(LOGISTIC, params, m_x2), LOGISTIC)
        error = _max_error(params, report.solution)
        if error > ROUND_TRIP_TOL:
            failures.append(f"ce error {error:.3e}")
    for params in MAR_POINTS:
        report = solve_mar(forward_mar(SHIFTED_LOGISTIC, params, m_x2), SHIFTED_LOGISTIC)
        error = _max_error(params, report.solution)
        if error > ROUND_TRIP_TOL or abs(report.alt_residual) > ROUND_TRIP_TOL:
            failures.append(f"mar error {error:.3e}, alt residual {report.alt_residual:.3e}")
    for link_y in (LOGISTIC, IDENTITY):
        for params in GCM_POINTS:
            report = solve_gcm(forward_gcm(LOGISTIC, link_y, params, m_x2), LOGISTIC, link_y)
            law = BivariateIndexLaw(
                params["lambda_alpha"], params["lambda_beta"],
                params["gamma2_alpha"], params["gamma2_beta"], params["gamma_alpha_beta"],
            )
            truth = dict(params, psi=eval_bivariate(LOGISTIC, link_y, law))
            error = _max_error(truth, report.solution)
            if error > ROUND_TRIP_TOL:
                failures.append(f"gcm ({link_y.name}) error {error:.3e}")
    return CheckResult("staged CE/MAR/GCM round trips", not failures, ", ".join(failures))


# --- m2 consistency report ---

def m2_consistency_report(link=LOGISTIC, lam: float = 0.4, gamma2: float = 1.3, m_x2: float = 0.5) -> List[CheckResult]:
    """
    Three checks that the second component of the general-mean GLM map is
    f_1^2 gamma2 and not f_1 gamma2.
    """
    law = IndexLaw(lam, gamma2)
    f1 = eval_fk(link, 1, law)
    squared, linear = f1 * f1 * gamma2, f1 * gamma2
    results = []

    # substituting the moment chain into the reduction
    _, m2 = reduce_glm_moments(forward_glm_moments(link, law, m_x2))
    results.append(CheckResult(
        "m2 by substitution", _close(m2, squared, 1e-10),
        f"reduced m2 = {m2:.10g}; f1^2 gamma2 = {squared:.10g}; f1 gamma2 = {linear:.10g}",
    ))

    # zero-mean reduction
    zero_mean = forward_glm(link, IndexLaw(0.0, gamma2))[1]
    results.append(CheckResult(
        "m2 at zero mean", _close(zero_mean, forward_glm0(link, gamma2), 1e-12),
        f"m2(0, {gamma2:g}) = {zero_mean:.10g}; zero-mean map = {forward_glm0(link, gamma2):.10g}",
    ))

    # Jacobian entry d m2 / d gamma2 = f_1 (f_1 + gamma2 f_3)
    entry = glm_jacobian(link, law)[1, 1]

    def m2_sq(g):
        return eval_fk(link, 1, IndexLaw(lam, g)) ** 2 * g

    def m2_lin(g):
        return eval_fk(link, 1, IndexLaw(lam, g)) * g

    fd_sq = (m2_sq(gamma2 + FD_STEP) - m2_sq(gamma2 - FD_STEP)) / (2.0 * FD_STEP)
    fd_lin = (m2_lin(gamma2 + FD_STEP) - m2_lin(gamma2 - FD_STEP)) / (2.0 * FD_STEP)
    results.append(CheckResult(
        "m2 Jacobian entry", _close(entry, fd_sq, FD_TOL),
        f"J[1,1] = {entry:.8g}; d(f1^2 g)/dg = {fd_sq:.8g}; d(f1 g)/dg = {fd_lin:.8g}",
    ))
    return results


# --- Runner ---

def _guarded(name: str, check: Callable[[], CheckResult]) -> CheckResult:
    try:
        return check()
    except MomglmError as e:
        return CheckResult(name, False, f"{type(e).__name__}: {e}")


def check_oracle_suite(threads: int = 1, samples: int = ORACLE_SAMPLES) -> CheckResult:
    results = run_oracle_suite(samples=samples, threads=threads)
    failing = [f"{r.identity} (z = {r.z:.2f})" for r in results if not r.passes()]
    return CheckResult(f"Stein identity MC suite ({len(results)} checks)", not failing, ", ".join(failing))


def run_selftest(quick: bool = False, threads: int = 1) -> List[CheckResult]:
    """All checks in order; quick mode skips the Monte-Carlo suite and uses fewer enumeration instances."""
    instances = QUICK_INSTANCES if quick else FULL_INSTANCES
    checks = [
        ("quadrature closed forms", check_closed_forms),
        ("Stein derivative chain", check_stein_derivatives),
        ("probit Jacobian determinant", check_probit_determinant),
        ("U-statistic enumeration", lambda: check_ustat_enumeration(instances)),
        ("GLM round trips", check_glm_round_trips),
        ("staged CE/MAR/GCM round trips", check_staged_round_trips),
    ]
    if not quick:
        checks.append(("Stein identity MC suite", lambda: check_oracle_suite(threads)))

    results = [_guarded(name, check) for name, check in checks]
    try:
        results.extend(m2_consistency_report())
    except MomglmError as e:
        results.append(CheckResult("m2 consistency report", False, f"{type(e).__name__}: {e}"))
    for result in results:
        logger.debug(result.line())
    return results
