from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from models.dataset import Dataset, DesignMode, DesignModel
from models.errors import (
    ConfigInvalid,
    DegenerateF1,
    IndexOutOfRange,
    InsufficientSamples,
    NonBinaryA,
    RankDeficientDesign,
    SingularGram,
    SingularSigma,
)
from models.gauss_link_moments import IndexLaw, link_moments
from models.links import LinkSpec
from models.moment_systems import (
    SolveOptions,
    SolveReport,
    invert_glm,
    invert_glm0,
    reduce_glm_moments,
    solve_ce,
    solve_gcm,
    solve_mar,
)
from models.ustat_moments import (
    Estimand,
    MomentSet,
    beta_name,
    collect_moments,
    nu_name,
    ustat1_direction,
    ustat1_mean,
    ustat2_bilinear,
)
from utils.config import DIVISION_FLOOR

logger = logging.getLogger(__name__)

# Estimator tags accepted by `estimate`
GLM_TAGS = ("glm0", "glm")
ESTIMATOR_TAGS = ("glm0", "glm", "glm-unknown-sigma", "linear-unknown-sigma", "ce", "mar", "gcm")


def coefficient_name(j: int) -> str:
    return f"beta_{j}"


# --- Report ---

@dataclass
class EstimateReport:
    estimand: str
    parameters: Dict[str, float]
    moments_used: MomentSet
    solver: SolveReport
    mode: DesignMode = DesignMode.KNOWN_SIGMA
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.solver.projected:
            self.warnings.append("projected: input moments outside the forward map's range were clamped")
        self.warnings.extend(self.solver.notes)
        self.warnings.extend(self.moments_used.notes)
        for warning in self.warnings:
            logger.warning("%s: %s", self.estimand, warning)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def record(self) -> Dict[str, Any]:
        """Flat key-value view used by the CLI output."""
        row: Dict[str, Any] = {"estimand": self.estimand, "mode": self.mode.value}
        row.update(self.parameters)
        row.update({f"moment:{name}": value for name, value in self.moments_used.as_dict().items()})
        row["residual_norm"] = self.solver.residual_norm
        row["iterations"] = self.solver.iterations
        row["projected"] = self.solver.projected
        row["jacobian_condition"] = self.solver.jacobian_condition
        if self.solver.linear_condition is not None:
            row["linear_condition"] = self.solver.linear_condition
        if self.solver.alt_residual is not None:
            row["alt_residual"] = self.solver.alt_residual
        row["warnings"] = "; ".join(self.warnings)
        return row


def _require_known(design: Optional[DesignModel]) -> None:
    if design is None:
        raise ConfigInvalid("estimator needs a known covariance, no design given")
    if design.mode != DesignMode.KNOWN_SIGMA:
        raise ConfigInvalid(f"estimator needs a known covariance, design is in {design.mode.value} mode")


def _check_f1(f1: float) -> None:
    if abs(f1) < DIVISION_FLOOR:
        raise DegenerateF1(f"|f_1| = {abs(f1):.3e} at the solved index law; coefficients not identified")


def _check_binary(ds: Dataset, estimand: str) -> None:
    if ds.A is None:
        return
    if not np.all((ds.A == 0.0) | (ds.A == 1.0)):
        raise NonBinaryA(f"estimand '{estimand}' requires a in {{0, 1}}")


# --- GLM, known covariance ---

def estimate_glm(
        ds: Dataset,
        design: DesignModel,
        link: LinkSpec,
        coords: Sequence[int] = (),
        opts: SolveOptions = SolveOptions(),
) -> EstimateReport:
    """
    Quadratic form gamma2_beta (and lambda_beta when the mean is unknown) plus
    the requested coordinates beta_j.
    """
    _require_known(design)
    if design.mu_known_zero:
        ms = collect_moments(ds, design, Estimand.GLM0, coords)
        solver = invert_glm0(link, ms["m_XY2"], opts)
        gamma2 = solver["gamma2"]
        f1 = float(link_moments(link, IndexLaw(0.0, gamma2), (1,))[0])
        _check_f1(f1)
        parameters = {"gamma2_beta": gamma2}
        for j in coords:
            parameters[coefficient_name(j)] = ms[beta_name(j)] / f1
        return EstimateReport("glm0", parameters, ms, solver)

    ms = collect_moments(ds, design, Estimand.GLM, coords)
    m1, m2 = reduce_glm_moments(ms)
    solver = invert_glm(link, m1, m2, opts)
    law = IndexLaw(solver["lambda"], solver["gamma2"])
    f0, f1 = (float(v) for v in link_moments(link, law, (0, 1)))
    _check_f1(f1)
    parameters = {"lambda_beta": law.lam, "gamma2_beta": law.gamma2}
    for j in coords:
        parameters[coefficient_name(j)] = (ms[beta_name(j)] - f0 * ms[nu_name(j)]) / f1
    return EstimateReport("glm", parameters, ms, solver)


# --- GLM, unknown covariance (sample split) ---

def wishart_prefactor(half: int, p: int) -> float:
    """(m - p - 1) / m, the inverse-Wishart bias correction for a Gram matrix of m rows."""
    return (half - p - 1) / half


def split_halves(n: int) -> tuple:
    """Row indices (I1, I2): first half and second half in row order."""
    half = n // 2
    return np.arange(half), np.arange(half, n)


def estimate_glm_unknown_sigma(
        ds: Dataset,
        link: LinkSpec,
        coords: Sequence[int] = (),
        opts: SolveOptions = SolveOptions(),
) -> EstimateReport:
    """
    Zero-mean GLM estimator with Sigma replaced by the Gram matrix of the second
    half of the rows; the U-statistics run on the first half and are rescaled
    by the inverse-Wishart prefactor.
    """
    half = ds.n // 2
    if ds.p + 3 >= half:
        raise InsufficientSamples(f"need p + 3 < n/2, got p = {ds.p}, n/2 = {half}")
    first, second = split_halves(ds.n)
    X2 = ds.X[second]
    gram = X2.T @ X2 / X2.shape[0]
    try:
        design = DesignModel.known(0.5 * (gram + gram.T), mu_known_zero=True)
    except SingularSigma as e:
        raise SingularGram(str(e)) from None

    part = ds.rows(first)
    prefactor = wishart_prefactor(X2.shape[0], ds.p)
    ms = MomentSet()
    ms.put("m_XY2", prefactor * ustat2_bilinear(part, part.Y, part.Y, design), 2)
    for j in coords:
        ms.put(beta_name(j), prefactor * ustat1_direction(part, part.Y, j, design), 1)

    solver = invert_glm0(link, ms["m_XY2"], opts)
    gamma2 = solver["gamma2"]
    f1 = float(link_moments(link, IndexLaw(0.0, gamma2), (1,))[0])
    _check_f1(f1)
    parameters = {"gamma2_beta": gamma2}
    for j in coords:
        parameters[coefficient_name(j)] = ms[beta_name(j)] / f1
    return EstimateReport("glm-unknown-sigma", parameters, ms, solver, mode=DesignMode.UNKNOWN_SIGMA_SPLIT)


# --- Linear model, unknown covariance ---

def estimate_linear_unknown_sigma(ds: Dataset, coords: Sequence[int] = ()) -> EstimateReport:
    """Least-squares estimators of lambda_beta, gamma2_beta and beta_j for an identity link, p < n."""
    n, p = ds.n, ds.p
    if p >= n:
        raise RankDeficientDesign(f"need p < n, got p = {p}, n = {n}")
    for j in coords:
        if not 1 <= j <= p:
            raise IndexOutOfRange(f"coordinate {j} outside 1..{p}")

    Q, R = qr(ds.X, mode="economic", check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.min() <= DIVISION_FLOOR * max(1.0, diag.max()):
        raise RankDeficientDesign(f"design has numerical rank < {p}")
    qty = Q.T @ ds.Y
    fitted_sq = float(qty @ qty)
    total_sq = float(ds.Y @ ds.Y)
    gamma2 = (fitted_sq - (p / n) * total_sq) / (n - p)
    beta = solve_triangular(R, qty, lower=False, check_finite=False)

    ms = MomentSet()
    ms.put("m_Y", ustat1_mean(ds.Y), 1)
    parameters = {"lambda_beta": ms["m_Y"], "gamma2_beta": gamma2}
    for j in coords:
        parameters[coefficient_name(j)] = float(beta[j - 1])
    solver = SolveReport(solution=dict(parameters), residual_norm=0.0, iterations=0, projected=False)
    return EstimateReport("linear-unknown-sigma", parameters, ms, solver, mode=DesignMode.UNKNOWN_SIGMA_LINEAR)


def null_test_statistic(ds: Dataset) -> float:
    """U_{n,2}[Y_1 X_1'X_2 Y_2], an unbiased estimate of beta' Sigma^2 beta (zero-mean design)."""
    return ustat2_bilinear(ds, ds.Y, ds.Y, DesignModel.identity(ds.p))


# --- Observational-study estimands ---

def _report_from(estimand: str, ms: MomentSet, solver: SolveReport) -> EstimateReport:
    return EstimateReport(estimand, dict(solver.solution), ms, solver)


def estimate_ce(ds: Dataset, design: DesignModel, link: LinkSpec, opts: SolveOptions = SolveOptions()) -> EstimateReport:
    """Effect psi of a binary treatment in Y = psi A + beta'X + eps with a GLM propensity."""
    _require_known(design)
    _check_binary(ds, "ce")
    ms = collect_moments(ds, design, Estimand.CE)
    return _report_from("ce", ms, solve_ce(ms, link, opts))


def estimate_mar(
        ds: Dataset,
        design: DesignModel,
        link: LinkSpec,
        opts: SolveOptions = SolveOptions(),
        cross_check: bool = False,
) -> EstimateReport:
    """Mean psi = E[Y] with Y observed only where A = 1."""
    _require_known(design)
    _check_binary(ds, "mar")
    ms = collect_moments(ds, design, Estimand.MAR, cross_check=cross_check)
    return _report_from("mar", ms, solve_mar(ms, link, opts))


def estimate_gcm(
        ds: Dataset,
        design: DesignModel,
        link_a: LinkSpec,
        link_y: LinkSpec,
        opts: SolveOptions = SolveOptions(),
) -> EstimateReport:
    """psi = E[eta(alpha'X) phi(beta'X)]."""
    _require_known(design)
    ms = collect_moments(ds, design, Estimand.GCM)
    return _report_from("gcm", ms, solve_gcm(ms, link_a, link_y, opts))


# --- Dispatch ---

def estimate(
        tag: str,
        ds: Dataset,
        design: Optional[DesignModel],
        link: LinkSpec,
        link_a: Optional[LinkSpec] = None,
        coords: Sequence[int] = (),
        opts: SolveOptions = SolveOptions(),
        cross_check: bool = False,
) -> EstimateReport:
    """
    Runs the estimator named by `tag`. For "glm0"/"glm" the design's
    mu_known_zero flag must match the tag. `link` is the outcome link, `link_a`
    the propensity / missingness / A-side link.
    """
    if tag not in ESTIMATOR_TAGS:
        raise ConfigInvalid(f"unknown estimand '{tag}'; expected one of {', '.join(ESTIMATOR_TAGS)}")
    if tag in GLM_TAGS:
        _require_known(design)
        if design.mu_known_zero != (tag == "glm0"):
            raise ConfigInvalid(f"estimand '{tag}' does not match design mu_known_zero={design.mu_known_zero}")
        return estimate_glm(ds, design, link, coords, opts)
    if tag == "glm-unknown-sigma":
        return estimate_glm_unknown_sigma(ds, link, coords, opts)
    if tag == "linear-unknown-sigma":
        return estimate_linear_unknown_sigma(ds, coords)
    if link_a is None:
        raise ConfigInvalid(f"estimand '{tag}' requires link_a")
    if tag == "ce":
        return estimate_ce(ds, design, link_a, opts)
    if tag == "mar":
        return estimate_mar(ds, design, link_a, opts, cross_check=cross_check)
    return estimate_gcm(ds, design, link_a, link, opts)
