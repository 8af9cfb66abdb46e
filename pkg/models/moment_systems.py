from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from utils.config import (
    ARMIJO_FACTOR,
    DET_FLOOR,
    DIVISION_FLOOR,
    GAMMA2_BOUNDS,
    LAMBDA_BOUNDS,
    LINEAR_COND_CAP,
    LINEAR_DET_SCALE,
    MAX_ITER,
    MONOTONE_GRID_POINTS,
    MULTISTART_GRID,
    TOL_SOLVE,
)
from .errors import (
    ConfigInvalid,
    DegenerateF1,
    DegenerateG1,
    NoConvergence,
    NonMonotoneMap,
    SingularJacobian,
    SingularLinearStage,
)
from .gauss_link_moments import BivariateIndexLaw, IndexLaw, eval_bivariate, link_moments
from .links import LinkSpec
from .ustat_moments import MomentSet

logger = logging.getLogger(__name__)


# --- Options and reports ---

@dataclass(frozen=True)
class SolveOptions:
    tol_solve: float = TOL_SOLVE
    max_iter: int = MAX_ITER
    lambda_bounds: Tuple[float, float] = LAMBDA_BOUNDS
    gamma2_bounds: Tuple[float, float] = GAMMA2_BOUNDS
    damping: float = ARMIJO_FACTOR

    def __post_init__(self):
        if not self.tol_solve > 0.0:
            raise ConfigInvalid(f"tol_solve must be positive, got {self.tol_solve}")
        if self.max_iter < 1:
            raise ConfigInvalid(f"max_iter must be >= 1, got {self.max_iter}")
        for name, (lo, hi) in (("lambda_bounds", self.lambda_bounds), ("gamma2_bounds", self.gamma2_bounds)):
            if not lo < hi:
                raise ConfigInvalid(f"{name} must be a non-empty interval, got ({lo}, {hi})")
        if self.gamma2_bounds[0] < 0.0:
            raise ConfigInvalid("gamma2_bounds must lie in [0, inf)")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigInvalid(f"damping must be in (0, 1], got {self.damping}")


@dataclass
class SolveReport:
    solution: Dict[str, float]
    residual_norm: float
    iterations: int
    projected: bool
    jacobian_condition: float = float("nan")
    linear_condition: Optional[float] = None
    alt_residual: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.solution[name]


def _scale(*values: float) -> float:
    return max(1.0, *(abs(v) for v in values))


# --- Zero-mean GLM system ---

def forward_glm0(link: LinkSpec, gamma2: float) -> float:
    """m_XY2 = f_1(0, gamma2)^2 * gamma2."""
    if gamma2 == 0.0:
        return 0.0
    f1 = link_moments(link, IndexLaw(0.0, gamma2), (1,))[0]
    return float(f1 * f1 * gamma2)


def invert_glm0(link: LinkSpec, m_xy2: float, opts: SolveOptions = SolveOptions()) -> SolveReport:
    """Inverts the monotone map gamma2 -> f_1(0, gamma2)^2 gamma2, clamping to its range."""
    if not math.isfinite(m_xy2):
        raise ConfigInvalid(f"m_XY2 must be finite, got {m_xy2}")
    lo, hi = opts.gamma2_bounds
    grid = np.linspace(lo, hi, MONOTONE_GRID_POINTS)
    values = np.array([forward_glm0(link, g) for g in grid])
    if np.any(np.diff(values) <= opts.tol_solve):
        raise NonMonotoneMap(f"m_XY2 map of link '{link.name}' is not strictly increasing on [{lo}, {hi}]")

    v_lo, v_hi = values[0], values[-1]
    if m_xy2 < v_lo or m_xy2 > v_hi:
        gamma2 = lo if m_xy2 < v_lo else hi
        logger.warning(
            "m_XY2 = %.6g outside attainable range [%.6g, %.6g]; clamped gamma2 to %g", m_xy2, v_lo, v_hi, gamma2
        )
        return SolveReport(
            solution={"gamma2": gamma2},
            residual_norm=abs(forward_glm0(link, gamma2) - m_xy2),
            iterations=0,
            projected=True,
        )

    gamma2, info = brentq(
        lambda g: forward_glm0(link, g) - m_xy2, lo, hi,
        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=opts.max_iter, full_output=True,
    )
    residual = abs(forward_glm0(link, gamma2) - m_xy2)
    if not info.converged or residual > opts.tol_solve * _scale(m_xy2):
        raise NoConvergence(f"1-D inversion stopped at residual {residual:.3e}")
    return SolveReport(solution={"gamma2": float(gamma2)}, residual_norm=residual,
                       iterations=info.iterations, projected=False)


# --- General-mean GLM system ---

def forward_glm(link: LinkSpec, law: IndexLaw) -> Tuple[float, float]:
    """(m1, m2) = (f_0, f_1^2 * gamma2) at the index law."""
    f0, f1 = link_moments(link, law, (0, 1))
    return float(f0), float(f1 * f1 * law.gamma2)


def glm_jacobian(link: LinkSpec, law: IndexLaw) -> np.ndarray:
    """
    d(m1, m2) / d(lam, gamma2), rows are outputs:
    [[f_1, f_2/2], [2 gamma2 f_1 f_2, f_1 (f_1 + gamma2 f_3)]].
    """
    f1, f2, f3 = link_moments(link, law, (1, 2, 3))
    g = law.gamma2
    return np.array([
        [f1, 0.5 * f2],
        [2.0 * g * f1 * f2, f1 * (f1 + g * f3)],
    ])


def reduce_index_moments(m_mean: float, m_x2: float, m_cross: float, m_sq: float) -> Tuple[float, float]:
    """(m_W, m_XW2 + m_W^2 m_X2 - 2 m_W m_XW_X) for a response W."""
    return m_mean, m_sq + m_mean * m_mean * m_x2 - 2.0 * m_mean * m_cross


def reduce_glm_moments(ms: MomentSet) -> Tuple[float, float]:
    ms.require(("m_Y", "m_X2", "m_XY_X", "m_XY2"))
    return reduce_index_moments(ms["m_Y"], ms["m_X2"], ms["m_XY_X"], ms["m_XY2"])


def forward_glm_moments(link: LinkSpec, law: IndexLaw, m_x2: float) -> MomentSet:
    """Full general-mean GLM chain {m_Y, m_X2, m_XY_X, m_XY2} at given parameters."""
    f0, f1 = (float(v) for v in link_moments(link, law, (0, 1)))
    return MomentSet.from_values({
        "m_Y": f0,
        "m_X2": m_x2,
        "m_XY_X": f0 * m_x2 + f1 * law.lam,
        "m_XY2": f0 * f0 * m_x2 + f1 * f1 * law.gamma2 + 2.0 * f0 * f1 * law.lam,
    })


def _invert_mean(link: LinkSpec, m1: float, gamma2: float, bounds: Tuple[float, float]) -> Tuple[float, bool]:
    """Solves f_0(lam, gamma2) = m1 over lam in bounds; returns (lam, clamped)."""
    lo, hi = bounds

    def g(lam):
        return link_moments(link, IndexLaw(lam, gamma2), (0,))[0] - m1

    g_lo, g_hi = g(lo), g(hi)
    if g_lo * g_hi > 0.0:
        return (lo, True) if abs(g_lo) <= abs(g_hi) else (hi, True)
    if g_lo == 0.0:
        return lo, False
    if g_hi == 0.0:
        return hi, False
    return float(brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)), False


def _invert_spread(link: LinkSpec, m2: float, lam: float, bounds: Tuple[float, float]) -> Tuple[float, bool]:
    """Solves f_1(lam, gamma2)^2 gamma2 = m2 over gamma2 in bounds; returns (gamma2, clamped)."""
    lo, hi = bounds

    def g(gamma2):
        return forward_glm(link, IndexLaw(lam, gamma2))[1] - m2

    g_lo, g_hi = g(lo), g(hi)
    if g_lo * g_hi > 0.0:
        return (lo, True) if abs(g_lo) <= abs(g_hi) else (hi, True)
    if g_lo == 0.0:
        return lo, False
    if g_hi == 0.0:
        return hi, False
    return float(brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)), False


@dataclass
class _NewtonRun:
    theta: np.ndarray
    residual: float
    iterations: int
    converged: bool
    singular: bool = False


def _newton(link: LinkSpec, target: np.ndarray, start: np.ndarray, opts: SolveOptions) -> _NewtonRun:
    """Damped Newton with Armijo backtracking and box clipping."""
    lower = np.array([opts.lambda_bounds[0], opts.gamma2_bounds[0]])
    upper = np.array([opts.lambda_bounds[1], opts.gamma2_bounds[1]])
    tol = opts.tol_solve * _scale(*target)

    def residual_at(theta):
        return np.asarray(forward_glm(link, IndexLaw(theta[0], theta[1]))) - target

    theta = np.clip(start, lower, upper)
    r = residual_at(theta)
    norm = float(np.linalg.norm(r))
    for iteration in range(1, opts.max_iter + 1):
        if norm <= tol:
            return _NewtonRun(theta, norm, iteration - 1, True)
        J = glm_jacobian(link, IndexLaw(theta[0], theta[1]))
        if abs(np.linalg.det(J)) < DET_FLOOR:
            return _NewtonRun(theta, norm, iteration, False, singular=True)
        step = np.linalg.solve(J, -r)

        t = 1.0
        while t > 1e-10:
            candidate = np.clip(theta + t * step, lower, upper)
            r_new = residual_at(candidate)
            norm_new = float(np.linalg.norm(r_new))
            if norm_new <= (1.0 - 1e-4 * t) * norm:
                break
            t *= opts.damping
        else:
            # No descent along the clipped step
            return _NewtonRun(theta, norm, iteration, norm <= tol)
        theta, r, norm = candidate, r_new, norm_new
    return _NewtonRun(theta, norm, opts.max_iter, norm <= tol)


def _on_face(value: float, bounds: Tuple[float, float]) -> Optional[float]:
    lo, hi = bounds
    width = hi - lo
    if abs(value - lo) <= 1e-12 * max(1.0, width):
        return lo
    if abs(value - hi) <= 1e-12 * max(1.0, width):
        return hi
    return None


def _project_run(link: LinkSpec, m1: float, m2: float, run: _NewtonRun, opts: SolveOptions) -> Optional[Tuple[np.ndarray, float]]:
    """Pins the coordinate stuck on a box face and solves the remaining equation in 1-D."""
    lam, gamma2 = run.theta
    pinned_gamma2 = _on_face(gamma2, opts.gamma2_bounds)
    pinned_lam = _on_face(lam, opts.lambda_bounds)
    if pinned_gamma2 is not None:
        lam, _ = _invert_mean(link, m1, pinned_gamma2, opts.lambda_bounds)
        theta = np.array([lam, pinned_gamma2])
    elif pinned_lam is not None:
        gamma2, _ = _invert_spread(link, m2, pinned_lam, opts.gamma2_bounds)
        theta = np.array([pinned_lam, gamma2])
    else:
        return None
    residual = np.asarray(forward_glm(link, IndexLaw(theta[0], theta[1]))) - np.array([m1, m2])
    return theta, float(np.linalg.norm(residual))


def _report(link: LinkSpec, theta: np.ndarray, residual: float, iterations: int, projected: bool) -> SolveReport:
    law = IndexLaw(float(theta[0]), float(theta[1]))
    return SolveReport(
        solution={"lambda": law.lam, "gamma2": law.gamma2},
        residual_norm=residual,
        iterations=iterations,
        projected=projected,
        jacobian_condition=float(np.linalg.cond(glm_jacobian(link, law))),
    )


def invert_glm(link: LinkSpec, m1: float, m2: float, opts: SolveOptions = SolveOptions()) -> SolveReport:
    """
    Solves (f_0(lam, gamma2), f_1(lam, gamma2)^2 gamma2) = (m1, m2).

    Default start is gamma2 = 1 with lam from the 1-D inversion of f_0(., 1);
    when it stalls, an 8 x 8 grid of starts over the box is tried. If every
    start stalls against the box, the coordinate on the face is pinned and the
    other one solved in 1-D; the report is then flagged as projected.
    """
    if not (math.isfinite(m1) and math.isfinite(m2)):
        raise ConfigInvalid(f"moments must be finite, got ({m1}, {m2})")
    target = np.array([m1, m2])

    lam0, _ = _invert_mean(link, m1, 1.0, opts.lambda_bounds)
    g_lo, g_hi = opts.gamma2_bounds
    runs = [_newton(link, target, np.array([lam0, min(max(1.0, g_lo), g_hi)]), opts)]
    if not runs[0].converged:
        lam_grid = np.linspace(*opts.lambda_bounds, MULTISTART_GRID + 2)[1:-1]
        gamma2_grid = np.linspace(g_lo, g_hi, MULTISTART_GRID + 2)[1:-1]
        for lam in lam_grid:
            for gamma2 in gamma2_grid:
                run = _newton(link, target, np.array([lam, gamma2]), opts)
                runs.append(run)
                if run.converged:
                    break
            if runs[-1].converged:
                break

    total_iterations = sum(run.iterations for run in runs)
    converged = [run for run in runs if run.converged]
    if converged:
        best = min(converged, key=lambda run: run.residual)
        return _report(link, best.theta, best.residual, total_iterations, False)

    projections = [p for p in (_project_run(link, m1, m2, run, opts) for run in runs if not run.singular) if p]
    if projections:
        theta, residual = min(projections, key=lambda p: p[1])
        logger.warning(
            "Index system (%.6g, %.6g) not attainable inside the box; projected to lambda=%.6g, gamma2=%.6g",
            m1, m2, theta[0], theta[1],
        )
        return _report(link, theta, residual, total_iterations, True)

    if all(run.singular for run in runs):
        raise SingularJacobian(f"|det J| < {DET_FLOOR:g} at every start for link '{link.name}'")
    raise NoConvergence(
        f"damped Newton failed from {len(runs)} starts; best residual {min(r.residual for r in runs):.3e}"
    )


# --- Shared index stage ---

def _index_stage(
        link: LinkSpec, m_mean: float, m_x2: float, m_cross: float, m_sq: float, opts: SolveOptions,
) -> Tuple[SolveReport, float, float, float]:
    """Inverts one index system and returns (report, f_1, f_2, f_0) at its solution."""
    m1, m2 = reduce_index_moments(m_mean, m_x2, m_cross, m_sq)
    report = invert_glm(link, m1, m2, opts)
    law = IndexLaw(report["lambda"], report["gamma2"])
    f0, f1, f2 = (float(v) for v in link_moments(link, law, (0, 1, 2)))
    return report, f1, f2, f0


def _check_f1(f1: float, side: str) -> None:
    if abs(f1) < DIVISION_FLOOR:
        raise DegenerateF1(f"f_1 of the {side} index is {f1:.3e}; the linear stage is not identified")


def _condition(matrix: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = float(np.linalg.cond(matrix))
    return cond if math.isfinite(cond) else float("inf")


# --- Causal effect (linear structural model, GLM propensity) ---

def ce_linear_stage(
        m: Mapping[str, float], f1: float, f2: float, lambda_alpha_1: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of the (psi, lambda_beta, gamma_alpha_beta, lambda_beta_1) system and its right-hand side."""
    m_a, m_xa_x, m_xa2 = m["m_A"], m["m_XA_X"], m["m_XA2"]
    matrix = np.array([
        [m_a, 1.0, 0.0, 0.0],
        [m_a, m_a, f1, 0.0],
        [m_xa2, m_xa_x, 0.0, 1.0],
        [m_xa2, m_a * m_xa_x + f1 * lambda_alpha_1, f1 * m_xa_x + f2 * lambda_alpha_1, m_a],
    ])
    rhs = np.array([m["m_Y"], m["m_AY"], m["m_XA_XY"], m["m_XAY_XA"]])
    return matrix, rhs


def forward_ce(link: LinkSpec, params: Mapping[str, float], m_x2: float) -> MomentSet:
    """
    CE moment chain at (psi, lambda_alpha, gamma2_alpha, lambda_beta, gamma_alpha_beta).
    lambda_alpha_1 / lambda_beta_1 default to their Gaussian values
    lambda * m_A + f_1 * gamma.
    """
    law = IndexLaw(params["lambda_alpha"], params["gamma2_alpha"])
    m_a, f1, f2 = (float(v) for v in link_moments(link, law, (0, 1, 2)))
    lambda_alpha_1 = params.get("lambda_alpha_1", law.lam * m_a + f1 * law.gamma2)
    lambda_beta = params["lambda_beta"]
    lambda_beta_1 = params.get("lambda_beta_1", lambda_beta * m_a + f1 * params["gamma_alpha_beta"])

    m_xa_x = m_a * m_x2 + f1 * law.lam
    values = {"m_A": m_a, "m_X2": m_x2, "m_XA_X": m_xa_x, "m_XA2": m_a * m_xa_x + f1 * lambda_alpha_1}
    matrix, _ = ce_linear_stage(
        {**values, "m_Y": 0.0, "m_AY": 0.0, "m_XA_XY": 0.0, "m_XAY_XA": 0.0}, f1, f2, lambda_alpha_1,
    )
    unknowns = np.array([params["psi"], lambda_beta, params["gamma_alpha_beta"], lambda_beta_1])
    values.update(zip(("m_Y", "m_AY", "m_XA_XY", "m_XAY_XA"), matrix @ unknowns))
    return MomentSet.from_values(values)


def solve_ce(ms: MomentSet, link: LinkSpec, opts: SolveOptions = SolveOptions()) -> SolveReport:
    """Staged solve: propensity index system, then lambda_alpha_1, then a 4 x 4 linear system."""
    ms.require(("m_A", "m_Y", "m_AY", "m_X2", "m_XA_X", "m_XA2", "m_XA_XY", "m_XAY_XA"))
    index, f1, f2, _ = _index_stage(link, ms["m_A"], ms["m_X2"], ms["m_XA_X"], ms["m_XA2"], opts)
    _check_f1(f1, "propensity")
    lambda_alpha_1 = (ms["m_XA2"] - ms["m_A"] * ms["m_XA_X"]) / f1

    matrix, rhs = ce_linear_stage(ms.as_dict(), f1, f2, lambda_alpha_1)
    cond = _condition(matrix)
    if cond > LINEAR_COND_CAP:
        raise SingularLinearStage(f"CE linear stage has condition number {cond:.3e}")
    psi, lambda_beta, gamma_alpha_beta, lambda_beta_1 = lu_solve(lu_factor(matrix), rhs)
    residual = float(np.linalg.norm(matrix @ [psi, lambda_beta, gamma_alpha_beta, lambda_beta_1] - rhs))

    return SolveReport(
        solution={
            "psi": float(psi),
            "lambda_alpha": index["lambda"],
            "gamma2_alpha": index["gamma2"],
            "lambda_beta": float(lambda_beta),
            "gamma_alpha_beta": float(gamma_alpha_beta),
            "lambda_alpha_1": float(lambda_alpha_1),
            "lambda_beta_1": float(lambda_beta_1),
        },
        residual_norm=max(index.residual_norm, residual),
        iterations=index.iterations,
        projected=index.projected,
        jacobian_condition=index.jacobian_condition,
        linear_condition=cond,
    )


# --- Missing at random mean ---

def mar_linear_stage(m: Mapping[str, float], f1: float, f2: float, lambda_alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of the (psi, gamma_alpha_beta) system from the m_AY and m_XAY_X equations."""
    m_a, m_x2 = m["m_A"], m["m_X2"]
    matrix = np.array([
        [m_a, f1],
        [m_a + m["m_XA_X"], m_x2 * f1 + f2 * lambda_alpha],
    ])
    rhs = np.array([m["m_AY"], m["m_XAY_X"]])
    return matrix, rhs


def mar_alt_coefficients(m_a: float, m_x2: float, f1: float, f2: float, lambda_alpha: float, gamma2_alpha: float) -> Tuple[float, float]:
    """(psi, gamma_alpha_beta) coefficients of the m_XAY_XA identity."""
    psi_coef = m_a * m_a * m_x2 + 2.0 * m_a * f1 * lambda_alpha + m_a * m_a + f1 * f1 * gamma2_alpha
    cross_coef = (
        m_a * (f1 * m_x2 + f2 * lambda_alpha)
        + f1 * f1 * lambda_alpha
        + f1 * f2 * gamma2_alpha
        + m_a * f1
    )
    return psi_coef, cross_coef


def forward_mar(link: LinkSpec, params: Mapping[str, float], m_x2: float) -> MomentSet:
    """MAR chain at (psi, lambda_alpha, gamma2_alpha, gamma_alpha_beta), including m_XAY_XA."""
    law = IndexLaw(params["lambda_alpha"], params["gamma2_alpha"])
    m_a, f1, f2 = (float(v) for v in link_moments(link, law, (0, 1, 2)))
    psi, cross = params["psi"], params["gamma_alpha_beta"]
    m_xa_x = m_a * m_x2 + f1 * law.lam
    values = {
        "m_A": m_a,
        "m_X2": m_x2,
        "m_XA_X": m_xa_x,
        "m_XA2": m_a * m_a * m_x2 + f1 * f1 * law.gamma2 + 2.0 * m_a * f1 * law.lam,
    }
    matrix, _ = mar_linear_stage({**values, "m_AY": 0.0, "m_XAY_X": 0.0}, f1, f2, law.lam)
    values["m_AY"], values["m_XAY_X"] = matrix @ [psi, cross]
    psi_coef, cross_coef = mar_alt_coefficients(m_a, m_x2, f1, f2, law.lam, law.gamma2)
    values["m_XAY_XA"] = psi_coef * psi + cross_coef * cross
    return MomentSet.from_values(values)


def solve_mar(ms: MomentSet, link: LinkSpec, opts: SolveOptions = SolveOptions()) -> SolveReport:
    """Staged solve: missingness index system, then the 2 x 2 system in (psi, gamma_alpha_beta)."""
    ms.require(("m_A", "m_X2", "m_XA_X", "m_XA2", "m_AY", "m_XAY_X"))
    index, f1, f2, _ = _index_stage(link, ms["m_A"], ms["m_X2"], ms["m_XA_X"], ms["m_XA2"], opts)
    lambda_alpha = index["lambda"]

    matrix, rhs = mar_linear_stage(ms.as_dict(), f1, f2, lambda_alpha)
    det = float(np.linalg.det(matrix))
    entry_scale = float(np.max(np.abs(matrix)))
    if abs(det) < LINEAR_DET_SCALE * entry_scale * entry_scale:
        raise SingularLinearStage(f"MAR linear stage determinant {det:.3e} at entry scale {entry_scale:.3e}")
    psi, cross = lu_solve(lu_factor(matrix), rhs)
    residual = float(np.linalg.norm(matrix @ [psi, cross] - rhs))

    alt_residual = None
    if "m_XAY_XA" in ms:
        psi_coef, cross_coef = mar_alt_coefficients(ms["m_A"], ms["m_X2"], f1, f2, lambda_alpha, index["gamma2"])
        alt_residual = float(ms["m_XAY_XA"] - (psi_coef * psi + cross_coef * cross))

    return SolveReport(
        solution={
            "psi": float(psi),
            "lambda_alpha": lambda_alpha,
            "gamma2_alpha": index["gamma2"],
            "gamma_alpha_beta": float(cross),
        },
        residual_norm=max(index.residual_norm, residual),
        iterations=index.iterations,
        projected=index.projected,
        jacobian_condition=index.jacobian_condition,
        linear_condition=_condition(matrix),
        alt_residual=alt_residual,
    )


# --- Generalized covariance measure ---

def forward_gcm(link_a: LinkSpec, link_y: LinkSpec, params: Mapping[str, float], m_x2: float) -> MomentSet:
    """GCM chain at (lambda_alpha, gamma2_alpha, lambda_beta, gamma2_beta, gamma_alpha_beta)."""
    law_a = IndexLaw(params["lambda_alpha"], params["gamma2_alpha"])
    law_y = IndexLaw(params["lambda_beta"], params["gamma2_beta"])
    m_a, g1 = (float(v) for v in link_moments(link_a, law_a, (0, 1)))
    m_y, f1 = (float(v) for v in link_moments(link_y, law_y, (0, 1)))
    return MomentSet.from_values({
        "m_A": m_a,
        "m_Y": m_y,
        "m_X2": m_x2,
        "m_XA_X": m_a * m_x2 + g1 * law_a.lam,
        "m_XY_X": m_y * m_x2 + f1 * law_y.lam,
        "m_XA2": m_a * m_a * m_x2 + g1 * g1 * law_a.gamma2 + 2.0 * m_a * g1 * law_a.lam,
        "m_XY2": m_y * m_y * m_x2 + f1 * f1 * law_y.gamma2 + 2.0 * m_y * f1 * law_y.lam,
        "m_XA_XY": (
            m_a * m_y * m_x2
            + m_a * f1 * law_y.lam
            + m_y * g1 * law_a.lam
            + g1 * f1 * params["gamma_alpha_beta"]
        ),
    })


def solve_gcm(ms: MomentSet, link_a: LinkSpec, link_y: LinkSpec, opts: SolveOptions = SolveOptions()) -> SolveReport:
    """Two index systems, the cross term from m_XA_XY, then psi = E[eta(Z1) phi(Z2)]."""
    ms.require(("m_A", "m_Y", "m_X2", "m_XA_X", "m_XY_X", "m_XA2", "m_XY2", "m_XA_XY"))
    m_a, m_y, m_x2 = ms["m_A"], ms["m_Y"], ms["m_X2"]
    side_a, g1, _, _ = _index_stage(link_a, m_a, m_x2, ms["m_XA_X"], ms["m_XA2"], opts)
    side_y, f1, _, _ = _index_stage(link_y, m_y, m_x2, ms["m_XY_X"], ms["m_XY2"], opts)

    denominator = g1 * f1
    if abs(denominator) < DIVISION_FLOOR:
        raise DegenerateG1(f"g_1 * f_1 = {denominator:.3e}; cross term not identified")
    lambda_alpha, lambda_beta = side_a["lambda"], side_y["lambda"]
    cross = (
        ms["m_XA_XY"] - m_a * m_y * m_x2 - m_a * f1 * lambda_beta - m_y * g1 * lambda_alpha
    ) / denominator

    law = BivariateIndexLaw(lambda_alpha, lambda_beta, side_a["gamma2"], side_y["gamma2"], cross)
    law, clipped = law.projected()
    psi = eval_bivariate(link_a, link_y, law)
    notes = ["cross term clipped onto the PSD boundary"] if clipped else []
    if clipped:
        logger.warning("GCM cross term %.6g clipped to %.6g", cross, law.gamma12)

    return SolveReport(
        solution={
            "lambda_alpha": lambda_alpha,
            "gamma2_alpha": side_a["gamma2"],
            "lambda_beta": lambda_beta,
            "gamma2_beta": side_y["gamma2"],
            "gamma_alpha_beta": float(cross),
            "psi": psi,
        },
        residual_norm=max(side_a.residual_norm, side_y.residual_norm),
        iterations=side_a.iterations + side_y.iterations,
        projected=side_a.projected or side_y.projected,
        jacobian_condition=max(side_a.jacobian_condition, side_y.jacobian_condition),
        notes=notes,
    )

