from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from models.dataset import Dataset, DesignModel
from models.errors import ConfigInvalid, DegenerateEstimates, MomglmError, TooFewReplicates
from models.gauss_link_moments import BivariateIndexLaw, IndexLaw, eval_bivariate, link_moments
from models.links import IDENTITY, LOG_LINEAR, LinkSpec
from models.moment_systems import (
    SolveOptions,
    forward_ce,
    forward_gcm,
    forward_glm_moments,
    forward_mar,
)
from models.ustat_moments import beta_name, nu_name
from utils.config import MAR_NOISE_SD, MAX_FAILURE_SHARE, QQ_MIN_REPLICATES
from utils.rng import stream
from utils.workers import run_in_pool
from .estimators import ESTIMATOR_TAGS, coefficient_name, estimate

logger = logging.getLogger(__name__)

DESIGN_KINDS = ("gaussian-identity", "gaussian-general", "rademacher")
COEF_SCHEMES = ("dense-uniform", "sparse-root-p", "single-spike")
MU_PATHS = ("both", "known-zero", "general")
NEEDS_LINK_A = ("ce", "mar", "gcm")
TABLE_COLUMNS = ["n", "replicate", "parameter", "estimate", "truth", "failure_code"]
SUMMARY_COLUMNS = ["n", "parameter", "sqrtn_bias", "variance", "mse", "qq_correlation", "n_failures"]
MU0_SUFFIX = "_mu0"


# --- Configuration ---

@dataclass(frozen=True, eq=False)
class SimConfig:
    """One Monte-Carlo campaign: a data-generating process, an estimator and a grid of sample sizes."""
    estimand: str
    link: LinkSpec
    link_a: Optional[LinkSpec] = None
    design: str = "gaussian-identity"
    sigma: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    coef_scheme: str = "dense-uniform"
    n_grid: Tuple[int, ...] = (500,)
    ratio: float = 1.2
    replicates: int = 100
    seed: int = 0
    coords: Tuple[int, ...] = (1,)
    psi: float = 0.0
    noise_sd: float = MAR_NOISE_SD
    mu_paths: str = "both"
    freeze_coefficients: bool = False
    cross_check: bool = False
    threads: int = 1
    true_params: Optional[Mapping[str, np.ndarray]] = None
    solve_options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "coords", tuple(int(j) for j in self.coords))
        if self.estimand not in ESTIMATOR_TAGS:
            raise ConfigInvalid(f"unknown estimand '{self.estimand}'")
        if self.estimand in NEEDS_LINK_A and self.link_a is None:
            raise ConfigInvalid(f"estimand '{self.estimand}' needs link_a")
        if self.estimand in ("ce", "mar") and not self.link_a.is_binary_range:
            raise ConfigInvalid(f"link_a '{self.link_a.name}' cannot be a Bernoulli mean")
        if self.design not in DESIGN_KINDS:
            raise ConfigInvalid(f"design must be one of {DESIGN_KINDS}, got '{self.design}'")
        if (self.sigma is not None) != (self.design == "gaussian-general"):
            raise ConfigInvalid("sigma is required for, and only for, the gaussian-general design")
        if self.coef_scheme not in COEF_SCHEMES:
            raise ConfigInvalid(f"coef_scheme must be one of {COEF_SCHEMES}, got '{self.coef_scheme}'")
        if self.mu_paths not in MU_PATHS:
            raise ConfigInvalid(f"mu_paths must be one of {MU_PATHS}, got '{self.mu_paths}'")
        if not self.ratio > 0.0:
            raise ConfigInvalid(f"ratio must be positive, got {self.ratio}")
        if self.replicates < 1:
            raise ConfigInvalid(f"replicates must be >= 1, got {self.replicates}")
        if self.seed < 0:
            raise ConfigInvalid(f"seed must be non-negative, got {self.seed}")
        if self.noise_sd < 0.0:
            raise ConfigInvalid(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not self.n_grid or min(self.n_grid) < 2:
            raise ConfigInvalid(f"n_grid needs sample sizes >= 2, got {self.n_grid}")
        for n in self.n_grid:
            p = self.p_for(n)
            if p < 1:
                raise ConfigInvalid(f"n = {n} with ratio {self.ratio} gives p = {p}")
            bad = [j for j in self.coords if not 1 <= j <= p]
            if bad:
                raise ConfigInvalid(f"coords {bad} outside 1..{p} at n = {n}")
            if self.sigma is not None and np.shape(self.sigma) != (p, p):
                raise ConfigInvalid(f"sigma is {np.shape(self.sigma)}, n = {n} needs {p} x {p}")
            if self.mu is not None and np.size(self.mu) not in (1, p):
                raise ConfigInvalid(f"mu has {np.size(self.mu)} entries, n = {n} needs 1 or {p}")

    def p_for(self, n: int) -> int:
        return int(round(n * self.ratio))

    @property
    def has_zero_mean(self) -> bool:
        return self.mu is None or not np.any(np.asarray(self.mu))

    def estimator_paths(self) -> List[Tuple[str, str]]:
        """(estimator tag, parameter-name suffix) pairs run on every replicate."""
        if self.estimand not in ("glm", "glm0"):
            return [(self.estimand, "")]
        if self.estimand == "glm0" or self.mu_paths == "known-zero":
            if not self.has_zero_mean:
                raise ConfigInvalid("the known-zero-mean path needs mu = 0")
            return [("glm0", "")]
        if self.mu_paths == "both" and self.has_zero_mean:
            return [("glm", ""), ("glm0", MU0_SUFFIX)]
        return [("glm", "")]


# --- Data-generating process ---

@dataclass
class _CovariateLaw:
    mu: np.ndarray
    sigma: Optional[np.ndarray]  # None means identity
    factor: Optional[np.ndarray]

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    def sigma_matrix(self) -> np.ndarray:
        return np.eye(self.p) if self.sigma is None else self.sigma

    def quad(self, u: np.ndarray, v: np.ndarray) -> float:
        """u' Sigma v."""
        return float(u @ v) if self.sigma is None else float(u @ self.sigma @ v)

    def mahalanobis_mean(self) -> Tuple[float, np.ndarray]:
        """(mu' Sigma^-1 mu, Sigma^-1 mu)."""
        if self.sigma is None:
            nu = self.mu.copy()
        else:
            nu = np.linalg.solve(self.sigma, self.mu)
        return float(self.mu @ nu), nu


def _covariate_law(config: SimConfig, p: int) -> _CovariateLaw:
    mu = np.zeros(p)
    if config.mu is not None:
        mu = np.broadcast_to(np.asarray(config.mu, dtype=float).reshape(-1), (p,)).copy()
    if config.design == "gaussian-general":
        sigma = np.asarray(config.sigma, dtype=float)
        return _CovariateLaw(mu, sigma, np.linalg.cholesky(sigma))
    return _CovariateLaw(mu, None, None)


def _draw_covariates(config: SimConfig, law: _CovariateLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    if config.design == "rademacher":
        Z = rng.choice(np.array([-1.0, 1.0]), size=(n, law.p))
    else:
        Z = rng.standard_normal((n, law.p))
    if law.factor is not None:
        Z = Z @ law.factor.T
    return Z + law.mu


def draw_coefficients(scheme: str, p: int, rng: np.random.Generator, sigma_trace: Optional[float] = None) -> np.ndarray:
    """
    Coefficient vector with E[beta' Sigma beta] = 1: dense uniform on
    [-sqrt(3/p), sqrt(3/p)], sqrt(p) entries equal to p^(-1/4), or e_1.
    """
    if scheme == "dense-uniform":
        bound = math.sqrt(3.0 / p)
        coef = rng.uniform(-bound, bound, size=p)
    elif scheme == "sparse-root-p":
        support = max(1, int(round(math.sqrt(p))))
        coef = np.zeros(p)
        coef[rng.choice(p, size=support, replace=False)] = p ** -0.25
    elif scheme == "single-spike":
        coef = np.zeros(p)
        coef[0] = 1.0
    else:
        raise ConfigInvalid(f"unknown coefficient scheme '{scheme}'")
    if sigma_trace is not None:
        coef *= math.sqrt(p / sigma_trace)
    return coef


def draw_response(link: LinkSpec, index: np.ndarray, rng: np.random.Generator, noise_sd: float) -> np.ndarray:
    """Bernoulli for [0, 1]-valued links, Poisson for log-linear, additive Gaussian noise otherwise."""
    mean = link.value(index)
    if link.is_binary_range:
        return rng.binomial(1, np.clip(mean, 0.0, 1.0)).astype(float)
    if link.name == LOG_LINEAR.name:
        return rng.poisson(mean).astype(float)
    return mean + noise_sd * rng.standard_normal(index.shape[0])


@dataclass
class Draw:
    dataset: Dataset
    truth: Dict[str, float]
    moments: Dict[str, float]


def _coefficients(config: SimConfig, law: _CovariateLaw, n: int, replicate: int, tag: str) -> np.ndarray:
    if config.true_params is not None and tag in config.true_params:
        coef = np.asarray(config.true_params[tag], dtype=float)
        if coef.shape != (law.p,):
            raise ConfigInvalid(f"true_params['{tag}'] has shape {coef.shape}, expected ({law.p},)")
        return coef
    key = 0 if config.freeze_coefficients else replicate
    trace = None if law.sigma is None else float(np.trace(law.sigma))
    return draw_coefficients(config.coef_scheme, law.p, stream(config.seed, n, key, tag), trace)


def _glm_truth(config: SimConfig, law: _CovariateLaw, beta: np.ndarray) -> Tuple[Dict[str, float], Dict[str, float]]:
    m_x2, nu = law.mahalanobis_mean()
    index = IndexLaw(float(beta @ law.mu), law.quad(beta, beta))
    truth = {"lambda_beta": index.lam, "gamma2_beta": index.gamma2}
    truth.update({coefficient_name(j): float(beta[j - 1]) for j in config.coords})

    # Population values of every moment a GLM path can collect; at mu = 0 these
    # coincide with the zero-mean chain.
    link = IDENTITY if config.estimand == "linear-unknown-sigma" else config.link
    moments = forward_glm_moments(link, index, m_x2).as_dict()
    f1 = float(link_moments(link, index, (1,))[0])
    for j in config.coords:
        moments[beta_name(j)] = moments["m_Y"] * nu[j - 1] + f1 * float(beta[j - 1])
        moments[nu_name(j)] = float(nu[j - 1])
    return truth, moments


def _two_index_truth(law: _CovariateLaw, alpha: np.ndarray, beta: np.ndarray) -> Dict[str, float]:
    return {
        "lambda_alpha": float(alpha @ law.mu),
        "gamma2_alpha": law.quad(alpha, alpha),
        "lambda_beta": float(beta @ law.mu),
        "gamma2_beta": law.quad(beta, beta),
        "gamma_alpha_beta": law.quad(alpha, beta),
    }


def draw_replicate(config: SimConfig, n: int, replicate: int) -> Draw:
    p = config.p_for(n)
    law = _covariate_law(config, p)
    X = _draw_covariates(config, law, n, stream(config.seed, n, replicate, "design"))
    noise_rng = stream(config.seed, n, replicate, "response")
    m_x2, _ = law.mahalanobis_mean()

    beta = _coefficients(config, law, n, replicate, "beta")
    if config.estimand not in NEEDS_LINK_A:
        Y = draw_response(IDENTITY if config.estimand == "linear-unknown-sigma" else config.link,
                          X @ beta, noise_rng, config.noise_sd)
        truth, moments = _glm_truth(config, law, beta)
        return Draw(Dataset(X=X, Y=Y), truth, moments)

    alpha = _coefficients(config, law, n, replicate, "alpha")
    shared = _two_index_truth(law, alpha, beta)
    treatment_rng = stream(config.seed, n, replicate, "treatment")

    if config.estimand == "gcm":
        A = draw_response(config.link_a, X @ alpha, treatment_rng, config.noise_sd)
        Y = draw_response(config.link, X @ beta, noise_rng, config.noise_sd)
        truth = dict(shared)
        truth["psi"] = eval_bivariate(config.link_a, config.link, BivariateIndexLaw(
            shared["lambda_alpha"], shared["lambda_beta"],
            shared["gamma2_alpha"], shared["gamma2_beta"], shared["gamma_alpha_beta"],
        ))
        moments = forward_gcm(config.link_a, config.link, truth, m_x2).as_dict()
        return Draw(Dataset(X=X, Y=Y, A=A), truth, moments)

    A = draw_response(config.link_a, X @ alpha, treatment_rng, config.noise_sd)
    eps = config.noise_sd * noise_rng.standard_normal(n)
    if config.estimand == "ce":
        Y = config.psi * A + X @ beta + eps
        truth = {key: shared[key] for key in ("lambda_alpha", "gamma2_alpha", "lambda_beta", "gamma_alpha_beta")}
        truth["psi"] = config.psi
        m_a, f1 = (float(v) for v in link_moments(config.link_a, IndexLaw(truth["lambda_alpha"], truth["gamma2_alpha"]), (0, 1)))
        truth["lambda_alpha_1"] = truth["lambda_alpha"] * m_a + f1 * truth["gamma2_alpha"]
        truth["lambda_beta_1"] = truth["lambda_beta"] * m_a + f1 * truth["gamma_alpha_beta"]
        moments = forward_ce(config.link_a, truth, m_x2).as_dict()
        return Draw(Dataset(X=X, Y=Y, A=A), truth, moments)

    # mar: Y is only observed where A = 1
    Y = np.where(A == 1.0, X @ beta + eps, 0.0)
    truth = {key: shared[key] for key in ("lambda_alpha", "gamma2_alpha", "gamma_alpha_beta")}
    truth["psi"] = shared["lambda_beta"]
    moments = forward_mar(config.link_a, truth, m_x2).as_dict()
    if not config.cross_check:
        moments.pop("m_XAY_XA")
    return Draw(Dataset(X=X, Y=Y, A=A), truth, moments)


def generate(config: SimConfig, n: int, replicate: int) -> Tuple[Dataset, Dict[str, float]]:
    """Dataset and realized truth; a deterministic function of (seed, n, replicate)."""
    draw = draw_replicate(config, n, replicate)
    return draw.dataset, draw.truth


# --- Experiment driver ---

def _design_models(config: SimConfig, p: int) -> Dict[str, Optional[DesignModel]]:
    """One DesignModel per estimator path, factorized once per sample size."""
    law = _covariate_law(config, p)
    models = {}
    for tag, _ in config.estimator_paths():
        if tag in ("glm-unknown-sigma", "linear-unknown-sigma"):
            models[tag] = None
        else:
            models[tag] = DesignModel.known(law.sigma_matrix(), mu_known_zero=(tag == "glm0"))
    return models


def _replicate_rows(config: SimConfig, n: int, replicate: int, designs: Mapping[str, Optional[DesignModel]]) -> List[dict]:
    draw = draw_replicate(config, n, replicate)
    rows = []
    for tag, suffix in config.estimator_paths():
        expected = list(draw.truth)
        if tag == "glm0":
            expected = [name for name in expected if name != "lambda_beta"]
        try:
            report = estimate(
                tag, draw.dataset, designs[tag], config.link, config.link_a,
                coords=config.coords, opts=config.solve_options, cross_check=config.cross_check,
            )
        except MomglmError as e:
            logger.warning("n=%d replicate=%d %s: %s: %s", n, replicate, tag, type(e).__name__, e)
            rows.extend(
                dict(n=n, replicate=replicate, parameter=name + suffix, estimate=np.nan,
                     truth=draw.truth[name], failure_code=type(e).__name__)
                for name in expected
            )
            continue
        for name in expected:
            rows.append(dict(n=n, replicate=replicate, parameter=name + suffix,
                             estimate=report.parameters.get(name, np.nan), truth=draw.truth[name], failure_code=""))
        for name, value in report.moments_used.as_dict().items():
            rows.append(dict(n=n, replicate=replicate, parameter=f"moment:{name}{suffix}",
                             estimate=value, truth=draw.moments.get(name, np.nan), failure_code=""))
    return rows


def normality_diagnostics(estimates: Sequence[float], truth=0.0) -> Tuple[float, pd.DataFrame]:
    """
    Correlation between sorted standardized errors and normal quantiles at
    plotting positions (i - 0.5)/m, plus the paired data for plotting.
    """
    errors = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    m = errors.shape[0]
    if m < QQ_MIN_REPLICATES:
        raise TooFewReplicates(f"need at least {QQ_MIN_REPLICATES} estimates, got {m}")
    sd = float(np.std(errors))
    if not sd > 0.0:
        raise DegenerateEstimates("estimates have zero spread")
    standardized = np.sort((errors - errors.mean()) / sd)
    theoretical = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    correlation = float(np.corrcoef(theoretical, standardized)[0, 1])
    return correlation, pd.DataFrame({"theoretical": theoretical, "sample": standardized})


def summarize(table: pd.DataFrame) -> Tuple[pd.DataFrame, Dict[Tuple[int, str], pd.DataFrame]]:
    """Per (n, parameter): sqrt(n) x bias, variance and MSE of the errors against realized truth."""
    summary_rows = []
    qq_data = {}
    for (n, parameter), group in table.groupby(["n", "parameter"], sort=False):
        ok = group[group["failure_code"] == ""]
        row = dict(n=n, parameter=parameter, sqrtn_bias=np.nan, variance=np.nan, mse=np.nan,
                   qq_correlation=np.nan, n_failures=int(len(group) - len(ok)))
        errors = (ok["estimate"] - ok["truth"]).to_numpy(dtype=float)
        errors = errors[np.isfinite(errors)]
        if errors.size:
            bias = float(errors.mean())
            row["sqrtn_bias"] = math.sqrt(n) * bias
            row["variance"] = float(np.mean((errors - bias) ** 2))
            row["mse"] = float(np.mean(errors ** 2))
            if errors.size >= QQ_MIN_REPLICATES:
                try:
                    row["qq_correlation"], qq_data[(n, parameter)] = normality_diagnostics(errors)
                except DegenerateEstimates:
                    pass
        summary_rows.append(row)
    return pd.DataFrame(summary_rows, columns=SUMMARY_COLUMNS), qq_data


@dataclass
class SimResult:
    table: pd.DataFrame
    summary: pd.DataFrame
    qq_data: Dict[Tuple[int, str], pd.DataFrame] = field(default_factory=dict)

    def failure_share(self) -> float:
        if self.table.empty:
            return 0.0
        failed = self.table.groupby(["n", "replicate"])["failure_code"].apply(lambda codes: (codes != "").any())
        return float(failed.mean())

    def estimates(self, n: int, parameter: str) -> np.ndarray:
        rows = self.table[(self.table["n"] == n) & (self.table["parameter"] == parameter)]
        return rows["estimate"].to_numpy(dtype=float)

    def truths(self, n: int, parameter: str) -> np.ndarray:
        rows = self.table[(self.table["n"] == n) & (self.table["parameter"] == parameter)]
        return rows["truth"].to_numpy(dtype=float)


def run_experiment(config: SimConfig, progress: Optional[Callable[[int, int], None]] = None) -> SimResult:
    """
    Runs every replicate at every n. Replicates may execute concurrently; rows
    are assembled in (n, replicate) order so the result does not depend on
    the thread count.
    """
    rows: List[dict] = []
    for n in config.n_grid:
        p = config.p_for(n)
        logger.info("n=%d p=%d: %d replicates of '%s' on %d thread(s)", n, p, config.replicates, config.estimand, config.threads)
        designs = _design_models(config, p)
        tasks = [
            (lambda r=r: _replicate_rows(config, n, r, designs))
            for r in range(config.replicates)
        ]
        for replicate_rows in run_in_pool(tasks, config.threads):
            rows.extend(replicate_rows)
        if progress:
            progress(n, config.replicates)

    table = pd.DataFrame(rows, columns=TABLE_COLUMNS)
    summary, qq_data = summarize(table)
    result = SimResult(table, summary, qq_data)
    share = result.failure_share()
    if share > MAX_FAILURE_SHARE:
        logger.warning("%.1f%% of replicates had a solver failure", 100 * share)
    return result
