"""
Monte-Carlo checks of the population moment identities: every moment of every
chain is estimated by averaging unbiased U-statistics over independent batches
and compared with the closed-form value at the true parameters.
"""
from __future__ import annotations
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.dataset import DesignModel
from models.errors import ConfigInvalid, UnknownIdentity
from models.links import LOGISTIC, SHIFTED_LOGISTIC, LinkSpec
from models.ustat_moments import Estimand, beta_name, collect_moments, moment_names
from utils.workers import run_in_pool
from .simlab import SimConfig, draw_replicate

ORACLE_DIM = 3
DEFAULT_BATCHES = 100
FIRST_ORDER_STEIN = "stein:first-order"


@dataclass(frozen=True, eq=False)
class OraclePoint:
    """A population with Sigma = I_3: mean mu, coefficient vectors and links."""
    model: str
    mu: Tuple[float, ...]
    beta: Tuple[float, ...]
    alpha: Optional[Tuple[float, ...]] = None
    link: LinkSpec = LOGISTIC
    link_a: Optional[LinkSpec] = None
    psi: float = 0.0

    def sim_config(self, batch: int, seed: int) -> SimConfig:
        true_params = {"beta": np.asarray(self.beta, dtype=float)}
        if self.alpha is not None:
            true_params["alpha"] = np.asarray(self.alpha, dtype=float)
        return SimConfig(
            estimand=self.model,
            link=self.link,
            link_a=self.link_a,
            mu=np.asarray(self.mu, dtype=float),
            n_grid=(batch,),
            ratio=ORACLE_DIM / batch,
            replicates=1,
            seed=seed,
            coords=(1,),
            psi=self.psi,
            mu_paths="known-zero" if self.model == "glm0" else "general",
            cross_check=True,
            true_params=true_params,
        )


_R = math.sqrt(0.5)

ORACLE_POINTS: Dict[str, List[OraclePoint]] = {
    "glm0": [
        OraclePoint("glm0", mu=(0.0, 0.0, 0.0), beta=(0.8, 0.5, 0.0)),
        OraclePoint("glm0", mu=(0.0, 0.0, 0.0), beta=(1.2, -0.6, 0.3)),
    ],
    "glm": [
        # lambda = 0.3, gamma2 = 1, m_X2 = 0.5
        OraclePoint("glm", mu=(_R, 0.0, 0.0), beta=(0.3 / _R, math.sqrt(0.82), 0.0)),
        OraclePoint("glm", mu=(0.4, -0.3, 0.2), beta=(0.5, 0.7, -0.4)),
    ],
    "ce": [
        OraclePoint("ce", mu=(0.3, 0.0, 0.2), alpha=(0.6, 0.4, 0.0), beta=(0.5, -0.3, 0.4),
                    link_a=LOGISTIC, psi=0.7),
        OraclePoint("ce", mu=(0.0, 0.5, 0.0), alpha=(-0.5, 0.3, 0.6), beta=(0.2, 0.6, 0.1),
                    link_a=LOGISTIC, psi=-0.4),
    ],
    "mar": [
        OraclePoint("mar", mu=(0.3, 0.0, 0.0), alpha=(0.8, 0.2, 0.0), beta=(0.4, 0.5, -0.2),
                    link_a=SHIFTED_LOGISTIC),
        OraclePoint("mar", mu=(0.2, 0.2, 0.2), alpha=(0.3, -0.6, 0.5), beta=(1.0, 0.0, 0.5),
                    link_a=SHIFTED_LOGISTIC),
    ],
    "gcm": [
        OraclePoint("gcm", mu=(0.2, 0.0, 0.1), alpha=(0.5, 0.5, 0.0), beta=(0.3, -0.4, 0.6),
                    link_a=LOGISTIC),
        OraclePoint("gcm", mu=(0.0, -0.3, 0.3), alpha=(0.7, 0.0, 0.2), beta=(0.4, 0.4, 0.4),
                    link_a=LOGISTIC),
    ],
}


def _registry() -> Dict[str, Tuple[str, str]]:
    """identity id -> (model, moment name)."""
    registry = {}
    for model in ORACLE_POINTS:
        names = moment_names(Estimand(model), coords=(1,), cross_check=(model == "mar"))
        for name in names:
            registry[f"{model}:{name}"] = (model, name)
    # E[X f(b'X)] = mu E[f] + Sigma b E[f'], first coordinate
    registry[FIRST_ORDER_STEIN] = ("glm", beta_name(1))
    return registry


IDENTITIES: Dict[str, Tuple[str, str]] = _registry()


def identity_ids() -> List[str]:
    return sorted(IDENTITIES)


@dataclass(frozen=True)
class OracleResult:
    identity: str
    lhs: float
    rhs: float
    se: float
    z: float

    def passes(self, bound: float = 4.0) -> bool:
        return abs(self.z) <= bound


def stein_oracle_check(
        identity: str,
        point: Optional[OraclePoint] = None,
        samples: int = 1_000_000,
        batches: int = DEFAULT_BATCHES,
        seed: int = 0,
        threads: int = 1,
) -> OracleResult:
    """
    Estimates the left-hand side of an identity by averaging per-batch
    U-statistics over `samples` draws split into `batches` batches; the
    right-hand side is the forward chain at the true parameters.
    """
    if identity not in IDENTITIES:
        raise UnknownIdentity(f"unknown identity '{identity}'; known: {', '.join(identity_ids())}")
    model, name = IDENTITIES[identity]
    point = point or ORACLE_POINTS[model][0]
    if point.model != model:
        raise ConfigInvalid(f"identity '{identity}' needs a '{model}' point, got '{point.model}'")
    if batches < 2 or samples // batches < 2:
        raise ConfigInvalid(f"need at least 2 batches of 2 samples, got {samples} samples in {batches} batches")

    batch = samples // batches
    config = point.sim_config(batch, seed)
    design = DesignModel.identity(ORACLE_DIM)
    estimand = Estimand(model)

    def one_batch(b: int) -> Tuple[float, float]:
        draw = draw_replicate(config, batch, b)
        ms = collect_moments(draw.dataset, design, estimand, coords=(1,), cross_check=(model == "mar"))
        return ms[name], draw.moments[name]

    values = run_in_pool([(lambda b=b: one_batch(b)) for b in range(batches)], threads)
    estimates = np.array([v[0] for v in values])
    rhs = values[0][1]
    lhs = float(estimates.mean())
    se = float(estimates.std(ddof=1) / math.sqrt(batches))
    if se > 0.0:
        z = (lhs - rhs) / se
    else:
        z = 0.0 if lhs == rhs else math.inf
    return OracleResult(identity, lhs, rhs, se, z)


def run_oracle_suite(
        ids: Optional[Sequence[str]] = None, samples: int = 1_000_000, seed: int = 0, threads: int = 1,
) -> List[OracleResult]:
    """Every identity at both registered points of its model."""
    results = []
    for identity in ids or identity_ids():
        model, _ = IDENTITIES[identity]
        for k, point in enumerate(ORACLE_POINTS[model]):
            results.append(stein_oracle_check(identity, point, samples, seed=seed + k, threads=threads))
    return results
