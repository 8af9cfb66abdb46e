from __future__ import annotations
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.special import roots_hermite

from utils.config import (
    MAX_LINK_ORDER,
    QUAD_NODES_CAP,
    QUAD_NODES_DEFAULT,
    TOL_PSD,
    TOL_QUAD,
)
from .errors import InvalidOrder, NonFiniteIntegral, NonPSDCovariance
from .links import LinkSpec


# --- Index laws ---

@dataclass(frozen=True)
class IndexLaw:
    """Law N(lam, gamma2) of a linear index beta'X under a Gaussian design."""
    lam: float
    gamma2: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.gamma2)):
            raise NonFiniteIntegral(f"index law must be finite, got ({self.lam}, {self.gamma2})")
        if self.gamma2 < 0.0:
            raise NonPSDCovariance(f"index variance must be >= 0, got {self.gamma2}")


@dataclass(frozen=True)
class BivariateIndexLaw:
    """Joint law of (alpha'X, beta'X)."""
    lambda1: float
    lambda2: float
    gamma11: float
    gamma22: float
    gamma12: float

    def projected(self) -> Tuple["BivariateIndexLaw", bool]:
        """
        Clips a slightly indefinite covariance onto the PSD boundary.
        Returns the (possibly) clipped law and whether clipping happened.
        """
        g11, g22, g12 = self.gamma11, self.gamma22, self.gamma12
        if g11 < -TOL_PSD or g22 < -TOL_PSD:
            raise NonPSDCovariance(f"negative index variance ({g11}, {g22})")
        clipped = g11 < 0.0 or g22 < 0.0
        g11, g22 = max(g11, 0.0), max(g22, 0.0)
        excess = g12 * g12 - g11 * g22
        if excess > TOL_PSD:
            raise NonPSDCovariance(
                f"gamma12^2 exceeds gamma11*gamma22 by {excess:.3e} (> {TOL_PSD:g})"
            )
        if excess > 0.0:
            g12 = math.copysign(math.sqrt(g11 * g22), g12)
            clipped = True
        if not clipped:
            return self, False
        return replace(self, gamma11=g11, gamma22=g22, gamma12=g12), True

    def cholesky(self) -> Tuple[float, float, float]:
        """Lower-triangular factor (l11, l21, l22) of the projected covariance."""
        law, _ = self.projected()
        l11 = math.sqrt(law.gamma11)
        if l11 > 0.0:
            l21 = law.gamma12 / l11
            l22 = math.sqrt(max(law.gamma22 - l21 * l21, 0.0))
        else:
            l21 = 0.0
            l22 = math.sqrt(law.gamma22)
        return l11, l21, l22


# --- Quadrature rule ---

@lru_cache(maxsize=16)
def hermite_rule(n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights normalized to integrate against N(0, 1/2)."""
    nodes, weights = roots_hermite(n_nodes)
    return nodes, weights / math.sqrt(math.pi)


def _adaptive(rule: Callable[[int], np.ndarray]) -> np.ndarray:
    """Doubles the node count until two successive evaluations agree."""
    n_nodes = QUAD_NODES_DEFAULT
    previous = rule(n_nodes)
    current = previous
    while n_nodes < QUAD_NODES_CAP:
        n_nodes *= 2
        current = rule(n_nodes)
        if not np.all(np.isfinite(current)):
            break
        if np.all(np.abs(current - previous) <= TOL_QUAD * np.maximum(1.0, np.abs(current))):
            break
        previous = current
    if not np.all(np.isfinite(current)):
        raise NonFiniteIntegral(
            "Gaussian expectation of the link is not finite; "
            "the link grows too fast for the index law"
        )
    return current


def _check_order(k: int) -> None:
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= MAX_LINK_ORDER:
        raise InvalidOrder(f"derivative order must be in 0..{MAX_LINK_ORDER}, got {k}")


def link_moments(link: LinkSpec, law: IndexLaw, orders: Sequence[int] = (0, 1, 2, 3)) -> np.ndarray:
    """
    Vector of f_k(lam, gamma2) = E[phi^(k)(Z)], Z ~ N(lam, gamma2), for each k in
    `orders`, sharing one adaptive quadrature pass.
    """
    for k in orders:
        _check_order(k)
    funcs = [link.derivative(k) for k in orders]

    if law.gamma2 == 0.0:
        point = np.array([law.lam])
        values = np.array([float(np.asarray(f(point)).reshape(-1)[0]) for f in funcs])
        if not np.all(np.isfinite(values)):
            raise NonFiniteIntegral(f"link derivative not finite at {law.lam}")
        return values

    scale = math.sqrt(2.0 * law.gamma2)

    def rule(n_nodes: int) -> np.ndarray:
        nodes, weights = hermite_rule(n_nodes)
        z = law.lam + scale * nodes
        with np.errstate(over="ignore", invalid="ignore"):
            return np.array([np.dot(weights, f(z)) for f in funcs])

    return _adaptive(rule)


def eval_fk(link: LinkSpec, k: int, law: IndexLaw) -> float:
    """f_k(lam, gamma2) = E[phi^(k)(Z)] with Z ~ N(lam, gamma2)."""
    return float(link_moments(link, law, (k,))[0])


def eval_fk_grad(link: LinkSpec, k: int, law: IndexLaw) -> Tuple[float, float]:
    """
    Partial derivatives of f_k in (lam, gamma2). By Stein's lemma
    d f_k / d lam = f_{k+1} and d f_k / d gamma2 = f_{k+2} / 2.
    """
    if k not in (0, 1):
        raise InvalidOrder(f"gradient available for k in {{0, 1}}, got {k}")
    f_next, f_next2 = link_moments(link, law, (k + 1, k + 2))
    return float(f_next), 0.5 * float(f_next2)


def eval_bivariate(link1: LinkSpec, link2: LinkSpec, law: BivariateIndexLaw) -> float:
    """E[eta(Z1) phi(Z2)] under the bivariate normal law, by a tensor Gauss-Hermite rule."""
    l11, l21, l22 = law.cholesky()
    root2 = math.sqrt(2.0)
    eta, phi = link1.value, link2.value

    def rule(n_nodes: int) -> np.ndarray:
        nodes, weights = hermite_rule(n_nodes)
        u1 = nodes[:, None]
        u2 = nodes[None, :]
        z1 = law.lambda1 + root2 * l11 * u1
        z2 = law.lambda2 + root2 * (l21 * u1 + l22 * u2)
        with np.errstate(over="ignore", invalid="ignore"):
            grid = np.broadcast_to(eta(z1), (n_nodes, n_nodes)) * phi(z2)
            return np.array([weights @ grid @ weights])

    return float(_adaptive(rule)[0])
