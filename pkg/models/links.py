from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.special import expit, ndtr

from .errors import InvalidOrder, UnknownLink

ArrayFn = Callable[[np.ndarray], np.ndarray]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class LinkSpec:
    """A link function phi together with its first three derivatives."""
    name: str
    value: ArrayFn
    d1: ArrayFn
    d2: ArrayFn
    d3: ArrayFn
    range: Tuple[float, float] = (-np.inf, np.inf)

    def derivative(self, k: int) -> ArrayFn:
        """Returns phi^(k) for k in 0..3."""
        if k == 0:
            return self.value
        if k == 1:
            return self.d1
        if k == 2:
            return self.d2
        if k == 3:
            return self.d3
        raise InvalidOrder(f"link derivative order {k} not in 0..3")

    @property
    def is_binary_range(self) -> bool:
        """True when phi maps into [0, 1], i.e. it can be a Bernoulli mean."""
        lo, hi = self.range
        return lo >= 0.0 and hi <= 1.0


# --- Built-in links ---

def _logistic_d1(t):
    s = expit(t)
    return s * (1.0 - s)


def _logistic_d2(t):
    s = expit(t)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _logistic_d3(t):
    s = expit(t)
    return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)


def _normal_pdf(t):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(t))


def _probit_d2(t):
    return -t * _normal_pdf(t)


def _probit_d3(t):
    return (np.square(t) - 1.0) * _normal_pdf(t)


def _ones(t):
    return np.ones_like(np.asarray(t, dtype=float))


def _zeros(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def _identity(t):
    return np.asarray(t, dtype=float)


LOGISTIC = LinkSpec("logistic", expit, _logistic_d1, _logistic_d2, _logistic_d3, (0.0, 1.0))
PROBIT = LinkSpec("probit", ndtr, _normal_pdf, _probit_d2, _probit_d3, (0.0, 1.0))
LOG_LINEAR = LinkSpec("log-linear", np.exp, np.exp, np.exp, np.exp, (0.0, np.inf))
IDENTITY = LinkSpec("identity", _identity, _ones, _zeros, _zeros)


def shifted_logistic(floor: float = 0.1) -> LinkSpec:
    """
    eta(t) = floor + (1 - floor) * expit(t): a propensity bounded away from 0,
    the missingness model of the MAR experiments.
    """
    scale = 1.0 - floor
    return LinkSpec(
        name="shifted-logistic" if floor == 0.1 else f"shifted-logistic-{floor:g}",
        value=lambda t: floor + scale * expit(t),
        d1=lambda t: scale * _logistic_d1(t),
        d2=lambda t: scale * _logistic_d2(t),
        d3=lambda t: scale * _logistic_d3(t),
        range=(floor, 1.0),
    )


SHIFTED_LOGISTIC = shifted_logistic(0.1)

_REGISTRY: Dict[str, LinkSpec] = {
    link.name: link for link in (LOGISTIC, PROBIT, LOG_LINEAR, IDENTITY, SHIFTED_LOGISTIC)
}


def get_link(name: str) -> LinkSpec:
    try:
        return _REGISTRY[name.strip().lower()]
    except KeyError:
        raise UnknownLink(f"unknown link '{name}'; known: {', '.join(builtin_link_names())}") from None


def builtin_link_names() -> List[str]:
    return sorted(_REGISTRY)
