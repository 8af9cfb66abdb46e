from __future__ import annotations
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from .dataset import Dataset, DesignModel
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    IndexOutOfRange,
    MissingMoment,
    MissingResponseA,
    NonFiniteMoment,
)
from utils.config import MOMENT_NEG_SLACK


class Estimand(str, Enum):
    GLM0 = "glm0"
    GLM = "glm"
    CE = "ce"
    MAR = "mar"
    GCM = "gcm"


# Moment name -> (U-statistic order, left weight, right weight). Weights name
# per-row vectors: "1", "Y", "A" or "AY".
MOMENT_KERNELS: Dict[str, Tuple[int, str, str]] = {
    "m_Y": (1, "Y", ""),
    "m_A": (1, "A", ""),
    "m_AY": (1, "AY", ""),
    "m_X2": (2, "1", "1"),
    "m_XY_X": (2, "Y", "1"),
    "m_XA_X": (2, "A", "1"),
    "m_XY2": (2, "Y", "Y"),
    "m_XA2": (2, "A", "A"),
    "m_XA_XY": (2, "A", "Y"),
    "m_XAY_XA": (2, "AY", "A"),
    "m_XAY_X": (2, "AY", "1"),
}

ESTIMAND_MOMENTS: Dict[Estimand, List[str]] = {
    Estimand.GLM0: ["m_XY2"],
    Estimand.GLM: ["m_Y", "m_X2", "m_XY_X", "m_XY2"],
    Estimand.CE: ["m_A", "m_Y", "m_AY", "m_X2", "m_XA_X", "m_XA2", "m_XA_XY", "m_XAY_XA"],
    Estimand.MAR: ["m_A", "m_X2", "m_XA_X", "m_XA2", "m_AY", "m_XAY_X"],
    Estimand.GCM: ["m_A", "m_Y", "m_X2", "m_XA_X", "m_XY_X", "m_XA2", "m_XY2", "m_XA_XY"],
}

NEEDS_A = {Estimand.CE, Estimand.MAR, Estimand.GCM}
MAR_CROSS_CHECK = "m_XAY_XA"


def beta_name(j: int) -> str:
    return f"m_beta_j({j})"


def nu_name(j: int) -> str:
    return f"m_nu_j({j})"


@dataclass(frozen=True)
class MomentValue:
    value: float
    ustat_order: int


@dataclass
class MomentSet:
    """Named estimates of population moments, each tagged with its U-statistic order."""
    values: Dict[str, MomentValue] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, name: str) -> float:
        return self.get(name)

    def get(self, name: str) -> float:
        try:
            return self.values[name].value
        except KeyError:
            raise MissingMoment(f"moment '{name}' not in set {sorted(self.values)}") from None

    def put(self, name: str, value: float, ustat_order: int) -> None:
        if not math.isfinite(value):
            raise NonFiniteMoment(f"moment '{name}' is not finite; covariates or responses too large to aggregate")
        self.values[name] = MomentValue(float(value), ustat_order)

    def require(self, names: Iterable[str]) -> None:
        missing = [name for name in names if name not in self.values]
        if missing:
            raise MissingMoment(f"missing moments: {missing}")

    def as_dict(self) -> Dict[str, float]:
        return {name: mv.value for name, mv in self.values.items()}

    @classmethod
    def from_values(cls, values: Dict[str, float]) -> "MomentSet":
        """Builds a set from plain numbers (orders looked up by name)."""
        ms = cls()
        for name, value in values.items():
            order = MOMENT_KERNELS[name][0] if name in MOMENT_KERNELS else 1
            ms.put(name, value, order)
        return ms


# --- Core U-statistics ---

def ustat1_mean(values: Sequence[float]) -> float:
    """First-order U-statistic: the empirical mean (correctly rounded sum)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyDataset("cannot average an empty vector")
    return math.fsum(values.tolist()) / values.size


def _check_weights(n: int, *weights: np.ndarray) -> None:
    for w in weights:
        if w.shape != (n,):
            raise DimensionMismatch(f"weight vector has shape {w.shape}, expected ({n},)")


def _bilinear_whitened(Z: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """
    U_{n,2}[f_1 Z_1'Z_2 g_2] over ordered pairs i != j, via the aggregated
    vectors a = sum f_i Z_i and b = sum g_i Z_i.
    """
    n = Z.shape[0]
    a = Z.T @ f
    b = Z.T @ g
    cross = 0.5 * (a @ b + b @ a)
    diagonal = np.dot(f * g, np.einsum("ij,ij->i", Z, Z))
    return float((cross - diagonal) / (n * (n - 1)))


def ustat2_bilinear(ds: Dataset, f: np.ndarray, g: np.ndarray, design: DesignModel) -> float:
    """U_{n,2}[f_1 X_1' Sigma^-1 X_2 g_2], symmetrized in (f, g)."""
    if ds.n < 2:
        raise EmptyDataset(f"second-order U-statistic needs n >= 2, got {ds.n}")
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_weights(ds.n, f, g)
    return _bilinear_whitened(design.whiten(ds.X), f, g)


def _direction_matrix(design: DesignModel, coords: Sequence[int]) -> np.ndarray:
    """Columns Sigma^-1 e_j for the requested 1-based coordinates."""
    p = design.p
    for j in coords:
        if not 1 <= j <= p:
            raise IndexOutOfRange(f"coordinate {j} outside 1..{p}")
    E = np.zeros((p, len(coords)))
    E[[j - 1 for j in coords], range(len(coords))] = 1.0
    return design.solve(E)


def ustat1_direction(ds: Dataset, f: np.ndarray, j: int, design: DesignModel) -> float:
    """(1/n) sum_i f_i X_i' Sigma^-1 e_j."""
    f = np.asarray(f, dtype=float)
    _check_weights(ds.n, f)
    if design.p != ds.p:
        raise DimensionMismatch(f"X has {ds.p} columns, sigma is {design.p} x {design.p}")
    v = _direction_matrix(design, [j])[:, 0]
    return ustat1_mean(f * (ds.X @ v))


# --- Moment collection ---

def _weights(ds: Dataset) -> Dict[str, np.ndarray]:
    weights = {"1": np.ones(ds.n), "Y": ds.Y}
    if ds.A is not None:
        weights["A"] = ds.A
        weights["AY"] = ds.A * ds.Y
    return weights


def moment_names(estimand: Estimand, coords: Sequence[int] = (), cross_check: bool = False) -> List[str]:
    """Names collect_moments returns for an estimand."""
    estimand = Estimand(estimand)
    names = list(ESTIMAND_MOMENTS[estimand])
    if cross_check and estimand == Estimand.MAR:
        names.append(MAR_CROSS_CHECK)
    for j in coords:
        names.append(beta_name(j))
        if estimand != Estimand.GLM0:
            names.append(nu_name(j))
    return names


def mean_norm_floor(n: int, p: int) -> float:
    """Most negative m_X2 attributed to rounding rather than sampling noise."""
    return -MOMENT_NEG_SLACK * p / n


def _check_mean_norm(ms: MomentSet, n: int, p: int) -> None:
    # m_X2 estimates mu' Sigma^-1 mu >= 0; the unbiased value is kept either way
    if "m_X2" not in ms:
        return
    value, floor = ms["m_X2"], mean_norm_floor(n, p)
    if value < floor:
        ms.notes.append(f"m_X2 = {value:.6g} below {floor:.3g}: the design mean is indistinguishable from zero")


def collect_moments(
        ds: Dataset,
        design: DesignModel,
        estimand: Estimand,
        coords: Sequence[int] = (),
        cross_check: bool = False,
) -> MomentSet:
    """
    Unbiased U-statistic estimates of exactly the moments on the left-hand
    sides of the estimand's moment chain, plus m_beta_j / m_nu_j per coordinate.
    """
    estimand = Estimand(estimand)
    if estimand in NEEDS_A and not ds.has_a:
        raise MissingResponseA(f"estimand '{estimand.value}' requires column 'a'")
    if ds.n < 2:
        raise EmptyDataset(f"need at least 2 rows, got {ds.n}")

    weights = _weights(ds)
    names = moment_names(estimand, (), cross_check)
    ms = MomentSet()

    Z = design.whiten(ds.X) if any(MOMENT_KERNELS[m][0] == 2 for m in names) else None
    for name in names:
        order, left, right = MOMENT_KERNELS[name]
        if order == 1:
            ms.put(name, ustat1_mean(weights[left]), 1)
        else:
            ms.put(name, _bilinear_whitened(Z, weights[left], weights[right]), 2)
    _check_mean_norm(ms, ds.n, ds.p)

    if coords:
        coords = list(coords)
        if design.p != ds.p:
            raise DimensionMismatch(f"X has {ds.p} columns, sigma is {design.p} x {design.p}")
        projections = ds.X @ _direction_matrix(design, coords)
        for col, j in enumerate(coords):
            ms.put(beta_name(j), ustat1_mean(ds.Y * projections[:, col]), 1)
            if estimand != Estimand.GLM0:
                ms.put(nu_name(j), ustat1_mean(projections[:, col]), 1)
    return ms


# --- Reference implementations (pair enumeration, explicit inverse) ---

def naive_ustat2_bilinear(X: np.ndarray, f: np.ndarray, g: np.ndarray, sigma: np.ndarray) -> float:
    """Kernel sum over all ordered pairs i != j of the n x n Gram matrix; used as an oracle."""
    omega = np.linalg.inv(sigma)
    gram = (X @ omega @ X.T).tolist()
    f, g = list(map(float, f)), list(map(float, g))
    n = X.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total += 0.5 * (f[i] * gram[i][j] * g[j] + f[j] * gram[j][i] * g[i])
    return total / (n * (n - 1))


def naive_collect_moments(
        ds: Dataset, sigma: np.ndarray, estimand: Estimand, coords: Sequence[int] = (),
        cross_check: bool = False,
) -> Dict[str, float]:
    """Reference for collect_moments built on naive_ustat2_bilinear."""
    estimand = Estimand(estimand)
    weights = _weights(ds)
    omega = np.linalg.inv(sigma)
    result = {}
    for name in moment_names(estimand, (), cross_check):
        order, left, right = MOMENT_KERNELS[name]
        if order == 1:
            result[name] = float(np.sum(weights[left]) / ds.n)
        else:
            result[name] = naive_ustat2_bilinear(ds.X, weights[left], weights[right], sigma)
    for j in coords:
        direction = omega[:, j - 1]
        result[beta_name(j)] = float(np.sum(ds.Y * (ds.X @ direction)) / ds.n)
        if estimand != Estimand.GLM0:
            result[nu_name(j)] = float(np.sum(ds.X @ direction) / ds.n)
    return result
