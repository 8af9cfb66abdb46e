from __future__ import annotations
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from natsort import natsorted
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from utils.config import SYMMETRY_TOL
from .errors import (
    DataFormatError,
    DimensionMismatch,
    EmptyDataset,
    NonPSDCovariance,
    SingularSigma,
)

COVARIATE_PATTERN = re.compile(r"^x(\d+)$")
RESPONSE_COLUMN = "y"
TREATMENT_COLUMN = "a"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


# --- Data Classes ---

@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations of covariates X (n x p), response Y and optional second response A."""
    X: np.ndarray
    Y: np.ndarray
    A: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _frozen(self.X)
        Y = _frozen(self.Y).reshape(-1)
        if X.ndim != 2:
            raise DimensionMismatch(f"X must be a matrix, got shape {X.shape}")
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise EmptyDataset("dataset has no rows or no covariates")
        if Y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"Y has length {Y.shape[0]}, X has {X.shape[0]} rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.A is not None:
            A = _frozen(self.A).reshape(-1)
            if A.shape[0] != X.shape[0]:
                raise DimensionMismatch(f"A has length {A.shape[0]}, X has {X.shape[0]} rows")
            object.__setattr__(self, "A", A)
        for name, values in (("X", self.X), ("Y", self.Y), ("A", self.A)):
            if values is not None and not np.all(np.isfinite(values)):
                raise DataFormatError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def has_a(self) -> bool:
        return self.A is not None

    def rows(self, index: np.ndarray) -> "Dataset":
        """Sub-dataset on the given row indices (order preserved)."""
        return Dataset(
            X=self.X[index],
            Y=self.Y[index],
            A=None if self.A is None else self.A[index],
        )


class DesignMode(str, Enum):
    KNOWN_SIGMA = "KnownSigma"
    UNKNOWN_SIGMA_SPLIT = "UnknownSigmaSplit"
    UNKNOWN_SIGMA_LINEAR = "UnknownSigmaLinear"


@dataclass(frozen=True, eq=False)
class DesignModel:
    """
    What is known about the covariate law X ~ (mu, Sigma). In KnownSigma mode
    Sigma is factorized once (lower Cholesky) and every Sigma^-1 application
    goes through triangular solves.
    """
    mu_known_zero: bool = False
    sigma: Optional[np.ndarray] = None
    mode: DesignMode = DesignMode.KNOWN_SIGMA
    _factor: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)
    _identity: bool = field(default=False, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode != DesignMode.KNOWN_SIGMA:
            if self.sigma is not None:
                raise DimensionMismatch(f"sigma must be absent in {self.mode.value} mode")
            return
        if self.sigma is None:
            raise DimensionMismatch("KnownSigma mode requires sigma")
        sigma = _frozen(self.sigma)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise DimensionMismatch(f"sigma must be square, got shape {sigma.shape}")
        if not np.all(np.isfinite(sigma)):
            raise NonPSDCovariance("sigma contains non-finite entries")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(sigma))):
            raise NonPSDCovariance("sigma is not symmetric")
        try:
            factor = cholesky(sigma, lower=True)
        except LinAlgError as e:
            raise SingularSigma(f"sigma is not positive definite: {e}") from None
        factor.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_factor", factor)
        object.__setattr__(self, "_identity", bool(np.array_equal(sigma, np.eye(sigma.shape[0]))))

    # --- Constructors ---

    @classmethod
    def known(cls, sigma: np.ndarray, mu_known_zero: bool = False) -> "DesignModel":
        return cls(mu_known_zero=mu_known_zero, sigma=sigma)

    @classmethod
    def identity(cls, p: int, mu_known_zero: bool = False) -> "DesignModel":
        return cls(mu_known_zero=mu_known_zero, sigma=np.eye(p))

    @classmethod
    def unknown_split(cls) -> "DesignModel":
        return cls(mu_known_zero=True, sigma=None, mode=DesignMode.UNKNOWN_SIGMA_SPLIT)

    # --- Linear algebra through the factor ---

    @property
    def p(self) -> int:
        self._require_sigma()
        return self.sigma.shape[0]

    def _require_sigma(self) -> None:
        if self._factor is None:
            raise SingularSigma(f"no covariance factorization in {self.mode.value} mode")

    def whiten(self, X: np.ndarray) -> np.ndarray:
        """Rows Z_i with Z_i'Z_j = X_i' Sigma^-1 X_j (Z = X L^-T)."""
        self._require_sigma()
        if X.shape[1] != self.p:
            raise DimensionMismatch(f"X has {X.shape[1]} columns, sigma is {self.p} x {self.p}")
        if self._identity:
            return X
        return solve_triangular(self._factor, X.T, lower=True, check_finite=False).T

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Sigma^-1 B."""
        self._require_sigma()
        if self._identity:
            return np.array(B, dtype=float, copy=True)
        return cho_solve((self._factor, True), B, check_finite=False)


# --- CSV ingestion ---

def _numeric_frame(frame: pd.DataFrame, source: Path) -> np.ndarray:
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{source.name}: non-finite or non-numeric entries")
    return values


def covariate_columns(columns: List[str]) -> List[str]:
    """Returns x1..xp in natural order; rejects gaps and unknown columns."""
    covariates = natsorted(c for c in columns if COVARIATE_PATTERN.match(c))
    expected = [f"x{j}" for j in range(1, len(covariates) + 1)]
    if covariates != expected:
        raise DataFormatError(f"covariate columns must be x1..x{len(covariates)}, got {covariates}")
    unknown = set(columns) - set(covariates) - {RESPONSE_COLUMN, TREATMENT_COLUMN}
    if unknown:
        raise DataFormatError(f"unexpected columns: {natsorted(unknown)}")
    return covariates


def load_dataset_csv(path: Path) -> Dataset:
    """Reads a dataset CSV with header y[,a],x1..xp."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=str)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"cannot read {path}: {e}") from None
    frame.columns = [c.strip().lower() for c in frame.columns]
    if RESPONSE_COLUMN not in frame.columns:
        raise DataFormatError(f"{path.name}: missing required column '{RESPONSE_COLUMN}'")
    covariates = covariate_columns(list(frame.columns))
    if not covariates:
        raise DataFormatError(f"{path.name}: no covariate columns x1..xp")
    if frame.empty:
        raise EmptyDataset(f"{path.name}: no rows")

    X = _numeric_frame(frame[covariates], path)
    Y = _numeric_frame(frame[[RESPONSE_COLUMN]], path)[:, 0]
    A = None
    if TREATMENT_COLUMN in frame.columns:
        A = _numeric_frame(frame[[TREATMENT_COLUMN]], path)[:, 0]
    return Dataset(X=X, Y=Y, A=A)


def load_sigma_csv(path: Path, p: int) -> np.ndarray:
    """Reads a header-less p x p covariance matrix."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, encoding="utf-8", dtype=str)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"cannot read {path}: {e}") from None
    sigma = _numeric_frame(frame, path)
    if sigma.shape != (p, p):
        raise DimensionMismatch(f"{path.name}: sigma is {sigma.shape}, data has p = {p}")
    return sigma
