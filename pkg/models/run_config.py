from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .dataset import load_sigma_csv
from .errors import ConfigInvalid, MomglmError
from .links import LinkSpec, get_link

# Section -> allowed keys
SCHEMA: Dict[str, Tuple[str, ...]] = {
    "model": ("estimand", "link", "link_a", "coords", "psi", "noise_sd", "mu_paths", "cross_check"),
    "design": ("kind", "sigma", "mu"),
    "sim": ("n_grid", "ratio", "replicates", "seed", "coef_scheme", "freeze_coefficients"),
    "output": ("directory",),
}

DEFAULTS = {
    "coords": "1",
    "psi": "0",
    "noise_sd": "0.2",
    "mu_paths": "both",
    "cross_check": "false",
    "kind": "gaussian-identity",
    "replicates": "100",
    "seed": "0",
    "coef_scheme": "dense-uniform",
    "freeze_coefficients": "false",
}


def parse_int_list(text: str, what: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigInvalid(f"{what}: expected a comma-separated list of integers, got '{text}'") from None
    if not values:
        raise ConfigInvalid(f"{what}: empty list")
    return values


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Parsed campaign file."""
    source: Path
    estimand: str
    link: LinkSpec
    link_a: Optional[LinkSpec]
    coords: Tuple[int, ...]
    psi: float
    noise_sd: float
    mu_paths: str
    cross_check: bool
    design_kind: str
    sigma: Optional[np.ndarray]
    mu: Optional[np.ndarray]
    n_grid: Tuple[int, ...]
    ratio: float
    replicates: int
    seed: int
    coef_scheme: str
    freeze_coefficients: bool
    output_dir: Optional[Path]

    def to_sim_config(self, threads: int = 1, seed: Optional[int] = None):
        from controllers.simlab import SimConfig

        return SimConfig(
            estimand=self.estimand,
            link=self.link,
            link_a=self.link_a,
            design=self.design_kind,
            sigma=self.sigma,
            mu=self.mu,
            coef_scheme=self.coef_scheme,
            n_grid=self.n_grid,
            ratio=self.ratio,
            replicates=self.replicates,
            seed=self.seed if seed is None else seed,
            coords=self.coords,
            psi=self.psi,
            noise_sd=self.noise_sd,
            mu_paths=self.mu_paths,
            freeze_coefficients=self.freeze_coefficients,
            cross_check=self.cross_check,
            threads=threads,
        )


def _text(value) -> str:
    # QSettings splits comma-separated INI values into string lists
    if isinstance(value, (list, tuple)):
        return ",".join(str(v).strip() for v in value)
    return "" if value is None else str(value).strip()


def read_ini_sections(path: Path) -> Dict[str, Dict[str, str]]:
    """Reads an INI file through QSettings into section -> key -> text."""
    from PyQt5.QtCore import QSettings

    if not path.is_file():
        raise ConfigInvalid(f"cannot read config {path}: no such file")
    settings = QSettings(str(path), QSettings.IniFormat)
    keys = settings.allKeys()
    if settings.status() != QSettings.NoError:
        raise ConfigInvalid(f"cannot read config {path}: malformed INI file")

    sections: Dict[str, Dict[str, str]] = {group: {} for group in settings.childGroups()}
    for full_key in keys:
        section, _, key = full_key.partition("/")
        if not key:
            raise ConfigInvalid(f"{path.name}: key '{full_key}' outside a section")
        if "/" in key:
            raise ConfigInvalid(f"{path.name}: nested key '{full_key}'")
        sections.setdefault(section, {})[key] = _text(settings.value(full_key))
    return sections


class _Reader:
    """Typed access to the sections of a campaign file with ConfigInvalid on every bad value."""

    def __init__(self, sections: Dict[str, Dict[str, str]], source: Path):
        self.sections = sections
        self.source = source

    def raw(self, section: str, key: str, required: bool = False) -> Optional[str]:
        text = self.sections.get(section, {}).get(key)
        if text:
            return text
        if key in DEFAULTS:
            return DEFAULTS[key]
        if required:
            raise ConfigInvalid(f"{self.source.name}: missing [{section}] {key}")
        return None

    def number(self, section: str, key: str, kind=float, required: bool = False):
        text = self.raw(section, key, required)
        if text is None:
            return None
        try:
            return kind(text)
        except ValueError:
            raise ConfigInvalid(f"{self.source.name}: [{section}] {key} = '{text}' is not a {kind.__name__}") from None

    def flag(self, section: str, key: str) -> bool:
        text = self.raw(section, key).lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalid(f"{self.source.name}: [{section}] {key} = '{text}' is not a boolean")

    def path(self, text: str) -> Path:
        path = Path(text)
        if not path.is_absolute():
            path = self.source.parent / path
        if not path.exists():
            raise ConfigInvalid(f"{self.source.name}: referenced file {path} does not exist")
        return path


def _read_mu(reader: _Reader, text: Optional[str]) -> Optional[np.ndarray]:
    if not text:
        return None
    if text.lower().endswith(".csv"):
        frame = pd.read_csv(reader.path(text), header=None, encoding="utf-8")
        return frame.to_numpy(dtype=float).reshape(-1)
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigInvalid(f"{reader.source.name}: [design] mu = '{text}' is not a list of numbers") from None


def load_run_config(path: Path) -> RunConfig:
    """Reads and validates a campaign file; unknown sections or keys are rejected."""
    path = Path(path)
    sections = read_ini_sections(path)
    for section, values in sections.items():
        if section not in SCHEMA:
            raise ConfigInvalid(f"{path.name}: unknown section [{section}]")
        unknown = [key for key in values if key not in SCHEMA[section]]
        if unknown:
            raise ConfigInvalid(f"{path.name}: unknown key(s) in [{section}]: {', '.join(unknown)}")

    reader = _Reader(sections, path)
    try:
        link = get_link(reader.raw("model", "link", required=True))
        link_a_name = reader.raw("model", "link_a")
        link_a = get_link(link_a_name) if link_a_name else None
    except MomglmError as e:
        raise ConfigInvalid(str(e)) from None

    n_grid = parse_int_list(reader.raw("sim", "n_grid", required=True), "[sim] n_grid")
    ratio = reader.number("sim", "ratio", float, required=True)

    sigma = None
    sigma_text = reader.raw("design", "sigma")
    if sigma_text:
        p = int(round(n_grid[0] * ratio))
        try:
            sigma = load_sigma_csv(reader.path(sigma_text), p)
        except MomglmError as e:
            raise ConfigInvalid(str(e)) from None

    directory = reader.raw("output", "directory")
    return RunConfig(
        source=path,
        estimand=reader.raw("model", "estimand", required=True).lower(),
        link=link,
        link_a=link_a,
        coords=parse_int_list(reader.raw("model", "coords"), "[model] coords"),
        psi=reader.number("model", "psi"),
        noise_sd=reader.number("model", "noise_sd"),
        mu_paths=reader.raw("model", "mu_paths").lower(),
        cross_check=reader.flag("model", "cross_check"),
        design_kind=reader.raw("design", "kind").lower(),
        sigma=sigma,
        mu=_read_mu(reader, reader.raw("design", "mu")),
        n_grid=n_grid,
        ratio=ratio,
        replicates=reader.number("sim", "replicates", int),
        seed=reader.number("sim", "seed", int),
        coef_scheme=reader.raw("sim", "coef_scheme").lower(),
        freeze_coefficients=reader.flag("sim", "freeze_coefficients"),
        output_dir=(Path(directory) if Path(directory).is_absolute() else path.parent / directory) if directory else None,
    )
