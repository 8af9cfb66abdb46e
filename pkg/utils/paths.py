import os
import platform
import re
from pathlib import Path

from .config import QQ_DIR_NAME, REPLICATES_FILE_NAME, SUMMARY_FILE_NAME

_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def get_base_data_dir() -> Path:
    """Gets the platform-specific application data directory."""
    if platform.system() == "Windows":
        base = Path(os.environ.get("APPDATA", Path.home() / "AppData" / "Roaming"))
    else:
        # Linux, macOS
        base = Path(os.environ.get("XDG_DATA_HOME", Path.home() / ".local" / "share"))
    return base / "momglm"


def get_output_dir(directory=None) -> Path:
    """Output directory of a run (created if missing); defaults under the data dir."""
    out = Path(directory) if directory else get_base_data_dir() / "runs"
    out.mkdir(parents=True, exist_ok=True)
    return out


def get_replicates_path(out_dir: Path) -> Path:
    return out_dir / REPLICATES_FILE_NAME


def get_summary_path(out_dir: Path) -> Path:
    return out_dir / SUMMARY_FILE_NAME


def safe_name(text: str) -> str:
    """Filesystem-safe version of a parameter name such as 'moment:m_XY2'."""
    return _UNSAFE.sub("_", text).strip("_") or "unnamed"


def get_qq_path(out_dir: Path, n: int, parameter: str) -> Path:
    qq_dir = out_dir / QQ_DIR_NAME
    qq_dir.mkdir(parents=True, exist_ok=True)
    return qq_dir / f"qq_n{n}_{safe_name(parameter)}.csv"
