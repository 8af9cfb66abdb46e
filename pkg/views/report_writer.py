from __future__ import annotations
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

import pandas as pd
from natsort import natsorted

from utils.paths import get_qq_path, get_replicates_path, get_summary_path

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _frame_to_csv(frame: pd.DataFrame, target) -> None:
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")


def write_estimate_report(record: Dict[str, Any], out: Optional[Path] = None, stream: TextIO = sys.stdout) -> None:
    """Two-column key,value CSV of an estimate; to stdout when no path is given."""
    frame = pd.DataFrame({"key": list(record.keys()), "value": list(record.values())})
    if out is None:
        _frame_to_csv(frame, stream)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _frame_to_csv(frame, out)
    logger.info("Wrote estimate report to %s", out)


def write_sim_result(result, out_dir: Path) -> List[Path]:
    """Replicate table, summary and one QQ-pair file per (n, parameter), natural order."""
    written = [get_replicates_path(out_dir), get_summary_path(out_dir)]
    _frame_to_csv(result.table, written[0])
    _frame_to_csv(result.summary, written[1])

    paths = {get_qq_path(out_dir, n, parameter): frame for (n, parameter), frame in result.qq_data.items()}
    for path in natsorted(paths, key=str):
        _frame_to_csv(paths[path], path)
        written.append(path)
    logger.info("Wrote %d files to %s", len(written), out_dir)
    return written


def format_summary(summary: pd.DataFrame) -> str:
    if summary.empty:
        return "(no results)"
    return summary.to_string(index=False, float_format=lambda v: f"{v:.4g}", na_rep="-")
