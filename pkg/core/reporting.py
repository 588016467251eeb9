"""
Reports for HammerLab.

Every report carries the schema version, the command, the seed, the
configuration digest and the full configuration, so a report can be fed
back as a configuration. Files are written atomically.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import pandas as pd

from .config import RunConfig

logger = logging.getLogger("HAMMERLAB.Reporting")

SCHEMA_VERSION = "1.0"


@dataclass
class Report:
    command: str
    seed: int
    config_digest: str
    config: Dict[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "config": self.config,
            "results": self.results,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def build_report(command: str, cfg: RunConfig, results: Dict[str, Any]) -> Report:
    return Report(command, cfg.seed, cfg.digest(), cfg.canonical(), results)


def _atomic_write(path: Union[str, Path], writer: Callable[[str], None]) -> Path:
    """Write through a temporary file in the target directory, then rename over the target."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    try:
        writer(tmp_path)
        os.replace(tmp_path, target)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return target


def write_report(report: Report, path: Union[str, Path]) -> Path:
    text = report.to_json()

    def writer(tmp_path: str) -> None:
        with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())

    target = _atomic_write(path, writer)
    logger.info(f"Report written: {target}")
    return target


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    target = _atomic_write(path, lambda tmp_path: frame.to_csv(tmp_path, index=False, lineterminator="\n"))
    logger.info(f"CSV written: {target}")
    return target


def read_report(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def csv_path_for(report_path: Optional[Union[str, Path]], suffix: str, default_dir: str = "reports") -> Path:
    """Sibling CSV path such as ``report.flips.csv``."""
    if report_path is None:
        return Path(default_dir) / f"{suffix}.csv"
    base = Path(report_path)
    return base.with_name(f"{base.stem}.{suffix}.csv")
