"""Environment and file configuration.

Environment variables:

- ``SKYRISE_LAB_CATALOG``: default price catalog path
- ``SKYRISE_LAB_CALIBRATION``: calibration directory
- ``SKYRISE_LAB_SEED``: default root seed
- ``SKYRISE_LAB_VERBOSE``: DEBUG logging when truthy
"""

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from skyrise_lab.errors import ValidationError

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CATALOG = ROOT / "prices_2024.cfg"
DEFAULT_CALIBRATION_DIR = ROOT / "calibration"
DEFAULT_PLANS_DIR = ROOT / "plans"
DEFAULT_SEED = 42


def _env_flag(name: str) -> bool:
    return os.getenv(name, "0").lower() in {"1", "true", "yes"}


def env_seed() -> int:
    raw = os.getenv("SKYRISE_LAB_SEED", "").strip()
    if not raw:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"SKYRISE_LAB_SEED must be an integer, got '{raw}'") from exc


def catalog_path(explicit: Optional[str] = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.getenv("SKYRISE_LAB_CATALOG", str(DEFAULT_CATALOG)))


def calibration_dir(explicit: Optional[str] = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.getenv("SKYRISE_LAB_CALIBRATION", str(DEFAULT_CALIBRATION_DIR)))


def verbose_from_env() -> bool:
    return _env_flag("SKYRISE_LAB_VERBOSE")


def load_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def calibration_file(name: str, directory: Optional[Path] = None) -> Dict[str, Any]:
    path = (directory or calibration_dir()) / name
    logger.debug("loading calibration %s", path)
    return load_toml(path)
