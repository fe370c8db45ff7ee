"""Runtime settings and YAML config loading."""

import logging
import os
from datetime import date, datetime
from pathlib import Path

import yaml

from triage.errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Day-granular calendar used by every window and label
MONTH_DAYS = 30
HORIZON_DAYS = 183
YEAR_DAYS = 365

# Environment overrides
OUTPUT_DIR = os.environ.get("TRIAGE_OUTPUT_DIR", "triage_output")
LOG_LEVEL = os.environ.get("TRIAGE_LOG_LEVEL", "INFO")
N_JOBS = int(os.environ.get("TRIAGE_N_JOBS", "1"))

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def configure_logging(verbose=False):
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def default_output_dir():
    return Path(os.environ.get("TRIAGE_OUTPUT_DIR", OUTPUT_DIR))


def load_yaml(path):
    """Read a config file and check its schema version."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    logger.debug("Loaded config %s", path)
    return data



def parse_date(value, field="date"):
    """Accept ISO strings, dates and datetimes; reject anything else."""
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as e:
        raise ConfigError(f"{field}: not an ISO date: {value!r}") from e


def resolve_path(value, base_dir):
    """Relative paths in a config file are relative to that file."""
    if value is None:
        return None
    p = Path(value)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


