"""
Experiment configuration.
One YAML document per experiment, validated into ExperimentConfig; CLI flags
override file values. Environment variables (optionally from a .env file)
provide process-level defaults; none are required.
"""
import os
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from errors import UsageError
from models import ExperimentConfig

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

OUTPUT_DIR = os.environ.get("FEDREPRO_OUTPUT_DIR", "results")
LOG_LEVEL = os.environ.get("FEDREPRO_LOG_LEVEL", "INFO")
MAX_WORKERS = int(os.environ.get("FEDREPRO_MAX_WORKERS", "1"))

# flag name -> path into the config document
FLAG_FIELDS = {
    "seed": ("federation", "seed"),
    "hospitals": ("federation", "hospitals"),
    "rounds": ("federation", "rounds"),
    "epochs": ("federation", "epochs"),
    "batch": ("federation", "batch_size"),
    "top_k": ("federation", "top_k"),
    "mode": ("mode",),
    "models": ("models",),
    "downsample": ("dataset", "downsample"),
}


def apply_overrides(document: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Write non-None flag values into the config document; flags win over the file"""
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_FIELDS:
            raise UsageError(f"unknown override --{flag.replace('_', '-')}")
        if flag == "models" and isinstance(value, str):
            value = [name.strip() for name in value.split(",") if name.strip()]
        *parents, leaf = FLAG_FIELDS[flag]
        target = document
        for key in parents:
            if not isinstance(target.get(key), dict):
                target[key] = {}
            target = target[key]
        target[leaf] = value
        logger.info(f"🔧 Override {'.'.join(FLAG_FIELDS[flag])} = {value}")
    return document


def validate_config(document: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "config"
        raise UsageError(error["msg"], field=field)


def load_experiment_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a YAML config (or start from defaults) and apply flag overrides"""
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as e:
            raise UsageError(f"cannot read config file {path}: {e}")
        except yaml.YAMLError as e:
            raise UsageError(f"config file {path} is not valid YAML: {e}")
        if loaded is not None and not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must hold a mapping")
        document = loaded or {}
    document.setdefault("output_dir", OUTPUT_DIR)
    document.setdefault("max_workers", MAX_WORKERS)
    return validate_config(apply_overrides(document, overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
