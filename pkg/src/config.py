"""
Configuration module for the REDDA toolkit.
Loads environment variables and provides centralized configuration.
"""

import os
from typing import Any, Callable, Dict, TypeVar

from src.errors import ValidationError

T = TypeVar("T")


def _env(name: str, default: str, cast: Callable[[str], T]) -> T:
    raw = os.getenv(name, default)
    try:
        return cast(raw.strip())
    except ValueError:
        raise ValidationError(f"{name} has an unusable value: {raw!r}")


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Toolkit defaults loaded from environment variables."""

    # Trimming and model family
    GAMMA: float = _env("REDDA_GAMMA", "0.05", float)
    MODEL: str = _env("REDDA_MODEL", "VVV", str)

    # Randomness and search effort
    SEED: int = _env("REDDA_SEED", "2021", int)
    N_START: int = _env("REDDA_N_START", "50", int)
    TBIC_N_START: int = _env("REDDA_TBIC_N_START", "10", int)
    N_INIT: int = _env("REDDA_N_INIT", "20", int)
    MAX_ITER: int = _env("REDDA_MAX_ITER", "200", int)

    # Runtime
    THREADS: int = _env("REDDA_THREADS", "1", int)
    LOG_LEVEL: str = _env("REDDA_LOG_LEVEL", "INFO", str)
    REPORT_TIMING: bool = _env_bool("REDDA_REPORT_TIMING", False)

    @classmethod
    def reload(cls) -> None:
        """Re-read every setting from the environment (after a .env file is loaded)."""
        cls.GAMMA = _env("REDDA_GAMMA", "0.05", float)
        cls.MODEL = _env("REDDA_MODEL", "VVV", str)
        cls.SEED = _env("REDDA_SEED", "2021", int)
        cls.N_START = _env("REDDA_N_START", "50", int)
        cls.TBIC_N_START = _env("REDDA_TBIC_N_START", "10", int)
        cls.N_INIT = _env("REDDA_N_INIT", "20", int)
        cls.MAX_ITER = _env("REDDA_MAX_ITER", "200", int)
        cls.THREADS = _env("REDDA_THREADS", "1", int)
        cls.LOG_LEVEL = _env("REDDA_LOG_LEVEL", "INFO", str)
        cls.REPORT_TIMING = _env_bool("REDDA_REPORT_TIMING", False)

    @classmethod
    def validate(cls) -> bool:
        """Validate that all configuration values are usable."""
        # Imported here to keep config importable before the numeric stack
        from src.utils.model_core import PatternedModel

        if not 0.0 <= cls.GAMMA < 0.5:
            raise ValidationError(f"REDDA_GAMMA must lie in [0, 0.5), got {cls.GAMMA}")

        if cls.MODEL not in PatternedModel.codes():
            raise ValidationError(f"REDDA_MODEL must be one of {', '.join(PatternedModel.codes())}, got {cls.MODEL}")

        counts = {
            "REDDA_N_START": cls.N_START,
            "REDDA_TBIC_N_START": cls.TBIC_N_START,
            "REDDA_N_INIT": cls.N_INIT,
            "REDDA_MAX_ITER": cls.MAX_ITER,
            "REDDA_THREADS": cls.THREADS,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value}")

        return True

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        """Defaults keyed like the CLI long flags."""
        return {
            "gamma": cls.GAMMA,
            "model": cls.MODEL,
            "seed": cls.SEED,
            "n_start": cls.N_START,
            "tbic_n_start": cls.TBIC_N_START,
            "n_init": cls.N_INIT,
            "max_iter": cls.MAX_ITER,
            "threads": cls.THREADS,
            "timing": cls.REPORT_TIMING,
        }
