"""
Shared argument groups and setting resolution for the command modules.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.config import Config
from src.dataset import LabeledDataset, load_dataset
from src.errors import DataIOError, ValidationError
from src.reports import read_report, report_columns
from src.utils.checks import check_gamma, check_positive_int
from src.utils.model_core import PatternedModel

logger = logging.getLogger(__name__)

# Defaults of command-specific flags; shared flags default to Config
COMMAND_DEFAULTS: Dict[str, Any] = {
    "label_col": "class",
    "strategy": "auto",
    "top_k": 0,
    "method": "tbic",
    "grid": "0.2,0.15,0.1,0.05,0",
}

# Namespace entries that are not settings
_INTERNAL = {"handler", "command", "config", "log_level"}

COUNT_SETTINGS = ("n_start", "tbic_n_start", "n_init", "max_iter", "threads")


def add_train_arguments(parser, columns: bool = True) -> None:
    parser.add_argument("--train", help="Labeled training table (CSV/TSV)")
    parser.add_argument("--label-col", dest="label_col", help="Header of the class label column (default: class)")
    parser.add_argument("--id-col", dest="id_col", help="Header of an optional row-identifier column")
    if columns:
        parser.add_argument("--columns", help="Comma-separated feature names or 1-based indices to use")
        parser.add_argument("--selection", help="Selection report whose variables restrict the training columns")


def add_test_arguments(parser) -> None:
    parser.add_argument("--test", help="Test table; the label column is optional")
    parser.add_argument("--fit", help="Fit report to score with instead of fitting from --train")


def add_model_arguments(parser) -> None:
    parser.add_argument("--gamma", type=float, help="Trimming level in [0, 0.5); 0 disables trimming")
    parser.add_argument("--model", help=f"Covariance pattern ({', '.join(PatternedModel.codes())})")
    parser.add_argument("--seed", type=int, help="Master random seed")
    parser.add_argument("--n-start", dest="n_start", type=int, help="Random starts per REDDA fit")
    parser.add_argument("--max-iter", dest="max_iter", type=int, help="Iteration cap per start")


def add_runtime_arguments(parser) -> None:
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument("--timing", action="store_const", const=True, help="Add wall-clock timing to the report")
    parser.add_argument("--config", help="JSON file of settings keyed like the long flags")
    parser.add_argument("--out", help="Report path (default: stdout)")


def load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise DataIOError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise DataIOError(f"Could not read config file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"Malformed config file {path}: {e}")
    if not isinstance(raw, dict):
        raise ValidationError(f"Config file {path} must hold a JSON object")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def resolve_settings(args) -> Dict[str, Any]:
    """Merge Config defaults < --config file < explicit flags for every flag of the command.

    Raises:
        ValidationError: For unknown config keys or out-of-range values
    """
    flags = {k: v for k, v in vars(args).items() if k not in _INTERNAL}
    from_file = load_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(from_file) - set(flags)
    if unknown:
        raise ValidationError(f"Unknown settings for '{args.command}': {', '.join(sorted(unknown))}")

    defaults = {**Config.as_dict(), **COMMAND_DEFAULTS}
    settings = {}
    for key, value in flags.items():
        if value is None:
            value = from_file.get(key, defaults.get(key))
        settings[key] = value
    return validate_settings(settings)


def validate_settings(settings: Dict[str, Any]) -> Dict[str, Any]:
    if "gamma" in settings:
        settings["gamma"] = check_gamma(settings["gamma"])
    if "model" in settings:
        settings["model"] = PatternedModel.parse(settings["model"]).value
    for key in COUNT_SETTINGS:
        if settings.get(key) is not None:
            settings[key] = check_positive_int(settings[key], key)
    if settings.get("p") is not None:
        settings["p"] = check_positive_int(settings["p"], "p")
    if settings.get("top_k") is not None and int(settings["top_k"]) < 0:
        raise ValidationError(f"top_k must be non-negative, got {settings['top_k']}")
    return settings


def split_list(value) -> List[str]:
    """Comma-separated flag value or JSON list as a list of strings."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [part.strip() for part in str(value).split(",") if part.strip()]


def load_training(settings: Dict[str, Any]) -> LabeledDataset:
    if not settings.get("train"):
        raise ValidationError("--train is required")
    return load_dataset(settings["train"], settings["label_col"], settings.get("id_col"))


def load_test(settings: Dict[str, Any], class_names: Sequence[str]) -> LabeledDataset:
    if not settings.get("test"):
        raise ValidationError("--test is required")
    return load_dataset(
        settings["test"],
        settings["label_col"],
        settings.get("id_col"),
        require_labels=False,
        label_levels=class_names,
    )


def restrict_columns(data: LabeledDataset, settings: Dict[str, Any]) -> Tuple[LabeledDataset, List[int]]:
    """Apply --selection or --columns; returns the restricted data and the 0-based source columns."""
    columns: Optional[List[int]] = None
    if settings.get("selection"):
        columns = report_columns(read_report(settings["selection"]))
        if not columns:
            raise ValidationError(f"Selection report {settings['selection']} selected no variables")
        if max(columns) >= data.n_features:
            raise ValidationError(f"Selection report refers to column {max(columns) + 1} beyond P={data.n_features}")
    elif settings.get("columns"):
        columns = data.resolve_columns(split_list(settings["columns"]))
    if columns is None:
        return data, list(range(data.n_features))
    logger.info(f"Restricting training data to {len(columns)} column(s)")
    return data.subset_columns(columns), columns


def matching_columns(test: LabeledDataset, feature_names: Sequence[str]) -> List[int]:
    """Test columns carrying the fitted variables, located by header name."""
    missing = [name for name in feature_names if name not in test.feature_names]
    if missing:
        raise ValidationError(f"Test data lacks fitted variable(s): {', '.join(missing)}")
    return [test.feature_names.index(name) for name in feature_names]
