"""
Run reports for the REDDA toolkit.
Reports are JSON trees rendered with 17 significant digits so that reruns
with the echoed configuration are byte-identical.
"""

import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src import __version__
from src.dataset import LabeledDataset
from src.errors import DataIOError, ValidationError
from src.utils.model_core import ClassParams, PatternedModel
from src.utils.redda import ReddaFit, TrimmingState

logger = logging.getLogger(__name__)

TOOL_NAME = "redda"

# Reports that carry a restorable parameter set
FIT_COMMANDS = ("fit", "select-mlsubset")


def _render_number(value: float) -> str:
    if not math.isfinite(value):
        return "null"
    if value == int(value) and abs(value) < 1e16:
        return f"{value:.1f}"
    return format(value, ".17g")


def _render(value: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _render_number(float(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, np.ndarray):
        return _render(value.tolist(), indent, level)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_render(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return "[" + ", ".join(_render(v, indent, level + 1) for v in value) + "]"
        items = [pad + _render(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise ValidationError(f"Cannot render value of type {type(value).__name__} in a report")


def render_report(report: Dict[str, Any], indent: int = 2) -> str:
    """JSON text with 17 significant digits per float and null for non-finite numbers."""
    return _render(report, indent, 0) + "\n"


def write_report(report: Dict[str, Any], path: Optional[str] = None) -> None:
    text = render_report(report)
    if not path or path == "-":
        sys.stdout.write(text)
        return
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise DataIOError(f"Could not write report {path}: {e}")
    logger.info(f"Report written to {path}")


def read_report(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise DataIOError(f"Report file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise DataIOError(f"Could not read report {path}: {e}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"Malformed report {path}: {e}")


def new_report(command: str, settings: Dict[str, Any]) -> Dict[str, Any]:
    """Report skeleton echoing every resolved setting except the output path."""
    echo = {k: v for k, v in sorted(settings.items()) if k != "out"}
    return {
        "tool": {"name": TOOL_NAME, "version": __version__},
        "command": command,
        "config": echo,
    }


def describe_variables(columns: Sequence[int], names: Sequence[str]) -> List[Dict[str, Any]]:
    """Variables by 1-based column index and header name."""
    return [{"index": int(c) + 1, "name": names[i]} for i, c in enumerate(columns)]


def class_mapping(class_names: Sequence[str]) -> List[Dict[str, Any]]:
    return [{"class": g + 1, "label": name} for g, name in enumerate(class_names)]


def params_to_dict(params: ClassParams) -> Dict[str, Any]:
    out = {"tau": params.tau, "mu": params.mu, "sigma": params.sigma}
    if params.pooled_mu is not None:
        out["pooled_mu"] = params.pooled_mu
        out["pooled_sigma"] = params.pooled_sigma
    return out


def params_from_dict(raw: Dict[str, Any]) -> ClassParams:
    try:
        params = ClassParams(
            tau=np.asarray(raw["tau"], dtype=float),
            mu=np.asarray(raw["mu"], dtype=float),
            sigma=np.asarray(raw["sigma"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"Report parameters are incomplete: {e}")
    G, P = params.mu.shape if params.mu.ndim == 2 else (0, 0)
    if params.tau.shape != (G,) or params.sigma.shape != (G, P, P):
        raise ValidationError("Report parameters have inconsistent shapes")
    return params


def fit_section(fit: ReddaFit, n_samples: int) -> Dict[str, Any]:
    P, G = fit.params.n_features, fit.params.n_classes
    n_parameters = fit.model.n_parameters(P, G)
    n_kept = fit.trimming.n_kept
    return {
        "kind": "EDDA" if fit.is_edda else "REDDA",
        "code": fit.model.value,
        "gamma": fit.gamma,
        "n_samples": n_samples,
        "n_trimmed": fit.trimming.n_trimmed,
        "trimmed_loglik": fit.trimmed_loglik,
        "n_parameters": n_parameters,
        "tbic": 2.0 * fit.trimmed_loglik - n_parameters * math.log(n_kept),
        "n_iterations": fit.n_iterations,
        "converged": fit.converged,
        "start_index": fit.start_index,
    }


def fit_from_report(report: Dict[str, Any]) -> ReddaFit:
    """Rebuild a classifier from a ``fit`` or ``select-mlsubset`` report.

    Only the parameters are restored; the trimming vector stays with the
    training data. An ML subset report yields the classifier on its relevant
    variables.
    """
    if report.get("command") not in FIT_COMMANDS:
        raise ValidationError(f"Expected a fit report, got command {report.get('command')!r}")
    try:
        model = PatternedModel.parse(report["model"]["code"])
        gamma = float(report["model"]["gamma"])
        params = params_from_dict(report["parameters"])
        variables = report["variables"]
        class_names = [entry["label"] for entry in report["data"]["class_mapping"]]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"Fit report is missing a field: {e}")
    return ReddaFit(
        params=params,
        trimming=TrimmingState.keep_all(0, gamma),
        model=model,
        trimmed_loglik=float(report["model"].get("trimmed_loglik") or 0.0),
        n_iterations=int(report["model"].get("n_iterations", 0)),
        converged=bool(report["model"].get("converged", True)),
        class_names=class_names,
        feature_names=[v["name"] for v in variables],
    )


def report_columns(report: Dict[str, Any]) -> List[int]:
    """0-based columns recorded in a fit or selection report."""
    key = "selected" if "selected" in report else "variables"
    try:
        return [int(v["index"]) - 1 for v in report[key]]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"Report lists no usable variables: {e}")


def trimmed_rows_section(
    data: LabeledDataset, indices: np.ndarray, reassigned: Optional[np.ndarray] = None
) -> List[Dict[str, Any]]:
    rows = []
    labels = data.labels
    for k, index in enumerate(indices):
        entry: Dict[str, Any] = {"index": int(index) + 1, "row": data.row_ids[index]}
        if labels is not None:
            entry["observed"] = data.class_names[labels[index]]
        if reassigned is not None:
            entry["reassigned"] = data.class_names[reassigned[k]]
            entry["label_noise_suspect"] = bool(labels is not None and reassigned[k] != labels[index])
        rows.append(entry)
    return rows
