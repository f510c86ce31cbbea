"""
Fitting commands for the REDDA toolkit.
Contains the fit, predict and detect-outliers workflows.
"""

import logging
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from src.commands.common import (
    add_model_arguments,
    add_runtime_arguments,
    add_test_arguments,
    add_train_arguments,
    load_test,
    load_training,
    matching_columns,
    restrict_columns,
)
from src.dataset import LabeledDataset
from src.errors import ValidationError
from src.reports import (
    class_mapping,
    describe_variables,
    fit_from_report,
    fit_section,
    new_report,
    params_to_dict,
    read_report,
    trimmed_rows_section,
)
from src.utils.ml_subset import MlSubsetFit, fit_ml_subset
from src.utils.outliers import outlier_score
from src.utils.redda import ReddaFit, fit_redda, predict_map, reassign_trimmed
from src.utils.simlab import misclassification_error


class FittingCommands:
    """Commands that train a classifier or apply one to test rows."""

    def __init__(self, cli) -> None:
        self.cli = cli
        self.logger = logging.getLogger(__name__)

    def register(self) -> None:
        parser = self.cli.add_command("fit", self.fit, "Fit a REDDA classifier (EDDA with --gamma 0)")
        add_train_arguments(parser)
        add_model_arguments(parser)
        add_runtime_arguments(parser)

        parser = self.cli.add_command("predict", self.predict, "MAP class predictions for test rows")
        add_train_arguments(parser)
        add_test_arguments(parser)
        add_model_arguments(parser)
        add_runtime_arguments(parser)

        parser = self.cli.add_command(
            "detect-outliers", self.detect_outliers, "Rank test rows by marginal density on the retained variables"
        )
        add_train_arguments(parser)
        add_test_arguments(parser)
        add_model_arguments(parser)
        parser.add_argument("--p", type=int, help="Fit an ML subset selector with p relevant variables in-process")
        parser.add_argument("--n-init", dest="n_init", type=int, help="ML subset restarts")
        parser.add_argument("--top-k", dest="top_k", type=int, help="Number of lowest-density rows to flag")
        add_runtime_arguments(parser)

    def _train(self, settings: Dict[str, Any]) -> Tuple[ReddaFit, LabeledDataset, List[int]]:
        data = load_training(settings)
        data, columns = restrict_columns(data, settings)
        fit = fit_redda(
            data,
            settings["model"],
            settings["gamma"],
            settings["n_start"],
            settings["max_iter"],
            settings["seed"],
            settings["threads"],
        )
        return fit, data, columns

    def _classifier(self, settings: Dict[str, Any]) -> Union[ReddaFit, MlSubsetFit]:
        """A fit restored from --fit, or trained from --train."""
        if settings.get("fit"):
            fit = fit_from_report(read_report(settings["fit"]))
            self.logger.info(f"Restored {fit.model.value} classifier on {len(fit.feature_names)} variable(s)")
            return fit
        if settings.get("p") is not None:
            data = load_training(settings)
            return fit_ml_subset(
                data,
                settings["p"],
                settings["gamma"],
                settings["model"],
                settings["n_init"],
                settings["max_iter"],
                settings["seed"],
                threads=settings["threads"],
            )
        fit, _, _ = self._train(settings)
        return fit

    def fit(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Fit on the training table and report parameters and trimmed rows."""
        fit, data, columns = self._train(settings)
        indices, reassigned = reassign_trimmed(fit, data)
        suspects = int(np.sum(reassigned != data.labels[indices]))
        if suspects:
            self.logger.info(f"{suspects} trimmed row(s) reassigned to another class: suspected label noise")

        report = new_report("fit", settings)
        report["data"] = {
            "n_samples": data.n_samples,
            "n_features": len(columns),
            "class_mapping": class_mapping(data.class_names),
            "class_counts": data.class_counts(),
        }
        report["variables"] = describe_variables(columns, data.feature_names)
        report["model"] = fit_section(fit, data.n_samples)
        report["parameters"] = params_to_dict(fit.params)
        report["trimmed"] = trimmed_rows_section(data, indices, reassigned)
        report["history"] = fit.history
        return report

    def predict(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Posterior probabilities and MAP labels for every test row."""
        fit = self._classifier(settings)
        test = load_test(settings, fit.class_names)
        columns = matching_columns(test, fit.feature_names)
        posterior, labels = predict_map(fit, test.X[:, columns])

        report = new_report("predict", settings)
        report["data"] = {"n_samples": test.n_samples, "class_mapping": class_mapping(fit.class_names)}
        report["variables"] = describe_variables(columns, fit.feature_names)
        report["predictions"] = [
            {
                "index": i + 1,
                "row": test.row_ids[i],
                "predicted": fit.class_names[labels[i]],
                "posterior": posterior[i],
            }
            for i in range(test.n_samples)
        ]
        if test.labels is not None:
            error = misclassification_error(labels, test.labels)
            report["metrics"] = {"misclassification_error": error}
            self.logger.info(f"Test misclassification error: {error:.4f}")
        return report

    def detect_outliers(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Marginal-density scores, ascending ranking and top-k flags for the test rows."""
        fit = self._classifier(settings)
        test = load_test(settings, fit.class_names)
        if isinstance(fit, MlSubsetFit):
            columns = matching_columns(test, fit.feature_names)
            test_matrix = test.X[:, columns]
            scored = [columns[i] for i in fit.selected]
        else:
            scored = matching_columns(test, fit.feature_names)
            test_matrix = test.X[:, scored]
        if settings["top_k"] > test.n_samples:
            raise ValidationError(f"top_k={settings['top_k']} exceeds the {test.n_samples} test rows")
        scores = outlier_score(fit, test_matrix, top_k=settings["top_k"])

        rank = np.empty(test.n_samples, dtype=int)
        rank[scores.ranking] = np.arange(1, test.n_samples + 1)
        report = new_report("detect-outliers", settings)
        report["data"] = {"n_samples": test.n_samples}
        report["variables"] = describe_variables(scored, [test.feature_names[c] for c in scored])
        report["scores"] = [
            {"index": i + 1, "row": test.row_ids[i], "log_density": scores.log_density[i], "rank": rank[i]}
            for i in range(test.n_samples)
        ]
        report["ranking"] = [int(i) + 1 for i in scores.ranking]
        report["flagged"] = [{"index": int(i) + 1, "row": test.row_ids[i]} for i in scores.flagged]
        return report


def setup(cli) -> None:
    """Set up the fitting commands.

    Args:
        cli: The command-line application
    """
    FittingCommands(cli).register()
