"""
Variable selection commands for the REDDA toolkit.
Contains the greedy TBIC search and the ML subset selector.
"""

import logging
from typing import Any, Dict

from src.commands.common import add_model_arguments, add_runtime_arguments, add_train_arguments, load_training
from src.errors import ValidationError
from src.reports import class_mapping, describe_variables, new_report, params_to_dict, trimmed_rows_section
from src.utils.ml_subset import STRATEGIES, fit_ml_subset
from src.utils.tbic_select import StepRecord, greedy_select


class SelectionCommands:
    """Commands that choose the classification-relevant variables."""

    def __init__(self, cli) -> None:
        self.cli = cli
        self.logger = logging.getLogger(__name__)

    def register(self) -> None:
        parser = self.cli.add_command("select-tbic", self.select_tbic, "Greedy robust variable selection by TBIC")
        add_train_arguments(parser, columns=False)
        add_model_arguments(parser)
        parser.add_argument("--tbic-n-start", dest="tbic_n_start", type=int, help="Random starts per GR/NG fit")
        add_runtime_arguments(parser)

        parser = self.cli.add_command(
            "select-mlsubset", self.select_mlsubset, "Robust maximum-likelihood selection of p relevant variables"
        )
        add_train_arguments(parser, columns=False)
        add_model_arguments(parser)
        parser.add_argument("--p", type=int, help="Number of relevant variables")
        parser.add_argument("--n-init", dest="n_init", type=int, help="Robust restarts")
        parser.add_argument("--strategy", choices=STRATEGIES, help="S-step search strategy (default: auto)")
        add_runtime_arguments(parser)

    def _step_entry(self, record: StepRecord, names) -> Dict[str, Any]:
        variable = None
        if record.variable is not None:
            variable = {"index": record.variable + 1, "name": names[record.variable]}
        return {
            "stage": record.stage,
            "kind": record.kind,
            "variable": variable,
            "included_before": [i + 1 for i in record.included_before],
            "regressors": [i + 1 for i in record.regressors],
            "tbic_grouping": record.gr_score,
            "tbic_no_grouping": record.ng_score,
            "difference": record.difference,
            "decision": record.decision,
        }

    def select_tbic(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Run the stepwise search and report the selection with its step log."""
        data = load_training(settings)
        result = greedy_select(
            data,
            settings["gamma"],
            settings["model"],
            settings["seed"],
            n_start=settings["tbic_n_start"],
            max_iter=settings["max_iter"],
            threads=settings["threads"],
        )
        report = new_report("select-tbic", settings)
        report["data"] = {
            "n_samples": data.n_samples,
            "n_features": data.n_features,
            "class_mapping": class_mapping(data.class_names),
        }
        report["selected"] = describe_variables(result.selected, result.feature_names)
        report["steps"] = [self._step_entry(record, data.feature_names) for record in result.step_log]
        report["n_evaluations"] = result.n_evaluations
        report["diagnostics"] = result.diagnostics
        return report

    def select_mlsubset(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Fit the ML subset selector and report F, the restricted classifier and the link."""
        if settings.get("p") is None:
            raise ValidationError("--p is required for select-mlsubset")
        data = load_training(settings)
        fit = fit_ml_subset(
            data,
            settings["p"],
            settings["gamma"],
            settings["model"],
            settings["n_init"],
            settings["max_iter"],
            settings["seed"],
            strategy=settings["strategy"],
            threads=settings["threads"],
        )
        selected_names = [data.feature_names[i] for i in fit.selected]
        irrelevant = list(fit.partition.irrelevant)

        report = new_report("select-mlsubset", settings)
        report["data"] = {
            "n_samples": data.n_samples,
            "n_features": data.n_features,
            "class_mapping": class_mapping(data.class_names),
        }
        report["selected"] = describe_variables(fit.selected, selected_names)
        report["variables"] = report["selected"]
        report["model"] = {
            "kind": "ML-subset",
            "code": fit.model.value,
            "gamma": fit.gamma,
            "p": len(fit.selected),
            "n_trimmed": fit.trimming.n_trimmed,
            "objective": fit.objective,
            "n_iterations": fit.n_iterations,
            "converged": fit.converged,
            "restart_index": fit.restart_index,
            "n_init_used": fit.n_init_used,
        }
        report["parameters"] = params_to_dict(fit.params.restrict(fit.selected))
        report["link"] = {
            "irrelevant": describe_variables(irrelevant, [data.feature_names[i] for i in irrelevant]),
            "coefficients": fit.link.G_coef,
            "intercept": fit.link.mu_cond,
            "covariance": fit.link.sigma_cond,
        }
        report["trimmed"] = trimmed_rows_section(data, fit.trimming.trimmed_indices)
        report["history"] = fit.history
        report["diagnostics"] = fit.diagnostics
        return report


def setup(cli) -> None:
    """Set up the selection commands.

    Args:
        cli: The command-line application
    """
    SelectionCommands(cli).register()
