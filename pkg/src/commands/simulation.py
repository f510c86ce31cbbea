"""
Simulation commands for the REDDA toolkit.
Contains the Monte-Carlo experiment runner and trimming-level monitoring.
"""

import logging
from typing import Any, Dict

from src.commands.common import (
    add_model_arguments,
    add_runtime_arguments,
    add_train_arguments,
    load_training,
    split_list,
)
from src.errors import ValidationError
from src.reports import class_mapping, describe_variables, new_report
from src.utils.simlab import gamma_monitor, load_experiment_config, run_experiment


class SimulationCommands:
    """Commands that drive the simulation lab."""

    def __init__(self, cli) -> None:
        self.cli = cli
        self.logger = logging.getLogger(__name__)

    def register(self) -> None:
        parser = self.cli.add_command("simulate", self.simulate, "Run a seeded Monte-Carlo selection experiment")
        parser.add_argument("--experiment", help="Experiment name under src/data/experiments/ or a JSON path")
        parser.add_argument("--replications", type=int, help="Override the experiment's replication count")
        parser.add_argument("--seed", dest="experiment_seed", type=int, help="Override the experiment's master seed")
        add_runtime_arguments(parser)

        parser = self.cli.add_command(
            "monitor-gamma", self.monitor_gamma, "Track the selected subset over a decreasing trimming grid"
        )
        add_train_arguments(parser, columns=False)
        add_model_arguments(parser)
        parser.add_argument("--grid", help="Comma-separated, strictly decreasing trimming levels")
        parser.add_argument("--method", choices=("tbic", "mlsubset"), help="Selector to monitor (default: tbic)")
        parser.add_argument("--p", type=int, help="Subset size for the mlsubset selector")
        parser.add_argument("--tbic-n-start", dest="tbic_n_start", type=int, help="Random starts per GR/NG fit")
        parser.add_argument("--n-init", dest="n_init", type=int, help="ML subset restarts")
        add_runtime_arguments(parser)

    def simulate(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Run the experiment grid and report per-replication records and per-cell aggregates."""
        config = load_experiment_config(settings.get("experiment"))
        if settings.get("replications") is not None:
            config.replications = int(settings["replications"])
        if settings.get("experiment_seed") is not None:
            config.seed = int(settings["experiment_seed"])
        config.threads = settings["threads"]
        config.validate()

        result = run_experiment(config)
        failures = sum(1 for record in result.records if record["error"])
        if failures:
            self.logger.warning(f"{failures} experiment cell(s) failed; see the records")

        report = new_report("simulate", settings)
        report["experiment"] = config.to_dict()
        report["aggregates"] = result.aggregates
        report["records"] = result.records
        return report

    def monitor_gamma(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """Selections along the trimming grid and the first level where the subset changes."""
        data = load_training(settings)
        try:
            grid = [float(g) for g in split_list(settings["grid"])]
        except ValueError:
            raise ValidationError(f"Malformed trimming grid: {settings['grid']!r}")
        result = gamma_monitor(
            data,
            grid,
            method=settings["method"],
            p=settings.get("p"),
            model=settings["model"],
            seed=settings["seed"],
            n_start=settings["tbic_n_start"],
            n_init=settings["n_init"],
            max_iter=settings["max_iter"],
            threads=settings["threads"],
        )
        report = new_report("monitor-gamma", settings)
        report["data"] = {
            "n_samples": data.n_samples,
            "n_features": data.n_features,
            "class_mapping": class_mapping(data.class_names),
        }
        report["path"] = [
            {
                "gamma": gamma,
                "selected": describe_variables(selected, [data.feature_names[i] for i in selected]),
            }
            for gamma, selected in zip(result.gamma_grid, result.selections)
        ]
        report["distances"] = result.distances
        report["flagged_gamma"] = result.flagged_gamma
        return report


def setup(cli) -> None:
    """Set up the simulation commands.

    Args:
        cli: The command-line application
    """
    SimulationCommands(cli).register()
