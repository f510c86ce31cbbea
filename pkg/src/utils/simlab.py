"""
Simulation laboratory.

Synthetic 16-variable, 4-class data (3 relevant, 4 redundant, 9 irrelevant
variables), label-noise and outlier injection, evaluation metrics, the
Monte-Carlo experiment runner and gamma monitoring.

Seeding rule: every random quantity of replication r draws from
SeedSequence([seed, r, tag, scenario]) with tag 0 = training data, 1 = test
data, 2 = contamination, 3 = selectors and classifiers.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.dataset import LabeledDataset
from src.errors import ContaminationError, ReddaError, ValidationError
from src.utils.checks import check_gamma, check_positive_int
from src.utils.model_core import chi_square_quantile
from src.utils.ml_subset import fit_ml_subset
from src.utils.parallel import SeedLike, map_ordered
from src.utils.redda import fit_redda, predict_map, trim_counts
from src.utils.tbic_select import greedy_select

logger = logging.getLogger(__name__)

EXPERIMENTS_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "experiments")
RELEVANT = (0, 1, 2)
METHODS = ("tbic", "mlsubset", "none")

TAG_TRAIN, TAG_TEST, TAG_CONTAMINATION, TAG_FIT = 0, 1, 2, 3

RETRY_WARNING_DRAWS = 10_000


@dataclass
class DgpSpec:
    tau: Tuple[float, ...] = (0.15, 0.3, 0.2, 0.35)
    mu: Tuple[Tuple[float, ...], ...] = (
        (1.5, -1.5, 1.5),
        (-1.5, 1.5, 1.5),
        (1.5, -1.5, -1.5),
        (-1.5, 1.5, -1.5),
    )
    rho: Tuple[float, ...] = (0.85, 0.1, 0.65, 0.5)
    B: Tuple[Tuple[float, ...], ...] = ((1.0, 0.0, -1.0, 0.0), (0.0, -2.0, 2.0, 1.0))
    eta: Tuple[float, ...] = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)
    delta: Tuple[float, ...] = (0.5, 0.75, 1.0, 1.25, 1.5, 1.25, 1.0, 0.75, 0.5)

    @property
    def n_classes(self) -> int:
        return len(self.tau)

    @property
    def n_relevant(self) -> int:
        return len(self.mu[0])

    @property
    def n_features(self) -> int:
        return self.n_relevant + len(self.B[0]) + len(self.eta)

    def class_covariance(self, g: int) -> np.ndarray:
        idx = np.arange(self.n_relevant)
        return self.rho[g] ** np.abs(idx[:, None] - idx[None, :])

    def redundant_mean(self, g: int) -> np.ndarray:
        """Mean of the redundant block for class g: mu_g restricted to variables (1, 3) times B."""
        return np.asarray(self.mu[g])[[0, 2]] @ np.asarray(self.B)


def _rng(seed: Union[SeedLike, np.random.Generator]) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_clean(n_samples: int, spec: Optional[DgpSpec] = None, seed: SeedLike = 2021) -> LabeledDataset:
    """Draw N labeled rows: 3 class-dependent, 4 redundant and 9 irrelevant Gaussian variables."""
    spec = spec or DgpSpec()
    n_samples = check_positive_int(n_samples, "N")
    rng = _rng(seed)
    G = spec.n_classes

    labels = rng.choice(G, size=n_samples, p=np.asarray(spec.tau))
    mu = np.asarray(spec.mu)
    factors = np.stack([np.linalg.cholesky(spec.class_covariance(g)) for g in range(G)])
    z = rng.standard_normal((n_samples, spec.n_relevant))
    relevant = mu[labels] + np.einsum("nij,nj->ni", factors[labels], z)

    B = np.asarray(spec.B)
    redundant = relevant[:, [0, 2]] @ B + rng.standard_normal((n_samples, B.shape[1]))
    irrelevant = np.asarray(spec.eta) + np.sqrt(np.asarray(spec.delta)) * rng.standard_normal(
        (n_samples, len(spec.eta))
    )

    X = np.hstack([relevant, redundant, irrelevant])
    return LabeledDataset(X=X, labels=labels, class_names=[str(g + 1) for g in range(G)])


@dataclass
class ContaminationSpec:
    n_label_noise: int = 20
    n_outliers: int = 5
    chi2_prob: float = 0.975
    seed: SeedLike = 2021
    box_widening: float = 0.2
    max_draws: int = 10 ** 6

    def rate(self, n_samples: int) -> float:
        return (self.n_label_noise + self.n_outliers) / (n_samples + self.n_outliers)


def outlier_distances(rows: np.ndarray, spec: Optional[DgpSpec] = None) -> np.ndarray:
    """Squared distances of each row to the DGP: (min over classes relevant, min over classes redundant, irrelevant)."""
    spec = spec or DgpSpec()
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    k = spec.n_relevant
    r = len(spec.B[0])
    rel, red, irr = rows[:, :k], rows[:, k:k + r], rows[:, k + r:]

    d_rel = np.full(rows.shape[0], np.inf)
    d_red = np.full(rows.shape[0], np.inf)
    for g in range(spec.n_classes):
        diff = rel - np.asarray(spec.mu[g])
        d_rel = np.minimum(d_rel, np.einsum("ni,ni->n", diff, np.linalg.solve(spec.class_covariance(g), diff.T).T))
        diff = red - spec.redundant_mean(g)
        d_red = np.minimum(d_red, np.einsum("ni,ni->n", diff, diff))
    d_irr = (((irr - np.asarray(spec.eta)) ** 2) / np.asarray(spec.delta)).sum(axis=1)
    return np.column_stack([d_rel, d_red, d_irr])


def outlier_thresholds(spec: Optional[DgpSpec] = None, prob: float = 0.975) -> np.ndarray:
    spec = spec or DgpSpec()
    return np.array([
        chi_square_quantile(spec.n_relevant, prob),
        chi_square_quantile(len(spec.B[0]), prob),
        chi_square_quantile(len(spec.eta), prob),
    ])


def _sample_block(
    rng: np.random.Generator, low: np.ndarray, high: np.ndarray, accept, max_draws: int, what: str
) -> np.ndarray:
    """Uniform draw inside [low, high] satisfying ``accept``, by batched rejection sampling."""
    drawn = 0
    batch = 256
    warned = False
    while drawn < max_draws:
        size = min(batch, max_draws - drawn)
        candidates = rng.uniform(low, high, size=(size, low.shape[0]))
        drawn += size
        ok = np.flatnonzero(accept(candidates))
        if ok.size:
            return candidates[ok[0]]
        if drawn >= RETRY_WARNING_DRAWS and not warned:
            logger.warning(f"Still no {what} outlier block after {drawn} uniform draws; retrying")
            warned = True
        batch = min(batch * 2, 65536)
    raise ContaminationError(f"No {what} outlier block found in {max_draws} uniform draws; the box is too tight")


def contaminate(
    data: LabeledDataset, spec: ContaminationSpec, dgp: Optional[DgpSpec] = None
) -> Tuple[LabeledDataset, np.ndarray]:
    """Relabel the last class-4 rows as class 3 and append uniform outliers far from every class.

    Returns:
        Tuple: Contaminated copy and the sorted 0-based indices of all planted rows

    Raises:
        ValidationError: If class 4 has fewer rows than the requested label noise
        ContaminationError: If rejection sampling exhausts its draw budget
    """
    dgp = dgp or DgpSpec()
    labels = data.require_labels().copy()
    X = data.X.copy()
    source, target = dgp.n_classes - 1, dgp.n_classes - 2

    members = np.flatnonzero(labels == source)
    if members.size < spec.n_label_noise:
        raise ValidationError(f"Class {source + 1} has {members.size} rows, fewer than {spec.n_label_noise} to relabel")
    relabeled = members[members.size - spec.n_label_noise:] if spec.n_label_noise else np.empty(0, dtype=int)
    labels[relabeled] = target

    planted = [relabeled]
    if spec.n_outliers:
        rng = _rng(spec.seed)
        low, high = X.min(axis=0), X.max(axis=0)
        pad = 0.5 * spec.box_widening * (high - low)
        low, high = low - pad, high + pad
        thresholds = outlier_thresholds(dgp, spec.chi2_prob)
        k, r = dgp.n_relevant, len(dgp.B[0])
        blocks = [(0, k, "relevant"), (k, k + r, "redundant"), (k + r, dgp.n_features, "irrelevant")]

        rows = np.empty((spec.n_outliers, X.shape[1]))
        for i in range(spec.n_outliers):
            for b, (start, stop, what) in enumerate(blocks):
                def accept(candidates, start=start, stop=stop, b=b):
                    padded = np.zeros((candidates.shape[0], dgp.n_features))
                    padded[:, start:stop] = candidates
                    return outlier_distances(padded, dgp)[:, b] > thresholds[b]

                rows[i, start:stop] = _sample_block(rng, low[start:stop], high[start:stop], accept, spec.max_draws, what)
        outlier_labels = rng.integers(dgp.n_classes, size=spec.n_outliers)
        planted.append(np.arange(X.shape[0], X.shape[0] + spec.n_outliers))
        X = np.vstack([X, rows])
        labels = np.concatenate([labels, outlier_labels])

    out = LabeledDataset(X=X, labels=labels, feature_names=list(data.feature_names), class_names=list(data.class_names))
    planted_indices = np.sort(np.concatenate(planted)).astype(int)
    logger.debug(
        f"Contaminated {data.n_samples} rows: {spec.n_label_noise} relabeled, {spec.n_outliers} outliers, "
        f"rate={spec.rate(data.n_samples):.3f}"
    )
    return out, planted_indices


def selection_precision(selected: Sequence[int], relevant: Sequence[int]) -> float:
    """Fraction of selected variables that are truly relevant (0 for an empty selection)."""
    selected = set(int(i) for i in selected)
    if not selected:
        logger.warning("Selection precision of an empty selection is defined as 0")
        return 0.0
    return len(selected & set(int(i) for i in relevant)) / len(selected)


def misclassification_error(predicted: Sequence[int], truth: Sequence[int]) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValidationError(f"Prediction length {predicted.shape} differs from truth length {truth.shape}")
    if predicted.size == 0:
        return 0.0
    return float(np.mean(predicted != truth))


@dataclass
class Scenario:
    n_outliers: int = 5
    n_label_noise: int = 20

    @property
    def label(self) -> str:
        return f"{self.n_outliers}/{self.n_label_noise}"


@dataclass
class ExperimentConfig:
    replications: int = 20
    n_train: int = 500
    n_test: int = 2000
    gammas: List[Union[float, str]] = field(default_factory=lambda: [0.05])
    methods: List[str] = field(default_factory=lambda: ["tbic", "mlsubset"])
    p_values: List[int] = field(default_factory=lambda: [3])
    scenarios: List[Scenario] = field(default_factory=lambda: [Scenario()])
    model: str = "VVV"
    seed: int = 2021
    tbic_n_start: int = 10
    classifier_n_start: int = 20
    n_init: int = 20
    max_iter: int = 100
    threads: int = 1
    chi2_prob: float = 0.975

    def validate(self) -> "ExperimentConfig":
        check_positive_int(self.replications, "replications")
        check_positive_int(self.n_train, "n_train")
        check_positive_int(self.n_test, "n_test")
        for gamma in self.gammas:
            if gamma != "oracle":
                check_gamma(gamma)
        for method in self.methods:
            if method not in METHODS:
                raise ValidationError(f"Unknown method {method!r}; choose from {', '.join(METHODS)}")
        for p in self.p_values:
            check_positive_int(p, "p")
        if not self.scenarios:
            raise ValidationError("An experiment needs at least one scenario")
        return self

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ExperimentConfig":
        raw = dict(raw)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"Unknown experiment settings: {', '.join(sorted(unknown))}")
        if "scenarios" in raw:
            raw["scenarios"] = [Scenario(**s) if isinstance(s, dict) else s for s in raw["scenarios"]]
        return cls(**raw).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_experiment_config(name_or_path: Optional[str] = None) -> ExperimentConfig:
    """Load an experiment from a JSON path or a name under src/data/experiments/.

    Falls back to the built-in defaults when no file is given or the named one
    is absent.
    """
    if not name_or_path:
        name_or_path = "default"
    path = name_or_path
    if not os.path.exists(path):
        path = os.path.join(EXPERIMENTS_DIR, f"{name_or_path}.json")
    if not os.path.exists(path):
        logger.warning(f"Experiment '{name_or_path}' not found; using built-in defaults")
        return ExperimentConfig().validate()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Malformed experiment file {path}: {e}")
    logger.info(f"Loaded experiment settings from {path}")
    return ExperimentConfig.from_dict(raw)


def replication_seed(seed: int, replication: int, tag: int, scenario: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, replication, tag, scenario])


def oracle_gamma(rate: float, n_samples: int) -> float:
    """Planted contamination rate rounded up to the nearest 1/N."""
    return math.ceil(rate * n_samples - 1e-9) / n_samples


def _run_cell(
    config: ExperimentConfig,
    train: LabeledDataset,
    test: LabeledDataset,
    method: str,
    p: Optional[int],
    gamma: float,
    fit_seed: np.random.SeedSequence,
) -> Dict[str, Any]:
    if method == "tbic":
        selected = sorted(greedy_select(
            train, gamma, config.model, fit_seed, n_start=config.tbic_n_start, max_iter=config.max_iter
        ).selected)
    elif method == "mlsubset":
        selected = fit_ml_subset(
            train, p, gamma, config.model, n_init=config.n_init, max_iter=config.max_iter, seed=fit_seed
        ).selected
    else:
        selected = list(range(train.n_features))

    record: Dict[str, Any] = {
        "selected": [i + 1 for i in selected],
        "n_selected": len(selected),
        "precision": selection_precision(selected, RELEVANT),
        "test_error": None,
    }
    if selected:
        fit = fit_redda(
            train.subset_columns(selected), config.model, gamma, config.classifier_n_start, config.max_iter, fit_seed
        )
        _, predicted = predict_map(fit, test.X[:, selected])
        record["test_error"] = misclassification_error(predicted, test.labels)
    return record


def _run_replication(config: ExperimentConfig, replication: int) -> List[Dict[str, Any]]:
    train_clean = generate_clean(config.n_train, seed=replication_seed(config.seed, replication, TAG_TRAIN))
    test = generate_clean(config.n_test, seed=replication_seed(config.seed, replication, TAG_TEST))
    records = []
    for s, scenario in enumerate(config.scenarios):
        contamination = ContaminationSpec(
            n_label_noise=scenario.n_label_noise,
            n_outliers=scenario.n_outliers,
            chi2_prob=config.chi2_prob,
            seed=replication_seed(config.seed, replication, TAG_CONTAMINATION, s),
        )
        train, _ = contaminate(train_clean, contamination)
        rate = contamination.rate(config.n_train)

        for gamma_label in config.gammas:
            gamma = oracle_gamma(rate, train.n_samples) if gamma_label == "oracle" else float(gamma_label)
            for method in config.methods:
                for p in (config.p_values if method == "mlsubset" else [None]):
                    base = {
                        "scenario": scenario.label,
                        "contamination_rate": rate,
                        "replication": replication,
                        "gamma_label": str(gamma_label),
                        "gamma": gamma,
                        "method": method,
                        "p": p,
                        "error": None,
                    }
                    fit_seed = replication_seed(config.seed, replication, TAG_FIT, s)
                    try:
                        base.update(_run_cell(config, train, test, method, p, gamma, fit_seed))
                    except ReddaError as e:
                        logger.warning(f"Replication {replication} {method} gamma={gamma_label} failed: {e}")
                        base.update({"selected": [], "n_selected": 0, "precision": None, "test_error": None})
                        base["error"] = f"{e.category}: {e}"
                    records.append(base)
    logger.info(f"Replication {replication + 1}/{config.replications} done")
    return records


def _statistics(values: pd.Series) -> Dict[str, Optional[float]]:
    values = values.dropna().astype(float)
    if values.empty:
        return {"mean": None, "sd": None, "median": None}
    return {
        "mean": float(values.mean()),
        "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "median": float(values.median()),
    }


def aggregate_records(records: List[Dict[str, Any]], n_features: int = 16) -> List[Dict[str, Any]]:
    """Per (scenario, gamma, method, p) cell: precision and test-error statistics plus selection frequencies."""
    if not records:
        return []
    frame = pd.DataFrame(records)
    frame["p"] = frame["p"].fillna(0).astype(int)
    cells = []
    keys = ["scenario", "gamma_label", "method", "p"]
    for (scenario, gamma_label, method, p), group in frame.groupby(keys, sort=True):
        ok = group[group["error"].isna()]
        frequency = np.zeros(n_features)
        for selected in ok["selected"]:
            for index in selected:
                frequency[index - 1] += 1
        cells.append({
            "scenario": scenario,
            "gamma_label": gamma_label,
            "method": method,
            "p": int(p) or None,
            "replications": int(len(group)),
            "failures": int(group["error"].notna().sum()),
            "precision": _statistics(ok["precision"]),
            "test_error": _statistics(ok["test_error"]),
            "selection_frequency": (frequency / max(len(ok), 1)).tolist(),
        })
    return cells


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: List[Dict[str, Any]]
    aggregates: List[Dict[str, Any]]


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Monte-Carlo study: generate, contaminate, select, classify and score every replication."""
    config.validate()
    logger.info(
        f"Experiment: B={config.replications}, N={config.n_train}, M={config.n_test}, "
        f"scenarios={len(config.scenarios)}, gammas={config.gammas}, methods={config.methods}"
    )
    per_replication = map_ordered(
        lambda r: _run_replication(config, r), range(config.replications), config.threads
    )
    records = [record for chunk in per_replication for record in chunk]
    return ExperimentReport(config=config, records=records, aggregates=aggregate_records(records))


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def subset_distance(a: Sequence[int], b: Sequence[int], method: str) -> float:
    """Symmetric-difference size for fixed-size subsets, normalized edit distance for ordered selections."""
    if method == "mlsubset":
        return float(len(set(a) ^ set(b)))
    return levenshtein(list(a), list(b)) / max(len(a), len(b), 1)


@dataclass
class GammaMonitorReport:
    method: str
    p: Optional[int]
    gamma_grid: List[float]
    selections: List[List[int]]
    distances: List[float]
    flagged_gamma: Optional[float] = None


def gamma_monitor(
    data: LabeledDataset,
    gamma_grid: Sequence[float],
    method: str = "tbic",
    p: Optional[int] = None,
    model: str = "VVV",
    seed: SeedLike = 2021,
    n_start: int = 10,
    n_init: int = 20,
    max_iter: int = 100,
    threads: int = 1,
) -> GammaMonitorReport:
    """Run a selector over a decreasing trimming grid and measure how the retained subset changes.

    The flagged gamma is the first grid point whose subset differs from the previous one.
    """
    grid = [check_gamma(g) for g in gamma_grid]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("The gamma grid must be strictly decreasing")
    if method not in ("tbic", "mlsubset"):
        raise ValidationError(f"gamma monitoring supports tbic and mlsubset, got {method!r}")
    if method == "mlsubset" and p is None:
        raise ValidationError("gamma monitoring with mlsubset needs p")

    selections: List[List[int]] = []
    for gamma in grid:
        if method == "tbic":
            selected = greedy_select(data, gamma, model, seed, n_start=n_start, max_iter=max_iter, threads=threads).selected
        else:
            selected = fit_ml_subset(data, p, gamma, model, n_init=n_init, max_iter=max_iter, seed=seed, threads=threads).selected
        selections.append(list(selected))
        logger.info(f"gamma={gamma}: selected {[i + 1 for i in selected]}")

    distances = [subset_distance(a, b, method) for a, b in zip(selections, selections[1:])]
    flagged = next((grid[i + 1] for i, d in enumerate(distances) if d > 0), None)
    if flagged is not None:
        logger.info(f"Retained subset changes at gamma={flagged}")
    return GammaMonitorReport(
        method=method,
        p=p,
        gamma_grid=grid,
        selections=selections,
        distances=distances,
        flagged_gamma=flagged,
    )
