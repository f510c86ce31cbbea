"""
Maximum-likelihood relevant-subset selector.

The relevant index set F (of fixed size p) is a model parameter. Variables in
F follow a patterned Gaussian classifier; the complement E is a
class-independent Gaussian regression on F. The joint trimmed likelihood is
maximized by alternating an M-step (full-dimension class and pooled moments),
an S-step (choice of F) and a T-step (regression link and re-trimming).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.dataset import LabeledDataset
from src.errors import EstimationError, InitializationError, ValidationError
from src.utils.checks import check_dimension, check_gamma, check_positive_int, check_subset_size
from src.utils.genetic import FixedSizeSubsetGA, GaParams
from src.utils.model_core import (
    ClassParams,
    PatternedModel,
    estimate_class_params,
    gaussian_logpdf,
    log_det,
    pooled_moments,
    regularize_covariance,
)
from src.utils.parallel import SeedLike, map_ordered, spawn_generators
from src.utils.redda import TrimmingState, own_class_logpdf, trim_counts

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 20000
H_BATCH = 4096
STRATEGIES = ("auto", "exhaustive", "genetic", "closed_form")


@dataclass
class SubsetPartition:
    relevant: Tuple[int, ...]
    irrelevant: Tuple[int, ...]

    @classmethod
    def from_relevant(cls, relevant: Sequence[int], n_features: int) -> "SubsetPartition":
        F = tuple(sorted(int(i) for i in relevant))
        if len(set(F)) != len(F) or any(i < 0 or i >= n_features for i in F):
            raise ValidationError(f"Invalid relevant subset {F} for P={n_features}")
        E = tuple(i for i in range(n_features) if i not in F)
        return cls(relevant=F, irrelevant=E)


@dataclass
class ConditionalLink:
    """x_E | x_F ~ N(mu_cond + G_coef x_F, sigma_cond)."""

    G_coef: np.ndarray
    mu_cond: np.ndarray
    sigma_cond: np.ndarray

    def logpdf(self, X_E: np.ndarray, X_F: np.ndarray) -> np.ndarray:
        if self.mu_cond.shape[0] == 0:
            return np.zeros(X_F.shape[0])
        return gaussian_logpdf(X_E - X_F @ self.G_coef.T, self.mu_cond, self.sigma_cond)


@dataclass
class MlSubsetFit:
    partition: SubsetPartition
    params: ClassParams
    link: ConditionalLink
    trimming: TrimmingState
    objective: float
    n_init_used: int
    model: PatternedModel = PatternedModel.VVV
    history: List[float] = field(default_factory=list)
    n_iterations: int = 0
    converged: bool = False
    restart_index: int = 0
    class_names: List[str] = field(default_factory=list)
    feature_names: List[str] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def gamma(self) -> float:
        return self.trimming.gamma

    @property
    def selected(self) -> List[int]:
        return list(self.partition.relevant)


def joint_trimmed_loglik(
    data: LabeledDataset, partition: SubsetPartition, params: ClassParams, link: ConditionalLink, keep
) -> float:
    """Kept-row sum of log(tau_g phi(x_F)) for the observed class plus the conditional log-density of x_E."""
    labels = data.require_labels()
    check_dimension(data.n_features, params.n_features, "data columns")
    mask = np.asarray(getattr(keep, "keep", keep), dtype=bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0
    return float(np.sum(_joint_scores(data.X[rows], labels[rows], partition, params, link)))


def _joint_scores(
    X: np.ndarray, labels: np.ndarray, partition: SubsetPartition, params: ClassParams, link: ConditionalLink
) -> np.ndarray:
    F, E = list(partition.relevant), list(partition.irrelevant)
    restricted = params.restrict(F)
    with np.errstate(divide="ignore"):
        log_tau = np.log(params.tau)
    classification = own_class_logpdf(restricted, X[:, F], labels) + log_tau[labels]
    return classification + link.logpdf(X[:, E], X[:, F])


def _random_subsets(labels: np.ndarray, n_classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(labels.shape[0], dtype=bool)
    for g in range(n_classes):
        members = np.flatnonzero(labels == g)
        mask[rng.choice(members, size=size, replace=False)] = True
    return mask


def robust_init(
    data: LabeledDataset,
    p: int,
    gamma: float,
    rng: Union[np.random.Generator, SeedLike],
    model: Union[str, PatternedModel] = PatternedModel.VVV,
) -> Tuple[TrimmingState, Optional[Tuple[int, ...]]]:
    """Initial keep vector and, for small samples, an initial relevant subset.

    Large samples (N > 2 G (P + 1) and every class holding P + 1 rows) keep one
    random (P + 1)-subset per class and leave F to the first S-step. Otherwise
    random (p + 1)-subsets are kept, a random F is drawn and the rows are
    re-trimmed by their restricted own-class log-density.

    Raises:
        InitializationError: If a class has fewer than p + 1 rows
    """
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    p = check_subset_size(p, data.n_features)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    labels = data.require_labels()
    counts = data.class_counts()
    n_features = data.n_features

    if data.n_samples > 2 * data.n_classes * (n_features + 1) and counts.min() >= n_features + 1:
        keep = _random_subsets(labels, data.n_classes, n_features + 1, rng)
        return TrimmingState(keep=keep, gamma=gamma), None

    small = int(np.argmin(counts))
    if counts[small] < p + 1:
        raise InitializationError(
            f"Class '{data.class_names[small]}' has {counts[small]} rows; at least p+1={p + 1} are needed"
        )
    keep = _random_subsets(labels, data.n_classes, p + 1, rng)
    F0 = tuple(int(i) for i in np.sort(rng.choice(n_features, size=p, replace=False)))
    sub = data.subset_columns(F0)
    params = estimate_class_params(sub, keep, model)
    trimming = TrimmingState.from_scores(own_class_logpdf(params, sub.X, labels), gamma)
    return trimming, F0


def m_step(data: LabeledDataset, keep, model: Union[str, PatternedModel] = PatternedModel.VVV) -> ClassParams:
    """Full-dimension class estimates plus the pooled mean and pooled covariance."""
    model = PatternedModel.parse(model)
    params = estimate_class_params(data, keep, model)
    params.pooled_mu, pooled_sigma = pooled_moments(data.X, keep, model)
    params.pooled_sigma, _ = regularize_covariance(pooled_sigma)
    return params


def _fallback_logdets(matrices: np.ndarray) -> Tuple[np.ndarray, bool]:
    values = np.empty(matrices.shape[0])
    floored = False
    for i, matrix in enumerate(matrices):
        values[i], flag = log_det(matrix)
        floored = floored or flag
    return values, floored


def h_objective_batch(params: ClassParams, combos: np.ndarray) -> Tuple[np.ndarray, bool]:
    """h(F) for every row of ``combos`` (B x p index array) and whether any restriction was floored."""
    if params.pooled_sigma is None:
        raise ValidationError("h(F) needs pooled estimates; run the M-step first")
    combos = np.atleast_2d(np.asarray(combos, dtype=int))
    values = np.empty(combos.shape[0])
    floored = False
    for start in range(0, combos.shape[0], H_BATCH):
        chunk = combos[start:start + H_BATCH]
        rows, cols = chunk[:, :, None], chunk[:, None, :]
        pooled = params.pooled_sigma[rows, cols]
        classes = params.sigma[:, rows, cols]
        sign_p, logdet_p = np.linalg.slogdet(pooled)
        sign_g, logdet_g = np.linalg.slogdet(classes)

        bad = np.flatnonzero(sign_p <= 0)
        if bad.size:
            logdet_p[bad], flag = _fallback_logdets(pooled[bad])
            floored = floored or flag
        for g in range(classes.shape[0]):
            bad = np.flatnonzero(sign_g[g] <= 0)
            if bad.size:
                logdet_g[g, bad], flag = _fallback_logdets(classes[g, bad])
                floored = floored or flag

        values[start:start + chunk.shape[0]] = params.tau @ logdet_g - logdet_p
    return values, floored


def h_objective(params: ClassParams, F: Sequence[int], diagnostics: Optional[List[str]] = None) -> float:
    """Sum_g tau_g log det Sigma_{g,F} - log det Sigma_F over the restrictions to F."""
    values, floored = h_objective_batch(params, np.array([list(F)], dtype=int))
    if floored and diagnostics is not None:
        diagnostics.append(f"Singular restriction to {tuple(int(i) + 1 for i in F)}; floored eigenvalues used")
    return float(values[0])


def _closed_form_subset(params: ClassParams, p: int, model: PatternedModel) -> Tuple[int, ...]:
    class_diag = np.einsum("gii->gi", params.sigma)
    pooled_diag = np.diag(params.pooled_sigma)
    if model is PatternedModel.VVI:
        scores = params.tau @ np.log(class_diag / pooled_diag)
    elif model is PatternedModel.EEI:
        scores = np.log(class_diag[0] / pooled_diag)
    else:
        raise ValidationError(f"No closed-form S-step for model {model.value}; use exhaustive or genetic")
    order = np.argsort(scores, kind="stable")
    return tuple(sorted(int(i) for i in order[:p]))


def _exhaustive_subset(params: ClassParams, p: int) -> Tuple[int, ...]:
    combos = np.array(list(itertools.combinations(range(params.n_features), p)), dtype=int)
    values, floored = h_objective_batch(params, combos)
    if floored:
        logger.debug("Exhaustive S-step met singular restrictions; floored eigenvalues used")
    return tuple(int(i) for i in combos[int(np.argmin(values))])


def s_step(
    params: ClassParams,
    p: int,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    strategy: str = "auto",
    ga_params: Optional[GaParams] = None,
    rng: Union[np.random.Generator, SeedLike, None] = None,
) -> Tuple[int, ...]:
    """Choose the size-p subset minimizing h(F).

    ``auto`` uses the closed forms for VVI and EEI, exhaustive enumeration
    when C(P, p) <= 20000 and the genetic algorithm otherwise.
    """
    model = PatternedModel.parse(model)
    n_features = params.n_features
    p = check_subset_size(p, n_features)
    if strategy not in STRATEGIES:
        raise ValidationError(f"Unknown S-step strategy {strategy!r}; choose one of {', '.join(STRATEGIES)}")
    if p == n_features:
        return tuple(range(n_features))

    if strategy == "auto":
        if model in (PatternedModel.VVI, PatternedModel.EEI):
            strategy = "closed_form"
        elif math.comb(n_features, p) <= EXHAUSTIVE_LIMIT:
            strategy = "exhaustive"
        else:
            strategy = "genetic"

    if strategy == "closed_form":
        return _closed_form_subset(params, p, model)
    if strategy == "exhaustive":
        return _exhaustive_subset(params, p)

    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ga = FixedSizeSubsetGA(
        lambda combos: h_objective_batch(params, combos)[0], n_features, p, ga_params or GaParams(), rng
    )
    return ga.run().subset


def conditional_link(params: ClassParams, partition: SubsetPartition) -> ConditionalLink:
    """Regression of x_E on x_F from the pooled mean and covariance (Schur complement)."""
    F, E = list(partition.relevant), list(partition.irrelevant)
    mu, sigma = params.pooled_mu, params.pooled_sigma
    if not E:
        return ConditionalLink(np.zeros((0, len(F))), np.zeros(0), np.zeros((0, 0)))
    sigma_F = sigma[np.ix_(F, F)]
    sigma_FE = sigma[np.ix_(F, E)]
    G_coef = linalg.solve(sigma_F, sigma_FE, assume_a="pos").T
    mu_cond = mu[E] - G_coef @ mu[F]
    sigma_cond = sigma[np.ix_(E, E)] - G_coef @ sigma_FE
    sigma_cond = 0.5 * (sigma_cond + sigma_cond.T)
    return ConditionalLink(G_coef=G_coef, mu_cond=mu_cond, sigma_cond=sigma_cond)


def t_step(
    data: LabeledDataset, params: ClassParams, F: Sequence[int], gamma: float
) -> Tuple[ConditionalLink, TrimmingState]:
    """Regression link of E on F and re-trimming by the joint per-row criterion."""
    gamma = check_gamma(gamma)
    labels = data.require_labels()
    partition = SubsetPartition.from_relevant(F, data.n_features)
    link = conditional_link(params, partition)
    scores = _joint_scores(data.X, labels, partition, params, link)
    return link, TrimmingState.from_scores(scores, gamma)


def _run_restart(
    data: LabeledDataset,
    p: int,
    gamma: float,
    model: PatternedModel,
    max_iter: int,
    strategy: str,
    ga_params: GaParams,
    rng: np.random.Generator,
    restart_index: int,
) -> MlSubsetFit:
    trimming, _ = robust_init(data, p, gamma, rng, model)
    keep = trimming.keep
    history: List[float] = []
    diagnostics: List[str] = []
    seen = set()
    previous: Optional[bytes] = None
    best: Optional[MlSubsetFit] = None
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        params = m_step(data, keep, model)
        F = s_step(params, p, model, strategy, ga_params, rng)
        link, trimming = t_step(data, params, F, gamma)
        partition = SubsetPartition.from_relevant(F, data.n_features)
        objective = joint_trimmed_loglik(data, partition, params, link, trimming)
        if history and objective < history[-1] - 1e-8 * max(1.0, abs(history[-1])):
            logger.debug(f"Restart {restart_index}: objective decreased at iteration {iteration}")
        history.append(objective)

        if best is None or objective > best.objective:
            best = MlSubsetFit(
                partition=partition,
                params=params,
                link=link,
                trimming=trimming,
                objective=objective,
                n_init_used=1,
                model=model,
                restart_index=restart_index,
            )
        keep = trimming.keep

        key = trimming.discarded_key
        if key == previous:
            converged = True
            break
        if key in seen:
            diagnostics.append(f"Discarded set cycled at iteration {iteration}")
            break
        seen.add(key)
        previous = key

    h_objective(best.params, best.partition.relevant, diagnostics)
    best.history = history
    best.n_iterations = iteration
    best.converged = converged
    best.diagnostics = diagnostics
    return best


def fit_ml_subset(
    data: LabeledDataset,
    p: int,
    gamma: float = 0.05,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    n_init: int = 20,
    max_iter: int = 100,
    seed: SeedLike = 2021,
    strategy: str = "auto",
    ga_params: Optional[GaParams] = None,
    threads: int = 1,
) -> MlSubsetFit:
    """Fit the ML subset selector with ``n_init`` robust restarts.

    Args:
        data: Labeled training data
        p: Number of relevant variables sought
        gamma: Trimming level in [0, 0.5)
        model: Covariance pattern code of the relevant block
        n_init: Restarts; restart i always uses spawned generator i
        max_iter: M/S/T cycles per restart
        seed: Master seed
        strategy: S-step strategy (auto, exhaustive, genetic, closed_form)
        ga_params: Genetic algorithm settings
        threads: Worker threads for the restarts

    Returns:
        MlSubsetFit: Best restart by joint trimmed log-likelihood (ties: lowest restart)

    Raises:
        EstimationError: If every restart fails
    """
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    p = check_subset_size(p, data.n_features)
    n_init = check_positive_int(n_init, "n_init")
    max_iter = check_positive_int(max_iter, "max_iter")
    if strategy not in STRATEGIES:
        raise ValidationError(f"Unknown S-step strategy {strategy!r}; choose one of {', '.join(STRATEGIES)}")
    if strategy == "closed_form" and model not in (PatternedModel.VVI, PatternedModel.EEI):
        raise ValidationError(f"No closed-form S-step for model {model.value}")
    data.require_labels()
    ga_params = (ga_params or GaParams()).validate()
    _, n_kept = trim_counts(data.n_samples, gamma)
    logger.info(
        f"ML subset selection: N={data.n_samples}, P={data.n_features}, p={p}, gamma={gamma}, "
        f"model={model.value}, restarts={n_init}"
    )

    failures: List[str] = []

    def restart(item):
        index, rng = item
        try:
            return _run_restart(data, p, gamma, model, max_iter, strategy, ga_params, rng, index)
        except EstimationError as e:
            failures.append(f"restart {index}: {e}")
            logger.warning(f"ML subset restart {index} failed: {e}")
            return None

    results = map_ordered(restart, list(enumerate(spawn_generators(seed, n_init))), threads)
    succeeded = [r for r in results if r is not None]
    if not succeeded:
        raise EstimationError(f"All {n_init} ML subset restarts failed: {'; '.join(sorted(failures))}")

    best = succeeded[0]
    for result in succeeded[1:]:
        if result.objective > best.objective:
            best = result
    best.n_init_used = len(succeeded)
    best.class_names = list(data.class_names)
    best.feature_names = list(data.feature_names)
    best.diagnostics.extend(sorted(failures))
    names = ", ".join(data.feature_names[i] for i in best.partition.relevant)
    logger.info(f"ML subset done: F=({names}), objective={best.objective:.6f}, kept={n_kept}")
    return best
