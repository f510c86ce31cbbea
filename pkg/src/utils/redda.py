"""
Robust eigenvalue-decomposition discriminant analysis.

Trimmed-likelihood fitting of patterned Gaussian classifiers through
concentration steps, MAP prediction and a-posteriori re-assignment of the
trimmed training rows. With gamma = 0 the fit is plain EDDA.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from src.dataset import LabeledDataset
from src.errors import EstimationError, InitializationError, ValidationError
from src.utils.checks import check_dimension, check_gamma, check_positive_int
from src.utils.model_core import (
    ClassParams,
    PatternedModel,
    class_conditional_logpdf,
    estimate_class_params,
    gaussian_logpdf,
    keep_mask,
)
from src.utils.parallel import SeedLike, map_ordered, spawn_generators

logger = logging.getLogger(__name__)

# Re-draws of a random start whose initial subsets could not be estimated
MAX_START_RETRIES = 10


def trim_counts(n_samples: int, gamma: float) -> Tuple[int, int]:
    """(discarded, kept) = (floor(N gamma), ceil(N (1 - gamma)))."""
    n_trim = int(math.floor(n_samples * gamma + 1e-9))
    return n_trim, n_samples - n_trim


@dataclass
class TrimmingState:
    """Binary keep vector over the training rows with exactly floor(N gamma) zeros."""

    keep: np.ndarray
    gamma: float = 0.0

    def __post_init__(self) -> None:
        self.keep = np.asarray(self.keep, dtype=bool)

    @classmethod
    def keep_all(cls, n_samples: int, gamma: float = 0.0) -> "TrimmingState":
        return cls(keep=np.ones(n_samples, dtype=bool), gamma=gamma)

    @classmethod
    def from_scores(cls, scores: np.ndarray, gamma: float) -> "TrimmingState":
        """Discard the floor(N gamma) rows with the lowest scores (ties: lowest row index first)."""
        scores = np.nan_to_num(np.asarray(scores, dtype=float), nan=-np.inf)
        n_trim, _ = trim_counts(scores.shape[0], gamma)
        keep = np.ones(scores.shape[0], dtype=bool)
        if n_trim:
            order = np.argsort(scores, kind="stable")
            keep[order[:n_trim]] = False
        return cls(keep=keep, gamma=gamma)

    @property
    def n_samples(self) -> int:
        return self.keep.shape[0]

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    @property
    def n_trimmed(self) -> int:
        return self.n_samples - self.n_kept

    @property
    def trimmed_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)

    @property
    def discarded_key(self) -> bytes:
        return self.trimmed_indices.tobytes()


@dataclass
class ReddaFit:
    params: ClassParams
    trimming: TrimmingState
    model: PatternedModel
    trimmed_loglik: float
    n_iterations: int
    converged: bool
    history: List[float] = field(default_factory=list)
    start_index: int = 0
    class_names: List[str] = field(default_factory=list)
    feature_names: List[str] = field(default_factory=list)

    @property
    def gamma(self) -> float:
        return self.trimming.gamma

    @property
    def is_edda(self) -> bool:
        return self.trimming.gamma == 0.0


def own_class_logpdf(params: ClassParams, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """log phi(x_n; mu_g, Sigma_g) with g the observed label of row n."""
    out = np.empty(X.shape[0])
    for g in range(params.n_classes):
        rows = labels == g
        if rows.any():
            out[rows] = gaussian_logpdf(X[rows], params.mu[g], params.sigma[g])
    return out


def trimmed_loglik(params: ClassParams, data: LabeledDataset, keep) -> float:
    """Sum over kept rows of log(tau_g phi(x_n; mu_g, Sigma_g)) for the observed class g."""
    labels = data.require_labels()
    check_dimension(data.n_features, params.n_features, "data columns")
    mask = keep_mask(keep, data.n_samples)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        log_tau = np.log(params.tau)
    kept_labels = labels[rows]
    return float(np.sum(own_class_logpdf(params, data.X[rows], kept_labels) + log_tau[kept_labels]))


def c_step(params: ClassParams, data: LabeledDataset, gamma: float) -> TrimmingState:
    """Keep the rows with the highest own-class density; proportions play no role."""
    gamma = check_gamma(gamma)
    labels = data.require_labels()
    return TrimmingState.from_scores(own_class_logpdf(params, data.X, labels), gamma)


def _random_class_subsets(labels: np.ndarray, n_classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Keep mask holding a random ``size``-subset of every class (whole class if smaller)."""
    mask = np.zeros(labels.shape[0], dtype=bool)
    for g in range(n_classes):
        members = np.flatnonzero(labels == g)
        if members.size < 2:
            raise InitializationError(f"Class {g + 1} has {members.size} rows; at least 2 are needed")
        chosen = rng.choice(members, size=min(size, members.size), replace=False)
        mask[chosen] = True
    return mask


def _concentrate(
    data: LabeledDataset,
    params: ClassParams,
    model: PatternedModel,
    gamma: float,
    max_iter: int,
) -> Tuple[ClassParams, TrimmingState, float, int, bool, List[float]]:
    """C-step / M-step loop from initial parameters; returns the best visited state."""
    history: List[float] = []
    seen = set()
    previous_key: Optional[bytes] = None
    best = None
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        trimming = c_step(params, data, gamma)
        params = estimate_class_params(data, trimming, model)
        loglik = trimmed_loglik(params, data, trimming)
        if history and loglik < history[-1] - 1e-8 * max(1.0, abs(history[-1])):
            logger.debug(f"Trimmed log-likelihood decreased at iteration {iteration}: {history[-1]:.6f} -> {loglik:.6f}")
        history.append(loglik)
        if best is None or loglik > best[2]:
            best = (params, trimming, loglik)

        key = trimming.discarded_key
        if key == previous_key:
            converged = True
            break
        if key in seen:
            logger.debug(f"Discarded set cycled at iteration {iteration}; keeping the best visited state")
            break
        seen.add(key)
        previous_key = key

    params, trimming, loglik = best
    return params, trimming, loglik, iteration, converged, history


def _run_start(
    data: LabeledDataset,
    model: PatternedModel,
    gamma: float,
    max_iter: int,
    rng: np.random.Generator,
    start_index: int,
) -> Optional[ReddaFit]:
    labels = data.require_labels()
    for attempt in range(MAX_START_RETRIES):
        try:
            init = _random_class_subsets(labels, data.n_classes, data.n_features + 1, rng)
            params = estimate_class_params(data, init, model)
            params, trimming, loglik, n_iter, converged, history = _concentrate(
                data, params, model, gamma, max_iter
            )
        except InitializationError:
            raise
        except EstimationError as e:
            logger.debug(f"Start {start_index} attempt {attempt + 1} failed: {e}")
            continue
        return ReddaFit(
            params=params,
            trimming=trimming,
            model=model,
            trimmed_loglik=loglik,
            n_iterations=n_iter,
            converged=converged,
            history=history,
            start_index=start_index,
            class_names=list(data.class_names),
            feature_names=list(data.feature_names),
        )
    logger.warning(f"Random start {start_index} failed after {MAX_START_RETRIES} attempts")
    return None


def fit_redda(
    data: LabeledDataset,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    gamma: float = 0.05,
    n_start: int = 50,
    max_iter: int = 200,
    seed: SeedLike = 2021,
    threads: int = 1,
) -> ReddaFit:
    """Fit a (robust) patterned Gaussian classifier by maximizing the trimmed likelihood.

    Args:
        data: Labeled training data
        model: Covariance pattern code
        gamma: Trimming level in [0, 0.5); 0 gives EDDA
        n_start: Random (P+1)-subset initializations per class
        max_iter: C-step iterations per start
        seed: Master seed; start i always uses spawned child i
        threads: Worker threads for the random starts

    Returns:
        ReddaFit: Best start by trimmed log-likelihood (ties: lowest start index)

    Raises:
        ValidationError: For invalid arguments
        EstimationError: If every random start fails
    """
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    n_start = check_positive_int(n_start, "n_start")
    max_iter = check_positive_int(max_iter, "max_iter")
    data.require_labels()
    if data.n_classes < 1 or data.n_samples == 0:
        raise ValidationError("Training data is empty")

    _, n_kept = trim_counts(data.n_samples, gamma)
    if n_kept < data.n_classes * (data.n_features + 1):
        logger.warning(
            f"Only {n_kept} kept rows for G={data.n_classes}, P={data.n_features}; covariances will be regularized"
        )

    kind = "EDDA" if gamma == 0.0 else "REDDA"
    logger.info(f"Fitting {kind} {model.value}: N={data.n_samples}, P={data.n_features}, gamma={gamma}, starts={n_start}")

    generators = spawn_generators(seed, n_start)
    results = map_ordered(
        lambda item: _run_start(data, model, gamma, max_iter, item[1], item[0]),
        list(enumerate(generators)),
        threads,
    )

    best: Optional[ReddaFit] = None
    for result in results:
        if result is not None and (best is None or result.trimmed_loglik > best.trimmed_loglik):
            best = result
    if best is None:
        raise EstimationError(f"All {n_start} random starts failed for model {model.value}")

    logger.info(
        f"{kind} fit done: trimmed loglik={best.trimmed_loglik:.6f}, start={best.start_index}, "
        f"iterations={best.n_iterations}, trimmed={best.trimming.n_trimmed}"
    )
    return best


def _log_joint(fit: ReddaFit, X: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_tau = np.log(fit.params.tau)
    return class_conditional_logpdf(fit.params, X) + log_tau


def predict_map(fit: ReddaFit, test: Union[np.ndarray, LabeledDataset]) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior class probabilities and MAP labels (ties: lowest class index).

    Raises:
        ValidationError: If the test column count differs from the fit
    """
    X = np.asarray(getattr(test, "X", test), dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    check_dimension(X.shape[1], fit.params.n_features, "test columns")
    log_joint = _log_joint(fit, X)
    posterior = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
    posterior /= posterior.sum(axis=1, keepdims=True)
    return posterior, np.argmax(posterior, axis=1)


def reassign_trimmed(fit: ReddaFit, data: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of the trimmed training rows and their argmax_g tau_g phi_g labels."""
    indices = fit.trimming.trimmed_indices
    if indices.size == 0:
        return indices, np.empty(0, dtype=int)
    check_dimension(data.n_features, fit.params.n_features, "data columns")
    labels = np.argmax(_log_joint(fit, data.X[indices]), axis=1)
    return indices, labels
