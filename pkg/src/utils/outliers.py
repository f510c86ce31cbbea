"""
Marginal-density outlier scoring of test rows under a fitted classifier.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from src.errors import ValidationError
from src.utils.checks import check_dimension, check_feature_indices
from src.utils.ml_subset import MlSubsetFit
from src.utils.model_core import ClassParams, class_conditional_logpdf
from src.utils.redda import ReddaFit

logger = logging.getLogger(__name__)


@dataclass
class OutlierScores:
    log_density: np.ndarray
    ranking: np.ndarray
    flagged: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)


def _scoring_params(fit: Union[ReddaFit, MlSubsetFit], n_columns: int, columns: Optional[Sequence[int]]):
    if isinstance(fit, MlSubsetFit):
        relevant = list(fit.partition.relevant)
        check_dimension(n_columns, fit.params.n_features, "test columns")
        return fit.params.restrict(relevant), relevant
    if columns is None:
        check_dimension(n_columns, fit.params.n_features, "test columns")
        return fit.params, list(range(n_columns))
    columns = check_feature_indices(columns, n_columns)
    check_dimension(len(columns), fit.params.n_features, "scored columns")
    return fit.params, list(columns)


def outlier_score(
    fit: Union[ReddaFit, MlSubsetFit],
    test,
    columns: Optional[Sequence[int]] = None,
    top_k: int = 0,
) -> OutlierScores:
    """Score test rows by sum_g tau_g phi(y_F; mu_gF, Sigma_gF) on the retained subset F.

    Args:
        fit: A REDDA fit (on the scored columns) or an ML subset fit (on all columns)
        test: M x P matrix or dataset
        columns: 0-based test columns a REDDA fit was trained on (default: all)
        top_k: Number of lowest-density rows to flag

    Returns:
        OutlierScores: Log densities, 0-based ranking by ascending density
            (ties: lowest row first) and the flagged rows

    Raises:
        ValidationError: If the test columns do not match the fit
    """
    X = np.asarray(getattr(test, "X", test), dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if top_k < 0:
        raise ValidationError(f"top_k must be non-negative, got {top_k}")
    params, used = _scoring_params(fit, X.shape[1], columns)
    log_density = _log_marginal(params, X[:, used])
    ranking = np.argsort(log_density, kind="stable")
    flagged = ranking[: min(top_k, ranking.size)]
    if flagged.size:
        logger.info(f"Flagged {flagged.size} lowest-density test row(s): {[int(i) + 1 for i in flagged]}")
    return OutlierScores(log_density=log_density, ranking=ranking, flagged=flagged)


def _log_marginal(params: ClassParams, X: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_tau = np.log(params.tau)
    return logsumexp(class_conditional_logpdf(params, X) + log_tau, axis=1)
