"""
Patterned multivariate Gaussian family.

Covariance eigen-decomposition Sigma = lambda * D A D', constrained M-step
estimators for the eight patterned models with closed-form (or fixed-point)
updates, pooled covariances, Gaussian log-densities (including the g-inverse
form for singular covariances) and chi-square quantiles.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, special

from src.dataset import LabeledDataset
from src.errors import DegenerateCovarianceError, EstimationError, ValidationError
from src.utils.checks import check_dimension, check_positive_int, check_probability, check_symmetric

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Eigenvalue floor applied after every M-step: max(abs, rel * largest eigenvalue)
EIGEN_FLOOR_ABS = 1e-10
EIGEN_FLOOR_REL = 1e-8

# Cholesky pivots below this fraction of the largest pivot mean "singular"
SINGULAR_PIVOT_RTOL = 1e-7

VEI_TOL = 1e-8
VEI_MAX_ITER = 100


class ModelFamily(str, Enum):
    SPHERICAL = "spherical"
    DIAGONAL = "diagonal"
    ELLIPSOIDAL = "ellipsoidal"


class PatternedModel(str, Enum):
    """Volume / shape / orientation code of a covariance-constrained Gaussian family.

    E = equal across classes, V = varying, I = identity (spherical shape or
    axis-aligned orientation).
    """

    EII = "EII"
    VII = "VII"
    EEI = "EEI"
    VEI = "VEI"
    EVI = "EVI"
    VVI = "VVI"
    EEE = "EEE"
    VVV = "VVV"

    @classmethod
    def codes(cls) -> Tuple[str, ...]:
        return tuple(m.value for m in cls)

    @classmethod
    def parse(cls, value: Union[str, "PatternedModel"]) -> "PatternedModel":
        if isinstance(value, cls):
            return value
        code = str(value).strip().upper()
        if code not in cls.codes():
            raise ValidationError(f"Unsupported model code {value!r}; choose one of {', '.join(cls.codes())}")
        return cls(code)

    @property
    def volume(self) -> str:
        return self.value[0]

    @property
    def shape(self) -> str:
        return self.value[1]

    @property
    def orientation(self) -> str:
        return self.value[2]

    @property
    def family(self) -> ModelFamily:
        if self.shape == "I":
            return ModelFamily.SPHERICAL
        if self.orientation == "I":
            return ModelFamily.DIAGONAL
        return ModelFamily.ELLIPSOIDAL

    def n_covariance_parameters(self, n_features: int, n_classes: int) -> int:
        """Free covariance parameters on ``n_features`` dimensions for ``n_classes`` classes."""
        d, g = int(n_features), int(n_classes)
        if d == 0:
            return 0
        counts = {
            "EII": 1,
            "VII": g,
            "EEI": d,
            "VEI": g + (d - 1),
            "EVI": 1 + g * (d - 1),
            "VVI": g * d,
            "EEE": d * (d + 1) // 2,
            "VVV": g * d * (d + 1) // 2,
        }
        return counts[self.value]

    def n_parameters(self, n_features: int, n_classes: int) -> int:
        """Proportions (G-1) + means (G*P) + covariance parameters."""
        return (n_classes - 1) + n_classes * n_features + self.n_covariance_parameters(n_features, n_classes)


@dataclass
class EigenDecomposition:
    """Sigma = volume * orientation @ shape @ orientation.T with det(shape) = 1."""

    volume: float
    orientation: np.ndarray
    shape: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.volume * self.orientation @ self.shape @ self.orientation.T


@dataclass
class ClassParams:
    """Mixing proportions, class means and class covariances (optionally pooled moments)."""

    tau: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pooled_mu: Optional[np.ndarray] = None
    pooled_sigma: Optional[np.ndarray] = None

    @property
    def n_classes(self) -> int:
        return self.tau.shape[0]

    @property
    def n_features(self) -> int:
        return self.mu.shape[1]

    def restrict(self, features: Sequence[int]) -> "ClassParams":
        """Restriction of every mean and covariance to the given variables."""
        idx = np.asarray(list(features), dtype=int)
        pooled_mu = self.pooled_mu[idx] if self.pooled_mu is not None else None
        pooled_sigma = self.pooled_sigma[np.ix_(idx, idx)] if self.pooled_sigma is not None else None
        return replace(
            self,
            mu=self.mu[:, idx],
            sigma=self.sigma[:, idx[:, None], idx[None, :]],
            pooled_mu=pooled_mu,
            pooled_sigma=pooled_sigma,
        )


def keep_mask(keep, n_samples: int) -> np.ndarray:
    """Boolean keep vector from a trimming state or any 0/1 array."""
    mask = np.asarray(getattr(keep, "keep", keep), dtype=bool)
    check_dimension(mask.shape[0] if mask.ndim == 1 else -1, n_samples, "trimming indicator")
    return mask


def decompose_covariance(sigma: np.ndarray) -> EigenDecomposition:
    """Volume / orientation / shape decomposition of a covariance matrix.

    Eigenvalues are ordered decreasingly (stable for ties) and each
    eigenvector is signed so that its largest-magnitude entry is positive.

    Raises:
        ValidationError: If sigma is not symmetric positive semi-definite
        DegenerateCovarianceError: If sigma is the zero matrix, or any other
            singular PSD matrix such as diag(1, 0): a positive volume with a
            unit-determinant shape only represents positive-definite matrices
    """
    sigma = check_symmetric(sigma)
    values, vectors = np.linalg.eigh(sigma)
    largest = float(values.max()) if values.size else 0.0
    if largest <= 0.0:
        raise DegenerateCovarianceError("Zero covariance matrix has no eigen-decomposition")
    if values.min() < -1e-10 * largest:
        raise ValidationError("Matrix is not positive semi-definite")
    if values.min() <= 1e-14 * largest:
        raise DegenerateCovarianceError("Singular covariance matrix has zero volume")

    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    vectors = vectors * signs

    volume = float(np.exp(np.mean(np.log(values))))
    return EigenDecomposition(volume=volume, orientation=vectors, shape=np.diag(values / volume))


def regularize_covariance(sigma: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Floor eigenvalues at max(1e-10, 1e-8 * largest eigenvalue).

    Returns the input untouched when no eigenvalue is below the floor.
    """
    if sigma.shape[0] == 0:
        return sigma, False
    values, vectors = np.linalg.eigh(sigma)
    floor = max(EIGEN_FLOOR_ABS, EIGEN_FLOOR_REL * max(float(values.max()), 0.0))
    if values.min() >= floor:
        return sigma, False
    values = np.maximum(values, floor)
    fixed = (vectors * values) @ vectors.T
    return 0.5 * (fixed + fixed.T), True


def within_class_scatter(
    X: np.ndarray, labels: np.ndarray, mask: np.ndarray, n_classes: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kept counts, class means and class scatter matrices W_g (sums of outer products)."""
    n_features = X.shape[1]
    counts = np.zeros(n_classes, dtype=int)
    means = np.zeros((n_classes, n_features))
    scatter = np.zeros((n_classes, n_features, n_features))
    for g in range(n_classes):
        rows = X[mask & (labels == g)]
        counts[g] = rows.shape[0]
        if counts[g] == 0:
            continue
        means[g] = rows.mean(axis=0)
        centered = rows - means[g]
        scatter[g] = centered.T @ centered
    return counts, means, scatter


def _covariance_mstep(model: PatternedModel, scatter: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Constrained covariance MLEs from class scatters W_g and kept class sizes n_g."""
    n_classes, d, _ = scatter.shape
    if d == 0:
        return np.zeros((n_classes, 0, 0))
    n = counts.sum()
    eye = np.eye(d)
    nk = counts.astype(float)
    diag_w = np.einsum("gii->gi", scatter)
    code = model.value

    if code == "VVV":
        return scatter / nk[:, None, None]
    if code == "EEE":
        pooled = scatter.sum(axis=0) / n
        return np.repeat(pooled[None], n_classes, axis=0)
    if code == "EII":
        lam = np.trace(scatter.sum(axis=0)) / (n * d)
        return np.repeat((lam * eye)[None], n_classes, axis=0)
    if code == "VII":
        lam = diag_w.sum(axis=1) / (nk * d)
        return lam[:, None, None] * eye
    if code == "EEI":
        pooled = np.diag(diag_w.sum(axis=0) / n)
        return np.repeat(pooled[None], n_classes, axis=0)
    if code == "VVI":
        return np.stack([np.diag(diag_w[g] / nk[g]) for g in range(n_classes)])
    if code == "EVI":
        safe = np.maximum(diag_w, np.finfo(float).tiny)
        det_root = np.exp(np.mean(np.log(safe), axis=1))
        shape = safe / det_root[:, None]
        lam = det_root.sum() / n
        return np.stack([lam * np.diag(shape[g]) for g in range(n_classes)])
    if code == "VEI":
        return _vei_fixed_point(diag_w, nk)
    raise ValidationError(f"Unsupported model code {code}")


def _vei_fixed_point(diag_w: np.ndarray, nk: np.ndarray) -> np.ndarray:
    """Varying volume, common diagonal shape: alternate lambda_g and A updates."""
    n_classes, d = diag_w.shape
    safe = np.maximum(diag_w, np.finfo(float).tiny)
    shape = np.ones(d)
    lam = (safe / shape).sum(axis=1) / (nk * d)
    for iteration in range(VEI_MAX_ITER):
        weighted = (safe / lam[:, None]).sum(axis=0)
        new_shape = weighted / np.exp(np.mean(np.log(weighted)))
        new_lam = (safe / new_shape).sum(axis=1) / (nk * d)
        delta = max(np.max(np.abs(new_lam - lam) / lam), np.max(np.abs(new_shape - shape)))
        shape, lam = new_shape, new_lam
        if delta < VEI_TOL:
            break
    else:
        logger.debug(f"VEI inner iteration hit {VEI_MAX_ITER} iterations")
    return np.stack([lam[g] * np.diag(shape) for g in range(n_classes)])


def estimate_class_params(data: LabeledDataset, keep, model: Union[str, PatternedModel]) -> ClassParams:
    """M-step on the kept rows: proportions, class means and patterned covariances.

    tau_g is the kept class size over the number of kept rows (= ceil(N(1-gamma))
    for any trimmed state).

    Raises:
        EstimationError: If a class has fewer than 2 kept rows
    """
    model = PatternedModel.parse(model)
    labels = data.require_labels()
    mask = keep_mask(keep, data.n_samples)
    counts, means, scatter = within_class_scatter(data.X, labels, mask, data.n_classes)

    for g, count in enumerate(counts):
        if count < 2:
            raise EstimationError(
                f"Class '{data.class_names[g]}' has {count} kept rows; at least 2 are needed"
            )

    sigma = _covariance_mstep(model, scatter, counts)
    for g in range(sigma.shape[0]):
        sigma[g], floored = regularize_covariance(sigma[g])
        if floored:
            logger.debug(f"Floored eigenvalues of class '{data.class_names[g]}' covariance ({model.value})")

    tau = counts / counts.sum()
    return ClassParams(tau=tau, mu=means, sigma=sigma)


def pooled_moments(X: np.ndarray, keep, model: Union[str, PatternedModel]) -> Tuple[np.ndarray, np.ndarray]:
    """Pooled mean and pooled covariance of the kept rows in the model's family form."""
    model = PatternedModel.parse(model)
    X = np.asarray(getattr(X, "X", X), dtype=float)
    mask = keep_mask(keep, X.shape[0])
    kept = X[mask]
    n_kept = kept.shape[0]
    if n_kept == 0:
        raise EstimationError("No kept rows to estimate the pooled covariance from")

    mu = kept.sum(axis=0) / n_kept
    centered = kept - mu
    ellipsoidal = centered.T @ centered / n_kept

    if model.family is ModelFamily.ELLIPSOIDAL:
        sigma = ellipsoidal
    elif model.family is ModelFamily.DIAGONAL:
        sigma = np.diag(np.diag(ellipsoidal))
    else:
        sigma = np.mean(np.diag(ellipsoidal)) * np.eye(X.shape[1])
    return mu, sigma


def pooled_covariance(X: np.ndarray, keep, model: Union[str, PatternedModel]) -> np.ndarray:
    """Pooled covariance: ellipsoidal, diagonal or spherical form depending on the model."""
    return pooled_moments(X, keep, model)[1]


def _cholesky(sigma: np.ndarray) -> Optional[np.ndarray]:
    """Lower Cholesky factor, or None when sigma is (numerically) singular."""
    try:
        factor = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return None
    pivots = np.diag(factor)
    if pivots.size and pivots.min() <= SINGULAR_PIVOT_RTOL * pivots.max():
        return None
    return factor


def _nonzero_spectrum(sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Non-zero eigenvalues omega_k and their eigenvectors."""
    values, vectors = np.linalg.eigh(sigma)
    largest = max(float(values.max()), 0.0) if values.size else 0.0
    nonzero = values > max(EIGEN_FLOOR_ABS * 1e-2, 1e-10 * largest)
    return values[nonzero], vectors[:, nonzero]


def log_det(sigma: np.ndarray) -> Tuple[float, bool]:
    """Log-determinant via Cholesky; singular input falls back to floored eigenvalues.

    Returns:
        Tuple[float, bool]: The log-determinant and whether flooring was needed
    """
    if sigma.shape[0] == 0:
        return 0.0, False
    factor = _cholesky(sigma)
    if factor is not None:
        return 2.0 * float(np.log(np.diag(factor)).sum()), False
    fixed, _ = regularize_covariance(0.5 * (sigma + sigma.T))
    values = np.linalg.eigvalsh(fixed)
    return float(np.log(values).sum()), True


def gaussian_logpdf(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> Union[float, np.ndarray]:
    """Multivariate normal log-density of one row or of every row of a matrix.

    Positive-definite covariances use a triangular factorization; singular
    ones use the g-inverse density restricted to the non-zero eigenvalues.

    Raises:
        ValidationError: On dimension mismatch
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    d = mu.shape[0]
    check_dimension(rows.shape[1], d, "observation vs mean")
    check_dimension(sigma.shape[0] if sigma.ndim == 2 else -1, d, "covariance")

    if d == 0:
        out = np.zeros(rows.shape[0])
        return float(out[0]) if single else out

    diff = rows - mu
    factor = _cholesky(sigma)
    if factor is not None:
        z = linalg.solve_triangular(factor, diff.T, lower=True, check_finite=False)
        maha = np.einsum("ij,ij->j", z, z)
        out = -0.5 * (d * LOG_2PI + 2.0 * np.log(np.diag(factor)).sum() + maha)
    else:
        out = _singular_logpdf(diff, sigma)
    return float(out[0]) if single else out


def _singular_logpdf(diff: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Singular normal density on the range of sigma (g-inverse form)."""
    omega, vectors = _nonzero_spectrum(0.5 * (sigma + sigma.T))
    if omega.size == 0:
        at_mean = np.all(np.abs(diff) <= 1e-12, axis=1)
        return np.where(at_mean, 0.0, -np.inf)
    projected = diff @ vectors
    maha = (projected ** 2 / omega).sum(axis=1)
    return -0.5 * (omega.size * LOG_2PI + np.log(omega).sum() + maha)


def class_conditional_logpdf(params: ClassParams, X: np.ndarray) -> np.ndarray:
    """N x G matrix of log phi(x_n; mu_g, Sigma_g)."""
    X = np.asarray(X, dtype=float)
    check_dimension(X.shape[1], params.n_features, "observation columns")
    out = np.empty((X.shape[0], params.n_classes))
    for g in range(params.n_classes):
        out[:, g] = gaussian_logpdf(X, params.mu[g], params.sigma[g])
    return out


def chi_square_quantile(df: int, prob: float) -> float:
    """Chi-square quantile as twice the inverse regularized lower incomplete gamma.

    Raises:
        ValidationError: If df is not a positive integer or prob is outside (0, 1)
    """
    df = check_positive_int(df, "Degrees of freedom")
    prob = check_probability(prob)
    return float(2.0 * special.gammaincinv(df / 2.0, prob))
