import itertools
import math

import numpy as np
import pytest

from src.dataset import LabeledDataset
from src.errors import ValidationError
from src.utils.genetic import GaParams
from src.utils.ml_subset import (
    SubsetPartition,
    conditional_link,
    fit_ml_subset,
    h_objective,
    h_objective_batch,
    joint_trimmed_loglik,
    m_step,
    robust_init,
    s_step,
    t_step,
)
from src.utils.model_core import ClassParams
from src.utils.redda import fit_redda
from src.utils.simlab import generate_clean


def random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.5 * np.eye(d)


def random_params(rng, d, n_classes=3, diagonal=False, equal=False):
    tau = rng.dirichlet(np.ones(n_classes))
    if diagonal:
        sigma = np.stack([np.diag(rng.uniform(0.5, 3.0, size=d)) for _ in range(n_classes)])
        pooled = np.diag(rng.uniform(1.0, 4.0, size=d))
    else:
        sigma = np.stack([random_spd(rng, d) for _ in range(n_classes)])
        pooled = random_spd(rng, d)
    if equal:
        sigma = np.repeat(sigma[:1], n_classes, axis=0)
    return ClassParams(
        tau=tau,
        mu=rng.normal(size=(n_classes, d)),
        sigma=sigma,
        pooled_mu=rng.normal(size=d),
        pooled_sigma=pooled,
    )


def exhaustive_minimum(params, p):
    combos = list(itertools.combinations(range(params.n_features), p))
    values = [h_objective(params, c) for c in combos]
    return combos[int(np.argmin(values))], min(values)


def test_h_objective_matches_determinants():
    """h(F) is the tau-weighted class log-determinant minus the pooled one."""
    params = random_params(np.random.default_rng(0), 6)
    F = [1, 3, 4]
    idx = np.ix_(F, F)
    expected = sum(
        params.tau[g] * np.linalg.slogdet(params.sigma[g][idx])[1] for g in range(3)
    ) - np.linalg.slogdet(params.pooled_sigma[idx])[1]
    assert h_objective(params, F) == pytest.approx(expected, abs=1e-10)
    values, floored = h_objective_batch(params, np.array([F, [0, 1, 2]]))
    assert values[0] == pytest.approx(expected, abs=1e-10)
    assert not floored


def test_h_objective_needs_pooled_estimates():
    """Without the pooled moments the objective is undefined."""
    params = random_params(np.random.default_rng(1), 4)
    params.pooled_sigma = None
    with pytest.raises(ValidationError):
        h_objective(params, [0, 1])


def test_closed_forms_match_exhaustive_search():
    """VVI and EEI closed forms return the exhaustive minimizer."""
    rng = np.random.default_rng(2)
    for _ in range(25):
        p = int(rng.integers(1, 4))
        params = random_params(rng, 8, diagonal=True)
        assert s_step(params, p, "VVI") == exhaustive_minimum(params, p)[0]
        params = random_params(rng, 8, diagonal=True, equal=True)
        assert s_step(params, p, "EEI") == exhaustive_minimum(params, p)[0]


def test_genetic_s_step_matches_exhaustive_search():
    """The GA reaches the exhaustive minimum on almost every random fixture."""
    rng = np.random.default_rng(3)
    hits = 0
    for trial in range(20):
        p = 2 + trial % 2
        params = random_params(rng, 10)
        subset = s_step(params, p, "VVV", strategy="genetic", rng=np.random.default_rng(trial))
        best, value = exhaustive_minimum(params, p)
        assert h_objective(params, subset) >= value - 1e-9
        hits += subset == best
    assert hits >= 19


def test_s_step_strategy_checks():
    """Unknown strategies and oversized subsets are rejected; p = P returns every variable."""
    params = random_params(np.random.default_rng(4), 5)
    with pytest.raises(ValidationError):
        s_step(params, 2, "VVV", strategy="annealing")
    with pytest.raises(ValidationError):
        s_step(params, 6, "VVV")
    assert s_step(params, 5, "VVV") == (0, 1, 2, 3, 4)
    with pytest.raises(ValidationError):
        s_step(params, 2, "VVV", strategy="closed_form")


def test_conditional_link_is_the_schur_complement():
    """x_E | x_F regression coefficients and covariance come from the pooled moments."""
    sigma = np.array([[2.0, 0.6, 0.2], [0.6, 1.0, 0.3], [0.2, 0.3, 1.5]])
    mu = np.array([1.0, -1.0, 0.5])
    params = ClassParams(
        tau=np.array([1.0]), mu=mu[None], sigma=sigma[None], pooled_mu=mu, pooled_sigma=sigma
    )
    link = conditional_link(params, SubsetPartition.from_relevant([0], 3))
    np.testing.assert_allclose(link.G_coef, [[0.3], [0.1]], atol=1e-12)
    np.testing.assert_allclose(link.mu_cond, mu[1:] - link.G_coef @ mu[:1], atol=1e-12)
    expected = sigma[1:, 1:] - np.outer(sigma[1:, 0], sigma[0, 1:]) / 2.0
    np.testing.assert_allclose(link.sigma_cond, expected, atol=1e-12)


def test_partition_and_initialization():
    """Partitions are complementary; the large-sample start keeps P+1 rows per class."""
    part = SubsetPartition.from_relevant([3, 0], 5)
    assert part.relevant == (0, 3) and part.irrelevant == (1, 2, 4)
    with pytest.raises(ValidationError):
        SubsetPartition.from_relevant([0, 0], 5)

    data = generate_clean(200, seed=5)
    trimming, F0 = robust_init(data, 3, 0.05, np.random.default_rng(0))
    assert F0 is None
    assert trimming.n_kept == data.n_classes * (data.n_features + 1)

    small = generate_clean(60, seed=6)
    trimming, F0 = robust_init(small, 3, 0.05, np.random.default_rng(0))
    assert len(F0) == 3
    assert trimming.n_trimmed == 3


def test_t_step_trims_exact_count_and_objective_recomputes():
    """The T-step discards floor(N gamma) rows and the joint objective is reproducible."""
    data = generate_clean(200, seed=7)
    params = m_step(data, np.ones(data.n_samples, dtype=bool), "VVV")
    link, trimming = t_step(data, params, (0, 1, 2), 0.05)
    assert trimming.n_trimmed == 10
    part = SubsetPartition.from_relevant((0, 1, 2), data.n_features)
    first = joint_trimmed_loglik(data, part, params, link, trimming)
    second = joint_trimmed_loglik(data, part, params, link, trimming.keep.astype(int))
    assert first == pytest.approx(second, abs=1e-8)


def test_full_subset_without_trimming_equals_edda():
    """p = P and gamma = 0 reduce the joint objective to the EDDA log-likelihood."""
    rng = np.random.default_rng(8)
    labels = np.repeat([0, 1, 2], 30)
    X = rng.normal(size=(90, 3)) + labels[:, None] * 2.0
    data = LabeledDataset(X=X, labels=labels)
    fit = fit_ml_subset(data, 3, gamma=0.0, n_init=2, max_iter=5, seed=1)
    edda = fit_redda(data, "VVV", gamma=0.0, n_start=2, seed=1)
    assert fit.selected == [0, 1, 2]
    assert fit.objective == pytest.approx(edda.trimmed_loglik, abs=1e-8)


def test_fit_ml_subset_recovers_relevant_variables():
    """On the benchmark generator the three class-dependent variables are selected."""
    data = generate_clean(500, seed=2021)
    fit = fit_ml_subset(data, 3, gamma=0.05, n_init=3, max_iter=30, seed=9)
    assert fit.selected == [0, 1, 2]
    assert fit.trimming.n_trimmed == 25
    assert len(fit.history) == fit.n_iterations
    assert math.isfinite(fit.objective)


def test_restart_history_never_decreases():
    """Each M/S/T cycle keeps or raises the joint trimmed log-likelihood."""
    data = generate_clean(300, seed=13)
    fit = fit_ml_subset(data, 3, gamma=0.05, n_init=2, max_iter=30, seed=5)
    history = np.array(fit.history)
    assert history.size >= 2
    assert np.all(np.diff(history) >= -1e-8 * np.maximum(1.0, np.abs(history[:-1])))
    assert fit.objective == pytest.approx(history.max())


def test_fit_ml_subset_is_deterministic_across_threads():
    """Restart i uses generator i regardless of the worker count."""
    data = generate_clean(150, seed=10)
    one = fit_ml_subset(data, 2, gamma=0.05, n_init=3, max_iter=10, seed=4, threads=1)
    many = fit_ml_subset(data, 2, gamma=0.05, n_init=3, max_iter=10, seed=4, threads=3)
    assert one.selected == many.selected
    assert one.objective == many.objective
    assert one.restart_index == many.restart_index


def test_fit_ml_subset_argument_checks():
    """Strategy and subset size are validated before any work."""
    data = generate_clean(100, seed=11)
    with pytest.raises(ValidationError):
        fit_ml_subset(data, 0)
    with pytest.raises(ValidationError):
        fit_ml_subset(data, 3, strategy="closed_form", model="VVV")
    with pytest.raises(ValidationError):
        fit_ml_subset(data, 3, ga_params=GaParams(population=1))
