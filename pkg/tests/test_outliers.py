import numpy as np
import pytest

from src.dataset import LabeledDataset
from src.errors import ValidationError
from src.utils.ml_subset import fit_ml_subset
from src.utils.outliers import outlier_score
from src.utils.redda import fit_redda
from src.utils.simlab import generate_clean


def test_far_rows_rank_first_and_are_flagged():
    """The lowest-density rows come first in the ranking."""
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(50, 2)), rng.normal(size=(50, 2)) + 5.0])
    data = LabeledDataset(X=X, labels=np.repeat([0, 1], 50))
    fit = fit_redda(data, "VVV", gamma=0.05, n_start=3, seed=2)
    test = np.array([[0.0, 0.0], [40.0, -40.0], [5.0, 5.0], [-20.0, 20.0]])
    scores = outlier_score(fit, test, top_k=2)
    assert set(scores.flagged.tolist()) == {1, 3}
    assert scores.ranking[0] in (1, 3)
    assert np.all(np.isfinite(scores.log_density))
    np.testing.assert_allclose(scores.density, np.exp(scores.log_density))


def test_identical_rows_keep_input_order():
    """Equal densities are ranked lowest row first."""
    rng = np.random.default_rng(1)
    data = LabeledDataset(X=rng.normal(size=(40, 1)), labels=np.repeat([0, 1], 20))
    fit = fit_redda(data, "VVV", gamma=0.0, n_start=2, seed=1)
    scores = outlier_score(fit, np.array([[9.0], [9.0], [9.0]]))
    np.testing.assert_array_equal(scores.ranking, [0, 1, 2])
    assert scores.flagged.size == 0


def test_ml_subset_fit_scores_relevant_variables_only():
    """Changing an irrelevant column leaves the score unchanged."""
    data = generate_clean(300, seed=3)
    fit = fit_ml_subset(data, 3, gamma=0.05, n_init=2, max_iter=15, seed=4)
    test = generate_clean(5, seed=5).X
    shifted = test.copy()
    irrelevant = fit.partition.irrelevant[0]
    shifted[:, irrelevant] += 100.0
    np.testing.assert_allclose(outlier_score(fit, test).log_density, outlier_score(fit, shifted).log_density)


def test_column_mismatch_and_bad_top_k():
    """Test columns must match the fit and top_k must be non-negative."""
    rng = np.random.default_rng(6)
    data = LabeledDataset(X=rng.normal(size=(40, 2)), labels=np.repeat([0, 1], 20))
    fit = fit_redda(data, "EII", gamma=0.0, n_start=2, seed=1)
    with pytest.raises(ValidationError):
        outlier_score(fit, np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        outlier_score(fit, np.zeros((3, 2)), top_k=-1)
    scores = outlier_score(fit, np.zeros((3, 4)), columns=[1, 3])
    assert scores.log_density.shape == (3,)
