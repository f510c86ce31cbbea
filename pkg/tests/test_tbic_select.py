import math
from unittest.mock import patch

import numpy as np
import pytest

from src.dataset import LabeledDataset
from src.errors import EstimationError, ValidationError
from src.utils.model_core import PatternedModel, estimate_class_params
from src.utils.redda import TrimmingState, trimmed_loglik
from src.utils.simlab import generate_clean
from src.utils.tbic_select import (
    GreedySelector,
    greedy_select,
    replay_decisions,
    select_regressors,
    tbic_grouping,
    tbic_nogrouping,
    trimmed_regression,
)


def ols(y, X):
    design = np.column_stack([np.ones(len(y)), X])
    coef = np.linalg.lstsq(design, y, rcond=None)[0]
    resid = y - design @ coef
    return coef, float(resid @ resid) / len(y)


def small_problem(seed=0, n=120):
    """Two classes separated on x1; x2 = x1 / 2 + noise; x3 pure noise."""
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    x1 = rng.normal(size=n) + 4.0 * labels
    x2 = 0.5 * x1 + rng.normal(size=n)
    x3 = rng.normal(size=n)
    return LabeledDataset(X=np.column_stack([x1, x2, x3]), labels=labels)


def test_trimmed_regression_without_trimming_is_ols():
    """gamma = 0 gives the ordinary least-squares fit with variance RSS / N."""
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 2))
    y = 1.0 + X @ np.array([2.0, -1.0]) + rng.normal(size=80)
    params = trimmed_regression(y, X, 0.0)
    coef, sigma2 = ols(y, X)
    assert params.alpha == pytest.approx(coef[0], abs=1e-10)
    np.testing.assert_allclose(params.beta, coef[1:], atol=1e-10)
    assert params.sigma2 == pytest.approx(sigma2, abs=1e-10)


def test_trimmed_regression_discards_gross_residuals():
    """Vertical outliers are trimmed and the slope is recovered."""
    rng = np.random.default_rng(2)
    x = rng.normal(size=100)
    y = 3.0 * x + rng.normal(scale=0.1, size=100)
    y[:5] += 50.0
    params = trimmed_regression(y, x, 0.05)
    assert params.trimming.n_trimmed == 5
    np.testing.assert_array_equal(params.trimming.trimmed_indices, np.arange(5))
    assert params.beta[0] == pytest.approx(3.0, abs=0.1)


def test_trimmed_regression_needs_enough_rows():
    """Kept rows must exceed the number of regressors plus one."""
    with pytest.raises(ValidationError):
        trimmed_regression(np.arange(3.0), np.ones((3, 2)), 0.0)


def test_collinear_regressors_get_zero_coefficients():
    """A duplicated column is reported as dropped."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=40)
    y = x + rng.normal(scale=0.1, size=40)
    params = trimmed_regression(y, np.column_stack([x, x]), 0.0)
    assert len(params.dropped) == 1
    assert np.count_nonzero(params.beta) == 1


def test_select_regressors_prefers_the_explanatory_variable():
    """The BIC-best regressor set of x2 contains x1 only."""
    data = small_problem()
    keep = np.ones(data.n_samples, dtype=bool)
    assert select_regressors(1, [0, 2], data, keep) == (0,)
    assert select_regressors(1, [], data, keep) == ()


def test_scores_at_gamma_zero_equal_untrimmed_bic():
    """Without trimming both TBIC scores are ordinary BICs."""
    data = small_problem(seed=4)
    n = data.n_samples
    model = PatternedModel.VVV

    gr, gr_trim = tbic_grouping(data, [0], 1, 0.0, model, n_start=2, seed=1)
    sub = data.subset_columns([0, 1])
    params = estimate_class_params(sub, np.ones(n, dtype=bool), model)
    expected_gr = 2 * trimmed_loglik(params, sub, np.ones(n, dtype=bool)) - model.n_parameters(2, 2) * math.log(n)
    assert gr == pytest.approx(expected_gr, abs=1e-10)
    assert gr_trim.n_trimmed == 0

    ng, ng_trim, regressors = tbic_nogrouping(data, [0], 1, 0.0, model, n_start=2, seed=1)
    assert regressors == (0,)
    sub_c = data.subset_columns([0])
    params_c = estimate_class_params(sub_c, np.ones(n, dtype=bool), model)
    coef, sigma2 = ols(data.X[:, 1], data.X[:, [0]])
    loglik_p = -0.5 * n * (math.log(2 * math.pi) + math.log(sigma2) + 1.0)
    v = model.n_parameters(1, 2) + 1 + 2
    expected_ng = 2 * (trimmed_loglik(params_c, sub_c, np.ones(n, dtype=bool)) + loglik_p) - v * math.log(n)
    assert ng == pytest.approx(expected_ng, abs=1e-8)
    assert ng_trim.n_trimmed == 0


def test_redundant_variable_prefers_no_grouping():
    """A variable explained by an included one scores higher under NG."""
    data = small_problem(seed=5)
    gr, gr_trim = tbic_grouping(data, [0], 1, 0.05, n_start=3, seed=2)
    ng, ng_trim, _ = tbic_nogrouping(data, [0], 1, 0.05, n_start=3, seed=2)
    assert ng > gr
    assert gr_trim.n_kept == ng_trim.n_kept


def test_greedy_select_finds_the_discriminating_variable():
    """The search keeps x1 only and its decisions replay from the logged trimmings."""
    data = small_problem(seed=6)
    result = greedy_select(data, gamma=0.05, seed=3, n_start=3)
    assert result.selected == [0]
    assert result.step_log[0].decision == "accepted"
    assert [r.decision for r in result.step_log[-2:]] == ["rejected", "rejected"]
    assert replay_decisions(data, result) == [r.decision for r in result.step_log]


def test_first_addition_stage_regresses_on_nothing():
    """With nothing included the NG model is a plain normal for the candidate."""
    data = small_problem(seed=8)
    selector = GreedySelector(data, 0.05, PatternedModel.VVV, seed=4, n_start=2)
    with patch("src.utils.tbic_select.trimmed_regression", wraps=trimmed_regression) as regression, \
            patch("src.utils.tbic_select.select_regressors", wraps=select_regressors) as chooser:
        evaluations = [selector.evaluate((), j) for j in range(data.n_features)]

    assert regression.call_count == data.n_features
    assert all(call.args[1].shape[1] == 0 for call in regression.call_args_list)
    assert all(call.args[1] == [] for call in chooser.call_args_list)
    assert all(e.regressors == () for e in evaluations)


def test_kept_count_mismatch_is_an_estimation_error():
    """GR and NG trimmings must keep the same number of rows."""
    data = small_problem(seed=9)
    n = data.n_samples
    gr_keep = np.ones(n, dtype=bool)
    gr_keep[:6] = False
    ng_keep = np.ones(n, dtype=bool)
    ng_keep[:5] = False
    selector = GreedySelector(data, 0.05, PatternedModel.VVV, seed=4, n_start=2)
    with patch("src.utils.tbic_select.tbic_grouping", return_value=(1.0, TrimmingState(gr_keep, 0.05))), \
            patch("src.utils.tbic_select.tbic_nogrouping", return_value=(0.0, TrimmingState(ng_keep, 0.05), ())):
        with pytest.raises(EstimationError):
            selector.evaluate((), 0)


def test_greedy_select_logs_no_stage_beyond_cap():
    """At most 2P stages are run."""
    data = small_problem(seed=7)
    result = greedy_select(data, gamma=0.0, seed=5, n_start=2)
    assert len(result.step_log) <= 2 * data.n_features
    assert all(r.kind in ("add", "remove") for r in result.step_log)


@pytest.mark.slow
def test_greedy_select_on_simulated_data_recovers_relevant_block():
    """On the 16-variable benchmark the first three variables are selected."""
    data = generate_clean(500, seed=2021)
    result = greedy_select(data, gamma=0.05, seed=2021, n_start=5)
    assert sorted(result.selected) == [0, 1, 2]
