"""
Robust greedy variable selection scored by the Trimmed BIC.

A proposal variable x^p is compared under two models given the currently
included variables x^c:

* Grouping (GR): x^p carries class information; a REDDA model is fitted on
  the columns c + {p}.
* No-Grouping (NG): x^p is a trimmed linear regression on a BIC-chosen subset
  r of x^c, with a REDDA model on x^c alone; both parts share one trimming.

Each score is 2 x trimmed log-likelihood - (free parameters) x log(N*), where
N* is the kept-row count. The greedy search alternates addition and removal
stages until two consecutive stages are rejected.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.dataset import LabeledDataset
from src.errors import EstimationError, ValidationError
from src.utils.checks import check_feature_indices, check_gamma, check_positive_int
from src.utils.model_core import LOG_2PI, PatternedModel, estimate_class_params
from src.utils.parallel import SeedLike, map_ordered, seed_sequence
from src.utils.redda import TrimmingState, fit_redda, own_class_logpdf, trim_counts, trimmed_loglik

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-10
EXHAUSTIVE_REGRESSOR_LIMIT = 10


@dataclass
class RegressionParams:
    """Intercept, coefficients over the regressors and residual variance."""

    alpha: float
    beta: np.ndarray
    sigma2: float
    regressors: Tuple[int, ...] = ()
    dropped: Tuple[int, ...] = ()
    trimming: Optional[TrimmingState] = None
    n_iterations: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.alpha + X @ self.beta

    def logpdf(self, y: np.ndarray, X: np.ndarray) -> np.ndarray:
        resid = np.asarray(y, dtype=float) - self.predict(X)
        return -0.5 * (LOG_2PI + math.log(self.sigma2) + resid ** 2 / self.sigma2)


def _least_squares(y: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Intercept-plus-slopes least squares; collinear design columns get a zero coefficient.

    Returns the coefficient vector (intercept first) and the 0-based positions
    (within X) of the dropped columns.
    """
    design = np.column_stack([np.ones(y.shape[0]), X])
    _, r, pivots = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    used = np.sort(pivots[:rank])
    coef = np.zeros(design.shape[1])
    coef[used] = linalg.lstsq(design[:, used], y)[0]
    dropped = tuple(int(c) - 1 for c in sorted(set(range(design.shape[1])) - set(used.tolist())))
    return coef, dropped


def _regression_from_keep(
    y: np.ndarray, X: np.ndarray, mask: np.ndarray, n_kept: int, regressors: Sequence[int] = ()
) -> RegressionParams:
    coef, dropped = _least_squares(y[mask], X[mask])
    resid = y[mask] - coef[0] - X[mask] @ coef[1:]
    sigma2 = max(float(resid @ resid) / n_kept, SIGMA2_FLOOR)
    regressors = tuple(regressors) if regressors else tuple(range(X.shape[1]))
    return RegressionParams(
        alpha=float(coef[0]),
        beta=coef[1:],
        sigma2=sigma2,
        regressors=regressors,
        dropped=tuple(regressors[d] for d in dropped if d >= 0),
    )


def trimmed_regression(
    y: np.ndarray,
    X: np.ndarray,
    gamma: float,
    keep_init: Optional[TrimmingState] = None,
    max_iter: int = 100,
) -> RegressionParams:
    """Least trimmed squares by concentration steps.

    Alternates least squares on the kept rows and re-trimming of the
    floor(N gamma) largest squared residuals until the kept set is stable.
    The residual variance divides the kept residual sum of squares by
    ceil(N(1 - gamma)) and is floored at 1e-10.

    Raises:
        ValidationError: If the kept rows do not exceed the number of regressors + 1
    """
    gamma = check_gamma(gamma)
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    _, n_kept = trim_counts(y.shape[0], gamma)
    if n_kept <= X.shape[1] + 1:
        raise ValidationError(f"Trimmed regression needs more than {X.shape[1] + 1} kept rows, got {n_kept}")

    mask = np.ones(y.shape[0], dtype=bool) if keep_init is None else np.asarray(getattr(keep_init, "keep", keep_init), dtype=bool)
    previous: Optional[bytes] = None
    iteration = 0
    for iteration in range(1, max_iter + 1):
        coef, _ = _least_squares(y[mask], X[mask])
        resid = y - coef[0] - X @ coef[1:]
        trimming = TrimmingState.from_scores(-(resid ** 2), gamma)
        mask = trimming.keep
        if trimming.discarded_key == previous:
            break
        previous = trimming.discarded_key

    params = _regression_from_keep(y, X, mask, n_kept)
    params.trimming = TrimmingState(keep=mask, gamma=gamma)
    params.n_iterations = iteration
    return params


def _regression_bic(y: np.ndarray, X: np.ndarray) -> float:
    n = y.shape[0]
    coef, _ = _least_squares(y, X)
    resid = y - coef[0] - X @ coef[1:]
    sigma2 = max(float(resid @ resid) / n, SIGMA2_FLOOR)
    loglik = -0.5 * n * (LOG_2PI + math.log(sigma2) + 1.0)
    return 2.0 * loglik - (X.shape[1] + 2) * math.log(n)


def select_regressors(
    p_var: int, included: Sequence[int], data: Union[np.ndarray, LabeledDataset], keep
) -> Tuple[int, ...]:
    """BIC-best regressor subset r of ``included`` for x^p on the kept rows.

    Exhaustive over all subsets when at most 10 variables are included,
    forward stepwise otherwise. Ties prefer smaller subsets.
    """
    included = tuple(int(i) for i in included)
    if not included:
        return ()
    X = np.asarray(getattr(data, "X", data), dtype=float)
    mask = np.asarray(getattr(keep, "keep", keep), dtype=bool)
    y = X[mask, p_var]
    Xc = X[mask]

    def bic(subset: Tuple[int, ...]) -> float:
        return _regression_bic(y, Xc[:, list(subset)])

    if len(included) <= EXHAUSTIVE_REGRESSOR_LIMIT:
        best, best_bic = (), bic(())
        for size in range(1, len(included) + 1):
            for subset in itertools.combinations(included, size):
                value = bic(subset)
                if value > best_bic:
                    best, best_bic = subset, value
        return best

    current: Tuple[int, ...] = ()
    current_bic = bic(current)
    remaining = list(included)
    while remaining:
        scored = [(bic(current + (j,)), j) for j in remaining]
        value, j = max(scored, key=lambda item: item[0])
        if value <= current_bic:
            break
        current, current_bic = current + (j,), value
        remaining.remove(j)
    return tuple(sorted(current))


def score_grouping_from_trimming(
    data: LabeledDataset, included: Sequence[int], p_var: int, keep, model: PatternedModel
) -> float:
    """TBIC(GR) of the M-step estimates on a given trimming of columns c + {p}."""
    columns = list(included) + [p_var]
    sub = data.subset_columns(columns)
    params = estimate_class_params(sub, keep, model)
    mask = np.asarray(getattr(keep, "keep", keep), dtype=bool)
    n_kept = int(mask.sum())
    v = model.n_parameters(len(columns), data.n_classes)
    return 2.0 * trimmed_loglik(params, sub, mask) - v * math.log(n_kept)


def _nogrouping_parts(
    data: LabeledDataset,
    included: Sequence[int],
    p_var: int,
    mask: np.ndarray,
    regressors: Sequence[int],
    model: PatternedModel,
):
    sub = data.subset_columns(list(included))
    params = estimate_class_params(sub, mask, model)
    n_kept = int(mask.sum())
    regression = _regression_from_keep(data.X[:, p_var], data.X[:, list(regressors)], mask, n_kept, regressors)
    return sub, params, regression


def score_nogrouping_from_trimming(
    data: LabeledDataset,
    included: Sequence[int],
    p_var: int,
    keep,
    regressors: Sequence[int],
    model: PatternedModel,
) -> float:
    """TBIC(NG) of the M-step and least-squares estimates on a given trimming."""
    mask = np.asarray(getattr(keep, "keep", keep), dtype=bool)
    sub, params, regression = _nogrouping_parts(data, included, p_var, mask, regressors, model)
    n_kept = int(mask.sum())
    loglik_c = trimmed_loglik(params, sub, mask)
    loglik_p = float(regression.logpdf(data.X[mask, p_var], data.X[np.ix_(mask, list(regressors))]).sum())
    v = model.n_parameters(len(included), data.n_classes) + len(regressors) + 2
    return 2.0 * (loglik_c + loglik_p) - v * math.log(n_kept)


def tbic_grouping(
    data: LabeledDataset,
    included: Sequence[int],
    p_var: int,
    gamma: float,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    n_start: int = 10,
    max_iter: int = 200,
    seed: SeedLike = 2021,
) -> Tuple[float, TrimmingState]:
    """TBIC of the Grouping model: REDDA on the columns included + [p_var]."""
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    columns = list(included) + [p_var]
    check_feature_indices(columns, data.n_features)
    fit = fit_redda(data.subset_columns(columns), model, gamma, n_start, max_iter, seed)
    score = score_grouping_from_trimming(data, included, p_var, fit.trimming, model)
    return score, fit.trimming


def _nogrouping_concentrate(
    data: LabeledDataset,
    included: Sequence[int],
    p_var: int,
    mask: np.ndarray,
    regressors: Sequence[int],
    model: PatternedModel,
    gamma: float,
    max_iter: int,
) -> np.ndarray:
    """Joint C-steps: discard the rows with lowest own-class log-density on x^c plus regression log-density."""
    y = data.X[:, p_var]
    Xr = data.X[:, list(regressors)]
    labels = data.require_labels()
    previous: Optional[bytes] = None
    for _ in range(max_iter):
        sub, params, regression = _nogrouping_parts(data, included, p_var, mask, regressors, model)
        scores = own_class_logpdf(params, sub.X, labels) + regression.logpdf(y, Xr)
        trimming = TrimmingState.from_scores(scores, gamma)
        mask = trimming.keep
        if trimming.discarded_key == previous:
            break
        previous = trimming.discarded_key
    return mask


def tbic_nogrouping(
    data: LabeledDataset,
    included: Sequence[int],
    p_var: int,
    gamma: float,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    n_start: int = 10,
    max_iter: int = 200,
    seed: SeedLike = 2021,
    c_fit=None,
) -> Tuple[float, TrimmingState, Tuple[int, ...]]:
    """TBIC of the No-Grouping model: REDDA on x^c plus trimmed regression of x^p on x^r.

    Two joint concentration runs are made, one from the untrimmed data and one
    from the robust fits of each part; the higher score wins.

    Returns:
        Tuple: Score, the shared trimming and the chosen regressors r
    """
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    included = list(included)
    check_feature_indices(included + [p_var], data.n_features)
    labels = data.require_labels()
    n = data.n_samples

    if c_fit is None and included:
        c_fit = fit_redda(data.subset_columns(included), model, gamma, n_start, max_iter, seed)

    if included:
        robust_keep = c_fit.trimming.keep
        class_scores = own_class_logpdf(c_fit.params, data.X[:, included], labels)
    else:
        robust_keep = np.ones(n, dtype=bool)
        class_scores = np.zeros(n)

    candidates = []
    regressors = select_regressors(p_var, included, data, robust_keep)
    regression = trimmed_regression(data.X[:, p_var], data.X[:, list(regressors)], gamma, TrimmingState(robust_keep, gamma), max_iter)
    joint_start = TrimmingState.from_scores(
        class_scores + regression.logpdf(data.X[:, p_var], data.X[:, list(regressors)]), gamma
    ).keep
    candidates.append((joint_start, regressors))

    all_keep = np.ones(n, dtype=bool)
    candidates.append((all_keep, select_regressors(p_var, included, data, all_keep)))

    best = None
    for start, regs in candidates:
        try:
            mask = _nogrouping_concentrate(data, included, p_var, start, regs, model, gamma, max_iter)
            score = score_nogrouping_from_trimming(data, included, p_var, mask, regs, model)
        except EstimationError as e:
            logger.debug(f"NG start failed for variable {p_var + 1}: {e}")
            continue
        if best is None or score > best[0]:
            best = (score, TrimmingState(mask, gamma), tuple(regs))
    if best is None:
        raise EstimationError(f"No-Grouping model could not be fitted for variable {p_var + 1}")
    return best


@dataclass
class StepRecord:
    """One addition or removal stage of the greedy search."""

    stage: int
    kind: str
    variable: Optional[int]
    included_before: Tuple[int, ...]
    gr_score: Optional[float] = None
    ng_score: Optional[float] = None
    decision: str = "rejected"
    regressors: Tuple[int, ...] = ()
    gr_keep: Optional[np.ndarray] = None
    ng_keep: Optional[np.ndarray] = None

    @property
    def difference(self) -> Optional[float]:
        if self.gr_score is None or self.ng_score is None:
            return None
        return self.gr_score - self.ng_score


@dataclass
class StepwiseState:
    included: List[int] = field(default_factory=list)
    candidates: List[int] = field(default_factory=list)
    step_log: List[StepRecord] = field(default_factory=list)


@dataclass
class SelectionResult:
    selected: List[int]
    step_log: List[StepRecord]
    gamma: float
    model: PatternedModel
    feature_names: List[str] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)
    n_evaluations: int = 0


@dataclass
class _Evaluation:
    gr_score: float
    ng_score: float
    gr_keep: np.ndarray
    ng_keep: np.ndarray
    regressors: Tuple[int, ...]

    @property
    def difference(self) -> float:
        return self.gr_score - self.ng_score


class GreedySelector:
    """Stepwise TBIC search with a cache of (included set, proposal) evaluations."""

    def __init__(
        self,
        data: LabeledDataset,
        gamma: float,
        model: PatternedModel,
        seed: SeedLike,
        n_start: int = 10,
        max_iter: int = 200,
        threads: int = 1,
    ):
        self.data = data
        self.gamma = gamma
        self.model = model
        self.seed = seed
        self.n_start = n_start
        self.max_iter = max_iter
        self.threads = threads
        self._entropy = int(seed_sequence(seed).generate_state(1)[0])
        self._cache: Dict[Tuple[FrozenSet[int], int], _Evaluation] = {}
        self._c_fits: Dict[FrozenSet[int], object] = {}
        self.logger = logging.getLogger(__name__)

    def _seed_for(self, tag: int, *indices: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self._entropy, tag, *indices])

    def _c_fit(self, included: Sequence[int]):
        key = frozenset(included)
        if key not in self._c_fits:
            self._c_fits[key] = fit_redda(
                self.data.subset_columns(sorted(included)),
                self.model,
                self.gamma,
                self.n_start,
                self.max_iter,
                self._seed_for(1, *sorted(included)),
            )
        return self._c_fits[key]

    def evaluate(self, included: Sequence[int], p_var: int) -> _Evaluation:
        """GR and NG scores of proposing ``p_var`` given ``included`` (order-free, cached)."""
        key = (frozenset(included), p_var)
        if key in self._cache:
            return self._cache[key]
        ordered = sorted(included)
        gr_score, gr_trim = tbic_grouping(
            self.data, ordered, p_var, self.gamma, self.model, self.n_start, self.max_iter,
            self._seed_for(0, p_var, *ordered),
        )
        c_fit = self._c_fit(ordered) if ordered else None
        ng_score, ng_trim, regressors = tbic_nogrouping(
            self.data, ordered, p_var, self.gamma, self.model, self.n_start, self.max_iter,
            self._seed_for(2, p_var, *ordered), c_fit=c_fit,
        )
        if gr_trim.n_kept != ng_trim.n_kept:
            raise EstimationError(f"GR and NG kept counts differ ({gr_trim.n_kept} vs {ng_trim.n_kept})")
        evaluation = _Evaluation(gr_score, ng_score, gr_trim.keep, ng_trim.keep, regressors)
        self._cache[key] = evaluation
        return evaluation

    def _evaluate_all(self, pairs: List[Tuple[Tuple[int, ...], int]]) -> List[_Evaluation]:
        # Warm the shared c-fits sequentially so threads never race on the cache
        for included, _ in pairs:
            if included:
                self._c_fit(included)
        return map_ordered(lambda pair: self.evaluate(*pair), pairs, self.threads)

    def run(self) -> SelectionResult:
        n_features = self.data.n_features
        state = StepwiseState(included=[], candidates=list(range(n_features)))
        rejections = 0
        stage = 0
        kind = "add"

        while stage < 2 * n_features and rejections < 2:
            stage += 1
            before = tuple(state.included)
            record = StepRecord(stage=stage, kind=kind, variable=None, included_before=before)

            if kind == "add" and state.candidates:
                pairs = [(before, j) for j in state.candidates]
                evaluations = self._evaluate_all(pairs)
                best = max(range(len(pairs)), key=lambda i: (evaluations[i].difference, -pairs[i][1]))
                chosen = evaluations[best]
                record.variable = pairs[best][1]
                if chosen.difference > 0:
                    record.decision = "accepted"
                    state.included.append(record.variable)
                    state.candidates.remove(record.variable)
            elif kind == "remove" and state.included:
                pairs = [(tuple(i for i in before if i != j), j) for j in before]
                evaluations = self._evaluate_all(pairs)
                best = min(range(len(pairs)), key=lambda i: (evaluations[i].difference, pairs[i][1]))
                chosen = evaluations[best]
                record.variable = pairs[best][1]
                if chosen.difference < 0:
                    record.decision = "accepted"
                    state.included.remove(record.variable)
                    state.candidates = sorted(state.candidates + [record.variable])
            else:
                chosen = None

            if chosen is not None:
                record.gr_score = chosen.gr_score
                record.ng_score = chosen.ng_score
                record.regressors = chosen.regressors
                record.gr_keep = chosen.gr_keep
                record.ng_keep = chosen.ng_keep

            state.step_log.append(record)
            rejections = 0 if record.decision == "accepted" else rejections + 1
            name = self.data.feature_names[record.variable] if record.variable is not None else "-"
            diff = f"{record.difference:.4f}" if record.difference is not None else "n/a"
            self.logger.info(f"Stage {stage} ({kind}) {name}: GR-NG={diff} -> {record.decision}")
            kind = "remove" if kind == "add" else "add"

        result = SelectionResult(
            selected=list(state.included),
            step_log=state.step_log,
            gamma=self.gamma,
            model=self.model,
            feature_names=[self.data.feature_names[i] for i in state.included],
            n_evaluations=len(self._cache),
        )
        if not result.selected:
            message = "No variable was accepted; the selection is empty"
            result.diagnostics.append(message)
            self.logger.warning(message)
        return result


def greedy_select(
    data: LabeledDataset,
    gamma: float = 0.05,
    model: Union[str, PatternedModel] = PatternedModel.VVV,
    seed: SeedLike = 2021,
    n_start: int = 10,
    max_iter: int = 200,
    threads: int = 1,
) -> SelectionResult:
    """Greedy forward/backward TBIC variable selection.

    Args:
        data: Labeled training data
        gamma: Trimming level shared by every GR and NG fit
        model: Covariance pattern code of the REDDA fits
        seed: Master seed; every (included set, proposal) evaluation gets its own child
        n_start: Random starts per REDDA fit
        max_iter: Concentration-step cap per fit
        threads: Workers for candidate evaluations within a stage

    Returns:
        SelectionResult: Included variables in acceptance order plus the step log
    """
    model = PatternedModel.parse(model)
    gamma = check_gamma(gamma)
    check_positive_int(n_start, "n_start")
    data.require_labels()
    logger.info(f"TBIC selection: N={data.n_samples}, P={data.n_features}, gamma={gamma}, model={model.value}")
    result = GreedySelector(data, gamma, model, seed, n_start, max_iter, threads).run()
    logger.info(f"Selected {len(result.selected)} variable(s): {', '.join(result.feature_names) or 'none'}")
    return result


def replay_decisions(data: LabeledDataset, result: SelectionResult) -> List[str]:
    """Recompute every logged score from its logged trimming and re-derive the decisions."""
    decisions = []
    for record in result.step_log:
        if record.variable is None:
            decisions.append("rejected")
            continue
        if record.kind == "add":
            included = sorted(record.included_before)
        else:
            included = sorted(i for i in record.included_before if i != record.variable)
        gr = score_grouping_from_trimming(data, included, record.variable, record.gr_keep, result.model)
        ng = score_nogrouping_from_trimming(
            data, included, record.variable, record.ng_keep, record.regressors, result.model
        )
        if record.kind == "add":
            decisions.append("accepted" if gr - ng > 0 else "rejected")
        else:
            decisions.append("accepted" if gr - ng < 0 else "rejected")
    return decisions
