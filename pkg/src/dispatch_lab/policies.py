"""Assignment policies as scikit-learn style estimators.

``fit`` (re)initializes a policy's learned state, optionally from historical
transitions; ``partial_fit`` applies online TD updates; ``predict`` maps a
:class:`~dispatch_lab.assign.BatchProblem` to a :class:`Matching`.
Hyper-parameters live in ``__init__`` so ``get_params``/``set_params`` and
``sklearn.base.clone`` work for sweeps.
"""
from __future__ import annotations

from typing import Iterable

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assign import (FAIRNESS_SCOPES, UTILITY_MODES, BatchProblem, Matching, solve_batch,
                     solve_batch_exact)
from .baselines import PolicyKind, assign_cd, assign_laf, assign_tora
from .values import DEFAULT_ALPHA, DEFAULT_GAMMA, Transition, UtilityTable, ValueTable


def _check_problem(problem) -> BatchProblem:
    if not isinstance(problem, BatchProblem):
        raise TypeError(f"expected a BatchProblem, got {type(problem).__name__}")
    return problem


class DispatchPolicy(BaseEstimator):
    kind: PolicyKind
    learns = False

    def fit(self, X: Iterable[Transition] = (), y=None):
        self._reset()
        return self.partial_fit(X)

    def partial_fit(self, X: Iterable[Transition] = (), y=None):
        if not hasattr(self, "n_updates_"):
            self._reset()
        for tr in X:
            self._learn(tr)
            self.n_updates_ += 1
        return self

    def predict(self, problem: BatchProblem) -> Matching:
        check_is_fitted(self, "n_updates_")
        return self._assign(_check_problem(problem))

    def _reset(self):
        self.n_updates_ = 0

    def _learn(self, tr: Transition):
        pass

    def _assign(self, problem: BatchProblem) -> Matching:
        raise NotImplementedError


class LEADPolicy(DispatchPolicy):
    """Future-aware emission/fairness batch matching with shared TD values."""

    kind = PolicyKind.LEAD
    learns = True

    def __init__(self, eta=5.0, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA, utility_mode="derived",
                 fairness_scope="all_available", solver="local", max_iter=None, warm_start=None):
        self.eta = eta
        self.gamma = gamma
        self.alpha = alpha
        self.utility_mode = utility_mode
        self.fairness_scope = fairness_scope
        self.solver = solver
        self.max_iter = max_iter
        self.warm_start = warm_start

    def _reset(self):
        if self.utility_mode not in UTILITY_MODES:
            raise ValueError(f"utility_mode must be one of {UTILITY_MODES}")
        if self.fairness_scope not in FAIRNESS_SCOPES:
            raise ValueError(f"fairness_scope must be one of {FAIRNESS_SCOPES}")
        if self.solver not in ("local", "exact"):
            raise ValueError("solver must be 'local' or 'exact'")
        if self.warm_start:
            self.value_table_ = ValueTable.load(self.warm_start, gamma=self.gamma, alpha=self.alpha)
        else:
            self.value_table_ = ValueTable(gamma=self.gamma, alpha=self.alpha)
        super()._reset()

    def _learn(self, tr):
        self.value_table_.td_update(tr)

    def weigh(self, problem: BatchProblem) -> BatchProblem:
        check_is_fitted(self, "value_table_")
        return problem.reweighted(self.value_table_, self.eta, self.utility_mode, self.fairness_scope)

    def _assign(self, problem):
        p = self.weigh(problem)
        if self.solver == "exact":
            return solve_batch_exact(p)
        return solve_batch(p, self.max_iter)


class CDPolicy(DispatchPolicy):
    kind = PolicyKind.CD

    def __init__(self):
        pass

    def _assign(self, problem):
        return assign_cd(problem)


class TORAPolicy(DispatchPolicy):
    kind = PolicyKind.TORA

    def __init__(self, e2d_threshold=100.0):
        self.e2d_threshold = e2d_threshold

    def _assign(self, problem):
        return assign_tora(problem, self.e2d_threshold)


class LAFPolicy(DispatchPolicy):
    kind = PolicyKind.LAF
    learns = True

    def __init__(self, equity_weight=1.0, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA, max_iter=None):
        self.equity_weight = equity_weight
        self.gamma = gamma
        self.alpha = alpha
        self.max_iter = max_iter

    def _reset(self):
        self.utility_table_ = UtilityTable(gamma=self.gamma, alpha=self.alpha)
        super()._reset()

    def _learn(self, tr):
        self.utility_table_.td_update(tr)

    def _assign(self, problem):
        return assign_laf(problem, self.utility_table_, self.equity_weight, self.max_iter)


_POLICIES = {
    PolicyKind.LEAD: LEADPolicy,
    PolicyKind.CD: CDPolicy,
    PolicyKind.TORA: TORAPolicy,
    PolicyKind.LAF: LAFPolicy,
}


def make_policy(kind, **params) -> DispatchPolicy:
    """Build a policy by name; parameters a policy does not take are ignored."""
    kind = PolicyKind.parse(kind) if isinstance(kind, str) else PolicyKind(kind)
    cls = _POLICIES[kind]
    accepted = cls._get_param_names()
    return cls(**{k: v for k, v in params.items() if k in accepted})
