"""scikit-learn compatible wrappers around the online filters.

The regressors consume delay-line regressor matrices ``X`` of shape
``(n_samples, M)`` in time order, so a raw signal is first passed through
:class:`DelayLineEmbedding`::

    make_pipeline(DelayLineEmbedding(n_taps=10), SMLLMSRegressor(order=2, mu=5e-3))

``fit`` makes one adaptive pass over the samples; ``partial_fit`` continues
from the current weights.  ``predict`` applies the final weights.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adaptive import (
    SmlLmsState,
    initial_factors,
    monomial_basis,
    sml_step,
    volterra_init,
    volterra_step,
)
from ._validation import check_positive_int, check_step_size
from .sml_model import delay_line


class DelayLineEmbedding(TransformerMixin, BaseEstimator):
    """Turn a 1-D signal into rows ``[x(i), x(i-1), ..., x(i-n_taps+1)]``, zero-padded at the start."""

    def __init__(self, n_taps: int = 10):
        self.n_taps = n_taps

    def fit(self, X, y=None):
        self._signal(X)
        check_positive_int(self.n_taps, "n_taps")
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return delay_line(self._signal(X), self.n_taps)

    @staticmethod
    def _signal(X) -> np.ndarray:
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1:
            raise ValueError(f"expected a 1-D signal or a single column, got shape {arr.shape}")
        return check_array(arr.reshape(-1, 1), ensure_min_samples=1)[:, 0]


class _OnlineRegressor(RegressorMixin, BaseEstimator):
    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self._state = self._new_state(X.shape[1])
        self.errors_ = np.empty(0)
        self.n_iter_ = 0
        return self._consume(X, y)

    def partial_fit(self, X, y):
        if not hasattr(self, "_state"):
            return self.fit(X, y)
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._consume(X, y)

    def _consume(self, X, y):
        errs = np.empty(len(y))
        for i, (u, d) in enumerate(zip(X, y)):
            errs[i], _ = self._step(u, d)
        self.errors_ = np.concatenate([self.errors_, errs])
        self.n_iter_ += len(y)
        self._publish()
        return self


class SMLLMSRegressor(_OnlineRegressor):
    """Product-of-FIR filter adapted with SML-LMS.

    Parameters
    ----------
    order : int
        Number of FIR branches multiplied together (the polynomial degree).
    mu : float
        Step size.
    init : {"table", "text"}
        Staggered-impulse initialisation variant; see
        :func:`smlfilter.adaptive.initial_factors`.

    Attributes
    ----------
    coef_ : ndarray of shape (order, n_features_in_)
        Final branch weights.
    errors_ : ndarray
        A-priori error of every adaptation step so far.
    mult_per_iter_ : int
        Multiplications performed by the last adaptation step.
    """

    def __init__(self, order: int = 2, mu: float = 0.005, init: str = "table"):
        self.order = order
        self.mu = mu
        self.init = init

    def _new_state(self, M):
        return SmlLmsState(W=initial_factors(self.order, M, self.init), mu=check_step_size(self.mu))

    def _step(self, u, d):
        return sml_step(self._state, u, d)

    def _publish(self):
        self.coef_ = self._state.W.copy()
        self.mult_per_iter_ = self._state.mult_count_last

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return np.prod(X @ self.coef_.T, axis=1)


class VolterraLMSRegressor(_OnlineRegressor):
    """Homogeneous Volterra filter of a given order on the symmetric monomial basis, adapted by LMS."""

    def __init__(self, order: int = 2, mu: float = 0.002):
        self.order = order
        self.mu = mu

    def _new_state(self, M):
        return volterra_init(self.order, M, self.mu)

    def _step(self, u, d):
        return volterra_step(self._state, u, d)

    def _publish(self):
        self.coef_ = self._state.coeffs.copy()
        self.basis_ = self._state.basis
        self.mult_per_iter_ = self._state.mult_count_last

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        basis = monomial_basis(X.shape[1], self.order)
        phi = np.prod(X[:, basis], axis=2)
        return phi @ self.coef_

