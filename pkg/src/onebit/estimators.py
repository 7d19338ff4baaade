"""scikit-learn style wrapper around ORKA.

``X`` holds the sensing vectors ``a_j`` as rows, ``y`` the observed one-bit
signs (``n`` or ``n x m``) and ``thresholds`` the matching threshold
matrix. The fitted ``coef_`` is the recovered signal.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import feasibility as fz
from . import orka
from . import structured as st
from ._validation import check_signs
from .sensing import OneBitMeasurements, SamplingModel, one_bit

__all__ = ["OrkaRegressor"]


class OrkaRegressor(RegressorMixin, BaseEstimator):
    """Recover ``x`` from ``r = sgn(X x - tau)`` on the one-bit polyhedron.

    ``solver`` is any of ``rka``, ``skm``, ``prskm``, ``block_skm``,
    ``quantile``. With ``sparsity`` set, HT-ORKA (hard thresholding after
    every Kaczmarz step) is used instead.
    """

    def __init__(
        self,
        solver="rka",
        max_iters=10_000,
        tol=1e-8,
        relaxation=1.0,
        sample_size=None,
        block_rows=None,
        sparsity=None,
        random_state=None,
    ):
        self.solver = solver
        self.max_iters = max_iters
        self.tol = tol
        self.relaxation = relaxation
        self.sample_size = sample_size
        self.block_rows = block_rows
        self.sparsity = sparsity
        self.random_state = random_state

    def _measurements(self, X, y, thresholds):
        X = check_array(X, dtype=float)
        signs = check_signs(y, X.shape[0])
        if thresholds is None:
            tau = np.zeros(signs.shape)
        else:
            tau = np.asarray(thresholds, dtype=float).reshape(X.shape[0], -1)
            if tau.shape != signs.shape:
                raise ValueError(f"thresholds shape {tau.shape} does not match signs {signs.shape}")
        return OneBitMeasurements(signs, tau, SamplingModel("explicit", X))

    def fit(self, X, y, thresholds=None, x0=None):
        if self.solver not in fz.SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {sorted(fz.SOLVERS)}")
        meas = self._measurements(X, y, thresholds)
        if self.sparsity is not None:
            cfg = st.StructuredConfig(
                max_iters=self.max_iters, tol=self.tol, relaxation=self.relaxation,
                sample_size=self.sample_size, seed=self.random_state,
            )
            x, trace = st.ht_orka_solve(st.SparseProblem(meas, int(self.sparsity)), cfg, x0=x0)
        else:
            cfg = fz.SolverConfig(
                max_iters=self.max_iters, tol=self.tol, relaxation=self.relaxation,
                sample_size=self.sample_size, block_rows=self.block_rows,
                seed=self.random_state, record_every=None,
            )
            x, trace = orka.orka_solve(orka.build_polyhedron(meas), self.solver, cfg, x0=x0)
        self.coef_ = np.asarray(x, dtype=float)
        self.n_features_in_ = meas.d
        self.n_iter_ = trace.n_iter
        self.converged_ = bool(trace.converged)
        self.trace_ = trace
        return self

    def predict(self, X):
        """Estimated clean measurements ``X coef_``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator expects {self.n_features_in_}")
        return X @ self.coef_

    def predict_signs(self, X, thresholds=None):
        y = self.predict(X)[:, None]
        tau = np.zeros_like(y) if thresholds is None else np.asarray(thresholds, dtype=float).reshape(y.shape[0], -1)
        return one_bit(y - tau)

    def score(self, X, y, thresholds=None, sample_weight=None):
        """Fraction of observed signs reproduced by ``coef_``."""
        signs = check_signs(y, np.asarray(X).shape[0])
        pred = self.predict_signs(X, thresholds)
        agree = (pred == signs).mean(axis=1)
        return float(np.average(agree, weights=sample_weight))
