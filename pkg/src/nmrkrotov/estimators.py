"""scikit-learn style wrappers around the optimizers.

A pulse optimizer has no training data in the usual sense. ``fit(X=None)``
takes an optional initial amplitude grid in Hz with shape ``(N, K)``; without
one, the seeded random guess is used. ``predict(grid)`` returns the excitation
profile over quadrupolar couplings for spin-3/2 problems, and ``score`` the
normalized efficiency of the fitted sequence.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .experiments import ExperimentSpec, build_experiment, excitation_profile
from .grape import GrapeConfig, grape_optimize
from .krotov import InnerSolverConfig, KrotovConfig, evaluate, krotov_optimize
from .propagation import ControlSequence, PenaltySpec
from .smoothing import TruncationSpec, regularized_accept

__all__ = ["KrotovPulseOptimizer", "GrapePulseOptimizer"]


class _PulseOptimizerBase(BaseEstimator):
    def _problem(self):
        spec = ExperimentSpec(self.kind, J=self.J, omega_q_hz=self.omega_q_hz,
                              omega_q_range_hz=self.omega_q_range_hz, T=self.T, N=self.n_steps)
        return build_experiment(spec)

    def _smoother(self):
        if not self.smooth:
            return None
        spec = TruncationSpec(cutoff_hz=self.cutoff_hz)

        def smoother(J_old, trial, evaluator):
            return regularized_accept(J_old, trial, evaluator, spec)

        return smoother

    def _initial(self, problem, X):
        if X is None:
            return problem.random_guess(self.random_state, self.max_amplitude_hz)
        X = check_array(X, ensure_min_samples=1)
        if X.shape != (problem.N, len(problem.labels)):
            raise ValueError(f"X must have shape {(problem.N, len(problem.labels))}, got {X.shape}")
        return ControlSequence(2 * np.pi * X, problem.dt, problem.labels)

    def _store(self, problem, result):
        self.problem_ = problem
        self.sequence_ = result.sequence
        self.log_ = result.log
        self.status_ = result.status
        self.n_iter_ = len(result.log) - 1
        self.efficiency_ = result.evaluation.efficiency
        self.amplitudes_hz_ = result.sequence.amps / (2 * np.pi)
        self.n_features_in_ = len(problem.labels)
        return self

    def score(self, X=None, y=None):
        """Normalized efficiency; ``X`` (Hz grid) scores that sequence instead."""
        check_is_fitted(self, "sequence_")
        seq = self.sequence_ if X is None else self._initial(self.problem_, X)
        return evaluate(seq, self.problem_.conditions, PenaltySpec((self.penalty,))).efficiency

    def predict(self, X):
        """Efficiency of the fitted sequence at each quadrupolar coupling in ``X`` (Hz)."""
        check_is_fitted(self, "sequence_")
        if self.kind == "two_spin_cos3":
            raise ValueError("predict needs a spin-3/2 experiment")
        grid = check_array(np.asarray(X, dtype=float).reshape(-1, 1)).ravel()
        which = "satellite" if self.kind == "na23_satellite" else "central"
        return np.array([e for _, e in excitation_profile(self.sequence_, grid, which)])

    def transform(self, X=None):
        """Fitted control amplitudes in Hz, shape ``(N, K)``."""
        check_is_fitted(self, "sequence_")
        return self.amplitudes_hz_.copy()


class KrotovPulseOptimizer(_PulseOptimizerBase):
    """Krotov optimization of one of the built-in experiments.

    >>> est = KrotovPulseOptimizer(kind="na23_central", max_iter=3).fit()
    >>> 0.0 <= est.score() <= 1.0
    True
    """

    def __init__(self, kind="two_spin_cos3", J=None, omega_q_hz=None, omega_q_range_hz=None, T=None,
                 n_steps=200, penalty=1e-4, tol=1e-8, max_iter=500, smooth=True, cutoff_hz=None,
                 inner_method="quasi-newton", max_amplitude_hz=100.0, random_state=0):
        self.kind = kind
        self.J = J
        self.omega_q_hz = omega_q_hz
        self.omega_q_range_hz = omega_q_range_hz
        self.T = T
        self.n_steps = n_steps
        self.penalty = penalty
        self.tol = tol
        self.max_iter = max_iter
        self.smooth = smooth
        self.cutoff_hz = cutoff_hz
        self.inner_method = inner_method
        self.max_amplitude_hz = max_amplitude_hz
        self.random_state = random_state

    def fit(self, X=None, y=None):
        problem = self._problem()
        config = KrotovConfig(PenaltySpec((self.penalty,)), self.tol, self.max_iter,
                              InnerSolverConfig(method=self.inner_method), ())
        result = krotov_optimize(self._initial(problem, X), problem.conditions, config, self._smoother())
        return self._store(problem, result)


class GrapePulseOptimizer(_PulseOptimizerBase):
    """Gradient-ascent baseline with the same interface."""

    def __init__(self, kind="two_spin_cos3", J=None, omega_q_hz=None, omega_q_range_hz=None, T=None,
                 n_steps=200, penalty=1e-4, max_iter=1000, step_rule="backtracking", smooth=False,
                 cutoff_hz=None, max_amplitude_hz=100.0, random_state=0):
        self.kind = kind
        self.J = J
        self.omega_q_hz = omega_q_hz
        self.omega_q_range_hz = omega_q_range_hz
        self.T = T
        self.n_steps = n_steps
        self.penalty = penalty
        self.max_iter = max_iter
        self.step_rule = step_rule
        self.smooth = smooth
        self.cutoff_hz = cutoff_hz
        self.max_amplitude_hz = max_amplitude_hz
        self.random_state = random_state

    def fit(self, X=None, y=None):
        problem = self._problem()
        config = GrapeConfig(PenaltySpec((self.penalty,)), self.max_iter, self.step_rule)
        result = grape_optimize(self._initial(problem, X), problem.conditions, config, self._smoother())
        return self._store(problem, result)
