"""Gradient-ascent (GRAPE) baseline on the same discretization and functional."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .krotov import (
    Condition,
    Evaluation,
    IterationLog,
    IterationRecord,
    check_conditions,
    evaluate,
)
from .propagation import (
    ControlSequence,
    PenaltySpec,
    _step_exponentials,
    backward_propagate,
    control_exponential_gradient,
    forward_propagate,
    terminal_adjoint,
)
from .spinops import half_step_factor

logger = logging.getLogger(__name__)

__all__ = ["GrapeConfig", "GrapeResult", "grape_gradient", "grape_optimize"]


@dataclass(frozen=True)
class GrapeConfig:
    penalty: PenaltySpec = PenaltySpec((1e-4,))
    max_iterations: int = 1000
    step_rule: str = "backtracking"
    step_size: float = 2 * np.pi * 10.0  # rad/s for the largest gradient component
    gradient_tolerance: float = 1e-10
    armijo: float = 1e-4
    max_backtracks: int = 30
    tol: float = 0.0

    def __post_init__(self):
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not self.step_size > 0 or not self.gradient_tolerance > 0:
            raise ValueError("step parameters must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def grape_gradient(seq: ControlSequence, conditions: Sequence[Condition], pen: PenaltySpec) -> np.ndarray:
    """Exact ``dJ/dw[j, k]`` through the derivative of each Strang step."""
    conditions = check_conditions(conditions, seq)
    dt = seq.dt
    control_ops = conditions[0].system.control_ops
    lam = pen.as_array(seq.n_channels)
    grad = -2.0 * dt * lam[None, :] * seq.amps
    for cond in conditions:
        A = half_step_factor(cond.system.H0, dt)
        U = forward_propagate(seq, cond.system)
        B = backward_propagate(terminal_adjoint(cond.objective, U[-1]), seq, cond.system)
        for j in range(seq.n_steps):
            # d/dw 2 Re Tr(B_{j+1} A G_j A U_j) = 2 Re Tr(dG_j (A U_j B_{j+1} A))
            W = A @ U[j] @ B[j + 1] @ A
            grad[j] += control_exponential_gradient(seq.amps[j], control_ops, dt, W)[1]
    return grad


@dataclass
class GrapeResult:
    sequence: ControlSequence
    log: IterationLog
    status: str
    evaluation: Evaluation


def grape_optimize(
    initial: ControlSequence,
    conditions: Sequence[Condition],
    config: GrapeConfig = GrapeConfig(),
    smoother=None,
    callback: Callable | None = None,
) -> GrapeResult:
    """Steepest ascent with a backtracking sufficient-increase line search.

    The trial step is ``s * G / max|G|``; ``s`` doubles after an accepted step
    and halves on each rejection. With ``step_rule='fixed'`` a step is taken
    only if it does not lower ``J``. ``smoother`` has the same contract as in
    :func:`nmrkrotov.krotov.krotov_optimize`.
    """
    conditions = check_conditions(conditions, initial)
    pen = config.penalty
    t0 = time.perf_counter()
    seq = initial
    current = evaluate(seq, conditions, pen)
    log = IterationLog()
    log.append(IterationRecord(0, current.J, current.phi, current.penalty, float("nan"),
                               time.perf_counter() - t0, current.efficiency))
    step = config.step_size
    status = "max_iterations"
    for it in range(1, config.max_iterations + 1):
        G = grape_gradient(seq, conditions, pen)
        gmax = np.abs(G).max()
        if gmax < config.gradient_tolerance:
            status = "converged"
            break
        direction = G / gmax
        slope = float(np.sum(G * direction))
        accepted = None
        for _ in range(config.max_backtracks if config.step_rule == "backtracking" else 1):
            trial = seq.with_amps(seq.amps + step * direction)
            ev = evaluate(trial, conditions, pen)
            if ev.J >= current.J + config.armijo * step * slope * (config.step_rule == "backtracking"):
                accepted = (trial, ev)
                break
            step *= 0.5
        if accepted is None:
            status = "stalled"
            break
        trial, ev = accepted
        alpha = 0.0
        if smoother is not None:
            cache = {trial.amps.tobytes(): ev}

            def evaluator(candidate):
                e = evaluate(candidate, conditions, pen)
                cache[candidate.amps.tobytes()] = e
                return e.J

            trial, alpha = smoother(current.J, trial, evaluator)
            ev = cache[trial.amps.tobytes()]
        gain = ev.J - current.J
        seq, current = trial, ev
        log.append(IterationRecord(it, current.J, current.phi, current.penalty, alpha,
                                   time.perf_counter() - t0, current.efficiency))
        if callback is not None:
            callback(it, seq, current)
        if config.step_rule == "backtracking":
            step *= 2.0
        if gain <= config.tol and config.tol > 0:
            status = "converged"
            break
    return GrapeResult(seq, log, status, current)
