"""Monotonically convergent Krotov-type optimizer with optional smoothing.

One outer iteration sweeps forward over the time steps. At step ``j`` the
controls are replaced by the maximizer of the local objective

    f_j(w') = 2 Re Tr[(G(w_j)^dag G(w') - E) A U'_j B_j A^dag]
              - dt sum_k lambda_k (w'_k^2 - w_{k,j}^2)

where ``U'_j`` is propagated under the controls already updated in this
sweep and ``B_j`` is the adjoint of the previous iteration. Since
``f_j(w_j) = 0`` and the quadratic remainder is non-negative for positivized
Hermitian objectives, the functional never decreases.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .exceptions import UnsupportedVariantError
from .propagation import (
    ControlSequence,
    HermitianTransfer,
    PenaltySpec,
    PropagationRecord,
    _step_exponentials,
    control_exponential_gradient,
    final_cost,
    forward_propagate,
    normalized_efficiency,
    propagate,
    running_cost,
    step_factors,
)
from .spinops import SpinSystem, half_step_factor

logger = logging.getLogger(__name__)

__all__ = [
    "Condition",
    "InnerSolverConfig",
    "KrotovConfig",
    "IterationRecord",
    "IterationLog",
    "Evaluation",
    "SweepResult",
    "KrotovResult",
    "evaluate",
    "broadband_functional",
    "local_objective",
    "broadband_local_objective",
    "maximize_local",
    "krotov_sweep",
    "delta_functional_decomposition",
    "krotov_optimize",
]


@dataclass(frozen=True)
class Condition:
    """One member of a (possibly broadband) optimization problem."""

    system: SpinSystem
    objective: object
    condition_id: object = None


def check_conditions(conditions: Sequence[Condition], seq: ControlSequence | None = None) -> tuple:
    conditions = tuple(conditions)
    if not conditions:
        raise ValueError("condition set is empty")
    ref = conditions[0].system.control_ops
    for cond in conditions:
        ops = cond.system.control_ops
        if ops.shape != ref.shape or not np.array_equal(ops, ref):
            raise ValueError("all conditions must share the same control operators")
        if cond.objective.dim != cond.system.dim:
            raise ValueError(f"objective of condition {cond.condition_id!r} does not match system dimension")
    if seq is not None and seq.n_channels != ref.shape[0]:
        raise ValueError(f"sequence has {seq.n_channels} channels, conditions have {ref.shape[0]} controls")
    return conditions


@dataclass(frozen=True)
class InnerSolverConfig:
    method: str = "quasi-newton"
    max_iterations: int = 50
    gradient_tolerance: float = 1e-8

    def __post_init__(self):
        if self.method not in ("quasi-newton", "conjugate-gradient"):
            raise ValueError(f"unknown inner solver {self.method!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass(frozen=True)
class KrotovConfig:
    penalty: PenaltySpec = PenaltySpec((1e-4,))
    tol: float = 1e-8
    max_iterations: int = 500
    inner: InnerSolverConfig = InnerSolverConfig()
    snapshot_iterations: tuple = (0, 5, 20)

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    J: float
    phi: float
    penalty: float
    alpha: float
    wall_time: float
    efficiency: float = float("nan")


@dataclass
class IterationLog:
    records: list = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, item):
        return self.records[item]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def monotonicity_violations(self, rtol: float = 1e-9) -> int:
        J = self.column("J")
        return int(np.sum(J[1:] < J[:-1] - rtol * (1.0 + np.abs(J[:-1]))))


@dataclass(frozen=True)
class Evaluation:
    J: float
    phi: float
    penalty: float
    efficiencies: tuple
    final_propagators: tuple

    @property
    def efficiency(self) -> float:
        return float(np.mean(self.efficiencies))


def evaluate(seq: ControlSequence, conditions: Sequence[Condition], pen: PenaltySpec) -> Evaluation:
    """Positivized functional summed over conditions, minus the running cost."""
    conditions = check_conditions(conditions, seq)
    phis, positivized, effs, finals = [], [], [], []
    for cond in conditions:
        U_N = forward_propagate(seq, cond.system)[-1]
        phi, phi_pos = final_cost(cond.objective, U_N)
        phis.append(phi)
        positivized.append(phi_pos)
        try:
            effs.append(normalized_efficiency(cond.objective, phi))
        except ValueError:
            # penalty-only objectives have no efficiency scale
            effs.append(float("nan"))
        finals.append(U_N)
    penalty = running_cost(seq, pen)
    return Evaluation(
        J=float(sum(positivized) - penalty), phi=float(sum(phis)), penalty=penalty,
        efficiencies=tuple(effs), final_propagators=tuple(finals),
    )


def broadband_functional(seq: ControlSequence, conditions: Sequence[Condition], pen: PenaltySpec) -> float:
    return evaluate(seq, conditions, pen).J


class _LocalProblem:
    """``f_j`` and its gradient.

    The inner solver works in ``x = w * scale`` where ``scale`` is the square
    root of an estimate of the diagonal curvature of ``-f_j``, which makes the
    problem roughly isotropic across channels and penalty weights.
    """

    def __init__(self, previous, trace_factor, control_ops, lambdas, dt, G_previous=None):
        self.previous = np.asarray(previous, dtype=float)
        self.control_ops = control_ops
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.dt = dt
        if G_previous is None:
            G_previous = control_exponential_gradient(self.previous, control_ops, dt, trace_factor)[0]
        self.W = trace_factor @ G_previous.conj().T
        self.offset = 2.0 * np.real(np.trace(trace_factor))
        self.prev_power = np.sum(self.lambdas * self.previous ** 2)
        # diagonal curvature of -f: 2 lambda dt + 2 dt^2 Re Tr(H_k^2 W) to leading order
        sq = np.einsum("kab,kbc->kac", control_ops, control_ops)
        curv = 2.0 * dt * self.lambdas + 2.0 * dt ** 2 * np.abs(np.real(np.einsum("kab,ba->k", sq, self.W)))
        self.scale = np.sqrt(np.where(curv > 0, curv, dt ** 2))

    def value_and_gradient(self, omega):
        omega = np.asarray(omega, dtype=float)
        G, grad = control_exponential_gradient(omega, self.control_ops, self.dt, self.W)
        grad = grad - 2.0 * self.dt * self.lambdas * omega
        if np.array_equal(omega, self.previous):
            # exact zero rather than a round-off difference of two traces
            return 0.0, grad
        value = (2.0 * np.real(np.trace(G @ self.W)) - self.offset
                 - self.dt * (np.sum(self.lambdas * omega ** 2) - self.prev_power))
        return float(value), grad

    def __call__(self, omega):
        return self.value_and_gradient(omega)[0]

    def _negated_scaled(self, x):
        value, grad = self.value_and_gradient(x / self.scale)
        return -value, -grad / self.scale


def _trace_factor(Uprime, B, A):
    return A @ Uprime @ B @ A.conj().T


def local_objective(candidate, previous, Uprime, B, A, control_ops, lambdas, dt, return_gradient=False):
    """Local objective ``f_j`` of one time step (single condition)."""
    problem = _LocalProblem(previous, _trace_factor(Uprime, B, A), control_ops, lambdas, dt)
    value, grad = problem.value_and_gradient(candidate)
    return (value, grad) if return_gradient else value


def broadband_local_objective(candidate, previous, states, control_ops, lambdas, dt, return_gradient=False):
    """``f_j`` with the trace factor summed over ``states = [(U'_j, B_j, A), ...]``."""
    states = list(states)
    if not states:
        raise ValueError("condition set is empty")
    factor = sum(_trace_factor(U, B, A) for U, B, A in states)
    problem = _LocalProblem(previous, factor, control_ops, lambdas, dt)
    value, grad = problem.value_and_gradient(candidate)
    return (value, grad) if return_gradient else value


def maximize_local(problem: _LocalProblem, inner: InnerSolverConfig = InnerSolverConfig()):
    """Maximize ``f_j`` from the previous controls; never returns ``f < 0``."""
    start = problem.previous
    method = "L-BFGS-B" if inner.method == "quasi-newton" else "CG"
    options = {"maxiter": inner.max_iterations, "gtol": inner.gradient_tolerance}
    if method == "L-BFGS-B":
        options["ftol"] = 1e-14
    try:
        res = minimize(problem._negated_scaled, start * problem.scale, jac=True, method=method, options=options)
        candidate = res.x / problem.scale
        value = problem(candidate)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.warning("inner solver failed (%s); keeping previous controls", exc)
        return start.copy(), 0.0
    if not np.isfinite(value) or value <= 0.0 or not np.all(np.isfinite(candidate)):
        return start.copy(), 0.0
    return candidate, value


@dataclass
class SweepResult:
    sequence: ControlSequence
    forward: list  # per condition, (N+1, d, d) propagators under the new controls
    local_gains: np.ndarray  # f_j at the accepted controls


def krotov_sweep(seq: ControlSequence, records: Sequence[PropagationRecord], conditions, config: KrotovConfig) -> SweepResult:
    """Sequential forward pass updating each time step with ``maximize_local``."""
    conditions = check_conditions(conditions, seq)
    if len(records) != len(conditions):
        raise ValueError("one propagation record per condition is required")
    dt, N = seq.dt, seq.n_steps
    control_ops = conditions[0].system.control_ops
    lambdas = config.penalty.as_array(seq.n_channels)
    A = [half_step_factor(c.system.H0, dt) for c in conditions]
    P_old = [step_factors(seq, c.system) for c in conditions]
    G_old = _step_exponentials(seq, conditions[0].system)
    dim = conditions[0].system.dim
    forward = [np.empty((N + 1, dim, dim), dtype=complex) for _ in conditions]
    for Ui in forward:
        Ui[0] = np.eye(dim)
    amps = np.array(seq.amps)
    gains = np.zeros(N)
    for j in range(N):
        factor = sum(_trace_factor(forward[i][j], records[i].B[j], A[i]) for i in range(len(conditions)))
        problem = _LocalProblem(seq.amps[j], factor, control_ops, lambdas, dt, G_previous=G_old[j])
        new, gain = maximize_local(problem, config.inner)
        gains[j] = gain
        if gain > 0.0:
            amps[j] = new
            G = control_exponential_gradient(new, control_ops, dt, factor)[0]
            for i in range(len(conditions)):
                forward[i][j + 1] = (A[i] @ G @ A[i]) @ forward[i][j]
        else:
            for i in range(len(conditions)):
                forward[i][j + 1] = P_old[i][j] @ forward[i][j]
    return SweepResult(seq.with_amps(amps), forward, gains)


def delta_functional_decomposition(omega: ControlSequence, omega_prime: ControlSequence, objective, sys: SpinSystem, pen: PenaltySpec):
    """Direct ``J(w') - J(w)`` and its exact four-term split.

    Returns ``(lhs, terms)`` with ``terms = (kappa Tr(DD^dag), Tr(C D rho0 D^dag),
    sum_j cross traces, penalty difference)`` and ``D = U'_N - U_N``.
    """
    if not isinstance(objective, HermitianTransfer):
        raise UnsupportedVariantError("the decomposition holds for Hermitian transfer objectives only")
    if omega.n_steps != omega_prime.n_steps or omega.dt != omega_prime.dt:
        raise ValueError("both control sequences must share the time grid")
    rec = propagate(omega, sys, objective)
    Uprime = forward_propagate(omega_prime, sys)
    U_N, Up_N = rec.U[-1], Uprime[-1]
    D = Up_N - U_N
    C, rho0 = objective.target, objective.initial
    quad_kappa = objective.kappa * float(np.real(np.vdot(D, D)))
    quad_target = float(np.real(np.trace(C @ D @ rho0 @ D.conj().T)))
    A = half_step_factor(sys.H0, omega.dt)
    G_old = _step_exponentials(omega, sys)
    G_new = _step_exponentials(omega_prime, sys)
    dim = sys.dim
    cross = 0.0
    for j in range(omega.n_steps):
        factor = _trace_factor(Uprime[j], rec.B[j], A)
        cross += 2.0 * np.real(np.trace((G_old[j].conj().T @ G_new[j] - np.eye(dim)) @ factor))
    lam = pen.as_array(omega.n_channels)
    penalty_diff = -omega.dt * float(np.sum(lam * (omega_prime.amps ** 2 - omega.amps ** 2)))
    J_old = final_cost(objective, U_N)[1] - running_cost(omega, pen)
    J_new = final_cost(objective, Up_N)[1] - running_cost(omega_prime, pen)
    return J_new - J_old, (quad_kappa, quad_target, float(cross), penalty_diff)


@dataclass
class KrotovResult:
    sequence: ControlSequence
    log: IterationLog
    records: list
    snapshots: dict
    status: str
    evaluation: Evaluation
    sweep_violations: int = 0


def _propagate_all(seq, conditions):
    return [propagate(seq, c.system, c.objective, c.condition_id) for c in conditions]


def _record(iteration, ev: Evaluation, alpha, t0):
    return IterationRecord(
        iteration=iteration, J=ev.J, phi=ev.phi, penalty=ev.penalty, alpha=alpha,
        wall_time=time.perf_counter() - t0, efficiency=ev.efficiency,
    )


def krotov_optimize(
    initial: ControlSequence,
    conditions: Sequence[Condition],
    config: KrotovConfig = KrotovConfig(),
    smoother=None,
    callback: Callable | None = None,
) -> KrotovResult:
    """Outer loop: sweep, optional smoothing, backward pass, until the gain is <= tol.

    ``smoother`` is a callable ``(J_old, omega_new, evaluator) -> (omega, alpha)``
    such as :func:`nmrkrotov.smoothing.regularized_accept` bound to a
    truncation spec. ``callback(iteration, sequence, evaluation)`` is invoked
    after every accepted iteration.
    """
    conditions = check_conditions(conditions, initial)
    pen = config.penalty
    t0 = time.perf_counter()
    seq = initial
    current = evaluate(seq, conditions, pen)
    records = _propagate_all(seq, conditions)
    log = IterationLog()
    log.append(_record(0, current, float("nan"), t0))
    snapshots = {0: seq} if 0 in config.snapshot_iterations else {}
    status = "max_iterations"
    violations = 0
    cache = {}

    def evaluator(candidate: ControlSequence) -> float:
        ev = evaluate(candidate, conditions, pen)
        cache[candidate.amps.tobytes()] = ev
        return ev.J

    for it in range(1, config.max_iterations + 1):
        sweep = krotov_sweep(seq, records, conditions, config)
        trial = sweep.sequence
        ev = evaluate(trial, conditions, pen)
        if ev.J < current.J - 1e-12 * (1.0 + abs(current.J)):
            # positivization too weak for this objective; damp the update
            violations += 1
            logger.info("sweep %d lowered J by %.3e; backtracking", it, current.J - ev.J)
            accepted = None
            for beta in 0.5 ** np.arange(1, 21):
                cand = seq.with_amps(seq.amps + beta * (trial.amps - seq.amps))
                cev = evaluate(cand, conditions, pen)
                if cev.J >= current.J:
                    accepted = (cand, cev)
                    break
            trial, ev = accepted if accepted else (seq, current)
        alpha = 0.0
        if smoother is not None and trial is not seq:
            cache.clear()
            cache[trial.amps.tobytes()] = ev
            trial, alpha = smoother(current.J, trial, evaluator)
            ev = cache.get(trial.amps.tobytes()) or evaluate(trial, conditions, pen)
        gain = ev.J - current.J
        seq, current = trial, ev
        log.append(_record(it, current, alpha, t0))
        if it in config.snapshot_iterations:
            snapshots[it] = seq
        if callback is not None:
            callback(it, seq, current)
        if gain <= config.tol:
            status = "converged"
            break
        records = _propagate_all(seq, conditions)
    else:
        it = config.max_iterations
    snapshots[log[-1].iteration] = seq
    records = _propagate_all(seq, conditions)
    return KrotovResult(
        sequence=seq, log=log, records=records, snapshots=snapshots,
        status=status, evaluation=current, sweep_violations=violations,
    )
