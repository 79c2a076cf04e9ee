"""Discrete propagation, final costs, running cost and the total functional.

Adjoint convention: for a final cost ``F(U)`` the terminal matrix ``B_N`` is
defined by ``dF = 2 Re Tr(B_N dU)``. With this convention the backward
recursion ``B_j = B_{j+1} A G_j A`` carries ``B_N`` to earlier times and the
linear part of any change in ``F`` splits into per-step traces
``2 Re Tr(B_{j+1} (P'_j - P_j) U'_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .spinops import SpinSystem, expm_hermitian, half_step_factor

__all__ = [
    "ControlSequence",
    "PenaltySpec",
    "HermitianTransfer",
    "NonHermitianTransfer",
    "PropagatorSynthesis",
    "Objective",
    "PropagationRecord",
    "FunctionalValue",
    "forward_propagate",
    "backward_propagate",
    "propagate",
    "terminal_adjoint",
    "final_cost",
    "running_cost",
    "total_functional",
    "normalized_efficiency",
    "unitary_bound",
    "control_exponential_gradient",
]


@dataclass(frozen=True)
class ControlSequence:
    """Piecewise-constant controls: ``amps[j, k]`` in rad/s on step ``j``."""

    amps: np.ndarray
    dt: float
    labels: tuple = ()

    def __post_init__(self):
        amps = np.array(self.amps, dtype=float)
        if amps.ndim == 1:
            amps = amps[:, None]
        if amps.ndim != 2 or amps.shape[0] < 1 or amps.shape[1] < 1:
            raise ValueError(f"amplitudes must be an N x K grid with N, K >= 1, got {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        dt = float(self.dt)
        if not (dt > 0 and np.isfinite(dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        labels = tuple(self.labels) or tuple(f"c{k}" for k in range(amps.shape[1]))
        if len(labels) != amps.shape[1]:
            raise ValueError(f"{len(labels)} labels for {amps.shape[1]} channels")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "labels", labels)

    @property
    def n_steps(self) -> int:
        return self.amps.shape[0]

    @property
    def n_channels(self) -> int:
        return self.amps.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def with_amps(self, amps) -> "ControlSequence":
        return ControlSequence(amps, self.dt, self.labels)

    @classmethod
    def zeros(cls, n_steps: int, dt: float, labels: Sequence[str]) -> "ControlSequence":
        return cls(np.zeros((n_steps, len(labels))), dt, tuple(labels))

    @classmethod
    def random(cls, n_steps, dt, labels, max_amplitude_hz=100.0, seed=None, knots=None) -> "ControlSequence":
        """Seeded random guess whose largest amplitude is ``max_amplitude_hz``.

        ``knots=None`` draws every step independently from the uniform
        distribution. With ``knots=m`` each channel interpolates linearly
        between ``m`` uniform draws spread over the sequence and is rescaled so
        the peak magnitude over all channels equals the bound.
        """
        rng = np.random.default_rng(seed)
        bound = 2 * np.pi * max_amplitude_hz
        K = len(labels)
        if knots is None:
            return cls(rng.uniform(-bound, bound, size=(n_steps, K)), dt, tuple(labels))
        if int(knots) < 2:
            raise ValueError("knots must be >= 2")
        x = np.linspace(0.0, 1.0, int(knots))
        values = rng.uniform(-1.0, 1.0, size=(int(knots), K))
        t = (np.arange(n_steps) + 0.5) / n_steps
        amps = np.stack([np.interp(t, x, values[:, k]) for k in range(K)], axis=1)
        peak = np.abs(amps).max()
        if peak > 0:
            amps *= bound / peak
        return cls(amps, dt, tuple(labels))


@dataclass(frozen=True)
class PenaltySpec:
    """Per-channel running-cost weights in s^2 rad^-2."""

    lambdas: tuple

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if lam.ndim != 1 or np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError(f"penalties must be finite and non-negative, got {self.lambdas!r}")
        object.__setattr__(self, "lambdas", tuple(lam.tolist()))

    @classmethod
    def uniform(cls, value: float, n_channels: int) -> "PenaltySpec":
        return cls((value,) * n_channels)

    def as_array(self, n_channels: int) -> np.ndarray:
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size == 1:
            return np.full(n_channels, lam[0])
        if lam.size != n_channels:
            raise ValueError(f"{lam.size} penalties for {n_channels} channels")
        return lam


def _as_matrix(name, op):
    op = np.array(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {op.shape}")
    op.setflags(write=False)
    return op


@dataclass(frozen=True)
class HermitianTransfer:
    """``phi = Tr(C U rho0 U^dag)`` between Hermitian operators.

    ``kappa=None`` picks ``max(0, -min_ij c_i r_j)`` over the eigenvalues of
    ``C`` and ``rho0``. That is the smallest shift for which
    ``kappa Tr(XX^dag) + Tr(C X rho0 X^dag)`` is non-negative for every ``X``,
    so every Krotov sweep stays monotone even when ``C`` or ``rho0`` is
    indefinite. It is zero when both are semi-definite with the same sign.
    """

    target: np.ndarray
    initial: np.ndarray
    kappa: float | None = None

    def __post_init__(self):
        c = _as_matrix("target", self.target)
        r = _as_matrix("initial", self.initial)
        if c.shape != r.shape:
            raise ValueError("target and initial state differ in dimension")
        for name, op in (("target", c), ("initial", r)):
            if not np.allclose(op, op.conj().T, atol=1e-12 * max(1.0, np.abs(op).max())):
                raise ValueError(f"{name} must be Hermitian for a Hermitian transfer")
        if self.kappa is None:
            products = np.outer(np.linalg.eigvalsh(c), np.linalg.eigvalsh(r))
            kappa = max(0.0, -float(products.min()))
        else:
            kappa = float(self.kappa)
        if kappa < 0:
            raise ValueError("kappa must be non-negative")
        object.__setattr__(self, "target", c)
        object.__setattr__(self, "initial", r)
        object.__setattr__(self, "kappa", kappa)

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    def phi(self, U):
        return float(np.real(np.trace(self.target @ U @ self.initial @ U.conj().T)))

    def phi_gradient(self, U):
        return self.initial @ U.conj().T @ self.target

    def normalization(self):
        return unitary_bound(self.target, self.initial)


@dataclass(frozen=True)
class NonHermitianTransfer:
    """``phi = |Tr(C^dag U rho0 U^dag)|^2`` for coherence transfer."""

    target: np.ndarray
    initial: np.ndarray
    kappa: float = 1.0

    def __post_init__(self):
        c = _as_matrix("target", self.target)
        r = _as_matrix("initial", self.initial)
        if c.shape != r.shape:
            raise ValueError("target and initial state differ in dimension")
        if self.kappa is None or float(self.kappa) < 0:
            raise ValueError("kappa must be non-negative")
        object.__setattr__(self, "target", c)
        object.__setattr__(self, "initial", r)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    def overlap(self, U):
        return np.trace(self.target.conj().T @ U @ self.initial @ U.conj().T)

    def phi(self, U):
        return float(abs(self.overlap(U)) ** 2)

    def phi_gradient(self, U):
        z = self.overlap(U)
        Ud = U.conj().T
        return (np.conj(z) * self.initial @ Ud @ self.target.conj().T
                + z * self.initial.conj().T @ Ud @ self.target)

    def normalization(self):
        return float(np.real(np.trace(self.target @ self.target.conj().T)))


@dataclass(frozen=True)
class PropagatorSynthesis:
    """``Re Tr(U U_D^dag)`` or, with ``form='squared-modulus'``, ``|Tr(U_D^dag U)|^2``."""

    target_unitary: np.ndarray
    form: str = "real-trace"
    kappa: float = 0.0

    def __post_init__(self):
        ud = _as_matrix("target_unitary", self.target_unitary)
        if self.form not in ("real-trace", "squared-modulus"):
            raise ValueError(f"unknown synthesis form {self.form!r}")
        if float(self.kappa) < 0:
            raise ValueError("kappa must be non-negative")
        object.__setattr__(self, "target_unitary", ud)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dim(self) -> int:
        return self.target_unitary.shape[0]

    def phi(self, U):
        w = np.trace(self.target_unitary.conj().T @ U)
        if self.form == "real-trace":
            return float(np.real(w))
        return float(abs(w) ** 2)

    def phi_gradient(self, U):
        udag = self.target_unitary.conj().T
        if self.form == "real-trace":
            return 0.5 * udag
        return np.conj(np.trace(udag @ U)) * udag

    def normalization(self):
        d = self.dim
        return float(d if self.form == "real-trace" else d * d)


Objective = Union[HermitianTransfer, NonHermitianTransfer, PropagatorSynthesis]


def unitary_bound(C, rho0) -> float:
    """Largest ``Tr(C U rho0 U^dag)`` over unitaries: sorted eigenvalue pairing."""
    c = np.sort(np.linalg.eigvalsh(np.asarray(C)))[::-1]
    r = np.sort(np.linalg.eigvalsh(np.asarray(rho0)))[::-1]
    return float(np.dot(c, r))


@dataclass
class PropagationRecord:
    """Forward propagators ``U_0..U_N`` and adjoints ``B_0..B_N`` of one condition."""

    U: np.ndarray
    B: np.ndarray | None = None
    condition_id: object = None

    @property
    def U_final(self) -> np.ndarray:
        return self.U[-1]


def _check_channels(seq: ControlSequence, sys: SpinSystem) -> None:
    if seq.n_channels != sys.n_controls:
        raise ValueError(
            f"sequence has {seq.n_channels} channels, system has {sys.n_controls} controls"
        )


def _step_exponentials(seq: ControlSequence, sys: SpinSystem) -> np.ndarray:
    generators = np.tensordot(seq.amps, sys.control_ops, axes=1)
    evals, evecs = np.linalg.eigh(generators)
    phases = np.exp(-1j * seq.dt * evals)
    return np.einsum("nab,nb,ncb->nac", evecs, phases, evecs.conj())


def step_factors(seq: ControlSequence, sys: SpinSystem) -> np.ndarray:
    """All Strang factors ``P_j = A G_j A`` stacked as ``(N, d, d)``."""
    _check_channels(seq, sys)
    A = half_step_factor(sys.H0, seq.dt)
    return A @ _step_exponentials(seq, sys) @ A


def forward_propagate(seq: ControlSequence, sys: SpinSystem) -> np.ndarray:
    """``U_{j+1} = P_j U_j`` from ``U_0 = E``; returns ``(N+1, d, d)``."""
    P = step_factors(seq, sys)
    U = np.empty((seq.n_steps + 1, sys.dim, sys.dim), dtype=complex)
    U[0] = np.eye(sys.dim)
    for j in range(seq.n_steps):
        U[j + 1] = P[j] @ U[j]
    return U


def backward_propagate(B_N: np.ndarray, seq: ControlSequence, sys: SpinSystem) -> np.ndarray:
    """``B_j = B_{j+1} P_j`` down from ``B_N``; returns ``(N+1, d, d)``."""
    P = step_factors(seq, sys)
    B = np.empty((seq.n_steps + 1, sys.dim, sys.dim), dtype=complex)
    B[-1] = B_N
    for j in range(seq.n_steps - 1, -1, -1):
        B[j] = B[j + 1] @ P[j]
    return B


def terminal_adjoint(obj: Objective, U_N: np.ndarray) -> np.ndarray:
    """``B_N`` such that ``d phi_tilde = 2 Re Tr(B_N dU_N)``."""
    if not hasattr(obj, "phi_gradient"):
        raise ValueError(f"unsupported objective {type(obj).__name__}")
    return obj.kappa * U_N.conj().T + obj.phi_gradient(U_N)


def propagate(seq: ControlSequence, sys: SpinSystem, obj: Objective, condition_id=None) -> PropagationRecord:
    """Forward pass followed by the backward pass from ``terminal_adjoint``."""
    U = forward_propagate(seq, sys)
    B = backward_propagate(terminal_adjoint(obj, U[-1]), seq, sys)
    return PropagationRecord(U=U, B=B, condition_id=condition_id)


def final_cost(obj: Objective, U_N: np.ndarray) -> tuple[float, float]:
    """``(phi, phi + kappa Tr(U U^dag))``."""
    phi = obj.phi(U_N)
    return phi, phi + obj.kappa * float(np.real(np.vdot(U_N, U_N)))


def running_cost(seq: ControlSequence, pen: PenaltySpec) -> float:
    lam = pen.as_array(seq.n_channels)
    return float(seq.dt * np.sum(lam * np.sum(seq.amps ** 2, axis=0)))


@dataclass(frozen=True)
class FunctionalValue:
    J: float
    phi: float
    penalty: float
    phi_positivized: float = field(default=float("nan"))


def total_functional(obj: Objective, seq: ControlSequence, sys: SpinSystem, pen: PenaltySpec) -> FunctionalValue:
    U_N = forward_propagate(seq, sys)[-1]
    phi, phi_pos = final_cost(obj, U_N)
    penalty = running_cost(seq, pen)
    return FunctionalValue(J=phi_pos - penalty, phi=phi, penalty=penalty, phi_positivized=phi_pos)


def normalized_efficiency(obj: Objective, phi: float) -> float:
    """``phi`` over the best value reachable by any unitary for this objective."""
    norm = obj.normalization()
    if not abs(norm) > 1e-300:
        raise ValueError("objective has zero normalization")
    return phi / norm


def control_exponential_gradient(amplitudes, control_ops, dt, W):
    """``G = exp(-i dt sum_k w_k H_k)`` and ``g_k = 2 Re Tr(dG/dw_k W)``.

    The derivative is the exact Frechet derivative of the exponential on the
    summed generator, evaluated in its eigenbasis.
    """
    K, d = control_ops.shape[0], control_ops.shape[1]
    flat = control_ops.reshape(K, d * d)
    generator = (np.asarray(amplitudes, dtype=float) @ flat).reshape(d, d)
    evals, V = np.linalg.eigh(generator)
    Vh = V.conj().T
    phases = np.exp(-1j * dt * evals)
    G = (V * phases) @ Vh
    # divided differences of exp(-i dt e): phase_b * exp(i th/2) * sinc(th/2)
    half = -0.5 * dt * (evals[:, None] - evals[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(half == 0.0, 1.0, np.sin(half) / half)
    gamma = phases[None, :] * np.exp(1j * half) * sinc
    # g_k = 2 Re sum_ab gamma_ab (V^dag H_k V)_ab (V^dag W V)_ba = 2 Re Tr(H_k Y)
    Y = V @ (gamma.T * (Vh @ W @ V)) @ Vh
    grad = 2.0 * dt * np.imag(flat @ Y.T.reshape(d * d))
    return G, grad
