"""Spin operators, model Hamiltonians and split-step propagator factors.

All generators are in rad/s. Basis states are ordered by descending magnetic
quantum number, so ``Iz`` is ``diag(s, s-1, ..., -s)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import numpy as np

__all__ = [
    "SpinOperatorSet",
    "SpinSystem",
    "angular_momentum_operators",
    "embed",
    "j_coupling_hamiltonian",
    "quadrupolar_hamiltonian",
    "single_transition_operator",
    "expm_hermitian",
    "half_step_factor",
    "control_exponential",
    "step_propagator",
]


def _multiplicity(s) -> int:
    two_s = Fraction(s).limit_denominator(16) * 2
    if two_s.denominator != 1 or two_s <= 0 or abs(float(two_s) - 2 * float(s)) > 1e-12:
        raise ValueError(f"spin quantum number must be a positive half-integer, got {s!r}")
    return int(two_s) + 1


@dataclass(frozen=True)
class SpinOperatorSet:
    s: float
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray
    Iplus: np.ndarray
    Iminus: np.ndarray
    identity: np.ndarray

    @property
    def dim(self) -> int:
        return self.Iz.shape[0]


def angular_momentum_operators(s) -> SpinOperatorSet:
    """Cartesian and ladder operators for a single spin ``s``."""
    d = _multiplicity(s)
    s = (d - 1) / 2
    m = s - np.arange(d)
    # <m+1|I+|m> = sqrt(s(s+1) - m(m+1)); m+1 sits one row above m
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    iplus = np.diag(ladder, k=1).astype(complex)
    iminus = iplus.conj().T
    ix = 0.5 * (iplus + iminus)
    iy = -0.5j * (iplus - iminus)
    iz = np.diag(m).astype(complex)
    return SpinOperatorSet(
        s=s, Ix=ix, Iy=iy, Iz=iz, Iplus=iplus, Iminus=iminus,
        identity=np.eye(d, dtype=complex),
    )


def embed(op: np.ndarray, position: int, spins: Sequence) -> np.ndarray:
    """Kronecker-embed a single-spin operator at ``position`` of ``spins``."""
    dims = [_multiplicity(s) for s in spins]
    if not 0 <= position < len(dims):
        raise ValueError(f"position {position} out of range for {len(dims)} spins")
    op = np.asarray(op, dtype=complex)
    if op.shape != (dims[position], dims[position]):
        raise ValueError(
            f"operator of shape {op.shape} does not match spin {spins[position]} "
            f"(multiplicity {dims[position]})"
        )
    factors = [np.eye(d, dtype=complex) for d in dims]
    factors[position] = op
    return reduce(np.kron, factors)


def j_coupling_hamiltonian(J: float) -> np.ndarray:
    """Weak scalar coupling ``pi J 2 IzSz`` of two spin-1/2 nuclei, J in Hz."""
    spins = (0.5, 0.5)
    iz = angular_momentum_operators(0.5).Iz
    return np.pi * J * 2.0 * embed(iz, 0, spins) @ embed(iz, 1, spins)


def quadrupolar_hamiltonian(omega_q: float, s=1.5) -> np.ndarray:
    """First-order secular quadrupolar term ``(omega_q/2)(3Iz^2 - s(s+1))``."""
    ops = angular_momentum_operators(s)
    if ops.dim < 3:
        raise ValueError("quadrupolar interaction vanishes for spin 1/2")
    s = ops.s
    return 0.5 * omega_q * (3.0 * ops.Iz @ ops.Iz - s * (s + 1) * ops.identity)


def single_transition_operator(s, m_upper: float, axis: str = "x") -> np.ndarray:
    """Fictitious spin-1/2 operator on the levels ``m_upper`` and ``m_upper - 1``.

    Off-diagonal elements are 1/2, so the x and y operators have eigenvalues
    +-1/2 on the two-level subspace.
    """
    d = _multiplicity(s)
    s = (d - 1) / 2
    a = s - m_upper
    if abs(a - round(a)) > 1e-9 or not 0 <= round(a) < d - 1:
        raise ValueError(f"no transition from m={m_upper} in spin {s}")
    a = int(round(a))
    out = np.zeros((d, d), dtype=complex)
    if axis == "x":
        out[a, a + 1] = out[a + 1, a] = 0.5
    elif axis == "y":
        out[a, a + 1] = -0.5j
        out[a + 1, a] = 0.5j
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    return out


def _check_hermitian(name: str, op: np.ndarray, atol: float = 1e-9) -> None:
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {op.shape}")
    if not np.allclose(op, op.conj().T, atol=atol * max(1.0, np.abs(op).max(initial=0.0))):
        raise ValueError(f"{name} must be Hermitian")


@dataclass(frozen=True)
class SpinSystem:
    """Internal Hamiltonian plus labelled control operators, all in rad/s."""

    spins: tuple
    H0: np.ndarray
    controls: tuple  # ((label, H_k), ...)
    control_ops: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dim = int(np.prod([_multiplicity(s) for s in self.spins]))
        h0 = np.array(self.H0, dtype=complex)
        if h0.shape != (dim, dim):
            raise ValueError(f"H0 has shape {h0.shape}, expected {(dim, dim)}")
        _check_hermitian("H0", h0)
        if not self.controls:
            raise ValueError("at least one control operator is required")
        controls = []
        for label, op in self.controls:
            op = np.array(op, dtype=complex)
            if op.shape != (dim, dim):
                raise ValueError(f"control {label!r} has shape {op.shape}, expected {(dim, dim)}")
            _check_hermitian(f"control {label!r}", op)
            op.setflags(write=False)
            controls.append((str(label), op))
        h0.setflags(write=False)
        stacked = np.stack([op for _, op in controls])
        stacked.setflags(write=False)
        object.__setattr__(self, "spins", tuple(self.spins))
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "controls", tuple(controls))
        object.__setattr__(self, "control_ops", stacked)

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def labels(self) -> tuple:
        return tuple(label for label, _ in self.controls)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def with_H0(self, H0: np.ndarray) -> "SpinSystem":
        return SpinSystem(self.spins, H0, self.controls)


def expm_hermitian(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i t H)`` for Hermitian ``H`` via eigendecomposition."""
    evals, evecs = np.linalg.eigh(H)
    return (evecs * np.exp(-1j * t * evals)) @ evecs.conj().T


def half_step_factor(H0: np.ndarray, dt: float) -> np.ndarray:
    """Free-evolution half step ``exp(-0.5 i dt H0)``."""
    return expm_hermitian(H0, 0.5 * dt)


def control_exponential(amplitudes, control_ops: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i dt sum_k w_k H_k)`` on the summed generator."""
    generator = np.tensordot(np.asarray(amplitudes, dtype=float), control_ops, axes=1)
    return expm_hermitian(generator, dt)


def step_propagator(A: np.ndarray, amplitudes, control_ops: np.ndarray, dt: float) -> np.ndarray:
    """Strang step ``A exp(-i dt sum_k w_k H_k) A``."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    control_ops = np.asarray(control_ops)
    if amplitudes.shape != (control_ops.shape[0],):
        raise ValueError(
            f"got {amplitudes.shape[0] if amplitudes.ndim else 0} amplitudes "
            f"for {control_ops.shape[0]} control operators"
        )
    return A @ control_exponential(amplitudes, control_ops, dt) @ A
