"""Ready-made optimization problems and spectral read-outs.

Kinds:

* ``two_spin_cos3``: S+ -> I-S(alpha) transfer in a J-coupled I-S pair, four
  controls (Ix, Iy, Sx, Sy), T = 1/J.
* ``na23_central`` / ``na23_satellite``: spin-3/2 with a residual quadrupolar
  splitting, Iz -> x coherence on the central or the two satellite
  transitions, controls (Ix, Iy), T = 2.25/f_Q with f_Q = 3 omega_Q / 2 pi.
* ``na23_broadband``: the central-transition problem on a grid of quadrupolar
  couplings that share one pulse sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .krotov import Condition, check_conditions
from .propagation import (
    ControlSequence,
    HermitianTransfer,
    NonHermitianTransfer,
    forward_propagate,
    normalized_efficiency,
    unitary_bound,
)
from .spinops import (
    SpinSystem,
    angular_momentum_operators,
    embed,
    expm_hermitian,
    j_coupling_hamiltonian,
    quadrupolar_hamiltonian,
    single_transition_operator,
)

__all__ = [
    "KINDS",
    "ExperimentSpec",
    "Problem",
    "Spectrum",
    "build_experiment",
    "two_spin_system",
    "sodium_system",
    "hard_pulse_response",
    "hard_pulse_sequence",
    "simulate_spectrum",
    "line_integrals",
    "phased_line_integrals",
    "transition_coherence",
    "transition_efficiency",
    "excitation_profile",
    "enhancement_vs_hard_pulse",
]

KINDS = ("two_spin_cos3", "na23_central", "na23_satellite", "na23_broadband")


@dataclass(frozen=True)
class ExperimentSpec:
    """Physical parameters; ``None`` fields take the defaults of ``kind``.

    ``J`` is in Hz, ``omega_q_hz`` is the quadrupolar coupling over 2 pi and
    ``omega_q_range_hz`` is the broadband grid.
    """

    kind: str
    J: float | None = None
    omega_q_hz: float | None = None
    omega_q_range_hz: tuple | None = None
    T: float | None = None
    N: int = 200
    kappa: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if self.T is not None and not self.T > 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "N", int(self.N))
        if self.kind == "two_spin_cos3":
            if self.omega_q_hz is not None or self.omega_q_range_hz is not None:
                raise ValueError("quadrupolar parameters do not apply to two_spin_cos3")
            J = 140.0 if self.J is None else float(self.J)
            if not J > 0:
                raise ValueError("J must be positive")
            object.__setattr__(self, "J", J)
        else:
            if self.J is not None:
                raise ValueError(f"J does not apply to {self.kind}")
            wq = 60.0 if self.omega_q_hz is None else float(self.omega_q_hz)
            if not wq > 0:
                raise ValueError("omega_q_hz must be positive")
            object.__setattr__(self, "omega_q_hz", wq)
            if self.kind == "na23_broadband":
                grid = self.omega_q_range_hz or (40.0, 50.0, 60.0, 70.0, 80.0)
                grid = tuple(float(x) for x in grid)
                if not grid or min(grid) < 0:
                    raise ValueError("omega_q_range_hz must be a non-empty list of couplings")
                object.__setattr__(self, "omega_q_range_hz", grid)
            elif self.omega_q_range_hz is not None:
                raise ValueError(f"omega_q_range_hz only applies to na23_broadband")

    @property
    def duration(self) -> float:
        if self.T is not None:
            return float(self.T)
        if self.kind == "two_spin_cos3":
            return 1.0 / self.J
        return 2.25 / (3.0 * self.omega_q_hz)

    @property
    def dt(self) -> float:
        return self.duration / self.N


@dataclass(frozen=True)
class Problem:
    spec: ExperimentSpec
    conditions: tuple
    labels: tuple
    channel_pairs: tuple

    @property
    def dt(self) -> float:
        return self.spec.dt

    @property
    def N(self) -> int:
        return self.spec.N

    def zeros(self) -> ControlSequence:
        return ControlSequence.zeros(self.N, self.dt, self.labels)

    def random_guess(self, seed=None, max_amplitude_hz=100.0, knots=5) -> ControlSequence:
        return ControlSequence.random(self.N, self.dt, self.labels, max_amplitude_hz, seed, knots)


def two_spin_system(J: float = 140.0) -> SpinSystem:
    spins = (0.5, 0.5)
    o = angular_momentum_operators(0.5)
    controls = (
        ("Ix", embed(o.Ix, 0, spins)), ("Iy", embed(o.Iy, 0, spins)),
        ("Sx", embed(o.Ix, 1, spins)), ("Sy", embed(o.Iy, 1, spins)),
    )
    return SpinSystem(spins, j_coupling_hamiltonian(J), controls)


def sodium_system(omega_q_hz: float = 60.0) -> SpinSystem:
    o = angular_momentum_operators(1.5)
    H0 = quadrupolar_hamiltonian(2 * np.pi * omega_q_hz, 1.5)
    return SpinSystem((1.5,), H0, (("Ix", o.Ix), ("Iy", o.Iy)))


def _central_target():
    return single_transition_operator(1.5, 0.5, "x")


def _satellite_target():
    return single_transition_operator(1.5, 1.5, "x") + single_transition_operator(1.5, -0.5, "x")


def build_experiment(spec: ExperimentSpec) -> Problem:
    if spec.kind == "two_spin_cos3":
        sys = two_spin_system(spec.J)
        spins = sys.spins
        o = angular_momentum_operators(0.5)
        rho0 = embed(o.Iplus, 1, spins)
        s_alpha = 0.5 * o.identity + o.Iz
        target = embed(o.Iminus, 0, spins) @ embed(s_alpha, 1, spins)
        kappa = 1.0 if spec.kappa is None else spec.kappa
        conds = (Condition(sys, NonHermitianTransfer(target, rho0, kappa), "J=%g" % spec.J),)
        return Problem(spec, conds, sys.labels, ((0, 1), (2, 3)))
    o = angular_momentum_operators(1.5)
    target = _satellite_target() if spec.kind == "na23_satellite" else _central_target()
    objective = HermitianTransfer(target, o.Iz, spec.kappa)
    grid = spec.omega_q_range_hz if spec.kind == "na23_broadband" else (spec.omega_q_hz,)
    conds = tuple(Condition(sodium_system(wq), objective, wq) for wq in grid)
    return Problem(spec, conds, ("Ix", "Iy"), ((0, 1),))


def hard_pulse_response(rho0: np.ndarray, Ix: np.ndarray, flip: float = np.pi / 2) -> np.ndarray:
    """Ideal (infinitely strong) x pulse of angle ``flip`` applied to ``rho0``."""
    R = expm_hermitian(Ix, flip)
    return R @ rho0 @ R.conj().T


def hard_pulse_sequence(problem: Problem, flip: float = np.pi / 2, n_steps: int = 1) -> ControlSequence:
    """The hard x pulse as a short, very strong rectangular control sequence."""
    dt = problem.dt
    amps = np.zeros((problem.N, len(problem.labels)))
    amps[:n_steps, 0] = flip / (n_steps * dt)
    return ControlSequence(amps, dt, problem.labels)


@dataclass(frozen=True)
class Spectrum:
    freq_axis: np.ndarray
    intensity: np.ndarray
    dwell: float
    points: int
    broadening_hz: float


def simulate_spectrum(rho: np.ndarray, sys: SpinSystem, dwell: float = 1e-3, points: int = 1024,
                      broadening_hz: float = 2.0, detect: np.ndarray | None = None,
                      phase: float = 0.0) -> Spectrum:
    """Real part of the spectrum of the FID ``Tr(I+ rho(t))`` under free evolution.

    ``I+`` is the total raising operator of ``sys`` unless ``detect`` is given.
    ``phase`` (rad) is a zero-order phase correction applied to the FID; x
    coherence is in absorption at ``phase=0`` and the -y state left by an x
    hard pulse at ``phase=pi/2``. The first FID point is halved so that line
    integrals do not depend on the sampling grid.
    """
    if points < 2 or points & (points - 1):
        raise ValueError("points must be a power of two")
    evals, V = np.linalg.eigh(sys.H0)
    span_hz = (evals.max() - evals.min()) / (2 * np.pi)
    if 0.5 / dwell < span_hz:
        raise ValueError(f"dwell {dwell} s aliases transitions up to {span_hz:.1f} Hz")
    if detect is None:
        detect = sum(embed(angular_momentum_operators(s).Iplus, i, sys.spins) for i, s in enumerate(sys.spins))
    # eigenbasis: rho_ab(t) = rho_ab exp(-i (E_a - E_b) t)
    r = V.conj().T @ rho @ V
    Dt = V.conj().T @ detect @ V
    amp = (Dt.T * r).ravel()
    omega = (evals[:, None] - evals[None, :]).ravel()
    keep = np.abs(amp) > 1e-14
    t = np.arange(points) * dwell
    fid = (amp[keep][None, :] * np.exp(-1j * np.outer(t, omega[keep]))).sum(axis=1)
    fid = fid * np.exp(-np.pi * broadening_hz * t + 1j * phase)
    fid[0] *= 0.5
    spec = np.fft.fftshift(np.fft.fft(fid)) * dwell
    freqs = np.fft.fftshift(np.fft.fftfreq(points, dwell))
    return Spectrum(freqs, spec.real.copy(), dwell, points, broadening_hz)


def line_integrals(spectrum: Spectrum, centers, half_width: float) -> np.ndarray:
    """Integrated intensity within ``+-half_width`` Hz of each center."""
    df = spectrum.freq_axis[1] - spectrum.freq_axis[0]
    out = []
    for c in centers:
        mask = np.abs(spectrum.freq_axis - c) <= half_width
        out.append(spectrum.intensity[mask].sum() * df)
    return np.array(out)


def phased_line_integrals(rho: np.ndarray, sys: SpinSystem, centers, half_width: float,
                          reference: int = 0, **spectrum_kwargs):
    """Line integrals after a zero-order phase that puts line ``reference`` in absorption.

    Returns ``(integrals, phase)``. A single best phase per line would pick up
    the dispersive tail of a strong neighbour; a common phase set on one line
    is what a spectroscopist would do.
    """
    spectrum_kwargs.pop("phase", None)
    re = line_integrals(simulate_spectrum(rho, sys, phase=0.0, **spectrum_kwargs), centers, half_width)
    im = line_integrals(simulate_spectrum(rho, sys, phase=np.pi / 2, **spectrum_kwargs), centers, half_width)
    # the integrals are Re(exp(i phase) Z) with Z = re - i im
    z = re - 1j * im
    phase = float(-np.angle(z[reference]))
    return np.real(np.exp(1j * phase) * z), phase


def transition_coherence(rho: np.ndarray, m_upper: float, s=1.5) -> complex:
    """Element ``<m_upper| rho |m_upper - 1>`` (levels ordered m = s..-s)."""
    a = int(round(s - m_upper))
    return complex(rho[a, a + 1])


def transition_efficiency(rho: np.ndarray, which: str = "central", phase_sensitive: bool = True) -> float:
    """Single-transition read-out of a spin-3/2 density matrix.

    Phase-sensitive: ``Tr(C rho)`` with the x single-transition target(s).
    Otherwise the magnitude of the same coherences, so a y-phase signal counts
    as much as an x-phase one.
    """
    levels = (0.5,) if which == "central" else (1.5, -0.5)
    if which not in ("central", "satellite"):
        raise ValueError(f"unknown transition set {which!r}")
    values = [transition_coherence(rho, m) for m in levels]
    if phase_sensitive:
        return float(sum(v.real for v in values))
    return float(sum(abs(v) for v in values))


def excitation_profile(seq: ControlSequence, omega_q_grid_hz, which: str = "central"):
    """Normalized transition efficiency of ``seq`` for each quadrupolar coupling."""
    grid = [float(x) for x in np.atleast_1d(omega_q_grid_hz)]
    if not grid:
        raise ValueError("coupling grid is empty")
    o = angular_momentum_operators(1.5)
    target = _central_target() if which == "central" else _satellite_target()
    objective = HermitianTransfer(target, o.Iz)
    out = []
    for wq in grid:
        U = forward_propagate(seq, sodium_system(wq))[-1]
        out.append((wq, normalized_efficiency(objective, objective.phi(U))))
    return out


def enhancement_vs_hard_pulse(seq: ControlSequence, spec: ExperimentSpec) -> float:
    """Central-transition signal of ``seq`` over that of an ideal 90 degree pulse.

    Both read-outs are phase-insensitive coherence magnitudes, so the ratio
    does not depend on the phase of the reference pulse.
    """
    if spec.kind not in ("na23_central", "na23_broadband"):
        raise ValueError("enhancement is defined for central-transition experiments")
    o = angular_momentum_operators(1.5)
    sys = sodium_system(spec.omega_q_hz)
    U = forward_propagate(seq, sys)[-1]
    rho = U @ o.Iz @ U.conj().T
    reference = hard_pulse_response(o.Iz, o.Ix)
    return transition_efficiency(rho, "central", False) / transition_efficiency(reference, "central", False)
