"""Frequency truncation of control waveforms and the monotone smoothing step."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .propagation import ControlSequence

__all__ = [
    "TruncationSpec",
    "FrequencyTruncation",
    "frequency_truncate",
    "blend",
    "regularized_accept",
    "rms_power",
    "high_frequency_fraction",
    "spectral_power",
]


@dataclass(frozen=True)
class TruncationSpec:
    """Low-pass corner and the alpha halving schedule.

    ``cutoff_hz=None`` means one tenth of the Nyquist frequency of whatever
    grid is being filtered. ``taper_hz > 0`` replaces the brick wall with a
    raised-cosine roll-off of that width below the cutoff.
    """

    cutoff_hz: float | None = None
    alpha_floor: float = 2.0 ** -20
    alpha_shrink: float = 0.5
    taper_hz: float = 0.0

    def __post_init__(self):
        if self.cutoff_hz is not None and not self.cutoff_hz > 0:
            raise ValueError("cutoff_hz must be positive")
        if not 0 < self.alpha_floor < 1:
            raise ValueError("alpha_floor must lie in (0, 1)")
        if not 0 < self.alpha_shrink < 1:
            raise ValueError("alpha_shrink must lie in (0, 1)")
        if self.taper_hz < 0:
            raise ValueError("taper_hz must be non-negative")

    def resolve_cutoff(self, dt: float) -> float:
        nyquist = 0.5 / dt
        cutoff = 0.1 * nyquist if self.cutoff_hz is None else self.cutoff_hz
        if not 0 < cutoff <= nyquist * (1 + 1e-12):
            raise ValueError(f"cutoff {cutoff} Hz outside (0, {nyquist}] Hz")
        return cutoff

    def alphas(self):
        alpha = 1.0
        while alpha >= self.alpha_floor:
            yield alpha
            alpha *= self.alpha_shrink


def _transfer(n: int, dt: float, cutoff: float, taper: float) -> np.ndarray:
    freqs = np.abs(np.fft.rfftfreq(n, dt))
    # tolerance keeps grid frequencies that sit exactly on the corner
    edge = cutoff * (1 + 1e-9)
    if taper <= 0:
        return (freqs <= edge).astype(float)
    lo = cutoff - taper
    gain = np.where(freqs <= lo, 1.0, 0.5 * (1 + np.cos(np.pi * (freqs - lo) / taper)))
    return np.where(freqs <= edge, gain, 0.0)


def _truncate_array(amps: np.ndarray, dt: float, cutoff: float, taper: float = 0.0) -> np.ndarray:
    n = amps.shape[0]
    spectrum = np.fft.rfft(amps, axis=0)
    return np.fft.irfft(spectrum * _transfer(n, dt, cutoff, taper)[:, None], n=n, axis=0)


def frequency_truncate(seq: ControlSequence, spec: TruncationSpec = TruncationSpec()) -> ControlSequence:
    """Zero every Fourier bin above the cutoff, channel by channel."""
    cutoff = spec.resolve_cutoff(seq.dt)
    return seq.with_amps(_truncate_array(seq.amps, seq.dt, cutoff, spec.taper_hz))


def blend(omega_new: ControlSequence, alpha: float, spec: TruncationSpec = TruncationSpec(), truncated=None) -> ControlSequence:
    """``(1 - alpha) w + alpha F(w)``, written as ``w + alpha (F(w) - w)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return omega_new
    if truncated is None:
        truncated = frequency_truncate(omega_new, spec)
    return omega_new.with_amps(omega_new.amps + alpha * (truncated.amps - omega_new.amps))


def regularized_accept(
    J_old: float,
    omega_new: ControlSequence,
    evaluator: Callable[[ControlSequence], float],
    spec: TruncationSpec = TruncationSpec(),
    truncate: Callable[[ControlSequence], ControlSequence] | None = None,
):
    """Largest ``alpha`` in ``1, 1/2, 1/4, ...`` whose blend keeps ``J >= J_old``.

    Falls back to ``alpha = 0`` (the unsmoothed control) when every trial
    down to ``spec.alpha_floor`` fails. Returns ``(omega_smooth, alpha)``.
    """
    truncated = (truncate or (lambda s: frequency_truncate(s, spec)))(omega_new)
    for alpha in spec.alphas():
        trial = blend(omega_new, alpha, spec, truncated=truncated)
        if evaluator(trial) >= J_old:
            return trial, alpha
    return omega_new, 0.0


class FrequencyTruncation(TransformerMixin, BaseEstimator):
    """Low-pass filter for ``(n_steps, n_channels)`` amplitude grids.

    ``fit`` records the grid length; ``transform`` applies the brick-wall (or
    tapered) truncation. Amplitude units are preserved.
    """

    def __init__(self, dt=1.0, cutoff_hz=None, taper_hz=0.0):
        self.dt = dt
        self.cutoff_hz = cutoff_hz
        self.taper_hz = taper_hz

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        spec = TruncationSpec(cutoff_hz=self.cutoff_hz, taper_hz=self.taper_hz)
        self.cutoff_hz_ = spec.resolve_cutoff(self.dt)
        self.n_steps_ = X.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "cutoff_hz_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} channels, fitted with {self.n_features_in_}")
        return _truncate_array(X, self.dt, self.cutoff_hz_, self.taper_hz)


def rms_power(seq: ControlSequence, channel_pairs: Sequence[tuple]) -> np.ndarray:
    """RMS quadrature amplitude in Hz for each ``(x, y)`` channel pair."""
    used = [k for pair in channel_pairs for k in pair]
    if any(len(pair) != 2 for pair in channel_pairs) or sorted(used) != list(range(seq.n_channels)):
        raise ValueError("every channel must belong to exactly one (x, y) pair")
    out = []
    for kx, ky in channel_pairs:
        power = np.mean(seq.amps[:, kx] ** 2 + seq.amps[:, ky] ** 2)
        out.append(np.sqrt(power) / (2 * np.pi))
    return np.array(out)


def spectral_power(amps: np.ndarray, dt: float):
    """Two-sided power per frequency bin with ``sum == n * sum(x**2)`` (Parseval)."""
    amps = np.asarray(amps, dtype=float)
    spectrum = np.fft.fft(amps, axis=0)
    return np.fft.fftfreq(amps.shape[0], dt), np.abs(spectrum) ** 2


def high_frequency_fraction(seq: ControlSequence, cutoff_hz: float | None = None) -> float:
    """AC power above ``cutoff_hz`` over total AC power, all channels together."""
    cutoff = TruncationSpec(cutoff_hz=cutoff_hz).resolve_cutoff(seq.dt)
    freqs, power = spectral_power(seq.amps, seq.dt)
    ac = np.abs(freqs) > 0
    total = power[ac].sum()
    if total <= 0:
        return 0.0
    high = power[np.abs(freqs) > cutoff * (1 + 1e-9)].sum()
    return float(high / total)
