"""Finite-difference derivatives and real-input magnitude spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .motion import MotionSequence


@dataclass(frozen=True)
class DerivativeSequence:
    order: int
    fps: float
    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def central_diff(x: np.ndarray, dt: float) -> np.ndarray:
    """Derivative along axis 0: central in the interior, one-sided at the ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValueError("sequence too short for derivatives")
    out = np.empty_like(x)
    out[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    out[0] = (x[1] - x[0]) / dt
    out[-1] = (x[-1] - x[-2]) / dt
    return out


def diff_matrix(n: int) -> np.ndarray:
    """Matrix form of :func:`central_diff` in frame units (dt = 1)."""
    if n < 3:
        raise ValueError("sequence too short for derivatives")
    D = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    D[idx, idx + 1] = 0.5
    D[idx, idx - 1] = -0.5
    D[0, :2] = (-1.0, 1.0)
    D[-1, -2:] = (-1.0, 1.0)
    return D


def finite_diff(seq: MotionSequence | DerivativeSequence, order_step: int = 1) -> DerivativeSequence:
    """Raise the derivative order of ``seq`` by ``order_step``."""
    if isinstance(seq, MotionSequence):
        values, order = seq.positions, 0
    else:
        values, order = seq.values, seq.order
    if order + order_step > 3:
        raise ValueError("derivatives above order 3 (jerk) are not supported")
    dt = 1.0 / seq.fps
    for _ in range(order_step):
        values = central_diff(values, dt)
    return DerivativeSequence(order + order_step, seq.fps, values)


@dataclass(frozen=True)
class MagnitudeSpectrum:
    bins: np.ndarray
    bin_hz: float
    normalization: str = "none"

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]


def spectrum(channel, fps: float, normalization: str = "none") -> MagnitudeSpectrum:
    """Magnitude of the one-sided DFT of a real signal (K = T//2 + 1 bins)."""
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("spectrum expects a 1-D channel")
    T = x.shape[0]
    if T < 4:
        raise ValueError("spectrum needs at least 4 samples")
    mags = np.abs(np.fft.rfft(x))
    if normalization == "unit-L2":
        norm = np.linalg.norm(mags)
        if norm > 0:
            mags = mags / norm
    elif normalization != "none":
        raise ValueError(f"unknown normalization {normalization!r}")
    return MagnitudeSpectrum(mags, fps / T, normalization)


def band_edges(n_bins: int, low_frac: float, high_frac: float) -> tuple[int, int]:
    if not 0.0 <= low_frac < high_frac <= 1.0:
        raise ValueError(f"need 0 <= low_frac < high_frac <= 1, got {low_frac}, {high_frac}")
    return math.floor(low_frac * n_bins), math.ceil(high_frac * n_bins)


def band_norms(spec: MagnitudeSpectrum, low_frac: float = 0.10, high_frac: float = 0.50) -> tuple[float, float]:
    """L2 norms of the low band ``[0, lo)`` and the high band ``[hi, K)``."""
    lo, hi = band_edges(spec.n_bins, low_frac, high_frac)
    bins = spec.bins
    return float(np.linalg.norm(bins[:lo])), float(np.linalg.norm(bins[hi:]))
