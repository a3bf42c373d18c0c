"""Offline preprocessing of raw EMG and joint-angle recordings.

The EMG chain is band-pass (10-450 Hz) -> full-wave rectification -> 7 Hz
low-pass envelope -> MVC normalization -> decimation by 32 to the angle
rate (4000 Hz / 32 = 125 Hz). Angles get a truncated Gaussian smoother and
central-difference kinematics. Filters are 4th-order Butterworth applied
forward-backward (zero phase); processing is offline so the acausal pass is
free and keeps envelopes aligned with the kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

FILTER_ORDER = 4


def _as_channel_matrix(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ValueError(f"expected samples of shape (n, channels), got {samples.shape}")
    return samples


@dataclass
class RawEmg:
    """Multi-channel EMG samples in mV at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = _as_channel_matrix(self.samples)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("EMG samples must be finite")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass
class EmgEnvelope:
    """MVC-normalized envelope, values in [0, 1].

    ``clipped`` counts samples that exceeded their MVC value and were
    clipped during normalization.
    """

    values: np.ndarray
    sample_rate: float
    clipped: int = 0

    def __post_init__(self):
        self.values = _as_channel_matrix(self.values)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("envelope values must be finite")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("envelope values must lie in [0, 1]")


@dataclass
class AngleSeries:
    """Joint angles in rad, shape (n_steps, 2): shoulder then elbow."""

    angles: np.ndarray
    sample_rate: float = 125.0

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        if self.angles.ndim != 2 or self.angles.shape[1] != 2:
            raise ValueError(f"expected angles of shape (n, 2), got {self.angles.shape}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("angles must be finite")


def bandpass(raw: RawEmg, lo: float = 10.0, hi: float = 450.0) -> RawEmg:
    """Zero-phase Butterworth band-pass; removes DC and out-of-band noise."""
    nyquist = raw.sample_rate / 2.0
    if not 0.0 < lo < hi < nyquist:
        raise ValueError(
            f"band edges must satisfy 0 < lo < hi < {nyquist:g} Hz, got ({lo}, {hi})"
        )
    sos = sps.butter(FILTER_ORDER, [lo, hi], btype="bandpass",
                     fs=raw.sample_rate, output="sos")
    filtered = sps.sosfiltfilt(sos, raw.samples, axis=0)
    return RawEmg(samples=filtered, sample_rate=raw.sample_rate)


def rectify(x: RawEmg) -> RawEmg:
    """Full-wave rectification: elementwise absolute value."""
    return RawEmg(samples=np.abs(x.samples), sample_rate=x.sample_rate)


def lowpass_envelope(x: RawEmg, cutoff: float = 7.0) -> RawEmg:
    """Zero-phase low-pass of a rectified signal; yields the linear envelope.

    Filter undershoot is clamped at zero so the envelope stays nonnegative.
    """
    nyquist = x.sample_rate / 2.0
    if not 0.0 < cutoff < nyquist:
        raise ValueError(f"cutoff must lie in (0, {nyquist:g}) Hz, got {cutoff}")
    sos = sps.butter(FILTER_ORDER, cutoff, btype="lowpass",
                     fs=x.sample_rate, output="sos")
    smoothed = sps.sosfiltfilt(sos, x.samples, axis=0)
    return RawEmg(samples=np.maximum(smoothed, 0.0), sample_rate=x.sample_rate)


def mvc_normalize(x: RawEmg, mvc) -> EmgEnvelope:
    """Divide each channel by its maximum-voluntary-contraction value.

    Samples above MVC are clipped to 1; the clip count is kept on the
    returned envelope so super-MVC trials are visible downstream.
    """
    mvc = np.asarray(mvc, dtype=float).reshape(-1)
    if mvc.shape[0] != x.n_channels:
        raise ValueError(f"need one MVC value per channel ({x.n_channels}), got {mvc.shape[0]}")
    if np.any(mvc <= 0):
        raise ValueError("MVC values must be strictly positive")
    scaled = x.samples / mvc
    clipped = int(np.count_nonzero(scaled > 1.0))
    return EmgEnvelope(values=np.minimum(scaled, 1.0),
                       sample_rate=x.sample_rate, clipped=clipped)


def downsample(x: EmgEnvelope, factor: int) -> EmgEnvelope:
    """Keep every ``factor``-th sample starting at index 0.

    The 7 Hz envelope is far below the decimated Nyquist rate, so plain
    decimation is alias-free here.
    """
    if not (isinstance(factor, (int, np.integer)) and factor >= 1):
        raise ValueError(f"factor must be an integer >= 1, got {factor!r}")
    if x.values.shape[0] < factor:
        raise ValueError("input shorter than decimation factor")
    return EmgEnvelope(values=x.values[::factor],
                       sample_rate=x.sample_rate / factor,
                       clipped=x.clipped)


def gaussian_kernel(sigma: float, window: int) -> np.ndarray:
    """Truncated Gaussian, renormalized to sum exactly to one."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not (isinstance(window, (int, np.integer)) and window >= 1):
        raise ValueError(f"window must be an integer >= 1, got {window!r}")
    offsets = np.arange(window, dtype=float) - (window - 1) / 2.0
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(a: AngleSeries, sigma: float = 10.0, window: int = 6) -> AngleSeries:
    """Per-DOF convolution with a truncated Gaussian; reflected edges."""
    kernel = gaussian_kernel(sigma, window)
    if a.angles.shape[0] == 0:
        return AngleSeries(angles=a.angles.copy(), sample_rate=a.sample_rate)
    pad_lo = (window - 1) // 2
    pad_hi = window // 2
    padded = np.pad(a.angles, ((pad_lo, pad_hi), (0, 0)), mode="reflect")
    smoothed = np.empty_like(a.angles)
    for c in range(a.angles.shape[1]):
        smoothed[:, c] = np.convolve(padded[:, c], kernel, mode="valid")
    return AngleSeries(angles=smoothed, sample_rate=a.sample_rate)


def central_difference(a: AngleSeries):
    """Velocities and accelerations from angles.

    Interior points use the standard central stencils
    ``qd[i] = (q[i+1] - q[i-1]) / (2 dt)`` and
    ``qdd[i] = (q[i+1] - 2 q[i] + q[i-1]) / dt^2``; endpoints use one-sided
    second-order stencils so the outputs keep the input length. All stencils
    are exact on polynomials up to degree 2.
    """
    q = a.angles
    n = q.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 samples for central differences, got {n}")
    dt = 1.0 / a.sample_rate

    qd = np.empty_like(q)
    qd[1:-1] = (q[2:] - q[:-2]) / (2.0 * dt)
    qd[0] = (-3.0 * q[0] + 4.0 * q[1] - q[2]) / (2.0 * dt)
    qd[-1] = (3.0 * q[-1] - 4.0 * q[-2] + q[-3]) / (2.0 * dt)

    qdd = np.empty_like(q)
    qdd[1:-1] = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / dt ** 2
    if n >= 4:
        qdd[0] = (2.0 * q[0] - 5.0 * q[1] + 4.0 * q[2] - q[3]) / dt ** 2
        qdd[-1] = (2.0 * q[-1] - 5.0 * q[-2] + 4.0 * q[-3] - q[-4]) / dt ** 2
    else:
        # n == 3: only the centered value exists; constant-extend it, which
        # is still exact for quadratics.
        qdd[0] = qdd[1]
        qdd[-1] = qdd[1]
    return qd, qdd


def emg_pipeline(raw: RawEmg, mvc, band=(10.0, 450.0), envelope_cutoff: float = 7.0,
                 decimation: int = 32) -> EmgEnvelope:
    """Full EMG chain: band-pass, rectify, envelope, normalize, decimate."""
    x = bandpass(raw, *band)
    x = rectify(x)
    x = lowpass_envelope(x, envelope_cutoff)
    env = mvc_normalize(x, mvc)
    return downsample(env, decimation)


def angle_pipeline(a: AngleSeries, sigma: float = 10.0, window: int = 6):
    """Angle chain: Gaussian smoothing then central-difference kinematics.

    Returns ``(smoothed_angles, velocities, accelerations)``.
    """
    smoothed = gaussian_smooth(a, sigma=sigma, window=window)
    qd, qdd = central_difference(smoothed)
    return smoothed, qd, qdd
