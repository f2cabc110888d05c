"""Signal containers, centred DFT helpers, padding, Hilbert transform and unit scaling.

Dual-polarisation waveforms are stored as arrays of shape ``(..., 2, n)``: the
second-to-last axis indexes the polarisation and any leading axes form a batch
of independent frames that share one time grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, InvalidArgumentError

SPEED_OF_LIGHT = 299_792_458.0


class Units(enum.Enum):
    """Amplitude unit flag of a :class:`DualPolSignal`."""

    PHYSICAL = "physical_sqrtW"
    NORMALISED = "normalised"


@dataclass(frozen=True, eq=False)
class DualPolSignal:
    """Sampled dual-polarisation field.

    Parameters
    ----------
    samples : ndarray, shape (..., 2, n)
        Complex envelope. Row 0 is the first polarisation.
    dt : float
        Sample spacing in seconds, or in normalised time units.
    t0 : float
        Time of the first sample.
    units : Units
        Whether ``samples`` are in sqrt(W) or normalised.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    units: Units = Units.PHYSICAL

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.complex128)
        if x.ndim < 2 or x.shape[-2] != 2:
            raise InvalidArgumentError(f"samples must have shape (..., 2, n), got {x.shape}")
        if x.shape[-1] < 1:
            raise InvalidArgumentError("a signal needs at least one sample")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgumentError(f"dt must be positive and finite, got {self.dt}")
        object.__setattr__(self, "samples", x)

    @classmethod
    def from_pols(cls, pol1, pol2, dt, t0=0.0, units=Units.PHYSICAL) -> "DualPolSignal":
        pol1 = np.asarray(pol1)
        pol2 = np.asarray(pol2)
        if pol1.shape != pol2.shape:
            raise InvalidArgumentError("both polarisations must have the same length")
        return cls(np.stack([pol1, pol2], axis=-2), dt, t0, units)

    @property
    def pol1(self) -> np.ndarray:
        return self.samples[..., 0, :]

    @property
    def pol2(self) -> np.ndarray:
        return self.samples[..., 1, :]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.samples.shape[:-2]

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    def time(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def with_samples(self, samples: np.ndarray, **changes) -> "DualPolSignal":
        return replace(self, samples=samples, **changes)

    def frame(self, index) -> "DualPolSignal":
        """Return one frame of a batched signal."""
        return replace(self, samples=self.samples[index])


@dataclass(frozen=True)
class SpectrumGrid:
    """Uniform grid of real nonlinear frequencies.

    ``lambdas[m] = lambda0 + m * d_lambda``.
    """

    n_points: int
    d_lambda: float
    lambda0: float

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidArgumentError("a spectrum grid needs at least one point")
        if not self.d_lambda > 0:
            raise InvalidArgumentError("d_lambda must be positive")

    @classmethod
    def conjugate(cls, n_time_samples: int, dtau: float) -> "SpectrumGrid":
        """Grid reciprocal to a time window of ``n_time_samples`` samples.

        The grid has as many points as the time window and spans
        ``[-pi/(2 dtau), pi/(2 dtau))``.
        """
        d_lambda = math.pi / (n_time_samples * dtau)
        return cls(n_time_samples, d_lambda, -(n_time_samples // 2) * d_lambda)

    @property
    def lambdas(self) -> np.ndarray:
        return self.lambda0 + self.d_lambda * np.arange(self.n_points)

    def centred_subset(self, n_points: int) -> "SpectrumGrid":
        """Central ``n_points`` of this grid, keeping the point nearest zero."""
        if not 1 <= n_points <= self.n_points:
            raise InvalidArgumentError("subset size out of range")
        start = self.n_points // 2 - n_points // 2
        return SpectrumGrid(n_points, self.d_lambda, self.lambda0 + start * self.d_lambda)

    def subset_slice(self, sub: "SpectrumGrid") -> slice:
        start = int(round((sub.lambda0 - self.lambda0) / self.d_lambda))
        return slice(start, start + sub.n_points)


@dataclass(frozen=True)
class LinkConfig:
    """Fibre link and simulation-grid parameters.

    Parameters
    ----------
    alpha : float
        Loss in dB/km.
    beta2 : float
        Group-velocity dispersion in s^2/m (negative for anomalous dispersion).
    gamma : float
        Kerr coefficient in 1/(W km).
    span_length : float
        Span length in km.
    n_spans : int
        Number of amplified spans.
    noise_figure : float
        EDFA noise figure in dB. ``-inf`` disables ASE noise.
    carrier_freq : float
        Optical carrier frequency in Hz.
    bandwidth : float
        Signal bandwidth in Hz.
    oversampling : int
        Simulation sampling rate divided by ``bandwidth``.
    ssfm_step : float
        Split-step length in km.
    """

    alpha: float = 0.2
    beta2: float = -21.5e-27
    gamma: float = 1.3
    span_length: float = 80.0
    n_spans: int = 12
    noise_figure: float = 5.0
    carrier_freq: float = 193.44e12
    bandwidth: float = 56e9
    oversampling: int = 8
    ssfm_step: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "gamma", "span_length", "carrier_freq", "bandwidth", "ssfm_step"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
        if self.n_spans < 1 or self.oversampling < 1:
            raise InvalidArgumentError("n_spans and oversampling must be at least 1")
        if not (self.beta2 != 0 and math.isfinite(self.beta2)):
            raise InvalidArgumentError("beta2 must be finite and nonzero")
        if math.isnan(self.noise_figure) or self.noise_figure == math.inf:
            raise InvalidArgumentError("noise_figure must be finite or -inf")
        if self.ssfm_step > self.span_length:
            raise InvalidArgumentError("ssfm_step cannot exceed span_length")

    @property
    def alpha_lin(self) -> float:
        """Power attenuation coefficient in 1/m."""
        return self.alpha * math.log(10) / 10 / 1000

    @property
    def gamma_lin(self) -> float:
        """Kerr coefficient in 1/(W m)."""
        return self.gamma / 1000

    @property
    def span_length_m(self) -> float:
        return self.span_length * 1000

    @property
    def length_m(self) -> float:
        """Total link length ``Z0`` in metres."""
        return self.span_length_m * self.n_spans

    @property
    def span_gain(self) -> float:
        """Power gain that exactly offsets one span's loss."""
        return math.exp(self.alpha_lin * self.span_length_m)

    @property
    def gamma_avg(self) -> float:
        """Path-averaged Kerr coefficient in 1/(W km)."""
        loss = self.alpha_lin * self.span_length_m
        return self.gamma * -math.expm1(-loss) / loss

    @property
    def time_scale(self) -> float:
        """Normalisation time ``T_n`` in seconds."""
        return math.sqrt(abs(self.beta2) * self.length_m / 2)

    @property
    def amplitude_scale(self) -> float:
        """Normalisation amplitude ``Q_n`` in sqrt(W)."""
        return math.sqrt(2 / (8 / 9 * self.gamma_avg / 1000 * self.length_m))

    @property
    def sample_rate(self) -> float:
        return self.bandwidth * self.oversampling

    @property
    def dt(self) -> float:
        return 1 / self.sample_rate

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq


def dft_centered(x, axis: int = -1) -> np.ndarray:
    """Unnormalised DFT with the zero-frequency bin at index ``n // 2``."""
    x = np.asarray(x)
    if x.shape[axis] < 1:
        raise InvalidArgumentError("cannot transform an empty sequence")
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(x, axes=axis), axis=axis), axes=axis)


def idft_centered(x, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`dft_centered`, carrying the 1/n factor."""
    x = np.asarray(x)
    if x.shape[axis] < 1:
        raise InvalidArgumentError("cannot transform an empty sequence")
    return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(x, axes=axis), axis=axis), axes=axis)


def pad_symmetric(x, n_zeros: int) -> np.ndarray:
    """Add ``n_zeros / 2`` zeros before and after ``x`` along the last axis."""
    if n_zeros < 0:
        raise InvalidArgumentError(f"pad count must be non-negative, got {n_zeros}")
    if n_zeros % 2:
        raise InvalidArgumentError(f"pad count must be even, got {n_zeros}")
    x = np.asarray(x)
    widths = [(0, 0)] * (x.ndim - 1) + [(n_zeros // 2, n_zeros // 2)]
    return np.pad(x, widths)


def crop_centre(x, n_keep: int) -> np.ndarray:
    """Inverse of :func:`pad_symmetric`: keep the central ``n_keep`` samples."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not 0 <= n_keep <= n or (n - n_keep) % 2:
        raise InvalidArgumentError(f"cannot crop {n} samples symmetrically to {n_keep}")
    start = (n - n_keep) // 2
    return x[..., start:start + n_keep]


def even_ceil(value: float) -> int:
    """Smallest even integer not below ``value``."""
    n = math.ceil(value - 1e-9)
    return n + (n % 2)


def hilbert(x, axis: int = -1) -> np.ndarray:
    """Discrete Hilbert transform of a real sequence, with ``hilbert(cos) = sin``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    if n < 2:
        raise InvalidArgumentError("the Hilbert transform needs at least two samples")
    sign = np.sign(np.fft.fftfreq(n))
    if n % 2 == 0:
        sign[n // 2] = 0.0
    shape = [1] * x.ndim
    shape[axis] = n
    spec = np.fft.fft(x, axis=axis) * (-1j * sign).reshape(shape)
    return np.fft.ifft(spec, axis=axis).real


def normalise(sig: DualPolSignal, link: LinkConfig) -> DualPolSignal:
    """Convert a physical signal to the coefficient-free normalised units."""
    if sig.units is not Units.PHYSICAL:
        raise ContractError("normalise expects a signal in physical units")
    tn, qn = link.time_scale, link.amplitude_scale
    return DualPolSignal(sig.samples / qn, sig.dt / tn, sig.t0 / tn, Units.NORMALISED)


def denormalise(sig: DualPolSignal, link: LinkConfig) -> DualPolSignal:
    """Inverse of :func:`normalise`."""
    if sig.units is not Units.NORMALISED:
        raise ContractError("denormalise expects a normalised signal")
    tn, qn = link.time_scale, link.amplitude_scale
    return DualPolSignal(sig.samples * qn, sig.dt * tn, sig.t0 * tn, Units.PHYSICAL)


def energy_and_power(sig: DualPolSignal, symbol_duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Energy and average power per polarisation.

    Returns
    -------
    energy, power : ndarray, shape (..., 2)
    """
    if not symbol_duration > 0:
        raise InvalidArgumentError("symbol_duration must be positive")
    energy = sig.dt * np.sum(np.abs(sig.samples) ** 2, axis=-1)
    return energy, energy / symbol_duration


def dbm_to_watt(p_dbm):
    return 1e-3 * 10 ** (np.asarray(p_dbm, dtype=float) / 10)


def watt_to_dbm(p_watt):
    return 10 * np.log10(np.asarray(p_watt, dtype=float) / 1e-3)
