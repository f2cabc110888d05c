"""Forward and inverse nonlinear Fourier transforms of the Manakov equation.

The scattering problem is

    dv/dtau = [[-j*lam, q1, q2], [-conj(q1), j*lam, 0], [-conj(q2), 0, j*lam]] v

with ``v -> [1, 0, 0] exp(-j*lam*tau)`` on the left. On the right
``a = exp(j*lam*tau) v0`` and ``b_p = exp(-j*lam*tau) v_p``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

from . import _scattering
from .errors import ContractError, InvalidArgumentError, NumericalDomainError, PreconditionError
from .signal import DualPolSignal, SpectrumGrid, Units, hilbert

log = logging.getLogger(__name__)

EDGE_DECAY_RATIO = 1e-6
EIGENVALUE_FLAG_LEVEL = 1e-2


class Representation(enum.Enum):
    B = "b_coefficients"
    QC = "qc_coefficients"


@dataclass(frozen=True, eq=False)
class NonlinearSpectrum:
    """Continuous nonlinear spectrum sampled on a :class:`SpectrumGrid`.

    Parameters
    ----------
    grid : SpectrumGrid
    b : ndarray, shape (2, n_points)
        Scattering coefficients ``b1, b2``. For the ``QC`` representation these
        are still stored when known, but ``qc`` is authoritative.
    a : ndarray, shape (n_points,), optional
    representation : Representation
    qc : ndarray, shape (2, n_points), optional
        Spectral amplitudes ``b / a``.
    """

    grid: SpectrumGrid
    b: np.ndarray | None = None
    a: np.ndarray | None = None
    representation: Representation = Representation.B
    qc: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n_points
        for name in ("b", "qc"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.complex128)
                if value.shape != (2, n):
                    raise InvalidArgumentError(f"{name} must have shape (2, {n}), got {value.shape}")
                object.__setattr__(self, name, value)
        if self.a is not None:
            a = np.asarray(self.a, dtype=np.complex128)
            if a.shape != (n,):
                raise InvalidArgumentError(f"a must have shape ({n},), got {a.shape}")
            object.__setattr__(self, "a", a)
        if self.representation is Representation.B and self.b is None:
            raise InvalidArgumentError("a b-representation needs b")
        if self.representation is Representation.QC and self.qc is None:
            raise InvalidArgumentError("a qc-representation needs qc")

    @property
    def b1(self) -> np.ndarray:
        return self.b[0]

    @property
    def b2(self) -> np.ndarray:
        return self.b[1]

    @property
    def lambdas(self) -> np.ndarray:
        return self.grid.lambdas

    def unimodularity_error(self) -> float:
        if self.a is None or self.b is None:
            return math.nan
        total = np.abs(self.a) ** 2 + np.sum(np.abs(self.b) ** 2, axis=0)
        return float(np.max(np.abs(total - 1.0)))


@dataclass(frozen=True, eq=False)
class ScatteringResult:
    """Output of :func:`forward_nft` with numerical health indicators."""

    spectrum: NonlinearSpectrum
    unimodularity_error: float
    parseval_mismatch: float
    edge_decay_ok: bool

    @property
    def eigenvalue_suspect(self) -> bool:
        """Energy missing from the continuous spectrum hints at a discrete one."""
        return self.parseval_mismatch > EIGENVALUE_FLAG_LEVEL or self.unimodularity_error > EIGENVALUE_FLAG_LEVEL


def window_left_edge(sig: DualPolSignal) -> float:
    """Left boundary of the first cell; samples sit at cell centres."""
    return sig.t0 - 0.5 * sig.dt


def centred_t0(n_samples: int, dt: float) -> float:
    """First-sample time of an ``n_samples`` window symmetric about zero."""
    return (-(n_samples // 2) + 0.5) * dt


def _check_normalised(sig: DualPolSignal):
    if sig.units is not Units.NORMALISED:
        raise ContractError("the nonlinear Fourier transform works on normalised signals")
    if sig.samples.ndim != 2:
        raise InvalidArgumentError("pass one frame at a time")
    if not np.all(np.isfinite(sig.samples)):
        raise InvalidArgumentError("signal contains NaN or infinite samples")


def nonlinear_energy(spec: NonlinearSpectrum) -> float:
    """Energy implied by the nonlinear Parseval identity.

    Uses ``-log|a|^2`` when ``a`` is known, which stays accurate where
    ``|b|`` rounds to one, and ``-log(1 - |b|^2)`` otherwise.
    """
    if spec.a is not None:
        if np.any(spec.a == 0):
            return math.inf
        return float(-2 * trapezoid(np.log(np.abs(spec.a)), dx=spec.grid.d_lambda) / math.pi)
    norm2 = np.sum(np.abs(spec.b) ** 2, axis=0)
    if np.any(norm2 >= 1):
        return math.inf
    return float(-trapezoid(np.log1p(-norm2), dx=spec.grid.d_lambda) / math.pi)


def forward_nft(sig: DualPolSignal, grid: SpectrumGrid, scheme: str = "al") -> ScatteringResult:
    """Continuous nonlinear spectrum of a normalised dual-polarisation signal.

    Parameters
    ----------
    sig : DualPolSignal
        Normalised signal, a single frame.
    grid : SpectrumGrid
        Points at which to evaluate the spectrum.
    scheme : {"al", "piecewise"}
        ``"al"`` is the Ablowitz-Ladik discretisation, exactly invertible by
        :func:`inverse_nft` and accurate for band-limited signals.
        ``"piecewise"`` treats the samples as a piecewise-constant potential
        and is exact for that potential at any ``lam``.

    Returns
    -------
    ScatteringResult
    """
    _check_normalised(sig)
    if scheme == "al":
        kernel = _scattering.forward_al
    elif scheme == "piecewise":
        kernel = _scattering.forward_piecewise
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    q1 = np.ascontiguousarray(sig.pol1)
    q2 = np.ascontiguousarray(sig.pol2)
    a, b1, b2 = kernel(q1, q2, float(sig.dt), window_left_edge(sig), grid.lambdas)
    spec = NonlinearSpectrum(grid, np.stack([b1, b2]), a)

    amp = np.sqrt(np.sum(np.abs(sig.samples) ** 2, axis=0))
    peak = amp.max()
    edge_ok = bool(peak == 0 or max(amp[0], amp[-1]) < EDGE_DECAY_RATIO * peak)
    if not edge_ok:
        log.debug("signal does not decay at the window edges")
    energy = sig.dt * float(np.sum(amp**2))
    if energy > 0:
        mismatch = abs(energy - nonlinear_energy(spec)) / energy
    else:
        mismatch = 0.0
    return ScatteringResult(spec, spec.unimodularity_error(), mismatch, edge_ok)


def a_from_log_modulus(log_mod) -> np.ndarray:
    """Minimum-phase ``a`` with ``log|a| = log_mod`` along the (ascending) grid."""
    log_mod = np.asarray(log_mod, dtype=float)
    return np.exp(log_mod + 1j * hilbert(log_mod))


def a_from_b(b) -> np.ndarray:
    """Reconstruct ``a`` from ``b`` when no discrete spectrum is present.

    The modulus follows from unimodularity and the phase is the Hilbert
    transform of the log-modulus.
    """
    b = np.asarray(b)
    norm2 = np.sum(np.abs(b) ** 2, axis=0)
    if np.any(norm2 >= 1):
        raise NumericalDomainError("|b| must stay below one to reconstruct a")
    return a_from_log_modulus(0.5 * np.log1p(-norm2))


def _polynomial_coefficients(values, lam0, h):
    n = values.size
    return np.fft.fft(values) / n * np.exp(-2j * lam0 * h * np.arange(n))


def inverse_nft(spec: NonlinearSpectrum, n_time_samples: int, dt: float, refinements: int = 0) -> DualPolSignal:
    """Signal whose Ablowitz-Ladik nonlinear spectrum equals ``spec``.

    ``spec`` must live on ``SpectrumGrid.conjugate(n_time_samples, dt)``. The
    output is a normalised signal on a window symmetric about zero. A given
    ``a`` is used as is, otherwise it is rebuilt from ``b``. Passing ``a``
    matters at high energy, where ``1 - |b|^2`` is lost to rounding.

    The Hilbert-phase ``a`` is only approximately consistent with ``b`` when the
    signal does not decay inside the window, so the layer-peeled signal
    reproduces ``b`` up to a small, energy-dependent error. Each of the
    optional ``refinements`` runs a forward transform and corrects the signal
    by the difference of the peeled spectra (a fixed-point iteration that
    converges geometrically in that regime).
    """
    if spec.representation is Representation.QC:
        spec = b_from_qc(spec)
    expected = SpectrumGrid.conjugate(n_time_samples, dt)
    grid = spec.grid
    if (
        grid.n_points != n_time_samples
        or not math.isclose(grid.d_lambda, expected.d_lambda, rel_tol=1e-9)
        or not math.isclose(grid.lambda0, expected.lambda0, rel_tol=1e-9)
    ):
        raise PreconditionError("spectrum grid is not conjugate to the requested time window")
    norm2 = np.sum(np.abs(spec.b) ** 2, axis=0)
    if spec.a is not None:
        if np.any(spec.a == 0):
            raise NumericalDomainError("a vanishes on the grid; no signal without a discrete spectrum")
        a = spec.a
    else:
        if np.any(norm2 >= 1):
            raise NumericalDomainError("|b| >= 1 on the grid; no signal without a discrete spectrum")
        a = a_from_b(spec.b)
    if not np.any(norm2 > 0):
        return DualPolSignal(
            np.zeros((2, n_time_samples), complex), dt, centred_t0(n_time_samples, dt), Units.NORMALISED
        )

    t0 = centred_t0(n_time_samples, dt)
    target = _peel(spec.b, a, grid.lambdas, dt, t0)
    q = target
    for _ in range(refinements):
        b = forward_nft(DualPolSignal(q, dt, t0, Units.NORMALISED), grid).spectrum.b
        if np.any(np.sum(np.abs(b) ** 2, axis=0) >= 1):
            raise NumericalDomainError("refinement left the unit ball")
        q = q + target - _peel(b, a_from_b(b), grid.lambdas, dt, t0)
    return DualPolSignal(q, dt, t0, Units.NORMALISED)


def _peel(b, a, lam, dt, t0) -> np.ndarray:
    n = lam.size
    tau_left = t0 - 0.5 * dt
    tau_right = tau_left + n * dt
    # undo the right-edge reference and shift the polynomial to start at power zero
    phase = np.exp(1j * lam * (tau_right + tau_left + (n - 1) * dt))
    alpha = _polynomial_coefficients(a, lam[0], dt)
    beta1 = _polynomial_coefficients(b[0] * phase, lam[0], dt)
    beta2 = _polynomial_coefficients(b[1] * phase, lam[0], dt)
    return np.stack(_scattering.peel_al(alpha, beta1, beta2, float(dt)))


def evolve_spectrum(spec: NonlinearSpectrum, ell: float) -> NonlinearSpectrum:
    """Propagate the spectrum over normalised distance ``ell``.

    ``b`` (and ``qc``) pick up ``exp(-4j lam^2 ell)``; ``a`` is unchanged.
    """
    rot = np.exp(-4j * spec.lambdas**2 * ell)
    b = None if spec.b is None else spec.b * rot
    qc = None if spec.qc is None else spec.qc * rot
    return replace(spec, b=b, qc=qc)


def qc_from_b(spec: NonlinearSpectrum) -> NonlinearSpectrum:
    """Spectral amplitudes ``qc = b / a``."""
    if spec.representation is not Representation.B:
        raise ContractError("qc_from_b expects a b-representation")
    a = spec.a if spec.a is not None else a_from_b(spec.b)
    if np.any(np.abs(a) < 1e-12):
        raise NumericalDomainError("|a| vanishes; qc is undefined")
    return NonlinearSpectrum(spec.grid, spec.b, a, Representation.QC, spec.b / a)


def b_from_qc(spec: NonlinearSpectrum) -> NonlinearSpectrum:
    """Scattering coefficients from spectral amplitudes."""
    if spec.representation is not Representation.QC:
        raise ContractError("b_from_qc expects a qc-representation")
    qc = spec.qc
    norm2 = np.sum(np.abs(qc) ** 2, axis=0)
    # |a|^2 = 1/(1+|qc|^2); the Hilbert phase needs log|a| only
    a = a_from_log_modulus(-0.5 * np.log1p(norm2))
    return NonlinearSpectrum(spec.grid, a * qc, a, Representation.B)
