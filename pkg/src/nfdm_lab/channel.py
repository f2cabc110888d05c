"""Fibre channel: split-step Manakov propagation, EDFAs and AWGN back-to-back."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.constants
import scipy.fft

from .errors import ContractError, InvalidArgumentError
from .signal import DualPolSignal, LinkConfig, Units

KERR_AVERAGE = 8 / 9


@dataclass(frozen=True, eq=False)
class PropagationRecord:
    output: DualPolSignal
    per_span_noise_energy: np.ndarray
    steps_taken: int


def _check_physical(sig: DualPolSignal, link: LinkConfig):
    if sig.units is not Units.PHYSICAL:
        raise ContractError("propagation works on physical signals")
    if 1 / sig.dt < link.sample_rate * (1 - 1e-9):
        raise InvalidArgumentError("the simulation grid is narrower than the oversampled signal band")


def ssfm_manakov(
    sig: DualPolSignal,
    link: LinkConfig,
    distance_km: float | None = None,
    direction: str = "forward",
    include_loss: bool = True,
    gamma_override: float | None = None,
    step_km: float | None = None,
    workers: int = 1,
) -> tuple[DualPolSignal, int]:
    """Symmetric split-step integration of the Manakov equation.

    Parameters
    ----------
    sig : DualPolSignal
        Physical field; leading batch axes propagate independently.
    distance_km : float, optional
        Defaults to one span.
    direction : {"forward", "backward"}
        ``"backward"`` integrates the equation with every term's sign flipped,
        which undoes forward propagation (digital back-propagation).
    include_loss : bool
    gamma_override : float, optional
        Kerr coefficient in 1/(W km) replacing ``link.gamma``. The 8/9
        polarisation-averaging factor is applied on top.
    step_km : float, optional
        Defaults to ``link.ssfm_step``. The actual step is the distance divided
        by the rounded-up step count.

    Returns
    -------
    signal : DualPolSignal
    n_steps : int
    """
    _check_physical(sig, link)
    if direction not in ("forward", "backward"):
        raise InvalidArgumentError(f"unknown direction {direction!r}")
    distance = link.span_length if distance_km is None else distance_km
    step = link.ssfm_step if step_km is None else step_km
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    if step > link.span_length:
        raise InvalidArgumentError("step cannot exceed the span length")
    n_steps = max(1, math.ceil(distance / step - 1e-9))
    h = distance * 1000 / n_steps
    sign = 1.0 if direction == "forward" else -1.0

    gamma = (link.gamma if gamma_override is None else gamma_override) / 1000 * KERR_AVERAGE
    alpha = link.alpha_lin if include_loss else 0.0
    omega = 2 * math.pi * scipy.fft.fftfreq(sig.n_samples, sig.dt)
    # d/dz Q = -alpha/2 Q - j beta2/2 d2Q/dt2 + j gamma' |Q|^2 Q
    half_disp = np.exp(sign * 0.5j * link.beta2 * omega**2 * (h / 2))
    full_disp = half_disp**2
    signed_alpha = sign * alpha
    amp = math.exp(-signed_alpha * h / 2)
    l_eff = h if signed_alpha == 0 else -math.expm1(-signed_alpha * h) / signed_alpha
    nl_coeff = sign * gamma * l_eff

    field = scipy.fft.fft(sig.samples, axis=-1, workers=workers) * half_disp
    for k in range(n_steps):
        q = scipy.fft.ifft(field, axis=-1, workers=workers)
        power = np.sum(q.real**2 + q.imag**2, axis=-2, keepdims=True)
        q *= amp * np.exp(1j * nl_coeff * power)
        field = scipy.fft.fft(q, axis=-1, workers=workers)
        field *= full_disp if k < n_steps - 1 else half_disp
    out = scipy.fft.ifft(field, axis=-1, workers=workers)
    return sig.with_samples(out), n_steps


def ase_variance(link: LinkConfig, dt: float) -> float:
    """Per-polarisation ASE power of one amplifier over the grid bandwidth ``1/dt``."""
    if link.noise_figure == -math.inf:
        return 0.0
    n_sp = 10 ** (link.noise_figure / 10) / 2
    photon = scipy.constants.h * link.carrier_freq
    return n_sp * photon * (link.span_gain - 1) / dt


def link_noise_power(link: LinkConfig, dt: float | None = None) -> float:
    """Per-polarisation ASE power accumulated over all spans."""
    return link.n_spans * ase_variance(link, link.dt if dt is None else dt)


def _draw_noise(shape, variance: float, rng) -> np.ndarray:
    """Circular complex Gaussian noise; one generator per batch frame if a sequence is given."""
    sd = math.sqrt(variance / 2)
    if isinstance(rng, np.random.Generator):
        return sd * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    frames = list(rng)
    batch = int(np.prod(shape[:-2], dtype=int))
    if len(frames) != batch:
        raise InvalidArgumentError(f"need {batch} generators, got {len(frames)}")
    noise = np.empty((batch,) + tuple(shape[-2:]), complex)
    for i, g in enumerate(frames):
        noise[i] = sd * (g.standard_normal(shape[-2:]) + 1j * g.standard_normal(shape[-2:]))
    return noise.reshape(shape)


def edfa(sig: DualPolSignal, link: LinkConfig, rng=None) -> DualPolSignal:
    """Lumped amplifier restoring one span's loss and adding ASE.

    ``rng`` may be a generator, one generator per batch frame, or ``None``
    for noiseless amplification.
    """
    out = sig.samples * math.sqrt(link.span_gain)
    variance = ase_variance(link, sig.dt)
    if rng is not None and variance > 0:
        out = out + _draw_noise(out.shape, variance, rng)
    return sig.with_samples(out)


def propagate_link(sig: DualPolSignal, link: LinkConfig, rng=None, workers: int = 1) -> PropagationRecord:
    """Amplified multi-span link: span of fibre then EDFA, ``n_spans`` times.

    ``rng`` is anything :func:`edfa` accepts, or a callable mapping the span
    index to such a value so that every amplifier can have its own stream.
    """
    _check_physical(sig, link)
    noise_energy = np.zeros(link.n_spans)
    steps = 0
    for span in range(link.n_spans):
        sig, n = ssfm_manakov(sig, link, workers=workers)
        steps += n
        before = sig.samples * math.sqrt(link.span_gain)
        sig = edfa(sig, link, rng(span) if callable(rng) else rng)
        noise_energy[span] = sig.dt * np.sum(np.abs(sig.samples - before) ** 2)
    return PropagationRecord(sig, noise_energy, steps)


def propagate_path_averaged(sig: DualPolSignal, link: LinkConfig, step_km: float | None = None, workers: int = 1) -> DualPolSignal:
    """Lossless, noiseless propagation with the path-averaged Kerr coefficient."""
    out, _ = ssfm_manakov(
        sig,
        link,
        distance_km=link.span_length * link.n_spans,
        include_loss=False,
        gamma_override=link.gamma_avg,
        step_km=step_km,
        workers=workers,
    )
    return out


def awgn_b2b(sig: DualPolSignal, total_noise_power: float, rng) -> DualPolSignal:
    """Add white circular Gaussian noise of the given power per polarisation."""
    if total_noise_power < 0:
        raise InvalidArgumentError("noise power must be non-negative")
    if total_noise_power == 0 or rng is None:
        return sig
    return sig.with_samples(sig.samples + _draw_noise(sig.samples.shape, total_noise_power, rng))
