"""Digital back-propagation and a Nyquist-QAM reference transceiver.

These tools measure how far the lossy link departs from its lossless,
path-averaged approximation: ideal back-propagation inverts the true link,
path-averaged back-propagation inverts the integrable model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import ssfm_manakov
from .errors import InvalidArgumentError
from .signal import DualPolSignal, LinkConfig, Units, dbm_to_watt


class DbpScheme(enum.Enum):
    IDEAL = "ideal"
    PATH_AVERAGED = "path_averaged"


@dataclass(frozen=True)
class DbpConfig:
    scheme: DbpScheme = DbpScheme.IDEAL
    step: float = 0.1
    link: LinkConfig = LinkConfig()

    def __post_init__(self):
        if not 0 < self.step <= self.link.span_length:
            raise InvalidArgumentError("DBP step must lie in (0, span_length]")


def dbp_ideal(received: DualPolSignal, cfg: DbpConfig) -> DualPolSignal:
    """Undo the lossy amplified link span by span."""
    link = cfg.link
    sig = received
    for _ in range(link.n_spans):
        sig = sig.with_samples(sig.samples / math.sqrt(link.span_gain))
        sig, _ = ssfm_manakov(sig, link, direction="backward", step_km=cfg.step)
    return sig


def dbp_path_averaged(received: DualPolSignal, cfg: DbpConfig) -> DualPolSignal:
    """Undo the lossless path-averaged model over the whole link length."""
    link = cfg.link
    out, _ = ssfm_manakov(
        received,
        link,
        distance_km=link.span_length * link.n_spans,
        direction="backward",
        include_loss=False,
        gamma_override=link.gamma_avg,
        step_km=cfg.step,
    )
    return out


def backpropagate(received: DualPolSignal, cfg: DbpConfig) -> DualPolSignal:
    if cfg.scheme is DbpScheme.IDEAL:
        return dbp_ideal(received, cfg)
    return dbp_path_averaged(received, cfg)


def rrc_spectrum(n_samples: int, dt: float, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Root-raised-cosine frequency response, unit gain in the passband (FFT order)."""
    f = np.abs(np.fft.fftfreq(n_samples, dt))
    f1 = (1 - rolloff) * symbol_rate / 2
    f2 = (1 + rolloff) * symbol_rate / 2
    h = np.zeros(n_samples)
    h[f <= f1] = 1.0
    band = (f > f1) & (f <= f2)
    if rolloff > 0:
        h[band] = np.sqrt(0.5 * (1 + np.cos(math.pi / (rolloff * symbol_rate) * (f[band] - f1))))
    return h


def nyquist_reference_transceiver(
    data,
    link: LinkConfig,
    power_dbm: float = 0.0,
    rolloff: float = 0.01,
) -> tuple[DualPolSignal, Callable[[DualPolSignal], np.ndarray]]:
    """Periodic root-raised-cosine QAM signal and its matched detector.

    Parameters
    ----------
    data : array_like, shape (2, n_symbols)
        Unit-energy constellation points.
    power_dbm : float
        Average power per polarisation.

    Returns
    -------
    signal : DualPolSignal
    detect : callable
        Matched filter, symbol sampling and power de-normalisation.
    """
    data = np.asarray(data, dtype=complex)
    if data.ndim != 2 or data.shape[0] != 2:
        raise InvalidArgumentError("data must have shape (2, n_symbols)")
    sps = link.oversampling
    n_sym = data.shape[1]
    n = n_sym * sps
    dt = link.dt
    h = rrc_spectrum(n, dt, link.bandwidth, rolloff)
    # with a flat passband, sqrt(sps) scaling gives unit power per unit-energy symbol
    amplitude = math.sqrt(float(dbm_to_watt(power_dbm)))
    up = np.zeros((2, n), complex)
    up[:, ::sps] = data * sps
    tx = np.fft.ifft(np.fft.fft(up, axis=-1) * h, axis=-1) * amplitude
    sig = DualPolSignal(tx, dt, 0.0, Units.PHYSICAL)

    def detect(rx: DualPolSignal) -> np.ndarray:
        if rx.n_samples != n:
            raise InvalidArgumentError(f"expected {n} samples, got {rx.n_samples}")
        filtered = np.fft.ifft(np.fft.fft(rx.samples, axis=-1) * h, axis=-1)
        return filtered[..., ::sps] / amplitude

    return sig, detect


def symbol_evm(x, y) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    return float(np.sqrt(np.mean(np.abs(y - x) ** 2) / np.mean(np.abs(x) ** 2)))
