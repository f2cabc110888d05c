"""NFDM transmitter and receiver.

The transmitter maps QAM symbols onto OFDM-like subcarriers, shapes them into
the nonlinear spectrum through one of two amplitude maps, pre-compensates half
of the link dispersion and synthesises the time signal with the inverse NFT.
The receiver mirrors every step.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, NumericalDomainError, UnreachablePowerError
from .nft import (
    NonlinearSpectrum,
    Representation,
    a_from_log_modulus,
    centred_t0,
    evolve_spectrum,
    forward_nft,
    inverse_nft,
    nonlinear_energy,
)
from .signal import (
    DualPolSignal,
    LinkConfig,
    SpectrumGrid,
    Units,
    crop_centre,
    dbm_to_watt,
    denormalise,
    dft_centered,
    even_ceil,
    idft_centered,
    normalise,
    pad_symmetric,
    watt_to_dbm,
)

GUARD_TIME = 3.75e-9
B_NORM2_CEILING = 1 - 1e-9
# dB of launch power per dB of scale below which calibration gives up
SATURATION_SLOPE = 0.02
MAX_CALIBRATION_STEP_DB = 6.0


class Modulation(enum.Enum):
    B = "b"
    QC = "qc"


# ---------------------------------------------------------------- constellation


@functools.lru_cache(maxsize=None)
def _cross_qam32() -> tuple[np.ndarray, np.ndarray]:
    """Cross 32-QAM with a quasi-Gray labelling.

    No Gray labelling exists for the cross. A Gray-labelled 8 x 4 rectangle is
    folded instead: its two outer columns move onto the top and bottom rows,
    so only the folded points break the one-bit-per-neighbour rule.
    """
    points, labels = [], []
    for col, i in enumerate((-7, -5, -3, -1, 1, 3, 5, 7)):
        for row, q in enumerate((-3, -1, 1, 3)):
            labels.append(((row ^ (row >> 1)) << 3) | (col ^ (col >> 1)))
            x, y = i, q
            if abs(i) == 7:
                x, y = math.copysign(1 if abs(q) == 1 else 3, i), math.copysign(5, q)
            points.append(complex(x, y))
    pts = np.array(points)
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return pts, np.array(labels)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy point set with bit labels."""

    name: str
    points: np.ndarray = field(repr=False, compare=False)
    labels: np.ndarray = field(repr=False, compare=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.points.size)))

    def map(self, indices) -> np.ndarray:
        return self.points[np.asarray(indices)]

    def random_indices(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.points.size, size=shape)

    def decide(self, y) -> np.ndarray:
        """Nearest-point hard decisions, returned as point indices."""
        y = np.asarray(y)
        return np.argmin(np.abs(y[..., None] - self.points), axis=-1)


def get_constellation(name: str) -> Constellation:
    if name.lower() in ("32qam", "qam32", "32-qam"):
        pts, labels = _cross_qam32()
        return Constellation("32qam", pts, labels)
    raise InvalidArgumentError(f"unknown constellation {name!r}")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ModemConfig:
    """Transceiver parameters.

    ``eta = 1 + bandwidth * guard_time / n_carriers`` ties the overhead ratio to
    the guard interval; use :meth:`from_eta` to derive ``n_carriers``.

    Parameters
    ----------
    n_carriers : int
        Subcarriers per polarisation.
    eta : float
        Symbol duration over useful duration, ``(T0 + TG) / T0``.
    oversampling : int
    bandwidth : float
        Hz.
    constellation : str
    power_scale : float
        Amplitude multiplier applied in the subcarrier domain.
    modulation : Modulation
    pdc_enabled : bool
        Pre-rotate the spectrum by part of the link dispersion.
    pdc_split : float
        Fraction of the link's dispersion pre-compensated at the transmitter.
    rx_band : float
        Fraction of the conjugate grid evaluated by the receiver's forward
        NFT, centred on zero. The remaining points are treated as empty.
    """

    n_carriers: int = 70
    eta: float = 4.0
    oversampling: int = 8
    bandwidth: float = 56e9
    constellation: str = "32qam"
    power_scale: float = 1.0
    modulation: Modulation = Modulation.B
    pdc_enabled: bool = True
    pdc_split: float = 0.5
    rx_band: float = 1.0

    def __post_init__(self):
        if self.eta <= 1:
            raise InvalidArgumentError(f"eta must exceed one, got {self.eta}")
        if self.n_carriers < 1 or self.oversampling < 1:
            raise InvalidArgumentError("n_carriers and oversampling must be positive")
        if not self.power_scale > 0:
            raise InvalidArgumentError("power_scale must be positive")
        if not 0 < self.rx_band <= 1:
            raise InvalidArgumentError("rx_band must lie in (0, 1]")
        if not isinstance(self.modulation, Modulation):
            object.__setattr__(self, "modulation", Modulation(self.modulation))

    @classmethod
    def from_eta(cls, eta, guard_time: float = GUARD_TIME, bandwidth: float = 56e9, **kwargs) -> "ModemConfig":
        """Config whose carrier count fills ``guard_time`` at overhead ``eta``.

        ``eta`` is read as a ratio with a denominator of at most 10, so 1.33
        means 4/3. A non-integral carrier count raises.
        """
        ratio = Fraction(str(eta)).limit_denominator(10)
        product = Fraction(bandwidth * guard_time).limit_denominator(1000)
        if ratio <= 1:
            raise InvalidArgumentError(f"eta must exceed one, got {eta}")
        n_carriers = product / (ratio - 1)
        if n_carriers.denominator != 1:
            raise InvalidArgumentError(f"eta={eta} gives a non-integral carrier count {float(n_carriers):.3f}")
        return cls(n_carriers=int(n_carriers), eta=float(ratio), bandwidth=bandwidth, **kwargs)

    @property
    def guard_time(self) -> float:
        return (self.eta - 1) * self.n_carriers / self.bandwidth

    @property
    def useful_duration(self) -> float:
        """``T0 = N_C / W``."""
        return self.n_carriers / self.bandwidth

    @property
    def symbol_duration(self) -> float:
        return self.eta * self.useful_duration

    @property
    def n_base(self) -> int:
        """Samples in the useful part of the symbol."""
        return self.n_carriers + self.n_upsample_pad

    @property
    def n_upsample_pad(self) -> int:
        return even_ceil(self.n_carriers * (self.oversampling - 1))

    @property
    def n_guard_pad(self) -> int:
        if self.eta >= 2:
            return even_ceil(self.n_base * (self.eta - 1))
        return self.n_base

    @property
    def n_total(self) -> int:
        """Samples of the synthesised (pre-truncation) window."""
        return self.n_base + self.n_guard_pad

    @property
    def n_transmitted(self) -> int:
        """Samples actually launched; smaller than ``n_total`` when eta < 2."""
        if self.eta >= 2:
            return self.n_total
        return min(self.n_total, even_ceil(self.n_base * self.eta))

    def dt(self) -> float:
        return 1 / (self.oversampling * self.bandwidth)

    def carrier_constellation(self) -> Constellation:
        return get_constellation(self.constellation)


def guard_interval(link: LinkConfig) -> float:
    """Dispersive spread ``pi * W * |beta2| * L`` that the guard must absorb."""
    return math.pi * link.bandwidth * abs(link.beta2) * link.length_m


def check_grid(cfg: ModemConfig, link: LinkConfig):
    if not math.isclose(cfg.bandwidth, link.bandwidth) or cfg.oversampling != link.oversampling:
        raise InvalidArgumentError("modem and link disagree on bandwidth or oversampling")


# ---------------------------------------------------------------- subcarrier maps


def build_u(x, cfg: ModemConfig) -> np.ndarray:
    """Subcarrier vector: upsample in time, add the guard, return to frequency.

    Parameters
    ----------
    x : array_like, shape (..., 2, n_carriers)

    Returns
    -------
    ndarray, shape (..., 2, n_total)
        Ordered by ascending linear frequency, zero frequency at ``n_total // 2``.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] != cfg.n_carriers:
        raise InvalidArgumentError(f"expected {cfg.n_carriers} symbols per polarisation, got {x.shape[-1]}")
    d = idft_centered(pad_symmetric(x, cfg.n_upsample_pad))
    return dft_centered(pad_symmetric(d, cfg.n_guard_pad))


def demap_u(u, cfg: ModemConfig) -> np.ndarray:
    """Mirror of :func:`build_u`: drop the guard, downsample, return symbols."""
    u = np.asarray(u)
    d = crop_centre(idft_centered(u), u.shape[-1] - cfg.n_guard_pad)
    return crop_centre(dft_centered(d), cfg.n_carriers)


def flip_frequency(v) -> np.ndarray:
    """Reorder between ascending linear frequency and ascending nonlinear frequency.

    With ``lam = -pi f T_n`` the bin at index ``k`` moves to ``(n - k) % n``.
    The map is its own inverse.
    """
    return np.roll(np.asarray(v)[..., ::-1], 1, axis=-1)


def gamma_c(u) -> np.ndarray:
    """Per-component map with ``|qc|^2 = exp(|u|^2) - 1``; phases are kept."""
    u = np.asarray(u)
    return u * _sqrt_expm1_ratio(np.abs(u) ** 2)


def gamma_c_inverse(qc) -> np.ndarray:
    qc = np.asarray(qc)
    mag2 = np.abs(qc) ** 2
    return qc * _sqrt_ratio(np.log1p(mag2), mag2)


def gamma_b(u) -> tuple[np.ndarray, np.ndarray]:
    """Joint map with ``|b|^2 = 1 - exp(-|u|^2)`` and ``a`` from the Hilbert phase.

    ``a`` is built from ``log|a| = -|u|^2 / 2`` directly, so it stays exact
    where ``|b|`` rounds to one.

    ``u`` must be ordered along ascending nonlinear frequency because ``a`` is
    reconstructed across the grid.

    Returns
    -------
    b : ndarray, shape (2, n)
    a : ndarray, shape (n,)
    """
    u = np.asarray(u)
    x = np.sum(np.abs(u) ** 2, axis=-2, keepdims=True)
    b = u * _sqrt_ratio(-np.expm1(-x), x)
    return b, a_from_log_modulus(-0.5 * x[..., 0, :])


def gamma_b_inverse(b, ceiling: float = B_NORM2_CEILING) -> tuple[np.ndarray, int]:
    """Invert :func:`gamma_b`, clamping ``|b|^2`` below one.

    Returns
    -------
    u : ndarray
    n_clamped : int
        Grid points whose ``|b|^2`` had to be clamped.
    """
    b = np.asarray(b)
    norm2 = np.sum(np.abs(b) ** 2, axis=-2, keepdims=True)
    over = norm2 > ceiling
    n_clamped = int(np.count_nonzero(over))
    clamped = np.minimum(norm2, ceiling)
    x = -np.log1p(-clamped)
    u = b * _sqrt_ratio(x, norm2)
    return u, n_clamped


def _sqrt_ratio(num, den):
    """sqrt(num / den) with the removable singularity at zero set to one."""
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, np.sqrt(num / safe), 1.0)


def _sqrt_expm1_ratio(x):
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.sqrt(np.expm1(x) / safe), 1.0)


# ---------------------------------------------------------------- transmitter


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """All intermediate products of one transmitted symbol."""

    data: np.ndarray
    u: np.ndarray
    spectrum: NonlinearSpectrum
    time_signal: DualPolSignal
    rng_label: tuple = ()


def normalised_dt(cfg: ModemConfig, link: LinkConfig) -> float:
    return cfg.dt() / link.time_scale


def spectrum_grid(cfg: ModemConfig, link: LinkConfig) -> SpectrumGrid:
    return SpectrumGrid.conjugate(cfg.n_total, normalised_dt(cfg, link))


def pdc_distance(cfg: ModemConfig) -> float:
    """Normalised distance pre-applied at the transmitter.

    The channel evolves the spectrum over ``ell = -1``; the transmitter applies
    ``+pdc_split`` of it in advance.
    """
    return cfg.pdc_split if cfg.pdc_enabled else 0.0


def apply_pdc(spec: NonlinearSpectrum, cfg: ModemConfig) -> NonlinearSpectrum:
    return evolve_spectrum(spec, pdc_distance(cfg))


def shape_spectrum(x, cfg: ModemConfig, link: LinkConfig, power_scale: float | None = None):
    """Symbols to the nonlinear spectrum launched by the transmitter (before PDC).

    Returns
    -------
    u : ndarray, shape (2, n_total)
        Scaled subcarrier vector in nonlinear-frequency order.
    spectrum : NonlinearSpectrum
    """
    scale = cfg.power_scale if power_scale is None else power_scale
    u = flip_frequency(build_u(x, cfg)) * scale
    grid = spectrum_grid(cfg, link)
    if cfg.modulation is Modulation.B:
        b, a = gamma_b(u)
        return u, NonlinearSpectrum(grid, b, a)
    return u, NonlinearSpectrum(grid, qc=gamma_c(u), representation=Representation.QC)


def spectrum_energy(spec: NonlinearSpectrum) -> float:
    """Normalised energy through the nonlinear Parseval identity."""
    if spec.representation is Representation.QC:
        norm2 = np.sum(np.abs(spec.qc) ** 2, axis=0)
        return float(np.sum(np.log1p(norm2)) * spec.grid.d_lambda / math.pi)
    return nonlinear_energy(spec)


def modulate(x, cfg: ModemConfig, link: LinkConfig, power_scale: float | None = None, rng_label=()) -> SymbolFrame:
    """Synthesise one NFDM symbol.

    Parameters
    ----------
    x : array_like, shape (2, n_carriers)
        Constellation points.

    Returns
    -------
    SymbolFrame
        ``time_signal`` is physical and lasts ``n_transmitted`` samples.
    """
    check_grid(cfg, link)
    x = np.asarray(x, dtype=complex)
    u, spec = shape_spectrum(x, cfg, link, power_scale)
    launched = apply_pdc(spec, cfg)
    q = inverse_nft(launched, cfg.n_total, normalised_dt(cfg, link))
    sig = denormalise(q, link)
    if cfg.n_transmitted < cfg.n_total:
        sig = truncate(sig, cfg.n_transmitted)
    return SymbolFrame(x, u, launched, sig, tuple(rng_label))


def truncate(sig: DualPolSignal, n_keep: int) -> DualPolSignal:
    start = (sig.n_samples - n_keep) // 2
    return sig.with_samples(crop_centre(sig.samples, n_keep), t0=sig.t0 + start * sig.dt)


def zero_extend(sig: DualPolSignal, n_total: int) -> DualPolSignal:
    pad = n_total - sig.n_samples
    return sig.with_samples(pad_symmetric(sig.samples, pad), t0=sig.t0 - pad // 2 * sig.dt)


def transmit(x, cfg: ModemConfig, link: LinkConfig, target_power_dbm: float | None = None) -> DualPolSignal:
    """Physical launch signal, optionally calibrated to a launch power per polarisation."""
    if target_power_dbm is not None:
        cfg = replace(cfg, power_scale=calibrate_power_scale(cfg, link, target_power_dbm))
    return modulate(x, cfg, link).time_signal


# ---------------------------------------------------------------- power calibration


@dataclass(frozen=True)
class Calibration:
    power_scale: float
    measured_dbm: float
    iterations: int
    retained_fraction: float


def ensemble_power(
    cfg: ModemConfig, link: LinkConfig, scale: float, symbols: np.ndarray, n_synthesised: int
) -> tuple[float, float]:
    """Average launch power per polarisation in watts, and the truncation loss factor.

    The energy of each symbol comes from the nonlinear Parseval identity. When
    the transmitter truncates, the retained energy fraction is measured by
    synthesising the first ``n_synthesised`` symbols.
    """
    energies = []
    for x in symbols:
        _, spec = shape_spectrum(x, cfg, link, scale)
        energies.append(spectrum_energy(spec))
    energy_norm = float(np.mean(energies))
    retained = 1.0
    if cfg.n_transmitted < cfg.n_total and n_synthesised > 0:
        kept, total = 0.0, 0.0
        for x in symbols[:n_synthesised]:
            _, spec = shape_spectrum(x, cfg, link, scale)
            q = inverse_nft(apply_pdc(spec, cfg), cfg.n_total, normalised_dt(cfg, link)).samples
            total += np.sum(np.abs(q) ** 2)
            kept += np.sum(np.abs(crop_centre(q, cfg.n_transmitted)) ** 2)
        retained = kept / total if total > 0 else 1.0
    joules = energy_norm * retained * link.amplitude_scale**2 * link.time_scale
    return joules / 2 / cfg.symbol_duration, retained


@functools.lru_cache(maxsize=256)
def calibrate(
    cfg: ModemConfig,
    link: LinkConfig,
    target_power_dbm: float,
    n_symbols: int = 500,
    n_synthesised: int = 4,
    tolerance_db: float = 0.01,
    max_iterations: int = 20,
    seed: int = 0,
) -> Calibration:
    """Find the ``power_scale`` giving the requested average launch power.

    Secant iteration on the launch power in dB versus the scale in dB.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xCA1,)))
    const = cfg.carrier_constellation()
    symbols = const.map(const.random_indices(rng, (n_symbols, 2, cfg.n_carriers)))

    def miss(scale_db):
        power, retained = ensemble_power(cfg, link, 10 ** (scale_db / 20), symbols, n_synthesised)
        return float(watt_to_dbm(power)) - target_power_dbm, retained

    # Without truncation the launch power in dB rises one-for-one with the scale
    # in dB, for both maps: start from that guess.
    s0 = 0.0
    f0, retained = miss(s0)
    s1 = s0 - f0
    for iteration in range(1, max_iterations + 1):
        f1, retained = miss(s1)
        if abs(f1) < tolerance_db:
            return Calibration(10 ** (s1 / 20), target_power_dbm + f1, iteration, retained)
        slope = (f1 - f0) / (s1 - s0) if s1 != s0 else 1.0
        if f1 < 0 and slope < SATURATION_SLOPE:
            # truncation discards the extra energy: the power has levelled off
            ceiling = target_power_dbm + max(f0, f1)
            raise UnreachablePowerError(
                f"{target_power_dbm} dBm is out of reach; launch power saturates near {ceiling:.2f} dBm",
                ceiling,
            )
        if not slope > 0:
            slope = 1.0
        s0, f0 = s1, f1
        s1 = s1 - float(np.clip(f1 / slope, -MAX_CALIBRATION_STEP_DB, MAX_CALIBRATION_STEP_DB))
    raise ConvergenceError(f"power calibration for {target_power_dbm} dBm did not converge")


def calibrate_power_scale(cfg: ModemConfig, link: LinkConfig, target_power_dbm: float, **kwargs) -> float:
    return calibrate(replace(cfg, power_scale=1.0), link, float(target_power_dbm), **kwargs).power_scale


def symbol_energy(power_dbm: float, cfg: ModemConfig) -> float:
    """Energy per polarisation of one symbol at the given average power."""
    return float(dbm_to_watt(power_dbm)) * cfg.symbol_duration


# ---------------------------------------------------------------- receiver


@dataclass(frozen=True, eq=False)
class Reception:
    """Receiver output for one frame."""

    symbols: np.ndarray
    n_clamped: int
    unimodularity_error: float


def receive(sig: DualPolSignal, cfg: ModemConfig, link: LinkConfig, ell_channel: float = -1.0) -> Reception:
    """Recover the subcarrier symbols of one frame.

    Parameters
    ----------
    sig : DualPolSignal
        Physical received field, ``n_transmitted`` samples.
    ell_channel : float
        Normalised distance the spectrum evolved over in the channel:
        -1 after the full link, 0 back-to-back.
    """
    check_grid(cfg, link)
    if sig.n_samples != cfg.n_transmitted:
        raise InvalidArgumentError(f"expected {cfg.n_transmitted} samples, got {sig.n_samples}")
    if sig.n_samples < cfg.n_total:
        sig = zero_extend(sig, cfg.n_total)
    q = normalise(sig, link)
    q = q.with_samples(q.samples, t0=centred_t0(cfg.n_total, q.dt))
    full = spectrum_grid(cfg, link)
    n_band = min(full.n_points, even_ceil(cfg.rx_band * full.n_points))
    grid = full.centred_subset(n_band)
    result = forward_nft(q, grid)
    spec = evolve_spectrum(result.spectrum, -(ell_channel + pdc_distance(cfg)))

    if cfg.modulation is Modulation.B:
        u_band, n_clamped = gamma_b_inverse(spec.b)
    else:
        norm2 = np.sum(np.abs(spec.b) ** 2, axis=0)
        n_clamped = int(np.count_nonzero(norm2 > B_NORM2_CEILING))
        a = spec.a
        if np.any(np.abs(a) < 1e-12):
            raise NumericalDomainError("received |a| vanishes")
        u_band = gamma_c_inverse(spec.b / a)
    u = np.zeros((2, full.n_points), complex)
    u[:, full.subset_slice(grid)] = u_band
    y = demap_u(flip_frequency(u) / cfg.power_scale, cfg)
    return Reception(y, n_clamped, result.unimodularity_error)
