"""Detection quality and information-theoretic measurements."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.special import digamma, erfcinv, gammaln, logsumexp

from .errors import DataError, InvalidArgumentError

log = logging.getLogger(__name__)

Q_CAP_DB = 60.0
VARIANCE_FLOOR = 1e-12
EIGEN_FLOOR = 1e-15
EIGEN_TOLERANCE = -1e-10
HALF_LOG2_2PIE = 0.5 * math.log2(2 * math.pi * math.e)


@dataclass(frozen=True, eq=False)
class DetectionBatch:
    """Transmitted and received symbols, shape ``(n_frames, n_streams)``.

    Streams are the ``2 N_C`` subcarriers of both polarisations.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=complex))
        y = np.atleast_2d(np.asarray(self.y, dtype=complex))
        if x.shape != y.shape:
            raise InvalidArgumentError(f"x and y shapes differ: {x.shape} vs {y.shape}")
        if x.size == 0:
            raise InvalidArgumentError("empty detection batch")
        object.__setattr__(self, "x", x.reshape(x.shape[0], -1))
        object.__setattr__(self, "y", y.reshape(y.shape[0], -1))

    @property
    def n_frames(self) -> int:
        return self.x.shape[0]

    @property
    def n_streams(self) -> int:
        return self.x.shape[1]


def q_from_evm(evm: float) -> float:
    """``Q = -20 log10(EVM)``; an error-free batch reports ``Q_CAP_DB``."""
    return Q_CAP_DB if evm == 0 else -20 * math.log10(evm)


def evm_and_q(batch: DetectionBatch) -> tuple[float, float]:
    """RMS error vector magnitude and its Q factor in dB."""
    err = np.mean(np.abs(batch.y - batch.x) ** 2)
    ref = np.mean(np.abs(batch.x) ** 2)
    evm = math.sqrt(err / ref)
    return evm, q_from_evm(evm)


def bit_error_rate(batch: DetectionBatch, points: np.ndarray, labels: np.ndarray) -> float:
    """Hard-decision bit error rate with nearest-point decisions."""
    idx_tx = np.argmin(np.abs(batch.x[..., None] - points), axis=-1)
    idx_rx = np.argmin(np.abs(batch.y[..., None] - points), axis=-1)
    diff = labels[idx_tx] ^ labels[idx_rx]
    n_bits = int(round(math.log2(points.size)))
    errors = sum(int(np.sum((diff >> k) & 1)) for k in range(n_bits))
    return errors / (diff.size * n_bits)


def q_from_ber(ber: float) -> float:
    """Q factor in dB equivalent to a bit error rate, ``20 log10(sqrt(2) erfcinv(2 BER))``."""
    if ber <= 0:
        return Q_CAP_DB
    if ber >= 0.5:
        return -math.inf
    return 20 * math.log10(math.sqrt(2) * erfcinv(2 * ber))


def mutual_information_gaussian(batch: DetectionBatch, points: np.ndarray) -> float:
    """Achievable rate of a per-stream circular Gaussian auxiliary channel.

    Each stream (subcarrier) gets its own noise variance fitted to the
    residuals. The rate assumes equiprobable inputs and is clipped to
    ``[0, log2 |points|]``.
    """
    points = np.asarray(points)
    m = points.size
    cap = math.log2(m)
    if batch.n_frames < 100:
        log.warning("only %d samples per stream; Gaussian MI fit is coarse", batch.n_frames)
    var = np.maximum(np.mean(np.abs(batch.y - batch.x) ** 2, axis=0), VARIANCE_FLOOR)
    rates = np.empty(batch.n_streams)
    for s in range(batch.n_streams):
        y = batch.y[:, s]
        metric_tx = -np.abs(y - batch.x[:, s]) ** 2 / var[s]
        metric_all = -np.abs(y[:, None] - points[None, :]) ** 2 / var[s]
        info = (metric_tx - logsumexp(metric_all, axis=1)) / math.log(2) + cap
        rates[s] = np.mean(info)
    return float(np.clip(np.mean(rates), 0.0, cap))


def spectral_efficiency(mi_bits: float, eta: float) -> float:
    """Spectral efficiency per polarisation, ``MI / eta``."""
    if eta <= 1:
        raise InvalidArgumentError("eta must exceed one")
    return mi_bits / eta


# ---------------------------------------------------------------- entropy analysis


class Estimator(enum.Enum):
    GAUSSIAN = "gaussian"
    KNN = "knn"


@dataclass(frozen=True, eq=False)
class EntropyReport:
    """Conditional entropies of the received symbols for one input realisation.

    Entropies are in bits per real dimension.
    """

    input_realisation_id: int
    K: np.ndarray
    h_joint: float
    h_individual: float
    estimator: Estimator = Estimator.GAUSSIAN
    power_dbm: float = math.nan
    modulation: str = ""

    @property
    def gap(self) -> float:
        return self.h_individual - self.h_joint


def real_stack(y) -> np.ndarray:
    """``[Re Y, Im Y]`` along the last axis."""
    y = np.asarray(y)
    return np.concatenate([y.real, y.imag], axis=-1)


def covariance_conditional(y) -> np.ndarray:
    """Unbiased covariance of ``[Re Y, Im Y]`` over noise realisations.

    Parameters
    ----------
    y : array_like, shape (n_realisations, n_streams)
    """
    w = real_stack(np.atleast_2d(y))
    if w.shape[0] < 2:
        raise InvalidArgumentError("need at least two realisations for a covariance")
    return np.cov(w, rowvar=False, ddof=1)


def _logdet_psd(k: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(k)
    if eig.min() < EIGEN_TOLERANCE * max(1.0, abs(eig.max())):
        raise DataError(f"covariance has a negative eigenvalue {eig.min():.3e}")
    return float(np.sum(np.log2(np.maximum(eig, EIGEN_FLOOR))))


def entropy_gaussian(k, n_carriers: int | None = None) -> tuple[float, float]:
    """Joint and individual Gaussian entropies of a real covariance matrix.

    Both are normalised by the matrix dimension ``4 N_C``, giving bits per real
    dimension: the joint entropy uses ``log det(2 pi e K)`` and the individual
    one the product of the diagonal entries.
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    dim = k.shape[0]
    if n_carriers is not None and dim != 4 * n_carriers:
        raise InvalidArgumentError(f"expected a {4 * n_carriers}-dimensional covariance, got {dim}")
    if not np.allclose(k, k.T, atol=1e-12 * max(1.0, np.abs(k).max())):
        raise DataError("covariance is not symmetric")
    const = math.log2(2 * math.pi * math.e)
    h_joint = (dim * const + _logdet_psd(k)) / (2 * dim)
    diag = np.diag(k)
    if diag.min() < EIGEN_TOLERANCE:
        raise DataError("negative variance on the diagonal")
    h_ind = (dim * const + float(np.sum(np.log2(np.maximum(diag, EIGEN_FLOOR))))) / (2 * dim)
    return h_joint, h_ind


def entropy_knn(samples, k: int = 4, jitter: float = 1e-12, rng: np.random.Generator | None = None) -> float:
    """Kozachenko-Leonenko nearest-neighbour differential entropy in bits.

    Parameters
    ----------
    samples : array_like, shape (n, d)
    k : int
        Neighbour order.
    jitter : float
        Scale of the noise added to break ties between duplicated samples.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n <= k:
        raise InvalidArgumentError("need more samples than neighbours")
    if jitter > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        x = x + jitter * rng.standard_normal(x.shape)
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = np.maximum(dist[:, -1], np.finfo(float).tiny)
    log_ball = d / 2 * math.log(math.pi) - gammaln(d / 2 + 1)
    nats = digamma(n) - digamma(k) + log_ball + d * np.mean(np.log(eps))
    return float(nats / math.log(2))


def entropy_gap_ratio(y, k: int = 4) -> dict[str, float]:
    """Relative entropy gap over a group of adjacent carriers.

    ``eps = (sum_i h(Y_i) - h(Y_1..Y_n)) / sum_i h(Y_i)``, where ``h(Y_i)`` is
    the entropy of one complex carrier (two real dimensions).

    Parameters
    ----------
    y : array_like, shape (n_realisations, n_carriers)

    Returns
    -------
    dict
        ``{"gaussian": eps, "knn": eps}``.
    """
    y = np.atleast_2d(np.asarray(y))
    w = real_stack(y)
    n_c = y.shape[1]
    const = math.log2(2 * math.pi * math.e)
    cov = np.cov(w, rowvar=False, ddof=1)
    joint = 0.5 * (2 * n_c * const + _logdet_psd(cov))
    parts = []
    for i in range(n_c):
        block = cov[np.ix_([i, n_c + i], [i, n_c + i])]
        parts.append(0.5 * (2 * const + _logdet_psd(block)))
    gauss = (sum(parts) - joint) / sum(parts)

    joint_knn = entropy_knn(w, k)
    parts_knn = [entropy_knn(w[:, [i, n_c + i]], k) for i in range(n_c)]
    knn = (sum(parts_knn) - joint_knn) / sum(parts_knn)
    return {"gaussian": float(gauss), "knn": float(knn)}


def parseval_check(sig, spec) -> float:
    """Largest relative mismatch between time-domain energy and both nonlinear forms.

    Parameters
    ----------
    sig : DualPolSignal
        Normalised signal.
    spec : NonlinearSpectrum
        Its spectrum with ``a`` populated.
    """
    energy = sig.dt * float(np.sum(np.abs(sig.samples) ** 2))
    norm2 = np.sum(np.abs(spec.b) ** 2, axis=0)
    b_form = -trapezoid(np.log1p(-norm2), dx=spec.grid.d_lambda) / math.pi
    qc2 = norm2 / np.abs(spec.a) ** 2
    qc_form = trapezoid(np.log1p(qc2), dx=spec.grid.d_lambda) / math.pi
    if energy == 0:
        return float(max(abs(b_form), abs(qc_form)))
    return float(max(abs(b_form - energy), abs(qc_form - energy)) / energy)
