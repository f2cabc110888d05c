"""Seeded experiment drivers and result persistence.

Every random draw comes from a Philox generator keyed by the experiment seed
plus a tuple naming what is drawn (data or noise, sweep point, frame, span),
so results do not depend on how frames are batched or spread over threads.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
import logging
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .channel import awgn_b2b, link_noise_power, propagate_link
from .dbp import DbpConfig, DbpScheme, backpropagate, nyquist_reference_transceiver, symbol_evm
from .errors import ConfigError, UnreachablePowerError
from .metrics import (
    DetectionBatch,
    EntropyReport,
    Estimator,
    bit_error_rate,
    covariance_conditional,
    entropy_gap_ratio,
    entropy_gaussian,
    evm_and_q,
    mutual_information_gaussian,
    q_from_ber,
    q_from_evm,
    spectral_efficiency,
)
from .modem import GUARD_TIME, ModemConfig, Modulation, calibrate_power_scale, get_constellation, modulate, receive
from .signal import DualPolSignal, LinkConfig

log = logging.getLogger(__name__)

U64 = 2**64


class Experiment(enum.Enum):
    COMPARE_B_QC = "compare_b_qc"
    ETA_SWEEP = "eta_sweep"
    ENTROPY_STUDY = "entropy_study"
    B2B_DISTORTION = "b2b_distortion"
    DBP_RESIDUAL = "dbp_residual"


# Stable integer ids used in RNG keys.
_EXPERIMENT_KEY = {e: i for i, e in enumerate(Experiment)}
_DATA, _NOISE = 0, 1

SCENARIOS = {
    Experiment.COMPARE_B_QC: {"fibre", "awgn"},
    Experiment.ETA_SWEEP: {"fibre", "awgn", "noiseless"},
    Experiment.ENTROPY_STUDY: {"awgn", "fibre"},
    Experiment.B2B_DISTORTION: {"noiseless"},
    Experiment.DBP_RESIDUAL: {"ideal_dbp", "pa_dbp"},
}

MODEM_OVERRIDES = {"guard_time", "constellation", "pdc_enabled", "pdc_split", "rx_band"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``threads`` and ``output_dir`` do not affect results and are left out of
    the configuration hash.
    """

    experiment: Experiment
    power_sweep: tuple[float, ...]
    n_frames: int
    link: LinkConfig = LinkConfig()
    modem: dict = field(default_factory=dict)
    seed: int = 0
    desk_scale: bool = True
    output_dir: str = "results"
    etas: tuple[float, ...] = (4.0,)
    modulations: tuple[str, ...] = ("b",)
    scenarios: tuple[str, ...] = ("fibre",)
    n_inputs: int = 8
    n_noise: int = 4096
    group_size: int = 10
    n_symbols: int = 2048
    rolloff: float = 0.01
    dbp_step: float | None = None
    chunk_frames: int = 8
    threads: int = 1

    def __post_init__(self):
        if not isinstance(self.experiment, Experiment):
            object.__setattr__(self, "experiment", Experiment(self.experiment))
        for name in ("power_sweep", "etas", "modulations", "scenarios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "power_sweep", tuple(float(p) for p in self.power_sweep))
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        p = self.power_sweep
        if not p:
            raise ConfigError("power_sweep must not be empty")
        if not all(math.isfinite(v) for v in p):
            raise ConfigError("power_sweep entries must be finite")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigError("power_sweep must be strictly increasing")
        if not isinstance(self.seed, int) or not 0 <= self.seed < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("n_frames", "n_inputs", "n_noise", "group_size", "n_symbols", "chunk_frames", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not self.etas or any(e <= 1 for e in self.etas):
            raise ConfigError("every eta must exceed one")
        for m in self.modulations:
            if m not in ("b", "qc"):
                raise ConfigError(f"unknown modulation {m!r}")
        bad = set(self.scenarios) - SCENARIOS[self.experiment]
        if bad or not self.scenarios:
            raise ConfigError(f"scenarios {sorted(bad)} not valid for {self.experiment.value}")
        unknown = set(self.modem) - MODEM_OVERRIDES
        if unknown:
            raise ConfigError(f"unknown modem keys {sorted(unknown)}")
        if not 0 <= self.rolloff <= 1:
            raise ConfigError("rolloff must lie in [0, 1]")

    def modem_config(self, eta: float, modulation: str = "b") -> ModemConfig:
        kwargs = dict(self.modem)
        guard = kwargs.pop("guard_time", GUARD_TIME)
        try:
            return ModemConfig.from_eta(
                eta,
                guard_time=guard,
                bandwidth=self.link.bandwidth,
                oversampling=self.link.oversampling,
                modulation=Modulation(modulation),
                **kwargs,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["experiment"] = self.experiment.value
        d["link"] = dataclasses.asdict(self.link)
        d["modem"] = dict(sorted(self.modem.items()))
        for name in ("power_sweep", "etas", "modulations", "scenarios"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "link" in d and not isinstance(d["link"], LinkConfig):
            link_fields = {f.name for f in dataclasses.fields(LinkConfig)}
            bad = set(d["link"]) - link_fields
            if bad:
                raise ConfigError(f"unknown link keys {sorted(bad)}")
            try:
                d["link"] = LinkConfig(**d["link"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("threads")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_DESK_PRESETS = {
    Experiment.COMPARE_B_QC: dict(
        power_sweep=(-8, -6, -4, -2), n_frames=200, etas=(4,), modulations=("b", "qc"),
        scenarios=("fibre", "awgn"),
    ),
    Experiment.ETA_SWEEP: dict(
        power_sweep=(-12, -10, -8, -6, -4), n_frames=100, etas=(4, 2, 1.5, 1.2), modulations=("b",),
        scenarios=("fibre",),
    ),
    Experiment.ENTROPY_STUDY: dict(
        power_sweep=(-9, -6.4, -3.75, -1), n_frames=1, etas=(2,), modulations=("b", "qc"),
        scenarios=("awgn",), n_inputs=8, n_noise=4096, modem={"rx_band": 0.15},
    ),
    Experiment.B2B_DISTORTION: dict(
        power_sweep=(-16, -11, -6, -1, 4), n_frames=10, etas=(4, 2), modulations=("b",),
        scenarios=("noiseless",),
    ),
    Experiment.DBP_RESIDUAL: dict(
        power_sweep=(-9, -6, -3, 0, 3), n_frames=1, scenarios=("ideal_dbp", "pa_dbp"), n_symbols=2048,
    ),
}

_FULL_SCALE = {
    Experiment.COMPARE_B_QC: dict(n_frames=2000, power_sweep=(-10, -8, -6, -4, -2, 0)),
    Experiment.ETA_SWEEP: dict(n_frames=1000, etas=(4, 2, 1.5, 4 / 3, 1.2)),
    Experiment.ENTROPY_STUDY: dict(n_inputs=20, n_noise=2**14, scenarios=("fibre",), modem={}),
    Experiment.B2B_DISTORTION: dict(n_frames=100),
    Experiment.DBP_RESIDUAL: dict(n_symbols=8192, power_sweep=(-9, -6, -3, 0, 3, 6)),
}


def preset(experiment: Experiment | str, desk_scale: bool = True) -> dict:
    """Default configuration keys for an experiment."""
    experiment = Experiment(experiment)
    d = dict(_DESK_PRESETS[experiment])
    if not desk_scale:
        d.update(_FULL_SCALE[experiment])
    d["experiment"] = experiment.value
    d["desk_scale"] = desk_scale
    return d


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class ResultRow:
    """One sweep point. Fields that do not apply to an experiment are ``None``."""

    experiment: str
    scenario: str
    modulation: str
    eta: float
    N_C: int
    power_dBm: float
    input_id: int | None = None
    evm: float | None = None
    Q_dB: float | None = None
    Q_ber_dB: float | None = None
    MI_bits: float | None = None
    SE_bits_per_s_Hz: float | None = None
    SE_dual_pol: float | None = None
    h_joint: float | None = None
    h_individual: float | None = None
    eps_gaussian: float | None = None
    eps_knn: float | None = None
    n_clamped: int = 0
    unimodularity_max: float = 0.0
    n_frames: int = 0
    wall_time: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"result field {f.name} is not finite: {v}")


# wall time goes to the manifest so that repeated runs give identical CSV bytes
CSV_COLUMNS = [f.name for f in dataclasses.fields(ResultRow) if f.name != "wall_time"]


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format(getattr(row, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_outputs(
    cfg: ExperimentConfig,
    rows: Sequence[ResultRow],
    wall_time: float,
    status: str = "ok",
    skipped: Sequence[dict] = (),
) -> tuple[Path, Path]:
    """Write ``<experiment>.csv`` and ``<experiment>.json`` into ``cfg.output_dir``.

    ``skipped`` lists sweep points that produced no row, with the reason.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.experiment.value
    csv_path = out / f"{name}.csv"
    csv_path.write_text(rows_to_csv(rows), encoding="utf-8")
    manifest = {
        "experiment": name,
        "status": status,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "git_revision": _git_revision(),
        "wall_time_s": wall_time,
        "row_wall_times_s": [r.wall_time for r in rows],
        "n_rows": len(rows),
        "skipped_points": list(skipped),
        "config": cfg.to_dict(),
    }
    json_path = out / f"{name}.json"
    json_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path


# ---------------------------------------------------------------- randomness and batching


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one named draw."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chunks(n: int, size: int) -> list[range]:
    return [range(i, min(n, i + size)) for i in range(0, n, size)]


def _draw_symbols(cfg: ExperimentConfig, modem: ModemConfig, key: tuple, frames: Iterable[int]) -> np.ndarray:
    const = modem.carrier_constellation()
    return np.stack([
        const.map(const.random_indices(keyed_rng(cfg.seed, *key, f), (2, modem.n_carriers)))
        for f in frames
    ])


def _stack(signals: Sequence[DualPolSignal]) -> DualPolSignal:
    return signals[0].with_samples(np.stack([s.samples for s in signals]))


def _transmit_batch(x: np.ndarray, modem: ModemConfig, link: LinkConfig, threads: int) -> DualPolSignal:
    return _stack(_map(lambda xi: modulate(xi, modem, link).time_signal, list(x), threads))


def _channel(
    sig: DualPolSignal, scenario: str, cfg: ExperimentConfig, noise_key: tuple, frames: Sequence[int]
) -> DualPolSignal:
    """Apply a scenario to a batch of frames; returns the received batch."""
    link = cfg.link
    if scenario == "noiseless":
        return sig
    if scenario == "awgn":
        rngs = [keyed_rng(cfg.seed, *noise_key, f) for f in frames]
        return awgn_b2b(sig, link_noise_power(link, sig.dt), rngs)

    def span_rngs(span):
        return [keyed_rng(cfg.seed, *noise_key, f, span) for f in frames]

    return propagate_link(sig, link, span_rngs).output


def _receive_batch(sig: DualPolSignal, modem: ModemConfig, link: LinkConfig, ell: float, threads: int):
    out = _map(lambda i: receive(sig.frame(i), modem, link, ell), list(range(sig.samples.shape[0])), threads)
    y = np.stack([r.symbols for r in out])
    return y, sum(r.n_clamped for r in out), max(r.unimodularity_error for r in out)


def _detection_row(cfg, scenario, modem, power, x, y, clamps, unimod, started, **extra) -> ResultRow:
    const = modem.carrier_constellation()
    batch = DetectionBatch(x.reshape(x.shape[0], -1), y.reshape(y.shape[0], -1))
    evm, q = evm_and_q(batch)
    mi = mutual_information_gaussian(batch, const.points)
    se = spectral_efficiency(mi, modem.eta)
    # a coin-flip bit error rate has no finite Q; leave the cell empty
    q_ber = q_from_ber(bit_error_rate(batch, const.points, const.labels))
    return ResultRow(
        experiment=cfg.experiment.value,
        scenario=scenario,
        modulation=modem.modulation.value,
        eta=modem.eta,
        N_C=modem.n_carriers,
        power_dBm=power,
        evm=evm,
        Q_dB=q,
        Q_ber_dB=q_ber if math.isfinite(q_ber) else None,
        MI_bits=mi,
        SE_bits_per_s_Hz=se,
        SE_dual_pol=2 * se,
        n_clamped=int(clamps),
        unimodularity_max=float(unimod),
        n_frames=x.shape[0],
        wall_time=time.perf_counter() - started,
        **extra,
    )


def _run_detection_point(
    cfg: ExperimentConfig, modem: ModemConfig, scenario: str, power: float, data_key: tuple, noise_key: tuple
) -> ResultRow:
    started = time.perf_counter()
    link = cfg.link
    modem = replace(modem, power_scale=calibrate_power_scale(modem, link, power))
    ell = -1.0 if scenario == "fibre" else 0.0
    xs, ys, clamps, unimod = [], [], 0, 0.0
    for chunk in _chunks(cfg.n_frames, cfg.chunk_frames):
        x = _draw_symbols(cfg, modem, data_key, chunk)
        tx = _transmit_batch(x, modem, link, cfg.threads)
        rx = _channel(tx, scenario, cfg, noise_key, list(chunk))
        y, c, u = _receive_batch(rx, modem, link, ell, cfg.threads)
        xs.append(x)
        ys.append(y)
        clamps += c
        unimod = max(unimod, u)
    return _detection_row(cfg, scenario, modem, power, np.concatenate(xs), np.concatenate(ys), clamps, unimod, started)


def _skip(on_skip, exc: UnreachablePowerError, **point):
    log.warning("skipping %s: %s", point, exc)
    if on_skip:
        on_skip(dict(point, reason=str(exc), ceiling_dBm=exc.ceiling_dbm))


def _sweep(cfg: ExperimentConfig, on_row, on_skip) -> list[ResultRow]:
    exp = _EXPERIMENT_KEY[cfg.experiment]
    rows = []
    for ei, eta in enumerate(cfg.etas):
        for mi, mod in enumerate(cfg.modulations):
            modem = cfg.modem_config(eta, mod)
            for si, scenario in enumerate(cfg.scenarios):
                for pi, power in enumerate(cfg.power_sweep):
                    # data is shared across modulations and scenarios: paired comparisons
                    data_key = (exp, _DATA, ei, pi)
                    noise_key = (exp, _NOISE, ei, mi, si, pi)
                    try:
                        row = _run_detection_point(cfg, modem, scenario, power, data_key, noise_key)
                    except UnreachablePowerError as exc:
                        _skip(on_skip, exc, scenario=scenario, modulation=mod, eta=modem.eta, power_dBm=power)
                        continue
                    log.info("%s %s eta=%g P=%g Q=%.2f", scenario, mod, eta, power, row.Q_dB)
                    rows.append(row)
                    if on_row:
                        on_row(row)
    return rows


def _expect(cfg: ExperimentConfig, experiment: Experiment):
    if cfg.experiment is not experiment:
        raise ConfigError(f"configuration is for {cfg.experiment.value}, not {experiment.value}")


# ---------------------------------------------------------------- experiments


def run_compare_b_qc(cfg: ExperimentConfig, on_row=None, on_skip=None) -> list[ResultRow]:
    """Q against launch power for both modulations, over the fibre link and noise-matched AWGN."""
    _expect(cfg, Experiment.COMPARE_B_QC)
    return _sweep(cfg, on_row, on_skip)


def run_eta_sweep(cfg: ExperimentConfig, on_row=None, on_skip=None) -> list[ResultRow]:
    """Q, MI and spectral efficiency over guard overhead and launch power."""
    _expect(cfg, Experiment.ETA_SWEEP)
    for eta in cfg.etas:
        cfg.modem_config(eta)
    return _sweep(cfg, on_row, on_skip)


def run_b2b_distortion(cfg: ExperimentConfig, on_row=None, on_skip=None) -> list[ResultRow]:
    """Noiseless transmitter-to-receiver loopback against symbol energy."""
    _expect(cfg, Experiment.B2B_DISTORTION)
    return _sweep(cfg, on_row, on_skip)


def _adjacent_carriers(n_carriers: int, group: int) -> np.ndarray:
    """Indices of ``group`` adjacent carriers around the centre of polarisation 1."""
    group = min(group, n_carriers)
    start = n_carriers // 2 - group // 2
    return np.arange(start, start + group)


def run_entropy_study(
    cfg: ExperimentConfig, on_row=None, on_skip=None
) -> tuple[list[EntropyReport], list[ResultRow]]:
    """Conditional entropies of the received carriers for fixed inputs.

    For every input realisation the same transmitted symbol is sent
    ``n_noise`` times through independent noise. The conditional covariance
    over those realisations gives the joint and individual Gaussian
    entropies, and a group of adjacent carriers gives the entropy gap ratio
    with both estimators. Both use the received subcarrier amplitudes in
    normalised units, before division by the transmitter's power scale.
    """
    _expect(cfg, Experiment.ENTROPY_STUDY)
    if cfg.n_noise < 4 * cfg.modem_config(cfg.etas[0]).n_carriers:
        log.warning("fewer noise realisations than covariance dimensions; entropies are biased")
    exp = _EXPERIMENT_KEY[cfg.experiment]
    link = cfg.link
    eta = cfg.etas[0]
    reports, rows = [], []
    for mi, mod in enumerate(cfg.modulations):
        modem = cfg.modem_config(eta, mod)
        group = _adjacent_carriers(modem.n_carriers, cfg.group_size)
        for si, scenario in enumerate(cfg.scenarios):
            ell = -1.0 if scenario == "fibre" else 0.0
            for pi, power in enumerate(cfg.power_sweep):
                try:
                    scaled = replace(modem, power_scale=calibrate_power_scale(modem, link, power))
                except UnreachablePowerError as exc:
                    _skip(on_skip, exc, scenario=scenario, modulation=mod, eta=modem.eta, power_dBm=power)
                    continue
                for inp in range(cfg.n_inputs):
                    started = time.perf_counter()
                    x = _draw_symbols(cfg, scaled, (exp, _DATA, pi), [inp])[0]
                    tx = modulate(x, scaled, link).time_signal
                    noise_key = (exp, _NOISE, mi, si, pi, inp)
                    ys, clamps, unimod = [], 0, 0.0
                    for chunk in _chunks(cfg.n_noise, cfg.chunk_frames * 8):
                        batch = tx.with_samples(np.broadcast_to(tx.samples, (len(chunk),) + tx.samples.shape).copy())
                        rx = _channel(batch, scenario, cfg, noise_key, list(chunk))
                        y, c, u = _receive_batch(rx, scaled, link, ell, cfg.threads)
                        ys.append(y)
                        clamps += c
                        unimod = max(unimod, u)
                    y = np.concatenate(ys)
                    # entropies refer to the received carriers before the power de-scaling,
                    # where the additive noise has a fixed absolute level
                    absolute = y * scaled.power_scale
                    k = covariance_conditional(absolute.reshape(y.shape[0], -1))
                    h_joint, h_ind = entropy_gaussian(k, modem.n_carriers)
                    eps = entropy_gap_ratio(absolute[:, 0, group])
                    report = EntropyReport(inp, k, h_joint, h_ind, Estimator.GAUSSIAN, power, mod)
                    reports.append(report)
                    xs = np.broadcast_to(x, y.shape)
                    row = _detection_row(
                        cfg, scenario, scaled, power, xs, y, clamps, unimod, started,
                        input_id=inp, h_joint=h_joint, h_individual=h_ind,
                        eps_gaussian=eps["gaussian"], eps_knn=eps["knn"],
                    )
                    log.info("%s P=%g input=%d gap=%.4g", mod, power, inp, report.gap)
                    rows.append(row)
                    if on_row:
                        on_row(row)
    return reports, rows


def run_dbp_residual(cfg: ExperimentConfig, on_row=None, on_skip=None) -> list[ResultRow]:
    """Residual error of ideal and path-averaged back-propagation on a noiseless link.

    A periodic root-raised-cosine 32-QAM signal crosses the lossy link
    without noise. Ideal back-propagation inverts the lossy link and
    path-averaged back-propagation inverts its lossless integrable model; the
    EVM left after each measures the model mismatch.
    """
    _expect(cfg, Experiment.DBP_RESIDUAL)
    exp = _EXPERIMENT_KEY[cfg.experiment]
    link = cfg.link
    step = cfg.dbp_step if cfg.dbp_step is not None else link.ssfm_step
    const = get_constellation(cfg.modem.get("constellation", "32qam"))
    silent = replace(link, noise_figure=-math.inf)
    rows = []
    for pi, power in enumerate(cfg.power_sweep):
        started = time.perf_counter()
        data = const.map(const.random_indices(keyed_rng(cfg.seed, exp, _DATA, pi), (2, cfg.n_symbols)))
        tx, detect = nyquist_reference_transceiver(data, link, power, cfg.rolloff)
        rx = propagate_link(tx, silent).output
        for scenario in cfg.scenarios:
            scheme = DbpScheme.IDEAL if scenario == "ideal_dbp" else DbpScheme.PATH_AVERAGED
            y = detect(backpropagate(rx, DbpConfig(scheme, step, link)))
            evm = symbol_evm(data, y)
            row = ResultRow(
                experiment=cfg.experiment.value,
                scenario=scenario,
                modulation="nyquist",
                eta=1.0,
                N_C=0,
                power_dBm=power,
                evm=evm,
                Q_dB=q_from_evm(evm),
                n_frames=1,
                wall_time=time.perf_counter() - started,
            )
            log.info("%s P=%g EVM=%.3g", scenario, power, evm)
            rows.append(row)
            if on_row:
                on_row(row)
    return rows


RUNNERS = {
    Experiment.COMPARE_B_QC: run_compare_b_qc,
    Experiment.ETA_SWEEP: run_eta_sweep,
    Experiment.ENTROPY_STUDY: lambda cfg, on_row=None, on_skip=None: run_entropy_study(cfg, on_row, on_skip)[1],
    Experiment.B2B_DISTORTION: run_b2b_distortion,
    Experiment.DBP_RESIDUAL: run_dbp_residual,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list[ResultRow]:
    """Run an experiment and persist its CSV and manifest.

    Rows finished before a failure are still written, with the manifest
    status set to ``"failed"``. Sweep points whose launch power the
    transmitter cannot reach are skipped and listed in the manifest.
    """
    rows: list[ResultRow] = []
    skipped: list[dict] = []
    started = time.perf_counter()
    try:
        RUNNERS[cfg.experiment](cfg, rows.append, skipped.append)
    except BaseException:
        if write:
            write_outputs(cfg, rows, time.perf_counter() - started, status="failed", skipped=skipped)
        raise
    if write:
        write_outputs(cfg, rows, time.perf_counter() - started, skipped=skipped)
    return rows


def default_threads() -> int:
    value = os.environ.get("NFDM_LAB_THREADS")
    if value is None:
        return 1
    try:
        n = int(value)
    except ValueError as exc:
        raise ConfigError(f"NFDM_LAB_THREADS must be an integer, got {value!r}") from exc
    if n < 1:
        raise ConfigError("NFDM_LAB_THREADS must be at least 1")
    return n
