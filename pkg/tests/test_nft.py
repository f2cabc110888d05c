import math

import numpy as np
import pytest
from oracles import random_b_spectrum, rectangle_scattering, rectangle_signal

from nfdm_lab.errors import ContractError, InvalidArgumentError, NumericalDomainError, PreconditionError
from nfdm_lab.nft import (
    NonlinearSpectrum,
    Representation,
    a_from_b,
    b_from_qc,
    centred_t0,
    evolve_spectrum,
    forward_nft,
    inverse_nft,
    nonlinear_energy,
    qc_from_b,
)
from nfdm_lab.signal import DualPolSignal, SpectrumGrid, Units

N, DT = 1120, 0.022


@pytest.mark.parametrize("a1,a2,width", [(0.8, 0.0, 1.0), (0.5 + 0.5j, -0.4j, 1.5), (2.0, 1.0, 0.6)])
def test_rectangle_matches_closed_form(a1, a2, width):
    dt = 0.004
    n = 3000
    sig, left = rectangle_signal(a1, a2, round(width / dt), n, dt)
    grid = SpectrumGrid.conjugate(n, dt)
    res = forward_nft(sig, grid, scheme="piecewise")
    a, b = rectangle_scattering(a1, a2, round(width / dt) * dt, left, grid.lambdas)
    assert np.abs(res.spectrum.a - a).max() < 1e-9
    assert np.abs(res.spectrum.b - b).max() < 1e-9


def test_al_scheme_converges_to_rectangle():
    errors = []
    for dt in (0.01, 0.005):
        n = int(8 / dt)
        sig, left = rectangle_signal(0.6, 0.3j, int(1 / dt), n, dt)
        grid = SpectrumGrid(101, 0.1, -5.0)
        res = forward_nft(sig, grid)
        _, b = rectangle_scattering(0.6, 0.3j, 1.0, left, grid.lambdas)
        errors.append(np.abs(res.spectrum.b - b).max())
    assert errors[1] < errors[0] / 3


def test_zero_signal_has_trivial_spectrum():
    sig = DualPolSignal(np.zeros((2, 64)), 0.1, centred_t0(64, 0.1), Units.NORMALISED)
    res = forward_nft(sig, SpectrumGrid.conjugate(64, 0.1))
    assert np.allclose(res.spectrum.a, 1) and np.allclose(res.spectrum.b, 0)


def test_low_amplitude_spectrum_is_linear_fourier_transform(rng):
    # for tiny q, b(lam) = -int conj(q) exp(-2j lam t) dt
    t = centred_t0(N, DT) + DT * np.arange(N)
    q = 1e-6 * np.exp(-((t - 0.3) ** 2)) * np.array([[1.0], [0.5j]])
    sig = DualPolSignal(q, DT, t[0], Units.NORMALISED)
    grid = SpectrumGrid(41, 0.1, -2.0)
    b = forward_nft(sig, grid).spectrum.b
    expect = -np.conj(q) @ np.exp(-2j * np.outer(t, grid.lambdas)) * DT
    assert np.abs(b - expect).max() < 1e-3 * np.abs(expect).max()


@pytest.mark.parametrize("seed", range(5))
def test_inverse_then_forward_round_trip(seed):
    spec = random_b_spectrum(np.random.default_rng(seed), N, DT)
    q = inverse_nft(spec, N, DT)
    res = forward_nft(q, spec.grid)
    err = np.linalg.norm(res.spectrum.b - spec.b) / np.linalg.norm(spec.b)
    assert err < 1e-3
    assert res.unimodularity_error < 1e-10


def test_parseval_both_forms(rng):
    spec = random_b_spectrum(rng, N, DT, peak=0.7)
    q = inverse_nft(spec, N, DT)
    res = forward_nft(q, spec.grid)
    energy = DT * np.sum(np.abs(q.samples) ** 2)
    assert math.isclose(nonlinear_energy(res.spectrum), energy, rel_tol=1e-3)
    qc = qc_from_b(res.spectrum).qc
    qc_energy = np.sum(np.log1p(np.sum(np.abs(qc) ** 2, axis=0))) * spec.grid.d_lambda / math.pi
    assert math.isclose(qc_energy, energy, rel_tol=1e-3)
    assert res.parseval_mismatch < 1e-3


def test_a_from_b_unimodular_and_minimum_phase(rng):
    spec = random_b_spectrum(rng, N, DT, peak=0.95)
    a = a_from_b(spec.b)
    assert np.allclose(np.abs(a) ** 2 + np.sum(np.abs(spec.b) ** 2, axis=0), 1.0)
    with pytest.raises(NumericalDomainError):
        a_from_b(np.ones((2, 8)))


def test_qc_b_conversions_invert(rng):
    spec = random_b_spectrum(rng, N, DT, peak=0.8)
    spec = NonlinearSpectrum(spec.grid, spec.b, a_from_b(spec.b))
    qc = qc_from_b(spec)
    assert qc.representation is Representation.QC
    back = b_from_qc(qc)
    assert np.allclose(back.b, spec.b, atol=1e-12)
    with pytest.raises(ContractError):
        b_from_qc(spec)
    with pytest.raises(ContractError):
        qc_from_b(qc)


def test_evolution_is_a_phase_rotation(rng):
    spec = random_b_spectrum(rng, N, DT)
    out = evolve_spectrum(spec, -0.7)
    assert np.allclose(np.abs(out.b), np.abs(spec.b))
    assert np.allclose(evolve_spectrum(out, 0.7).b, spec.b)
    assert np.allclose(out.b * np.exp(-4j * spec.lambdas**2 * 0.3), evolve_spectrum(spec, -0.4).b)


def test_inverse_rejects_wrong_grid_and_unit_norm(rng):
    spec = random_b_spectrum(rng, N, DT)
    with pytest.raises(PreconditionError):
        inverse_nft(spec, N, DT * 1.01)
    bad = NonlinearSpectrum(spec.grid, spec.b / np.abs(spec.b).max() * 1.2)
    with pytest.raises(NumericalDomainError):
        inverse_nft(bad, N, DT)


def test_inverse_of_empty_spectrum_is_zero():
    grid = SpectrumGrid.conjugate(32, 0.1)
    q = inverse_nft(NonlinearSpectrum(grid, np.zeros((2, 32), complex)), 32, 0.1)
    assert not np.any(q.samples)


def test_forward_rejects_physical_and_batched_input():
    grid = SpectrumGrid.conjugate(16, 0.1)
    with pytest.raises(ContractError):
        forward_nft(DualPolSignal(np.zeros((2, 16)), 0.1), grid)
    with pytest.raises(InvalidArgumentError):
        forward_nft(DualPolSignal(np.zeros((3, 2, 16)), 0.1, units=Units.NORMALISED), grid)
    with pytest.raises(InvalidArgumentError):
        forward_nft(DualPolSignal(np.zeros((2, 16)), 0.1, units=Units.NORMALISED), grid, scheme="magic")


def test_soliton_like_pulse_is_flagged():
    # 2 sech(t) is a pure soliton: its energy sits in the discrete spectrum
    n, dt = 2000, 0.01
    t = centred_t0(n, dt) + dt * np.arange(n)
    q = np.stack([2 / np.cosh(t), np.zeros(n)])
    res = forward_nft(DualPolSignal(q, dt, t[0], Units.NORMALISED), SpectrumGrid.conjugate(n, dt))
    assert res.eigenvalue_suspect
