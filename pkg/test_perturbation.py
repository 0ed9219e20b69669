#!/usr/bin/env python3

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from pyvaet import InteractionPictureError, ParameterError, StepSizeError, TWO_PI
from model import EnvironmentSpec, ModelParams, detuned_rabi
from perturbation import (DysonResult, bloch_coefficients, departure_time, dyson_population,
                          dyson_populations, dyson_states, exact_interaction_state, exp_integral,
                          max_dyson_step, resonance_frequencies, resonance_integrals, vaet_rate)
from propagator import NOISELESS, transfer_timeseries

FIG2 = ModelParams.from_khz(1.30, 1.40, 4.56, 4.56)
# Delta = -1.278 kHz: the quoted 1.27(8) kHz, negative as in the shipped recipes
FIG3B = ModelParams.from_khz(1.27, 0.64, -1.278, -1.72)
KAPPA_SERIES = (0.32, 0.64, 1.27)

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SY = np.array([[0.0, -1j], [1j, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])

frequencies = st.floats(min_value=-TWO_PI * 10, max_value=TWO_PI * 10)


def conjugated_sigma_z(params, t):
    """components of exp(i H0 t) sz exp(-i H0 t) from a dense 2x2 exponential"""
    U = scipy.linalg.expm(-1j * t * (0.5 * params.delta * SZ + 0.5 * params.J * SX))
    rotated = U.conj().T @ SZ @ U
    return [0.5 * np.trace(sigma @ rotated).real for sigma in (SX, SY, SZ)]


def quadrature_F(params, alpha, sign, t):
    def integrand(s, part):
        f = float(getattr(bloch_coefficients(params, s), 'f_' + alpha))
        value = 0.5 * params.kappa * f * np.exp(sign * 1j * params.nu_eff * s)
        return value.imag if part else value.real
    options = dict(epsabs=1e-13, epsrel=1e-13, limit=400)
    return quad(integrand, 0.0, t, args=(0,), **options)[0] + 1j * quad(integrand, 0.0, t, args=(1,), **options)[0]


def test_bloch_identity_frame():
    b = bloch_coefficients(FIG2, 0.0)
    assert (float(b.f_x), float(b.f_y), float(b.f_z)) == (0.0, 0.0, 1.0)


def test_bloch_pure_sx_rotation():
    params = ModelParams.from_khz(1.3, 0.0, 0.0, 0.0)
    t = np.linspace(0.0, 1.0, 11)
    b = bloch_coefficients(params, t)
    assert np.allclose(b.f_z, np.cos(params.J * t), atol=1e-14)
    assert np.allclose(b.f_y, np.sin(params.J * t), atol=1e-14)
    assert np.all(b.f_x == 0.0)


def test_bloch_matches_conjugation():
    params = ModelParams.from_khz(1.27, 0.64, 1.27, -1.72)
    b = bloch_coefficients(params, 0.1)
    expected = conjugated_sigma_z(params, 0.1)
    assert np.max(np.abs(np.array([b.f_x, b.f_y, b.f_z]) - expected)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(J=st.floats(min_value=TWO_PI * 0.01, max_value=TWO_PI * 10), delta=frequencies,
       t=st.floats(min_value=0.0, max_value=5.0))
def test_bloch_conjugation_oracle(J, delta, t):
    params = ModelParams(J, 0.0, delta, 0.0)
    b = bloch_coefficients(params, t)
    assert np.max(np.abs(np.array([b.f_x, b.f_y, b.f_z]) - conjugated_sigma_z(params, t))) < 1e-10


def test_bloch_norm():
    rng = np.random.default_rng(11)
    for J, delta, t in zip(rng.uniform(0, TWO_PI * 10, 1000), rng.uniform(-TWO_PI * 10, TWO_PI * 10, 1000),
                           rng.uniform(0, 10, 1000)):
        b = bloch_coefficients(ModelParams(J, 0.0, delta, 0.0), t)
        assert abs(float(b.norm_squared()) - 1.0) < 1e-10


def test_interaction_picture_needs_gap():
    params = ModelParams.from_khz(0.0, 1.0, 0.0, 1.0)
    with pytest.raises(InteractionPictureError, match='Omega=0'):
        bloch_coefficients(params, 0.1)
    with pytest.raises(InteractionPictureError):
        resonance_integrals(params, 0.1)
    with pytest.raises(InteractionPictureError):
        dyson_population(params, EnvironmentSpec(0.0, 3), [0.1], 2)


def test_exp_integral():
    assert exp_integral(0.0, 0.5) == pytest.approx(0.5)
    x, t = 1e-10, 0.5
    assert exp_integral(x, t) == pytest.approx(t * (1 + 0.5j * x * t), abs=1e-15)
    x = 3.0
    assert exp_integral(x, t) == pytest.approx((np.exp(1j * x * t) - 1) / (1j * x), abs=1e-15)


def test_resonance_integrals_trivial():
    zero_time = resonance_integrals(FIG2, 0.0)
    assert all(abs(complex(v)) == 0.0 for v in zero_time.as_dict().values())
    no_coupling = resonance_integrals(FIG2.replace(kappa=0.0), 0.7)
    assert all(abs(complex(v)) == 0.0 for v in no_coupling.as_dict().values())


def test_resonance_integrals_conjugate_pairs():
    F = resonance_integrals(FIG2, np.linspace(0.0, 1.0, 7))
    for alpha in 'xyz':
        assert np.allclose(getattr(F, 'minus_' + alpha), np.conj(getattr(F, 'plus_' + alpha)), atol=1e-14)


@pytest.mark.parametrize('nu', [FIG2.nu_eff, FIG2.omega, -FIG2.omega, 0.0])
def test_resonance_integrals_match_quadrature(nu):
    params = FIG2.replace(nu_eff=nu)
    F = resonance_integrals(params, 0.7)
    for alpha in 'xyz':
        for sign, label in ((1, 'plus'), (-1, 'minus')):
            closed = complex(getattr(F, f'{label}_{alpha}'))
            assert abs(closed - quadrature_F(params, alpha, sign, 0.7)) < 1e-8


def test_resonant_integral_dominates_off_resonance():
    """away from nu_eff = +-Omega the F integrals stay bounded while the resonant one grows"""
    on = abs(complex(resonance_integrals(FIG2.replace(nu_eff=FIG2.omega), 0.7).minus_x))
    off = abs(complex(resonance_integrals(FIG2.replace(nu_eff=FIG2.omega + TWO_PI * 2), 0.7).minus_x))
    assert on >= 4 * off


def test_resonance_frequencies():
    nu = resonance_frequencies(ModelParams.from_khz(0.0, 0.0, 4.0, 0.0), 2)
    assert nu == pytest.approx([TWO_PI * 4, -TWO_PI * 4, TWO_PI * 2, -TWO_PI * 2])
    nu = np.array(resonance_frequencies(FIG2, 3)) / TWO_PI
    assert nu == pytest.approx([4.741, -4.741, 2.371, -2.371, 1.580, -1.580], abs=1e-3)
    fig3a = ModelParams.from_khz(1.22, 0.63, 1.226, 0.0)
    assert fig3a.omega / TWO_PI == pytest.approx(1.730, abs=1e-3)
    with pytest.raises(ParameterError):
        resonance_frequencies(FIG2, 0)


def test_vaet_rate():
    assert vaet_rate(FIG2) == pytest.approx(FIG2.J * FIG2.kappa / (2 * FIG2.delta))
    assert vaet_rate(FIG3B) > 0
    with pytest.raises(ParameterError):
        vaet_rate(FIG2.replace(delta=0.0))


def test_dyson_result_keeps_raw_values():
    result = DysonResult(2, 0.01, np.array([0.0, 0.1, 0.2]), np.array([0.5, 1.2, -0.1]))
    assert result.p_acc.tolist() == [0.5, 1.0, 0.0]
    assert result.nonphysical.tolist() == [False, True, True]


def test_dyson_without_coupling_is_detuned_rabi():
    params = FIG2.replace(kappa=0.0)
    times = np.linspace(0.0, 1.0, 21)
    results = dyson_populations(params, EnvironmentSpec(0.5, 4), times)
    expected = detuned_rabi(params.J, params.delta, times)
    for order in (1, 2):
        assert np.max(np.abs(results[order].p_acc_raw - expected)) < 1e-12
        assert results[order].converged


def test_dyson_refuses_coarse_grid():
    dt = 2 * max_dyson_step(FIG2)
    with pytest.raises(StepSizeError) as info:
        dyson_population(FIG2, EnvironmentSpec(0.0, 4), [0.1, 0.2], 2, dt=dt)
    assert info.value.required_dt == pytest.approx(max_dyson_step(FIG2))


def test_dyson_argument_validation():
    with pytest.raises(ParameterError):
        dyson_population(FIG2, EnvironmentSpec(0.0, 4), [0.1], 3)
    with pytest.raises(ParameterError):
        dyson_states(FIG2, 4, 0, [0.2, 0.1], 2, 1e-3)


def test_short_time_truncation_error_is_third_order():
    params = FIG2.replace(kappa=TWO_PI * 0.63)
    n_max = 6
    times = np.logspace(-3, -2, 6)
    errors = []
    for t in times:
        exact = exact_interaction_state(params, n_max, 0, t)
        second = dyson_states(params, n_max, 0, [t], 2, 1e-5)[2][0]
        errors.append(np.linalg.norm(exact - second))
    slope = np.polyfit(np.log(times), np.log(errors), 1)[0]
    assert 2.7 <= slope <= 3.3


def fig3b_traces(kappa_khz, times, dt=None):
    params = FIG3B.replace(kappa=TWO_PI * kappa_khz)
    env = EnvironmentSpec(0.04, 9)
    exact = transfer_timeseries(params, env, NOISELESS, times).p_acc
    second = dyson_population(params, env, times, 2, dt=dt, check=False).p_acc_raw
    return exact, second


def test_second_order_tracks_weak_coupling_at_short_times():
    times = np.linspace(0.01, 0.3, 30)
    exact, second = fig3b_traces(0.32, times)
    assert np.max(np.abs(exact - second)) < 0.05


def test_second_order_error_grows_with_kappa():
    errors = []
    for kappa in KAPPA_SERIES:
        exact, second = fig3b_traces(kappa, [0.1, 0.2], dt=max_dyson_step(FIG3B) / 8)
        errors.append(abs(exact[-1] - second[-1]))
    assert errors == sorted(errors)


def test_breakdown_happens_earlier_for_stronger_coupling():
    times = np.linspace(0.01, 3.0, 300)
    departures = []
    for kappa in KAPPA_SERIES:
        exact, second = fig3b_traces(kappa, times)
        departures.append(departure_time(times, exact, second))
    assert None not in departures
    assert departures[0] > departures[1] > departures[2]


def test_departure_time():
    times = [0.0, 1.0, 2.0, 3.0]
    assert departure_time(times, [0.0, 0.1, 0.5, 0.9], [0.0, 0.1, 0.3, 1.5]) == 2.0
    assert departure_time(times, [0.0] * 4, [0.05] * 4) is None
