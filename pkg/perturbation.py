"""
Perturbative machinery in the site-environment coupling kappa.

Interaction picture with respect to H0 = Delta/2 sz + J/2 sx + nu_eff a^dagger a:

    V~(s) = kappa/2 sz~(s) (a exp(-i nu s) + a^dagger exp(+i nu s))
    sz~(s) = f_x(s) sx + f_y(s) sy + f_z(s) sz

f_x, f_y, f_z are the components of a unit Bloch vector rotating about
(J, 0, Delta)/Omega, Omega = sqrt(Delta^2 + J^2). They are normalised so that
sz~(0) = sz; the signs follow from direct conjugation exp(iH0 t) sz exp(-iH0 t).
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from pyvaet import InteractionPictureError, ParameterError, Site, StepSizeError
from model import build_reduced_hamiltonian
from propagator import EigenPropagator, StateVector

logger = logging.getLogger(__name__)

# below this |x| [rad/ms] the resonance integral uses its series expansion
X_TOLERANCE = 1e-9
# Dyson grid must resolve the fastest frequency with this many points per period
POINTS_PER_PERIOD = 50
RICHARDSON_TOLERANCE = 1e-4
PROBABILITY_SLACK = 1e-9

SIGMA_Y = np.array([[0.0, -1j], [1j, 0.0]])


@dataclass(frozen=True)
class BlochCoefficients:
    """components of sz~(t) at time(s) t; dimensionless"""
    t: np.ndarray
    f_x: np.ndarray
    f_y: np.ndarray
    f_z: np.ndarray
    omega: float

    def norm_squared(self):
        return self.f_x ** 2 + self.f_y ** 2 + self.f_z ** 2


@dataclass(frozen=True)
class ResonanceIntegrals:
    """F^pm_alpha(t) = kappa/2 int_0^t f_alpha(s) exp(+-i nu_eff s) ds"""
    t: np.ndarray
    plus_x: np.ndarray
    plus_y: np.ndarray
    plus_z: np.ndarray
    minus_x: np.ndarray
    minus_y: np.ndarray
    minus_z: np.ndarray

    def as_dict(self):
        return {'F+x': self.plus_x, 'F+y': self.plus_y, 'F+z': self.plus_z,
                'F-x': self.minus_x, 'F-y': self.minus_y, 'F-z': self.minus_z}


@dataclass(frozen=True, eq=False)
class DysonResult:
    """
    truncated-Dyson P_acc; raw values are kept because they stop being
    probabilities once the expansion fails
    """
    order: int
    dt: float
    times: np.ndarray
    p_acc_raw: np.ndarray
    converged: bool = True
    richardson_deviation: float = 0.0
    n_max: int = field(default=0)

    @property
    def p_acc(self):
        return np.clip(self.p_acc_raw, 0.0, 1.0)

    @property
    def nonphysical(self):
        return (self.p_acc_raw > 1 + PROBABILITY_SLACK) | (self.p_acc_raw < -PROBABILITY_SLACK)


def _require_gap(params):
    omega = params.omega
    if omega == 0:
        raise InteractionPictureError('interaction picture undefined, Omega=0 (J = Delta = 0)')
    return omega


def bloch_coefficients(params, t):
    omega = _require_gap(params)
    t = np.asarray(t, dtype=float)
    c = np.cos(omega * t)
    s = np.sin(omega * t)
    along = params.delta / omega
    f_x = (params.J * params.delta / omega ** 2) * (1.0 - c)
    f_y = (params.J / omega) * s
    f_z = c + along ** 2 * (1.0 - c)
    return BlochCoefficients(t, f_x, f_y, f_z, omega)


def _fourier_terms(params):
    """f_alpha(s) = sum c exp(i w s); returns alpha -> [(c, w)]"""
    omega = _require_gap(params)
    J, delta = params.J, params.delta
    mixed = J * delta / omega ** 2
    return {
        'x': [(mixed, 0.0), (-0.5 * mixed, omega), (-0.5 * mixed, -omega)],
        'y': [(-0.5j * J / omega, omega), (0.5j * J / omega, -omega)],
        'z': [((delta / omega) ** 2, 0.0), (0.5 * (J / omega) ** 2, omega), (0.5 * (J / omega) ** 2, -omega)],
    }


def exp_integral(x, t):
    """E(x, t) = int_0^t exp(i x s) ds, series expansion for |x| <= X_TOLERANCE"""
    t = np.asarray(t, dtype=float)
    if abs(x) <= X_TOLERANCE:
        return t * (1.0 + 0.5j * x * t)
    # (exp(ixt) - 1)/(ix) without cancellation
    return (np.sin(x * t) + 2j * np.sin(0.5 * x * t) ** 2) / x


def resonance_integrals(params, t):
    t = np.asarray(t, dtype=float)
    terms = _fourier_terms(params)
    prefactor = 0.5 * params.kappa
    values = {}
    for sign, label in ((1, 'plus'), (-1, 'minus')):
        for alpha, series in terms.items():
            total = np.zeros(t.shape, dtype=complex)
            for c, w in series:
                total = total + c * exp_integral(w + sign * params.nu_eff, t)
            values[f'{label}_{alpha}'] = prefactor * total
    return ResonanceIntegrals(t, **values)


def resonance_frequencies(params, k_max):
    """nu_eff values +-Omega/k, k = 1..k_max, where k quanta bridge the dressed gap"""
    if int(k_max) != k_max or k_max < 1:
        raise ParameterError(f'k_max must be an integer >= 1, got {k_max!r}')
    omega = params.omega
    frequencies = []
    for k in range(1, int(k_max) + 1):
        frequencies.extend((omega / k, -omega / k))
    return frequencies


def vaet_rate(params):
    """single-phonon transfer rate J kappa / (2 |Delta|) of the large-Delta regime [rad/ms]"""
    if params.delta == 0:
        raise ParameterError('transfer rate needs Delta != 0')
    return params.J * params.kappa / (2.0 * abs(params.delta))


def max_dyson_step(params):
    fastest = max(params.omega, abs(params.nu_eff))
    return 2 * math.pi / fastest / POINTS_PER_PERIOD


def _dyson_grid(t_grid, dt):
    t_max = float(t_grid[-1]) if t_grid.size else 0.0
    steps = max(1, math.ceil(t_max / dt))
    grid = np.unique(np.concatenate(([0.0], np.linspace(0.0, t_max, steps + 1), t_grid)))
    return grid, np.searchsorted(grid, t_grid)


def _coupling(params, grid, n_max):
    """V~(s) as a function acting on psi[j, n, s] sampled on grid"""
    bloch = bloch_coefficients(params, grid)
    # site matrices f_x sx + f_y sy + f_z sz for every grid point
    site = np.empty((grid.size, 2, 2), dtype=complex)
    site[:, 0, 0] = bloch.f_z
    site[:, 1, 1] = -bloch.f_z
    site[:, 0, 1] = bloch.f_x - 1j * bloch.f_y
    site[:, 1, 0] = bloch.f_x + 1j * bloch.f_y
    lower = np.exp(-1j * params.nu_eff * grid)[:, None, None]
    raise_amp = np.sqrt(np.arange(1, n_max + 1, dtype=float))[None, :, None]
    half_kappa = 0.5 * params.kappa

    def apply(psi):
        boson = np.zeros_like(psi)
        # a |n+1> = sqrt(n+1) |n>, a^dagger |n-1> = sqrt(n) |n>
        boson[:, :-1, :] += lower * raise_amp * psi[:, 1:, :]
        boson[:, 1:, :] += np.conj(lower) * raise_amp * psi[:, :-1, :]
        return half_kappa * np.einsum('jab,jnb->jna', site, boson)
    return apply


def dyson_states(params, n_max, n0, t_grid, order, dt):
    """
    interaction-picture states sum_{k<=K} psi^(k)(t) for K = 0..order, starting from |DS, n0>
    psi^(k)(t) = -i int_0^t V~(s) psi^(k-1)(s) ds by cumulative trapezoid
    returns array (order+1, len(t_grid), n_max+1, 2)
    """
    if order not in (1, 2):
        raise ParameterError(f'order must be 1 or 2, got {order!r}')
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and (t_grid[0] < 0 or np.any(np.diff(t_grid) <= 0)):
        raise ParameterError('t_grid must be non-negative and strictly increasing')
    required = max_dyson_step(params)
    if dt > required:
        raise StepSizeError(f'Dyson grid step {dt:.6g} ms does not resolve the fastest frequency', required)

    grid, picks = _dyson_grid(t_grid, dt)
    apply = _coupling(params, grid, n_max)
    term = np.zeros((grid.size, n_max + 1, 2), dtype=complex)
    term[:, n0, Site.DONOR] = 1.0
    partial = term.copy()
    states = [partial[picks]]
    for _ in range(order):
        term = -1j * cumulative_trapezoid(apply(term), x=grid, axis=0, initial=0)
        partial = partial + term
        states.append(partial[picks])
    return np.stack(states)


def exact_interaction_state(params, n_max, n0, t):
    """exp(+i H0 t) exp(-i H t) |DS, n0> reshaped to (n_max+1, 2)"""
    psi0 = StateVector.fock(n_max, n0)
    full = EigenPropagator(build_reduced_hamiltonian(params, n_max)).evolve(psi0, t)
    free = EigenPropagator(build_reduced_hamiltonian(params.replace(kappa=0.0), n_max))
    return free.evolve(full, -t).amplitudes.reshape(n_max + 1, 2)


def _site_rotation(params, t):
    """exp(-i (Delta/2 sz + J/2 sx) t); the oscillator phase drops out of P_acc"""
    omega = params.omega
    c = math.cos(0.5 * omega * t)
    s = math.sin(0.5 * omega * t) / omega if omega else 0.0
    return np.array([[c - 1j * s * params.delta, -1j * s * params.J],
                     [-1j * s * params.J, c + 1j * s * params.delta]])


def _acceptor_weight(params, t_grid, states):
    """sum_n |<SD| R(t) psi_n(t)|^2 for states (T, n_max+1, 2)"""
    values = np.empty(t_grid.size)
    for k, t in enumerate(t_grid):
        row = _site_rotation(params, t)[Site.ACCEPTOR]
        values[k] = float(np.sum(np.abs(states[k] @ row) ** 2))
    return values


def _thermal_dyson(params, env, t_grid, max_order, dt):
    weights = env.weights()
    raw = np.zeros((max_order + 1, t_grid.size))
    for n0 in np.flatnonzero(weights > 0):
        states = dyson_states(params, env.n_max, int(n0), t_grid, max_order, dt)
        for order in range(max_order + 1):
            raw[order] += weights[n0] * _acceptor_weight(params, t_grid, states[order])
    return raw


def dyson_populations(params, env, t_grid, max_order=2, dt=None, check=True):
    """
    truncated-Dyson P_acc for every order 1..max_order from one expansion
    check: repeat with dt/2 and flag the run unless all orders change < RICHARDSON_TOLERANCE
    """
    t_grid = np.asarray(t_grid, dtype=float)
    _require_gap(params)
    if dt is None:
        dt = 0.5 * max_dyson_step(params)
    raw = _thermal_dyson(params, env, t_grid, max_order, dt)
    deviation, converged = 0.0, True
    if check and t_grid.size:
        fine = _thermal_dyson(params, env, t_grid, max_order, 0.5 * dt)
        deviation = float(np.max(np.abs(fine - raw)))
        converged = deviation < RICHARDSON_TOLERANCE
        if not converged:
            logger.warning('Dyson grid dt=%.4g ms not converged: halving dt changes P_acc by %.3g', dt, deviation)
    return {order: DysonResult(order, dt, t_grid, raw[order], converged, deviation, env.n_max)
            for order in range(1, max_order + 1)}


def dyson_population(params, env, t_grid, order, dt=None, check=True):
    if order not in (1, 2):
        raise ParameterError(f'order must be 1 or 2, got {order!r}')
    return dyson_populations(params, env, t_grid, order, dt, check)[order]


def departure_time(times, p_exact, p_approx, threshold=0.1):
    """first time with |p_exact - p_approx| > threshold, None if the approximation holds throughout"""
    gap = np.abs(np.asarray(p_exact, dtype=float) - np.asarray(p_approx, dtype=float))
    beyond = np.flatnonzero(gap > threshold)
    return float(np.asarray(times, dtype=float)[beyond[0]]) if beyond.size else None
