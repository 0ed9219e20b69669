"""
Domain types and Hamiltonian construction for the minimal VAET model

    H = J/2 sx(d) sx(a) + Delta/2 sz(d) + kappa/2 sz(d) (a + a^dagger) + nu_eff a^dagger a

All frequencies are stored as angular frequencies in rad/ms, times in ms.
Configuration files use cyclic kHz; see ModelParams.from_khz.
Sign convention: sz|D> = +|D> on the donor, so the donor-excited state |DS>
sits at +Delta/2.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from pyvaet import (Basis, DEFAULT_DIM_CAP, ParameterError, TruncationError,
                    check_finite, khz_to_angular, angular_to_khz)

logger = logging.getLogger(__name__)

DEFAULT_TAIL_EPSILON = 1.0e-6
MIN_HEADROOM = 5

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
# reduced manifold: s=0 |DS> (+1), s=1 |SD> (-1)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
# single ion in (S, D) ordering, D carries +1
SIGMA_Z_ION = np.array([[-1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ModelParams:
    """
    the four Hamiltonian parameters [rad/ms]
    J and kappa are magnitudes; the signs of delta and nu_eff carry the physics
    """
    J: float
    kappa: float
    delta: float
    nu_eff: float

    def __post_init__(self):
        for name in ('J', 'kappa', 'delta', 'nu_eff'):
            object.__setattr__(self, name, check_finite(name, getattr(self, name)))
        if self.J < 0:
            raise ParameterError(f'J must be >= 0, got {self.J!r}')
        if self.kappa < 0:
            raise ParameterError(f'kappa must be >= 0, got {self.kappa!r}')

    @classmethod
    def from_khz(cls, j_khz, kappa_khz, delta_khz, nu_eff_khz):
        return cls(khz_to_angular(j_khz), khz_to_angular(kappa_khz),
                   khz_to_angular(delta_khz), khz_to_angular(nu_eff_khz))

    @property
    def omega(self):
        """dressed site gap sqrt(Delta^2 + J^2)"""
        return math.hypot(self.delta, self.J)

    def replace(self, **changes):
        return replace(self, **changes)

    def as_khz(self):
        return {'j_khz': angular_to_khz(self.J), 'kappa_khz': angular_to_khz(self.kappa),
                'delta_khz': angular_to_khz(self.delta), 'nu_eff_khz': angular_to_khz(self.nu_eff)}


@dataclass(frozen=True)
class EnvironmentSpec:
    """thermal bosonic mode: mean occupation n_bar, Fock states 0..n_max"""
    n_bar: float
    n_max: int

    def __post_init__(self):
        n_bar = check_finite('n_bar', self.n_bar)
        if n_bar < 0:
            raise ParameterError(f'n_bar must be >= 0, got {n_bar!r}')
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ParameterError(f'n_max must be an integer >= 1, got {self.n_max!r}')
        object.__setattr__(self, 'n_bar', n_bar)
        object.__setattr__(self, 'n_max', int(self.n_max))

    @classmethod
    def auto(cls, n_bar, kappa_over_nu=0.0, epsilon=DEFAULT_TAIL_EPSILON):
        return cls(n_bar, choose_cutoff(n_bar, epsilon, kappa_over_nu))

    @property
    def dim(self):
        return self.n_max + 1

    @property
    def tail_mass(self):
        """untruncated thermal weight beyond n_max"""
        return thermal_tail(self.n_bar, self.n_max)

    def weights(self):
        return thermal_weights(self.n_bar, self.n_max)

    def doubled(self):
        return replace(self, n_max=2 * self.n_max)


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """dense Hermitian operator [rad/ms]; see Basis for the index ordering"""
    entries: np.ndarray = field(repr=False)
    basis: Basis

    def __post_init__(self):
        entries = np.array(self.entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ParameterError(f'Hamiltonian must be square, got shape {entries.shape}')
        if entries.shape[0] % int(self.basis):
            raise ParameterError(f'dimension {entries.shape[0]} incompatible with {self.basis.name} basis')
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def n_max(self):
        return self.dim // int(self.basis) - 1

    @property
    def ordering(self):
        return self.basis.ordering

    def hermiticity_defect(self):
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))


@dataclass(frozen=True)
class LaserCalibration:
    """
    laser parameters entering the J and kappa calibration formulas
    omega1, omega2: Rabi frequencies of the two tones of one beam [rad/ms]
    delta_ms: Molmer-Sorensen detuning, omega_r: rocking-mode frequency [rad/ms]
    """
    eta_ax: float
    eta_r: float
    omega1: float
    omega2: float
    delta_ms: float
    omega_r: float

    def __post_init__(self):
        for name in ('eta_ax', 'eta_r', 'omega1', 'omega2', 'delta_ms', 'omega_r'):
            value = check_finite(name, getattr(self, name), bound=math.inf)
            object.__setattr__(self, name, value)
        for name in ('eta_ax', 'eta_r', 'delta_ms', 'omega_r'):
            if getattr(self, name) <= 0:
                raise ParameterError(f'{name} must be > 0, got {getattr(self, name)!r}')
        # a tone may be switched off: Rabi frequencies only need to be non-negative
        for name in ('omega1', 'omega2'):
            if getattr(self, name) < 0:
                raise ParameterError(f'{name} must be >= 0, got {getattr(self, name)!r}')
        if self.delta_ms > self.omega_r / 10:
            message = (f'delta_ms={self.delta_ms:.6g} rad/ms is not small against '
                       f'omega_r={self.omega_r:.6g} rad/ms')
            logger.warning(message)
            warnings.warn(message, UserWarning, stacklevel=3)

    @classmethod
    def from_khz(cls, eta_ax, eta_r, omega1_khz, omega2_khz, delta_ms_khz, omega_r_khz):
        return cls(eta_ax, eta_r, khz_to_angular(omega1_khz), khz_to_angular(omega2_khz),
                   khz_to_angular(delta_ms_khz), khz_to_angular(omega_r_khz))


def _check_dim(dim, dim_cap):
    if dim > dim_cap:
        raise TruncationError(dim, dim_cap)


def boson_operators(n_max):
    """(a + a^dagger, a^dagger a) on Fock states 0..n_max"""
    amplitudes = np.sqrt(np.arange(1, n_max + 1, dtype=float))
    position = np.diag(amplitudes, 1) + np.diag(amplitudes, -1)
    number = np.diag(np.arange(n_max + 1, dtype=float))
    return position, number


def build_reduced_hamiltonian(params, n_max, dim_cap=DEFAULT_DIM_CAP):
    """
    H_r = Delta/2 sz + J/2 sx + kappa/2 sz (a + a^dagger) + nu_eff a^dagger a
    on span{|DS,n>, |SD,n>}, index 2n + s
    """
    if int(n_max) != n_max or n_max < 0:
        raise ParameterError(f'n_max must be a non-negative integer, got {n_max!r}')
    n_max = int(n_max)
    _check_dim(2 * (n_max + 1), dim_cap)

    position, number = boson_operators(n_max)
    identity = np.eye(n_max + 1)
    entries = (0.5 * params.delta * np.kron(identity, SIGMA_Z)
               + 0.5 * params.J * np.kron(identity, SIGMA_X)
               + 0.5 * params.kappa * np.kron(position, SIGMA_Z)
               + params.nu_eff * np.kron(number, np.eye(2)))
    return HamiltonianMatrix(entries, Basis.REDUCED)


def build_full_hamiltonian(params, n_max, dim_cap=DEFAULT_DIM_CAP):
    """two-qubit VAET Hamiltonian on (donor, acceptor) x Fock, index 4n + q"""
    if int(n_max) != n_max or n_max < 0:
        raise ParameterError(f'n_max must be a non-negative integer, got {n_max!r}')
    n_max = int(n_max)
    _check_dim(4 * (n_max + 1), dim_cap)

    position, number = boson_operators(n_max)
    identity = np.eye(n_max + 1)
    exchange = np.kron(SIGMA_X, SIGMA_X)
    donor_z = np.kron(SIGMA_Z_ION, np.eye(2))
    entries = (0.5 * params.J * np.kron(identity, exchange)
               + 0.5 * params.delta * np.kron(identity, donor_z)
               + 0.5 * params.kappa * np.kron(position, donor_z)
               + params.nu_eff * np.kron(number, np.eye(4)))
    return HamiltonianMatrix(entries, Basis.FULL)


def build_hamiltonian(params, n_max, basis=Basis.REDUCED, dim_cap=DEFAULT_DIM_CAP):
    if basis is Basis.FULL:
        return build_full_hamiltonian(params, n_max, dim_cap)
    return build_reduced_hamiltonian(params, n_max, dim_cap)


def thermal_tail(n_bar, n_max):
    """sum_{n > n_max} p_n of the untruncated Boltzmann distribution"""
    if n_bar == 0:
        return 0.0
    return (n_bar / (1.0 + n_bar)) ** (n_max + 1)


def thermal_weights(n_bar, n_max):
    """Boltzmann weights p_n = n_bar^n / (1 + n_bar)^(n+1), renormalised over 0..n_max"""
    if n_bar < 0:
        raise ParameterError(f'n_bar must be >= 0, got {n_bar!r}')
    ratio = n_bar / (1.0 + n_bar)
    weights = np.power(ratio, np.arange(n_max + 1, dtype=float)) / (1.0 + n_bar)
    return weights / math.fsum(weights)


def thermal_tail_cutoff(n_bar, epsilon):
    """smallest n_max with thermal_tail(n_bar, n_max) < epsilon"""
    if not 0 < epsilon < 1:
        raise ParameterError(f'epsilon must lie in (0, 1), got {epsilon!r}')
    if n_bar == 0:
        return 0
    # tail = ratio^(n_max+1) < epsilon  <=>  n_max + 1 > log(epsilon) / log(ratio)
    n_max = int(math.floor(math.log(epsilon) / math.log(n_bar / (1.0 + n_bar))))
    while thermal_tail(n_bar, n_max) >= epsilon:
        n_max += 1
    while n_max > 0 and thermal_tail(n_bar, n_max - 1) < epsilon:
        n_max -= 1
    return n_max


def headroom(kappa_over_nu):
    """extra quanta absorbing coherent displacement during the evolution"""
    return max(MIN_HEADROOM, math.ceil(4.0 * kappa_over_nu ** 2) + 3)


def choose_cutoff(n_bar, epsilon=DEFAULT_TAIL_EPSILON, kappa_over_nu=0.0, dim_cap=DEFAULT_DIM_CAP):
    """thermal tail cutoff plus dynamical headroom; never below MIN_HEADROOM"""
    if not math.isfinite(kappa_over_nu):
        raise ParameterError('kappa_over_nu must be finite; use displacement_ratio for nu_eff = 0')
    n_max = thermal_tail_cutoff(n_bar, epsilon) + headroom(kappa_over_nu)
    _check_dim(2 * (n_max + 1), dim_cap)
    logger.debug('cutoff n_bar=%g eps=%g kappa/nu=%.4g -> n_max=%d', n_bar, epsilon, kappa_over_nu, n_max)
    return n_max


def displacement_ratio(params, t_max):
    """
    bound on the coherent displacement |alpha| = (kappa/2|nu|) |1 - exp(-i nu t)|
    of the sz-conditioned force, finite also for nu_eff = 0
    """
    if params.kappa == 0:
        return 0.0
    linear = 0.5 * params.kappa * max(t_max, 0.0)
    if params.nu_eff == 0:
        return linear
    return min(params.kappa / abs(params.nu_eff), linear)


def calibrate_J(cal):
    """J = eta_ax^2 Omega1 Omega2 / delta_ms, with the global beam's tones in cal"""
    if cal.delta_ms == 0:
        raise ParameterError('delta_ms must be non-zero')
    return cal.eta_ax ** 2 * cal.omega1 * cal.omega2 / cal.delta_ms


def calibrate_kappa(cal):
    """kappa = eta_r Omega1 Omega2 / omega_r, with the local beam's tones in cal"""
    if cal.omega_r == 0:
        raise ParameterError('omega_r must be non-zero')
    return cal.eta_r * cal.omega1 * cal.omega2 / cal.omega_r


def detuned_rabi(J, delta, t):
    """bath-decoupled transfer probability J^2/Omega^2 sin^2(Omega t / 2)"""
    t = np.asarray(t, dtype=float)
    omega = math.hypot(J, delta)
    if omega == 0:
        return np.zeros_like(t)
    return (J / omega) ** 2 * np.sin(0.5 * omega * t) ** 2


def fit_site_parameters(times, p_acc, guess=None):
    """
    least-squares fit of (J, |Delta|) to bath-decoupled transfer dynamics
    the sign of Delta is not observable in P_acc and is returned as >= 0
    """
    times = np.asarray(times, dtype=float)
    p_acc = np.asarray(p_acc, dtype=float)
    if times.size < 4 or times.shape != p_acc.shape:
        raise ParameterError('need at least 4 matching (time, P_acc) samples to fit')

    if guess is None:
        # P oscillates as (1 - cos(Omega t))/2, so the dominant frequency is Omega
        steps = np.diff(times)
        dt = float(np.median(steps))
        # zero padding refines the frequency grid well below one period over the record
        padded = 16 * times.size
        spectrum = np.abs(np.fft.rfft(p_acc - p_acc.mean(), n=padded))
        freqs = np.fft.rfftfreq(padded, d=dt)
        omega0 = 2 * math.pi * freqs[1 + int(np.argmax(spectrum[1:]))]
        amplitude = float(np.clip(p_acc.max(), 1e-3, 0.999))
        guess = (omega0 * math.sqrt(amplitude), omega0 * math.sqrt(1.0 - amplitude))

    def model(t, J, delta):
        return detuned_rabi(J, delta, t)

    popt, pcov = curve_fit(model, times, p_acc, p0=guess, bounds=([0.0, 0.0], [np.inf, np.inf]))
    logger.debug('site fit: J=%.6g delta=%.6g rad/ms', popt[0], popt[1])
    return float(popt[0]), float(popt[1])
