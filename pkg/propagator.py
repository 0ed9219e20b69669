"""
Unitary time evolution of the VAET model and the P_acc observable.

The thermal initial state |DS><DS| (x) omega(n_bar) is handled as a classical
mixture of Fock branches |DS, n>, each evolved as a pure state; quasi-static
detuning noise is averaged with Gauss-Hermite quadrature on top.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.polynomial.hermite_e import hermegauss

from pyvaet import (Basis, EigensolverError, Pair, ParameterError, Site, UnitarityError,
                    StepSizeError, check_finite)
from model import EnvironmentSpec, HamiltonianMatrix, ModelParams, build_hamiltonian

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-10
ODE_NORM_TOLERANCE = 1e-8
# RK4 step bound: dt <= RK4_STEP_FACTOR / (max row sum of |H|)
RK4_STEP_FACTOR = 0.02
PROBABILITY_SLACK = 1e-9
DEFAULT_NOISE_NODES = 7


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray = field(repr=False)
    basis: Basis
    norm_tol: float = field(default=NORM_TOLERANCE, repr=False)

    def __post_init__(self):
        amplitudes = np.array(self.amplitudes, dtype=complex)
        if amplitudes.ndim != 1:
            raise ParameterError(f'state must be a vector, got shape {amplitudes.shape}')
        deviation = abs(np.linalg.norm(amplitudes) - 1.0)
        if deviation > self.norm_tol:
            raise ParameterError(f'state norm deviates from 1 by {deviation:.3g}')
        amplitudes.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amplitudes)

    @classmethod
    def fock(cls, n_max, n, site=Site.DONOR, basis=Basis.REDUCED):
        """|DS, n> (site=DONOR) or |SD, n> (site=ACCEPTOR) in the requested basis"""
        amplitudes = np.zeros(int(basis) * (n_max + 1), dtype=complex)
        amplitudes[initial_index(n, site, basis)] = 1.0
        return cls(amplitudes, basis)

    @property
    def dim(self):
        return self.amplitudes.size

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class NoiseSpec:
    """quasi-static Gaussian fluctuation of Delta, std delta_sigma [rad/ms]"""
    delta_sigma: float = 0.0
    n_nodes: int = DEFAULT_NOISE_NODES

    def __post_init__(self):
        sigma = check_finite('delta_sigma', self.delta_sigma)
        if sigma < 0:
            raise ParameterError(f'delta_sigma must be >= 0, got {sigma!r}')
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1 or self.n_nodes % 2 == 0:
            raise ParameterError(f'n_nodes must be an odd integer >= 1, got {self.n_nodes!r}')
        object.__setattr__(self, 'delta_sigma', sigma)
        object.__setattr__(self, 'n_nodes', int(self.n_nodes))

    @property
    def active(self):
        return self.delta_sigma > 0 and self.n_nodes > 1

    def nodes(self):
        """(Delta offsets, weights) of the probabilists' Gauss-Hermite rule; weights sum to 1"""
        if not self.active:
            return np.zeros(1), np.ones(1)
        x, w = hermegauss(self.n_nodes)
        return self.delta_sigma * x, w / math.fsum(w)

    def refined(self):
        return NoiseSpec(self.delta_sigma, self.n_nodes + 4)


NOISELESS = NoiseSpec(0.0, 1)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """P_acc(t) with the parameters it was computed for"""
    times: np.ndarray
    p_acc: np.ndarray
    params: ModelParams
    env: EnvironmentSpec
    noise: NoiseSpec
    basis: Basis = Basis.REDUCED
    n_phonon: Optional[np.ndarray] = None
    # doubled-cutoff agreement per point, set by scans.time_scan
    converged: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        p_acc = np.asarray(self.p_acc, dtype=float)
        if times.shape != p_acc.shape:
            raise ParameterError('times and p_acc must have the same length')
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ParameterError('times must be strictly increasing')
        if p_acc.size and (p_acc.min() < -PROBABILITY_SLACK or p_acc.max() > 1 + PROBABILITY_SLACK):
            raise ParameterError('P_acc outside [0, 1]')
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'p_acc', p_acc)

    def __len__(self):
        return self.times.size


def initial_index(n, site=Site.DONOR, basis=Basis.REDUCED):
    if basis is Basis.FULL:
        return 4 * n + (Pair.DS if site is Site.DONOR else Pair.SD)
    return 2 * n + site


def site_indices(n_max, site, basis=Basis.REDUCED):
    """indices of |DS, n> (DONOR) or |SD, n> (ACCEPTOR) for all n"""
    return np.array([initial_index(n, site, basis) for n in range(n_max + 1)])


class Propagator(ABC):
    """maps an initial state to exp(-iHt) psi0"""

    def __init__(self, hamiltonian: HamiltonianMatrix):
        self.hamiltonian = hamiltonian

    @abstractmethod
    def evolve(self, psi0: StateVector, t: float) -> StateVector:
        pass

    def _check(self, psi0):
        if psi0.dim != self.hamiltonian.dim:
            raise ParameterError(f'state dimension {psi0.dim} does not match Hamiltonian {self.hamiltonian.dim}')
        if psi0.basis is not self.hamiltonian.basis:
            raise ParameterError(f'state basis {psi0.basis.name} does not match {self.hamiltonian.basis.name}')


class EigenPropagator(Propagator):
    """Hermitian eigendecomposition, computed once and reused for every t"""

    def __init__(self, hamiltonian: HamiltonianMatrix):
        super().__init__(hamiltonian)
        entries = hamiltonian.entries
        try:
            self.energies, self.vectors = scipy.linalg.eigh(entries, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as e:
            norm = float(np.linalg.norm(entries)) if np.all(np.isfinite(entries)) else math.inf
            raise EigensolverError(hamiltonian.dim, norm, hamiltonian.hermiticity_defect(), e) from e
        self.vectors_h = self.vectors.conj().T

    def amplitudes(self, columns, t):
        """exp(-iHt) applied to the basis vectors listed in columns, shape (dim, len(columns))"""
        phases = np.exp(-1j * self.energies * t)
        return self.vectors @ (phases[:, None] * self.vectors_h[:, columns])

    def evolve(self, psi0, t):
        self._check(psi0)
        phases = np.exp(-1j * self.energies * t)
        return StateVector(self.vectors @ (phases * (self.vectors_h @ psi0.amplitudes)), psi0.basis)


class RungeKuttaPropagator(Propagator):
    """fixed-step classical RK4 on d psi/dt = -i H psi; an independent oracle"""

    def __init__(self, hamiltonian: HamiltonianMatrix, dt=None):
        super().__init__(hamiltonian)
        self.generator = -1j * np.asarray(hamiltonian.entries, dtype=complex)
        self.omega_max = float(np.max(np.sum(np.abs(hamiltonian.entries), axis=1)))
        self.max_dt = RK4_STEP_FACTOR / self.omega_max if self.omega_max > 0 else math.inf
        if dt is None:
            dt = self.max_dt
        if dt <= 0 or dt > self.max_dt:
            raise StepSizeError(f'RK4 step {dt:.6g} ms too large for |H| row-sum bound {self.omega_max:.6g}',
                                self.max_dt)
        self.dt = dt

    def evolve(self, psi0, t):
        self._check(psi0)
        psi = np.array(psi0.amplitudes, dtype=complex)
        if t == 0:
            return StateVector(psi, psi0.basis, ODE_NORM_TOLERANCE)
        if math.isinf(self.dt):
            steps = 1
        else:
            steps = max(1, math.ceil(abs(t) / self.dt))
        h = t / steps
        A = self.generator
        for _ in range(steps):
            k1 = A @ psi
            k2 = A @ (psi + 0.5 * h * k1)
            k3 = A @ (psi + 0.5 * h * k2)
            k4 = A @ (psi + h * k3)
            psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return StateVector(psi, psi0.basis, ODE_NORM_TOLERANCE)


def evolve_exact(H, psi0, t):
    return EigenPropagator(H).evolve(psi0, t)


def evolve_ode(H, psi0, t, dt=None):
    return RungeKuttaPropagator(H, dt).evolve(psi0, t)


def _check_unitarity(amplitudes, t):
    drift = float(np.max(np.abs(np.sqrt(np.sum(np.abs(amplitudes) ** 2, axis=0)) - 1.0)))
    if drift >= NORM_TOLERANCE:
        raise UnitarityError(drift, t, NORM_TOLERANCE)


def _ensemble(params, env, noise, times, basis, initial_site, observables):
    """
    thermal- and noise-averaged expectation values along times
    observables: name -> callable(amplitudes (dim, branches)) -> per-branch values
    returns name -> array over times
    """
    times = np.asarray(times, dtype=float)
    weights = env.weights()
    branches = np.flatnonzero(weights > 0)
    columns = np.array([initial_index(n, initial_site, basis) for n in branches])
    offsets, node_weights = noise.nodes()

    # contributions[name][t] collects w_g p_n <O>_{g,n}(t) for a compensated sum
    contributions = {name: [[] for _ in range(times.size)] for name in observables}
    for offset, node_weight in zip(offsets, node_weights):
        node_params = params.replace(delta=params.delta + offset) if offset else params
        propagator = EigenPropagator(build_hamiltonian(node_params, env.n_max, basis))
        branch_weights = node_weight * weights[branches]
        for k, t in enumerate(times):
            amplitudes = propagator.amplitudes(columns, t)
            _check_unitarity(amplitudes, t)
            for name, observable in observables.items():
                contributions[name][k].extend((branch_weights * observable(amplitudes)).tolist())

    return {name: np.array([math.fsum(values) for values in per_time])
            for name, per_time in contributions.items()}


def _site_probability(n_max, site, basis):
    rows = site_indices(n_max, site, basis)

    def observable(amplitudes):
        return np.sum(np.abs(amplitudes[rows]) ** 2, axis=0)
    return observable


def _occupation(n_max, basis):
    fock = np.repeat(np.arange(n_max + 1, dtype=float), int(basis))

    def observable(amplitudes):
        return fock @ (np.abs(amplitudes) ** 2)
    return observable


def site_population(params, env, noise, times, initial_site=Site.DONOR, target_site=Site.ACCEPTOR,
                    basis=Basis.REDUCED):
    """
    population of target_site after starting on initial_site with a thermal bath
    in the full basis this is the conditional probability P_target / (P_SD + P_DS)
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.zeros(0)
    observables = {site.name: _site_probability(env.n_max, site, basis) for site in Site}
    sums = _ensemble(params, env, noise, times, basis, initial_site, observables)
    target = sums[target_site.name]
    if basis is Basis.FULL:
        return target / (sums[Site.DONOR.name] + sums[Site.ACCEPTOR.name])
    return target


def acceptor_population(params, env, noise, t, basis=Basis.REDUCED):
    """P_acc at a single time"""
    return float(site_population(params, env, noise, [t], basis=basis)[0])


def manifold_leakage(params, env, times):
    """full-model population outside span{|SD>, |DS>} after starting on |DS>"""
    observables = {pair.name: _pair_probability(env.n_max, pair) for pair in (Pair.SS, Pair.DD)}
    sums = _ensemble(params, env, NOISELESS, times, Basis.FULL, Site.DONOR, observables)
    return sums[Pair.SS.name] + sums[Pair.DD.name]


def _pair_probability(n_max, pair):
    rows = np.array([4 * n + pair for n in range(n_max + 1)])

    def observable(amplitudes):
        return np.sum(np.abs(amplitudes[rows]) ** 2, axis=0)
    return observable


def bath_occupation(params, env, noise, times, basis=Basis.REDUCED):
    """averaged <a^dagger a>(t) of the vibrational mode"""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.zeros(0)
    sums = _ensemble(params, env, noise, times, basis, Site.DONOR,
                     {'n': _occupation(env.n_max, basis)})
    return sums['n']


def transfer_timeseries(params, env, noise, times, basis=Basis.REDUCED, with_occupation=False):
    """P_acc over times; one eigendecomposition per noise node, reused for all t"""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return TimeSeries(times, np.zeros(0), params, env, noise, basis,
                          np.zeros(0) if with_occupation else None)
    observables = {site.name: _site_probability(env.n_max, site, basis) for site in Site}
    if with_occupation:
        observables['n'] = _occupation(env.n_max, basis)
    sums = _ensemble(params, env, noise, times, basis, Site.DONOR, observables)
    p_acc = sums[Site.ACCEPTOR.name]
    if basis is Basis.FULL:
        p_acc = p_acc / (sums[Site.DONOR.name] + sums[Site.ACCEPTOR.name])
    logger.debug('time series: %d points, n_max=%d, %d noise nodes', times.size, env.n_max, noise.n_nodes)
    return TimeSeries(times, p_acc, params, env, noise, basis, sums.get('n'))


def sample_shots(p, n_shots, seed):
    """binomial shot draw from numpy's PCG64 generator; returns (count, frequency)"""
    if not -PROBABILITY_SLACK <= p <= 1 + PROBABILITY_SLACK:
        raise ParameterError(f'probability {p!r} outside [0, 1]')
    if int(n_shots) != n_shots or n_shots < 1:
        raise ParameterError(f'n_shots must be a positive integer, got {n_shots!r}')
    rng = np.random.default_rng(seed)
    count = int(rng.binomial(int(n_shots), min(max(p, 0.0), 1.0)))
    return count, count / n_shots
