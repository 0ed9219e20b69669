"""
Parameter sweeps: spectra over nu_eff, time scans, kappa and n_bar series,
peak detection and truncation/quadrature convergence audits.
"""
import asyncio
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.signal import find_peaks

from pyvaet import Basis, ParameterError, ScanAxis, TWO_PI, angular_to_khz
from model import (DEFAULT_TAIL_EPSILON, EnvironmentSpec, ModelParams, choose_cutoff,
                   displacement_ratio)
from propagator import NOISELESS, NoiseSpec, acceptor_population, transfer_timeseries
from perturbation import resonance_frequencies

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-4
DEFAULT_PROMINENCE = 0.02
ASSIGNMENT_TOLERANCE = TWO_PI * 0.3
DEFAULT_SPECTRUM_SPAN = TWO_PI * 6.0
DEFAULT_SPECTRUM_POINTS = 121
AUDIT_FRACTION = 0.1
THREADS_VARIABLE = 'PYVAET_THREADS'


def default_workers():
    """worker count from PYVAET_THREADS, else the CPU count (at most 8)"""
    value = os.environ.get(THREADS_VARIABLE)
    if value:
        try:
            workers = int(value)
        except ValueError:
            raise ParameterError(f'{THREADS_VARIABLE} must be a positive integer, got {value!r}')
        if workers < 1:
            raise ParameterError(f'{THREADS_VARIABLE} must be a positive integer, got {value!r}')
        return workers
    return min(8, os.cpu_count() or 1)


class ScanRunner:
    """evaluates independent grid points concurrently; results keep input order"""

    def __init__(self, workers: Optional[int] = None):
        self.workers = workers or default_workers()

    def map(self, func, items):
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [func(item) for item in items]
        return asyncio.run(self.map_async(func, items))

    async def map_async(self, func, items):
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            tasks = [loop.run_in_executor(pool, func, item) for item in items]
            results = await asyncio.gather(*tasks, return_exceptions=True)

        failures = [r for r in results if isinstance(r, Exception)]
        for failure in failures:
            logger.error('grid point failed: %s', failure)
        if failures:
            raise failures[0]
        return results


@dataclass(frozen=True, eq=False)
class ScanSpec:
    """
    one swept axis over a grid; everything else fixed
    grid units: rad/ms for nu_eff and kappa, ms for time, quanta for n_bar
    n_max=None selects the cutoff per point with choose_cutoff
    """
    params: ModelParams
    n_bar: float
    axis: ScanAxis
    grid: np.ndarray
    noise: NoiseSpec = NOISELESS
    tau_sim: Optional[float] = None
    n_max: Optional[int] = None
    basis: Basis = Basis.REDUCED
    epsilon: float = DEFAULT_TAIL_EPSILON

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        if grid.size < 2:
            raise ParameterError(f'scan grid needs at least 2 points, got {grid.size}')
        if not np.all(np.isfinite(grid)):
            raise ParameterError('scan grid values must be finite')
        axis = ScanAxis(self.axis)
        if axis is ScanAxis.TIME:
            if grid[0] < 0 or np.any(np.diff(grid) <= 0):
                raise ParameterError('time grid must be non-negative and strictly increasing')
        elif self.tau_sim is None or not self.tau_sim > 0:
            raise ParameterError(f'{axis.value} scan requires tau_sim > 0')
        if axis is ScanAxis.KAPPA and grid.min() < 0:
            raise ParameterError('kappa grid must be non-negative')
        if axis is ScanAxis.N_BAR and grid.min() < 0:
            raise ParameterError('n_bar grid must be non-negative')
        grid.setflags(write=False)
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'axis', axis)

    @property
    def t_max(self):
        return float(self.grid[-1]) if self.axis is ScanAxis.TIME else self.tau_sim

    def point(self, value):
        """(params, n_bar) at one grid value"""
        if self.axis is ScanAxis.NU_EFF:
            return self.params.replace(nu_eff=float(value)), self.n_bar
        if self.axis is ScanAxis.KAPPA:
            return self.params.replace(kappa=float(value)), self.n_bar
        if self.axis is ScanAxis.N_BAR:
            return self.params, float(value)
        return self.params, self.n_bar

    def environment(self, params, n_bar):
        if self.n_max is not None:
            env = EnvironmentSpec(n_bar, self.n_max)
            if env.tail_mass >= self.epsilon:
                logger.warning('n_max=%d leaves thermal tail %.3g >= %.1g at n_bar=%g',
                               self.n_max, env.tail_mass, self.epsilon, n_bar)
            return env
        ratio = displacement_ratio(params, self.t_max)
        return EnvironmentSpec(n_bar, choose_cutoff(n_bar, self.epsilon, ratio))

    def with_grid(self, grid):
        return replace(self, grid=grid)


@dataclass(frozen=True, eq=False)
class SpectrumCurve:
    """P_acc over a swept parameter at fixed tau_sim"""
    axis: ScanAxis
    grid: np.ndarray
    p_acc: np.ndarray
    converged: np.ndarray
    n_max: np.ndarray
    params: ModelParams
    n_bar: float
    noise: NoiseSpec
    tau_sim: float
    basis: Basis = Basis.REDUCED

    def __post_init__(self):
        p_acc = np.asarray(self.p_acc, dtype=float)
        if p_acc.size and (p_acc.min() < -1e-9 or p_acc.max() > 1 + 1e-9):
            raise ParameterError('P_acc outside [0, 1]')
        object.__setattr__(self, 'p_acc', p_acc)
        object.__setattr__(self, 'grid', np.asarray(self.grid, dtype=float))
        object.__setattr__(self, 'converged', np.asarray(self.converged, dtype=bool))
        object.__setattr__(self, 'n_max', np.asarray(self.n_max, dtype=int))

    @property
    def nu(self):
        return self.grid

    @property
    def publishable(self):
        return bool(np.all(self.converged))

    def __len__(self):
        return self.grid.size


@dataclass(frozen=True)
class Peak:
    nu: float
    height: float
    prominence: float
    k: Optional[int] = None

    def __str__(self):
        assigned = f'k={self.k}' if self.k is not None else 'unassigned'
        return f'{angular_to_khz(self.nu):+.3f} kHz  P={self.height:.4f}  ({assigned})'


@dataclass
class AuditReport:
    passed: bool
    max_deviation: float
    tolerance: float
    points: List[float] = field(default_factory=list)
    deviations: List[float] = field(default_factory=list)

    def __str__(self):
        verdict = 'PASS' if self.passed else 'FAIL'
        return (f'{verdict}: max deviation {self.max_deviation:.3g} over {len(self.points)} '
                f'points (tolerance {self.tolerance:.1g})')


def _fixed_time_point(spec, value):
    """P_acc, truncation-converged flag and n_max for one grid value"""
    params, n_bar = spec.point(value)
    env = spec.environment(params, n_bar)
    p = acceptor_population(params, env, spec.noise, spec.tau_sim, spec.basis)
    p_wide = acceptor_population(params, env.doubled(), spec.noise, spec.tau_sim, spec.basis)
    converged = abs(p - p_wide) < CONVERGENCE_TOLERANCE
    if not converged:
        logger.warning('%s=%.6g not converged in n_max=%d (|dP|=%.3g)',
                       spec.axis.value, value, env.n_max, abs(p - p_wide))
    return min(max(p, 0.0), 1.0), converged, env.n_max


def _fixed_time_scan(spec, runner):
    runner = runner or ScanRunner()
    results = runner.map(lambda value: _fixed_time_point(spec, value), spec.grid)
    p_acc, converged, n_max = (np.array(column) for column in zip(*results))
    return SpectrumCurve(spec.axis, spec.grid, p_acc, converged, n_max,
                         spec.params, spec.n_bar, spec.noise, spec.tau_sim, spec.basis)


def spectrum_scan(spec, runner=None):
    if spec.axis is not ScanAxis.NU_EFF:
        raise ParameterError(f'spectrum_scan needs axis nu_eff, got {spec.axis.value}')
    return _fixed_time_scan(spec, runner)


def parameter_scan(spec, runner=None):
    """kappa or n_bar series at fixed tau_sim"""
    if spec.axis not in (ScanAxis.KAPPA, ScanAxis.N_BAR):
        raise ParameterError(f'parameter_scan needs axis kappa or n_bar, got {spec.axis.value}')
    return _fixed_time_scan(spec, runner)


def time_scan(spec, runner=None, with_occupation=True):
    """P_acc(t); the doubled-cutoff run that flags convergence runs alongside"""
    if spec.axis is not ScanAxis.TIME:
        raise ParameterError(f'time_scan needs axis time, got {spec.axis.value}')
    runner = runner or ScanRunner()
    env = spec.environment(spec.params, spec.n_bar)
    base, wide = runner.map(
        lambda e: transfer_timeseries(spec.params, e, spec.noise, spec.grid, spec.basis, with_occupation),
        [env, env.doubled()])
    converged = np.abs(base.p_acc - wide.p_acc) < CONVERGENCE_TOLERANCE
    if not np.all(converged):
        logger.warning('time scan not converged at %d of %d points (n_max=%d)',
                       int(np.sum(~converged)), converged.size, env.n_max)
    return replace(base, converged=converged)


def default_spectrum_grid(span=DEFAULT_SPECTRUM_SPAN, points=DEFAULT_SPECTRUM_POINTS):
    return np.linspace(-span, span, points)


def peak_detect(curve, min_prominence=DEFAULT_PROMINENCE, k_max=3, tolerance=ASSIGNMENT_TOLERANCE):
    """
    local maxima passing a prominence filter, sorted by |nu|
    each peak is assigned the k of the nearest resonance +-Omega/k within tolerance
    """
    if not curve.publishable:
        logger.warning('peak detection on a curve with non-converged points')
    indices, properties = find_peaks(curve.p_acc, prominence=min_prominence)
    resonances = resonance_frequencies(curve.params, k_max) if curve.params.omega > 0 else []
    peaks = []
    for index, prominence in zip(indices, properties['prominences']):
        nu = float(curve.grid[index])
        k = _assign_order(nu, resonances, tolerance)
        peaks.append(Peak(nu, float(curve.p_acc[index]), float(prominence), k))
    return sorted(peaks, key=lambda peak: (abs(peak.nu), peak.nu))


def _assign_order(nu, resonances, tolerance):
    best = None
    for position, frequency in enumerate(resonances):
        distance = abs(nu - frequency)
        if distance > tolerance:
            continue
        k = position // 2 + 1
        # ties go to the smaller |nu|, i.e. the larger k
        key = (distance, abs(frequency))
        if best is None or key < best[0]:
            best = (key, k)
    return best[1] if best else None


def audit_points(grid, fraction=AUDIT_FRACTION):
    """deterministic, evenly spread subsample of roughly fraction * len(grid) points"""
    count = max(1, math.ceil(fraction * len(grid)))
    return np.unique(np.round(np.linspace(0, len(grid) - 1, count)).astype(int))


def convergence_audit(spec, runner=None, tolerance=CONVERGENCE_TOLERANCE):
    """re-run a subsample at doubled n_max and refined noise quadrature"""
    runner = runner or ScanRunner()
    picks = audit_points(spec.grid)
    refined_noise = spec.noise.refined()

    if spec.axis is ScanAxis.TIME:
        times = spec.grid[picks]
        env = spec.environment(spec.params, spec.n_bar)
        reference, refined = runner.map(
            lambda args: transfer_timeseries(spec.params, args[0], args[1], times, spec.basis).p_acc,
            [(env, spec.noise), (env.doubled(), refined_noise)])
        points = times
    else:
        def evaluate(value):
            params, n_bar = spec.point(value)
            env = spec.environment(params, n_bar)
            return (acceptor_population(params, env, spec.noise, spec.tau_sim, spec.basis),
                    acceptor_population(params, env.doubled(), refined_noise, spec.tau_sim, spec.basis))
        points = spec.grid[picks]
        pairs = runner.map(evaluate, points)
        reference = np.array([pair[0] for pair in pairs])
        refined = np.array([pair[1] for pair in pairs])

    deviations = np.abs(np.asarray(reference) - np.asarray(refined))
    worst = float(deviations.max()) if deviations.size else 0.0
    report = AuditReport(worst < tolerance, worst, tolerance, points.tolist(), deviations.tolist())
    if report.passed:
        logger.info('convergence audit %s', report)
    else:
        logger.warning('convergence audit %s', report)
    return report


def ground_state_excess(curve, baseline):
    """P_acc(nu) - baseline at the grid points nearest to +Omega and -Omega"""
    omega = curve.params.omega
    plus = int(np.argmin(np.abs(curve.grid - omega)))
    minus = int(np.argmin(np.abs(curve.grid + omega)))
    return curve.p_acc[plus] - baseline, curve.p_acc[minus] - baseline

