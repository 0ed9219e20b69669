#!/usr/bin/env python3
"""
pyvaet command line: time scans, spectra, Dyson comparisons, resonance
tables, laser calibration, convergence audits and built-in oracles.
"""
import argparse
import logging
import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from pyvaet import (Basis, ConfigError, ExitCode, ParameterError, ScanAxis, TWO_PI, VaetError,
                    __version__, angular_to_khz, khz_to_angular)
from model import (EnvironmentSpec, ModelParams, build_reduced_hamiltonian, calibrate_J, calibrate_kappa,
                   detuned_rabi, fit_site_parameters)
from propagator import (NOISELESS, EigenPropagator, RungeKuttaPropagator, StateVector, manifold_leakage,
                        sample_shots, site_population, transfer_timeseries)
from perturbation import (bloch_coefficients, departure_time, dyson_populations, resonance_frequencies,
                          resonance_integrals, vaet_rate)
from scans import (ScanRunner, THREADS_VARIABLE, convergence_audit, parameter_scan, peak_detect,
                   spectrum_scan, time_scan)
from config import DEFAULT_GRIDS, load_config, parse_config
from output import ResultTable, write_results

logger = logging.getLogger(__name__)

COMMANDS = ('time-scan', 'spectrum', 'dyson-compare', 'resonances', 'calibrate', 'audit',
            'oracle-check', 'sweep')
# commands that print a summary and only write a file when asked to
PRINT_ONLY = ('resonances', 'calibrate', 'audit', 'oracle-check')
ORACLE_PARAMS = ModelParams.from_khz(1.30, 1.40, 4.56, 4.56)
BREAKDOWN_THRESHOLD = 0.1


@dataclass(frozen=True)
class OracleResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self):
        return self.deviation < self.tolerance

    def __str__(self):
        return f'{"PASS" if self.passed else "FAIL"}  {self.name:<28} {self.deviation:.3g} (< {self.tolerance:g})'


def build_parser():
    parser = argparse.ArgumentParser(
        prog='pyvaet', description='Minimal VAET model simulator',
        epilog=f'environment: {THREADS_VARIABLE}=N sets the number of scan worker threads '
               f'(default: CPU count, at most 8); results do not depend on it')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('command', choices=COMMANDS, help='what to compute')
    parser.add_argument('--config', metavar='PATH', help='run configuration (INI, see recipes/)')
    parser.add_argument('--out', metavar='PATH', help='result file (overrides output.path)')
    parser.add_argument('--override', metavar='SECTION.KEY=VALUE', action='append', default=[],
                        help='override one configuration value; repeatable')
    parser.add_argument('--seed', type=int, help='shot sampling seed (overrides output.seed)')
    parser.add_argument('--shots', type=int, help='shots per point (overrides output.shots)')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)


def _load(args):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f'output.seed={args.seed}')
    if args.shots is not None:
        overrides.append(f'output.shots={args.shots}')
    require_scan = args.command not in ('resonances', 'calibrate', 'oracle-check')
    if args.config:
        return load_config(args.config, overrides, require_scan)
    return parse_config('', overrides, require_scan)


def _require_mode(config, command, *modes):
    if config.scan.mode not in modes:
        wanted = ' or '.join(mode.value for mode in modes)
        raise ConfigError(f'{command} needs scan.mode = {wanted}, got {config.scan.mode.value}')


def _metadata(config, command, **extra):
    metadata = {'command': command, 'config': config.as_dict(), 'seed': config.output.seed}
    metadata.update(extra)
    return metadata


def _shot_columns(p_values, shots, seed):
    """binomial draws per point; each point gets its own child of SeedSequence(seed)"""
    children = np.random.SeedSequence(seed).spawn(len(p_values))
    draws = [sample_shots(float(p), shots, child) for p, child in zip(p_values, children)]
    counts = np.array([count for count, _ in draws], dtype=int)
    frequencies = np.array([frequency for _, frequency in draws], dtype=float)
    return counts, frequencies


def _add_shots(config, columns, data):
    shots = config.output.shots
    if shots:
        data['shots_acc'], data['p_shots'] = _shot_columns(data['p_acc'], shots, config.output.seed)
        columns = list(columns) + ['shots_acc', 'p_shots']
    return columns, data


def cmd_time_scan(config, runner):
    _require_mode(config, 'time-scan', ScanAxis.TIME)
    spec = config.scan_spec()
    series = time_scan(spec, runner)
    columns, data = _add_shots(config, ['t_ms', 'p_acc', 'n_phonon', 'converged'], {
        't_ms': series.times, 'p_acc': series.p_acc,
        'n_phonon': series.n_phonon, 'converged': series.converged})
    return ResultTable(columns, data, _metadata(config, 'time-scan', n_max=series.env.n_max))


def cmd_spectrum(config, runner):
    _require_mode(config, 'spectrum', ScanAxis.NU_EFF)
    curve = spectrum_scan(config.scan_spec(), runner)
    peaks = peak_detect(curve, config.scan.prominence, config.scan.k_max)
    for peak in peaks:
        logger.info('peak %s', peak)
    columns, data = _add_shots(config, ['nu_eff_khz', 'p_acc', 'converged'], {
        'nu_eff_khz': angular_to_khz(curve.grid), 'p_acc': curve.p_acc, 'converged': curve.converged})
    peak_rows = [{'nu_eff_khz': angular_to_khz(p.nu), 'p_acc': p.height, 'prominence': p.prominence, 'k': p.k}
                 for p in peaks]
    return ResultTable(columns, data, _metadata(config, 'spectrum', n_max=curve.n_max.tolist(), peaks=peak_rows))


def cmd_sweep(config, runner):
    _require_mode(config, 'sweep', ScanAxis.KAPPA, ScanAxis.N_BAR)
    curve = parameter_scan(config.scan_spec(), runner)
    if curve.axis is ScanAxis.KAPPA:
        name, grid = 'kappa_khz', angular_to_khz(curve.grid)
    else:
        name, grid = 'n_bar', curve.grid
    columns, data = _add_shots(config, [name, 'p_acc', 'converged'], {
        name: grid, 'p_acc': curve.p_acc, 'converged': curve.converged})
    return ResultTable(columns, data, _metadata(config, 'sweep', n_max=curve.n_max.tolist()))


def cmd_dyson_compare(config, runner):
    _require_mode(config, 'dyson-compare', ScanAxis.TIME)
    params = config.params()
    times = config.grid_values()
    env = config.environment_spec(float(times[-1]))
    if config.noise_spec().active:
        logger.warning('dyson-compare evaluates a single Delta; the noise section is ignored')
    exact = transfer_timeseries(params, env, NOISELESS, times)
    dyson = dyson_populations(params, env, times, max_order=2, dt=config.scan.dyson_dt_ms)
    departure = departure_time(times, exact.p_acc, dyson[2].p_acc_raw, BREAKDOWN_THRESHOLD)
    if departure is None:
        logger.info('second order stays within %g of the exact result', BREAKDOWN_THRESHOLD)
    else:
        logger.info('second order departs from the exact result at t = %.4g ms', departure)
    data = {'t_ms': times, 'p_exact': exact.p_acc,
            'p_order1': dyson[1].p_acc_raw, 'p_order2': dyson[2].p_acc_raw}
    metadata = _metadata(config, 'dyson-compare', n_max=env.n_max, dyson_dt_ms=dyson[2].dt,
                         dyson_converged=dyson[2].converged,
                         richardson_deviation=dyson[2].richardson_deviation,
                         departure_time_ms=departure)
    return ResultTable(['t_ms', 'p_exact', 'p_order1', 'p_order2'], data, metadata)


def cmd_resonances(config, runner):
    params = config.params()
    if params.omega == 0:
        raise ParameterError('resonances need Omega > 0 (J and Delta both zero)')
    frequencies = resonance_frequencies(params, config.scan.k_max)
    print(f'Omega = 2pi x {angular_to_khz(params.omega):.3f} kHz')
    for k in range(1, config.scan.k_max + 1):
        print(f'k={k}  nu_eff = +-{angular_to_khz(frequencies[2 * k - 2]):.3f} kHz')
    if params.delta != 0 and params.kappa > 0:
        print(f'transfer rate J kappa / 2|Delta| = 2pi x {angular_to_khz(vaet_rate(params)):.4f} kHz')
    k_values = np.repeat(np.arange(1, config.scan.k_max + 1), 2)
    return ResultTable(['k', 'nu_eff_khz'], {'k': k_values, 'nu_eff_khz': angular_to_khz(np.array(frequencies))},
                       _metadata(config, 'resonances'))


def cmd_calibrate(config, runner):
    cal = config.calibration
    J = calibrate_J(cal.global_beam())
    kappa = calibrate_kappa(cal.local_beam())
    print(f'J     = 2pi x {angular_to_khz(J):.4f} kHz')
    print(f'kappa = 2pi x {angular_to_khz(kappa):.4f} kHz')
    shots = config.output.shots
    if not shots:
        return ResultTable(['j_khz', 'kappa_khz'], {'j_khz': [angular_to_khz(J)], 'kappa_khz': [angular_to_khz(kappa)]},
                           _metadata(config, 'calibrate'))

    # bath-decoupled scan of the configured model, sampled and fitted back
    params = config.params().replace(kappa=0.0)
    if config.scan.mode is ScanAxis.TIME:
        times = config.grid_values()
    else:
        times = DEFAULT_GRIDS[ScanAxis.TIME].values()
    series = transfer_timeseries(params, EnvironmentSpec(0.0, 1), config.noise_spec(), times)
    counts, frequencies = _shot_columns(series.p_acc, shots, config.output.seed)
    J_fit, delta_fit = fit_site_parameters(times, frequencies)
    print(f'fit from {shots} shots/point: J = 2pi x {angular_to_khz(J_fit):.4f} kHz, '
          f'|Delta| = 2pi x {angular_to_khz(delta_fit):.4f} kHz')
    data = {'t_ms': times, 'p_acc': series.p_acc, 'shots_acc': counts, 'p_shots': frequencies}
    metadata = _metadata(config, 'calibrate', j_fit_khz=angular_to_khz(J_fit),
                         delta_fit_khz=angular_to_khz(delta_fit))
    return ResultTable(['t_ms', 'p_acc', 'shots_acc', 'p_shots'], data, metadata)


def cmd_audit(config, runner):
    report = convergence_audit(config.scan_spec(), runner)
    print(report)
    data = {'point': np.array(report.points), 'deviation': np.array(report.deviations)}
    table = ResultTable(['point', 'deviation'], data,
                        _metadata(config, 'audit', passed=report.passed, max_deviation=report.max_deviation))
    return table, report.passed


def oracle_checks(params=ORACLE_PARAMS, seed=0, samples=1000):
    """analytic and cross-method checks of the propagator and perturbation machinery"""
    results = []
    times = np.linspace(0.0, 2.0, 201)

    bare = ModelParams(params.J, 0.0, 0.0, 0.0)
    p = transfer_timeseries(bare, EnvironmentSpec(0.0, 1), NOISELESS, times).p_acc
    results.append(OracleResult('bare oscillation', float(np.max(np.abs(p - np.sin(0.5 * bare.J * times) ** 2))), 1e-9))

    decoupled = params.replace(kappa=0.0)
    p = transfer_timeseries(decoupled, EnvironmentSpec(0.0, 1), NOISELESS, times).p_acc
    results.append(OracleResult('detuned Rabi', float(np.max(np.abs(p - detuned_rabi(params.J, params.delta, times)))), 1e-9))

    H = build_reduced_hamiltonian(params, 5)
    psi0 = StateVector.fock(5, 1)
    exact = EigenPropagator(H).evolve(psi0, 0.7)
    ode = RungeKuttaPropagator(H).evolve(psi0, 0.7)
    results.append(OracleResult('eigen vs RK4', float(np.max(np.abs(exact.amplitudes - ode.amplitudes))), 1e-6))
    results.append(OracleResult('unitarity', abs(exact.norm() - 1.0), 1e-10))

    env = EnvironmentSpec(0.5, 12)
    short = np.linspace(0.0, 1.0, 21)
    reduced = site_population(params, env, NOISELESS, short, basis=Basis.REDUCED)
    full = site_population(params, env, NOISELESS, short, basis=Basis.FULL)
    results.append(OracleResult('full vs reduced model', float(np.max(np.abs(full - reduced))), 1e-9))
    results.append(OracleResult('single-excitation leakage', float(np.max(manifold_leakage(params, env, short))), 1e-12))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        J = rng.uniform(1e-3, TWO_PI * 10)
        delta = rng.uniform(-TWO_PI * 10, TWO_PI * 10)
        sample = ModelParams(J, 0.0, delta, 0.0)
        norm = bloch_coefficients(sample, rng.uniform(0.0, 5.0)).norm_squared()
        worst = max(worst, abs(float(norm) - 1.0))
    results.append(OracleResult('Bloch vector norm', worst, 1e-10))

    results.append(OracleResult('resonance integrals vs quad', _integral_deviation(params), 1e-8))
    return results


def _integral_deviation(params):
    """closed-form F^pm_alpha against adaptive quadrature, on and off resonance"""
    worst = 0.0
    for nu in (params.omega, -params.omega, 0.5 * params.omega, 0.0, khz_to_angular(2.0)):
        shifted = params.replace(nu_eff=nu)
        for t in (0.1, 0.7, 1.5):
            closed = resonance_integrals(shifted, t).as_dict()
            for name, value in closed.items():
                sign = 1.0 if name[1] == '+' else -1.0
                alpha = name[-1]

                def integrand(s, part):
                    f = getattr(bloch_coefficients(shifted, s), 'f_' + alpha)
                    phase = sign * nu * s
                    return 0.5 * shifted.kappa * f * (math.cos(phase) if part == 0 else math.sin(phase))
                re = quad(integrand, 0.0, t, args=(0,), epsabs=1e-13, epsrel=1e-13, limit=200)[0]
                im = quad(integrand, 0.0, t, args=(1,), epsabs=1e-13, epsrel=1e-13, limit=200)[0]
                worst = max(worst, abs(complex(re, im) - complex(value)))
    return worst


def cmd_oracle_check(config, runner):
    params = config.params() if config.params().omega > 0 and config.params().J > 0 else ORACLE_PARAMS
    results = oracle_checks(params, config.output.seed)
    for result in results:
        print(result)
    data = {'check': [r.name for r in results], 'deviation': np.array([r.deviation for r in results]),
            'tolerance': np.array([r.tolerance for r in results]),
            'passed': np.array([r.passed for r in results])}
    table = ResultTable(['check', 'deviation', 'tolerance', 'passed'], data, _metadata(config, 'oracle-check'))
    return table, all(r.passed for r in results)


HANDLERS = {
    'time-scan': cmd_time_scan,
    'spectrum': cmd_spectrum,
    'sweep': cmd_sweep,
    'dyson-compare': cmd_dyson_compare,
    'resonances': cmd_resonances,
    'calibrate': cmd_calibrate,
    'audit': cmd_audit,
    'oracle-check': cmd_oracle_check,
}


def run_command(argv):
    """run one subcommand; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return ExitCode.OK if not e.code else ExitCode.CONFIG_ERROR
    _configure_logging(args)

    # setup: anything wrong here is a configuration problem
    try:
        config = _load(args)
        path = args.out or config.output.path
        if path is None and args.command not in PRINT_ONLY:
            raise ConfigError('no output path: pass --out or set output.path')
        runner = ScanRunner()
    except (ConfigError, ParameterError) as e:
        logger.error('%s', e)
        return ExitCode.CONFIG_ERROR

    try:
        outcome = HANDLERS[args.command](config, runner)
        table, passed = outcome if isinstance(outcome, tuple) else (outcome, True)
        if path is not None:
            write_results(table, config.output.format, path)
    except ConfigError as e:
        logger.error('%s', e)
        return ExitCode.CONFIG_ERROR
    except VaetError as e:
        logger.error('%s', e)
        return ExitCode.FAILURE
    if not passed:
        logger.error('%s failed', args.command)
        return ExitCode.AUDIT_FAILED
    return ExitCode.OK


def main():
    sys.exit(int(run_command(sys.argv[1:])))


if __name__ == '__main__':
    main()
