#!/usr/bin/env python3

import csv
import json
from pathlib import Path

import pytest

from pyvaet import ExitCode, ParameterError, ScanAxis
from cli import HANDLERS, OracleResult, build_parser, oracle_checks, run_command
from config import load_config

RECIPES = Path(__file__).parent / 'recipes'


def recipe(name):
    return str(RECIPES / f'{name}.cfg')


def read_csv(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


def test_parser_knows_every_command():
    parser = build_parser()
    args = parser.parse_args(['spectrum', '--config', 'x.cfg', '--override', 'a.b=1', '--override', 'c.d=2'])
    assert args.command == 'spectrum'
    assert args.override == ['a.b=1', 'c.d=2']
    assert run_command(['teleport']) == ExitCode.CONFIG_ERROR
    assert run_command(['--version']) == ExitCode.OK


def test_resonances(capsys):
    assert run_command(['resonances', '--config', recipe('fig2a')]) == ExitCode.OK
    out = capsys.readouterr().out
    assert 'Omega = 2pi x 4.742 kHz' in out
    assert 'k=1  nu_eff = +-4.742 kHz' in out
    assert 'k=2  nu_eff = +-2.371 kHz' in out
    assert 'k=3  nu_eff = +-1.581 kHz' in out
    assert 'transfer rate' in out


def test_resonances_file(tmp_path):
    out = tmp_path / 'resonances.csv'
    assert run_command(['resonances', '--config', recipe('fig3a'), '--out', str(out)]) == ExitCode.OK
    rows = read_csv(out)
    assert rows[0] == ['k', 'nu_eff_khz']
    assert len(rows) == 7
    assert float(rows[1][1]) == pytest.approx(1.730, abs=1e-3)


def test_spectrum_csv(tmp_path):
    out = tmp_path / 'spectrum.csv'
    argv = ['spectrum', '--config', recipe('fig2b'), '--override', 'scan.grid=-4.742:4.742:3', '--out', str(out)]
    assert run_command(argv) == ExitCode.OK
    rows = read_csv(out)
    assert rows[0] == ['nu_eff_khz', 'p_acc', 'converged']
    assert len(rows) == 4
    assert [row[2] for row in rows[1:]] == ['true'] * 3
    assert float(rows[1][1]) > float(rows[3][1])
    assert out.read_text().count('\n') == 4


def test_output_is_deterministic(tmp_path):
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    base = ['time-scan', '--config', recipe('fig1a'), '--override', 'scan.grid=0:1:11', '--shots', '200', '--seed', '4']
    assert run_command(base + ['--out', str(first)]) == ExitCode.OK
    assert run_command(base + ['--out', str(second)]) == ExitCode.OK
    assert first.read_bytes() == second.read_bytes()
    rows = read_csv(first)
    assert rows[0] == ['t_ms', 'p_acc', 'n_phonon', 'converged', 'shots_acc', 'p_shots']
    assert all(0 <= int(row[4]) <= 200 for row in rows[1:])


def test_json_metadata(tmp_path):
    out = tmp_path / 'fig3b.json'
    argv = ['time-scan', '--config', recipe('fig3b'), '--override', 'scan.grid=0:0.5:6',
            '--override', 'environment.n_max=12', '--override', 'output.format=json', '--out', str(out)]
    assert run_command(argv) == ExitCode.OK
    document = json.loads(out.read_text())
    assert document['metadata']['n_max'] == 12
    assert document['metadata']['config']['environment']['n_max'] == 12
    assert document['metadata']['command'] == 'time-scan'
    assert document['columns'] == ['t_ms', 'p_acc', 'n_phonon', 'converged']
    assert len(document['data']['p_acc']) == 6


def test_dyson_compare(tmp_path):
    out = tmp_path / 'dyson.csv'
    argv = ['dyson-compare', '--config', recipe('suppl-dyson'), '--override', 'scan.grid=0:0.5:11', '--out', str(out)]
    assert run_command(argv) == ExitCode.OK
    rows = read_csv(out)
    assert rows[0] == ['t_ms', 'p_exact', 'p_order1', 'p_order2']
    assert len(rows) == 12
    assert abs(float(rows[2][1]) - float(rows[2][3])) < 0.05


def test_sweep(tmp_path):
    out = tmp_path / 'sweep.csv'
    argv = ['sweep', '--config', recipe('fig2b'), '--override', 'scan.mode=kappa',
            '--override', 'scan.grid=0:1.4:3', '--override', 'noise.delta_sigma_khz=0', '--out', str(out)]
    assert run_command(argv) == ExitCode.OK
    rows = read_csv(out)
    assert rows[0] == ['kappa_khz', 'p_acc', 'converged']
    assert [float(row[0]) for row in rows[1:]] == pytest.approx([0.0, 0.7, 1.4])


def test_calibrate(capsys):
    assert run_command(['calibrate']) == ExitCode.OK
    out = capsys.readouterr().out
    assert 'J     = 2pi x 1.302' in out
    assert 'kappa = 2pi x 1.404' in out


def test_calibrate_fits_shots(capsys, tmp_path):
    out = tmp_path / 'calibration.csv'
    argv = ['calibrate', '--config', recipe('fig3b'), '--shots', '500', '--seed', '1', '--out', str(out)]
    assert run_command(argv) == ExitCode.OK
    assert 'fit from 500 shots/point' in capsys.readouterr().out
    assert read_csv(out)[0] == ['t_ms', 'p_acc', 'shots_acc', 'p_shots']


def test_configuration_errors(tmp_path):
    out = str(tmp_path / 'x.csv')
    assert run_command(['spectrum', '--config', recipe('fig2b')]) == ExitCode.CONFIG_ERROR
    assert run_command(['spectrum', '--config', str(tmp_path / 'missing.cfg'), '--out', out]) == ExitCode.CONFIG_ERROR
    assert run_command(['spectrum', '--config', recipe('fig2b'), '--override', 'model.j_khz=-1',
                        '--out', out]) == ExitCode.CONFIG_ERROR
    assert run_command(['spectrum', '--config', recipe('fig1a'), '--out', out]) == ExitCode.CONFIG_ERROR
    assert run_command(['time-scan', '--out', out]) == ExitCode.CONFIG_ERROR
    assert not Path(out).exists()


def test_unwritable_output(tmp_path):
    argv = ['resonances', '--config', recipe('fig2a'), '--out', str(tmp_path)]
    assert run_command(argv) == ExitCode.FAILURE


def test_computation_errors_exit_with_failure(monkeypatch):
    def broken(config, runner):
        raise ParameterError('probability 1.5 outside [0, 1]')
    monkeypatch.setitem(HANDLERS, 'resonances', broken)
    assert run_command(['resonances', '--config', recipe('fig2a')]) == ExitCode.FAILURE


def test_bad_thread_count_is_a_configuration_error(monkeypatch):
    monkeypatch.setenv('PYVAET_THREADS', 'zero')
    assert run_command(['resonances', '--config', recipe('fig2a')]) == ExitCode.CONFIG_ERROR


def test_audit_exit_codes(capsys):
    passing = ['audit', '--config', recipe('fig3b'), '--override', 'scan.grid=0:1:11']
    assert run_command(passing) == ExitCode.OK
    assert 'PASS' in capsys.readouterr().out
    failing = ['audit', '--config', recipe('fig3c'), '--override', 'environment.n_max=20',
               '--override', 'scan.grid=0:3:31']
    assert run_command(failing) == ExitCode.AUDIT_FAILED
    assert 'FAIL' in capsys.readouterr().out


def test_oracle_checks_pass():
    results = oracle_checks(samples=200)
    assert len(results) == 8
    failed = [str(r) for r in results if not r.passed]
    assert failed == []


def test_oracle_check_command(capsys):
    assert run_command(['oracle-check']) == ExitCode.OK
    assert capsys.readouterr().out.count('PASS') == 8


def test_oracle_result_str():
    assert str(OracleResult('unitarity', 2e-11, 1e-10)).startswith('PASS  unitarity')
    assert not OracleResult('unitarity', 1e-9, 1e-10).passed


def recipe_command(path):
    if path.stem == 'suppl-dyson':
        return ['dyson-compare']
    mode = load_config(path).scan.mode
    return ['time-scan' if mode is ScanAxis.TIME else 'spectrum', '--shots', '100', '--seed', '5']


@pytest.mark.slow
@pytest.mark.parametrize('path', sorted(RECIPES.glob('*.cfg')), ids=lambda path: path.stem)
def test_recipe_passes_audit(path, capsys):
    assert run_command(['audit', '-q', '--config', str(path)]) == ExitCode.OK
    assert capsys.readouterr().out.startswith('PASS')


@pytest.mark.slow
@pytest.mark.parametrize('path', sorted(RECIPES.glob('*.cfg')), ids=lambda path: path.stem)
def test_recipe_output_is_byte_identical(path, tmp_path):
    first, second = tmp_path / 'first.csv', tmp_path / 'second.csv'
    argv = recipe_command(path) + ['-q', '--config', str(path)]
    assert run_command(argv + ['--out', str(first)]) == ExitCode.OK
    assert run_command(argv + ['--out', str(second)]) == ExitCode.OK
    assert first.read_bytes() == second.read_bytes()
