"""
Run configuration: one INI grammar, parsed with configparser.

    [model]          j_khz, kappa_khz, delta_khz, nu_eff_khz, basis
    [environment]    n_bar, n_max, epsilon
    [noise]          delta_sigma_khz, nodes
    [scan]           mode, grid, tau_sim_ms, prominence, k_max, dyson_dt_ms
    [output]         path, format, shots, seed
    [calibration]    eta_ax, eta_r, global_omega1_khz, global_omega2_khz, delta_ms_khz,
                     local_omega1_khz, local_omega2_khz, omega_r_khz

Frequencies are cyclic kHz (the number after "2pi x"), times ms. Keys are
separated from values by '='; '#' and ';' start comment lines. Optional
values are spelled 'auto' (n_max, dyson_dt_ms), 'default' (grid) or 'none'
(mode, tau_sim_ms, path, shots). A grid is either 'start:stop:count' or a comma separated list.
"""
import configparser
import logging
import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

import numpy as np

from pyvaet import Basis, ConfigError, MAX_ANGULAR, ScanAxis, TWO_PI, khz_to_angular
from model import (DEFAULT_TAIL_EPSILON, EnvironmentSpec, LaserCalibration, ModelParams, choose_cutoff,
                   displacement_ratio)
from propagator import DEFAULT_NOISE_NODES, NoiseSpec
from scans import ScanSpec

logger = logging.getLogger(__name__)

MAX_SHOTS = 1_000_000
SECTION_HEADER = re.compile(r'^\[(?P<name>[^\]]+)\]\s*$')


@dataclass(frozen=True)
class GridSpec:
    """'start:stop:count' (inclusive linspace) or an explicit list of points"""
    start: Optional[float] = None
    stop: Optional[float] = None
    count: Optional[int] = None
    points: Tuple[float, ...] = ()

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if ':' in text:
            parts = text.split(':')
            if len(parts) != 3:
                raise ValueError(f'range grid must read start:stop:count, got {text!r}')
            start, stop, count = _finite(parts[0]), _finite(parts[1]), _integer(parts[2])
            if count < 2:
                raise ValueError(f'grid needs at least 2 points, got {count}')
            if stop <= start:
                raise ValueError(f'grid stop {stop!r} must exceed start {start!r}')
            return cls(start, stop, count)
        points = tuple(_finite(item) for item in text.split(','))
        if len(points) < 2:
            raise ValueError(f'grid needs at least 2 points, got {len(points)}')
        return cls(points=points)

    def values(self):
        if self.count is not None:
            return np.linspace(self.start, self.stop, self.count)
        return np.array(self.points, dtype=float)

    def __str__(self):
        if self.count is not None:
            return f'{self.start!r}:{self.stop!r}:{self.count}'
        return ', '.join(repr(point) for point in self.points)


DEFAULT_GRIDS = {
    ScanAxis.NU_EFF: GridSpec(-6.0, 6.0, 121),
    ScanAxis.TIME: GridSpec(0.0, 2.0, 201),
}


@dataclass(frozen=True)
class ModelConfig:
    j_khz: float = 0.0
    kappa_khz: float = 0.0
    delta_khz: float = 0.0
    nu_eff_khz: float = 0.0
    basis: Basis = Basis.REDUCED


@dataclass(frozen=True)
class EnvironmentConfig:
    n_bar: float = 0.0
    n_max: Optional[int] = None
    epsilon: float = DEFAULT_TAIL_EPSILON


@dataclass(frozen=True)
class NoiseConfig:
    delta_sigma_khz: float = 0.0
    nodes: int = DEFAULT_NOISE_NODES


@dataclass(frozen=True)
class ScanConfig:
    mode: Optional[ScanAxis] = None
    grid: Optional[GridSpec] = None
    tau_sim_ms: Optional[float] = None
    prominence: float = 0.02
    k_max: int = 3
    dyson_dt_ms: Optional[float] = None


@dataclass(frozen=True)
class OutputConfig:
    path: Optional[str] = None
    format: str = 'csv'
    shots: Optional[int] = None
    seed: int = 0


@dataclass(frozen=True)
class CalibrationConfig:
    """global beam -> J, local beam -> kappa"""
    eta_ax: float = 0.05
    eta_r: float = 0.039
    global_omega1_khz: float = 125.0
    global_omega2_khz: float = 125.0
    delta_ms_khz: float = 30.0
    local_omega1_khz: float = 275.0
    local_omega2_khz: float = 275.0
    omega_r_khz: float = 2100.0

    def global_beam(self):
        return LaserCalibration.from_khz(self.eta_ax, self.eta_r, self.global_omega1_khz,
                                         self.global_omega2_khz, self.delta_ms_khz, self.omega_r_khz)

    def local_beam(self):
        return LaserCalibration.from_khz(self.eta_ax, self.eta_r, self.local_omega1_khz,
                                         self.local_omega2_khz, self.delta_ms_khz, self.omega_r_khz)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def params(self):
        m = self.model
        return ModelParams.from_khz(m.j_khz, m.kappa_khz, m.delta_khz, m.nu_eff_khz)

    def noise_spec(self):
        return NoiseSpec(khz_to_angular(self.noise.delta_sigma_khz), self.noise.nodes)

    @property
    def tau_sim(self):
        return self.scan.tau_sim_ms

    def environment_spec(self, t_max=None):
        """EnvironmentSpec at the base parameters, n_max resolved if auto"""
        env = self.environment
        if env.n_max is not None:
            return EnvironmentSpec(env.n_bar, env.n_max)
        ratio = displacement_ratio(self.params(), t_max if t_max is not None else self._t_max())
        return EnvironmentSpec(env.n_bar, choose_cutoff(env.n_bar, env.epsilon, ratio))

    def _t_max(self):
        if self.scan.mode is ScanAxis.TIME:
            return float(self.grid_values()[-1])
        return self.scan.tau_sim_ms or 0.0

    def grid_values(self):
        """grid in internal units: rad/ms for nu_eff and kappa, ms for time, quanta for n_bar"""
        values = self.scan.grid.values()
        if self.scan.mode in (ScanAxis.NU_EFF, ScanAxis.KAPPA):
            return khz_to_angular(values)
        return values

    def scan_spec(self):
        return ScanSpec(self.params(), self.environment.n_bar, self.scan.mode, self.grid_values(),
                        noise=self.noise_spec(), tau_sim=self.scan.tau_sim_ms,
                        n_max=self.environment.n_max, basis=self.model.basis,
                        epsilon=self.environment.epsilon)

    def as_dict(self):
        """resolved values keyed by section, for result metadata"""
        return {section.name: {item.name: _plain(getattr(getattr(self, section.name), item.name))
                               for item in fields(getattr(self, section.name))}
                for section in fields(self)}

    def replace(self, **sections):
        return replace(self, **sections)


def _plain(value):
    if isinstance(value, Basis):
        return value.name.lower()
    if isinstance(value, ScanAxis):
        return value.value
    if isinstance(value, GridSpec):
        return str(value)
    return value


def _finite(text):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f'expected a number, got {text.strip()!r}')
    if not math.isfinite(value):
        raise ValueError(f'must be finite, got {text.strip()!r}')
    return value


def _integer(text):
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f'expected an integer, got {text.strip()!r}')


def _at_least(minimum, strict=False):
    def convert(text):
        value = _finite(text)
        if value < minimum or (strict and value == minimum):
            raise ValueError(f'must be {">" if strict else ">="} {minimum:g}, got {value!r}')
        return value
    return convert


def _frequency(nonnegative):
    def convert(text):
        value = _finite(text)
        if nonnegative and value < 0:
            raise ValueError(f'must be >= 0, got {value!r}')
        if abs(TWO_PI * value) >= MAX_ANGULAR:
            raise ValueError(f'{value!r} kHz outside sanity bound')
        return value
    return convert


def _optional(convert, token):
    def parse(text):
        return None if text.strip().lower() == token else convert(text)
    return parse


def _choice(options):
    def convert(text):
        key = text.strip().lower()
        if key not in options:
            raise ValueError(f'must be one of {", ".join(options)}, got {text.strip()!r}')
        return options[key]
    return convert


def _n_max(text):
    value = _integer(text)
    if value < 1:
        raise ValueError(f'must be an integer >= 1, got {value}')
    return value


def _epsilon(text):
    value = _finite(text)
    if not 0 < value < 1:
        raise ValueError(f'must lie in (0, 1), got {value!r}')
    return value


def _nodes(text):
    value = _integer(text)
    if value < 1 or value % 2 == 0:
        raise ValueError(f'must be an odd integer >= 1, got {value}')
    return value


def _shots(text):
    value = _integer(text)
    if not 1 <= value <= MAX_SHOTS:
        raise ValueError(f'must lie in [1, {MAX_SHOTS}], got {value}')
    return value


def _non_negative_int(text):
    value = _integer(text)
    if value < 0:
        raise ValueError(f'must be >= 0, got {value}')
    return value


def _positive_int(text):
    value = _integer(text)
    if value < 1:
        raise ValueError(f'must be >= 1, got {value}')
    return value


def _path(text):
    text = text.strip()
    if not text:
        raise ValueError('path must not be empty')
    return text


_positive = _at_least(0.0, strict=True)
_non_negative = _at_least(0.0)

# section -> (dataclass, key -> converter); order here is the canonical order
SCHEMA = {
    'model': (ModelConfig, {
        'j_khz': _frequency(True),
        'kappa_khz': _frequency(True),
        'delta_khz': _frequency(False),
        'nu_eff_khz': _frequency(False),
        'basis': _choice({'reduced': Basis.REDUCED, 'full': Basis.FULL}),
    }),
    'environment': (EnvironmentConfig, {
        'n_bar': _non_negative,
        'n_max': _optional(_n_max, 'auto'),
        'epsilon': _epsilon,
    }),
    'noise': (NoiseConfig, {
        'delta_sigma_khz': _frequency(True),
        'nodes': _nodes,
    }),
    'scan': (ScanConfig, {
        'mode': _optional(_choice({axis.value: axis for axis in ScanAxis}), 'none'),
        'grid': _optional(GridSpec.parse, 'default'),
        'tau_sim_ms': _optional(_positive, 'none'),
        'prominence': _non_negative,
        'k_max': _positive_int,
        'dyson_dt_ms': _optional(_positive, 'auto'),
    }),
    'output': (OutputConfig, {
        'path': _optional(_path, 'none'),
        'format': _choice({'csv': 'csv', 'json': 'json'}),
        'shots': _optional(_shots, 'none'),
        'seed': _non_negative_int,
    }),
    'calibration': (CalibrationConfig, {
        'eta_ax': _positive,
        'eta_r': _positive,
        'global_omega1_khz': _non_negative,
        'global_omega2_khz': _non_negative,
        'delta_ms_khz': _positive,
        'local_omega1_khz': _non_negative,
        'local_omega2_khz': _non_negative,
        'omega_r_khz': _positive,
    }),
}

OPTIONAL_TOKENS = {('environment', 'n_max'): 'auto', ('scan', 'mode'): 'none', ('scan', 'grid'): 'default',
                   ('scan', 'tau_sim_ms'): 'none', ('scan', 'dyson_dt_ms'): 'auto',
                   ('output', 'path'): 'none', ('output', 'shots'): 'none'}


def _line_numbers(text):
    """(section, key) -> line number, (section, None) -> header line"""
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in '#;':
            continue
        match = SECTION_HEADER.match(line)
        if match:
            section = match.group('name').strip()
            lines.setdefault((section, None), lineno)
        elif section is not None and '=' in line and not raw[0].isspace():
            lines.setdefault((section, line.split('=', 1)[0].strip().lower()), lineno)
    return lines


def _read(text):
    parser = configparser.ConfigParser(strict=True, interpolation=None, delimiters=('=',),
                                       comment_prefixes=('#', ';'), inline_comment_prefixes=None,
                                       empty_lines_in_values=False, default_section='__default__')
    try:
        parser.read_string(text, source='config')
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ConfigError(e.message.split(': ', 1)[-1], e.lineno) from e
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError('key outside any [section]', e.lineno) from e
    except configparser.ParsingError as e:
        lineno, line = e.errors[0][:2] if getattr(e, 'errors', None) else (None, '')
        raise ConfigError(f'cannot parse {line}', lineno) from e
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    return parser


def _apply_overrides(parser, lines, overrides):
    for item in overrides:
        name, sep, value = item.partition('=')
        section, dot, key = name.strip().partition('.')
        key = key.strip().lower()
        if not sep or not dot or not key:
            raise ConfigError(f'override {item!r} must read section.key=value')
        if section not in SCHEMA or key not in SCHEMA[section][1]:
            raise ConfigError(f'override {item!r}: unknown key {section}.{key}')
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
        lines[(section, key)] = None
        logger.debug('override %s.%s = %s', section, key, value.strip())


def parse_config(text, overrides=(), require_scan=True):
    """
    validated RunConfig from INI text; overrides ('section.key=value') beat the file,
    the file beats the defaults
    require_scan=False accepts a config without [scan] mode (resonances, calibrate)
    """
    lines = _line_numbers(text)
    parser = _read(text)
    _apply_overrides(parser, lines, overrides)

    sections = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f'unknown section [{section}]', lines.get((section, None)))
    for section, (cls, converters) in SCHEMA.items():
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                lineno = lines.get((section, key))
                if key not in converters:
                    raise ConfigError(f'unknown key {section}.{key}', lineno)
                try:
                    values[key] = converters[key](raw)
                except ValueError as e:
                    where = f'override {section}.{key}' if lineno is None and (section, key) in lines else f'{section}.{key}'
                    raise ConfigError(f'{where}: {e}', lineno) from e
        sections[section] = cls(**values)

    scan = sections['scan']
    header = lines.get(('scan', None))
    if scan.mode is None:
        if not require_scan:
            return RunConfig(**sections)
        raise ConfigError('scan.mode required', header)
    if scan.grid is None:
        if scan.mode not in DEFAULT_GRIDS:
            raise ConfigError(f'scan.grid required for mode {scan.mode.value}', header)
        scan = replace(scan, grid=DEFAULT_GRIDS[scan.mode])
    if scan.mode is not ScanAxis.TIME and scan.tau_sim_ms is None:
        raise ConfigError(f'scan.tau_sim_ms required for mode {scan.mode.value}', header)
    if scan.mode is ScanAxis.TIME and scan.grid.values()[0] < 0:
        raise ConfigError('scan.grid: times must be >= 0', lines.get(('scan', 'grid')))
    sections['scan'] = scan
    return RunConfig(**sections)


def _format_value(section, key, value):
    if value is None:
        return OPTIONAL_TOKENS[(section, key)]
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(_plain(value))


def format_config(config):
    """canonical text: fixed section and key order, every default written out"""
    blocks = []
    for section, (cls, converters) in SCHEMA.items():
        values = getattr(config, section)
        body = [f'[{section}]']
        body.extend(f'{key} = {_format_value(section, key, getattr(values, key))}' for key in converters)
        blocks.append('\n'.join(body))
    return '\n\n'.join(blocks) + '\n'


def load_config(path, overrides=(), require_scan=True):
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e.strerror}') from e
    return parse_config(text, overrides, require_scan)
