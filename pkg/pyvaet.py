import math
from enum import Enum, IntEnum

__version__ = '0.3.0'

TWO_PI = 2.0 * math.pi

# sanity bound on any Hamiltonian coefficient, kHz-scale regime [rad/ms]
MAX_ANGULAR = 1.0e6

# default cap on the Hilbert space dimension of a built Hamiltonian
DEFAULT_DIM_CAP = 4096


def khz_to_angular(f_khz):
    """cyclic frequency in kHz (the number after "2pi x") -> angular frequency in rad/ms"""
    return TWO_PI * f_khz


def angular_to_khz(omega):
    """angular frequency in rad/ms -> cyclic frequency in kHz"""
    return omega / TWO_PI


class Basis(IntEnum):
    """
    basis of a HamiltonianMatrix / StateVector
    REDUCED: index = 2*n + s, s=0 <-> |DS>, s=1 <-> |SD>
    FULL:    index = 4*n + q, q in (SS, SD, DS, DD)
    """
    REDUCED = 2
    FULL = 4

    @property
    def ordering(self):
        if self is Basis.REDUCED:
            return 'index = 2*n + s; s=0 |DS> (donor excited), s=1 |SD>; n = Fock number'
        return 'index = 4*n + q; q=0 |SS>, q=1 |SD>, q=2 |DS>, q=3 |DD>; n = Fock number'


class Site(IntEnum):
    """reduced-manifold site label; sigma_z eigenvalue +1 on DONOR"""
    DONOR = 0
    ACCEPTOR = 1


class Pair(IntEnum):
    """two-qubit electronic state, donor letter first"""
    SS = 0
    SD = 1
    DS = 2
    DD = 3


class ScanAxis(str, Enum):
    NU_EFF = 'nu_eff'
    TIME = 'time'
    KAPPA = 'kappa'
    N_BAR = 'n_bar'


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    CONFIG_ERROR = 2
    AUDIT_FAILED = 3


class VaetError(Exception):
    """base class for all errors raised by this package"""


class ParameterError(VaetError, ValueError):
    pass


class TruncationError(VaetError, ValueError):
    def __init__(self, dim, cap):
        super().__init__(f'truncation too large: dimension {dim} exceeds cap {cap}')
        self.dim = dim
        self.cap = cap


class StepSizeError(VaetError, ValueError):
    def __init__(self, message, required_dt):
        super().__init__(f'{message} (required dt <= {required_dt:.6g} ms)')
        self.required_dt = required_dt


class EigensolverError(VaetError, RuntimeError):
    def __init__(self, dim, norm, hermiticity_defect, cause=None):
        super().__init__(
            f'eigendecomposition failed for {dim}x{dim} matrix '
            f'(Frobenius norm {norm:.6g}, max|H - H^dagger| {hermiticity_defect:.3g})'
            + (f': {cause}' if cause else ''))
        self.dim = dim
        self.norm = norm
        self.hermiticity_defect = hermiticity_defect


class UnitarityError(VaetError, RuntimeError):
    def __init__(self, drift, t, tolerance):
        super().__init__(f'evolved branch norm drifts by {drift:.3g} at t = {t:.6g} ms (tolerance {tolerance:g})')
        self.drift = drift
        self.t = t


class InteractionPictureError(VaetError, ValueError):
    pass


class OutputError(VaetError):
    def __init__(self, path, reason):
        super().__init__(f'cannot write {path}: {reason}')
        self.path = path


class ConfigError(VaetError, ValueError):
    """configuration problem; lineno is None for command-line overrides and missing keys"""

    def __init__(self, message, lineno=None):
        self.message = message
        self.lineno = lineno
        super().__init__(f'line {lineno}: {message}' if lineno is not None else message)


def check_finite(name, value, bound=MAX_ANGULAR):
    """raise ParameterError unless value is finite and |value| < bound"""
    if not math.isfinite(value):
        raise ParameterError(f'{name} must be finite, got {value!r}')
    if abs(value) >= bound:
        raise ParameterError(f'{name}={value!r} outside sanity bound |value| < {bound:g}')
    return float(value)
