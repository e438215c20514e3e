"""Harmonic baths: spectral densities, correlation functions, eta coefficients.

Frequencies are expressed as energies (cm^-1); ``J`` is in cm^-1 as well.  The
bath correlation function

    C(t) = 1/pi * int_0^inf J(w) [coth(beta w / 2) cos(w t / hbar) - i sin(w t / hbar)] dw

has units of cm^-2, and the influence-functional coefficients built from it are
made dimensionless by ``1/hbar^2``.

Time points of a path sit at ``t_k = k*dt``.  Point ``k`` owns the cell
``[t_k - dt/2, t_k + dt/2]`` except for the first point (``[0, dt/2]``) and the
final point of a path (``[t_N - dt/2, t_N]``).  Every coefficient is the double
integral of ``C`` over a pair of cells (time ordered within a diagonal cell).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .model import DEFAULT_COUPLING_VALUES, DEFAULT_UNITS, InvalidParameterError, UnitSystem

OMEGA_CUTOFF_FACTOR = 20.0
QUAD_EPSREL = 1e-9
QUAD_LIMIT = 2000


class QuadratureError(RuntimeError):
    """A frequency integral did not reach the requested accuracy."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (estimated residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SpectralDensity:
    """Ohmic spectral density with exponential cutoff, or a sampled table.

    ``J(w) = (pi/2) * xi * w * exp(-w / omega_c)`` for the analytic form.  A
    tabulated density is linearly interpolated and vanishes outside the table.
    """

    form: str = "ohmic-exponential"
    xi: float = 0.0
    omega_c: float = 1.0
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.form == "ohmic-exponential":
            if self.xi < 0 or not self.omega_c > 0:
                raise InvalidParameterError("need xi >= 0 and omega_c > 0")
        elif self.form == "tabulated":
            if self.table is None:
                raise InvalidParameterError("tabulated spectral density needs a table")
            w, j = (np.asarray(a, dtype=float) for a in self.table)
            if w.ndim != 1 or w.shape != j.shape or w.size < 2:
                raise InvalidParameterError("table must be two equal-length columns")
            if np.any(np.diff(w) <= 0) or w[0] < 0:
                raise InvalidParameterError("table frequencies must be non-negative and increasing")
            if np.any(j < 0):
                raise InvalidParameterError("spectral density must be non-negative")
            object.__setattr__(self, "table", (w, j))
        else:
            raise InvalidParameterError(f"unknown spectral density form {self.form!r}")

    @classmethod
    def ohmic(cls, xi: float, omega_c: float) -> "SpectralDensity":
        return cls("ohmic-exponential", xi, omega_c)

    @classmethod
    def from_table(cls, omega, j) -> "SpectralDensity":
        return cls("tabulated", table=(omega, j))

    @property
    def omega_max(self) -> float:
        if self.form == "tabulated":
            return float(self.table[0][-1])
        return OMEGA_CUTOFF_FACTOR * self.omega_c

    @property
    def is_zero(self) -> bool:
        if self.form == "tabulated":
            return not np.any(self.table[1])
        return self.xi == 0

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        if np.any(omega < 0):
            raise InvalidParameterError("spectral density is only defined for omega >= 0")
        return omega * self.over_omega(omega)

    def over_omega(self, omega):
        """``J(w)/w`` with its finite limit at ``w = 0``."""
        omega = np.asarray(omega, dtype=float)
        if self.form == "tabulated":
            w, j = self.table
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(w > 0, j / np.where(w > 0, w, 1.0), np.nan)
            if np.isnan(ratio[0]):
                ratio[0] = ratio[1] if w.size > 1 else 0.0
            return np.interp(omega, w, ratio, left=ratio[0], right=0.0) * (omega <= w[-1])
        return 0.5 * math.pi * self.xi * np.exp(-omega / self.omega_c)

    def reorganization_energy(self) -> float:
        """``lambda = (4/pi) int J(w)/w dw`` (coupling eigenvalue gap of 2).

        Equals ``2 xi omega_c`` for the Ohmic form.
        """
        if self.form == "ohmic-exponential":
            return 2.0 * self.xi * self.omega_c
        w, _ = self.table
        val, err = integrate.quad(self.over_omega, 0.0, w[-1], points=w[1:-1][:QUAD_LIMIT // 2],
                                  limit=QUAD_LIMIT, epsrel=QUAD_EPSREL)
        return 4.0 / math.pi * val


def load_spectral_density(path: str | Path) -> SpectralDensity:
    """Read two whitespace-separated columns (w, J) in cm^-1; ``#`` starts a comment."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise InvalidParameterError(f"{path}: expected two columns, got {data.shape[1]}")
    return SpectralDensity.from_table(data[:, 0], data[:, 1])


def _omega_coth(omega, beta):
    """``w * coth(beta w / 2)``, finite (= 2/beta) at w = 0."""
    x = 0.5 * beta * np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 1e-8, omega / np.tanh(np.where(x > 1e-8, x, 1.0)), 2.0 / beta)
    return out


def _quad(f, upper, *, weight=None, wvar=None, scale=1.0, what="integral"):
    kw = dict(limit=QUAD_LIMIT, epsrel=QUAD_EPSREL, epsabs=1e-14 * scale, full_output=1)
    if weight is not None:
        kw.update(weight=weight, wvar=wvar)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(f, 0.0, upper, **kw)
    val, err = res[0], res[1]
    ok = len(res) < 4 or res[3] is None or "roundoff" in str(res[3])
    tolerance = max(1e-12 * scale, 1e-6 * abs(val))
    if not ok and err > tolerance:
        raise QuadratureError(f"{what} failed to converge: {res[3]}", err)
    return val


def bath_correlation(sd: SpectralDensity, temperature: float, t, units: UnitSystem = DEFAULT_UNITS):
    """Bath correlation function ``C(t)`` in cm^-2 (scalar or array of times in ps)."""
    beta = units.beta(temperature)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(ts.shape, dtype=complex)
    if sd.is_zero:
        return out if np.ndim(t) else out[0]
    wmax = sd.omega_max
    fre = lambda w: sd.over_omega(w) * _omega_coth(w, beta) / math.pi
    fim = lambda w: -sd(w) / math.pi
    scale = _quad(fre, wmax, what="C(0) scale")
    for i, ti in enumerate(ts):
        nu = abs(ti) / units.hbar
        if nu == 0:
            re, im = scale, 0.0
        else:
            re = _quad(fre, wmax, weight="cos", wvar=nu, scale=scale, what=f"Re C({ti})")
            im = math.copysign(1.0, ti) * _quad(fim, wmax, weight="sin", wvar=nu, scale=scale,
                                                what=f"Im C({ti})")
        out[i] = re + 1j * im
    return out if np.ndim(t) else out[0]


def _sinc(x):
    return np.sinc(np.asarray(x) / math.pi)


def _x_minus_sin_over_x2(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    return np.where(small, x / 6.0 - x**3 / 120.0, (xs - np.sin(xs)) / xs**2)


def cell_coefficient(sd: SpectralDensity, temperature: float, later: tuple[float, float],
                     earlier: tuple[float, float] | None = None,
                     units: UnitSystem = DEFAULT_UNITS) -> complex:
    """Double integral of ``C(t - t')/hbar^2`` over a pair of time cells.

    With ``earlier=None`` the single cell ``later`` is integrated with
    ``t' < t``.  Otherwise ``earlier`` must end no later than ``later`` starts.
    """
    if sd.is_zero:
        return 0j
    beta = units.beta(temperature)
    hbar = units.hbar
    wmax = sd.omega_max
    a1, a2 = later
    coth_part = lambda w: sd.over_omega(w) * _omega_coth(w, beta) / math.pi
    scale = _quad(coth_part, wmax, what="coefficient scale")
    if earlier is None:
        L = a2 - a1
        if L <= 0:
            return 0j

        def fre(w):
            return coth_part(w) * 0.5 * L**2 * _sinc(0.5 * w * L / hbar) ** 2

        def fim(w):
            # -(nu L - sin nu L)/nu^2 = -L^2 g(nu L) with g = (x - sin x)/x^2
            return -sd(w) / math.pi * L**2 * _x_minus_sin_over_x2(w * L / hbar)

        re = _quad(fre, wmax, scale=scale * L**2, what="diagonal cell (real)")
        im = _quad(fim, wmax, scale=scale * L**2, what="diagonal cell (imag)")
        return complex(re, im) / hbar**2
    b1, b2 = earlier
    if b2 > a1 + 1e-15 * max(1.0, abs(a1)):
        raise ValueError("earlier cell must precede the later cell")
    LA, LB = a2 - a1, b2 - b1
    if LA <= 0 or LB <= 0:
        return 0j
    dc = 0.5 * (a1 + a2) - 0.5 * (b1 + b2)
    nu = dc / hbar

    def envelope(w):
        return LA * LB * _sinc(0.5 * w * LA / hbar) * _sinc(0.5 * w * LB / hbar)

    s = scale * LA * LB
    re = _quad(lambda w: coth_part(w) * envelope(w), wmax, weight="cos", wvar=nu, scale=s,
               what="cell pair (real)")
    im = -_quad(lambda w: sd(w) / math.pi * envelope(w), wmax, weight="sin", wvar=nu, scale=s,
                what="cell pair (imag)")
    return complex(re, im) / hbar**2


@dataclass(frozen=True)
class EtaTable:
    """Discretized influence-functional coefficients for one bath.

    ``lag[m]`` couples two interior points ``m`` steps apart (``lag[0]`` is the
    time-ordered self term).  ``start[m]``/``end[m]`` couple the first/final
    point of a path to the point ``m`` steps away; ``end_start[m]`` couples the
    final and first points of an ``m``-step path.  Index 0 of those arrays holds
    the corresponding half-cell self term.
    """

    dt: float
    memory: int
    temperature: float
    lag: np.ndarray
    start: np.ndarray
    end: np.ndarray
    end_start: np.ndarray

    @property
    def start_self(self) -> complex:
        return complex(self.start[0])

    @property
    def end_self(self) -> complex:
        return complex(self.end[0])

    def coefficient(self, k: int, kp: int, n_final: int) -> complex:
        """Coefficient between points ``k >= kp`` of a path ending at ``n_final``.

        Pairs further apart than the memory length are truncated to zero.
        """
        if not 0 <= kp <= k <= n_final:
            raise ValueError(f"need 0 <= kp <= k <= n_final, got {kp}, {k}, {n_final}")
        m = k - kp
        if m > self.memory or n_final == 0:
            return 0j
        if k == n_final:
            return complex(self.end_start[m] if kp == 0 else self.end[m])
        if kp == 0:
            return complex(self.start[m])
        return complex(self.lag[m])


def build_eta_table(sd: SpectralDensity, temperature: float, dt: float, memory: int | None = None,
                    units: UnitSystem = DEFAULT_UNITS, max_memory: int = 400) -> EtaTable:
    """Integrate the bath correlation function over all cell pairs up to ``memory`` steps.

    ``memory=None`` picks the memory length from the decay of the interior
    coefficients (see :func:`select_memory_length`).
    """
    if not dt > 0:
        raise InvalidParameterError(f"time step must be positive, got {dt}")
    if memory is None:
        memory = select_memory_length(sd, temperature, dt, units=units, max_memory=max_memory)
    if memory < 1:
        raise InvalidParameterError(f"memory length must be >= 1, got {memory}")
    K = int(memory)
    h = 0.5 * dt
    zeros = lambda: np.zeros(K + 1, dtype=complex)
    lag, start, end, end_start = zeros(), zeros(), zeros(), zeros()
    if not sd.is_zero:
        coef = lambda later, earlier=None: cell_coefficient(sd, temperature, later, earlier, units)
        lag[0] = coef((-h, h))
        start[0] = end[0] = coef((0.0, h))
        for m in range(1, K + 1):
            t = m * dt
            lag[m] = coef((t - h, t + h), (-h, h))
            start[m] = coef((t - h, t + h), (0.0, h))
            end[m] = coef((t - h, t), (-h, h))
            end_start[m] = coef((t - h, t), (0.0, h))
    for a in (lag, start, end, end_start):
        a.setflags(write=False)
    return EtaTable(float(dt), K, float(temperature), lag, start, end, end_start)


def select_memory_length(sd: SpectralDensity, temperature: float, dt: float, rel_tol: float = 1e-4,
                         units: UnitSystem = DEFAULT_UNITS, max_memory: int = 400) -> int:
    """Smallest ``K`` with ``|eta_lag[m]| <= rel_tol * |eta_lag[0]|`` for every ``m >= K``.

    The tail is checked until the coefficients have decayed a further decade
    below the threshold, or ``max_memory`` is reached.
    """
    if sd.is_zero:
        return 1
    h = 0.5 * dt
    ref = abs(cell_coefficient(sd, temperature, (-h, h), None, units))
    threshold = rel_tol * ref
    last_above = 0
    below_run = 0
    for m in range(1, max_memory + 1):
        t = m * dt
        val = abs(cell_coefficient(sd, temperature, (t - h, t + h), (-h, h), units))
        if val > threshold:
            last_above = m
            below_run = 0
        else:
            below_run += 1
            if val < 0.1 * threshold and below_run >= 5:
                break
    return max(1, last_above + 1)


@dataclass(frozen=True)
class BathAttachment:
    """A harmonic bath on one site.

    ``values`` are the eigenvalues of the coupling operator on the occupied
    site and on every other state.  The cavity state never carries a bath.
    """

    site: int
    spectral_density: SpectralDensity
    values: tuple[float, float] = DEFAULT_COUPLING_VALUES
