"""Units, non-Hermitian Frenkel Hamiltonians and the polaritonic extension.

Energies are in cm^-1, times in ps and temperatures in K.  A site with a
finite local lifetime ``T`` carries the imaginary energy ``-pi*hbar/T``, so
that an isolated site loses population as ``exp(-2*pi*t/T)`` (the "angular"
convention).  The "population" convention instead reads ``T`` as the
population lifetime, ``Im(eps) = -hbar/(2T)`` and decay ``exp(-t/T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

CAVITY_LABEL = "cavity"
# coupling-operator eigenvalues (excitation on the bath's own site, anywhere else)
DEFAULT_COUPLING_VALUES = (2.0, 0.0)
LIFETIME_CONVENTIONS = ("angular", "population")


class InvalidParameterError(ValueError):
    """Raised for physically meaningless model parameters."""


@dataclass(frozen=True)
class UnitSystem:
    """Physical constants in the cm^-1 / ps / K unit system.

    ``hbar = 1 / (2 pi c)`` with ``c = 0.0299792458 cm/ps``; ``kB`` is the
    CODATA Boltzmann constant divided by ``h c``.
    """

    hbar: float = 1.0 / (2.0 * math.pi * 0.0299792458)  # cm^-1 ps
    kB: float = 0.695034800  # cm^-1 / K

    def beta(self, temperature: float) -> float:
        if temperature <= 0:
            raise InvalidParameterError(f"temperature must be positive, got {temperature}")
        return 1.0 / (self.kB * temperature)


DEFAULT_UNITS = UnitSystem()


def loss_energy_from_lifetime(lifetime: float, units: UnitSystem = DEFAULT_UNITS,
                              convention: str = "angular") -> float:
    """Imaginary part of the site energy for a local decay time (ps).

    ``math.inf`` means no loss and returns 0.
    """
    if convention not in LIFETIME_CONVENTIONS:
        raise InvalidParameterError(f"unknown lifetime convention {convention!r}")
    if not lifetime > 0:
        raise InvalidParameterError(f"lifetime must be positive, got {lifetime}")
    if math.isinf(lifetime):
        return 0.0
    if convention == "population":
        return -0.5 * units.hbar / lifetime
    return -math.pi * units.hbar / lifetime


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemHamiltonian:
    """Single-excitation Hamiltonian ``H = diag(eps) + h``.

    ``eps`` holds complex site energies (imaginary parts <= 0 encode losses),
    ``h`` the real symmetric couplings with zero diagonal.
    """

    eps: np.ndarray
    h: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=complex).reshape(-1)
        h = np.asarray(self.h, dtype=float)
        n = eps.size
        if n < 1:
            raise InvalidParameterError("a Hamiltonian needs at least one state")
        if h.shape != (n, n):
            raise InvalidParameterError(f"coupling matrix must be {n}x{n}, got {h.shape}")
        if not np.array_equal(h, h.T):
            raise InvalidParameterError("coupling matrix must be symmetric")
        if np.any(np.diag(h) != 0):
            raise InvalidParameterError("coupling matrix must have a zero diagonal")
        if np.any(eps.imag > 0):
            raise InvalidParameterError("gain (positive imaginary site energy) is not supported")
        labels = tuple(self.labels) or tuple(f"site{j + 1}" for j in range(n))
        if len(labels) != n:
            raise InvalidParameterError(f"expected {n} labels, got {len(labels)}")
        if len(set(labels)) != n:
            raise InvalidParameterError("state labels must be unique")
        object.__setattr__(self, "eps", _frozen(eps))
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "labels", labels)

    @property
    def n_states(self) -> int:
        return self.eps.size

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.eps) + self.h

    @property
    def is_hermitian(self) -> bool:
        return bool(np.all(self.eps.imag == 0))

    @property
    def lossy_states(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.eps.imag < 0))

    @property
    def cavity_index(self) -> int | None:
        try:
            return self.labels.index(CAVITY_LABEL)
        except ValueError:
            return None

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_excitonic_chain(
    n: int,
    site_energy: float = 0.0,
    coupling: float = -181.5,
    loss_lifetimes: Mapping[int, float] | None = None,
    units: UnitSystem = DEFAULT_UNITS,
    convention: str = "angular",
) -> SystemHamiltonian:
    """Chain of ``n`` identical monomers with nearest-neighbour coupling.

    ``loss_lifetimes`` maps 0-based site indices to local decay times in ps.
    """
    if n < 1:
        raise InvalidParameterError(f"chain length must be >= 1, got {n}")
    eps = np.full(n, site_energy, dtype=complex)
    for site, lifetime in (loss_lifetimes or {}).items():
        if not 0 <= site < n:
            raise InvalidParameterError(f"loss on site {site} outside chain of {n} sites")
        eps[site] += 1j * loss_energy_from_lifetime(lifetime, units, convention)
    h = np.zeros((n, n))
    idx = np.arange(n - 1)
    h[idx, idx + 1] = coupling
    h[idx + 1, idx] = coupling
    return SystemHamiltonian(eps, h)


def embed_cavity(
    system: SystemHamiltonian,
    cavity_energy: float = 0.0,
    lifetime: float = math.inf,
    coupling: float = 181.5,
    units: UnitSystem = DEFAULT_UNITS,
    convention: str = "angular",
) -> SystemHamiltonian:
    """Append a single cavity mode coupled uniformly to every monomer.

    ``cavity_energy`` is the photon energy (hbar*omega_c) in cm^-1.
    """
    if system.cavity_index is not None:
        raise InvalidParameterError("system already contains a cavity mode")
    if not np.isfinite(coupling):
        raise InvalidParameterError("cavity coupling must be finite")
    n = system.n_states
    eps = np.empty(n + 1, dtype=complex)
    eps[:n] = system.eps
    eps[n] = cavity_energy + 1j * loss_energy_from_lifetime(lifetime, units, convention)
    h = np.zeros((n + 1, n + 1))
    h[:n, :n] = system.h
    h[:n, n] = coupling
    h[n, :n] = coupling
    return SystemHamiltonian(eps, h, system.labels + (CAVITY_LABEL,))


def validate_density(rho: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Check that ``rho`` is a Hermitian, positive, unit-trace density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidParameterError(f"density matrix must be square, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
        raise InvalidParameterError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise InvalidParameterError(f"density matrix trace is {np.trace(rho).real}, expected 1")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise InvalidParameterError("density matrix is not positive semidefinite")
    return rho


@dataclass(frozen=True)
class InitialCondition:
    """Either a pure excitation of one state or an explicit density matrix."""

    site: int | None = 0
    matrix: np.ndarray | None = field(default=None, compare=False)

    def density(self, n_states: int) -> np.ndarray:
        if self.matrix is not None:
            rho = validate_density(self.matrix)
            if rho.shape != (n_states, n_states):
                raise InvalidParameterError(
                    f"initial density is {rho.shape[0]}x{rho.shape[0]}, system has {n_states} states"
                )
            return rho
        if self.site is None or not 0 <= self.site < n_states:
            raise InvalidParameterError(f"initial site {self.site} outside 0..{n_states - 1}")
        rho = np.zeros((n_states, n_states), dtype=complex)
        rho[self.site, self.site] = 1.0
        return rho


def excitonic_trimer(units: UnitSystem = DEFAULT_UNITS, convention: str = "angular") -> SystemHamiltonian:
    """Three identical monomers, h = -181.5 cm^-1, drain on the third (T = 0.3 ps)."""
    return build_excitonic_chain(3, 0.0, -181.5, {2: 0.3}, units, convention)


def polaritonic_trimer(
    coupling: float = 181.5,
    cavity_lifetime: float = 0.6,
    drain_lifetime: float = 0.3,
    units: UnitSystem = DEFAULT_UNITS,
    convention: str = "angular",
) -> SystemHamiltonian:
    """Excitonic trimer coupled to a resonant leaky cavity mode."""
    chain = build_excitonic_chain(3, 0.0, -181.5, {2: drain_lifetime}, units, convention)
    return embed_cavity(chain, 0.0, cavity_lifetime, coupling, units, convention)


def coupling_signs(n_states: int, sites: Sequence[int],
                   values: Sequence[tuple[float, float]] | None = None) -> np.ndarray:
    """Eigenvalues of the bath coupling operators, one row per bath.

    By default the bath on site ``j`` sees 2 when the excitation sits on ``j``
    and 0 for every other state, the cavity included: the bath of an
    unexcited monomer, and of every monomer while the photon is excited, stays
    in its ground-state equilibrium.  ``values`` gives a
    per-bath ``(occupied, other)`` pair instead.
    """
    if values is None:
        values = [DEFAULT_COUPLING_VALUES] * len(sites)
    s = np.empty((len(sites), n_states))
    for b, (j, (on, off)) in enumerate(zip(sites, values)):
        if not 0 <= j < n_states:
            raise InvalidParameterError(f"bath site {j} outside 0..{n_states - 1}")
        s[b] = off
        s[b, j] = on
    return s
