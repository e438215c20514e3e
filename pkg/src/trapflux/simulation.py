"""A complete propagation problem and the engine dispatch used by the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bath import BathAttachment, EtaTable, build_eta_table
from .influence import BathCoupling
from .model import DEFAULT_UNITS, InvalidParameterError, SystemHamiltonian, UnitSystem, validate_density
from .oracle import DEFAULT_PATH_BUDGET, propagate_bare, propagate_pathsum
from .tempo import TruncationPolicy, propagate_tempo
from .trajectory import Trajectory

ENGINES = ("tempo", "pathsum", "bare")


@dataclass(frozen=True)
class Problem:
    """System, baths, temperature (K), initial density and final time (ps)."""

    system: SystemHamiltonian
    baths: tuple[BathAttachment, ...]
    temperature: float
    rho0: np.ndarray = field(compare=False)
    t_final: float
    units: UnitSystem = DEFAULT_UNITS

    def __post_init__(self):
        object.__setattr__(self, "baths", tuple(self.baths))
        rho0 = validate_density(self.rho0)
        if rho0.shape[0] != self.system.n_states:
            raise InvalidParameterError("initial density does not match the system dimension")
        object.__setattr__(self, "rho0", rho0)
        sites = [b.site for b in self.baths]
        if len(set(sites)) != len(sites):
            raise InvalidParameterError("at most one bath per site")
        cav = self.system.cavity_index
        for s in sites:
            if not 0 <= s < self.system.n_states:
                raise InvalidParameterError(f"bath site {s} outside the system")
            if s == cav:
                raise InvalidParameterError("the cavity mode cannot carry a bath")
        if self.baths and not self.temperature > 0:
            raise InvalidParameterError(f"temperature must be positive, got {self.temperature}")
        if not self.t_final > 0:
            raise InvalidParameterError(f"final time must be positive, got {self.t_final}")

    def n_steps(self, dt: float) -> int:
        n = self.t_final / dt
        steps = int(round(n))
        if steps < 1 or abs(n - steps) > 1e-6 * max(1.0, n):
            raise InvalidParameterError(f"t_final = {self.t_final} is not a multiple of dt = {dt}")
        return steps

    def couplings(self, dt: float, memory: int | None) -> list[BathCoupling]:
        """Eta tables for every bath; identical spectral densities share one table."""
        tables: dict[object, EtaTable] = {}
        out = []
        for b in self.baths:
            key = (b.spectral_density.form, b.spectral_density.xi, b.spectral_density.omega_c,
                   id(b.spectral_density.table))
            if key not in tables:
                tables[key] = build_eta_table(b.spectral_density, self.temperature, dt, memory,
                                              self.units)
            out.append(BathCoupling(b.site, tables[key], tuple(b.values)))
        return out


def simulate(problem: Problem, engine: str = "tempo", dt: float = 0.01, memory: int | None = None,
             policy: TruncationPolicy = TruncationPolicy(), path_budget: int = DEFAULT_PATH_BUDGET,
             workers: int = 1, threads: int | None = None) -> Trajectory:
    """Propagate ``problem`` to its final time with the chosen engine.

    ``workers`` applies to the path sum, ``threads`` caps BLAS threads for TEMPO.
    """
    if engine not in ENGINES:
        raise InvalidParameterError(f"unknown engine {engine!r}, expected one of {ENGINES}")
    n = problem.n_steps(dt)
    if engine == "bare":
        return propagate_bare(problem.system, problem.rho0, dt, n, problem.units)
    couplings = problem.couplings(dt, memory)
    if engine == "pathsum":
        return propagate_pathsum(problem.system, couplings, problem.rho0, dt, n, problem.units,
                                 budget=path_budget, workers=workers)
    return propagate_tempo(problem.system, couplings, problem.rho0, dt, n, policy, problem.units,
                           threads=threads)

