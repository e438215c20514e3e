"""State-to-state population flux for non-Hermitian single-excitation dynamics.

With ``d rho/dt = -(i/hbar)(H rho - rho H^dag)`` the population of state ``j``
changes as ``dP_j/dt = sum_k R_{j<-k}`` with

    R_{j<-k}(t) = (2/hbar) Im(H_jk rho_kj(t)).

For ``j != k`` and real couplings this is ``-(2/hbar) h_jk Im rho_jk``, which
is antisymmetric in ``(j, k)``; the diagonal term ``(2/hbar) Im(eps_j) rho_jj``
is the loss through state ``j`` into its environment.  Cumulative transfers
``P_{j<-k}(t)`` are trapezoid integrals of these rates on the trajectory grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import DEFAULT_UNITS, SystemHamiltonian, UnitSystem
from .trajectory import Trajectory


@dataclass(frozen=True)
class FluxRecord:
    """Cumulative transfers ``P[n, j, k] = P_{j<-k}(t_n)`` and the derived losses."""

    times: np.ndarray
    P: np.ndarray
    labels: tuple[str, ...]
    lossy: tuple[int, ...]
    total: np.ndarray

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    def transfer(self, j: int, k: int) -> np.ndarray:
        """Cumulative population moved from state ``k`` into state ``j``."""
        return self.P[:, j, k]

    def site_loss(self, j: int) -> np.ndarray:
        """``L_j(t) = -P_{j<-j}(t)``."""
        return -self.P[:, j, j]

    @property
    def losses(self) -> dict[int, np.ndarray]:
        return {j: self.site_loss(j) for j in self.lossy}

    def population_change(self) -> np.ndarray:
        """``sum_k P_{j<-k}(t)`` for every ``j``; compare with ``P_j(t) - P_j(0)``."""
        return self.P.sum(axis=2)


def transfer_rates(traj: Trajectory, system: SystemHamiltonian,
                   units: UnitSystem = DEFAULT_UNITS) -> np.ndarray:
    """Instantaneous rates ``R[n, j, k]`` (ps^-1)."""
    n = system.n_states
    if traj.n_states != n:
        raise ValueError(f"trajectory has {traj.n_states} states, system has {n}")
    H = system.matrix
    # R_jk = (2/hbar) Im(H_jk rho_kj)
    return (2.0 / units.hbar) * np.imag(H[None, :, :] * np.swapaxes(traj.rho, 1, 2))


def pairwise_transfer(traj: Trajectory, system: SystemHamiltonian,
                      units: UnitSystem = DEFAULT_UNITS) -> FluxRecord:
    """Partition population changes into cumulative state-to-state transfers."""
    rates = transfer_rates(traj, system, units)
    P = cumulative_trapezoid(rates, traj.times, axis=0, initial=0.0)
    return FluxRecord(np.asarray(traj.times, dtype=float), P, system.labels,
                      system.lossy_states, total_loss(traj))


def total_loss(traj: Trajectory) -> np.ndarray:
    """Trace deficit ``L(t) = 1 - Tr rho(t)``."""
    return 1.0 - traj.trace().real


def loss_partition_check(flux: FluxRecord, total: np.ndarray | None = None) -> float:
    """``max_n |L(t_n) - sum_j L_j(t_n)|``."""
    total = flux.total if total is None else np.asarray(total, dtype=float)
    if total.shape != flux.times.shape:
        raise ValueError("loss series and flux record are on different grids")
    partial = np.zeros_like(total)
    for j in flux.lossy:
        partial += flux.site_loss(j)
    return float(np.max(np.abs(total - partial), initial=0.0))
