"""Time series of reduced density matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """Reduced density matrices ``rho[n]`` on the grid ``times[n] = n*dt`` (ps)."""

    times: np.ndarray
    rho: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.ndim != 3 or self.rho.shape[1] != self.rho.shape[2]:
            raise ValueError(f"rho must have shape (n_times, n, n), got {self.rho.shape}")
        if self.rho.shape[0] != self.times.size:
            raise ValueError("times and rho lengths differ")

    @property
    def n_states(self) -> int:
        return self.rho.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def trace(self) -> np.ndarray:
        return np.einsum("nii->n", self.rho).real

    def populations(self) -> np.ndarray:
        return np.einsum("nii->ni", self.rho).real

    def hermiticity_error(self) -> float:
        return float(np.abs(self.rho - self.rho.conj().transpose(0, 2, 1)).max())

    def min_eigenvalue(self) -> np.ndarray:
        herm = 0.5 * (self.rho + self.rho.conj().transpose(0, 2, 1))
        return np.linalg.eigvalsh(herm)[:, 0]
