"""Influence-functional factors in Liouville space.

A Liouville index ``alpha = a_plus * n + a_minus`` labels a forward/backward
pair of system states, matching ``rho.reshape(-1)``.  For a pair of path points
``alpha`` (later) and ``alpha'`` (earlier) with coefficient ``eta`` each bath
contributes ``exp(-ds(alpha) * (eta * s+(alpha') - conj(eta) * s-(alpha')))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bath import EtaTable
from .model import DEFAULT_COUPLING_VALUES, coupling_signs


@dataclass(frozen=True)
class BathCoupling:
    """A bath attached to one site together with its coefficient table.

    ``values`` are the coupling-operator eigenvalues (occupied site, any other state).
    """

    site: int
    eta: EtaTable
    values: tuple[float, float] = DEFAULT_COUPLING_VALUES


class InfluenceFactors:
    """Precomputed pair factors for every coefficient kind in a set of eta tables."""

    def __init__(self, n_states: int, couplings: Sequence[BathCoupling]):
        self.n_states = n_states
        self.d = n_states**2
        self.couplings = tuple(couplings)
        if self.couplings:
            dts = {c.eta.dt for c in self.couplings}
            mems = {c.eta.memory for c in self.couplings}
            if len(dts) != 1 or len(mems) != 1:
                raise ValueError("all baths must share the time step and memory length")
            self.memory = mems.pop()
            self.dt = dts.pop()
        else:
            self.memory = 0
            self.dt = None
        sites = [c.site for c in self.couplings]
        if len(set(sites)) != len(sites):
            raise ValueError("at most one bath per site")
        s = coupling_signs(n_states, sites, [c.values for c in self.couplings])
        a = np.arange(self.d)
        self._sp = s[:, a // n_states]
        self._sm = s[:, a % n_states]
        self._ds = self._sp - self._sm
        self._cache = {}

    @property
    def trivial(self) -> bool:
        return not self.couplings or all(
            not any(np.any(getattr(c.eta, k)) for k in ("lag", "start", "end", "end_start"))
            for c in self.couplings)

    def pair(self, etas) -> np.ndarray:
        """``M[alpha, alpha']`` for per-bath coefficients ``etas``."""
        etas = np.asarray(etas, dtype=complex)
        if etas.size == 0:
            return np.ones((self.d, self.d), dtype=complex)
        x = np.einsum("ba,b,bc->ac", self._ds, etas, self._sp)
        x -= np.einsum("ba,b,bc->ac", self._ds, etas.conj(), self._sm)
        return np.exp(-x)

    def self_term(self, etas) -> np.ndarray:
        """Diagonal of :meth:`pair`: a point interacting with itself."""
        etas = np.asarray(etas, dtype=complex)
        if etas.size == 0:
            return np.ones(self.d, dtype=complex)
        x = np.einsum("ba,b,ba->a", self._ds, etas, self._sp)
        x -= np.einsum("ba,b,ba->a", self._ds, etas.conj(), self._sm)
        return np.exp(-x)

    def _etas(self, kind: str, m: int) -> np.ndarray:
        return np.array([getattr(c.eta, kind)[m] for c in self.couplings], dtype=complex)

    def matrix(self, kind: str, m: int) -> np.ndarray:
        """Pair factor for table ``kind`` ('lag', 'start', 'end', 'end_start') at separation ``m``."""
        key = (kind, m)
        if key not in self._cache:
            self._cache[key] = self.pair(self._etas(kind, m))
        return self._cache[key]

    def diagonal(self, kind: str) -> np.ndarray:
        """Self factor for 'lag' (interior point), 'start' or 'end' half cells."""
        key = (kind, "self")
        if key not in self._cache:
            self._cache[key] = self.self_term(self._etas(kind, 0))
        return self._cache[key]

    def coefficient_pair(self, k: int, kp: int, n_final: int) -> np.ndarray:
        """Pair factor between path points ``k > kp`` of a path ending at ``n_final``."""
        etas = [c.eta.coefficient(k, kp, n_final) for c in self.couplings]
        return self.pair(etas)

    def coefficient_self(self, k: int, n_final: int) -> np.ndarray:
        etas = [c.eta.coefficient(k, k, n_final) for c in self.couplings]
        return self.self_term(etas)
