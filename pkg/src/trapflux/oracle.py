"""Bare propagation and brute-force evaluation of the discretized path integral.

The path sum enumerates every forward/backward path pair and is exponentially
expensive; it exists to validate the tensor-network engine on short runs.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .influence import BathCoupling, InfluenceFactors
from .model import DEFAULT_UNITS, SystemHamiltonian, UnitSystem, validate_density
from .trajectory import Trajectory

DEFAULT_PATH_BUDGET = 10**8
_TAIL_SIZE = 600_000


class PathBudgetExceeded(RuntimeError):
    """The requested path sum is larger than the configured budget."""


@dataclass(frozen=True)
class BarePropagators:
    """Forward ``U = exp(-i H dt/hbar)`` and backward ``Ubar = exp(i H^dag dt/hbar)``."""

    U: np.ndarray
    Ubar: np.ndarray
    dt: float

    @property
    def liouville(self) -> np.ndarray:
        """Superoperator acting on ``rho.reshape(-1)``: rho -> U rho Ubar."""
        return np.kron(self.U, self.Ubar.T)


def bare_propagators(system: SystemHamiltonian, dt: float,
                     units: UnitSystem = DEFAULT_UNITS) -> BarePropagators:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    H = system.matrix
    U = expm(-1j * H * dt / units.hbar)
    Ubar = expm(1j * H.conj().T * dt / units.hbar)
    return BarePropagators(U, Ubar, dt)


def propagate_bare(system: SystemHamiltonian, rho0: np.ndarray, dt: float, n_steps: int,
                   units: UnitSystem = DEFAULT_UNITS) -> Trajectory:
    """Environment-free evolution ``rho(t + dt) = U rho(t) Ubar``."""
    rho0 = validate_density(rho0)
    prop = bare_propagators(system, dt, units)
    rho = np.empty((n_steps + 1,) + rho0.shape, dtype=complex)
    rho[0] = rho0
    for n in range(n_steps):
        rho[n + 1] = prop.U @ rho[n] @ prop.Ubar
    return Trajectory(dt * np.arange(n_steps + 1), rho, {"engine": "bare", "dt": dt})


def path_pair_count(n_states: int, n_steps: int) -> int:
    return n_states ** (2 * n_steps)


def propagate_pathsum(system: SystemHamiltonian, couplings: Sequence[BathCoupling],
                      rho0: np.ndarray, dt: float, n_steps: int,
                      units: UnitSystem = DEFAULT_UNITS, budget: int = DEFAULT_PATH_BUDGET,
                      workers: int = 1) -> Trajectory:
    """Exact sum over all path pairs, one independent sum per output time.

    Every pair of points closer than the memory length of the eta tables is
    weighted by its influence factor.  Paths are enumerated depth first over a
    short prefix; the remaining levels are summed as one dense array.
    """
    n = system.n_states
    if path_pair_count(n, n_steps) > budget:
        raise PathBudgetExceeded(
            f"{path_pair_count(n, n_steps):.3e} path pairs for {n} states and {n_steps} steps "
            f"exceeds the budget of {budget:.3e}")
    rho0 = validate_density(rho0)
    for c in couplings:
        if not math.isclose(c.eta.dt, dt, rel_tol=1e-12):
            raise ValueError(f"eta table time step {c.eta.dt} differs from dt = {dt}")
    inf = InfluenceFactors(n, couplings)
    P = bare_propagators(system, dt, units).liouville
    d = n * n
    out = np.empty((n_steps + 1, n, n), dtype=complex)
    out[0] = rho0
    for N in range(1, n_steps + 1):
        out[N] = _pathsum_final(P, inf, rho0.reshape(-1), N, workers).reshape(n, n)
    meta = {"engine": "pathsum", "dt": dt, "memory": inf.memory, "workers": workers}
    return Trajectory(dt * np.arange(n_steps + 1), out, meta)


def _pathsum_final(P, inf, rho0_vec, N, workers):
    d = P.shape[0]
    pair = lambda k, kp: inf.coefficient_pair(k, kp, N) if inf.couplings else None
    selfs = [inf.coefficient_self(k, N) if inf.couplings else None for k in range(N + 1)]
    memory = inf.memory if inf.couplings else 0
    pairs = {(k, kp): pair(k, kp) for k in range(N + 1) for kp in range(max(0, k - memory), k)}

    # split levels 0..N into an enumerated head and a dense tail
    n_tail = max(1, min(N, int(math.log(_TAIL_SIZE, d))))
    head = N + 1 - n_tail

    def head_weights(prefix):
        # incremental weight of an explicit prefix alpha_0..alpha_{head-1}
        w = rho0_vec[prefix[0]]
        for k, a in enumerate(prefix):
            if k:
                w *= P[a, prefix[k - 1]]
            if selfs[k] is not None:
                w *= selfs[k][a]
                for kp in range(max(0, k - memory), k):
                    w *= pairs[k, kp][a, prefix[kp]]
            if w == 0:
                break
        return w

    def tail_sum(prefix, w):
        T = None
        for k in range(head, N + 1):
            if T is None:
                T = w * P[:, prefix[-1]]
            else:
                T = T[..., None] * P.T.reshape((1,) * (T.ndim - 1) + (d, d))
            if selfs[k] is not None:
                T = T * selfs[k]
                for kp in range(max(0, k - memory), k):
                    M = pairs[k, kp]
                    if kp < head:
                        T = T * M[:, prefix[kp]]
                    else:
                        shape = [1] * T.ndim
                        shape[kp - head] = d
                        shape[-1] = d
                        T = T * M.T.reshape(shape)
        return T.reshape(-1, d).sum(axis=0)

    nonzero = [a for a in range(d) if rho0_vec[a] != 0]
    prefixes = [p for p in itertools.product(nonzero, *([range(d)] * (head - 1)))]

    def work(chunk):
        return [tail_sum(p, w) for p in chunk if (w := head_weights(p)) != 0]

    if workers <= 1 or len(prefixes) < 2:
        parts = work(prefixes)
    else:
        size = -(-len(prefixes) // workers)
        chunks = [prefixes[i:i + size] for i in range(0, len(prefixes), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = [v for part in pool.map(work, chunks) for v in part]
    # accumulate in prefix order so the result does not depend on the worker count
    total = np.zeros(d, dtype=complex)
    for v in parts:
        total += v
    return total
