"""Tensor-network propagation of the discretized path integral.

The augmented density tensor over the current memory window is stored as a
matrix product state with one site per retained path point, newest point on
the left.  Each step

1. multiplies in the influence of the newest point on itself and on every
   older point of the window (an MPO whose bond carries the newest index),
   compressing left to right and then right to left,
2. sums out the point that has aged past the memory length,
3. attaches the next point through the bare Liouville propagator.

The reduced density matrix at each time is read out by contracting the state
with the end-point influence factors of the newest point.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
import warnings
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

from .influence import BathCoupling, InfluenceFactors
from .model import DEFAULT_UNITS, SystemHamiltonian, UnitSystem, validate_density
from .oracle import bare_propagators
from .trajectory import Trajectory

CHECKPOINT_VERSION = 1


class TruncationWarning(RuntimeWarning):
    """The bond-dimension ceiling forced discarding singular values above the cutoff."""


class NumericalFailure(RuntimeError):
    """Non-finite numbers appeared during propagation."""


@dataclass(frozen=True)
class TruncationPolicy:
    """SVD truncation settings.

    Singular values below ``cutoff`` times the largest one are discarded and at
    most ``max_bond`` are kept.  ``max_bond=None`` means unbounded.  The cap
    applies to every compressed bond; the bond to the freshly attached point
    is the bare propagator itself and always has the Liouville dimension.
    """

    cutoff: float = 1e-12
    max_bond: int | None = 256

    def __post_init__(self):
        if not 0 < self.cutoff < 1:
            raise ValueError(f"cutoff must lie in (0, 1), got {self.cutoff}")
        if self.max_bond is not None and self.max_bond < 1:
            raise ValueError(f"max_bond must be >= 1, got {self.max_bond}")


@dataclass
class CompressedPathState:
    """MPS over the retained path points ``step, step-1, ...`` (newest first)."""

    tensors: list[np.ndarray]
    step: int
    policy: TruncationPolicy
    discarded: float = 0.0

    @property
    def bond_dimensions(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def save(self, path: str | Path) -> None:
        header = {
            "format": "trapflux-tempo-state",
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "n_tensors": len(self.tensors),
            "cutoff": self.policy.cutoff,
            "max_bond": self.policy.max_bond,
            "discarded": self.discarded,
        }
        arrays = {f"t{i}": t for i, t in enumerate(self.tensors)}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "CompressedPathState":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(data["header"].tobytes().decode())
            if header.get("format") != "trapflux-tempo-state":
                raise ValueError(f"{path} is not a tempo checkpoint")
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header['version']}")
            tensors = [data[f"t{i}"].copy() for i in range(header["n_tensors"])]
        policy = TruncationPolicy(header["cutoff"], header["max_bond"])
        return cls(tensors, header["step"], policy, header["discarded"])


def _svd(m):
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd", check_finite=False)


@dataclass
class _StepStats:
    discarded: float = 0.0
    forced: float = 0.0


def _truncate(s, policy: TruncationPolicy, stats: _StepStats) -> int:
    if s.size == 0 or s[0] == 0:
        return 1
    keep = int(np.count_nonzero(s > policy.cutoff * s[0]))
    keep = max(keep, 1)
    if policy.max_bond is not None and keep > policy.max_bond:
        forced = float(np.sum(s[policy.max_bond:keep] ** 2) / np.sum(s**2))
        stats.forced = max(stats.forced, forced)
        keep = policy.max_bond
    stats.discarded += float(np.sum(s[keep:] ** 2) / np.sum(s**2))
    return keep


class TempoPropagator:
    """Step-by-step tensor-network propagation for one system and set of baths."""

    def __init__(self, system: SystemHamiltonian, couplings: Sequence[BathCoupling],
                 dt: float, policy: TruncationPolicy = TruncationPolicy(),
                 units: UnitSystem = DEFAULT_UNITS):
        for c in couplings:
            if not math.isclose(c.eta.dt, dt, rel_tol=1e-12):
                raise ValueError(f"eta table time step {c.eta.dt} differs from dt = {dt}")
        self.system = system
        self.dt = dt
        self.policy = policy
        self.inf = InfluenceFactors(system.n_states, couplings)
        # a vanishing influence needs no history, which also makes truncation moot
        self.memory = 1 if self.inf.trivial else max(self.inf.memory, 1)
        self.P = bare_propagators(system, dt, units).liouville
        self.d = system.n_states**2
        self.state: CompressedPathState | None = None
        self.history: list[dict] = []
        # carrier classes: newest-point indices with identical coupling differences
        ds = self.inf._ds.T if self.inf.couplings else np.zeros((self.d, 0))
        _, first, cls = np.unique(ds, axis=0, return_index=True, return_inverse=True)
        self._classes = np.asarray(cls).reshape(-1)
        self._class_rep = first
        self._carrier_cache = {}

    # -- influence factors -------------------------------------------------

    def _self_factor(self, n: int) -> np.ndarray:
        if not self.inf.couplings:
            return np.ones(self.d, dtype=complex)
        return self.inf.diagonal("start" if n == 0 else "lag")

    def _pair_factor(self, n: int, i: int) -> np.ndarray:
        """Factor between the newest point ``n`` (interior) and point ``n - i``, by carrier class."""
        kind = "start" if n - i == 0 else "lag"
        key = (kind, i)
        if key not in self._carrier_cache:
            self._carrier_cache[key] = self.inf.matrix(kind, i)[self._class_rep]
        return self._carrier_cache[key]

    def _end_factors(self, n: int):
        if not self.inf.couplings or n == 0:
            return None, []
        pairs = [self.inf.matrix("end_start" if n - i == 0 else "end", i)
                 for i in range(1, len(self.state.tensors))]
        return self.inf.diagonal("end"), pairs

    # -- public API --------------------------------------------------------

    def start(self, rho0: np.ndarray) -> np.ndarray:
        rho0 = validate_density(rho0)
        if rho0.shape[0] != self.system.n_states:
            raise ValueError("initial density does not match the system dimension")
        self.state = CompressedPathState([rho0.reshape(1, self.d, 1).astype(complex)], 0, self.policy)
        self.history = []
        return rho0

    def resume(self, state: CompressedPathState) -> None:
        if state.tensors[0].shape[1] != self.d:
            raise ValueError("checkpoint does not match the system dimension")
        self.state = state

    def step(self) -> np.ndarray:
        """Advance by one time step and return the new reduced density matrix."""
        st = self.state
        n = st.step
        stats = _StepStats()
        retire = len(st.tensors) - 1 >= self.memory
        tensors = self._apply_influence(st.tensors, n, retire, stats)
        tensors = self._sweep_right_to_left(tensors, stats)
        tensors = self._attach_next(tensors)
        st.tensors = tensors
        st.step = n + 1
        st.discarded += stats.discarded
        if stats.forced > 0:
            warnings.warn(
                f"step {n + 1}: bond ceiling {self.policy.max_bond} reached; discarded weight "
                f"{stats.forced:.3e} above cutoff {self.policy.cutoff:.1e}", TruncationWarning)
        rho = self.readout()
        if not np.all(np.isfinite(rho)):
            raise NumericalFailure(
                f"non-finite density matrix at step {n + 1} (bond dimensions {st.bond_dimensions})")
        self.history.append({"step": n + 1, "max_bond": max(st.bond_dimensions, default=1),
                             "discarded": stats.discarded, "forced": stats.forced})
        return rho

    def readout(self) -> np.ndarray:
        """Reduced density matrix at the current step."""
        st = self.state
        n_sites = self.system.n_states
        selfv, pairs = self._end_factors(st.step)
        A0 = st.tensors[0]
        E = A0[0] if selfv is None else A0[0] * selfv[:, None]  # (c, r)
        for i, A in enumerate(st.tensors[1:]):
            T = np.tensordot(E, A, axes=(1, 0))  # (c, a, r)
            if pairs:
                T = T * pairs[i][:, :, None]
            E = T.sum(axis=1)
        return E[:, 0].reshape(n_sites, n_sites)

    # -- internals ---------------------------------------------------------

    def _apply_influence(self, tensors, n, retire, stats):
        """Zip the newest point's influence through the chain, compressing left to right."""
        d = self.d
        A0 = tensors[0] * self._self_factor(n)[None, :, None]
        m = len(tensors) - 1
        if m == 0:
            return [A0]
        nc = self._class_rep.size
        # split the newest site into an identity on its physical leg and a remainder carrying it
        chi0 = A0.shape[0]
        B0 = np.zeros((chi0, d, chi0 * d), dtype=complex)
        idx = np.arange(d)
        for l in range(chi0):
            B0[l, idx, l * d + idx] = 1.0
        R = np.zeros((chi0 * d, nc, A0.shape[2]), dtype=complex)
        R[(np.arange(chi0)[:, None] * d + idx[None, :]).ravel(),
          np.tile(self._classes, chi0)] = A0.reshape(chi0 * d, -1)
        out = [B0]
        for i in range(1, m + 1):
            A = tensors[i]
            M = self._pair_factor(n, i)  # (class, a)
            Z = np.tensordot(R, A, axes=(2, 0))  # (l, c, a, s)
            Z = Z * M[None, :, :, None]
            l, _, a, s = Z.shape
            if i == m:
                W = Z.sum(axis=1)  # close the carrier: (l, a, s)
                if retire:
                    v = W.sum(axis=1)  # (l, s) with s == 1
                    out[-1] = np.tensordot(out[-1], v, axes=(2, 0))
                else:
                    out.append(W)
                break
            Z = Z.transpose(0, 2, 1, 3).reshape(l * a, nc * s)
            U, S, Vh = _svd(Z)
            k = _truncate(S, self.policy, stats)
            out.append(U[:, :k].reshape(l, a, k))
            R = (S[:k, None] * Vh[:k]).reshape(k, nc, s)
        return out

    def _sweep_right_to_left(self, tensors, stats):
        tensors = list(tensors)
        for i in range(len(tensors) - 1, 0, -1):
            A = tensors[i]
            l, a, r = A.shape
            U, S, Vh = _svd(A.reshape(l, a * r))
            k = _truncate(S, self.policy, stats)
            tensors[i] = Vh[:k].reshape(k, a, r)
            tensors[i - 1] = np.tensordot(tensors[i - 1], U[:, :k] * S[:k], axes=(2, 0))
        return tensors

    def _attach_next(self, tensors):
        """New leftmost site from the bare propagator; the old leftmost leg becomes diagonal."""
        d = self.d
        A0 = tensors[0]
        chi0 = A0.shape[0]
        if chi0 != 1:
            raise AssertionError("leftmost site must have a trivial left bond")
        old = np.zeros((d, d, A0.shape[2]), dtype=complex)
        idx = np.arange(d)
        old[idx, idx, :] = A0[0]
        new = self.P.reshape(1, d, d)  # (1, a_new, a_old)
        return [new, old] + list(tensors[1:])


def propagate_tempo(system: SystemHamiltonian, couplings: Sequence[BathCoupling],
                    rho0: np.ndarray, dt: float, n_steps: int,
                    policy: TruncationPolicy = TruncationPolicy(),
                    units: UnitSystem = DEFAULT_UNITS,
                    callback: Callable[[int, np.ndarray], None] | None = None,
                    threads: int | None = None) -> Trajectory:
    """Propagate ``n_steps`` steps of length ``dt`` and return the trajectory.

    ``threads`` caps the BLAS thread pool for the duration of the run.  It is
    clamped to the CPU count: OpenBLAS sizes its buffers at load time and
    crashes when asked for more threads than it saw cores.
    """
    if threads:
        threads = max(1, min(int(threads), os.cpu_count() or 1))
    limit = threadpool_limits(limits=threads, user_api="blas") if threads else nullcontext()
    with limit:
        prop = TempoPropagator(system, couplings, dt, policy, units)
        rho = np.empty((n_steps + 1, system.n_states, system.n_states), dtype=complex)
        rho[0] = prop.start(rho0)
        for n in range(1, n_steps + 1):
            rho[n] = prop.step()
            if callback is not None:
                callback(n, rho[n])
    meta = {
        "engine": "tempo",
        "dt": dt,
        "memory": prop.memory,
        "cutoff": policy.cutoff,
        "max_bond": policy.max_bond,
        "max_bond_reached": max((h["max_bond"] for h in prop.history), default=1),
        "discarded_weight": prop.state.discarded,
        "step_discarded": [h["discarded"] for h in prop.history],
    }
    return Trajectory(dt * np.arange(n_steps + 1), rho, meta)


@dataclass
class ConvergenceReport:
    """Observables per parameter tuple ``(dt, K, cutoff)`` and their mutual deviations.

    ``observables[i]`` stacks the populations at ``checkpoints`` followed by
    the per-state losses at the final time.  ``deltas[i, j]`` is the largest
    absolute difference between tuples ``i`` and ``j``.
    """

    params: list[tuple[float, int, float]]
    checkpoints: np.ndarray
    observables: np.ndarray
    deltas: np.ndarray | None
    target: float
    converged_index: int | None
    runtimes: list[float]

    @property
    def converged(self) -> tuple[float, int, float] | None:
        return None if self.converged_index is None else self.params[self.converged_index]

    def rows(self) -> list[dict]:
        ref = len(self.params) - 1
        out = []
        for i, (dt, K, cut) in enumerate(self.params):
            out.append({"dt": dt, "memory": K, "cutoff": cut, "runtime": self.runtimes[i],
                        "delta_to_reference": None if self.deltas is None else float(self.deltas[i, ref]),
                        "flagged": i == self.converged_index})
        return out


def _cost_key(p):
    dt, K, cut = p
    return (-dt, K, -cut)


def convergence_scan(problem, dt_list: Sequence[float], K_list: Sequence[int],
                     cutoff_list: Sequence[float], target: float = 0.01,
                     max_bond: int | None = 256, n_checkpoints: int = 4) -> ConvergenceReport:
    """Run every ``(dt, K, cutoff)`` combination of ``problem`` and compare observables.

    Tuples are ordered from cheapest to most expensive; the last one serves as
    the reference.  The flagged tuple is the cheapest whose deviation from the
    reference is at most ``target`` (absolute, in units of the initial
    population).
    """
    from .flux import pairwise_transfer

    if not (dt_list and K_list and cutoff_list):
        raise ValueError("convergence_scan needs non-empty parameter lists")
    params = sorted(itertools.product(dt_list, K_list, cutoff_list), key=_cost_key)
    checkpoints = problem.t_final * np.arange(1, n_checkpoints + 1) / n_checkpoints
    obs, runtimes = [], []
    for dt, K, cut in params:
        t0 = time.perf_counter()
        couplings = problem.couplings(dt, K)
        traj = propagate_tempo(problem.system, couplings, problem.rho0, dt, problem.n_steps(dt),
                               TruncationPolicy(cut, max_bond), problem.units)
        runtimes.append(time.perf_counter() - t0)
        pops = np.stack([np.interp(checkpoints, traj.times, p) for p in traj.populations().T], 1)
        flux = pairwise_transfer(traj, problem.system, problem.units)
        losses = [flux.site_loss(j)[-1] for j in flux.lossy]
        obs.append(np.concatenate([pops.ravel(), losses]))
    obs = np.array(obs)
    if len(params) == 1:
        return ConvergenceReport(params, checkpoints, obs, None, target, None, runtimes)
    deltas = np.abs(obs[:, None, :] - obs[None, :, :]).max(axis=2)
    ref = len(params) - 1
    ok = [i for i in range(ref) if deltas[i, ref] <= target]
    return ConvergenceReport(params, checkpoints, obs, deltas, target, ok[0] if ok else None,
                             runtimes)
