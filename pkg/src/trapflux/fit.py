"""Single-exponential loss model ``L(t) = L_inf (1 - exp(-t/tau))``.

For fixed ``tau`` the optimal amplitude is a linear least-squares problem with
closed form ``L_inf = sum(y f) / sum(f f)``, ``f = 1 - exp(-t/tau)``.  The
remaining one-dimensional problem in ``log tau`` is solved by a grid scan
followed by golden-section refinement around the best grid point.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .flux import FluxRecord

TAU_GRID_POINTS = 400
TAU_SPAN = 100.0
TAU_FLOOR = 0.1  # smallest grid tau, in units of the sample spacing
REFINE_RTOL = 1e-6
MIN_POINTS = 8
L_INF_SLACK = 1.05
DEFAULT_R2_THRESHOLD = 0.995

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class FitError(ValueError):
    """The series cannot be fitted (too few points, no loss)."""


@dataclass(frozen=True)
class FitResult:
    L_inf: float
    tau: float
    sse: float
    r_squared: float
    fit_window: tuple[float, float]
    converged: bool

    def model(self, t) -> np.ndarray:
        return self.L_inf * -np.expm1(-np.asarray(t, dtype=float) / self.tau)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_window"] = list(self.fit_window)
        return d


@dataclass(frozen=True)
class GateResult:
    passed: bool
    message: str


def _profile(t, y, tau):
    """Optimal amplitude and residual sum of squares at fixed ``tau``."""
    f = -np.expm1(-t / tau)
    ff = float(f @ f)
    if ff == 0.0:
        return 0.0, float(y @ y)
    a = float(y @ f) / ff
    r = y - a * f
    return a, float(r @ r)


def fit_exponential(times, series, window: tuple[float | None, float | None] | None = None,
                    dt: float | None = None) -> FitResult:
    """Least-squares fit of ``L_inf (1 - exp(-t/tau))`` on ``window = (t_min, t_max)``.

    The model is anchored at ``t = 0`` whatever the window, so a positive
    ``t_min`` only excludes early transients from the residual.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise FitError("times and series must be 1-D arrays of equal length")
    t_min, t_max = window if window is not None else (None, None)
    t_min = t[0] if t_min is None else t_min
    t_max = t[-1] if t_max is None else t_max
    sel = (t >= t_min - 1e-12) & (t <= t_max + 1e-12)
    t, y = t[sel], y[sel]
    if t.size < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points in the fit window, got {t.size}")
    if not np.any(y != 0):
        raise FitError("no loss to fit")
    if dt is None:
        dt = float(np.min(np.diff(t)))
    lo, hi = math.log(TAU_FLOOR * dt), math.log(TAU_SPAN * t[-1])
    grid = np.linspace(lo, hi, TAU_GRID_POINTS)
    sse = np.array([_profile(t, y, math.exp(g))[1] for g in grid])
    i = int(np.argmin(sse))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]

    # golden section on log(tau) inside the bracketing grid cells
    cost = lambda g: _profile(t, y, math.exp(g))[1]
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = cost(c), cost(d)
    converged = False
    for _ in range(200):
        if b - a <= REFINE_RTOL:
            converged = True
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = cost(d)
    best = min([(fc, c), (fd, d), (sse[i], grid[i])])
    tau = math.exp(best[1])
    L_inf, sse_best = _profile(t, y, tau)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse_best / sst if sst > 0 else (1.0 if sse_best == 0 else -math.inf)
    # an optimum pinned to the end of the tau grid is not a genuine minimum
    if i in (0, grid.size - 1):
        converged = False
    return FitResult(float(L_inf), tau, sse_best, r2, (float(t[0]), float(t[-1])), converged)


def fit_all_traps(flux: FluxRecord, window=None) -> dict:
    """Fit ``L_j(t)`` for every lossy state.

    Returns ``{"fits": {j: FitResult}, "share": {j: L_j_inf / sum_k L_k_inf}}``.
    """
    if not flux.lossy:
        raise FitError("the flux record has no lossy states")
    fits = {j: fit_exponential(flux.times, flux.site_loss(j), window) for j in flux.lossy}
    total = sum(f.L_inf for f in fits.values())
    share = {j: (f.L_inf / total if total else math.nan) for j, f in fits.items()}
    return {"fits": fits, "share": share}


def fit_quality_gate(result: FitResult, threshold: float = DEFAULT_R2_THRESHOLD) -> GateResult:
    problems = []
    if not result.r_squared >= threshold:
        problems.append(f"r^2 = {result.r_squared:.6f} below {threshold}")
    if not 0.0 <= result.L_inf <= L_INF_SLACK:
        problems.append(f"L_inf = {result.L_inf:.4f} outside [0, {L_INF_SLACK}]")
    if not result.converged:
        problems.append("tau refinement did not converge")
    if problems:
        return GateResult(False, "; ".join(problems)
                          + ": single-exponential model inadequate, report the raw loss curves instead")
    return GateResult(True, f"r^2 = {result.r_squared:.6f}")
