"""Artifact-producing runs behind the command line: simulate, sweep, compare."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from ..fit import FitError, fit_exponential, fit_quality_gate
from ..flux import FluxRecord, loss_partition_check, pairwise_transfer
from ..oracle import propagate_pathsum
from ..simulation import Problem, simulate
from ..tempo import TruncationPolicy, convergence_scan, propagate_tempo
from ..trajectory import Trajectory
from .config import ExperimentConfig, dump_config, sweep_points

THREADS_ENV = "TRAPFLUX_THREADS"


def env_threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# -- tables -------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_table(path: Path, columns: list[str], data: np.ndarray, preamble: list[str]) -> None:
    """Comma-separated table: ``#`` preamble, one header row, 17 significant digits."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError("table data does not match its header")
    lines = [f"# {p}" for p in preamble]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(v) for v in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> tuple[list[str], np.ndarray, list[str]]:
    """Inverse of :func:`write_table`: ``(columns, data, preamble)``."""
    preamble, header, rows = [], None, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                preamble.append(line[1:].strip())
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header row")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data, preamble


def trajectory_table(traj: Trajectory, labels: tuple[str, ...]):
    n = traj.n_states
    cols = ["t", "trace"] + [f"P_{lab}" for lab in labels]
    blocks = [traj.times[:, None], traj.trace()[:, None], traj.populations()]
    for j in range(n):
        for k in range(j + 1, n):
            cols += [f"re_rho_{labels[j]}_{labels[k]}", f"im_rho_{labels[j]}_{labels[k]}"]
            blocks += [traj.rho[:, j, k].real[:, None], traj.rho[:, j, k].imag[:, None]]
    pre = ["trajectory: reduced density matrix in the site basis",
           "units: t [ps]; trace, populations and coherences dimensionless"]
    return cols, np.hstack(blocks), pre


def flux_table(flux: FluxRecord):
    labels = flux.labels
    cols = ["t", "L_total"] + [f"L_{labels[j]}" for j in flux.lossy]
    blocks = [flux.times[:, None], flux.total[:, None]] + [flux.site_loss(j)[:, None] for j in flux.lossy]
    n = flux.n_states
    for j in range(n):
        for k in range(n):
            if j != k:
                cols.append(f"P_{labels[j]}<-{labels[k]}")
                blocks.append(flux.transfer(j, k)[:, None])
    pre = ["flux: cumulative state-to-state transfers and per-trap losses",
           "units: t [ps]; L_total = 1 - Tr rho; L_<state> = loss through that state; "
           "P_<j><-<k> = population moved from k to j; all dimensionless"]
    return cols, np.hstack(blocks), pre


def loss_columns(columns: list[str]) -> list[str]:
    return [c for c in columns if c.startswith("L_") and c != "L_total"]


# -- analysis -----------------------------------------------------------------

def analyse(flux: FluxRecord, cfg: ExperimentConfig) -> dict:
    """Fits, drain shares, quality gates and the loss-partition deviation."""
    labels = flux.labels
    out: dict[str, Any] = {"partition_deviation": loss_partition_check(flux), "fits": {},
                           "share": {}, "gates": {}}
    if not flux.lossy or not np.any(flux.total > 0):
        out["note"] = "no loss channel; nothing to fit"
        return out
    window = tuple(cfg.analysis.fit_window)
    fits = {}
    for j in flux.lossy:
        try:
            fits[j] = fit_exponential(flux.times, flux.site_loss(j), window)
        except FitError as exc:
            out["gates"][labels[j]] = {"passed": False, "message": str(exc)}
    total = sum(f.L_inf for f in fits.values())
    for j, f in fits.items():
        gate = fit_quality_gate(f, cfg.analysis.r2_threshold)
        out["fits"][labels[j]] = f.to_dict()
        out["share"][labels[j]] = f.L_inf / total if total else math.nan
        out["gates"][labels[j]] = {"passed": gate.passed, "message": gate.message}
    return out


def gates_passed(analysis: dict) -> bool:
    return all(g["passed"] for g in analysis["gates"].values())


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _trajectory_metadata(traj: Trajectory) -> dict:
    meta = {k: v for k, v in traj.metadata.items() if k != "step_discarded"}
    meta["trace_min"] = float(traj.trace().min())
    meta["hermiticity_error"] = traj.hermiticity_error()
    meta["min_eigenvalue"] = float(traj.min_eigenvalue().min())
    return meta


# -- runs ---------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out: str | Path, base: Path | None = None,
                 threads: int | None = None, scan_memory: list[int] | None = None) -> dict:
    """Propagate, analyse and write the artifact directory; returns the analysis."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.build_problem(base)
    p = cfg.propagation
    traj = simulate(problem, p.engine, p.dt, p.memory, cfg.policy(), p.path_budget, threads=threads)
    flux = pairwise_transfer(traj, problem.system, problem.units)
    analysis = analyse(flux, cfg)

    (out / "config.yaml").write_text(dump_config(cfg))
    write_table(out / "trajectory.csv", *trajectory_table(traj, problem.system.labels))
    write_table(out / "flux.csv", *flux_table(flux))
    (out / "fits.json").write_text(_json(analysis))
    meta = {"name": cfg.name, "labels": list(problem.system.labels),
            "engine": _trajectory_metadata(traj)}
    if scan_memory:
        report = convergence_scan(problem, [p.dt], scan_memory, [p.svd_cutoff], max_bond=p.max_bond)
        meta["convergence"] = {
            "target": report.target,
            "flagged": None if report.converged is None else list(report.converged),
            # runtimes are machine dependent and kept out of the reproducible record
            "rows": [{k: v for k, v in row.items() if k != "runtime"} for row in report.rows()],
        }
    (out / "metadata.json").write_text(_json(meta))
    return analysis


def _sweep_worker(args):
    value, cfg, out, base, threads = args
    try:
        analysis = run_simulate(cfg, out, base, threads)
        return value, "ok", analysis, None
    except Exception as exc:  # recorded per point, the sweep continues
        return value, "failed", None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, out: str | Path, base: Path | None = None,
              workers: int = 1, threads: int | None = None) -> list[dict]:
    """One artifact directory per sweep point plus ``summary.csv`` and ``summary.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    points = sweep_points(cfg)
    jobs = [(value, pc, out / f"point-{i:03d}", base, threads) for i, (value, pc) in enumerate(points)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs, chunksize=1))
    else:
        results = [_sweep_worker(j) for j in jobs]

    records = []
    for i, (value, status, analysis, error) in enumerate(results):
        rec = {"index": i, "value": value, "status": status, "error": error,
               "fits": {}, "share": {}}
        if analysis is not None:
            rec["fits"] = {k: {"L_inf": f["L_inf"], "tau": f["tau"], "r_squared": f["r_squared"]}
                           for k, f in analysis["fits"].items()}
            rec["share"] = analysis["share"]
            rec["gates_passed"] = gates_passed(analysis)
        records.append(rec)
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "summary.json").write_text(_json({"parameter": cfg.sweep.parameter if cfg.sweep else None,
                                             "points": records}))
    _write_summary_table(out / "summary.csv", cfg, records)
    return records


def _write_summary_table(path: Path, cfg: ExperimentConfig, records: list[dict]) -> None:
    labels = sorted({k for r in records for k in r["fits"]})
    cols = ["value", "ok"]
    for lab in labels:
        cols += [f"L_inf_{lab}", f"tau_{lab}", f"r2_{lab}", f"share_{lab}"]
    rows = []
    for r in records:
        try:
            v = float(r["value"])
        except (TypeError, ValueError):
            v = float(r["index"])
        row = [v, 1.0 if r["status"] == "ok" else 0.0]
        for lab in labels:
            f = r["fits"].get(lab)
            row += [math.nan] * 4 if f is None else [f["L_inf"], f["tau"], f["r_squared"],
                                                     r["share"].get(lab, math.nan)]
        rows.append(row)
    param = cfg.sweep.parameter if cfg.sweep else "none"
    pre = [f"sweep over {param}", "units: tau [ps]; L_inf, r2, share dimensionless; ok = 1 for a "
           "successful point"]
    write_table(path, cols, np.array(rows, dtype=float).reshape(len(rows), len(cols)), pre)


def run_compare_engines(cfg: ExperimentConfig, steps: int | None = None, base: Path | None = None,
                        threads: int | None = None) -> dict:
    """Max elementwise deviation between TEMPO and the exact path sum on a shared grid."""
    problem: Problem = cfg.build_problem(base)
    p = cfg.propagation
    n = steps if steps is not None else problem.n_steps(p.dt)
    memory = p.memory if p.memory is not None else n
    couplings = problem.couplings(p.dt, memory)
    exact = propagate_pathsum(problem.system, couplings, problem.rho0, p.dt, n, problem.units,
                              budget=p.path_budget)
    tempo = propagate_tempo(problem.system, couplings, problem.rho0, p.dt, n,
                            TruncationPolicy(p.svd_cutoff, p.max_bond), problem.units, threads=threads)
    dev = np.abs(tempo.rho - exact.rho)
    return {"steps": n, "dt": p.dt, "memory": couplings[0].eta.memory if couplings else None,
            "cutoff": p.svd_cutoff, "max_deviation": float(dev.max()),
            "max_deviation_per_step": [float(x) for x in dev.reshape(n + 1, -1).max(axis=1)],
            "max_bond_reached": tempo.metadata["max_bond_reached"]}
