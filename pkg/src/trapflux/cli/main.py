"""``trapflux`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 fit-quality gate failure (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from ..bath import QuadratureError
from ..fit import FitError, fit_exponential, fit_quality_gate
from ..model import InvalidParameterError
from ..oracle import PathBudgetExceeded
from ..tempo import NumericalFailure
from .config import ConfigError, ExperimentConfig, load_config
from .runner import (env_threads, gates_passed, loss_columns, read_table, run_compare_engines,
                     run_simulate, run_sweep)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE = 0, 1, 2, 3


def preset_dir():
    return resources.files("trapflux.cli") / "presets"


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in preset_dir().iterdir() if p.name.endswith(".yaml"))


def resolve_config(spec: str) -> tuple[Path, Path | None]:
    """A config path, or the name of a shipped preset.  Returns (path, base dir)."""
    path = Path(spec)
    if path.exists():
        return path, path.resolve().parent
    if spec in preset_names():
        return Path(str(preset_dir() / f"{spec}.yaml")), None
    raise ConfigError(f"no config file or preset named {spec!r}")


def _load(args) -> tuple[ExperimentConfig, Path | None]:
    path, base = resolve_config(args.config)
    return load_config(path, args.set), base


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path("runs") / cfg.name


def cmd_simulate(args) -> int:
    cfg, base = _load(args)
    if cfg.sweep is not None:
        print("note: config has a sweep block; 'simulate' ignores it (use 'sweep')", file=sys.stderr)
    out = _out_dir(args, cfg)
    scan = [int(k) for k in args.scan_memory.split(",")] if args.scan_memory else None
    analysis = run_simulate(cfg, out, base, env_threads(), scan)
    _print_analysis(analysis)
    print(f"artifacts written to {out}")
    if args.strict and not gates_passed(analysis):
        return EXIT_GATE
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, base = _load(args)
    if cfg.sweep is None:
        raise ConfigError("sweep: config has no sweep block")
    out = _out_dir(args, cfg)
    records = run_sweep(cfg, out, base, workers=args.workers, threads=env_threads())
    for r in records:
        if r["status"] != "ok":
            print(f"{cfg.sweep.parameter}={r['value']}: FAILED {r['error']}")
            continue
        parts = [f"{k}: L_inf={f['L_inf']:.4f} tau={f['tau']:.4f} r2={f['r_squared']:.5f} "
                 f"share={r['share'][k]:.4f}" for k, f in r["fits"].items()]
        print(f"{cfg.sweep.parameter}={r['value']}: " + "; ".join(parts))
    print(f"summary written to {out / 'summary.csv'}")
    if any(r["status"] != "ok" for r in records):
        return EXIT_NUMERICAL
    if args.strict and not all(r.get("gates_passed", False) for r in records):
        return EXIT_GATE
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, base = _load(args)
    report = run_compare_engines(cfg, args.steps, base, env_threads())
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_fit(args) -> int:
    columns, data, _ = read_table(args.table)
    if "t" not in columns:
        raise ConfigError(f"{args.table}: no 't' column")
    t = data[:, columns.index("t")]
    names = args.column or loss_columns(columns)
    if not names:
        raise ConfigError(f"{args.table}: no loss columns (L_<state>) found")
    window = (args.t_min, args.t_max)
    out, ok = {}, True
    fits = {}
    for name in names:
        if name not in columns:
            raise ConfigError(f"{args.table}: no column {name!r}")
        fits[name] = fit_exponential(t, data[:, columns.index(name)], window)
    total = sum(f.L_inf for f in fits.values())
    for name, f in fits.items():
        gate = fit_quality_gate(f, args.r2_threshold)
        ok &= gate.passed
        out[name] = dict(f.to_dict(), share=f.L_inf / total if total else None,
                         gate={"passed": gate.passed, "message": gate.message})
    print(json.dumps(out, indent=2))
    return EXIT_GATE if args.strict and not ok else EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    if not args.name:
        raise ConfigError("presets show: missing preset name")
    if args.name not in preset_names():
        raise ConfigError(f"unknown preset {args.name!r}; available: {', '.join(preset_names())}")
    print((preset_dir() / f"{args.name}.yaml").read_text(), end="")
    return EXIT_OK


def _print_analysis(analysis: dict) -> None:
    for label, f in analysis["fits"].items():
        gate = analysis["gates"][label]
        flag = "" if gate["passed"] else f"  [gate: {gate['message']}]"
        print(f"{label}: L_inf={f['L_inf']:.6f} tau={f['tau']:.6f} ps r2={f['r_squared']:.6f} "
              f"share={analysis['share'][label]:.4f}{flag}")
    print(f"loss partition deviation: {analysis['partition_deviation']:.3e}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trapflux",
                                 description="Open-system exciton dynamics with lossy traps.")
    sub = ap.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("config", help="YAML config file or preset name")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key by dotted path, e.g. propagation.dt=0.005")

    p = sub.add_parser("simulate", help="propagate one config and write its artifacts")
    config_args(p)
    p.add_argument("--out", help="artifact directory (default runs/<name>)")
    p.add_argument("--strict", action="store_true", help="exit 3 when a fit fails its quality gate")
    p.add_argument("--scan-memory", metavar="K1,K2,...",
                   help="also record a memory-length convergence scan in metadata.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run every point of the config's sweep block")
    config_args(p)
    p.add_argument("--out", help="output directory (default runs/<name>)")
    p.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-engines", help="TEMPO against the exact path sum")
    config_args(p)
    p.add_argument("--steps", type=int, help="number of steps (default t_final/dt)")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fit", help="fit single exponentials to the loss columns of a flux table")
    p.add_argument("table")
    p.add_argument("--column", action="append", help="column to fit (default: every L_<state>)")
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--r2-threshold", type=float, default=0.995)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("presets", help="list or print the shipped configs")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError, PathBudgetExceeded, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, QuadratureError, FloatingPointError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # malformed tables and environment values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
