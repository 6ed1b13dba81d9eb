"""Command-line front-end: ``otfs-aircomp {sweep,figure,replay,selftest}``.

Exit codes: 0 success, 1 configuration error, 2 infeasible configuration,
3 runtime failure, 4 trend-check (or selftest) failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .channel import InfeasibleConfigError
from .config import DESK_DEFAULTS, PAPER_SCALE, ConfigError, SweepConfig, parse_config
from .precoder import NON_ROBUST, ROBUST
from .presets import FULL_SCALE_TRIALS, PRESETS, Series, evaluate_figure, figure_series
from .sim import SweepResult, monte_carlo_sweep, power_ratio_sweep

__all__ = ["main", "build_parser", "write_results", "results_csv", "EXIT"]

EXIT = {"ok": 0, "config": 1, "infeasible": 2, "runtime": 3, "trend": 4}
CSV_COLUMNS = ("snr_db", "scheme", "mode", "nmse_mean", "nmse_stderr", "trials")
SEED_ENV = "OTFS_AIRCOMP_SEED"
_SCHEME_FLAG = {"robust": (ROBUST,), "nonrobust": (NON_ROBUST,), "both": (ROBUST, NON_ROBUST)}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT["config"], f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file (see README for the grammar)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: ./results)")
    p.add_argument("--seed", type=_u64, help=f"master seed (default: the config file, then ${SEED_ENV}, then 0)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
    p.add_argument("--scale", choices=("desk", "full"), default="desk", help="desk (16x16) or full (64x64) grid")
    p.add_argument("--scheme", choices=tuple(_SCHEME_FLAG), help="precoder scheme(s) to run")
    p.add_argument("--mode", choices=("integer", "fractional"), help="Doppler model")
    p.add_argument("--trials", type=int, help="trials per point (overrides config/preset)")
    p.add_argument("--quiet", action="store_true", help="no per-point progress on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otfs-aircomp", description="OTFS over-the-air computation precoding simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="NMSE versus SNR sweep")
    _add_run_flags(p)
    p = sub.add_parser("figure", help="run a figure preset and check its trends")
    p.add_argument("preset", choices=PRESETS)
    _add_run_flags(p)
    p = sub.add_parser("replay", help="re-run the sweep recorded in a manifest.json")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=Path("replay"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    sub.add_parser("selftest", help="fast property suites on an 8x8 grid")
    return parser


# ---------------------------------------------------------------- outputs


def _fmt(x: float) -> str:
    return repr(float(x))


def results_csv(result: SweepResult) -> str:
    """CSV text of a sweep; power-ratio sweeps carry an extra trailing ``power_ratio`` column."""
    ratio = result.mode == "power_ratio"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + (("power_ratio",) if ratio else ()))
    for p in result.points:
        row = [_fmt(p.snr_db), p.scheme, result.config.mode, _fmt(p.nmse), _fmt(p.stderr), p.trials]
        if ratio:
            row.append(_fmt(p.ratio))
        w.writerow(row)
    return buf.getvalue()


def _manifest(result: SweepResult, out: Path, extra: dict) -> dict:
    return {
        "schema_version": 1,
        "artifact": "otfs-aircomp",
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "kind": result.mode,
        "master_seed": result.config.seed,
        "config": result.config.to_dict(),
        "outputs": {name: str(out / name) for name in ("results.csv", "results.json", "manifest.json")},
        "replay": f"otfs-aircomp replay {out / 'manifest.json'}",
        **extra,
    }


def write_results(result: SweepResult, out: Path, extra: dict | None = None) -> None:
    """Write ``results.csv``, ``results.json`` and ``manifest.json`` into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(result), encoding="utf-8")
    (out / "results.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    manifest = _manifest(result, out, extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- config resolution


def _base_config(scale: str) -> SweepConfig:
    if scale == "full":
        return SweepConfig(**{**PAPER_SCALE, "trials": FULL_SCALE_TRIALS})
    return DESK_DEFAULTS


def _env_seed() -> int | None:
    text = os.environ.get(SEED_ENV)
    if text is None or text.strip() == "":
        return None
    try:
        return _u64(text.strip())
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"{SEED_ENV}={text!r} is not an unsigned 64-bit integer") from exc


def resolve_config(args) -> SweepConfig:
    """Scale defaults, then the seed fallback, then the config file, then flags.

    Seed precedence: ``--seed``, a seed in the config file, ``$OTFS_AIRCOMP_SEED``,
    the default 0.
    """
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    base = _base_config(args.scale)
    env = _env_seed()
    if env is not None:
        base = base.replace(seed=env)
    cfg = parse_config(args.config, base) if args.config else base
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scheme:
        changes["schemes"] = _SCHEME_FLAG[args.scheme]
    if args.mode:
        changes["mode"] = args.mode
    if args.trials is not None:
        changes["trials"] = args.trials
    return cfg.replace(**changes)


# ---------------------------------------------------------------- commands


def _progress(quiet: bool, label: str = ""):
    if quiet:
        return None

    def report(p):
        where = f"r={p.ratio:g} " if p.ratio is not None else ""
        print(f"{label}{where}snr={p.snr_db:g} dB {p.scheme}: nmse={p.nmse:.4g} +- {p.stderr:.2g}", file=sys.stderr)

    return report


def _run_series(series: Series, workers: int, quiet: bool) -> SweepResult:
    runner = power_ratio_sweep if series.kind == "power_ratio" else monte_carlo_sweep
    return runner(series.config, workers=workers, progress=_progress(quiet, f"[{series.name}] "))


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    result = monte_carlo_sweep(cfg, workers=args.workers, progress=_progress(args.quiet))
    write_results(result, args.out, {"command": "sweep", "scale": args.scale})
    print(f"wrote {args.out / 'results.csv'} ({len(result.points)} rows, {result.elapsed_s:.1f} s)")
    return EXIT["ok"]


def cmd_figure(args) -> int:
    cfg = resolve_config(args)
    # presets pin their own parameters on top of the resolved configuration
    series = figure_series(args.preset, "desk", **_diff(cfg))
    results = {}
    for s in series:
        results[s.name] = _run_series(s, args.workers, args.quiet)
        write_results(
            results[s.name], args.out / s.name,
            {"command": "figure", "preset": args.preset, "series": s.name, "scale": args.scale},
        )
    checks = evaluate_figure(args.preset, results)
    report = "\n".join(c.line() for c in checks)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "trend_report.txt").write_text(report + "\n", encoding="utf-8")
    summary = {
        "schema_version": 1,
        "preset": args.preset,
        "scale": args.scale,
        "series": {s.name: str(args.out / s.name) for s in series},
        "checks": [c.__dict__ for c in checks],
        "version": __version__,
    }
    (args.out / "figure.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(report)
    return EXIT["ok"] if all(c.passed for c in checks) else EXIT["trend"]


def _diff(cfg: SweepConfig) -> dict:
    """Fields of ``cfg`` that differ from the desk defaults."""
    return {k: v for k, v in cfg.__dict__.items() if getattr(DESK_DEFAULTS, k) != v}


def cmd_replay(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        raw = manifest["config"]
        kind = manifest.get("kind", "snr")
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from exc
    cfg = SweepConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    series = Series("replay", cfg, kind)
    result = _run_series(series, args.workers, args.quiet)
    write_results(result, args.out, {"command": "replay", "source_manifest": str(args.manifest)})
    print(f"wrote {args.out / 'results.csv'}")
    return EXIT["ok"]


def cmd_selftest(args) -> int:
    from .selftest import format_table, run_selftest

    results = run_selftest()
    print(format_table(results))
    ok = all(r.passed for r in results)
    print("selftest: " + ("PASS" if ok else "FAIL"))
    return EXIT["ok"] if ok else EXIT["trend"]


_COMMANDS = {"sweep": cmd_sweep, "figure": cmd_figure, "replay": cmd_replay, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleConfigError as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return EXIT["infeasible"]
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT["config"]
    except Exception as exc:  # noqa: BLE001 - report anything else as a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT["runtime"]


if __name__ == "__main__":
    sys.exit(main())
