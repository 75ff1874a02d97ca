"""Command-line surface: `cml <subcommand>`.

Subcommands: simulate (construction programs), wf (diffusion runs),
pde (boundary-value solve), bounds (threshold-pair bound sheet),
analyze (market CSV crossing statistics), report (merge JSON outputs).

Every option resolves through four layers with this precedence:
command line > CML_<NAME> environment variable > key=value config file
(--config or CML_CONFIG) > built-in default. The config file is flat
text: one `key = value` per line, `#` comments, keys named like the
long flags with hyphens turned into underscores. Unknown config keys
are ignored so one file can serve several subcommands.

Exit codes: 0 success, 2 validation error (bad flags, malformed input,
unmet preconditions), 3 runtime error (budget blowups, solver
non-convergence, write failures). JSON output is emitted with sorted
keys so a fixed (config, seed) reproduces files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

from contestlab.analytic import ThresholdPair, bounds
from contestlab.constructions import (
    embed_prefix_program,
    sequential_program,
    small_spread_program,
    survivor_program,
    survivor_zero_prefix_program,
)
from contestlab.engine import InternalConsistencyError, RunawayError
from contestlab.market import (
    MarketDataError,
    crossing_stats_from_series,
    ingest_market_csv,
)
from contestlab.pde import PdeSolverError, ResolutionError, corner_ratio, solve_pde
from contestlab.sampling import simulate_many
from contestlab.stats import bounds_report, summarize, to_json
from contestlab.wf import WfRunParams, cov3_mc, wf_many

__all__ = ["main"]

_PROGRAMS = ("survivor", "survivor0", "sequential", "smallspread", "embed")


@dataclass(frozen=True)
class Opt:
    """One layered option: long flag, type, default, help text."""

    name: str
    type: type
    default: object
    help: str
    choices: tuple | None = None


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SIMULATE_OPTS = [
    Opt("program", str, None, "construction program", _PROGRAMS),
    Opt("a", float, 0.1, "lower threshold"),
    Opt("b", float, 0.25, "upper threshold"),
    Opt("b0", float, 0.05, "starting level for sequential"),
    Opt("n0", int, None, "equal-atom count (survivor 100, smallspread 40)"),
    Opt("M0", int, 64, "starting component count for survivor0"),
    Opt("depth", int, 3, "refinement depth for embed"),
    Opt("p_file", str, None, "file with one starting probability per line"),
    Opt("runs", int, 10_000, "number of runs"),
    Opt("seed", int, 42, "master seed"),
    Opt("workers", int, 1, "parallel worker processes"),
    Opt("engine", str, "kernel", "sampling backend", ("kernel", "reference")),
    Opt("out", str, None, "JSON output path (default stdout)"),
    Opt("hist_csv", str, None, "histogram CSV output path"),
    Opt("trace", str, None, "per-run trace CSV output path"),
]

_WF_OPTS = [
    Opt("k", int, 20, "component count"),
    Opt("h", float, 1e-5, "time step"),
    Opt("a", float, 0.1, "lower threshold"),
    Opt("b", float, 0.2, "upper threshold"),
    Opt("runs", int, 1000, "number of runs"),
    Opt("seed", int, 42, "master seed"),
    Opt("workers", int, 1, "parallel worker processes"),
    Opt("bridge", bool, True, "bridge crossing correction"),
    Opt("max_time", float, math.inf, "truncate runs at this model time"),
    Opt("cov3", str, None, "estimate joint b-hit from 'x,y' instead"),
    Opt("cov3_runs", int, 120_000, "runs for the joint-hit estimate"),
    Opt("out", str, None, "JSON output path (default stdout)"),
    Opt("hist_csv", str, None, "histogram CSV output path"),
    Opt("trace", str, None, "per-run trace CSV output path"),
]

_PDE_OPTS = [
    Opt("b", float, 0.5, "upper threshold (grid edge)"),
    Opt("m", int, 255, "interior nodes per axis"),
    Opt("tol", float, 1e-10, "relative residual tolerance"),
    Opt("out", str, None, "grid CSV output path"),
    Opt("json", str, None, "diagnostics JSON path (default stdout)"),
]

_BOUNDS_OPTS = [
    Opt("a", float, None, "lower threshold"),
    Opt("b", float, None, "upper threshold"),
    Opt("out", str, None, "JSON output path (default stdout)"),
]

_ANALYZE_OPTS = [
    Opt("csv", str, None, "market CSV path (time,contestant,prob)"),
    Opt("a", float, 0.1, "lower threshold"),
    Opt("b", float, 0.25, "upper threshold"),
    Opt("interp", str, "linear", "path model between quotes",
        ("linear", "step")),
    Opt("out", str, None, "JSON output path (default stdout)"),
]

_REPORT_OPTS = [
    Opt("out", str, None, "merged JSON output path (default stdout)"),
]


def _add_opts(parser: argparse.ArgumentParser, opts: list[Opt]) -> None:
    for opt in opts:
        flag = "--" + opt.name.replace("_", "-")
        if opt.type is bool:
            parser.add_argument(flag, dest=opt.name, default=None,
                                action=argparse.BooleanOptionalAction,
                                help=opt.help)
        else:
            parser.add_argument(flag, dest=opt.name, default=None, type=str,
                                help=opt.help)


def _read_config(path: str) -> dict[str, str]:
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ValueError(f"{path}:{ln}: expected key=value, got {s!r}")
            key, _, value = s.partition("=")
            table[key.strip()] = value.strip()
    return table


def _cast(opt: Opt, raw, where: str):
    try:
        if opt.type is bool and not isinstance(raw, bool):
            value = _parse_bool(raw)
        else:
            value = opt.type(raw)
    except (TypeError, ValueError):
        raise ValueError(
            f"{where}: cannot read {raw!r} as {opt.type.__name__} "
            f"for option {opt.name}"
        ) from None
    if opt.choices is not None and value not in opt.choices:
        raise ValueError(
            f"{where}: option {opt.name} must be one of "
            f"{', '.join(map(str, opt.choices))}, got {value!r}"
        )
    return value


def _resolve(args: argparse.Namespace, opts: list[Opt]) -> dict:
    """Apply the CLI > environment > config file > default layering."""
    config_path = args.config or os.environ.get("CML_CONFIG")
    table = _read_config(config_path) if config_path else {}
    resolved = {}
    for opt in opts:
        cli_value = getattr(args, opt.name)
        env_key = "CML_" + opt.name.upper()
        if cli_value is not None:
            resolved[opt.name] = _cast(opt, cli_value, "command line")
        elif env_key in os.environ:
            resolved[opt.name] = _cast(opt, os.environ[env_key], env_key)
        elif opt.name in table:
            resolved[opt.name] = _cast(opt, table[opt.name], "config file")
        else:
            resolved[opt.name] = opt.default
    return resolved


def _emit(doc: dict, out: str | None) -> None:
    text = to_json(doc) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


# output destinations are excluded from the echoed config so documents
# produced from the same settings and seed agree byte for byte no
# matter where they are written
_SINK_KEYS = frozenset(("out", "hist_csv", "trace", "json"))


def _config_jsonable(cfg: dict) -> dict:
    return {
        k: (None if v is None else (v if not isinstance(v, float)
                                    or math.isfinite(v) else repr(v)))
        for k, v in cfg.items()
        if k not in _SINK_KEYS
    }


def _write_hist_csv(path: str, summaries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("statistic,value,count\n")
        for name in sorted(summaries):
            for value, count in sorted(summaries[name].histogram.items()):
                fh.write(f"{name},{value},{count}\n")


def _read_p_file(path: str) -> list[float]:
    values = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                values.append(float(s))
            except ValueError:
                raise ValueError(
                    f"{path}:{ln}: not a probability: {s!r}"
                ) from None
    if not values:
        raise ValueError(f"{path}: no probabilities")
    return values


def _build_program(cfg: dict):
    name = cfg["program"]
    if name is None:
        raise ValueError("option program is required "
                         f"(one of {', '.join(_PROGRAMS)})")
    a = cfg["a"]
    b = cfg["b"]
    p = _read_p_file(cfg["p_file"]) if cfg["p_file"] else None
    if name == "survivor":
        return survivor_program(p if p is not None else (cfg["n0"] or 100), b, a)
    if name == "survivor0":
        return survivor_zero_prefix_program(cfg["M0"], b, a)
    if name == "sequential":
        return sequential_program(cfg["b0"], b, a)
    if name == "smallspread":
        n0 = cfg["n0"] or 40
        p0 = p if p is not None else [1.0 / n0] * n0
        return small_spread_program(p0, a, b)
    if name == "embed":
        return embed_prefix_program(p if p is not None else [0.6, 0.4],
                                    cfg["depth"], b, a)
    raise ValueError(f"unknown program {name!r}")


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _SIMULATE_OPTS)
    program = _build_program(cfg)
    pair = ThresholdPair(cfg["a"], cfg["b"])
    batch = simulate_many(
        program, cfg["runs"], master_seed=cfg["seed"], engine=cfg["engine"],
        workers=cfg["workers"],
    )
    summaries = {"n_b": summarize(batch.n_b), "d_ab": summarize(batch.d_ab)}
    report = bounds_report(pair, summaries)
    doc = {
        "command": "simulate",
        "config": _config_jsonable(cfg),
        "summaries": {k: v.to_jsonable() for k, v in summaries.items()},
        "bounds_report": report.to_jsonable(),
    }
    if batch.machine_d is not None:
        doc["machine_downcrossings"] = int(batch.machine_d[0])
    if cfg["hist_csv"]:
        _write_hist_csv(cfg["hist_csv"], summaries)
    if cfg["trace"]:
        with open(cfg["trace"], "w", encoding="utf-8") as fh:
            fh.write("run,n_b,d_ab,winner\n")
            for i in range(batch.n_runs):
                fh.write(f"{i},{batch.n_b[i]},{batch.d_ab[i]},"
                         f"{batch.winner[i]}\n")
    _emit(doc, cfg["out"])
    return 0


def _cmd_wf(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _WF_OPTS)
    pair = ThresholdPair(cfg["a"], cfg["b"])
    params = WfRunParams(
        k=cfg["k"], h=cfg["h"], seed=cfg["seed"], monitors=pair,
        bridge_correction=cfg["bridge"], max_time=cfg["max_time"],
    )
    if cfg["cov3"]:
        try:
            sx, sy = cfg["cov3"].split(",")
            x, y = float(sx), float(sy)
        except ValueError:
            raise ValueError(
                f"cov3 must be 'x,y', got {cfg['cov3']!r}"
            ) from None
        est = cov3_mc(x, y, cfg["b"], params, n_runs=cfg["cov3_runs"])
        doc = {
            "command": "wf",
            "config": _config_jsonable(cfg),
            "cov3": {
                "x": x,
                "y": y,
                "b": cfg["b"],
                "estimate": est.estimate,
                "std_error": est.std_error,
                "n_runs": est.n_runs,
                "n_used": est.n_used,
                "n_truncated": est.n_truncated,
            },
        }
        _emit(doc, cfg["out"])
        return 0
    batch = wf_many(params, cfg["runs"], workers=cfg["workers"])
    keep = ~batch.truncated
    if not keep.any():
        raise RunawayError("all runs truncated; raise max_time")
    summaries = {
        "n_b": summarize(batch.n_b[keep]),
        "d_ab": summarize(batch.d_ab[keep]),
    }
    report = bounds_report(pair, summaries)
    doc = {
        "command": "wf",
        "config": _config_jsonable(cfg),
        "n_truncated": batch.n_truncated,
        "summaries": {k: v.to_jsonable() for k, v in summaries.items()},
        "bounds_report": report.to_jsonable(),
    }
    if cfg["hist_csv"]:
        _write_hist_csv(cfg["hist_csv"], summaries)
    if cfg["trace"]:
        with open(cfg["trace"], "w", encoding="utf-8") as fh:
            fh.write("run,n_b,d_ab,winner,truncated\n")
            for i in range(batch.n_runs):
                fh.write(
                    f"{i},{batch.n_b[i]},{batch.d_ab[i]},{batch.winner[i]},"
                    f"{int(batch.truncated[i])}\n"
                )
    _emit(doc, cfg["out"])
    return 0


def _cmd_pde(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _PDE_OPTS)
    grid = solve_pde(cfg["b"], cfg["m"], tol=cfg["tol"])
    if cfg["out"]:
        axis = grid.axis
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write("x,y,f\n")
            for i, x in enumerate(axis):
                for j, y in enumerate(axis):
                    fh.write(f"{float(x)!r},{float(y)!r},"
                             f"{float(grid.values[i, j])!r}\n")
    ratios = None
    abscissae = [grid.b / 64, grid.b / 32, grid.b / 16, grid.b / 8]
    try:
        ratios = list(corner_ratio(grid, abscissae))
    except ResolutionError:
        pass  # grid coarser than b/64: ratios omitted
    doc = {
        "command": "pde",
        "config": _config_jsonable(cfg),
        "residual": grid.residual,
        "symmetry_defect": grid.symmetry_defect,
        "corner_abscissae": abscissae if ratios is not None else None,
        "corner_ratios": ratios,
    }
    _emit(doc, cfg["json"])
    return 0


def _cmd_bounds(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _BOUNDS_OPTS)
    if cfg["a"] is None or cfg["b"] is None:
        raise ValueError("options a and b are required")
    pair = ThresholdPair(cfg["a"], cfg["b"])
    bb = bounds(pair)
    doc = {
        "command": "bounds",
        "a": pair.a,
        "b": pair.b,
        "mean_Nb": bb.mean_Nb,
        "mean_Dab": bb.mean_Dab,
        "var_cap_Nb": bb.var_cap_Nb,
        "var_cap_Dab_conjectured": bb.var_cap_Dab_conjectured,
        "var_cap_Dab_proved": bb.var_cap_Dab_proved,
        "k_alpha": bb.k_alpha,
    }
    _emit(doc, cfg["out"])
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _ANALYZE_OPTS)
    if not cfg["csv"]:
        raise ValueError("option csv is required")
    pair = ThresholdPair(cfg["a"], cfg["b"])
    series = ingest_market_csv(cfg["csv"])
    stats = crossing_stats_from_series(series, pair, interp=cfg["interp"])
    doc = {
        "command": "analyze",
        "config": _config_jsonable(cfg),
        "n_contestants": len(series.contestants),
        "n_renormalized_timestamps": series.n_renormalized,
        "crossings": stats.to_jsonable(),
    }
    _emit(doc, cfg["out"])
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _REPORT_OPTS)
    if not args.inputs:
        raise ValueError("report needs at least one JSON input")
    merged = {}
    for path in args.inputs:
        with open(path, encoding="utf-8") as fh:
            try:
                merged[path] = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: not valid JSON ({exc})") from None
    doc = {
        "command": "report",
        "inputs": list(args.inputs),
        "reports": merged,
    }
    _emit(doc, cfg["out"])
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cml",
        description="simulation laboratory for contest win-probability paths",
    )
    parser.add_argument("--config", default=None,
                        help="key=value config file (or CML_CONFIG)")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("simulate", help="run a construction program")
    _add_opts(p, _SIMULATE_OPTS)
    p.set_defaults(func=_cmd_simulate)
    p = sub.add_parser("wf", help="run the diffusion")
    _add_opts(p, _WF_OPTS)
    p.set_defaults(func=_cmd_wf)
    p = sub.add_parser("pde", help="solve the joint-hit boundary problem")
    _add_opts(p, _PDE_OPTS)
    p.set_defaults(func=_cmd_pde)
    p = sub.add_parser("bounds", help="print the bound sheet for a pair")
    _add_opts(p, _BOUNDS_OPTS)
    p.set_defaults(func=_cmd_bounds)
    p = sub.add_parser("analyze", help="crossing statistics of a market CSV")
    _add_opts(p, _ANALYZE_OPTS)
    p.set_defaults(func=_cmd_analyze)
    p = sub.add_parser("report", help="merge JSON outputs into one document")
    p.add_argument("inputs", nargs="*", help="JSON files to merge")
    _add_opts(p, _REPORT_OPTS)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, MarketDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RunawayError, InternalConsistencyError, PdeSolverError,
            OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
