"""Command-line entry point: ``mechlab <command> [options]``.

Exit codes: 0 success (or all requested conditions hold), 1 analysis
negative (a condition fails or is inconclusive, a gap exceeds its bound,
or the solver fails), 2 usage error (bad flags or density spec).

Reports are JSON with sorted keys and carry the command, the library
version and the full configuration, so reruns with the same flags produce
byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .densities import DensityError, density_from_dict
from .lp_oracle import DEFAULT_GRID, MAX_GRID, GridTooLarge, SolverFailure, build_lp, deterministic_gap
from .optimizer import SWEEP_HEADER, imv_bundle_price, optimize_deterministic, sweep
from .phi_sc import CONDITIONS, DEFAULT_SC_GRID, SIGN_TOL, PhiEvaluator, WrongOrientation, check_sc, phi

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2

FAMILIES = (
    "uniform",
    "ordered_decreasing",
    "conditional_decreasing",
    "scale_invariant",
    "ordered_increasing",
    "example3",
)
# the LP gap bound used by lp-verify when --tol is not given
DEFAULT_GAP_TOL = 1e-6
DEFAULT_PHI_GRID = 51
MAX_SC_GRID = 2001


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    density: dict
    n: int | None = None
    tol: float | None = None
    out: str | None = None
    format: str = "json"
    conditions: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")
        if self.n is not None and self.n < 2:
            raise UsageError("--n must be at least 2")
        if self.command == "lp-verify" and self.n is not None and self.n > MAX_GRID:
            raise UsageError(f"--n is capped at {MAX_GRID} for lp-verify")
        if self.command in ("sc-check", "phi-dump") and self.n is not None and self.n > MAX_SC_GRID:
            raise UsageError(f"--n is capped at {MAX_SC_GRID}")

    def to_dict(self):
        return {
            "command": self.command,
            "density": self.density,
            "n": self.n,
            "tol": self.tol,
            "format": self.format,
            "conditions": list(self.conditions),
            **self.extra,
        }


# ---------------------------------------------------------------------------
# density specs from flags
# ---------------------------------------------------------------------------


def _number(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def parse_params(items) -> dict:
    """``k=v`` pairs; dotted keys (``g.alpha=2``) set parameters of a base density."""
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--params expects k=v, got {item!r}")
        key, value = item.split("=", 1)
        head, _, rest = key.partition(".")
        if rest:
            base = out.setdefault(head, {})
            if not isinstance(base, dict):
                base = out[head] = {"family": base}
            base[rest] = _number(value)
        elif head in ("g", "g1", "g2"):
            base = out.setdefault(head, {})
            if isinstance(base, dict):
                base["family"] = value
            else:
                out[head] = {"family": value}
        else:
            out[head] = _number(value)
    return out


def density_spec(args) -> dict:
    if args.density_file:
        try:
            return json.loads(Path(args.density_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read density file: {exc}") from None
    if not args.family:
        raise UsageError("give --family or --density-file")
    params = parse_params(args.params)
    spec: dict = {"kind": args.family, "a": args.a}
    if "orientation" in params:
        spec["orientation"] = params.pop("orientation")
    elif args.family in ("ordered_increasing", "example3"):
        spec["orientation"] = "imv"
    else:
        spec["orientation"] = "dmv"
    for key in ("g", "g1", "g2"):
        if key in params:
            base = params.pop(key)
            params[key] = base if "family" in base else {"family": "uniform", **base}
    if params:
        spec["params"] = params
    return spec


def _build(spec):
    try:
        return density_from_dict(spec)
    except (DensityError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad density spec: {exc}") from None


def _with_param(spec: dict, name: str, value: float) -> dict:
    out = json.loads(json.dumps(spec))
    head, _, rest = name.partition(".")
    if not rest:
        out[head] = value
    else:
        params = out.setdefault("params", {})
        base = params.setdefault(head, {"family": "uniform"})
        base[rest] = value
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report(config: RunConfig, result: dict) -> str:
    doc = {
        "command": config.command,
        "version": __version__,
        "config": config.to_dict(),
        "result": result,
    }
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def thread_map():
    """``map`` capped by MECHLAB_THREADS; results keep input order."""
    try:
        threads = int(os.environ.get("MECHLAB_THREADS", "1"))
    except ValueError:
        raise UsageError("MECHLAB_THREADS must be an integer") from None
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sc_check(config: RunConfig) -> int:
    density = _build(config.density)
    config.conditions = config.conditions or (CONDITIONS if density.domain.is_dmv else ("sch",))
    config.n = config.n or DEFAULT_SC_GRID
    config.tol = config.tol or SIGN_TOL
    try:
        rep = check_sc(PhiEvaluator(density), n=config.n, tol=config.tol, conditions=config.conditions)
    except WrongOrientation as exc:
        raise UsageError(str(exc)) from None
    emit(report(config, rep.to_dict()), config.out)
    return EXIT_OK if rep.holds else EXIT_NEGATIVE


def cmd_optimize(config: RunConfig) -> int:
    density = _build(config.density)
    if not density.domain.is_dmv:
        raise UsageError("optimize needs a DMV density; use imv-bundle for IMV")
    res = optimize_deterministic(density)
    result = res.to_dict()
    sc = check_sc(PhiEvaluator(density), n=config.extra.get("sc_n", DEFAULT_SC_GRID), tol=SIGN_TOL)
    result["sc"] = {k: v.value for k, v in sc.verdicts().items()}
    emit(report(config, result), config.out)
    return EXIT_OK


def cmd_lp_verify(config: RunConfig) -> int:
    density = _build(config.density)
    n = config.n = config.n or DEFAULT_GRID
    bound = config.tol = config.tol or DEFAULT_GAP_TOL
    try:
        inst = build_lp(density, n)
        gap = deterministic_gap(density, n, inst)
    except GridTooLarge as exc:
        raise UsageError(str(exc)) from None
    if config.format == "csv":
        emit(gap.solution.to_csv(), config.out)
    else:
        result = gap.to_dict()
        result.update(
            {
                "gap_bound": bound,
                "within_bound": gap.gap <= bound,
                "max_violation": gap.solution.max_violation,
                "status": gap.solution.status.value,
                "rows": inst.n_rows,
            }
        )
        emit(report(config, result), config.out)
    return EXIT_OK if gap.gap <= bound else EXIT_NEGATIVE


def cmd_sweep(config: RunConfig) -> int:
    name = config.extra["param"]
    lo, hi = config.extra["from"], config.extra["to"]
    n = config.n = config.n or 11
    base = config.density
    _build(base)

    def factory(v):
        return _build(_with_param(base, name, v))

    mapper, pool = thread_map()
    try:
        rows = sweep(factory, lo, hi, n, map_fn=mapper)
    finally:
        if pool is not None:
            pool.shutdown()
    if config.format == "csv":
        emit(csv_text(SWEEP_HEADER, [r.as_tuple() for r in rows]), config.out)
    else:
        emit(report(config, {"rows": [dict(zip(SWEEP_HEADER, r.as_tuple())) for r in rows]}), config.out)
    return EXIT_OK


def cmd_imv_bundle(config: RunConfig) -> int:
    density = _build(config.density)
    if density.domain.is_dmv:
        raise UsageError("imv-bundle needs an IMV density")
    emit(report(config, imv_bundle_price(density).to_dict()), config.out)
    return EXIT_OK


def cmd_phi_dump(config: RunConfig) -> int:
    density = _build(config.density)
    if not density.domain.is_dmv:
        raise UsageError("phi is defined for DMV densities only")
    n = config.n = config.n or DEFAULT_PHI_GRID
    a = density.a
    ev = PhiEvaluator(density)
    rows = []
    for i in range(n):
        v2 = a * i / (n - 1)
        for j in range(n):
            v1 = j / (n - 1)
            if v2 <= a * v1 + 1e-15:
                rows.append((v1, v2, float(phi(ev, v1, v2))))
    if config.format == "csv":
        emit(csv_text(("v1", "v2", "phi"), rows), config.out)
    else:
        result = {"phi_mode": ev.mode.value, "points": [{"v1": r[0], "v2": r[1], "phi": r[2]} for r in rows]}
        emit(report(config, result), config.out)
    return EXIT_OK


COMMANDS = {
    "sc-check": cmd_sc_check,
    "optimize": cmd_optimize,
    "lp-verify": cmd_lp_verify,
    "sweep": cmd_sweep,
    "imv-bundle": cmd_imv_bundle,
    "phi-dump": cmd_phi_dump,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--a", type=float, default=1.0)
    common.add_argument("--params", nargs="*", default=[], metavar="K=V")
    common.add_argument("--density-file", metavar="PATH")
    common.add_argument("--n", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--conditions", help="comma separated subset of sch,scv,scd")

    parser = _Parser(prog="mechlab", description="Mechanism design checks for two ordered units.")
    parser.add_argument("--version", action="version", version=f"mechlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "sweep":
            p.add_argument("--param", required=True)
            p.add_argument("--from", dest="lo", type=float, required=True)
            p.add_argument("--to", dest="hi", type=float, required=True)
        if name == "optimize":
            p.add_argument("--sc-n", type=int, default=DEFAULT_SC_GRID)
    return parser


def config_from_args(args) -> RunConfig:
    conds: tuple[str, ...] = ()
    if args.conditions:
        conds = tuple(c.strip().lower() for c in args.conditions.split(",") if c.strip())
        bad = set(conds) - set(CONDITIONS)
        if bad:
            raise UsageError(f"unknown conditions {sorted(bad)}")
    extra = {}
    if args.command == "sweep":
        extra = {"param": args.param, "from": args.lo, "to": args.hi}
    if args.command == "optimize":
        extra = {"sc_n": args.sc_n}
    default_format = "csv" if args.command in ("sweep", "phi-dump") else "json"
    cfg = RunConfig(
        command=args.command,
        density=density_spec(args),
        n=args.n,
        tol=args.tol,
        out=args.out,
        format=args.format or default_format,
        conditions=conds,
        extra=extra,
    )
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        config = config_from_args(args)
        return COMMANDS[config.command](config)
    except UsageError as exc:
        print(f"mechlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"mechlab: solver failure: {exc}", file=sys.stderr)
        return EXIT_NEGATIVE


if __name__ == "__main__":
    sys.exit(main())
