"""Command-line front end: ``csprop {propagate,scan,verify,oracle} --config run.json``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from . import discrete_oracle as oracle_mod
from .dynamics import IntegrationError
from .reference import HilbertConfig, exact_propagator, suggest_nmax
from .semiclassical import (
    BranchTrackingError,
    InternalConsistencyError,
    assemble,
    solve_with_continuation,
)
from .shooting import BoundaryData, ContinuationError, ShootingError, continuation
from .states import DEFAULT_TAIL, TruncationError
from .symbols import ChartSingularity, OperatorSpec, PowerLimitError, q_symbol

logger = logging.getLogger("csprop")

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 64

SCAN_BLOCK = 16
JUMP_RATIO = 10.0

_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_POWER = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["hamiltonian", "j", "boundary", "time"],
    "properties": {
        "hamiltonian": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["coeff_re"],
                "properties": {
                    "coeff_re": {"type": "number"},
                    "coeff_im": {"type": "number"},
                    "m": _POWER, "n": _POWER, "p": _POWER, "q": _POWER, "r": _POWER,
                },
            },
        },
        "j": {"type": "number", "exclusiveMinimum": 0},
        "hbar": {"type": "number", "exclusiveMinimum": 0},
        "boundary": {
            "type": "object",
            "additionalProperties": False,
            "required": ["z_initial", "s_initial", "z_final", "s_final"],
            "properties": {k: _PAIR for k in ("z_initial", "s_initial", "z_final", "s_final")},
        },
        "time": {
            "oneOf": [
                {"type": "number", "minimum": 0},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["t_min", "t_max", "steps"],
                    "properties": {
                        "t_min": {"type": "number", "minimum": 0},
                        "t_max": {"type": "number", "minimum": 0},
                        "steps": {"type": "integer", "minimum": 1},
                    },
                },
            ]
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ode": {"type": "number", "exclusiveMinimum": 0},
                "newton": {"type": "number", "exclusiveMinimum": 0},
                "tail": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "reference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_max": {"type": "integer", "minimum": 1}},
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_list": {"type": "array", "items": {"type": "integer", "minimum": 2},
                           "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["csv", "json"]},
            },
        },
    },
}

RESULT_COLUMNS = ["T", "re_K", "im_K", "re_S", "im_S", "re_G", "im_G", "Lambda", "abs_det_mbb",
                  "residual", "iterations", "branch", "branch_jump", "energy_drift",
                  "contributing"]
VERIFY_COLUMNS = ["T", "re_K_sc", "im_K_sc", "re_K_exact", "im_K_exact", "abs_err", "rel_err",
                  "residual", "iterations", "branch", "n_max"]
ORACLE_COLUMNS = ["N", "re_det", "im_det", "re_delta", "im_delta", "re_ratio", "im_ratio",
                  "ratio_err", "stationarity_residual"]


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from exc
    t = cfg["time"]
    if isinstance(t, dict) and t["t_max"] < t["t_min"]:
        raise ConfigError("time.t_max must be >= time.t_min")
    try:
        symbol(cfg)
        boundary(cfg, 0.0)
    except (ValueError, PowerLimitError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def spec(cfg):
    return OperatorSpec.from_records(cfg["hamiltonian"])


def _c(pair):
    return complex(pair[0], pair[1])


def boundary(cfg, T):
    b = cfg["boundary"]
    return BoundaryData.from_labels(_c(b["z_initial"]), _c(b["s_initial"]), _c(b["z_final"]),
                                    _c(b["s_final"]), j=cfg["j"], hbar=cfg.get("hbar", 1.0), T=T)


def time_grid(cfg):
    t = cfg["time"]
    if isinstance(t, dict):
        return np.linspace(t["t_min"], t["t_max"], t["steps"] + 1)
    return np.array([float(t)])


def solver_options(cfg):
    tol = cfg.get("tolerances", {})
    opts = {}
    if "ode" in tol:
        opts["rtol"] = tol["ode"]
        opts["atol"] = tol["ode"] * 1e-2
    if "newton" in tol:
        opts["tol"] = tol["newton"]
    return opts


def symbol(cfg):
    return q_symbol(spec(cfg), cfg["j"], cfg.get("hbar", 1.0))


# --------------------------------------------------------------------------
# workers (module level so they pickle)


def _result_row(res, branch_jump=False):
    return {
        "T": res.T, "re_K": res.K.real, "im_K": res.K.imag, "re_S": res.S.real,
        "im_S": res.S.imag, "re_G": res.G.real, "im_G": res.G.imag, "Lambda": res.Lambda,
        "abs_det_mbb": res.det_mbb, "residual": res.residual, "iterations": res.iterations,
        "branch": res.branch, "branch_jump": branch_jump, "energy_drift": res.energy_drift,
        "contributing": res.contributing,
    }


def _scan_block(cfg, times):
    """Continuation along one contiguous block; returns rows plus the unknowns per point."""
    sym = symbol(cfg)
    opts = solver_options(cfg)
    first = solve_with_continuation(sym, boundary(cfg, times[0]), **opts)
    if len(times) == 1:
        sols = [first]
    else:
        steps = continuation(lambda T: (sym, boundary(cfg, T)), times, first.unknowns, **opts)
        sols = [s.solution for s in steps]
    return [(_result_row(assemble(s, sym)), s.unknowns) for s in sols]


def _verify_point(cfg, T):
    sym = symbol(cfg)
    sp = spec(cfg)
    bd = boundary(cfg, T)
    res = assemble(solve_with_continuation(sym, bd, **solver_options(cfg)), sym)
    tail = cfg.get("tolerances", {}).get("tail", DEFAULT_TAIL)
    n_max = cfg.get("reference", {}).get("n_max") or suggest_nmax(bd, sp, tail)
    k_ex = exact_propagator(sp, HilbertConfig(n_max, cfg["j"], bd.hbar, tail), bd, method="auto")
    err = abs(res.K - k_ex)
    return {
        "T": T, "re_K_sc": res.K.real, "im_K_sc": res.K.imag, "re_K_exact": k_ex.real,
        "im_K_exact": k_ex.imag, "abs_err": err, "rel_err": err / abs(k_ex) if k_ex else np.inf,
        "residual": res.residual, "iterations": res.iterations, "branch": res.branch,
        "n_max": n_max,
    }


def _oracle_point(cfg, N):
    sym = symbol(cfg)
    T = float(time_grid(cfg)[-1])
    sol = solve_with_continuation(sym, boundary(cfg, T), **solver_options(cfg))
    row = oracle_mod.determinant_compare(sym, sol, [N])[0]
    stat = oracle_mod.discrete_stationarity_residual(sym, sol, N)
    return {
        "N": N, "re_det": row.det.real, "im_det": row.det.imag, "re_delta": row.delta.real,
        "im_delta": row.delta.imag, "re_ratio": row.ratio.real, "im_ratio": row.ratio.imag,
        "ratio_err": row.error, "stationarity_residual": stat.scaled,
    }


def _map(fn, cfg, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(cfg, it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [cfg] * len(items), items))


def flag_branch_jumps(unknowns, params, ratio=JUMP_RATIO):
    """Mark points where the rate of change of (v0, V0) jumps by more than ``ratio``."""
    flags = [False]
    last = None
    for k in range(1, len(params)):
        dp = max(abs(params[k] - params[k - 1]), 1e-300)
        rate = float(np.max(np.abs(unknowns[k] - unknowns[k - 1]))) / dp
        flags.append(bool(last is not None and rate > ratio * max(last, 1e-8)))
        last = rate
    return flags


# --------------------------------------------------------------------------
# commands


def cmd_propagate(cfg, workers=1):
    if isinstance(cfg["time"], dict):
        raise ConfigError("propagate needs a scalar time; use scan for a grid")
    rows = _scan_block(cfg, time_grid(cfg))
    return RESULT_COLUMNS, [rows[0][0]]


def cmd_scan(cfg, workers=1):
    times = time_grid(cfg)
    blocks = [times[i:i + SCAN_BLOCK] for i in range(0, len(times), SCAN_BLOCK)]
    out = [pair for blk in _map(_scan_block, cfg, blocks, workers) for pair in blk]
    rows = [r for r, _ in out]
    flags = flag_branch_jumps([x for _, x in out], times)
    branch = 0
    for row, jump in zip(rows, flags):
        branch += jump
        row["branch_jump"] = jump
        row["branch"] = branch
    return RESULT_COLUMNS, rows


def cmd_verify(cfg, workers=1):
    return VERIFY_COLUMNS, _map(_verify_point, cfg, list(time_grid(cfg)), workers)


def cmd_oracle(cfg, workers=1):
    n_list = cfg.get("oracle", {}).get("N_list")
    if not n_list:
        raise ConfigError("oracle needs oracle.N_list")
    return ORACLE_COLUMNS, _map(_oracle_point, cfg, list(n_list), workers)


COMMANDS = {"propagate": cmd_propagate, "scan": cmd_scan, "verify": cmd_verify,
            "oracle": cmd_oracle}


# --------------------------------------------------------------------------
# output


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def render_csv(columns, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for row in rows:
        wr.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def render_json(columns, rows):
    recs = [{c: _json_value(row[c]) for c in columns} for row in rows]
    return json.dumps(recs, indent=2) + "\n"


def write_output(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="csprop",
                                 description="Semiclassical canonical-spin coherent-state propagator")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output path (default: output.path from config, else stdout)")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--tol-ode", type=float, help="relative ODE tolerance (overrides config)")
    ap.add_argument("--tol-newton", type=float, help="Newton residual tolerance (overrides config)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config)
        tol = cfg.setdefault("tolerances", {})
        for key, val in (("ode", args.tol_ode), ("newton", args.tol_newton)):
            if val is not None:
                if val <= 0:
                    raise ConfigError(f"--tol-{key} must be positive")
                tol[key] = val
        columns, rows = COMMANDS[args.command](cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShootingError, ContinuationError, IntegrationError, ChartSingularity,
            BranchTrackingError, InternalConsistencyError, TruncationError,
            oracle_mod.LUBreakdown) as exc:
        diag = {k: getattr(exc, k) for k in ("residual", "iterations", "param", "N")
                if hasattr(exc, k)}
        print(f"solver failure: {type(exc).__name__}: {exc} {diag or ''}".rstrip(),
              file=sys.stderr)
        return EXIT_SOLVER
    out = cfg.get("output", {})
    fmt = out.get("format", "csv")
    path = args.out if args.out is not None else out.get("path")
    text = render_csv(columns, rows) if fmt == "csv" else render_json(columns, rows)
    write_output(text, path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
