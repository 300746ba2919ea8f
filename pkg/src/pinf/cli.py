"""Command line entry point: ``pinf <subcommand> --config <path> [--out <dir>]``.

Configs are INI files::

    [domain]
    kind = interval        ; or disk
    a = -1
    b = 1
    n_cells = 400          ; disk: n_r, n_theta

    [data]
    g = two-point 2 1      ; constant c | cap-cosine [c0 c1] | file <path>

    [constraint]
    alpha = 1

    [solver]
    p = 3                  ; or: schedule = 4 8 16 32 64 128
    seed = 0

    [output]
    directory = out

Exit codes: 0 success, 1 example regression failure, 2 ill-posed datum,
3 non-convergence, 4 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import ProblemSpec
from .errors import (
    ConfigError,
    DatumError,
    InfeasibleResolutionError,
    InvalidArgumentError,
    NonConvergenceError,
    PreconditionError,
)
from .mesh import build_disk, build_interval, ring_nodes
from .plimit import DEFAULT_SCHEDULE, boundary_H_residual, continuation, inf_laplacian_residual, \
    maximizer_check
from .solver import SolveOptions, minimize
from .symmetrize import boundary_symmetry_test, cap_symmetrize

__all__ = ["RunConfig", "load_config", "build_problem", "emit_json", "emit_csv", "run", "main"]

EXIT_OK = 0
EXIT_REGRESSION = 1
EXIT_DATUM = 2
EXIT_NONCONVERGENCE = 3
EXIT_CONFIG = 4

SUBCOMMANDS = ("solve", "limit", "symmetrize", "transport", "examples")


@dataclass
class RunConfig:
    kind: str
    resolution: dict
    g_spec: str
    alpha: float
    p: float | None
    schedule: tuple
    options: SolveOptions
    seed: int | None
    samples: int
    symmetry_tol: float
    boundary_tol: float
    directory: Path
    formats: tuple
    base: Path


def _get(cp, section, key, conv=str, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


def load_config(path):
    """Parse and validate a run config."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for section in ("domain", "data", "constraint"):
        if not cp.has_section(section):
            raise ConfigError(f"missing section [{section}]")

    kind = _get(cp, "domain", "kind", required=True).lower()
    if kind == "interval":
        res = {"a": _get(cp, "domain", "a", float, -1.0),
               "b": _get(cp, "domain", "b", float, 1.0),
               "n_cells": _get(cp, "domain", "n_cells", _int, 400)}
    elif kind == "disk":
        res = {"n_r": _get(cp, "domain", "n_r", _int, 16),
               "n_theta": _get(cp, "domain", "n_theta", _int, 64)}
    else:
        raise ConfigError(f"unknown domain kind {kind!r} (interval | disk)")

    p = _get(cp, "solver", "p", float)
    sched_raw = _get(cp, "solver", "schedule")
    try:
        schedule = tuple(float(t) for t in sched_raw.split()) if sched_raw else DEFAULT_SCHEDULE
    except ValueError as exc:
        raise ConfigError(f"bad schedule {sched_raw!r}") from exc
    dim = 1 if kind == "interval" else 2
    if any(s <= dim for s in schedule) or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError(f"schedule must be increasing with entries > {dim}")
    if p is not None and not p > dim:
        raise ConfigError(f"p must exceed the dimension {dim}")

    opts = SolveOptions()
    opts.max_iter = _get(cp, "solver", "max_iter", _int, opts.max_iter)
    opts.tol_energy = _get(cp, "solver", "tol_energy", float, opts.tol_energy)
    opts.tol_step = _get(cp, "solver", "tol_step", float, opts.tol_step)
    opts.metric = _get(cp, "solver", "metric", str, opts.metric)
    seed = _get(cp, "solver", "seed", _int)
    opts.seed = seed

    out_dir = _get(cp, "output", "directory", str, "out") if cp.has_section("output") else "out"
    fmts = _get(cp, "output", "formats", str, "json csv") if cp.has_section("output") else "json csv"
    formats = tuple(fmts.replace(",", " ").split())
    if not set(formats) <= {"json", "csv"}:
        raise ConfigError(f"unknown output formats {fmts!r}")

    base = path.resolve().parent
    directory = Path(out_dir)
    if not directory.is_absolute():
        directory = base / directory
    return RunConfig(
        kind=kind,
        resolution=res,
        g_spec=_get(cp, "data", "g", required=True),
        alpha=_get(cp, "constraint", "alpha", float, required=True),
        p=p,
        schedule=schedule,
        options=opts,
        seed=seed,
        samples=_get(cp, "checks", "samples", _int, 200),
        symmetry_tol=_get(cp, "checks", "symmetry_tol", float, 0.05),
        boundary_tol=_get(cp, "checks", "boundary_tol", float, 0.05),
        directory=directory,
        formats=formats,
        base=base,
    )


def _datum(cfg, grid):
    parts = cfg.g_spec.split()
    if not parts:
        raise ConfigError("empty [data] g")
    name, args = parts[0].lower(), parts[1:]
    try:
        nums = [float(a) for a in args] if name != "file" else []
    except ValueError as exc:
        raise ConfigError(f"bad datum {cfg.g_spec!r}") from exc
    nb = grid.boundary_nodes.size
    if name == "two-point":
        if grid.kind != "interval" or len(nums) != 2:
            raise ConfigError("two-point needs an interval domain and two values")
        return np.array(nums)
    if name == "constant":
        if len(nums) != 1:
            raise ConfigError("constant needs one value")
        return np.full(nb, nums[0])
    if name == "cap-cosine":
        if grid.kind != "disk":
            raise ConfigError("cap-cosine needs a disk domain")
        if len(nums) > 2:
            raise ConfigError("cap-cosine takes at most two coefficients")
        c0, c1 = (nums + [1.0, 1.0])[:2]
        xy = grid.nodes[grid.boundary_nodes]
        return c0 + c1 * np.cos(np.arctan2(xy[:, 1], xy[:, 0]))
    if name == "file":
        if len(args) != 1:
            raise ConfigError("file needs one path")
        fpath = Path(args[0])
        if not fpath.is_absolute():
            fpath = cfg.base / fpath
        try:
            vals = np.loadtxt(fpath, delimiter=",", ndmin=1)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read datum file {fpath}: {exc}") from exc
        vals = vals[:, -1] if vals.ndim == 2 else vals
        if vals.size != nb:
            raise ConfigError(f"datum file has {vals.size} values, expected {nb}")
        return vals
    raise ConfigError(f"unknown datum preset {name!r}")


def build_problem(cfg):
    """Grid and boundary datum described by a config."""
    try:
        if cfg.kind == "interval":
            r = cfg.resolution
            grid = build_interval(r["a"], r["b"], r["n_cells"])
        else:
            grid = build_disk(cfg.resolution["n_r"], cfg.resolution["n_theta"])
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    g = _datum(cfg, grid)
    if not (0 < cfg.alpha < grid.volume):
        raise ConfigError(f"alpha={cfg.alpha} must lie inside (0, {grid.volume:.17g})")
    return grid, g


# emission ------------------------------------------------------------------------

def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def _to_json(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_to_json(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if hasattr(obj, "value"):
        return _to_json(obj.value, indent)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit_json(data, path):
    """Write ``data`` as JSON with insertion key order and 17-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_to_json(data) + "\n", encoding="utf-8")
    return path


def emit_csv(header, rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _field_rows(u):
    grid = u.grid
    cols = ["node", "x"] + (["y"] if grid.dim == 2 else []) + ["value"]
    rows = [[k, *grid.nodes[k], u.values[k]] for k in range(grid.n_nodes)]
    return cols, rows


def _p_label(p):
    return format(p, "g")


def _threads():
    raw = os.environ.get("PINF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PINF_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"PINF_THREADS must be a positive integer, got {raw!r}")
    return n


def _require_seed(cfg, what):
    if cfg.seed is None:
        raise ConfigError(f"[solver] seed is required for the sampled checks of {what!r}")
    return cfg.seed


# subcommands -----------------------------------------------------------------------

def _solve(cfg, out):
    if cfg.p is None:
        raise ConfigError("[solver] p is required for solve")
    grid, g = build_problem(cfg)
    rep = minimize(grid, ProblemSpec(g, cfg.alpha, cfg.p), cfg.options)
    if "json" in cfg.formats:
        emit_json(rep.to_dict(), out / "solve_report.json")
    if "csv" in cfg.formats:
        emit_csv(*_field_rows(rep.minimizer), out / "u.csv")
    print(f"solve: energy={rep.breakdown.total:.10g} volume={rep.positive_volume:.10g} "
          f"converged={rep.converged}")
    if not rep.converged:
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _continuation(cfg, grid, g, out):
    try:
        return continuation(grid, g, cfg.alpha, cfg.schedule, cfg.options)
    except NonConvergenceError as exc:
        if exc.partial is not None and "json" in cfg.formats:
            emit_json(exc.partial.to_dict(), out / "continuation.json")
        raise


def _limit(cfg, out):
    seed = _require_seed(cfg, "limit")
    grid, g = build_problem(cfg)
    rep = _continuation(cfg, grid, g, out)
    u = rep.u_infinity
    infl = inf_laplacian_residual(u)
    verdicts = boundary_H_residual(u, g, cfg.boundary_tol)
    data = rep.to_dict()
    data["inf_laplacian_sup"] = infl.sup
    data["boundary_verdicts"] = [
        {"node": v.node, "g": v.g, "status": v.status, "value": v.value} for v in verdicts]
    try:
        mv = maximizer_check(u, g, cfg.alpha, cfg.samples, seed)
        data["maximizer_check"] = {"passed": mv.passed, "value": mv.value,
                                   "worst_excess": mv.worst_excess, "saturated": mv.saturated,
                                   "samples": cfg.samples, "seed": seed}
    except (InvalidArgumentError, PreconditionError) as exc:
        # a short schedule may stop before u_p is 1-Lipschitz; record, do not fail
        data["maximizer_check"] = {"skipped": str(exc)}
    if "json" in cfg.formats:
        emit_json(data, out / "continuation.json")
    if "csv" in cfg.formats:
        for r in rep.reports:
            emit_csv(*_field_rows(r.minimizer), out / f"u_p{_p_label(r.p)}.csv")
        emit_csv(["p", "energy", "lipschitz", "volume", "sup_distance"], rep.table(),
                 out / "convergence.csv")
    print(f"limit: lipschitz={rep.lipschitz_constant:.10g} "
          f"maximizer_value={rep.maximizer_value:.10g} volume={rep.reports[-1].positive_volume:.10g}")
    return EXIT_OK


def _symmetrize(cfg, out):
    if cfg.kind != "disk":
        raise ConfigError("symmetrize needs a disk domain")
    if cfg.p is None:
        raise ConfigError("[solver] p is required for symmetrize")
    grid, g = build_problem(cfg)
    rep = minimize(grid, ProblemSpec(g, cfg.alpha, cfg.p), cfg.options)
    if not rep.converged:
        print("symmetrize: solve did not converge")
        return EXIT_NONCONVERGENCE
    try:
        verdict = boundary_symmetry_test(rep, g, cfg.symmetry_tol)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    data = {"solve": rep.to_dict(), "symmetry": {
        "passed": verdict.passed, "defect": verdict.defect,
        "relative_defect": verdict.relative_defect, "tol": cfg.symmetry_tol,
        "interior_defect": verdict.interior_defect}}
    if "json" in cfg.formats:
        emit_json(data, out / "symmetrize.json")
    if "csv" in cfg.formats:
        u = rep.minimizer
        star = cap_symmetrize(u.with_values(np.maximum(u.values, 0.0)))
        n_t = grid.params["n_theta"]
        rows = []
        for i in range(1, grid.params["n_r"] + 1):
            for j, node in enumerate(ring_nodes(grid, i)):
                rows.append([i, 2.0 * math.pi * j / n_t, u.values[node], star.values[node]])
        emit_csv(["ring", "theta", "value", "value_star"], rows, out / "symmetrize.csv")
    print(f"symmetrize: energy={rep.breakdown.total:.10g} volume={rep.positive_volume:.10g} "
          f"trace_defect={verdict.relative_defect:.4g} passed={verdict.passed}")
    return EXIT_OK


def _transport(cfg, out):
    from .transport import transport_report

    seed = _require_seed(cfg, "transport")
    grid, g = build_problem(cfg)
    rep = _continuation(cfg, grid, g, out)
    tr = transport_report(rep, g, cfg.samples, seed, workers=_threads())
    if "json" in cfg.formats:
        emit_json(tr.to_dict(), out / "transport.json")
    if "csv" in cfg.formats:
        coord = ["x"] + (["y"] if grid.dim == 2 else [])
        emit_csv(["anchor"] + [f"terminal_{c}" for c in coord] + ["length", "mass"],
                 [[r.anchor, *r.terminal, r.length, r.mass] for r in tr.rays], out / "rays.csv")
        emit_csv(coord + ["mass"], [[*x, m] for x, m in zip(tr.nu_infinity.locations,
                                                             tr.nu_infinity.masses)],
                 out / "nu.csv")
        emit_csv(coord + ["mass"], [[*x, m] for x, m in zip(tr.mu.locations, tr.mu.masses)],
                 out / "mu.csv")
    print(f"transport: w1_alpha={tr.w1_alpha:.10g} dual={tr.dual_value:.10g} "
          f"nu_total={tr.nu_infinity.total_mass:.10g} set_volume={tr.transport_set_volume:.10g}")
    return EXIT_OK


def run_examples(out=None, tol_scale=1.0, stream=None):
    """Run the built-in acceptance suite; print a table; return an exit code."""
    from .acceptance import run_suite, results_to_dict

    stream = stream or sys.stdout
    results = run_suite(tol_scale=tol_scale)
    for r in results:
        stream.write(f"[{'PASS' if r.passed else 'FAIL'}] {r.cid:>2} {r.name}  "
                     f"({r.seconds:.1f}s)\n")
    if out is not None:
        emit_json(results_to_dict(results), Path(out) / "examples.json")
    ok = all(r.passed for r in results)
    stream.write(f"{sum(r.passed for r in results)}/{len(results)} criteria passed\n")
    return EXIT_OK if ok else EXIT_REGRESSION


def run(config_path, subcommand, out=None):
    """Execute one subcommand and return its exit code."""
    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        _threads()
        if subcommand == "examples":
            return run_examples(out)
        if config_path is None:
            raise ConfigError(f"{subcommand} needs --config")
        cfg = load_config(config_path)
        target = Path(out) if out is not None else cfg.directory
        handler = {"solve": _solve, "limit": _limit, "symmetrize": _symmetrize,
                   "transport": _transport}[subcommand]
        return handler(cfg, target)
    except DatumError as exc:
        print(f"error [{exc.datum_class}]: {exc}", file=sys.stderr)
        return EXIT_DATUM
    except NonConvergenceError as exc:
        print(f"error [non-convergence]: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, InfeasibleResolutionError, InvalidArgumentError, OSError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pinf",
        description="Volume-constrained p-Laplacian Neumann problems and their p -> infinity limit.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("--out", help="output directory (overrides [output] directory)")
    args = parser.parse_args(argv)
    return run(args.config, args.subcommand, args.out)


if __name__ == "__main__":
    sys.exit(main())
