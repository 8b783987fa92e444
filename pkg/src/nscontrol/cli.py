"""Command-line interface: config parsing, solves, benchmarks, exports.

Subcommands: solve, bench, spectral, mms, export.  Configuration is plain
sectioned key=value text (INI-style); command-line flags override file
values.  Reports are written as CSV or JSON with lossless float precision,
with summary figures rendered next to the delimited output.  Exit codes:
0 success, 2 configuration error, 3 solver divergence or indefinite
preconditioner, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import driver, flow, forms, reduced
from .driver import BenchConfig, LinearConfig, MmsConfig, OrderStudyConfig
from .flow import ProblemParams
from .grid import Level, build_hierarchy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

CSV_COLUMNS = ["nu", "beta", "gamma_y", "gamma_p", "method", "base",
               "level", "newton_iter", "lin_iters", "grad_inf",
               "lin_time_s", "total_time_s", "status"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    n0: int = 16
    levels: int = 2
    nu: list = field(default_factory=lambda: [0.1])
    beta: list = field(default_factory=lambda: [1e-4])
    gamma_y: float = 1.0
    gamma_p: list = field(default_factory=lambda: [0.0])
    method: str = "mgcg"
    tol: float = 1e-8
    base: int | None = None
    cycle: str = "two_grid"
    maxit: int = 500
    out_dir: str = "."
    out_format: str = "csv"
    seed: int = 0
    freeze: str = "target"
    power_iters: int = 30
    lanczos_k: int = 40

    def single_params(self):
        if len(self.nu) != 1 or len(self.beta) != 1 or len(self.gamma_p) != 1:
            raise ConfigError("this command needs single values for "
                              "nu, beta, gamma_p (lists are bench-only)")
        return self._params(self.nu[0], self.beta[0], self.gamma_p[0])

    def _params(self, nu, beta, gp):
        try:
            return ProblemParams(nu=nu, beta=beta, gamma_y=self.gamma_y,
                                 gamma_p=gp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def param_grid(self):
        return [self._params(nu, beta, gp)
                for nu in self.nu for beta in self.beta
                for gp in self.gamma_p]


_SCHEMA = {
    "mesh": {"n0": int, "levels": int},
    "params": {"nu": "floatlist", "beta": "floatlist", "gamma_y": float,
               "gamma_p": "floatlist"},
    "linear": {"method": str, "tol": float, "base": int, "cycle": str,
               "maxit": int},
    "output": {"dir": str, "format": str, "seed": int},
    "study": {"freeze": str, "power_iters": int, "lanczos_k": int},
}

_KEY_TO_ATTR = {
    ("mesh", "n0"): "n0", ("mesh", "levels"): "levels",
    ("params", "nu"): "nu", ("params", "beta"): "beta",
    ("params", "gamma_y"): "gamma_y", ("params", "gamma_p"): "gamma_p",
    ("linear", "method"): "method", ("linear", "tol"): "tol",
    ("linear", "base"): "base", ("linear", "cycle"): "cycle",
    ("linear", "maxit"): "maxit",
    ("output", "dir"): "out_dir", ("output", "format"): "out_format",
    ("output", "seed"): "seed",
    ("study", "freeze"): "freeze",
    ("study", "power_iters"): "power_iters",
    ("study", "lanczos_k"): "lanczos_k",
}


def _convert(raw, kind, where):
    try:
        if kind == "floatlist":
            return [float(tok) for tok in raw.replace(",", " ").split()]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r}") from exc


def parse_config(path=None, overrides=None):
    """Read a sectioned key=value config file; reject unknown keys.

    overrides is a mapping of RunConfig attribute name to value (already
    typed), applied after the file, as CLI flags take precedence.
    """
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}]")
                val = _convert(raw, _SCHEMA[section][key],
                               f"[{section}] {key}")
                setattr(cfg, _KEY_TO_ATTR[(section, key)], val)
    for attr, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, attr, val)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.n0 < 2:
        raise ConfigError("mesh n0 must be >= 2")
    if cfg.levels < 1:
        raise ConfigError("mesh levels must be >= 1")
    for nu in cfg.nu:
        if nu <= 0:
            raise ConfigError("nu must be positive")
    for beta in cfg.beta:
        if beta <= 0:
            raise ConfigError("beta must be positive")
    if cfg.gamma_y < 0 or any(gp < 0 for gp in cfg.gamma_p):
        raise ConfigError("tracking weights must be nonnegative")
    if cfg.gamma_y == 0 and all(gp == 0 for gp in cfg.gamma_p):
        raise ConfigError("gamma_y and gamma_p must not both be zero")
    if cfg.method not in ("cg", "mgcg"):
        raise ConfigError(f"unknown linear method {cfg.method!r}")
    if cfg.cycle not in ("two_grid", "w_cycle"):
        raise ConfigError(f"unknown cycle {cfg.cycle!r}")
    if cfg.tol <= 0 or cfg.maxit < 1:
        raise ConfigError("linear tol must be positive, maxit >= 1")
    if cfg.out_format not in ("csv", "json"):
        raise ConfigError(f"unknown output format {cfg.out_format!r}")
    if cfg.freeze not in ("target", "minimizer"):
        raise ConfigError(f"unknown freeze mode {cfg.freeze!r}")
    if cfg.base is not None:
        if cfg.base < 2:
            raise ConfigError("linear base must be >= 2")
        n = cfg.base
        top = cfg.n0 * 2 ** (cfg.levels - 1)
        while n < top:
            n *= 2
        if n != top:
            raise ConfigError(
                f"base {cfg.base} does not refine into finest grid {top}")


def emit_config(cfg: RunConfig, path):
    """Write the config back out in the same sectioned format."""
    lines = []
    for (section, key), attr in _KEY_TO_ATTR.items():
        val = getattr(cfg, attr)
        if val is None:
            continue
        if not lines or not lines[-1] == "":
            pass
        lines.append((section, key, val))
    by_sec = {}
    for section, key, val in lines:
        if isinstance(val, list):
            raw = ", ".join(format(v, ".17g") for v in val)
        elif isinstance(val, float):
            raw = format(val, ".17g")
        else:
            raw = str(val)
        by_sec.setdefault(section, []).append((key, raw))
    with open(path, "w") as fh:
        for section, items in by_sec.items():
            fh.write(f"[{section}]\n")
            for key, raw in items:
                fh.write(f"{key} = {raw}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# Record emission
# ---------------------------------------------------------------------------

def _record_rows(records):
    rows = []
    for rec in records:
        pp = rec.params
        for n, rep in zip(rec.levels, rec.reports):
            for k, it in enumerate(rep.iterations):
                rows.append({
                    "nu": pp.nu, "beta": pp.beta, "gamma_y": pp.gamma_y,
                    "gamma_p": pp.gamma_p, "method": rec.method,
                    "base": rec.base if rec.base is not None else "",
                    "level": n, "newton_iter": k,
                    "lin_iters": it.lin_iters, "grad_inf": it.grad_inf,
                    "lin_time_s": it.lin_time,
                    "total_time_s": rep.total_time, "status": rep.status,
                })
    return rows


def _fmt_cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def emit_records(records, fmt, path):
    """Serialize benchmark/solve records to CSV or JSON.

    One row per (parameter tuple, level, Newton iteration), in run order.
    All floats carry 17 significant digits so the files round-trip
    losslessly.
    """
    rows = _record_rows(records)
    try:
        if fmt == "csv":
            with open(path, "w") as fh:
                fh.write(",".join(CSV_COLUMNS) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt_cell(row[c])
                                      for c in CSV_COLUMNS) + "\n")
        elif fmt == "json":
            with open(path, "w") as fh:
                json.dump(rows, fh, indent=1,
                          default=lambda o: format(o, ".17g"))
                fh.write("\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def write_table(rows, fmt, path):
    """Emit a list of uniform dict rows (study tables) to CSV or JSON."""
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    try:
        if fmt == "csv":
            with open(path, "w") as fh:
                fh.write(",".join(cols) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt_cell(row.get(c, ""))
                                      for c in cols) + "\n")
        else:
            with open(path, "w") as fh:
                json.dump(rows, fh, indent=1)
                fh.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def export_fields(state, control, level: Level, path):
    """Write velocity, pressure, and control as a legacy-VTK ASCII file.

    Structured grid over the Q2 node lattice; the bilinear pressure is
    interpolated to the Q2 nodes so all point data share one grid.
    """
    ns = level.nq2s
    nx = 2 * level.n + 1
    pq2 = forms.evaluate_q1_at_q2_nodes(level, state.p)
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write("navier-stokes control fields\n")
            fh.write("ASCII\nDATASET STRUCTURED_GRID\n")
            fh.write(f"DIMENSIONS {nx} {nx} 1\n")
            fh.write(f"POINTS {ns} double\n")
            for y, x in zip(level.q2_y, level.q2_x):
                fh.write(f"{x:.17g} {y:.17g} 0\n")
            fh.write(f"POINT_DATA {ns}\n")
            fh.write("VECTORS velocity double\n")
            for a, b in zip(state.y[:ns], state.y[ns:]):
                fh.write(f"{a:.17g} {b:.17g} 0\n")
            fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
            for v in pq2:
                fh.write(f"{v:.17g}\n")
            fh.write("VECTORS control double\n")
            for a, b in zip(control[:ns], control[ns:]):
                fh.write(f"{a:.17g} {b:.17g} 0\n")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _out_path(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    ext = "csv" if cfg.out_format == "csv" else "json"
    return os.path.join(cfg.out_dir, f"{name}.{ext}")


def _lincfg(cfg: RunConfig):
    return LinearConfig(method=cfg.method, tol=cfg.tol, maxit=cfg.maxit,
                        base=cfg.base, cycle=cfg.cycle)


def cmd_solve(cfg: RunConfig):
    pp = cfg.single_params()
    hierarchy = build_hierarchy(cfg.base or cfg.n0, _depth(cfg))
    run_levels = range(_run_from(cfg), len(hierarchy))
    targets = {}
    for k in run_levels:
        level = hierarchy.levels[k]
        targets[k] = driver.generate_target_data(
            level, pp, driver.target_control_field(level))
    rec = driver.continuation_solve(pp, targets, _lincfg(cfg), hierarchy,
                                    run_levels)
    emit_records([rec], cfg.out_format, _out_path(cfg, "solve"))
    final = rec.reports[-1]
    print(f"newton={final.newton_iters} status={final.status} "
          f"grad_inf={final.grad_inf:.3e} "
          f"lin_iters={[it.lin_iters for it in final.iterations]}")
    return EXIT_DIVERGED if final.status in ("nc", "diverged") else EXIT_OK


def _depth(cfg):
    """Hierarchy depth from the (base or n0) up to the finest grid.

    Grids between base and n0 belong to the preconditioner hierarchy but
    are not themselves solved; the solved grids start at n0.
    """
    bottom = min(cfg.base or cfg.n0, cfg.n0)
    top = cfg.n0 * 2 ** (cfg.levels - 1)
    return int(np.log2(top // bottom)) + 1


def _run_from(cfg):
    """Index of the coarsest solved grid within the hierarchy."""
    bottom = min(cfg.base or cfg.n0, cfg.n0)
    return int(np.log2(cfg.n0 // bottom))


def cmd_bench(cfg: RunConfig):
    base = min(cfg.base or cfg.n0, cfg.n0)
    bench = BenchConfig(tuples=cfg.param_grid(), base=base,
                        levels=_depth(cfg), run_from=_run_from(cfg),
                        tol=cfg.tol, cycle=cfg.cycle, maxit=cfg.maxit)
    records = driver.run_benchmark(bench)
    emit_records(records, cfg.out_format, _out_path(cfg, "bench"))
    ratios = []
    for i in range(0, len(records) - 1, 2):
        a, b = records[i], records[i + 1]
        if {a.method, b.method} == {"cg", "mgcg"}:
            cg, mg = (a, b) if a.method == "cg" else (b, a)
            eff = driver.efficiency_ratio(cg, mg)
            ratios.append((cg.params, eff))
            print(f"nu={cg.params.nu:g} beta={cg.params.beta:g} "
                  f"gamma_p={cg.params.gamma_p:g} eff={eff:.6f}")
    from . import plots
    plots.bench_figure(records, os.path.join(cfg.out_dir, "bench.png"))
    bad = any(rep.status in ("nc", "diverged")
              for rec in records for rep in rec.reports)
    return EXIT_DIVERGED if bad else EXIT_OK


def cmd_spectral(cfg: RunConfig):
    pp = cfg.single_params()
    grids = [cfg.n0 * 2 ** k for k in range(1, max(cfg.levels, 2))]
    study = OrderStudyConfig(params=pp, grids=tuple(grids),
                             freeze=cfg.freeze,
                             power_iters=cfg.power_iters,
                             lanczos_k=cfg.lanczos_k, seed=cfg.seed)
    rows = driver.run_order_study(study)
    write_table(rows, cfg.out_format, _out_path(cfg, "spectral"))
    for row in rows:
        extra = ""
        if "opnorm_ratio" in row:
            extra = (f" ratio_norm={row['opnorm_ratio']:.3f}"
                     f" ratio_dist={row['distance_ratio']:.3f}")
        print(f"n={row['n']} opnorm={row['opnorm']:.4e} "
              f"dist={row['distance']:.4e} nc={row['nc']}{extra}")
    from . import plots
    plots.spectral_figure(rows, os.path.join(cfg.out_dir, "spectral.png"))
    return EXIT_DIVERGED if any(r["nc"] for r in rows) else EXIT_OK


def cmd_mms(cfg: RunConfig):
    if len(cfg.nu) != 1:
        raise ConfigError("mms needs a single nu")
    grids = tuple(cfg.n0 * 2 ** k for k in range(cfg.levels))
    rows = driver.run_mms(MmsConfig(nu=cfg.nu[0], grids=grids))
    write_table(rows, cfg.out_format, _out_path(cfg, "mms"))
    for row in rows:
        orders = ""
        if "order_l2" in row:
            orders = (f" orders l2={row['order_l2']:.2f} "
                      f"h1={row['order_h1']:.2f} p={row['order_p']:.2f}")
        print(f"n={row['n']} vel_l2={row['vel_l2']:.4e} "
              f"pres_l2={row['pres_l2']:.4e}{orders}")
    from . import plots
    plots.mms_figure(rows, os.path.join(cfg.out_dir, "mms.png"))
    return EXIT_OK


def cmd_export(cfg: RunConfig):
    pp = cfg.single_params()
    n = cfg.n0 * 2 ** (cfg.levels - 1)
    level = Level(n)
    u = driver.target_control_field(level)
    state = flow.solve_navier_stokes(pp, level, u=u)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"fields_n{n}.vtk")
    export_fields(state, u, level, path)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None):
    ap = argparse.ArgumentParser(prog="nscontrol")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "bench", "spectral", "mms", "export"):
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--method", choices=["cg", "mgcg"])
        sp.add_argument("--tol", type=float)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=["csv", "json"])
    args = ap.parse_args(argv)
    overrides = {"method": args.method, "tol": args.tol,
                 "out_dir": args.out, "out_format": args.format}
    try:
        cfg = parse_config(args.config, overrides)
        cfg.command = args.command
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"solve": cmd_solve, "bench": cmd_bench,
               "spectral": cmd_spectral, "mms": cmd_mms,
               "export": cmd_export}[args.command]
    try:
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (flow.NonlinearDivergence, flow.SingularMatrix) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except IOError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
