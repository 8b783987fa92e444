"""Outer Newton loop, benchmark harness, and study drivers.

Ties the pieces together: Newton on the reduced control problem with CG or
multigrid-preconditioned CG (MGCG) for the Newton systems, grid
continuation with warm starts, iteration-count benchmarks comparing the
two linear solvers, the preconditioner approximation-order and
spectral-distance studies, and a manufactured-solution convergence check
of the underlying discretization.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow, forms, krylov, precond, reduced
from .flow import ProblemParams
from .grid import Level, MeshHierarchy, build_hierarchy
from .reduced import TargetData

NEWTON_GRAD_TOL = 1e-10
NEWTON_MAX_ITERS = 10


@dataclass
class LinearConfig:
    """How the Newton systems are solved."""
    method: str = "mgcg"            # "cg" | "mgcg"
    tol: float = 1e-8
    maxit: int = 500
    base: int | None = None         # base grid cells/side for mgcg
    cycle: str = "two_grid"         # "two_grid" | "w_cycle"

    def __post_init__(self):
        if self.method not in ("cg", "mgcg"):
            raise ValueError(f"unknown linear method {self.method!r}")
        if self.cycle not in ("two_grid", "w_cycle"):
            raise ValueError(f"unknown cycle {self.cycle!r}")


@dataclass
class NewtonIteration:
    grad_inf: float
    lin_iters: int = 0
    lin_time: float = 0.0
    prec_time: float = 0.0


@dataclass
class NewtonReport:
    iterations: list = field(default_factory=list)
    newton_iters: int = 0
    converged: bool = False
    nc: bool = False
    lin_time: float = 0.0
    prec_time: float = 0.0
    total_time: float = 0.0
    status: str = "conv"            # conv | max_newton | nc | diverged

    @property
    def grad_inf(self):
        return self.iterations[-1].grad_inf if self.iterations else np.nan


@dataclass
class BenchRecord:
    """One (parameter tuple, method) arm over a range of levels."""
    params: ProblemParams
    method: str
    base: int | None
    cycle: str
    tol: float
    levels: list = field(default_factory=list)       # n per run level
    reports: list = field(default_factory=list)      # NewtonReport per level
    controls: list = field(default_factory=list)     # final control per level


def target_control_field(level: Level):
    """Nodal interpolant of the benchmark target control.

    The first component is 2000*(y - 0.9)^2 in the strip y > 0.9 and zero
    below it; the second component vanishes.  Peaks at 20 on the top edge.
    """
    yc = level.q2_y
    u1 = 1e3 * (np.sign(yc - 0.9) + 1.0) * (yc - 0.9) ** 2
    return np.concatenate([u1, np.zeros_like(u1)])


def generate_target_data(level: Level, params: ProblemParams, u_target):
    """Exact-recovery data: solve the state at u_target and track it.

    With these targets the misfit vanishes at u_target, so the gradient
    there is exactly beta*u_target; the minimizer of the reduced problem
    lies nearby but is not u_target itself.
    """
    state = flow.solve_navier_stokes(params, level, u=u_target)
    return TargetData(yd=state.y, pd=state.p.copy())


def _sub_hierarchy_for(hierarchy: MeshHierarchy, level: Level):
    for k, lv in enumerate(hierarchy.levels):
        if lv.n == level.n:
            return hierarchy.sub(k)
    raise ValueError(f"level n={level.n} not in hierarchy")


def newton_solve(level: Level, params: ProblemParams, targets: TargetData,
                 lincfg: LinearConfig, u0=None, hierarchy=None):
    """Newton iteration on the reduced problem at one level.

    Each step solves H(u) delta = -grad by (preconditioned) CG; for mgcg
    the multigrid preconditioner is rebuilt at the current control every
    iteration.  The linear-solve clock times the Krylov loop only; the
    per-iteration setup (state solve, factorization, preconditioner
    construction including its dense base factorization) is recorded
    separately in prec_time / total_time, so the cg-vs-mgcg time ratio
    compares the iteration cost the preconditioner is meant to reduce.
    Stops once the gradient max-norm drops to 1e-10, after 10 Newton
    steps, or when the preconditioned system loses positive definiteness
    ("nc").
    """
    t_total = time.perf_counter()
    u = np.zeros(2 * level.nq2s) if u0 is None else np.array(u0, dtype=float)
    if lincfg.method == "mgcg":
        if hierarchy is None:
            if lincfg.base is None:
                raise ValueError("mgcg needs a base level or hierarchy")
            nlev = int(np.log2(level.n // lincfg.base)) + 1
            if lincfg.base * 2 ** (nlev - 1) != level.n:
                raise ValueError("base does not refine into the run level")
            hierarchy = build_hierarchy(lincfg.base, nlev)
        else:
            hierarchy = _sub_hierarchy_for(hierarchy, level)
    report = NewtonReport()
    for it in range(NEWTON_MAX_ITERS + 1):
        ctx = reduced.make_context(params, level, u, targets)
        g = reduced.eval_gradient(ctx)
        gnorm = float(np.linalg.norm(g, ord=np.inf))
        report.iterations.append(NewtonIteration(grad_inf=gnorm))
        if gnorm <= NEWTON_GRAD_TOL:
            report.converged = True
            report.status = "conv"
            break
        if it == NEWTON_MAX_ITERS:
            report.status = "max_newton"
            break
        last = report.iterations[-1]
        apply_prec = None
        if lincfg.method == "mgcg":
            t0 = time.perf_counter()
            try:
                prec = precond.build_preconditioner(hierarchy, ctx,
                                                    cycle=lincfg.cycle)
                # realize the lazy dense base factorization on the clock
                prec._base_factorization()
            except precond.NotPositiveDefinite:
                last.prec_time = time.perf_counter() - t0
                report.nc = True
                report.status = "nc"
                break
            last.prec_time = time.perf_counter() - t0
            apply_prec = prec.apply_inverse
        t0 = time.perf_counter()
        try:
            delta, krep = krylov.pcg(ctx.apply, -g, level.inner_vec,
                                     apply_prec=apply_prec, tol=lincfg.tol,
                                     maxit=lincfg.maxit,
                                     raise_on_breakdown=True)
        except krylov.Breakdown:
            last.lin_time = time.perf_counter() - t0
            report.nc = True
            report.status = "nc"
            break
        last.lin_iters = krep.iterations
        last.lin_time = time.perf_counter() - t0
        u = u + delta
    report.newton_iters = len(report.iterations) - 1
    report.lin_time = sum(r.lin_time for r in report.iterations)
    report.total_time = time.perf_counter() - t_total
    return u, report


def continuation_solve(params: ProblemParams, targets_per_level,
                       lincfg: LinearConfig, hierarchy: MeshHierarchy,
                       run_levels):
    """Solve over a contiguous range of levels with warm starts.

    run_levels are indices into the hierarchy; the coarsest starts from
    zero control, each finer level from the prolonged previous solution.
    targets_per_level maps each run level index to its TargetData.

    When the multigrid method is requested, hierarchy level 0 has no
    coarser grid to precondition from, so that level falls back to plain
    conjugate gradients.  It only serves as the warm-start generator; its
    timings are reported under method "cg" semantics.
    """
    run_levels = list(run_levels)
    if run_levels != list(range(run_levels[0], run_levels[-1] + 1)):
        raise ValueError("run levels must be contiguous")
    rec = BenchRecord(params=params, method=lincfg.method, base=lincfg.base,
                      cycle=lincfg.cycle, tol=lincfg.tol)
    u = None
    for k in run_levels:
        level = hierarchy.levels[k]
        if u is not None:
            u = hierarchy.prolong_control(k - 1, u)
        cfg_k = lincfg
        if lincfg.method == "mgcg" and k == 0:
            cfg_k = replace(lincfg, method="cg")
        u, rep = newton_solve(level, params, targets_per_level[k], cfg_k,
                              u0=u, hierarchy=hierarchy)
        rec.levels.append(level.n)
        rec.reports.append(rep)
        rec.controls.append(u)
        if rep.status == "nc":
            break
    return rec


def efficiency_ratio(rec_cg: BenchRecord, rec_mg: BenchRecord):
    """t_cg / t_mg of the linear-solve time at the finest common level."""
    if not rec_cg.reports or not rec_mg.reports:
        return np.nan
    t_cg = rec_cg.reports[-1].lin_time
    t_mg = rec_mg.reports[-1].lin_time
    return t_cg / t_mg if t_mg > 0 else np.inf


@dataclass
class BenchConfig:
    tuples: list                     # list of ProblemParams
    base: int = 16
    levels: int = 2                  # hierarchy depth above and incl. base
    run_from: int = 1                # first run level index (0 = base)
    tol: float = 1e-8
    cycle: str = "two_grid"
    maxit: int = 500
    methods: tuple = ("cg", "mgcg")


def _worker_count():
    raw = os.environ.get("NSK_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _bench_one(pp: ProblemParams, cfg: BenchConfig):
    hierarchy = build_hierarchy(cfg.base, cfg.levels)
    run_levels = list(range(cfg.run_from, cfg.levels))
    targets = {}
    for k in run_levels:
        level = hierarchy.levels[k]
        targets[k] = generate_target_data(level, pp,
                                          target_control_field(level))
    out = []
    for method in cfg.methods:
        lincfg = LinearConfig(method=method, tol=cfg.tol, maxit=cfg.maxit,
                              base=cfg.base, cycle=cfg.cycle)
        try:
            rec = continuation_solve(pp, targets, lincfg, hierarchy,
                                     run_levels)
        except (flow.NonlinearDivergence, flow.SingularMatrix) as exc:
            rec = BenchRecord(params=pp, method=method, base=cfg.base,
                              cycle=cfg.cycle, tol=cfg.tol)
            rep = NewtonReport(status="diverged")
            rep.iterations.append(NewtonIteration(grad_inf=np.nan))
            rec.levels.append(hierarchy.levels[run_levels[0]].n)
            rec.reports.append(rep)
        out.append(rec)
    return out


def run_benchmark(cfg: BenchConfig):
    """CG and MGCG arms over the parameter grid; failures are recorded.

    Parameter tuples are independent, so they may run in parallel; the
    NSK_THREADS environment variable bounds the worker count (default 1).
    """
    if not cfg.tuples:
        return []
    workers = min(_worker_count(), len(cfg.tuples))
    if workers == 1:
        results = [_bench_one(pp, cfg) for pp in cfg.tuples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda pp: _bench_one(pp, cfg),
                                    cfg.tuples))
    return [rec for group in results for rec in group]


# ---------------------------------------------------------------------------
# Preconditioner studies
# ---------------------------------------------------------------------------

@dataclass
class OrderStudyConfig:
    params: ProblemParams
    grids: tuple = (16, 32, 64)      # fine n per study point; base = n/2
    freeze: str = "target"           # "target" | "minimizer"
    power_iters: int = 30
    lanczos_k: int = 40
    seed: int = 0


def _study_context(pp, level, freeze, lincfg_tol=1e-8):
    u = target_control_field(level)
    targets = generate_target_data(level, pp, u)
    if freeze == "minimizer":
        u, _ = newton_solve(level, pp, targets,
                            LinearConfig(method="cg", tol=lincfg_tol),
                            u0=u)
    return reduced.make_context(pp, level, u, targets)


def run_order_study(cfg: OrderStudyConfig):
    """Per-grid norms ||H - T|| and spectral distances with ratios.

    Each study point is a pure two-grid pair (base = fine/2) frozen at
    either the target control or the computed minimizer.  A shrinking
    norm ratio near 1/4 reflects second-order approximation for velocity
    tracking; mixed velocity/pressure tracking degrades to first order
    (ratio near 1/2).
    """
    if cfg.freeze not in ("target", "minimizer"):
        raise ValueError(f"unknown freeze mode {cfg.freeze!r}")
    rows = []
    rng = np.random.default_rng(cfg.seed)
    for n in cfg.grids:
        hierarchy = build_hierarchy(n // 2, 2)
        level = hierarchy.levels[-1]
        ctx = _study_context(cfg.params, level, cfg.freeze)
        flagged = False
        try:
            prec = precond.build_preconditioner(hierarchy, ctx)
            opnorm = precond.operator_difference_norm(
                prec, iters=cfg.power_iters, seed=cfg.seed)
            b = rng.standard_normal(2 * level.nq2s)
            dist = krylov.lanczos_spectral_distance(
                ctx.apply, prec.apply_inverse, b, level.inner_vec,
                k=cfg.lanczos_k)
        except (precond.NotPositiveDefinite, krylov.Breakdown):
            opnorm, dist, flagged = np.nan, np.nan, True
        rows.append({"n": n, "h": 1.0 / n, "opnorm": opnorm,
                     "distance": dist, "nc": flagged})
    for i in range(1, len(rows)):
        a, b = rows[i - 1], rows[i]
        b["opnorm_ratio"] = b["opnorm"] / a["opnorm"]
        b["distance_ratio"] = b["distance"] / a["distance"]
    return rows


# ---------------------------------------------------------------------------
# Manufactured-solution study
# ---------------------------------------------------------------------------

def _manufactured_fields(nu):
    """Divergence-free stream-function solution and matching forcing."""
    import sympy as sym

    x, y = sym.symbols("x y")
    psi = x ** 2 * (1 - x) ** 2 * y ** 2 * (1 - y) ** 2
    vel = (sym.diff(psi, y), -sym.diff(psi, x))
    # curved zero-mean pressure: a linear one is reproduced exactly by Q1
    # and would leave nothing to measure
    pres = sym.sin(sym.pi * x) * sym.cos(sym.pi * y)
    f = []
    for comp in range(2):
        c = vel[comp]
        expr = (-nu * (sym.diff(c, x, 2) + sym.diff(c, y, 2))
                + vel[0] * sym.diff(c, x) + vel[1] * sym.diff(c, y)
                + sym.diff(pres, (x, y)[comp]))
        f.append(sym.lambdify((x, y), sym.simplify(expr), "numpy"))
    ex = sym.lambdify((x, y), vel, "numpy")
    exg = sym.lambdify((x, y), ((sym.diff(vel[0], x), sym.diff(vel[0], y)),
                                (sym.diff(vel[1], x), sym.diff(vel[1], y))),
                       "numpy")
    exp_ = sym.lambdify((x, y), pres, "numpy")
    return tuple(f), ex, exg, exp_


@dataclass
class MmsConfig:
    nu: float = 1.0
    grids: tuple = (8, 16, 32)


def run_mms(cfg: MmsConfig):
    """Discretization convergence table on a smooth manufactured flow.

    Velocity errors should shrink at third order in L2 and second order in
    H1; the bilinear pressure at (at least) second order in L2.
    """
    forcing, ex, exg, exp_ = _manufactured_fields(cfg.nu)
    pp = ProblemParams(nu=cfg.nu, beta=1.0)
    rows = []
    for n in cfg.grids:
        level = Level(n)
        state = flow.solve_navier_stokes(pp, level, forcing=forcing)
        el2, eh1 = forms.velocity_error_norms(
            level, state.y, lambda X, Y: ex(X, Y), lambda X, Y: exg(X, Y))
        ep = forms.pressure_error_norm(level, state.p, exp_)
        rows.append({"n": n, "h": 1.0 / n, "vel_l2": el2, "vel_h1": eh1,
                     "pres_l2": ep, "newton_iters": state.newton_iters})
    for i in range(1, len(rows)):
        a, b = rows[i - 1], rows[i]
        for key, okey in (("vel_l2", "order_l2"), ("vel_h1", "order_h1"),
                          ("pres_l2", "order_p")):
            b[okey] = float(np.log2(a[key] / b[key]))
    return rows
