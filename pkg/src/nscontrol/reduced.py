"""Reduced-space objective for velocity/pressure tracking control.

The control u is a Q2 vector field acting as a distributed body force.  With
the control-to-state maps y = Y(u), p = P(u) the reduced objective is

    J(u) = gamma_y/2 |Y(u) - y_d|^2 + gamma_p/2 |P(u) - p_d|^2
           + beta/2 |u|^2

in the discrete L2 norms.  Gradient and Hessian applications reuse one
sparse LU of the linearized state operator: the gradient is one transpose
solve, a Hessian matvec is one forward plus one transpose solve.  The
second-order convection contribution enters through the matrix
S = N2(zbar) + N2(zbar)^T built from the adjoint velocity zbar, which makes
the Hessian application purely algebraic once the factorization exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flow, forms
from .flow import ProblemParams, StateSolution
from .grid import Level


@dataclass
class TargetData:
    """Tracking targets: velocity y_d (Q2 vector) and optional pressure p_d."""
    yd: np.ndarray
    pd: np.ndarray | None = None


@dataclass
class HessianContext:
    """Everything needed to apply gradient and Hessian at a fixed control."""
    level: Level
    params: ProblemParams
    targets: TargetData
    u: np.ndarray
    state: StateSolution
    zbar: np.ndarray             # adjoint velocity
    fact: flow.SaddleFactorization
    S: "object"                  # sparse, N2(zbar) + N2(zbar)^T

    def apply(self, v):
        return hessian_apply(self, v)


def _tracking_duals(ctx_or_parts):
    level, params, targets, state = ctx_or_parts
    f_dual = params.gamma_y * (level.mass_vec @ (state.y - targets.yd))
    d_dual = None
    if params.gamma_p > 0:
        pd = targets.pd if targets.pd is not None else np.zeros(level.nq1)
        d_dual = params.gamma_p * (level.mass_q1 @ (state.p - pd))
    return f_dual, d_dual


def make_context(params: ProblemParams, level: Level, u,
                 targets: TargetData, state: StateSolution | None = None):
    """Solve (or accept) the state at u and prepare adjoint and Hessian data.

    The adjoint pair (zbar, rho) solves the transpose-linearized system with
    tracking misfits as data; only zbar is kept since the reduced gradient
    is beta*u + zbar.
    """
    u = np.asarray(u, dtype=float)
    if state is None:
        state = flow.solve_navier_stokes(params, level, u=u)
    fact = flow.factorize_linearized(level, params.nu, state.y)
    f_dual, d_dual = _tracking_duals((level, params, targets, state))
    zbar, _ = fact.solve_transpose_dual(f_dual, d_dual)
    _, N2 = forms.assemble_convection(level, zbar)
    S = N2 + N2.T
    return HessianContext(level=level, params=params, targets=targets, u=u,
                          state=state, zbar=zbar, fact=fact, S=S)


def eval_cost(ctx: HessianContext) -> float:
    level, params, targets, state = ctx.level, ctx.params, ctx.targets, ctx.state
    ey = state.y - targets.yd
    J = 0.5 * params.gamma_y * level.inner_vec(ey, ey)
    if params.gamma_p > 0:
        pd = targets.pd if targets.pd is not None else np.zeros(level.nq1)
        ep = state.p - pd
        J += 0.5 * params.gamma_p * level.inner_q1(ep, ep)
    J += 0.5 * params.beta * level.inner_vec(ctx.u, ctx.u)
    return J


def eval_gradient(ctx: HessianContext):
    """L2-Riesz gradient of the reduced objective (a Q2 vector field)."""
    return ctx.params.beta * ctx.u + ctx.zbar


def hessian_apply(ctx: HessianContext, v):
    """Apply the reduced Hessian at the context's control to v.

    Forward solve gives the state/pressure sensitivities (w, r); the
    transpose solve then lifts the tracking terms plus the curvature of the
    convection form back to control space.
    """
    level, params = ctx.level, ctx.params
    v = np.asarray(v, dtype=float)
    w, r = ctx.fact.solve_dual(level.mass_vec @ v)
    F = params.gamma_y * (level.mass_vec @ w) + ctx.S @ w
    D = params.gamma_p * (level.mass_q1 @ r) if params.gamma_p > 0 else None
    zeta, _ = ctx.fact.solve_transpose_dual(F, D)
    return params.beta * v + zeta
