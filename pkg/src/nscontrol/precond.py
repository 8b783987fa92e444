"""Multigrid preconditioner for the reduced Hessian.

The two-grid preconditioner splits a fine control into its L2 projection
onto the coarse control space and the complement,

    T = H_2h(pi u) pi + beta (I - pi),

exploiting that the reduced Hessian is a compact perturbation of beta*I:
high-frequency components see essentially beta, and the smooth part is well
represented on the coarse grid.  Its inverse is

    T^-1 = (H_2h)^-1 pi + beta^-1 (I - pi)

and only ever needs coarse Hessian solves.  On a hierarchy, the coarse
inverse is in turn replaced either by the coarse level's own T^-1
("two_grid" cycle, straight recursive substitution) or by a fixed small
number of CG iterations on the coarse Hessian preconditioned recursively
("w_cycle").  At the bottom the Hessian is assembled densely, one column
per control basis function, and factored by Cholesky; a failed Cholesky
marks the base Hessian as not positive definite, which the caller reports
rather than hiding.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from . import flow, krylov, reduced
from .grid import MeshHierarchy
from .reduced import HessianContext, TargetData


class NotPositiveDefinite(RuntimeError):
    """The dense base-level Hessian has a nonpositive eigenvalue."""


W_CYCLE_INNER_ITERS = 2


def _dense_base_hessian(ctx: HessianContext):
    """Assemble the base reduced Hessian in dual (mass-weighted) form.

    Column j of the coefficient-space Hessian is one forward plus one
    transpose backsolve with the basis vector e_j; batching the right-hand
    sides lets the sparse LU solve them all at once.  Returns the symmetric
    matrix Hhat = M H with M the vector mass matrix, which is the Gram
    matrix of the Hessian in the L2 inner product.
    """
    level, params = ctx.level, ctx.params
    nd = 2 * level.nq2s
    nq1 = level.nq1
    ntot = nd + nq1 + 1
    lu = ctx.fact.lu
    bnd = ctx.fact._bnd
    # modest blocks keep the triangular-solve working set in cache;
    # wide blocks run several times slower per right-hand side
    chunk = min(nd, 64)

    W = np.empty((nd, nd))
    R = np.empty((nq1, nd))
    buf = np.zeros((ntot, chunk))
    for j0 in range(0, nd, chunk):
        j1 = min(j0 + chunk, nd)
        m = j1 - j0
        buf[:nd, :m] = level.mass_vec[:, j0:j1].toarray()
        buf[bnd, :m] = 0.0
        sol = lu.solve(buf[:, :m])
        W[:, j0:j1] = sol[:nd]
        R[:, j0:j1] = sol[nd:nd + nq1]
    F = params.gamma_y * (level.mass_vec @ W) + ctx.S @ W
    F[bnd, :] = 0.0
    D = params.gamma_p * (level.mass_q1 @ R) if params.gamma_p > 0 else None
    del R
    Hc = np.empty((nd, nd))
    for j0 in range(0, nd, chunk):
        j1 = min(j0 + chunk, nd)
        m = j1 - j0
        buf[:nd, :m] = F[:, j0:j1]
        buf[nd:nd + nq1, :m] = 0.0 if D is None else D[:, j0:j1]
        buf[nd + nq1, :m] = 0.0
        Hc[:, j0:j1] = lu.solve(buf[:, :m], trans="T")[:nd]
    del F, buf
    Hc += params.beta * np.eye(nd)
    Hhat = level.mass_vec @ Hc
    del Hc
    return 0.5 * (Hhat + Hhat.T)


class PreconditionerHierarchy:
    """Multilevel T^-1 built around a fine-level Hessian context.

    Coarse controls are the successive L2 projections of the fine control;
    coarse targets are projected the same way.  A Hessian context (one
    nonlinear solve plus one LU) is set up on every level below the finest.
    The dense base factorization is built lazily on first application.
    """

    def __init__(self, hierarchy: MeshHierarchy, fine_ctx: HessianContext,
                 cycle="two_grid"):
        if cycle not in ("two_grid", "w_cycle"):
            raise ValueError(f"unknown cycle type {cycle!r}")
        if hierarchy.levels[-1].n != fine_ctx.level.n:
            raise ValueError("fine context level does not match hierarchy")
        self.hierarchy = hierarchy
        self.fine_ctx = fine_ctx
        self.cycle = cycle
        self.beta = fine_ctx.params.beta
        if len(hierarchy) == 1:
            # degenerate: T is the fine Hessian itself, applied densely
            self.contexts = [fine_ctx]
            self._base_cho = None
            self.positive_definite = True
            return
        self.contexts = [None] * (len(hierarchy) - 1)

        u = fine_ctx.u
        yd = fine_ctx.targets.yd
        pd = fine_ctx.targets.pd
        for k in range(len(hierarchy) - 2, -1, -1):
            tr = hierarchy.transfers[k]
            u = tr.project(u)
            yd = tr.project(yd)
            if pd is not None:
                pd = tr.project_q1(pd)
            self.contexts[k] = reduced.make_context(
                fine_ctx.params, hierarchy.levels[k], u,
                TargetData(yd=yd, pd=None if pd is None else pd))
        self._base_cho = None
        self.positive_definite = True

    # -- base level -------------------------------------------------------

    def _base_factorization(self):
        if self._base_cho is None:
            Hhat = _dense_base_hessian(self.contexts[0])
            try:
                self._base_cho = sla.cho_factor(Hhat)
            except sla.LinAlgError as exc:
                self.positive_definite = False
                raise NotPositiveDefinite(str(exc)) from exc
        return self._base_cho

    def _base_solve(self, b):
        cho = self._base_factorization()
        level = self.hierarchy.levels[0]
        return sla.cho_solve(cho, level.mass_vec @ b)

    # -- recursive application -------------------------------------------

    def _coarse_hessian_solve(self, k, b):
        """Approximate H_k^-1 b for a level k below the finest."""
        if k == 0:
            return self._base_solve(b)
        if self.cycle == "two_grid":
            return self._apply_level(k, b)
        ctx = self.contexts[k]
        level = self.hierarchy.levels[k]
        x, _ = krylov.pcg(ctx.apply, b, level.inner_vec,
                          apply_prec=lambda r: self._apply_level(k, r),
                          tol=0.0, maxit=W_CYCLE_INNER_ITERS)
        return x

    def _apply_level(self, k, b):
        """T_k^-1 b where T_k uses levels k-1, ..., 0 below it."""
        tr = self.hierarchy.transfers[k - 1]
        bc = tr.project(b)
        smooth = tr.prolong(bc)
        xc = self._coarse_hessian_solve(k - 1, bc)
        return tr.prolong(xc) + (b - smooth) / self.beta

    def apply_inverse(self, b):
        """Apply T^-1 on the finest level."""
        if len(self.hierarchy) == 1:
            return self._base_solve(np.asarray(b, float))
        return self._apply_level(len(self.hierarchy) - 1, np.asarray(b, float))

    def apply_forward(self, b):
        """Apply the two-grid operator T itself (exact coarse Hessian).

        Used by the approximation studies; unlike apply_inverse this runs
        the next-to-finest Hessian, not its multilevel approximation.
        """
        k = len(self.hierarchy) - 1
        if k == 0:
            return self.fine_ctx.apply(np.asarray(b, float))
        tr = self.hierarchy.transfers[k - 1]
        b = np.asarray(b, float)
        bc = tr.project(b)
        smooth = tr.prolong(bc)
        return tr.prolong(self.contexts[k - 1].apply(bc)) \
            + self.beta * (b - smooth)


def build_preconditioner(hierarchy, fine_ctx, cycle="two_grid"):
    return PreconditionerHierarchy(hierarchy, fine_ctx, cycle=cycle)


def operator_difference_norm(prec: PreconditionerHierarchy, iters=30,
                             tol=1e-4, seed=0):
    """L2 operator norm of H - T on the finest level by power iteration.

    H - T is self-adjoint in the L2 inner product of the control space, so
    power iteration on it converges to the largest eigenvalue magnitude,
    which equals the norm.  This is the quantity whose decay under mesh
    refinement certifies the approximation order of the preconditioner.
    """
    ctx = prec.fine_ctx
    level = ctx.level

    def apply_diff(v):
        return ctx.apply(v) - prec.apply_forward(v)

    return krylov.power_iteration_symmetric(
        apply_diff, level.inner_vec, 2 * level.nq2s, iters=iters, tol=tol,
        seed=seed)
