"""Krylov methods in a user-supplied (mass matrix) inner product.

All routines take the operator and preconditioner as callables and never
form matrices, since one Hessian application costs two sparse backsolves.
The inner product is the discrete L2 product of the control space; working
in it (rather than the Euclidean one) is what makes iteration counts mesh
independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class Breakdown(RuntimeError):
    """CG or Lanczos encountered a nonpositive curvature or inner product."""


@dataclass
class KrylovReport:
    iterations: int
    converged: bool
    breakdown: bool = False
    resnorms: list = field(default_factory=list)


def pcg(apply_op, b, inner, apply_prec=None, tol=1e-8, maxit=200, x0=None,
        raise_on_breakdown=False):
    """Preconditioned conjugate gradients in the given inner product.

    apply_op and apply_prec are callables; apply_prec applies the inverse
    of the preconditioner.  Stops when the preconditioned residual norm
    sqrt((r, M^-1 r)) drops below tol relative to its initial value.
    Nonpositive curvature or a nonpositive preconditioned product marks a
    breakdown: the current iterate is returned with the flag set (or
    Breakdown is raised on request).
    """
    b = np.asarray(b, dtype=float)
    if apply_prec is None:
        apply_prec = lambda r: r
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - apply_op(x)
    z = apply_prec(r)
    rz = inner(r, z)
    if rz < 0:
        if raise_on_breakdown:
            raise Breakdown("indefinite preconditioner")
        return x, KrylovReport(0, False, breakdown=True, resnorms=[])
    rn0 = np.sqrt(max(rz, 0.0))
    report = KrylovReport(0, False, resnorms=[rn0])
    if rn0 == 0.0:
        report.converged = True
        return x, report
    p = z
    for it in range(1, maxit + 1):
        Ap = apply_op(p)
        pAp = inner(p, Ap)
        if pAp <= 0:
            report.breakdown = True
            if raise_on_breakdown:
                raise Breakdown(f"nonpositive curvature at iteration {it}")
            return x, report
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        z = apply_prec(r)
        rz_new = inner(r, z)
        rn = np.sqrt(abs(rz_new))
        report.iterations = it
        report.resnorms.append(rn)
        if rz_new < 0:
            report.breakdown = True
            if raise_on_breakdown:
                raise Breakdown(f"indefinite preconditioner at iteration {it}")
            return x, report
        if rn <= tol * rn0:
            report.converged = True
            return x, report
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, report


def lanczos_spectral_distance(apply_op, apply_prec_inv, b, inner, k=40,
                              tol=1e-10, return_ritz=False):
    """Spectral distance of the pencil (H, T) estimated by Lanczos.

    Runs the Lanczos iteration for T^-1 H in the T-inner product
    (a, b)_T = (T a, b), where T is the preconditioner and H the operator,
    using only applications of H and T^-1.  The trick is to carry the pairs
    (q, Tq): for q0 = T^-1 b we know Tq0 = b, and for each new direction
    v = T^-1 w the product Tv is recovered from w and the stored pairs
    during reorthogonalization, so T itself is never applied.

    Returns max(|ln lambda_min|, |ln lambda_max|) over the Ritz values of
    T^-1 H, the multiplicative measure of how far T is from H; with
    return_ritz=True, returns (distance, sorted Ritz values) instead.
    """
    b = np.asarray(b, dtype=float)
    q = apply_prec_inv(b)
    tq = b.copy()
    nrm2 = inner(tq, q)
    if nrm2 <= 0:
        raise Breakdown("nonpositive T-norm of the starting vector")
    nrm = np.sqrt(nrm2)
    Q = [q / nrm]
    TQ = [tq / nrm]
    alphas, betas = [], []
    for j in range(k):
        w = apply_op(Q[j])                      # w = T (T^-1 H q_j)
        alpha = inner(w, Q[j])
        alphas.append(alpha)
        # w minus its T-projection on the previous basis, kept in Tq form
        w = w - alpha * TQ[j]
        if j > 0:
            w = w - betas[-1] * TQ[j - 1]
        # full reorthogonalization against all stored directions
        for i in range(len(Q)):
            w = w - inner(w, Q[i]) * TQ[i]
        v = apply_prec_inv(w)
        wv = inner(w, v)
        if wv < -tol * max(abs(alpha), 1.0):
            raise Breakdown("indefinite preconditioner in Lanczos")
        beta = np.sqrt(max(wv, 0.0))
        if beta <= tol * max(abs(alpha), 1.0):
            break
        betas.append(beta)
        Q.append(v / beta)
        TQ.append(w / beta)
    T = np.diag(alphas)
    if betas:
        off = np.array(betas[:len(alphas) - 1])
        T += np.diag(off, 1) + np.diag(off, -1)
    ritz = np.sort(sla.eigvalsh(T))
    if ritz[0] <= 0:
        raise Breakdown("nonpositive Ritz value, pencil not SPD")
    dist = float(np.max(np.abs(np.log(ritz))))
    return (dist, ritz) if return_ritz else dist


def power_iteration_symmetric(apply_op, inner, n, iters=30, tol=1e-4,
                              seed=0):
    """Operator norm of a self-adjoint operator by power iteration.

    Self-adjointness is with respect to the given inner product.  Stops
    early once the Rayleigh-quotient estimate changes by less than tol
    relative per step.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.sqrt(inner(v, v))
    est = 0.0
    for _ in range(iters):
        w = apply_op(v)
        nw = np.sqrt(max(inner(w, w), 0.0))
        if nw == 0.0:
            return 0.0
        new_est = nw
        v = w / nw
        if est > 0 and abs(new_est - est) <= tol * est:
            return new_est
        est = new_est
    return est
