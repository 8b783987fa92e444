"""Shape functions, quadrature, and finite element assembly.

Everything lives on uniform tensor-product grids of the unit square, with
continuous biquadratic (Q2) velocities/controls and continuous bilinear (Q1)
pressures.  The tensor structure is exploited hard: mass, stiffness and
divergence matrices are Kronecker products of 1D finite element matrices,
which makes them exact and cheap.  Only the convection terms, which carry a
spatially varying coefficient field, are assembled cell by cell.

Scalar Q2 fields are stored as coefficient vectors of length (2n+1)^2 in
lexicographic node order (x fastest).  Vector fields are component-major:
``v = [v_x; v_y]`` of length 2*(2n+1)^2.

The skew-symmetrized convection form used throughout is

    ctilde(y; phi, psi) = 0.5 * [ ((y.grad)phi, psi) - ((y.grad)psi, phi) ].

Its integrand reaches tensor degree 6 per direction for biquadratic
arguments, so the default Gauss rule uses 4 points per direction (exact
through degree 7).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

QUAD_ORDER = 4


# ---------------------------------------------------------------------------
# 1D shape functions on the reference interval [0, 1]
# ---------------------------------------------------------------------------

def q2_basis_1d(x):
    """Quadratic Lagrange basis at nodes {0, 1/2, 1}, shape (len(x), 3)."""
    x = np.asarray(x, dtype=float)
    return np.stack([(1.0 - x) * (1.0 - 2.0 * x),
                     4.0 * x * (1.0 - x),
                     x * (2.0 * x - 1.0)], axis=-1)


def q2_dbasis_1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([4.0 * x - 3.0,
                     4.0 - 8.0 * x,
                     4.0 * x - 1.0], axis=-1)


def q1_basis_1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([1.0 - x, x], axis=-1)


def q1_dbasis_1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([-np.ones_like(x), np.ones_like(x)], axis=-1)


def gauss_01(npts):
    """Gauss-Legendre rule transplanted to [0, 1]."""
    p, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (p + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# 1D finite element matrices (n cells on [0, 1], h = 1/n)
# ---------------------------------------------------------------------------

def fe1d_matrices(n, order=QUAD_ORDER):
    """Assemble the 1D FE matrices used as Kronecker factors.

    Returns a dict with CSR matrices:
      m2   : Q2 mass, (2n+1) x (2n+1)
      k2   : Q2 stiffness, (2n+1) x (2n+1)
      m1   : Q1 mass, (n+1) x (n+1)
      m21  : mixed mass  int b_a l_i,    (n+1) x (2n+1)
      g21  : mixed grad  int b_a l_i',   (n+1) x (2n+1)
    """
    h = 1.0 / n
    x, w = gauss_01(order)
    l, dl = q2_basis_1d(x), q2_dbasis_1d(x)
    b, db = q1_basis_1d(x), q1_dbasis_1d(x)

    m2e = h * np.einsum("q,qi,qj->ij", w, l, l)
    k2e = (1.0 / h) * np.einsum("q,qi,qj->ij", w, dl, dl)
    m1e = h * np.einsum("q,qa,qb->ab", w, b, b)
    m21e = h * np.einsum("q,qa,qi->ai", w, b, l)
    g21e = np.einsum("q,qa,qi->ai", w, b, dl)  # h * (1/h)

    c = np.arange(n)
    q2_idx = 2 * c[:, None] + np.arange(3)[None, :]   # (n, 3)
    q1_idx = c[:, None] + np.arange(2)[None, :]       # (n, 2)

    def scatter(elem, rows_loc, cols_loc, shape):
        nr, nc_ = elem.shape
        rows = np.repeat(rows_loc, nc_, axis=1).ravel()
        cols = np.tile(cols_loc, (1, nr)).ravel()
        vals = np.tile(elem.ravel(), n)
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()

    return {
        "m2": scatter(m2e, q2_idx, q2_idx, (2 * n + 1, 2 * n + 1)),
        "k2": scatter(k2e, q2_idx, q2_idx, (2 * n + 1, 2 * n + 1)),
        "m1": scatter(m1e, q1_idx, q1_idx, (n + 1, n + 1)),
        "m21": scatter(m21e, q1_idx, q2_idx, (n + 1, 2 * n + 1)),
        "g21": scatter(g21e, q1_idx, q2_idx, (n + 1, 2 * n + 1)),
    }


def prolong_1d(n):
    """1D Q2 prolongation from n cells to 2n cells (exact nested interpolation)."""
    xs = np.array([0.0, 0.25, 0.5, 0.75])
    vals = q2_basis_1d(xs)                      # (4, 3)
    rows, cols, data = [], [], []
    for c in range(n):
        for k in range(4):
            r = 4 * c + k
            for i in range(3):
                rows.append(r)
                cols.append(2 * c + i)
                data.append(vals[k, i])
    # right endpoint of the domain
    rows += [4 * n] * 1
    cols += [2 * n]
    data += [1.0]
    return sp.coo_matrix((data, (rows, cols)),
                         shape=(4 * n + 1, 2 * n + 1)).tocsr()


# ---------------------------------------------------------------------------
# 2D reference-cell tables
# ---------------------------------------------------------------------------

class CellTables:
    """Tensor Gauss quadrature and basis tables on the reference cell [0,1]^2.

    Local Q2 node ordering is jy*3 + jx, local Q1 ordering jy*2 + jx,
    matching the lexicographic global numbering.
    """

    def __init__(self, order=QUAD_ORDER):
        x1, w1 = gauss_01(order)
        qx, qy = np.meshgrid(x1, x1, indexing="xy")
        self.order = order
        self.qx = qx.ravel()
        self.qy = qy.ravel()
        self.w = np.outer(w1, w1).ravel()       # (nq,), weight at (qx, qy)
        self.nq = self.w.size

        lx, ly = q2_basis_1d(self.qx), q2_basis_1d(self.qy)
        dlx, dly = q2_dbasis_1d(self.qx), q2_dbasis_1d(self.qy)
        self.phi = np.einsum("qj,qi->qji", ly, lx).reshape(self.nq, 9)
        self.dphi_x = np.einsum("qj,qi->qji", ly, dlx).reshape(self.nq, 9)
        self.dphi_y = np.einsum("qj,qi->qji", dly, lx).reshape(self.nq, 9)

        bx, by = q1_basis_1d(self.qx), q1_basis_1d(self.qy)
        self.psi = np.einsum("qj,qi->qji", by, bx).reshape(self.nq, 4)


_TABLE_CACHE: dict[int, CellTables] = {}


def cell_tables(order=QUAD_ORDER):
    if order not in _TABLE_CACHE:
        _TABLE_CACHE[order] = CellTables(order)
    return _TABLE_CACHE[order]


# ---------------------------------------------------------------------------
# Cell-wise field evaluation helpers
# ---------------------------------------------------------------------------

def _components(level, v):
    ns = level.nq2s
    v = np.asarray(v)
    return v[:ns], v[ns:]


def _values_at_qp(level, comp, tab):
    """Values of a scalar Q2 coefficient array at all cell quadrature points."""
    return comp[level.cells_q2] @ tab.phi.T     # (nc, nq)


def _grads_at_qp(level, comp, tab):
    gx = (comp[level.cells_q2] @ tab.dphi_x.T) / level.h
    gy = (comp[level.cells_q2] @ tab.dphi_y.T) / level.h
    return gx, gy


# ---------------------------------------------------------------------------
# Convection assembly
# ---------------------------------------------------------------------------

def assemble_convection(level, y, order=QUAD_ORDER):
    """Assemble the two linearization slots of the skew convection form.

    For a Q2 vector field y returns sparse matrices (N1, N2) on the full
    vector space with

      N1[psi, phi] = ctilde(y; phi, psi)     (advection slot),
      N2[psi, phi] = ctilde(phi; y, psi)     (reaction slot).

    N1 is skew-symmetric by construction.  Both are exact under the default
    quadrature.
    """
    tab = cell_tables(order)
    ns = level.nq2s
    h = level.h
    cells = level.cells_q2
    nc = cells.shape[0]
    yx, yy = _components(level, y)

    u1 = _values_at_qp(level, yx, tab)          # (nc, nq)
    u2 = _values_at_qp(level, yy, tab)
    du1x, du1y = _grads_at_qp(level, yx, tab)
    du2x, du2y = _grads_at_qp(level, yy, tab)

    w = tab.w * h * h
    gx = tab.dphi_x / h                         # (nq, 9) physical gradients
    gy = tab.dphi_y / h
    phi = tab.phi

    # advection slot: C[c,i,j] = sum_q w (u1 gx_j + u2 gy_j) phi_i
    adv = u1[:, :, None] * gx[None, :, :] + u2[:, :, None] * gy[None, :, :]
    C = np.einsum("q,qi,cqj->cij", w, phi, adv, optimize=True)
    E1 = 0.5 * (C - C.transpose(0, 2, 1))

    rows_loc = np.broadcast_to(cells[:, :, None], (nc, 9, 9))
    cols_loc = np.broadcast_to(cells[:, None, :], (nc, 9, 9))

    def scatter(E, ro, co):
        return sp.coo_matrix(
            (E.ravel(), ((rows_loc + ro * ns).ravel(),
                         (cols_loc + co * ns).ravel())),
            shape=(2 * ns, 2 * ns))

    N1 = (scatter(E1, 0, 0) + scatter(E1, 1, 1)).tocsr()

    # reaction slot, blocks (ci, cj):
    #   0.5 * int phi_j * ( d(y_ci)/d(x_cj) * phi_i  -  d(phi_i)/d(x_cj) * y_ci )
    yv = (u1, u2)
    dy = ((du1x, du1y), (du2x, du2y))
    g = (gx, gy)
    N2 = sp.coo_matrix((2 * ns, 2 * ns))
    for ci in range(2):
        for cj in range(2):
            t1 = np.einsum("q,qj,cq,qi->cij", w, phi, dy[ci][cj], phi,
                           optimize=True)
            t2 = np.einsum("q,qj,qi,cq->cij", w, phi, g[cj], yv[ci],
                           optimize=True)
            N2 = N2 + scatter(0.5 * (t1 - t2), ci, cj)
    return N1, N2.tocsr()


def apply_trilinear(level, y, phi, psi, order=QUAD_ORDER):
    """Evaluate ctilde(y; phi, psi) directly by quadrature (no matrices)."""
    tab = cell_tables(order)
    h = level.h
    w = tab.w * h * h

    def vec_data(v):
        a, b = _components(level, v)
        return ((_values_at_qp(level, a, tab), _values_at_qp(level, b, tab)),
                (_grads_at_qp(level, a, tab), _grads_at_qp(level, b, tab)))

    (y1, y2), _ = vec_data(y)
    (p1, p2), ((p1x, p1y), (p2x, p2y)) = vec_data(phi)
    (s1, s2), ((s1x, s1y), (s2x, s2y)) = vec_data(psi)

    # c(y; phi, psi) = int (y . grad phi_c) psi_c summed over components c
    c_fp = np.einsum("q,cq->", w, y1 * p1x * s1 + y2 * p1y * s1
                     + y1 * p2x * s2 + y2 * p2y * s2)
    c_pf = np.einsum("q,cq->", w, y1 * s1x * p1 + y2 * s1y * p1
                     + y1 * s2x * p2 + y2 * s2y * p2)
    return 0.5 * (c_fp - c_pf)


# ---------------------------------------------------------------------------
# Load vectors and interpolation
# ---------------------------------------------------------------------------

def assemble_vector_load(level, fx, fy, order=6):
    """Dual vector of phi -> int f . phi for callables fx(x,y), fy(x,y).

    A higher-order rule is used since f is generally not polynomial.
    """
    tab = cell_tables(order)
    h = level.h
    cx = level.cell_origin_x[:, None] + tab.qx[None, :] * h   # (nc, nq)
    cy = level.cell_origin_y[:, None] + tab.qy[None, :] * h
    w = tab.w * h * h
    out = np.zeros(2 * level.nq2s)
    for comp, f in enumerate((fx, fy)):
        fv = f(cx, cy)                                        # (nc, nq)
        E = np.einsum("q,cq,qi->ci", w, np.asarray(fv, dtype=float), tab.phi)
        np.add.at(out, level.cells_q2 + comp * level.nq2s, E)
    return out


def interpolate_q2(level, fx, fy):
    """Nodal Q2 interpolant of a vector field given by callables."""
    x, y = level.q2_x, level.q2_y
    return np.concatenate([np.asarray(fx(x, y), dtype=float),
                           np.asarray(fy(x, y), dtype=float)])


def interpolate_q1(level, f):
    return np.asarray(f(level.q1_x, level.q1_y), dtype=float)


# ---------------------------------------------------------------------------
# Point evaluation (arbitrary points)
# ---------------------------------------------------------------------------

def evaluate_q2_scalar(level, coeffs, x, y):
    """Evaluate a scalar Q2 field at arbitrary points of the unit square."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n, h = level.n, level.h
    cx = np.minimum((x / h).astype(int), n - 1)
    cy = np.minimum((y / h).astype(int), n - 1)
    xi = x / h - cx
    eta = y / h - cy
    lx = q2_basis_1d(xi)                        # (m, 3)
    ly = q2_basis_1d(eta)
    nx = 2 * n + 1
    base = (2 * cy)[:, None, None] * nx + (2 * cx)[:, None, None]
    loc = np.arange(3)[None, :, None] * nx + np.arange(3)[None, None, :]
    vals = coeffs[base + loc]                   # (m, 3, 3) [jy, jx]
    return np.einsum("mji,mj,mi->m", vals, ly, lx)


def evaluate_q2_vector(level, v, x, y):
    a, b = _components(level, v)
    return np.stack([evaluate_q2_scalar(level, a, x, y),
                     evaluate_q2_scalar(level, b, x, y)], axis=-1)


def evaluate_q1_at_q2_nodes(level, p):
    """Bilinear interpolation of a Q1 field onto the Q2 node lattice."""
    n = level.n
    grid = p.reshape(n + 1, n + 1)              # [jy, jx]
    t = np.linspace(0.0, 1.0, 2 * n + 1)
    ix = np.minimum((t * n).astype(int), n - 1)
    s = t * n - ix
    row = grid[:, ix] * (1 - s) + grid[:, ix + 1] * s        # (n+1, 2n+1)
    out = row[ix, :] * (1 - s)[:, None] + row[ix + 1, :] * s[:, None]
    return out.ravel()


# ---------------------------------------------------------------------------
# Error norms against smooth exact fields
# ---------------------------------------------------------------------------

def velocity_error_norms(level, y, exact, exact_grad, order=6):
    """(L2, H1-seminorm) error of a Q2 vector field vs. callables.

    exact(x, y) -> (ux, uy); exact_grad(x, y) -> ((uxx, uxy), (uyx, uyy))
    where uxy = d(ux)/dy etc., each shaped like x.
    """
    tab = cell_tables(order)
    h = level.h
    px = level.cell_origin_x[:, None] + tab.qx[None, :] * h
    py = level.cell_origin_y[:, None] + tab.qy[None, :] * h
    w = tab.w * h * h
    a, b = _components(level, y)
    u1 = _values_at_qp(level, a, tab)
    u2 = _values_at_qp(level, b, tab)
    du1x, du1y = _grads_at_qp(level, a, tab)
    du2x, du2y = _grads_at_qp(level, b, tab)

    ex1, ex2 = exact(px, py)
    (e1x, e1y), (e2x, e2y) = exact_grad(px, py)
    l2 = np.einsum("q,cq->", w, (u1 - ex1) ** 2 + (u2 - ex2) ** 2)
    h1 = np.einsum("q,cq->", w, (du1x - e1x) ** 2 + (du1y - e1y) ** 2
                   + (du2x - e2x) ** 2 + (du2y - e2y) ** 2)
    return np.sqrt(l2), np.sqrt(h1)


def pressure_error_norm(level, p, exact, order=6):
    """L2 error of a Q1 field vs. a callable, with mean-matching.

    The discrete pressure is only determined up to its zero-mean
    normalization, so the exact field is shifted to zero mean as well.
    """
    tab = cell_tables(order)
    h = level.h
    px = level.cell_origin_x[:, None] + tab.qx[None, :] * h
    py = level.cell_origin_y[:, None] + tab.qy[None, :] * h
    w = tab.w * h * h
    vals = p[level.cells_q1] @ tab.psi.T
    vals = vals - np.einsum("q,cq->", w, vals)  # |Omega| = 1
    ex = np.asarray(exact(px, py), dtype=float)
    ex = ex - np.einsum("q,cq->", w, ex)
    return np.sqrt(np.einsum("q,cq->", w, (vals - ex) ** 2))
