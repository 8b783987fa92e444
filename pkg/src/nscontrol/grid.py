"""Nested uniform quadrilateral mesh hierarchy with Q2/Q1 dof management.

Levels are indexed 0..levels-1 with n_l = n0 * 2^l cells per side and
h_l = 1/n_l.  Numbering of both Q2 and Q1 nodes is lexicographic by (x, y)
with x fastest, so results are bit-reproducible.  Each level carries the
state-independent assembled operators (mass, stiffness, divergence, mean
row); inter-level transfer is exact Q2 interpolation for prolongation and
the L2 projection (realized by a coarse mass solve) for restriction of
controls.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms


class Level:
    """One mesh level: geometry, dof maps and static operators."""

    def __init__(self, n):
        if n < 2:
            raise ValueError(
                f"need at least 2x2 cells for a usable Q2-Q1 pressure space, got n={n}")
        self.n = n
        self.h = 1.0 / n
        nx = 2 * n + 1
        self.nq2_1d = nx
        self.nq2s = nx * nx                  # scalar Q2 dofs
        self.nq1 = (n + 1) * (n + 1)

        t2 = np.linspace(0.0, 1.0, nx)
        X2, Y2 = np.meshgrid(t2, t2, indexing="xy")
        self.q2_x = X2.ravel()
        self.q2_y = Y2.ravel()
        t1 = np.linspace(0.0, 1.0, n + 1)
        X1, Y1 = np.meshgrid(t1, t1, indexing="xy")
        self.q1_x = X1.ravel()
        self.q1_y = Y1.ravel()

        self.boundary_mask = ((self.q2_x == 0.0) | (self.q2_x == 1.0)
                              | (self.q2_y == 0.0) | (self.q2_y == 1.0))
        self.interior = np.where(~self.boundary_mask)[0]
        self.boundary = np.where(self.boundary_mask)[0]

        # cell -> global dof maps (cells lexicographic, x fastest)
        cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        cx = cx.ravel()
        cy = cy.ravel()
        self.cell_origin_x = cx * self.h
        self.cell_origin_y = cy * self.h
        loc2 = np.arange(3)[None, :, None] * nx + np.arange(3)[None, None, :]
        self.cells_q2 = ((2 * cy)[:, None, None] * nx
                         + (2 * cx)[:, None, None] + loc2).reshape(-1, 9)
        loc1 = np.arange(2)[None, :, None] * (n + 1) + np.arange(2)[None, None, :]
        self.cells_q1 = (cy[:, None, None] * (n + 1)
                         + cx[:, None, None] + loc1).reshape(-1, 4)

        # static operators from 1D Kronecker factors (exact quadrature)
        f1 = forms.fe1d_matrices(n)
        m2, k2 = f1["m2"], f1["k2"]
        self.mass_q2 = sp.kron(m2, m2).tocsr()              # scalar Q2 mass
        self.stiff = (sp.kron(m2, k2) + sp.kron(k2, m2)).tocsr()
        self.mass_q1 = sp.kron(f1["m1"], f1["m1"]).tocsr()
        div_x = -sp.kron(f1["m21"], f1["g21"])
        div_y = -sp.kron(f1["g21"], f1["m21"])
        self.div = sp.hstack([div_x, div_y]).tocsr()        # (nq1, 2*nq2s)
        self.mean_q1 = np.asarray(self.mass_q1.sum(axis=1)).ravel()
        self.mass_vec = sp.block_diag([self.mass_q2, self.mass_q2]).tocsr()

        self._mass_q2_lu = None
        self._mass_q1_lu = None

    # -- mass solves -------------------------------------------------------

    def mass_q2_solve(self, b):
        if self._mass_q2_lu is None:
            self._mass_q2_lu = spla.splu(self.mass_q2.tocsc())
        return self._mass_q2_lu.solve(b)

    def mass_q1_solve(self, b):
        if self._mass_q1_lu is None:
            self._mass_q1_lu = spla.splu(self.mass_q1.tocsc())
        return self._mass_q1_lu.solve(b)

    # -- inner products ----------------------------------------------------

    def inner_vec(self, a, b):
        """L2 inner product of two Q2 vector coefficient arrays."""
        return float(a @ (self.mass_vec @ b))

    def norm_vec(self, a):
        return np.sqrt(max(self.inner_vec(a, a), 0.0))

    def inner_q1(self, a, b):
        return float(a @ (self.mass_q1 @ b))

    def zero_vector(self):
        return np.zeros(2 * self.nq2s)

    def __repr__(self):
        return f"Level(n={self.n})"


class TransferOps:
    """Transfer between an adjacent (coarse, fine) level pair."""

    def __init__(self, coarse: Level, fine: Level):
        assert fine.n == 2 * coarse.n
        self.coarse = coarse
        self.fine = fine
        p1 = forms.prolong_1d(coarse.n)
        self.P = sp.kron(p1, p1).tocsr()        # scalar Q2, coarse -> fine
        # 1D linear prolongation for the Q1 space: even fine nodes coincide
        # with coarse nodes, odd ones average their neighbors
        nc = coarse.n
        b1 = sp.lil_matrix((2 * nc + 1, nc + 1))
        for c in range(nc + 1):
            b1[2 * c, c] = 1.0
        for c in range(nc):
            b1[2 * c + 1, c] = 0.5
            b1[2 * c + 1, c + 1] = 0.5
        self.P1 = sp.kron(b1, b1).tocsr()       # Q1, coarse -> fine

    def prolong_scalar(self, c):
        return self.P @ c

    def prolong(self, c):
        ns = self.coarse.nq2s
        return np.concatenate([self.P @ c[:ns], self.P @ c[ns:]])

    def project(self, v):
        """L2 projection of a fine vector field onto the coarse Q2 space.

        Solves M_2h c = P^T M_h v componentwise; exact because the spaces
        are nested.
        """
        ns = self.fine.nq2s
        rhs_x = self.P.T @ (self.fine.mass_q2 @ v[:ns])
        rhs_y = self.P.T @ (self.fine.mass_q2 @ v[ns:])
        return np.concatenate([self.coarse.mass_q2_solve(rhs_x),
                               self.coarse.mass_q2_solve(rhs_y)])

    def project_q1(self, p):
        """L2 projection of a fine Q1 field onto the coarse Q1 space."""
        rhs = self.P1.T @ (self.fine.mass_q1 @ p)
        return self.coarse.mass_q1_solve(rhs)


class MeshHierarchy:
    """Nested levels plus transfer operators between adjacent pairs."""

    def __init__(self, n0, levels):
        if n0 < 2:
            raise ValueError(f"n0 must be >= 2, got {n0}")
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.n0 = n0
        self.levels = [Level(n0 * 2 ** l) for l in range(levels)]
        self.transfers = [TransferOps(self.levels[l], self.levels[l + 1])
                          for l in range(levels - 1)]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, l) -> Level:
        return self.levels[l]

    def sub(self, top):
        """Shallow sub-hierarchy sharing levels 0..top (inclusive)."""
        if top < 0 or top >= len(self.levels):
            raise IndexError(f"level {top} outside hierarchy")
        out = MeshHierarchy.__new__(MeshHierarchy)
        out.n0 = self.n0
        out.levels = self.levels[:top + 1]
        out.transfers = self.transfers[:top]
        return out

    def prolong_control(self, coarse_level, c):
        """Embed a control from level l into level l+1 (identical function)."""
        if coarse_level < 0 or coarse_level >= len(self.levels) - 1:
            raise IndexError(f"no transfer above level {coarse_level}")
        return self.transfers[coarse_level].prolong(c)

    def project_control(self, fine_level, v):
        """L2-project a control from level l down to level l-1."""
        if fine_level < 1 or fine_level >= len(self.levels):
            raise IndexError(f"no transfer below level {fine_level}")
        return self.transfers[fine_level - 1].project(v)


def build_hierarchy(n0, levels):
    return MeshHierarchy(n0, levels)
