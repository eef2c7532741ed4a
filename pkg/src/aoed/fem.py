"""Linear finite element operators on triangle meshes.

Assembles the mass and stiffness matrices for piecewise-linear elements
with natural (no-flux) boundary conditions, plus the advection matrix for
a nodal velocity field.  All element integrals are exact for linears.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, FactorizationError

# reference element mass matrix scaled by area
_MASS_PATTERN = np.array(
    [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]
) / 12.0


def _gradients(mesh):
    """Per-triangle areas and constant basis gradients.

    Returns
    -------
    areas : (m,) array
    gx, gy : (m, 3) arrays, d(phi_i)/dx and d(phi_i)/dy on each triangle
    """
    p = mesh.nodes[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (
        y[:, 1] - y[:, 0]
    )
    bad = np.flatnonzero(np.abs(det) < 1e-14)
    if bad.size:
        raise AssemblyError(f"triangle {int(bad[0])} is degenerate (|det|<1e-14)")
    neg = np.flatnonzero(det < 0)
    if neg.size:
        raise AssemblyError(f"triangle {int(neg[0])} has negative orientation")
    areas = 0.5 * det
    gx = np.stack(
        [y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1
    ) / det[:, None]
    gy = np.stack(
        [x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1
    ) / det[:, None]
    return areas, gx, gy


def _scatter(mesh, local):
    """Sum (m, 3, 3) element blocks into a CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    )
    return mat.tocsr()


@dataclass
class FemOperators:
    """Assembled operators for one mesh.

    M is the consistent mass matrix, K the stiffness matrix (pure Neumann,
    so constants are in its kernel) and lumped is the row-sum mass vector.
    """

    M: sp.csr_matrix
    K: sp.csr_matrix
    lumped: np.ndarray
    _mass_solve: object = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.M.shape[0]

    def inner(self, u, v):
        """Mass-weighted inner product; the discrete L2 pairing."""
        return float(u @ (self.M @ v))

    def norm(self, u):
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def mass_solve(self, b):
        """Solve M x = b, factorizing once on first use."""
        if self._mass_solve is None:
            try:
                self._mass_solve = spla.factorized(self.M.tocsc())
            except RuntimeError as exc:
                raise FactorizationError(f"mass matrix factorization failed: {exc}")
        if b.ndim == 1:
            return self._mass_solve(b)
        return np.column_stack([self._mass_solve(col) for col in b.T])


def assemble(mesh):
    """Assemble mass and stiffness matrices for a mesh.

    Parameters
    ----------
    mesh : Mesh

    Returns
    -------
    FemOperators
    """
    areas, gx, gy = _gradients(mesh)
    m_loc = areas[:, None, None] * _MASS_PATTERN[None, :, :]
    k_loc = areas[:, None, None] * (
        gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :]
    )
    M = _scatter(mesh, m_loc)
    K = _scatter(mesh, k_loc)
    lumped = np.asarray(M.sum(axis=1)).ravel()
    return FemOperators(M=M, K=K, lumped=lumped)


def advection_matrix(mesh, velocity_nodes):
    """Assemble C[i,j] = integral of phi_i * (v . grad phi_j).

    The velocity is the nodal interpolant of ``velocity_nodes``; the
    product integrals are quadratic and evaluated exactly.

    Parameters
    ----------
    mesh : Mesh
    velocity_nodes : (n, 2) array

    Returns
    -------
    scipy.sparse.csr_matrix
    """
    v = np.asarray(velocity_nodes, dtype=float)
    if v.shape != (mesh.n_nodes, 2):
        raise AssemblyError(
            f"velocity shape {v.shape} does not match mesh with {mesh.n_nodes} nodes"
        )
    areas, gx, gy = _gradients(mesh)
    vx = v[mesh.triangles, 0]
    vy = v[mesh.triangles, 1]
    # integral phi_i phi_k = area/12 * (1 + delta_ik) couples test function i
    # with the linear velocity through weights w[i] = sum_k (1+delta) v_k
    wx = (vx.sum(axis=1)[:, None] + vx) / 12.0
    wy = (vy.sum(axis=1)[:, None] + vy) / 12.0
    c_loc = areas[:, None, None] * (
        wx[:, :, None] * gx[:, None, :] + wy[:, :, None] * gy[:, None, :]
    )
    return _scatter(mesh, c_loc)
