"""Prolongation operators between multigrid levels.

All transfers are nodal: the entry (fine node i, coarse basis j) is the
coarse basis function evaluated at the fine node's location. Because every
coarse space here is a subspace of its fine partner (nested meshes, nested
degrees, continuous inside discontinuous), this evaluation is an exact
injection and no mass-matrix solves are needed. Restriction is the
transpose.

Dirichlet filtering is deliberately a separate step from construction: the
raw operators satisfy the partition-of-unity row-sum property, and the
multigrid hierarchy zeroes eliminated rows/columns afterwards.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "build_h_prolongation",
    "build_p_prolongation",
    "build_monolithic_transfer",
    "filter_dirichlet",
]

DROP_TOL = 1e-14


def _expand_components(P, components):
    """Scalar transfer -> per-node block transfer with interleaved
    components."""
    if components == 1:
        return P
    return sp.kron(P, sp.eye(components), format="csr")


def _scalar_rows(space):
    return space.num_scalar_dofs


def _inverse_map(mesh, cell, points):
    """Physical points -> reference coordinates of `cell`."""
    tri = mesh.vertices[mesh.cells[cell]]
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    return np.linalg.solve(J, (points - tri[0]).T).T


def build_h_prolongation(coarse, fine):
    """Transfer between the same space family on a mesh and its refinement.

    Requires fine.mesh to be the direct refinement (quadrisection or
    barycentric) of coarse.mesh, with matching degree/continuity/components.
    """
    if fine.mesh.parent is not coarse.mesh:
        raise ValueError("meshes are not nested (fine is not a refinement "
                         "of coarse)")
    if (coarse.k, coarse.continuity, coarse.components) != \
            (fine.k, fine.continuity, fine.components):
        raise ValueError("h-transfer requires matching degree, continuity, "
                         "and components")
    rows, cols, vals = [], [], []
    visited = np.zeros(_scalar_rows(fine), dtype=bool)
    coarse_elem = coarse.element
    for t in range(fine.mesh.num_cells):
        fdofs = fine.cell_scalar_dofs[t]
        todo = ~visited[fdofs]
        if not todo.any():
            continue
        parent = int(fine.mesh.parent_cell[t])
        pts = fine.dof_coords[fdofs[todo]]
        ref = _inverse_map(coarse.mesh, parent, pts)
        values, _ = coarse_elem.tabulate(ref)
        cdofs = coarse.cell_scalar_dofs[parent]
        for local, g in enumerate(fdofs[todo]):
            keep = np.abs(values[local]) > DROP_TOL
            rows.extend([g] * int(keep.sum()))
            cols.extend(cdofs[keep])
            vals.extend(values[local][keep])
        visited[fdofs[todo]] = True
    P = sp.coo_matrix(
        (vals, (rows, cols)),
        shape=(_scalar_rows(fine), _scalar_rows(coarse)),
    ).tocsr()
    return _expand_components(P, fine.components)


def build_p_prolongation(low, high):
    """Transfer between degrees on one mesh.

    `low` must be continuous with smaller degree; `high` is either continuous
    or discontinuous (the latter embeds the continuous coarse pressure into a
    discontinuous fine pressure, and is the one case where equal degrees are
    meaningful).
    """
    if low.mesh is not high.mesh:
        raise ValueError("p-transfer requires a shared mesh")
    if low.k > high.k or (low.k == high.k
                          and low.continuity == high.continuity):
        raise ValueError(f"p-transfer needs low degree < high degree "
                         f"(got {low.k} >= {high.k})")
    if low.continuity != "continuous":
        raise ValueError("p-transfer source space must be continuous")
    if low.components != high.components:
        raise ValueError("component mismatch")
    values, _ = low.element.tabulate(high.element.nodes)
    rows, cols, vals = [], [], []
    visited = np.zeros(_scalar_rows(high), dtype=bool)
    for t in range(high.mesh.num_cells):
        hdofs = high.cell_scalar_dofs[t]
        ldofs = low.cell_scalar_dofs[t]
        for local, g in enumerate(hdofs):
            if visited[g]:
                continue
            visited[g] = True
            keep = np.abs(values[local]) > DROP_TOL
            rows.extend([g] * int(keep.sum()))
            cols.extend(ldofs[keep])
            vals.extend(values[local][keep])
    P = sp.coo_matrix(
        (vals, (rows, cols)),
        shape=(_scalar_rows(high), _scalar_rows(low)),
    ).tocsr()
    return _expand_components(P, high.components)


def build_monolithic_transfer(P_vel, P_pres):
    """Block-diagonal arrangement matching [velocity; pressure] ordering."""
    return sp.block_diag([P_vel, P_pres], format="csr")


def filter_dirichlet(P, fine_dirichlet, coarse_dirichlet):
    """Zero rows of eliminated fine DoFs and columns of eliminated coarse
    DoFs.

    Row zeroing keeps prolonged corrections inside the homogeneous space;
    column zeroing keeps restricted residuals from exciting coarse DoFs whose
    equations were replaced by the identity.
    """
    P = P.tocsr(copy=True)
    fine_dirichlet = np.asarray(fine_dirichlet, dtype=np.int64)
    coarse_dirichlet = np.asarray(coarse_dirichlet, dtype=np.int64)
    for r in fine_dirichlet:
        P.data[P.indptr[r]: P.indptr[r + 1]] = 0.0
    if len(coarse_dirichlet):
        P.data[np.isin(P.indices, coarse_dirichlet)] = 0.0
    P.eliminate_zeros()
    return P
