"""Scalar and vector function spaces: global DoF numbering and queries.

Numbering is deterministic: vertex DoFs first (in vertex-id order), then edge
DoFs (edge-id order, nodes ordered along the edge from the lower global
vertex id to the higher), then cell-interior DoFs. Vector components are
interleaved per node, so velocity DoFs for scalar node g are (2g, 2g+1).
Discontinuous spaces number all nodes cell by cell.
"""

from __future__ import annotations

import numpy as np

from .reference import LOCAL_EDGES, _element_any_degree

__all__ = ["FunctionSpace", "build_space"]

CONTINUOUS = "continuous"
DISCONTINUOUS = "discontinuous"


class FunctionSpace:
    """Finite element space on a mesh; see :func:`build_space`."""

    def __init__(self, mesh, k, continuity, components, element,
                 cell_scalar_dofs, num_scalar_dofs, dof_coords):
        self.mesh = mesh
        self.k = k
        self.continuity = continuity
        self.components = components
        self.element = element
        self.cell_scalar_dofs = cell_scalar_dofs
        self.num_scalar_dofs = num_scalar_dofs
        self.num_dofs = components * num_scalar_dofs
        self.dof_coords = dof_coords
        self.cell_dofs = self.expand_components(cell_scalar_dofs)
        for arr in (self.cell_scalar_dofs, self.cell_dofs, self.dof_coords):
            arr.flags.writeable = False

    def expand_components(self, scalar_ids):
        """Interleave components: scalar id g -> components*g + c."""
        scalar_ids = np.asarray(scalar_ids, dtype=np.int64)
        out = (
            scalar_ids[..., None] * self.components
            + np.arange(self.components, dtype=np.int64)
        )
        return out.reshape(*scalar_ids.shape[:-1], -1) if scalar_ids.ndim > 1 \
            else out.ravel()

    # -- entity queries (used by patch construction and boundary handling) --

    def entity_scalar_dofs(self, kind, index):
        """Scalar DoF ids attached to one mesh entity.

        For discontinuous spaces only cells carry DoFs.
        """
        k = self.k
        if self.continuity == DISCONTINUOUS:
            if kind != "cell":
                return np.empty(0, dtype=np.int64)
            n = self.element.num_nodes
            return np.arange(index * n, (index + 1) * n, dtype=np.int64)
        if kind == "vertex":
            return np.array([index], dtype=np.int64)
        if kind == "edge":
            if k < 2:
                return np.empty(0, dtype=np.int64)
            base = self.mesh.num_vertices + index * (k - 1)
            return np.arange(base, base + k - 1, dtype=np.int64)
        if kind == "cell":
            n_int = (k - 1) * (k - 2) // 2
            if n_int == 0:
                return np.empty(0, dtype=np.int64)
            base = (
                self.mesh.num_vertices
                + self.mesh.num_edges * (k - 1)
                + index * n_int
            )
            return np.arange(base, base + n_int, dtype=np.int64)
        raise ValueError(f"unknown entity kind {kind!r}")

    def entity_set_scalar_dofs(self, entity_set):
        """Union of scalar DoFs over an EntitySet, sorted."""
        parts = (
            [self.entity_scalar_dofs("vertex", int(v)) for v in entity_set.vertices]
            + [self.entity_scalar_dofs("edge", int(e)) for e in entity_set.edges]
            + [self.entity_scalar_dofs("cell", int(c)) for c in entity_set.cells]
        )
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def boundary_scalar_dofs(self, markers=None):
        """Scalar DoFs on boundary edges (optionally restricted by marker)."""
        mesh = self.mesh
        dofs = []
        for e, marker in mesh.boundary_edge_markers.items():
            if markers is not None and marker not in markers:
                continue
            a, b = mesh.edges[e]
            dofs.append(self.entity_scalar_dofs("vertex", int(a)))
            dofs.append(self.entity_scalar_dofs("vertex", int(b)))
            dofs.append(self.entity_scalar_dofs("edge", e))
        if not dofs:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(dofs))

    def interpolate(self, f):
        """Nodal interpolation; f(x, y) returns a scalar or `components` values."""
        out = np.empty(self.num_dofs)
        for g, (x, y) in enumerate(self.dof_coords):
            val = np.asarray(f(x, y), dtype=np.float64).ravel()
            if val.size != self.components:
                raise ValueError(
                    f"function returned {val.size} components, expected "
                    f"{self.components}"
                )
            out[self.components * g: self.components * (g + 1)] = val
        return out


def build_space(mesh, k, continuity, components=1):
    """Lagrange space of degree k; continuity is "continuous" or
    "discontinuous"."""
    if continuity not in (CONTINUOUS, DISCONTINUOUS):
        raise ValueError(f"unknown continuity {continuity!r}")
    if continuity == CONTINUOUS and k < 1:
        raise ValueError("continuous spaces need k >= 1")
    if k < 0:
        raise ValueError("k must be non-negative")
    elem = _element_any_degree(k)
    n_local = elem.num_nodes
    T = mesh.num_cells

    if continuity == DISCONTINUOUS:
        cell_scalar = np.arange(T * n_local, dtype=np.int64).reshape(T, n_local)
        num_scalar = T * n_local
        coords = np.empty((num_scalar, 2))
        for t in range(T):
            coords[cell_scalar[t]] = _physical_nodes(mesh, t, elem)
        return FunctionSpace(mesh, k, continuity, components, elem,
                             cell_scalar, num_scalar, coords)

    V, E = mesh.num_vertices, mesh.num_edges
    n_edge = k - 1
    n_int = (k - 1) * (k - 2) // 2
    num_scalar = V + E * n_edge + T * n_int

    cell_scalar = np.empty((T, n_local), dtype=np.int64)
    for t in range(T):
        tri = mesh.cells[t]
        cell_scalar[t, elem.vertex_nodes] = tri
        for le, (i, j) in enumerate(LOCAL_EDGES):
            e = mesh.cell_edges[t, le]
            slots = np.arange(n_edge, dtype=np.int64)
            if tri[i] > tri[j]:
                slots = slots[::-1]
            cell_scalar[t, elem.edge_nodes[le]] = V + e * n_edge + slots
        base = V + E * n_edge + t * n_int
        cell_scalar[t, elem.interior_nodes] = base + np.arange(n_int)

    coords = np.empty((num_scalar, 2))
    for t in range(T):
        coords[cell_scalar[t]] = _physical_nodes(mesh, t, elem)
    return FunctionSpace(mesh, k, continuity, components, elem,
                         cell_scalar, num_scalar, coords)


def _physical_nodes(mesh, t, elem):
    tri = mesh.vertices[mesh.cells[t]]
    lam = elem.nodes_bary
    return lam @ tri
