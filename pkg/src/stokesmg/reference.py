"""Lagrange reference elements on the unit triangle.

Nodes are equispaced and grouped by the entity they sit on (vertex, edge,
interior), which is what patch construction and continuous DoF numbering key
off. The nodal basis is built through an orthonormal modal basis (Jacobi
polynomials on collapsed coordinates) rather than raw monomials; the
generalized Vandermonde matrix stays well conditioned up to degree 10, which
keeps the nodal property tight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi

__all__ = ["ReferenceElement", "build_reference_element"]

# Local edges in the cell-vertex order used by the mesh: (0,1), (0,2), (1,2).
LOCAL_EDGES = ((0, 1), (0, 2), (1, 2))

_VERTEX_XY = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _jacobi_norm(n, a, b):
    # L2 weight-norm^2 of the classical Jacobi polynomial P_n^{(a,b)}.
    num = math.gamma(n + a + 1) * math.gamma(n + b + 1)
    den = math.gamma(n + a + b + 1) * math.factorial(n)
    return 2.0 ** (a + b + 1) / (2 * n + a + b + 1) * num / den


def _jacobi_p(x, n, a, b):
    """Jacobi polynomial normalized to unit weighted L2 norm on [-1, 1]."""
    return eval_jacobi(n, a, b, x) / math.sqrt(_jacobi_norm(n, a, b))


def _grad_jacobi_p(x, n, a, b):
    if n == 0:
        return np.zeros_like(x)
    return math.sqrt(n * (n + a + b + 1)) * _jacobi_p(x, n - 1, a + 1, b + 1)


def _collapsed(xy):
    """Map (x, y) on the unit triangle to tensor coordinates (a, b) in [-1,1]^2.

    Uses r = 2x-1, s = 2y-1 and a = 2(1+r)/(1-s) - 1, with a := -1 at the
    singular vertex s = 1 so vertex evaluation stays exact.
    """
    r = 2.0 * xy[:, 0] - 1.0
    s = 2.0 * xy[:, 1] - 1.0
    a = np.full_like(r, -1.0)
    ok = s != 1.0
    a[ok] = 2.0 * (1.0 + r[ok]) / (1.0 - s[ok]) - 1.0
    return a, s


def _modal_basis(k, xy):
    """Orthonormal modal basis values and (x, y)-gradients at points xy.

    Returns (phi, dphi) with shapes (m, n) and (m, n, 2), n = (k+1)(k+2)/2.
    """
    xy = np.asarray(xy, dtype=np.float64)
    a, b = _collapsed(xy)
    n = (k + 1) * (k + 2) // 2
    phi = np.empty((len(xy), n))
    dphi = np.empty((len(xy), n, 2))
    col = 0
    for i in range(k + 1):
        fa = _jacobi_p(a, i, 0, 0)
        dfa = _grad_jacobi_p(a, i, 0, 0)
        half_1mb = 0.5 * (1.0 - b)
        for j in range(k + 1 - i):
            gb = _jacobi_p(b, j, 2 * i + 1, 0)
            dgb = _grad_jacobi_p(b, j, 2 * i + 1, 0)
            scale = math.sqrt(2.0) * 2.0 ** i
            phi[:, col] = scale * fa * gb * half_1mb ** i
            dr = dfa * gb
            if i > 0:
                dr = dr * half_1mb ** (i - 1)
            ds = dfa * (0.5 * (1.0 + a)) * gb
            if i > 0:
                ds = ds * half_1mb ** (i - 1)
            tmp = dgb * half_1mb ** i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * half_1mb ** (i - 1)
            ds = ds + fa * tmp
            # d/dx = 2 d/dr, d/dy = 2 d/ds under (r, s) = (2x-1, 2y-1).
            dphi[:, col, 0] = scale * 2.0 * dr
            dphi[:, col, 1] = scale * 2.0 * ds
            col += 1
    return phi, dphi


def _equispaced_nodes(k):
    """Node coordinates and entity tags, grouped vertices/edges/interior."""
    if k == 0:
        return np.array([[1 / 3, 1 / 3]]), [("cell", 0)]
    xy = []
    tags = []
    for v in range(3):
        xy.append(_VERTEX_XY[v])
        tags.append(("vertex", v))
    for le, (a, b) in enumerate(LOCAL_EDGES):
        pa, pb = _VERTEX_XY[a], _VERTEX_XY[b]
        for t in range(1, k):
            xy.append(pa + (pb - pa) * (t / k))
            tags.append(("edge", le))
    for j in range(1, k):
        for i in range(1, k - j):
            xy.append(np.array([i / k, j / k]))
            tags.append(("cell", 0))
    # interior loop above runs i+j <= k-1 with i,j >= 1
    return np.array(xy, dtype=np.float64), tags


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal Lagrange element of degree k on the unit triangle."""

    k: int
    nodes: np.ndarray          # (n, 2) reference coordinates
    nodes_bary: np.ndarray     # (n, 3) barycentric coordinates
    node_entity: tuple         # per node: ("vertex"|"edge"|"cell", local index)
    vertex_nodes: np.ndarray   # (3,) node index at each local vertex
    edge_nodes: np.ndarray     # (3, k-1) node indices along each local edge
    interior_nodes: np.ndarray
    _coeffs: np.ndarray        # modal-to-nodal coefficient matrix

    @property
    def num_nodes(self):
        return len(self.nodes)

    def tabulate(self, points):
        """Nodal basis values and gradients at reference points.

        Returns (values, grads) with shapes (m, n) and (m, n, 2).
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        phi, dphi = _modal_basis(self.k, points)
        values = phi @ self._coeffs
        grads = np.einsum("mjd,ji->mid", dphi, self._coeffs)
        return values, grads


def _build(k):
    xy, tags = _equispaced_nodes(k)
    phi, _ = _modal_basis(k, xy)
    coeffs = np.linalg.inv(phi)
    bary = np.column_stack([1.0 - xy[:, 0] - xy[:, 1], xy[:, 0], xy[:, 1]])

    vertex_nodes = np.full(3, -1, dtype=np.int64)
    edge_nodes = [[] for _ in range(3)]
    interior = []
    for i, (kind, loc) in enumerate(tags):
        if kind == "vertex":
            vertex_nodes[loc] = i
        elif kind == "edge":
            edge_nodes[loc].append(i)
        else:
            interior.append(i)
    edge_arr = np.array(edge_nodes, dtype=np.int64).reshape(3, max(k - 1, 0))

    for arr in (xy, bary, coeffs, vertex_nodes, edge_arr):
        arr.flags.writeable = False
    elem = ReferenceElement(
        k=k,
        nodes=xy,
        nodes_bary=bary,
        node_entity=tuple(tags),
        vertex_nodes=vertex_nodes,
        edge_nodes=edge_arr,
        interior_nodes=np.array(interior, dtype=np.int64),
        _coeffs=coeffs,
    )
    values, _ = elem.tabulate(xy)
    if not np.allclose(values, np.eye(len(xy)), atol=1e-12):
        raise ArithmeticError(f"nodal basis construction lost accuracy at k={k}")
    return elem


@lru_cache(maxsize=None)
def build_reference_element(k):
    """Equispaced Lagrange element; degrees 1 through 10."""
    if not 1 <= k <= 10:
        raise ValueError(f"degree k={k} out of supported range [1, 10]")
    return _build(k)


@lru_cache(maxsize=None)
def _element_any_degree(k):
    # Internal: discontinuous pressure spaces may need k = 0.
    if k == 0:
        return _build(0)
    return build_reference_element(k)
