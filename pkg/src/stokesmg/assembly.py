"""Assembly of the Stokes saddle-point system and related operators.

The monolithic matrix is

    K = [ A   B^T ]      A = integral of grad(u) : grad(v),
        [ B   0   ]      B = -integral of p div(v),

with velocity DoFs first and pressure DoFs after. Dirichlet conditions are
imposed by symmetric elimination that only zeroes stored values (rows and
columns set to 0, unit diagonal, right-hand side lifted), so the sparsity
pattern of the assembled operator is preserved for nnz accounting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .quadrature import quadrature_rule
from .reference import LOCAL_EDGES
from .spaces import build_space

__all__ = [
    "ProblemInstance",
    "SaddleSystem",
    "assemble_stokes",
    "assemble_pressure_mass",
    "eliminate_dirichlet",
    "compute_divergence_norm",
    "cellwise_divergence",
    "compute_errors",
]

TAYLOR_HOOD = "th"
SCOTT_VOGELIUS = "sv"


@dataclass(frozen=True)
class ProblemInstance:
    """A Stokes problem: geometry seed, boundary data, forcing, and spaces.

    `dirichlet` and `neumann` map boundary markers to functions of (x, y)
    returning two components. Every marker present on the mesh must appear
    in exactly one of the two. A problem with no Neumann part is enclosed
    flow and carries the constant-pressure nullspace. `refinements` records
    how many uniform refinements separate the base mesh from the intended
    finest solve mesh (factories set it; solver builders may override).
    """

    name: str
    base_mesh: object
    family: str
    k: int
    dirichlet: dict
    neumann: dict = field(default_factory=dict)
    forcing: object = None
    exact_u: object = None
    exact_p: object = None
    refinements: int = 0

    def __post_init__(self):
        if self.family not in (TAYLOR_HOOD, SCOTT_VOGELIUS):
            raise ValueError(f"unknown family {self.family!r}")
        if self.k < 2:
            raise ValueError("inf-sup stable discretizations need k >= 2")
        both = set(self.dirichlet) & set(self.neumann)
        if both:
            raise ValueError(f"markers {sorted(both)} have two conditions")
        mesh_markers = set(self.base_mesh.boundary_edge_markers.values())
        covered = set(self.dirichlet) | set(self.neumann)
        if mesh_markers - covered:
            raise ValueError(
                f"markers {sorted(mesh_markers - covered)} have no condition"
            )

    @property
    def has_pressure_nullspace(self):
        return len(self.neumann) == 0


class SaddleSystem:
    """Assembled Stokes system on one mesh/degree pair.

    `A` and `B` are the raw (pre-elimination) blocks; `K` and `b` have the
    Dirichlet elimination applied. `dirichlet_dofs` are monolithic indices
    (velocity block) with `dirichlet_values` aligned.
    """

    def __init__(self, velocity_space, pressure_space, A, B, K, b,
                 dirichlet_dofs, dirichlet_values, has_pressure_nullspace):
        self.velocity_space = velocity_space
        self.pressure_space = pressure_space
        self.A = A
        self.B = B
        self.K = K
        self.b = b
        self.dirichlet_dofs = dirichlet_dofs
        self.dirichlet_values = dirichlet_values
        self.has_pressure_nullspace = has_pressure_nullspace
        self.n_u = velocity_space.num_dofs
        self.n_p = pressure_space.num_dofs
        self.n = self.n_u + self.n_p

    def split(self, x):
        return x[: self.n_u], x[self.n_u:]

    def lifted_guess(self):
        """Zero initial guess with Dirichlet values filled in, so the
        initial residual vanishes on eliminated rows."""
        x0 = np.zeros(self.n)
        x0[self.dirichlet_dofs] = self.dirichlet_values
        return x0

    def pressure_nullvector(self):
        """Constant-pressure mode (zero velocity part), unit norm."""
        c = np.zeros(self.n)
        c[self.n_u:] = 1.0
        return c / np.linalg.norm(c)


def _geometry(mesh):
    """Per-cell Jacobians: returns (detJ, JinvT) with shapes (T,), (T,2,2)."""
    v0 = mesh.vertices[mesh.cells[:, 0]]
    v1 = mesh.vertices[mesh.cells[:, 1]]
    v2 = mesh.vertices[mesh.cells[:, 2]]
    J = np.stack([v1 - v0, v2 - v0], axis=-1)  # columns are edge vectors
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1]
    inv[:, 0, 1] = -J[:, 0, 1]
    inv[:, 1, 0] = -J[:, 1, 0]
    inv[:, 1, 1] = J[:, 0, 0]
    inv /= detJ[:, None, None]
    JinvT = np.swapaxes(inv, 1, 2)
    return detJ, JinvT


def _physical_grads(space, rule):
    """Gradients of all basis functions at quadrature points, per cell.

    Returns (values (q, n), grads (T, q, n, 2), detJ (T,)).
    """
    detJ, JinvT = _geometry(space.mesh)
    values, ref_grads = space.element.tabulate(rule.xy)
    grads = np.einsum("qnd,ted->tqne", ref_grads, JinvT)
    return values, grads, detJ


def assemble_vector_laplacian(space, rule=None):
    """A = integral grad(u):grad(v) on a 2-component space, CSR.

    The operator does not couple components, but the cross-component zeros
    are stored anyway: per node pair the matrix holds a dense blocks x
    blocks entry set, matching how block-structured solver backends
    preallocate, so stored-entry counts are comparable.
    """
    rule = rule or quadrature_rule(max(2 * space.k, 1))
    _, grads, detJ = _physical_grads(space, rule)
    local = np.einsum("tqnd,tqmd,q->tnm", grads, grads, rule.weights)
    local *= detJ[:, None, None]

    scal = space.cell_scalar_dofs
    n = space.num_dofs
    nc = space.components
    blocks_i, blocks_j, blocks_v = [], [], []
    zeros = np.zeros_like(local)
    for ci in range(nc):
        for cj in range(nc):
            rows = nc * scal + ci
            cols = nc * scal + cj
            blocks_i.append(np.repeat(rows, scal.shape[1], axis=1).ravel())
            blocks_j.append(np.tile(cols, (1, scal.shape[1])).ravel())
            blocks_v.append((local if ci == cj else zeros).ravel())
    A = sp.coo_matrix(
        (np.concatenate(blocks_v),
         (np.concatenate(blocks_i), np.concatenate(blocks_j))),
        shape=(n, n),
    ).tocsr()
    A.sum_duplicates()
    return A


def assemble_divergence(velocity_space, pressure_space, rule=None):
    """B = -integral p div(v); shape n_p x n_u, CSR."""
    k = velocity_space.k
    rule = rule or quadrature_rule(max(2 * k, 1))
    _, grads, detJ = _physical_grads(velocity_space, rule)
    p_values, _ = pressure_space.element.tabulate(rule.xy)
    # local[t, i, j, c] = -sum_q w_q psi_i dphi_j/dx_c, scaled by detJ
    local = -np.einsum("qi,tqjc,q->tijc", p_values, grads, rule.weights)
    local *= detJ[:, None, None, None]

    T = velocity_space.mesh.num_cells
    rows = np.repeat(
        pressure_space.cell_scalar_dofs[:, :, None, None],
        grads.shape[2], axis=2,
    )
    rows = np.repeat(rows, 2, axis=3)
    cols = 2 * velocity_space.cell_scalar_dofs[:, None, :, None] \
        + np.arange(2)[None, None, None, :]
    cols = np.broadcast_to(cols, local.shape)
    B = sp.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(pressure_space.num_dofs, velocity_space.num_dofs),
    ).tocsr()
    B.sum_duplicates()
    return B


def assemble_pressure_mass(pressure_space, rule=None):
    """Pressure mass matrix, CSR. Block-diagonal for discontinuous spaces."""
    rule = rule or quadrature_rule(max(2 * pressure_space.k, 1))
    detJ, _ = _geometry(pressure_space.mesh)
    values, _ = pressure_space.element.tabulate(rule.xy)
    local = np.einsum("qi,qj,q->ij", values, values, rule.weights)
    locals_all = local[None, :, :] * detJ[:, None, None]
    scal = pressure_space.cell_scalar_dofs
    rows = np.repeat(scal, scal.shape[1], axis=1).ravel()
    cols = np.tile(scal, (1, scal.shape[1])).ravel()
    n = pressure_space.num_dofs
    M = sp.coo_matrix((locals_all.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return M


def _assemble_forcing(space, forcing, rule):
    b = np.zeros(space.num_dofs)
    if forcing is None:
        return b
    values, _ = space.element.tabulate(rule.xy)
    detJ, _ = _geometry(space.mesh)
    lam = rule.points
    for t in range(space.mesh.num_cells):
        tri = space.mesh.vertices[space.mesh.cells[t]]
        phys = lam @ tri
        fvals = np.array([forcing(x, y) for x, y in phys])  # (q, 2)
        loc = np.einsum("q,qn,qc->nc", rule.weights * detJ[t], values, fvals)
        dofs = space.cell_dofs[t].reshape(-1, 2)
        np.add.at(b, dofs, loc)
    return b


def _edge_quadrature(n):
    gx, gw = np.polynomial.legendre.leggauss(n)
    return 0.5 * (gx + 1.0), 0.5 * gw


def _assemble_neumann(space, neumann, b):
    """Add the boundary flux term: integral over Neumann edges of g_N . v."""
    if not neumann:
        return
    mesh = space.mesh
    elem = space.element
    s, w = _edge_quadrature(space.k + 1)
    for e, marker in sorted(mesh.boundary_edge_markers.items()):
        if marker not in neumann:
            continue
        g = neumann[marker]
        (t,) = mesh.cells_of_edge(e)
        tri = mesh.cells[t]
        le = next(
            i for i, ge in enumerate(mesh.cell_edges[t]) if ge == e
        )
        i, j = LOCAL_EDGES[le]
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        pts = ref[i] + np.outer(s, ref[j] - ref[i])
        values, _ = elem.tabulate(pts)
        pa, pb = mesh.vertices[tri[i]], mesh.vertices[tri[j]]
        length = np.linalg.norm(pb - pa)
        phys = pa + np.outer(s, pb - pa)
        gvals = np.array([g(x, y) for x, y in phys])  # (q, 2)
        loc = np.einsum("q,qn,qc->nc", w * length, values, gvals)
        dofs = space.cell_dofs[t].reshape(-1, 2)
        np.add.at(b, dofs, loc)


def collect_dirichlet(space, dirichlet):
    """Monolithic Dirichlet DoF indices and values for a velocity space.

    Markers are visited in sorted order; boundary data is expected to agree
    where markers meet.
    """
    dofs = []
    values = []
    seen = {}
    for marker in sorted(dirichlet):
        g = dirichlet[marker]
        for sdof in space.boundary_scalar_dofs(markers={marker}):
            x, y = space.dof_coords[sdof]
            val = np.asarray(g(x, y), dtype=np.float64).ravel()
            seen[int(sdof)] = val
    for sdof in sorted(seen):
        for c in range(space.components):
            dofs.append(space.components * sdof + c)
            values.append(seen[sdof][c])
    return np.array(dofs, dtype=np.int64), np.array(values)


def eliminate_dirichlet(K, dofs, values, b=None):
    """Symmetric elimination preserving the sparsity pattern.

    Rows and columns in `dofs` are zeroed in place of being removed, the
    diagonal is set to 1, and `b` (if given) receives the lifting
    b <- b - K[:, dofs] @ values, then b[dofs] = values. Returns (K', b').
    """
    K = K.tocsr(copy=True)
    K.sum_duplicates()
    dofs = np.asarray(dofs, dtype=np.int64)
    if b is not None:
        b = b.copy()
        lift = np.zeros(K.shape[1])
        lift[dofs] = values
        b -= K @ lift
    mask = np.isin(K.indices, dofs)
    K.data[mask] = 0.0
    for r in dofs:
        start, stop = K.indptr[r], K.indptr[r + 1]
        K.data[start:stop] = 0.0
        pos = np.searchsorted(K.indices[start:stop], r)
        if pos >= stop - start or K.indices[start + pos] != r:
            raise ValueError(f"no stored diagonal for Dirichlet DoF {r}")
        K.data[start + pos] = 1.0
    if b is not None:
        b[dofs] = values
    return K, b


def stokes_spaces(mesh, family, k):
    """Velocity/pressure space pair for a discretization family."""
    velocity = build_space(mesh, k, "continuous", components=2)
    if family == TAYLOR_HOOD:
        pressure = build_space(mesh, k - 1, "continuous")
    else:
        pressure = build_space(mesh, k - 1, "discontinuous")
    return velocity, pressure


def assemble_stokes(problem, mesh, k=None, family=None):
    """Assemble the saddle system for `problem` on `mesh`.

    `k` and `family` override the problem's values; multilevel solvers use
    this to rediscretize on coarser meshes and degrees.
    """
    k = problem.k if k is None else k
    family = problem.family if family is None else family
    if family == SCOTT_VOGELIUS:
        if k < 2:
            raise ValueError("Scott-Vogelius needs k >= 2 in 2D")
        if getattr(mesh, "refinement_kind", None) != "barycentric":
            raise ValueError(
                "Scott-Vogelius requires a barycentrically refined mesh"
            )
    velocity, pressure = stokes_spaces(mesh, family, k)
    rule = quadrature_rule(2 * k)

    A = assemble_vector_laplacian(velocity, rule)
    B = assemble_divergence(velocity, pressure, rule)
    b_u = _assemble_forcing(velocity, problem.forcing, rule)
    _assemble_neumann(velocity, problem.neumann, b_u)
    b = np.concatenate([b_u, np.zeros(pressure.num_dofs)])

    K_raw = sp.bmat([[A, B.T], [B, None]], format="csr")
    dofs, values = collect_dirichlet(velocity, problem.dirichlet)
    K, b = eliminate_dirichlet(K_raw, dofs, values, b)
    return SaddleSystem(
        velocity, pressure, A, B, K, b, dofs, values,
        problem.has_pressure_nullspace,
    )


# -- solution quality ------------------------------------------------------

def cellwise_divergence(u, space, rule):
    """div(u_h) at every quadrature point; shape (T, q)."""
    _, grads, _ = _physical_grads(space, rule)
    T = space.mesh.num_cells
    coeffs = u[space.cell_dofs].reshape(T, -1, 2)  # (T, n, 2)
    return np.einsum("tnc,tqnc->tq", coeffs, grads)


def compute_divergence_norm(u, space):
    """L2 norm of div(u_h), by quadrature of degree 2k."""
    rule = quadrature_rule(2 * space.k)
    div = cellwise_divergence(u, space, rule)
    detJ, _ = _geometry(space.mesh)
    val = np.einsum("tq,q,t->", div**2, rule.weights, detJ)
    return float(np.sqrt(max(val, 0.0)))


def _values_at_quad(vec, space, rule):
    values, _ = space.element.tabulate(rule.xy)
    T = space.mesh.num_cells
    coeffs = vec[space.cell_dofs].reshape(T, -1, space.components)
    return np.einsum("qn,tnc->tqc", values, coeffs)


def compute_errors(u, p, velocity_space, pressure_space, exact_u, exact_p,
                   subtract_pressure_mean=False):
    """L2 errors against an exact solution, by quadrature of degree 2k+2."""
    mesh = velocity_space.mesh
    rule = quadrature_rule(2 * velocity_space.k + 2)
    detJ, _ = _geometry(mesh)
    scale = rule.weights[None, :] * detJ[:, None]

    phys = np.einsum("qb,tbd->tqd", rule.points, mesh.vertices[mesh.cells])
    uh = _values_at_quad(u, velocity_space, rule)
    uex = np.array(
        [[exact_u(x, y) for x, y in cell_pts] for cell_pts in phys]
    )
    err_u = float(np.sqrt(np.sum(scale[..., None] * (uh - uex) ** 2)))

    ph = _values_at_quad(p, pressure_space, rule)[:, :, 0]
    pex = np.array(
        [[exact_p(x, y) for x, y in cell_pts] for cell_pts in phys]
    )
    diff = ph - pex
    if subtract_pressure_mean:
        area = float(scale.sum())
        diff = diff - np.sum(scale * diff) / area
    err_p = float(np.sqrt(np.sum(scale * diff**2)))
    return err_u, err_p
