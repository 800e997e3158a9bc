"""Vertex-patch additive Schwarz relaxation.

One sweep applies

    z = sum_i I(i)^T W_i inv(K(i)) I(i) r

with one patch per mesh vertex. Vanka patches (monolithic relaxation) take
velocity DoFs on the closure of the vertex star and pressure DoFs on the
star itself; star patches (velocity-only relaxation inside the block
preconditioner) take velocity DoFs on the star only. W_i is the inverse
patch-multiplicity of each DoF, applied after the local solve, so the
weights of a DoF across patches sum to one.
"""

from __future__ import annotations

import numpy as np

from .linalg import SingularMatrixError, dense_lu
from .mesh import closure, vertex_star

__all__ = [
    "PatchSet",
    "build_vanka_star_patches",
    "build_star_patches",
    "factor_patches",
    "asm_apply",
]


class PatchSet:
    """Per-vertex DoF index lists, plus weights and factors once factored."""

    def __init__(self, n, vertices, indices, weights=None, factors=None):
        self.n = n
        self.vertices = vertices
        self.indices = indices
        self.weights = weights
        self.factors = factors

    def __len__(self):
        return len(self.indices)

    @property
    def factored(self):
        return self.factors is not None

    def reordered(self, order):
        """Same patches, visited in a different order (for order-independence
        checks)."""
        pick = lambda xs: None if xs is None else [xs[i] for i in order]
        return PatchSet(self.n, pick(self.vertices), pick(self.indices),
                        pick(self.weights), pick(self.factors))


def _entity_dofs(space, entity_set):
    return space.entity_set_scalar_dofs(entity_set)


def build_vanka_star_patches(mesh, velocity_space, pressure_space,
                             dirichlet_dofs=()):
    """Monolithic patches: velocity on closure(star(v)), pressure on star(v).

    Indices are monolithic (velocity block first). `dirichlet_dofs` are
    monolithic indices to exclude; empty patches are dropped.
    """
    n_u = velocity_space.num_dofs
    n = n_u + pressure_space.num_dofs
    excluded = np.zeros(n, dtype=bool)
    excluded[np.asarray(dirichlet_dofs, dtype=np.int64)] = True

    vertices, indices = [], []
    for v in range(mesh.num_vertices):
        star = vertex_star(mesh, v)
        cl = closure(mesh, star)
        vel = velocity_space.expand_components(_entity_dofs(velocity_space, cl))
        pres = n_u + _entity_dofs(pressure_space, star)
        idx = np.concatenate([vel, pres])
        idx = idx[~excluded[idx]]
        if len(idx) == 0:
            continue
        vertices.append(v)
        indices.append(np.sort(idx))
    return PatchSet(n, vertices, indices)


def build_star_patches(mesh, velocity_space, dirichlet_dofs=()):
    """Velocity-only patches on the vertex star (no closure ring)."""
    n = velocity_space.num_dofs
    excluded = np.zeros(n, dtype=bool)
    excluded[np.asarray(dirichlet_dofs, dtype=np.int64)] = True

    vertices, indices = [], []
    for v in range(mesh.num_vertices):
        star = vertex_star(mesh, v)
        idx = velocity_space.expand_components(
            _entity_dofs(velocity_space, star)
        )
        idx = idx[~excluded[idx]]
        if len(idx) == 0:
            continue
        vertices.append(v)
        indices.append(np.sort(idx))
    return PatchSet(n, vertices, indices)


def _gather_dense(K, idx):
    """Dense submatrix K[idx, idx]; idx must be sorted."""
    m = len(idx)
    out = np.zeros((m, m))
    for li in range(m):
        r = idx[li]
        start, stop = K.indptr[r], K.indptr[r + 1]
        cols = K.indices[start:stop]
        pos = np.searchsorted(idx, cols)
        inside = pos < m
        pos = pos[inside]
        hit = idx[pos] == cols[inside]
        out[li, pos[hit]] = K.data[start:stop][inside][hit]
    return out


def factor_patches(K, patches):
    """Extract and LU-factor every patch submatrix of K; compute weights.

    Returns a new factored PatchSet. A singular patch matrix raises an error
    naming the offending vertex (a sign the decomposition kept constrained
    DoFs it should have excluded).
    """
    K = K.tocsr()
    K.sum_duplicates()
    if K.shape != (patches.n, patches.n):
        raise ValueError(
            f"operator shape {K.shape} does not match patch dimension "
            f"{patches.n}"
        )
    multiplicity = np.zeros(patches.n)
    for idx in patches.indices:
        multiplicity[idx] += 1.0
    weights = []
    factors = []
    for v, idx in zip(patches.vertices, patches.indices):
        local = _gather_dense(K, idx)
        try:
            factors.append(dense_lu(local))
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                f"singular patch matrix at vertex {v}: {exc}"
            ) from exc
        weights.append(1.0 / multiplicity[idx])
    return PatchSet(patches.n, list(patches.vertices),
                    list(patches.indices), weights, factors)


def asm_apply(patches, r):
    """One additive Schwarz sweep: z = sum_i I^T W inv(K_i) I r."""
    if not patches.factored:
        raise ValueError("patches must be factored first")
    z = np.zeros_like(r)
    for idx, w, F in zip(patches.indices, patches.weights, patches.factors):
        z[idx] += w * F.solve(r[idx])
    return z
