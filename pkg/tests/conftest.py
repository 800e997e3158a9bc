import numpy as np
import pytest

from stokesmg.assembly import ProblemInstance
from stokesmg.mesh import generate_structured_grid


def cavity_problem(k=2, family="th", n=2):
    """Enclosed lid-driven flow on [-1, 1]^2: Dirichlet everywhere, f = 0."""
    mesh = generate_structured_grid(n, domain=((-1.0, -1.0), (1.0, 1.0)))
    zero = lambda x, y: (0.0, 0.0)
    lid = lambda x, y: (1.0 - x**4, 0.0)
    return ProblemInstance(
        name="cavity",
        base_mesh=mesh,
        family=family,
        k=k,
        dirichlet={1: zero, 2: zero, 3: lid, 4: zero},
    )


def poiseuille_problem(n=2, k=2):
    """Channel flow on the unit square with an outflow boundary.

    Exact solution u = (y(1-y), 0), p = 4 - 2x; the outflow condition at
    x = 1 is (grad(u) - p I) n = (-2, 0).
    """
    mesh = generate_structured_grid(n)
    exact_u = lambda x, y: (y * (1.0 - y), 0.0)
    exact_p = lambda x, y: 4.0 - 2.0 * x
    return ProblemInstance(
        name="poiseuille",
        base_mesh=mesh,
        family="th",
        k=k,
        dirichlet={1: exact_u, 3: exact_u, 4: exact_u},
        neumann={2: lambda x, y: (-2.0, 0.0)},
        exact_u=exact_u,
        exact_p=exact_p,
    )


def pinned_solve(system):
    """Direct solve of an assembled system; pins one pressure DoF when the
    problem is enclosed flow (constant-pressure nullspace). The pin edits
    the sparsity pattern directly because the saddle (2,2) block stores no
    diagonal entries."""
    import scipy.sparse.linalg as spla

    K, b = system.K, system.b
    if system.has_pressure_nullspace:
        K = K.tolil(copy=True)
        d = system.n - 1
        K[d, :] = 0.0
        K[:, d] = 0.0
        K[d, d] = 1.0
        b = b.copy()
        b[d] = 0.0
    return spla.spsolve(K.tocsc(), b)
