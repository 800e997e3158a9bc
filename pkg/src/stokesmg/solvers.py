"""Multigrid and full-block-factorization preconditioners for Stokes.

Monolithic hierarchies coarsen the coupled velocity-pressure system either
in mesh size only (hMG) or first in polynomial degree on the finest mesh and
then in mesh size at degree 2 (phMG; "direct" drops straight to degree 2,
"gradual" steps through an intermediate degree). Relaxation on every level
is Chebyshev-accelerated additive Schwarz over vertex patches; the coarsest
level is solved by dense LU. The FBF preconditioner instead applies a block
LDU factorization of the saddle system, approximating the velocity-block
inverse by a velocity-only multigrid V-cycle and the Schur complement by
the pressure mass matrix.

All hierarchy operators are rediscretized (not Galerkin products); the two
agree on interior rows here because the bilinear forms carry no
stabilization terms.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    SCOTT_VOGELIUS,
    assemble_pressure_mass,
    assemble_stokes,
    assemble_vector_laplacian,
    collect_dirichlet,
    eliminate_dirichlet,
)
from .linalg import chebyshev, dense_lu, estimate_lambda_max, fgmres
from .mesh import refine_barycentric, refine_uniform
from .relaxation import (
    asm_apply,
    build_star_patches,
    build_vanka_star_patches,
    factor_patches,
)
from .spaces import build_space
from .timing import Timings
from .transfer import (
    build_h_prolongation,
    build_monolithic_transfer,
    build_p_prolongation,
    filter_dirichlet,
)

__all__ = [
    "COARSE_DOF_CAP",
    "DEFAULT_CYCLE_PARAMS",
    "H_LEVEL",
    "P_LEVEL",
    "MGLevel",
    "MGHierarchy",
    "FBFPreconditioner",
    "p_coarsening_schedule",
    "mesh_hierarchy",
    "build_hmg",
    "build_phmg",
    "build_velocity_hierarchy",
    "build_fbf",
    "build_solver",
    "vcycle",
    "fbf_apply",
    "make_apply",
    "solve_stokes",
]

COARSE_DOF_CAP = 20_000
DEFAULT_CYCLE_PARAMS = (1, 2, 2)  # (n_V, nu_p, nu_h)

H_LEVEL = "h"
P_LEVEL = "p"

SOLVER_NAMES = ("hmg", "phmg-direct", "phmg-gradual", "fbf-hmg", "fbf-phmg")


def p_coarsening_schedule(k, mode):
    """Degrees visited while coarsening in p, from k down to 2.

    "direct" drops straight to 2. "gradual" inserts one intermediate degree
    for k >= 6 (4 for k in [6,7], 5 for k in [8,10]); below that the two
    modes coincide. k = 2 has nothing to coarsen, so both modes return [2].
    """
    if not 2 <= k <= 10:
        raise ValueError(f"degree {k} outside the supported range [2, 10]")
    if mode not in ("direct", "gradual"):
        raise ValueError(f"unknown p-coarsening mode {mode!r}")
    if k == 2:
        return [2]
    if mode == "direct" or k <= 5:
        return [k, 2]
    if k <= 7:
        return [k, 4, 2]
    return [k, 5, 2]


@dataclass
class MGLevel:
    """One level of a multigrid hierarchy.

    `K` is the (Dirichlet-eliminated) operator, `patches` the factored
    relaxation patches (None on the coarsest level, which is solved
    directly), and `P` the prolongation from the next-coarser level into
    this one (None on the coarsest). `kind` tags the level as p- or
    h-coarsened, which picks the sweep count and where the inner-cycle
    count applies. For monolithic levels `system` is the full saddle
    assembly; velocity-only levels carry just `space`.
    """

    K: object
    patches: object
    nu: int
    lambda_max: float
    P: object
    kind: str
    family: object
    k: int
    mesh: object
    dirichlet_dofs: np.ndarray
    system: object = None
    space: object = None

    @property
    def n(self):
        return self.K.shape[0]


class MGHierarchy:
    """Ordered multigrid levels, finest first, plus the coarse solver.

    Built hierarchies are immutable by convention: `vcycle` only reads from
    them, so one hierarchy can serve many concurrent solves.
    """

    def __init__(self, levels, coarse, pinned_dof, n_V, nu_p, nu_h):
        if not levels:
            raise ValueError("a hierarchy needs at least one level")
        if min(n_V, nu_p, nu_h) < 1:
            raise ValueError("cycle parameters must be >= 1")
        seen_h = False
        for i, level in enumerate(levels):
            is_coarsest = i == len(levels) - 1
            if (level.patches is None) != is_coarsest:
                raise ValueError("relaxation patches belong to every level "
                                 "except the coarsest")
            if (level.P is None) != is_coarsest:
                raise ValueError("every level except the coarsest needs a "
                                 "prolongation from below")
            if not is_coarsest:
                expected = (level.n, levels[i + 1].n)
                if level.P.shape != expected:
                    raise ValueError(
                        f"level {i} prolongation shape {level.P.shape} != "
                        f"{expected}"
                    )
            if level.kind == H_LEVEL:
                seen_h = True
            elif seen_h:
                raise ValueError("p-levels must precede h-levels")
        if coarse.shape != levels[-1].K.shape:
            raise ValueError("coarse factorization does not match the "
                             "coarsest operator")
        self.levels = levels
        self.coarse = coarse
        self.pinned_dof = pinned_dof
        self.n_V = n_V
        self.nu_p = nu_p
        self.nu_h = nu_h

    @property
    def n(self):
        return self.levels[0].n

    def coarse_solve(self, r):
        """Direct solve on the coarsest level.

        When the coarsest operator carries the constant-pressure nullspace,
        one pressure DoF is pinned to zero; for consistent right-hand sides
        (all that a V-cycle ever feeds it) this returns an exact solution in
        that gauge.
        """
        if self.pinned_dof is not None:
            r = r.copy()
            r[self.pinned_dof] = 0.0
        return self.coarse.solve(r)

    def level_summary(self):
        """(kind, family, degree, cells, dofs) per level, finest first."""
        return [
            (lv.kind, lv.family, lv.k, lv.mesh.num_cells, lv.n)
            for lv in self.levels
        ]


def mesh_hierarchy(problem, refinements=None):
    """Nested mesh chain, coarsest first.

    Uniform refinements of the base mesh; Scott-Vogelius appends one
    barycentric split on top, so only the finest mesh is barycentric.
    """
    if refinements is None:
        refinements = problem.refinements
    if refinements < 0:
        raise ValueError("refinements must be >= 0")
    chain = [problem.base_mesh]
    for _ in range(refinements):
        chain.append(refine_uniform(chain[-1]))
    if problem.family == SCOTT_VOGELIUS:
        chain.append(refine_barycentric(chain[-1]))
    return chain


@dataclass(frozen=True)
class _LevelSpec:
    family: object  # None for velocity-only levels
    k: int
    mesh: object
    kind: str


def _patch_coverage_ok(patches, n, dirichlet_dofs):
    covered = np.zeros(n, dtype=bool)
    for idx in patches.indices:
        covered[idx] = True
    covered[np.asarray(dirichlet_dofs, dtype=np.int64)] = True
    return bool(covered.all())


def _build_level(problem, spec, is_coarsest, nu_p, nu_h):
    if spec.family is not None:
        system = assemble_stokes(problem, spec.mesh, k=spec.k,
                                 family=spec.family)
        K, dirichlet, space = system.K, system.dirichlet_dofs, None
    else:
        system = None
        space = build_space(spec.mesh, spec.k, "continuous", components=2)
        A = assemble_vector_laplacian(space)
        dirichlet, values = collect_dirichlet(space, problem.dirichlet)
        K, _ = eliminate_dirichlet(A, dirichlet, values)

    patches, lam, nu = None, 0.0, 0
    if not is_coarsest:
        if spec.family is not None:
            patches = build_vanka_star_patches(
                spec.mesh, system.velocity_space, system.pressure_space,
                dirichlet,
            )
        else:
            patches = build_star_patches(spec.mesh, space, dirichlet)
        patches = factor_patches(K, patches)
        if not _patch_coverage_ok(patches, K.shape[0], dirichlet):
            raise ValueError("relaxation patches do not cover every "
                             "unconstrained DoF")
        lam = estimate_lambda_max(
            lambda v, p=patches, k=K: asm_apply(p, k @ v), K.shape[0]
        )
        nu = nu_p if spec.kind == P_LEVEL else nu_h
    return MGLevel(
        K=K, patches=patches, nu=nu, lambda_max=lam, P=None, kind=spec.kind,
        family=spec.family, k=spec.k, mesh=spec.mesh,
        dirichlet_dofs=dirichlet, system=system, space=space,
    )


def _space_transfer(coarse_space, fine_space):
    if coarse_space.mesh is fine_space.mesh:
        if (coarse_space.k == fine_space.k
                and coarse_space.continuity == fine_space.continuity):
            # Same space on both levels (Scott-Vogelius velocity above the
            # equal-degree Taylor-Hood level): the embedding is the identity.
            return sp.identity(fine_space.num_dofs, format="csr")
        return build_p_prolongation(coarse_space, fine_space)
    return build_h_prolongation(coarse_space, fine_space)


def _connect_levels(levels):
    for upper, lower in zip(levels, levels[1:]):
        if upper.system is not None:
            P = build_monolithic_transfer(
                _space_transfer(lower.system.velocity_space,
                                upper.system.velocity_space),
                _space_transfer(lower.system.pressure_space,
                                upper.system.pressure_space),
            )
        else:
            P = _space_transfer(lower.space, upper.space)
        upper.P = filter_dirichlet(P, upper.dirichlet_dofs,
                                   lower.dirichlet_dofs)


def _finish_hierarchy(problem, levels, monolithic, n_V, nu_p, nu_h):
    _connect_levels(levels)
    coarsest = levels[-1]
    if coarsest.n > COARSE_DOF_CAP:
        raise ValueError(
            f"coarsest level has {coarsest.n} DoFs, over the dense-LU cap "
            f"of {COARSE_DOF_CAP}; use more refinements between the base "
            f"mesh and the finest level or a smaller base mesh"
        )
    pinned = None
    K_dense = coarsest.K.toarray()
    if monolithic and problem.has_pressure_nullspace:
        pinned = coarsest.n - 1  # last pressure DoF fixes the gauge
        K_dense[pinned, :] = 0.0
        K_dense[:, pinned] = 0.0
        K_dense[pinned, pinned] = 1.0
    coarse = dense_lu(K_dense)
    return MGHierarchy(levels, coarse, pinned, n_V, nu_p, nu_h)


def _build(problem, specs, monolithic, n_V, nu_p, nu_h):
    levels = [
        _build_level(problem, spec, i == len(specs) - 1, nu_p, nu_h)
        for i, spec in enumerate(specs)
    ]
    return _finish_hierarchy(problem, levels, monolithic, n_V, nu_p, nu_h)


def build_hmg(problem, refinements, n_V=None, nu_p=None, nu_h=None):
    """Monolithic h-coarsened hierarchy at the problem's family/degree.

    One level per mesh in the nested chain, all at the same discretization,
    operators rediscretized per level. Scott-Vogelius is rejected: its
    barycentric meshes are not nested under quadrisection, so no monolithic
    h-hierarchy exists for it.
    """
    n_V, nu_p, nu_h = _cycle_params(n_V, nu_p, nu_h)
    if problem.family == SCOTT_VOGELIUS:
        raise ValueError(
            "monolithic hMG needs a nested mesh hierarchy at a fixed "
            "discretization; Scott-Vogelius has none (use phMG or FBF)"
        )
    chain = mesh_hierarchy(problem, refinements)
    specs = [
        _LevelSpec(problem.family, problem.k, m, H_LEVEL)
        for m in reversed(chain)
    ]
    return _build(problem, specs, True, n_V, nu_p, nu_h)


def build_phmg(problem, refinements, mode, n_V=None, nu_p=None, nu_h=None):
    """Monolithic p-then-h hierarchy.

    Degree is lowered on the finest mesh following `p_coarsening_schedule`
    (a Scott-Vogelius top level steps to the equal-or-lower-degree
    Taylor-Hood pair on the same mesh), ending at Taylor-Hood degree 2;
    below that, mesh coarsening continues at degree 2. The h-portion runs
    `n_V` times per outer cycle.
    """
    n_V, nu_p, nu_h = _cycle_params(n_V, nu_p, nu_h)
    family, k = problem.family, problem.k
    schedule = p_coarsening_schedule(k, mode)
    chain = mesh_hierarchy(problem, refinements)
    finest = chain[-1]

    if family == SCOTT_VOGELIUS:
        th_degrees = schedule[1:] if len(schedule) > 1 else [2]
        p_specs = [_LevelSpec(family, k, finest, P_LEVEL)]
        p_specs += [
            _LevelSpec("th", d, finest, P_LEVEL) for d in th_degrees
        ]
        h_meshes = chain[-2::-1]  # every pre-barycentric mesh, finest first
    else:
        p_specs = [_LevelSpec("th", d, finest, P_LEVEL) for d in schedule]
        h_meshes = chain[-2::-1]
    if len(p_specs) == 1:
        # Degree 2 Taylor-Hood has no p-section; the hierarchy is plain hMG.
        p_specs = [_LevelSpec("th", 2, finest, H_LEVEL)]
    h_specs = [_LevelSpec("th", 2, m, H_LEVEL) for m in h_meshes]
    return _build(problem, p_specs + h_specs, True, n_V, nu_p, nu_h)


def build_velocity_hierarchy(problem, refinements, cycle="phmg-direct",
                             n_V=None, nu_p=None, nu_h=None):
    """Multigrid hierarchy for the velocity Laplacian block alone.

    Used inside the FBF preconditioner; relaxation is additive Schwarz over
    vertex-star patches (no closure ring, no pressure). For Scott-Vogelius
    problems only the finest level lives on the barycentric mesh; coarser
    levels use the nested pre-barycentric meshes.
    """
    n_V, nu_p, nu_h = _cycle_params(n_V, nu_p, nu_h)
    if cycle not in ("hmg", "phmg-direct", "phmg-gradual"):
        raise ValueError(f"unknown velocity cycle {cycle!r}")
    k = problem.k
    chain = mesh_hierarchy(problem, refinements)
    if cycle == "hmg":
        specs = [_LevelSpec(None, k, m, H_LEVEL) for m in reversed(chain)]
    else:
        schedule = p_coarsening_schedule(k, cycle.split("-")[1])
        finest = chain[-1]
        if len(schedule) == 1:
            p_specs = [_LevelSpec(None, 2, finest, H_LEVEL)]
        else:
            p_specs = [_LevelSpec(None, d, finest, P_LEVEL)
                       for d in schedule]
        h_specs = [_LevelSpec(None, 2, m, H_LEVEL) for m in chain[-2::-1]]
        specs = p_specs + h_specs
    return _build(problem, specs, False, n_V, nu_p, nu_h)


def _cycle_params(n_V, nu_p, nu_h):
    dv, dp, dh = DEFAULT_CYCLE_PARAMS
    return (dv if n_V is None else n_V,
            dp if nu_p is None else nu_p,
            dh if nu_h is None else nu_h)


# -- V-cycle ----------------------------------------------------------------

def vcycle(hierarchy, b, x0=None, timer=None):
    """One multigrid V-cycle for `hierarchy`'s finest operator.

    Each level runs `nu` pre- and post-sweeps of Chebyshev-accelerated
    additive Schwarz, restricts the residual through P^T, recurses, and
    prolongates the correction back. Entering the h-portion from a p-level
    runs the whole sub-cycle `n_V` times (repeated defect correction); the
    coarsest level is solved directly. Linear in (b, x0), so probing with
    b = 0 yields the error-propagation operator.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (hierarchy.n,):
        raise ValueError(
            f"right-hand side has shape {b.shape}, expected ({hierarchy.n},)"
        )
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if timer is None:
        timer = Timings()
    return _cycle(hierarchy, 0, b, x, timer)


def _cycle(hierarchy, l, b, x, timer):
    levels = hierarchy.levels
    level = levels[l]
    if level.patches is None:
        with timer.scope("coarse"):
            return hierarchy.coarse_solve(b)

    def apply_MK(v, _p=level.patches, _K=level.K):
        return asm_apply(_p, _K @ v)

    def apply_Minv(r, _p=level.patches):
        return asm_apply(_p, r)

    rlx = f"rlx(l={l})"
    with timer.scope(rlx):
        x = chebyshev(apply_MK, apply_Minv, b, x, level.nu, level.lambda_max)
    with timer.scope("residual"):
        r = b - level.K @ x
    with timer.scope("transfer"):
        rc = level.P.T @ r
    inner = 1
    if level.kind == P_LEVEL and levels[l + 1].kind == H_LEVEL:
        inner = hierarchy.n_V
    e = np.zeros(levels[l + 1].n)
    for _ in range(inner):
        e = _cycle(hierarchy, l + 1, rc, e, timer)
    with timer.scope("transfer"):
        x = x + level.P @ e
    with timer.scope(rlx):
        x = chebyshev(apply_MK, apply_Minv, b, x, level.nu, level.lambda_max)
    return x


# -- full-block factorization ------------------------------------------------

FBF_APPLY_COST = {"Ainv": 2, "Sinv": 1, "B": 1, "BT": 1}


class FBFPreconditioner:
    """Block LDU preconditioner for the saddle system.

    `apply_Ainv(r, timer)` approximates the velocity-block inverse (one
    V-cycle of the inner hierarchy); `schur_solve` inverts the pressure
    mass matrix exactly. `B`/`BT` are the eliminated off-diagonal blocks of
    the outer operator. `apply_counts` accumulates how many times each
    piece has run, so the per-apply cost is observable.
    """

    def __init__(self, apply_Ainv, schur_solve, B, BT, n_u, n_p,
                 inner=None):
        if B.shape != (n_p, n_u) or BT.shape != (n_u, n_p):
            raise ValueError(
                f"off-diagonal blocks {B.shape}/{BT.shape} do not match "
                f"block sizes n_u={n_u}, n_p={n_p}"
            )
        self.apply_Ainv = apply_Ainv
        self.schur_solve = schur_solve
        self.B = B
        self.BT = BT
        self.n_u = n_u
        self.n_p = n_p
        self.inner = inner
        self.apply_counts = {key: 0 for key in FBF_APPLY_COST}

    @property
    def n(self):
        return self.n_u + self.n_p

    @staticmethod
    def application_cost():
        """Operator applications per preconditioner apply."""
        return dict(FBF_APPLY_COST)


def _blockwise_mass_solver(pressure_space, M):
    """Exact solver for a cell-block-diagonal (discontinuous) mass matrix.

    Factors each cell block independently; with cell-by-cell DoF numbering
    the blocks are contiguous index ranges.
    """
    T = pressure_space.mesh.num_cells
    m = pressure_space.element.num_nodes
    blocks = np.empty((T, m, m))
    M = M.tocsr()
    for t in range(T):
        idx = np.arange(t * m, (t + 1) * m)
        blocks[t] = M[idx][:, idx].toarray()
    inverses = np.linalg.inv(blocks)

    def solve(r):
        return np.einsum("tij,tj->ti", inverses, r.reshape(T, m)).ravel()

    return solve


def build_fbf(system, inner, schur_solve=None):
    """FBF preconditioner for `system` with velocity solver `inner`.

    `inner` is a velocity-block MGHierarchy (one V-cycle per application)
    or any callable r -> z approximating A^{-1} r (used to study the
    factorization with the velocity solve made exact). `schur_solve`
    defaults to an exact factorization of the pressure mass matrix:
    blockwise dense LU for discontinuous pressure, sparse LU for
    continuous.
    """
    n_u, n_p = system.n_u, system.n_p
    if isinstance(inner, MGHierarchy):
        if inner.n != n_u:
            raise ValueError(
                f"velocity hierarchy dimension {inner.n} does not match "
                f"the velocity block ({n_u})"
            )

        def apply_Ainv(r, timer=None, _h=inner):
            return vcycle(_h, r, timer=timer)
    elif callable(inner):
        def apply_Ainv(r, timer=None, _f=inner):
            return _f(r)
    else:
        raise TypeError("inner must be an MGHierarchy or a callable")

    if schur_solve is None:
        M = assemble_pressure_mass(system.pressure_space)
        if system.pressure_space.continuity == "discontinuous":
            schur_solve = _blockwise_mass_solver(system.pressure_space, M)
        else:
            lu = splu(M.tocsc())
            schur_solve = lu.solve

    K = system.K.tocsr()
    B = K[n_u:, :n_u].tocsr()
    BT = K[:n_u, n_u:].tocsr()
    return FBFPreconditioner(apply_Ainv, schur_solve, B, BT, n_u, n_p,
                             inner=inner)


def fbf_apply(pc, r, timer=None):
    """Apply the block LDU preconditioner: z = U diag(A~^-1, S~^-1) L r.

    Evaluated right-to-left with the velocity solve reused between the
    lower factor and the diagonal, for a total of two velocity V-cycles,
    one Schur (mass) solve, and one product each with B and B^T.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (pc.n,):
        raise ValueError(f"residual has shape {r.shape}, expected ({pc.n},)")
    if timer is None:
        timer = Timings()
    r_u, r_p = r[: pc.n_u], r[pc.n_u:]

    t = pc.apply_Ainv(r_u, timer)
    pc.apply_counts["Ainv"] += 1
    with timer.scope("schur"):
        w = r_p - pc.B @ t
        pc.apply_counts["B"] += 1
        s = pc.schur_solve(w)
        pc.apply_counts["Sinv"] += 1
        g = pc.BT @ s
        pc.apply_counts["BT"] += 1
    z_u = t - pc.apply_Ainv(g, timer)
    pc.apply_counts["Ainv"] += 1
    return np.concatenate([z_u, s])


# -- drivers ------------------------------------------------------------------

def build_solver(problem, refinements, solver, n_V=None, nu_p=None,
                 nu_h=None):
    """(finest SaddleSystem, preconditioner) for a named solver config.

    `solver` is one of hmg, phmg-direct, phmg-gradual, fbf-hmg, fbf-phmg.
    The FBF variants pair a velocity-only hierarchy (h-coarsened, or
    p-then-h with the direct schedule) with the pressure-mass Schur
    approximation.
    """
    if solver == "hmg":
        h = build_hmg(problem, refinements, n_V, nu_p, nu_h)
        return h.levels[0].system, h
    if solver in ("phmg-direct", "phmg-gradual"):
        mode = solver.split("-")[1]
        h = build_phmg(problem, refinements, mode, n_V, nu_p, nu_h)
        return h.levels[0].system, h
    if solver in ("fbf-hmg", "fbf-phmg"):
        chain = mesh_hierarchy(problem, refinements)
        system = assemble_stokes(problem, chain[-1])
        cycle = "hmg" if solver == "fbf-hmg" else "phmg-direct"
        inner = build_velocity_hierarchy(problem, refinements, cycle,
                                         n_V, nu_p, nu_h)
        return system, build_fbf(system, inner)
    raise ValueError(f"unknown solver {solver!r}; pick from {SOLVER_NAMES}")


def make_apply(pc, timer=None):
    """Preconditioner application callable for FGMRES."""
    if isinstance(pc, MGHierarchy):
        return lambda v: vcycle(pc, v, timer=timer)
    if isinstance(pc, FBFPreconditioner):
        return lambda v: fbf_apply(pc, v, timer=timer)
    if callable(pc):
        return pc
    raise TypeError(f"cannot apply preconditioner of type {type(pc)!r}")


def solve_stokes(system, pc, rtol=1e-10, restart=30, maxiter=500,
                 timer=None):
    """Preconditioned FGMRES on an assembled saddle system.

    Starts from the lifted guess (Dirichlet rows exact), projects out the
    constant-pressure mode for enclosed flows, and reports rather than
    raises on non-convergence.
    """
    project = None
    if system.has_pressure_nullspace:
        c = system.pressure_nullvector()

        def project(v, _c=c):
            return v - _c * (_c @ v)

    x, report = fgmres(
        lambda v: system.K @ v,
        make_apply(pc, timer),
        system.b,
        rtol=rtol,
        restart=restart,
        maxiter=maxiter,
        x0=system.lifted_guess(),
        project=project,
    )
    return x, report
