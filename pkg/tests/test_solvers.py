import numpy as np
import pytest
from conftest import cavity_problem, pinned_solve, poiseuille_problem
from dense_oracles import (dense_cycle_matrix, dense_fbf, eq_defect_correction,
                           eq_two_level, level_smoother, probe_columns)

from stokesmg.assembly import assemble_pressure_mass, assemble_stokes
from stokesmg.problems import lid_driven_cavity, manufactured
from stokesmg.solvers import (FBFPreconditioner, MGHierarchy, build_fbf,
                              build_hmg, build_phmg, build_solver,
                              build_velocity_hierarchy, fbf_apply, make_apply,
                              mesh_hierarchy, p_coarsening_schedule,
                              solve_stokes, vcycle)


class TestPCoarseningSchedule:
    @pytest.mark.parametrize("k,mode,expected", [
        (2, "direct", [2]),
        (2, "gradual", [2]),
        (3, "direct", [3, 2]),
        (5, "gradual", [5, 2]),
        (6, "direct", [6, 2]),
        (6, "gradual", [6, 4, 2]),
        (7, "gradual", [7, 4, 2]),
        (8, "gradual", [8, 5, 2]),
        (10, "gradual", [10, 5, 2]),
        (10, "direct", [10, 2]),
    ])
    def test_schedules(self, k, mode, expected):
        assert p_coarsening_schedule(k, mode) == expected

    def test_direct_equals_gradual_for_low_orders(self):
        for k in (3, 4, 5):
            assert (p_coarsening_schedule(k, "direct")
                    == p_coarsening_schedule(k, "gradual"))

    @pytest.mark.parametrize("k", [1, 11])
    def test_order_out_of_range(self, k):
        with pytest.raises(ValueError, match="range"):
            p_coarsening_schedule(k, "direct")

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            p_coarsening_schedule(4, "steep")


class TestBuildHmg:
    def test_level_shapes(self):
        prob = cavity_problem(n=2)
        h = build_hmg(prob, 2)
        assert len(h.levels) == 3
        kinds = [lv.kind for lv in h.levels]
        assert kinds == ["h", "h", "h"]
        dims = [lv.n for lv in h.levels]
        assert dims[0] > dims[1] > dims[2]
        for up, low in zip(h.levels, h.levels[1:]):
            assert up.P.shape == (up.n, low.n)
        assert h.levels[-1].P is None
        assert h.levels[-1].patches is None
        assert all(lv.lambda_max > 0 for lv in h.levels[:-1])
        assert h.levels[-1].lambda_max == 0.0

    def test_rejects_scott_vogelius(self):
        prob = cavity_problem(family="sv")
        with pytest.raises(ValueError, match="Scott-Vogelius"):
            build_hmg(prob, 1)

    def test_rejects_oversized_coarse_grid(self):
        prob = lid_driven_cavity(0, 2, base_n=48)
        with pytest.raises(ValueError, match="dense-LU cap"):
            build_hmg(prob, 0)

    def test_rejects_bad_cycle_params(self):
        prob = cavity_problem(n=2)
        with pytest.raises(ValueError, match=">= 1"):
            build_hmg(prob, 1, nu_h=0)


class TestBuildPhmg:
    def test_gradual_k6_shape(self):
        prob = lid_driven_cavity(2, 6)
        h = build_phmg(prob, 2, "gradual")
        summary = h.level_summary()
        assert [(s[0], s[2]) for s in summary] == [
            ("p", 6), ("p", 4), ("p", 2), ("h", 2), ("h", 2)]
        cells = [s[3] for s in summary]
        assert cells[0] == cells[1] == cells[2]  # p-levels share the mesh
        assert cells[2] == 4 * cells[3] == 16 * cells[4]

    def test_direct_k6_shape(self):
        prob = lid_driven_cavity(2, 6)
        h = build_phmg(prob, 2, "direct")
        assert [(s[0], s[2]) for s in h.level_summary()] == [
            ("p", 6), ("p", 2), ("h", 2), ("h", 2)]

    def test_direct_equals_gradual_shape_for_k4(self):
        prob = lid_driven_cavity(1, 4)
        a = build_phmg(prob, 1, "direct").level_summary()
        b = build_phmg(prob, 1, "gradual").level_summary()
        assert a == b

    def test_k2_degenerates_to_h_cycle(self):
        prob = lid_driven_cavity(1, 2)
        h = build_phmg(prob, 1, "direct")
        assert all(lv.kind == "h" for lv in h.levels)
        assert [s[2] for s in h.level_summary()] == [2, 2]

    def test_sv_shape(self):
        prob = lid_driven_cavity(2, 3, family="sv")
        h = build_phmg(prob, 2, "direct")
        summary = h.level_summary()
        assert [(s[0], s[1], s[2]) for s in summary] == [
            ("p", "sv", 3), ("p", "th", 2), ("h", "th", 2), ("h", "th", 2),
            ("h", "th", 2)]
        # the two finest levels live on the barycentric mesh; the h-levels
        # descend the plain chain
        assert summary[0][3] == summary[1][3] == 3 * summary[2][3]

    def test_sv_k2_keeps_taylor_hood_companion_level(self):
        prob = lid_driven_cavity(1, 2, family="sv")
        h = build_phmg(prob, 1, "direct")
        fams = [(s[0], s[1], s[2]) for s in h.level_summary()]
        assert fams[0] == ("p", "sv", 2)
        assert fams[1] == ("p", "th", 2)
        assert all(f[0] == "h" for f in fams[2:])


class TestVelocityHierarchy:
    def test_hmg_descends_at_fixed_degree(self):
        prob = lid_driven_cavity(2, 3)
        h = build_velocity_hierarchy(prob, 2, "hmg")
        assert [s[2] for s in h.level_summary()] == [3, 3, 3]
        assert [s[0] for s in h.level_summary()] == ["h", "h", "h"]

    def test_phmg_direct_coarsens_p_then_h(self):
        prob = lid_driven_cavity(2, 4)
        h = build_velocity_hierarchy(prob, 2, "phmg-direct")
        assert [(s[0], s[2]) for s in h.level_summary()] == [
            ("p", 4), ("p", 2), ("h", 2), ("h", 2)]

    def test_sv_velocity_hierarchy_includes_barycentric(self):
        prob = lid_driven_cavity(1, 2, family="sv")
        h = build_velocity_hierarchy(prob, 1, "hmg")
        cells = [s[3] for s in h.level_summary()]
        assert cells[0] == 3 * cells[1]  # barycentric finest, then the chain
        assert len(cells) == 3

    def test_unknown_cycle(self):
        prob = lid_driven_cavity(1, 2)
        with pytest.raises(ValueError, match="cycle"):
            build_velocity_hierarchy(prob, 1, "wmg")


class TestVcycleBasics:
    def test_zero_rhs(self):
        h = build_hmg(poiseuille_problem(), 1)
        x = vcycle(h, np.zeros(h.levels[0].n))
        assert np.all(x == 0.0)

    def test_single_level_is_direct_solve(self):
        prob = poiseuille_problem(n=2)
        h = build_hmg(prob, 0)
        system = h.levels[0].system
        x = vcycle(h, system.b)
        assert np.linalg.norm(system.K @ x - system.b) <= 1e-10 * np.linalg.norm(
            system.b)

    def test_single_level_enclosed_flow(self):
        prob = cavity_problem(n=2)
        h = build_hmg(prob, 0)
        system = h.levels[0].system
        x = vcycle(h, system.b)
        r = system.b - system.K @ x
        assert np.linalg.norm(r) <= 1e-10 * max(np.linalg.norm(system.b), 1.0)

    def test_linearity(self):
        h = build_hmg(poiseuille_problem(), 1)
        n = h.levels[0].n
        rng = np.random.default_rng(3)
        b1, b2 = rng.standard_normal(n), rng.standard_normal(n)
        lhs = vcycle(h, 2.0 * b1 - 0.5 * b2)
        rhs = 2.0 * vcycle(h, b1) - 0.5 * vcycle(h, b2)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)

    def test_shape_mismatch(self):
        h = build_hmg(poiseuille_problem(), 1)
        with pytest.raises(ValueError, match="expected"):
            vcycle(h, np.zeros(3))


class TestDenseOracles:
    def test_two_level_propagator_matches_formula(self):
        prob = poiseuille_problem(n=2)
        h = build_hmg(prob, 1)
        K = h.levels[0].K.toarray()
        n = h.levels[0].n
        assert n <= 500
        S, _ = level_smoother(h.levels[0])
        G_formula = eq_two_level(S, h.levels[0].P.toarray(),
                                 h.levels[1].K.toarray(), K)
        G_impl = np.eye(n) - probe_columns(lambda b: vcycle(h, b), n) @ K
        assert np.abs(G_formula - G_impl).max() <= 1e-11

    def test_phmg_defect_correction_matches_formula(self):
        prob = poiseuille_problem(n=1, k=3)
        h = build_phmg(prob, 2, "direct", n_V=2)
        assert [(s[0], s[2]) for s in h.level_summary()] == [
            ("p", 3), ("p", 2), ("h", 2), ("h", 2)]
        K0 = h.levels[0].K.toarray()
        n = h.levels[0].n
        assert n <= 500
        # two-level h-propagator at the bottom of the hierarchy
        S2, _ = level_smoother(h.levels[2])
        G_h = eq_two_level(S2, h.levels[2].P.toarray(),
                           h.levels[3].K.toarray(), h.levels[2].K.toarray())
        # defect correction at the p->h boundary runs the h-cycle n_V times
        S1, _ = level_smoother(h.levels[1])
        G_dc = eq_defect_correction(S1, h.levels[1].P.toarray(),
                                    h.levels[2].K.toarray(), G_h, 2,
                                    h.levels[1].K.toarray())
        # outermost p-level wraps the corrected low-order solve once
        S0, _ = level_smoother(h.levels[0])
        G_formula = eq_defect_correction(S0, h.levels[0].P.toarray(),
                                         h.levels[1].K.toarray(), G_dc, 1, K0)
        G_impl = np.eye(n) - probe_columns(lambda b: vcycle(h, b), n) @ K0
        assert np.abs(G_formula - G_impl).max() <= 1e-11

    def test_recursive_cycle_matrix_matches_implementation(self):
        prob = poiseuille_problem(n=1, k=3)
        h = build_phmg(prob, 2, "direct", n_V=2)
        M_dense = dense_cycle_matrix(h)
        M_impl = probe_columns(lambda b: vcycle(h, b), h.levels[0].n)
        assert np.abs(M_dense - M_impl).max() <= 1e-11


class TestFBF:
    def _poiseuille_fbf(self):
        prob = poiseuille_problem(n=2)
        system = assemble_stokes(prob, mesh_hierarchy(prob, 1)[-1])
        inner = build_velocity_hierarchy(prob, 1, "hmg")
        return system, build_fbf(system, inner), inner

    def test_apply_matches_block_formula(self):
        system, pc, inner = self._poiseuille_fbf()
        assert system.n <= 300
        A_inv = dense_cycle_matrix(inner)  # frozen inner cycle, dense
        M_p = assemble_pressure_mass(system.pressure_space).toarray()
        P_formula = dense_fbf(A_inv, np.linalg.inv(M_p),
                              system.K[pc.n_u:, :pc.n_u].toarray())
        P_impl = probe_columns(lambda r: fbf_apply(pc, r), system.n)
        assert np.abs(P_formula - P_impl).max() <= 1e-11

    def test_apply_cost_accounting(self):
        system, pc, _ = self._poiseuille_fbf()
        assert FBFPreconditioner.application_cost() == {
            "Ainv": 2, "Sinv": 1, "B": 1, "BT": 1}
        x, rep = solve_stokes(system, pc)
        assert rep.converged
        applies = pc.apply_counts["Sinv"]
        assert applies >= rep.iterations
        assert pc.apply_counts["Ainv"] == 2 * applies
        assert pc.apply_counts["B"] == applies
        assert pc.apply_counts["BT"] == applies

    def test_exact_blocks_give_immediate_convergence(self):
        prob = poiseuille_problem(n=2)
        system = assemble_stokes(prob, mesh_hierarchy(prob, 1)[-1])
        n_u = system.velocity_space.num_dofs
        A = system.K[:n_u, :n_u].toarray()
        B = system.K[n_u:, :n_u].toarray()
        A_inv = np.linalg.inv(A)
        schur_inv = np.linalg.inv(B @ A_inv @ B.T)
        pc = build_fbf(system, lambda r: A_inv @ r,
                       schur_solve=lambda r: -schur_inv @ r)
        x, rep = solve_stokes(system, pc)
        assert rep.converged
        assert rep.iterations <= 3

    def test_dimension_mismatch(self):
        prob = poiseuille_problem(n=2)
        system = assemble_stokes(prob, mesh_hierarchy(prob, 1)[-1])
        wrong = build_velocity_hierarchy(poiseuille_problem(n=1), 1, "hmg")
        with pytest.raises(ValueError, match="velocity"):
            build_fbf(system, wrong)


class TestStationaryContraction:
    def test_two_level_cavity_contracts(self):
        prob = cavity_problem(n=2)
        h = build_hmg(prob, 1)
        system = h.levels[0].system
        K = system.K
        c = system.pressure_nullvector()
        free = np.setdiff1d(np.arange(system.n),
                            h.levels[0].dirichlet_dofs)
        rng = np.random.default_rng(5)
        e = np.zeros(system.n)
        e[free] = rng.standard_normal(free.size)
        e -= c * (c @ e)
        prev = np.linalg.norm(e)
        rho = None
        for _ in range(20):
            e = e - vcycle(h, K @ e)
            e -= c * (c @ e)
            cur = np.linalg.norm(e)
            rho = cur / prev
            prev = cur
        assert rho < 0.95


class TestSolveStokes:
    def test_hmg_matches_direct_solve(self):
        prob = cavity_problem(n=2)
        system, pc = build_solver(prob, 2, "hmg")
        x, rep = solve_stokes(system, pc)
        assert rep.converged
        assert rep.iterations <= 60
        ref = pinned_solve(system)
        n_u = system.velocity_space.num_dofs
        assert np.abs(x[:n_u] - ref[:n_u]).max() <= 1e-7
        dp = x[n_u:] - ref[n_u:]
        assert np.abs(dp - dp.mean()).max() <= 1e-6  # pressure up to a constant

    def test_deterministic_reruns(self):
        prob = cavity_problem(n=2)
        s1, pc1 = build_solver(prob, 1, "hmg")
        x1, r1 = solve_stokes(s1, pc1)
        s2, pc2 = build_solver(prob, 1, "hmg")
        x2, r2 = solve_stokes(s2, pc2)
        assert r1.iterations == r2.iterations
        assert np.array_equal(x1, x2)

    def test_gradual_and_direct_converge_high_order(self):
        prob = lid_driven_cavity(1, 6)
        its = {}
        for solver in ("phmg-direct", "phmg-gradual"):
            system, pc = build_solver(prob, 1, solver)
            x, rep = solve_stokes(system, pc)
            assert rep.converged
            its[solver] = rep.iterations
        assert max(its.values()) < 80

    def test_sv_solver_runs(self):
        prob = lid_driven_cavity(1, 3, family="sv")
        system, pc = build_solver(prob, 1, "phmg-direct")
        x, rep = solve_stokes(system, pc)
        assert rep.converged

    def test_fbf_variants_run(self):
        prob = lid_driven_cavity(1, 3)
        for solver in ("fbf-hmg", "fbf-phmg"):
            system, pc = build_solver(prob, 1, solver)
            assert isinstance(pc, FBFPreconditioner)
            x, rep = solve_stokes(system, pc)
            assert rep.converged

    def test_unknown_solver_name(self):
        prob = cavity_problem(n=2)
        with pytest.raises(ValueError, match="unknown solver"):
            build_solver(prob, 1, "amg")

    def test_make_apply_dispatch(self):
        prob = cavity_problem(n=2)
        h = build_hmg(prob, 1)
        assert isinstance(h, MGHierarchy)
        apply_h = make_apply(h)
        b = np.zeros(h.levels[0].n)
        assert np.all(apply_h(b) == 0.0)
        passthrough = make_apply(lambda v: v)
        assert passthrough(b) is b
        with pytest.raises(TypeError, match="preconditioner"):
            make_apply(42)
