import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from trimquad.assembly import assemble_mass
from trimquad.cases import build_space, make_case
from trimquad.projection import (
    ConditioningError,
    ProjectionProblem,
    assemble_rhs,
    default_target,
    l2_error,
    project,
    run_convergence_study,
    solve_spd,
)
from trimquad.quadrature import gauss_legendre
from trimquad.splines import TensorBasis2D, make_uniform_basis
from trimquad.trimming import classify_elements


def untrimmed_space(nel, p):
    basis = make_uniform_basis(nel, p)
    basis2d = TensorBasis2D(basis, basis)
    return basis2d, classify_elements(basis2d, [])


class TestRHS:
    def test_constant_target_integrates_valid_area(self):
        ones = lambda P: np.ones(np.atleast_2d(P).shape[0])
        for name in ("line", "circle", "corner"):
            case = make_case(name)
            basis2d, config = build_space(case, 10, 3)
            b = assemble_rhs(ProjectionProblem(ones, basis2d, config))
            assert abs(b.sum() - case.analytic_area) <= 1e-8

    def test_separable_target_factorizes(self):
        # on an untrimmed square the loads are products of 1-D quadratures
        basis2d, config = untrimmed_space(6, 2)
        b = assemble_rhs(ProjectionProblem(default_target, basis2d, config))
        basis = basis2d.dir[0]
        rule = gauss_legendre(basis.p + 2)
        bp = basis.breakpoints
        b_sin = np.zeros(basis.n)
        b_cos = np.zeros(basis.n)
        for e in range(basis.num_elements):
            x, w = rule.mapped(bp[e], bp[e + 1])
            C = basis.collocation(x)
            b_sin += C.T @ (w * np.sin(2 * x))
            b_cos += C.T @ (w * np.cos(3 * x))
        expect = np.outer(b_sin, b_cos).ravel()
        assert np.max(np.abs(b - expect)) <= 1e-12

    def test_spline_target_is_reproduced(self):
        # a random member of the trimmed space projects onto itself
        rng = np.random.default_rng(12)
        basis2d, config = build_space(make_case("line"), 8, 2)
        b1, b2 = basis2d.dir
        coeffs = rng.standard_normal((b1.n, b2.n))

        def spline(P):
            P = np.atleast_2d(P)
            C1 = b1.collocation(P[:, 0])
            C2 = b2.collocation(P[:, 1])
            return np.einsum("ki,kj,ij->k", C1, C2, coeffs)

        prob = ProjectionProblem(spline, basis2d, config, strategy="hybrid")
        x, M, _ = project(prob)
        err = l2_error(x, prob, active=M.active)
        assert err <= 1e-12


class TestSolver:
    def test_identity(self):
        b = np.array([3.0, -1.0, 2.0])
        x = solve_spd(sp.eye(3, format="csr"), b)
        np.testing.assert_allclose(x, b, atol=1e-15)

    def test_hand_solved_two_by_two(self):
        M = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        x = solve_spd(sp.csr_matrix(M), np.array([0.5, 0.5]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-13)

    def test_random_spd_residual(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((50, 50))
        A = B @ B.T + 50 * np.eye(50)
        b = rng.standard_normal(50)
        stats = {}
        x = solve_spd(sp.csr_matrix(A), b, stats=stats)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-13
        assert stats["residual"] <= 1e-13

    def test_indefinite_rejected(self):
        A = np.diag([1.0, -2.0, 3.0])
        with pytest.raises(ValueError):
            solve_spd(sp.csr_matrix(A), np.ones(3))
        A = np.array([[1.0, 4.0], [4.0, 1.0]])  # positive diagonal, indefinite
        with pytest.raises(ValueError):
            solve_spd(sp.csr_matrix(A), np.ones(2))

    def test_condition_guard_warns(self):
        # nearly parallel rows: the scaled system is ill-conditioned even
        # though the raw diagonal grading is removed
        corr = 1.0 - 1e-13
        A = sp.csr_matrix(np.array([[1.0, corr * 1e-7], [corr * 1e-7, 1e-14]]))
        with warnings.catch_warnings(record=True) as log:
            warnings.simplefilter("always")
            solve_spd(A, np.array([1.0, 1e-7]))
        assert any("condition estimate" in str(w.message) for w in log)

    def test_cg_path_matches_direct(self):
        import trimquad.projection as proj

        rng = np.random.default_rng(9)
        B = rng.standard_normal((40, 40))
        A = sp.csr_matrix(B @ B.T + 40 * np.eye(40))
        b = rng.standard_normal(40)
        x_direct = solve_spd(A, b)
        limit = proj.DIRECT_LIMIT
        proj.DIRECT_LIMIT = 10
        try:
            x_cg = solve_spd(A, b)
        finally:
            proj.DIRECT_LIMIT = limit
        assert np.linalg.norm(A @ x_cg - b) / np.linalg.norm(b) <= 1e-13
        np.testing.assert_allclose(x_cg, x_direct, atol=1e-10)


class TestErrorMeasure:
    def test_reproduction_error_is_rounding(self):
        basis2d, config = build_space(make_case("circle"), 8, 2)
        prob = ProjectionProblem(default_target, basis2d, config)
        x, M, b = project(prob)
        # residual orthogonality: Galerkin proxy
        r = M.data @ x - b
        assert np.linalg.norm(r) <= 1e-12 * np.linalg.norm(b)

    def test_zero_denominator_raises(self):
        basis2d, config = build_space(make_case("line"), 5, 1)
        zero = lambda P: np.zeros(np.atleast_2d(P).shape[0])
        prob = ProjectionProblem(zero, basis2d, config)
        with pytest.raises(ValueError):
            l2_error(np.zeros(config.active_functions().shape[0]), prob)

    def test_untrimmed_quadratic_rate(self):
        basis_errors = []
        for nel in (5, 10, 20, 40):
            basis2d, config = untrimmed_space(nel, 2)
            prob = ProjectionProblem(default_target, basis2d, config)
            x, M, _ = project(prob)
            basis_errors.append(l2_error(x, prob, active=M.active))
        rate = math.log(basis_errors[-2] / basis_errors[-1]) / math.log(2)
        assert abs(rate - 3.0) <= 0.2


class TestConvergenceStudy:
    def test_line_p3_rate_and_agreement(self):
        records = run_convergence_study(
            "line", ["reference", "hybrid", "dwq"], [3], [5, 10, 20, 40]
        )
        by = {}
        for r in records:
            by.setdefault(r.strategy, []).append(r)
        for strategy, recs in by.items():
            recs = sorted(recs, key=lambda r: r.mesh)
            assert abs(recs[-1].rate - 4.0) <= 0.2, strategy
            errs = [r.l2_rel for r in recs]
            assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))  # monotone
        ref = {r.mesh: r.l2_rel for r in by["reference"]}
        for strategy in ("hybrid", "dwq"):
            for r in by[strategy]:
                assert abs(r.l2_rel - ref[r.mesh]) <= 1e-10

    def test_strategy_independence_of_coefficients(self):
        basis2d, config = build_space(make_case("circle"), 10, 2)
        prob = ProjectionProblem(default_target, basis2d, config)
        b = assemble_rhs(prob)
        xs = {}
        for s in ("reference", "hybrid", "dwq"):
            M = assemble_mass(basis2d, config, strategy=s)
            xs[s] = solve_spd(M, b)
        for s in ("hybrid", "dwq"):
            assert np.max(np.abs(xs[s] - xs["reference"])) <= 1e-9
