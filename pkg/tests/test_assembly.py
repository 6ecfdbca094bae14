import numpy as np
import pytest
import scipy.sparse as sp

from trimquad.assembly import (
    CoefficientField,
    FormationReport,
    assemble_mass,
    form_with_timings,
    sum_factor_op_count,
    sum_factor_row,
)
from trimquad.cases import build_space, make_case
from trimquad.quadrature import compute_wq_rules, mass_matrix_1d, place_wq_points
from trimquad.splines import Basis1D, KnotVector, TensorBasis2D, make_uniform_basis
from trimquad.trimming import ElementClass, classify_elements


def untrimmed_space(nel, p):
    basis = make_uniform_basis(nel, p)
    basis2d = TensorBasis2D(basis, basis)
    return basis2d, classify_elements(basis2d, [])


def rel_frobenius(A, B):
    return float(sp.linalg.norm(A.data - B.data) / sp.linalg.norm(B.data))


class TestUntrimmed:
    def test_single_element_hats_kronecker(self):
        b = Basis1D(KnotVector([0, 0, 1, 1], 1))
        basis2d = TensorBasis2D(b, b)
        config = classify_elements(basis2d, [])
        M = assemble_mass(basis2d, config, strategy="reference")
        A1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        np.testing.assert_allclose(M.toarray(), np.kron(A1, A1), atol=1e-15)

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_separable_kronecker_structure(self, p):
        basis2d, config = untrimmed_space(6, p)
        M = assemble_mass(basis2d, config, strategy="reference")
        M1 = mass_matrix_1d(basis2d.dir[0])
        assert np.max(np.abs(M.toarray() - np.kron(M1, M1))) <= 1e-14

    @pytest.mark.parametrize("strategy", ["wq", "hybrid", "dwq"])
    def test_fast_strategies_match_reference(self, strategy):
        basis2d, config = untrimmed_space(7, 3)
        ref = assemble_mass(basis2d, config, strategy="reference")
        M = assemble_mass(basis2d, config, strategy=strategy)
        assert rel_frobenius(M, ref) <= 1e-12

    def test_hybrid_equals_wq_when_untrimmed(self):
        # without cut functions, both run the identical interior branch
        basis2d, config = untrimmed_space(5, 2)
        Mh = assemble_mass(basis2d, config, strategy="hybrid")
        Mw = assemble_mass(basis2d, config, strategy="wq")
        assert (Mh.data != Mw.data).nnz == 0

    def test_constant_coefficient_scales(self):
        basis2d, config = untrimmed_space(5, 2)
        M1 = assemble_mass(basis2d, config, strategy="reference")
        c = CoefficientField(lambda P: np.full(np.atleast_2d(P).shape[0], 2.5))
        M2 = assemble_mass(basis2d, config, coeff=c, strategy="reference")
        assert np.max(np.abs(M2.toarray() - 2.5 * M1.toarray())) <= 1e-14


class TestSumFactorRow:
    def _setup(self, nel=6, p=2):
        basis2d, config = untrimmed_space(nel, p)
        b1, b2 = basis2d.dir
        r1 = compute_wq_rules(b1, place_wq_points(b1), direction=0)
        r2 = compute_wq_rules(b2, place_wq_points(b2), direction=1)
        c1 = b1.collocation(r1.layout.points)
        c2 = b2.collocation(r2.layout.points)
        grid = np.ones((r1.layout.num_points, r2.layout.num_points))
        return basis2d, r1, r2, c1, c2, grid

    def test_row_matches_kronecker(self):
        basis2d, r1, r2, c1, c2, grid = self._setup()
        M1 = mass_matrix_1d(basis2d.dir[0])
        n = basis2d.dir[0].n
        for i1, i2 in [(0, 0), (3, 4), (n - 1, 2)]:
            j1lo, j2lo, blk = sum_factor_row(i1, i2, r1, r2, c1, c2, grid)
            expect = np.outer(
                M1[i1, j1lo : j1lo + blk.shape[0]], M1[i2, j2lo : j2lo + blk.shape[1]]
            )
            assert np.max(np.abs(blk - expect)) <= 1e-12

    def test_contraction_order_is_immaterial(self):
        basis2d, r1, r2, c1, c2, grid = self._setup(7, 3)
        for i1, i2 in [(2, 5), (4, 4)]:
            _, _, blk = sum_factor_row(i1, i2, r1, r2, c1, c2, grid)
            # swap the roles of the two directions and transpose back
            _, _, blk_T = sum_factor_row(i2, i1, r2, r1, c2, c1, grid.T)
            assert np.max(np.abs(blk - blk_T.T)) <= 1e-13

    def test_boundary_row_structural_zeros(self):
        basis2d, r1, r2, c1, c2, grid = self._setup()
        j1lo, j2lo, blk = sum_factor_row(0, 0, r1, r2, c1, c2, grid)
        assert j1lo == 0 and j2lo == 0
        p = basis2d.degrees[0]
        assert blk.shape == (p + 1, p + 1)  # only overlapping trials appear

    def test_operation_count_scales_cubically(self):
        # per-row cost must stay O(p^3): bounded ops/p^3 across degrees
        ratios = []
        for p in range(1, 7):
            basis2d, r1, r2, *_ = self._setup(12, p)
            n = basis2d.dir[0].n
            i = n // 2
            ratios.append(sum_factor_op_count(i, i, r1, r2) / p**3)
        assert max(ratios) / min(ratios) <= 6.0

    def test_point_box_restriction_matches_mask(self):
        basis2d, r1, r2, c1, c2, grid = self._setup(6, 2)
        i1, i2 = 3, 3
        k2, w2 = r2.row(i2)
        cutoff = k2 + w2.size // 2
        _, _, blk_box = sum_factor_row(
            i1, i2, r1, r2, c1, c2, grid,
            point_box=(0, grid.shape[0], 0, cutoff),
        )
        k1, w1 = r1.row(i1)
        mask = np.zeros((w1.size, w2.size))
        mask[:, : cutoff - k2] = 1.0
        _, _, blk_mask = sum_factor_row(i1, i2, r1, r2, c1, c2, grid, mask=mask)
        assert np.max(np.abs(blk_box - blk_mask)) <= 1e-15


CASES = ("line", "circle", "corner")


class TestTrimmedEquivalence:
    @pytest.mark.parametrize("name", CASES)
    @pytest.mark.parametrize("nel", [5, 10, 20])
    def test_hybrid_and_dwq_match_reference(self, name, nel):
        degrees = (1, 2, 3, 4, 5, 6) if nel <= 10 else (1, 3, 6)
        for p in degrees:
            basis2d, config = build_space(make_case(name), nel, p)
            ref = assemble_mass(basis2d, config, strategy="reference")
            for strategy in ("hybrid", "dwq"):
                M = assemble_mass(basis2d, config, strategy=strategy)
                assert rel_frobenius(M, ref) <= 1e-12, (name, nel, p, strategy)

    def test_wq_failure_band_line_case(self):
        for p in range(1, 7):
            basis2d, config = build_space(make_case("line"), 10, p)
            ref = assemble_mass(basis2d, config, strategy="reference")
            M = assemble_mass(basis2d, config, strategy="wq")
            dev = float(sp.linalg.norm(M.data - ref.data))
            assert 1e-6 <= dev <= 1e-2, (p, dev)

    def test_wq_failure_is_localized_to_cut_rows(self):
        basis2d, config = build_space(make_case("line"), 10, 3)
        ref = assemble_mass(basis2d, config, strategy="reference")
        M = assemble_mass(basis2d, config, strategy="wq")
        diff = (M.data - ref.data).toarray()
        fclass = config.func_class[M.active[:, 0], M.active[:, 1]]
        interior_rows = fclass == ElementClass.INTERIOR
        # asymmetry: rows of interior tests pick up the cut-column errors
        # only through symmetrization, so compare the unsymmetrized halves
        half = diff[np.ix_(interior_rows, interior_rows)]
        assert np.max(np.abs(half)) <= 1e-12
        assert np.max(np.abs(diff)) > 1e-6

    @pytest.mark.parametrize("name", CASES)
    def test_sparsity_pattern_identical(self, name):
        basis2d, config = build_space(make_case(name), 8, 2)
        mats = [
            assemble_mass(basis2d, config, strategy=s)
            for s in ("reference", "wq", "hybrid", "dwq")
        ]
        base = mats[0].data
        for M in mats[1:]:
            assert np.array_equal(M.data.indptr, base.indptr)
            assert np.array_equal(M.data.indices, base.indices)

    @pytest.mark.parametrize("name", CASES)
    def test_symmetry(self, name):
        basis2d, config = build_space(make_case(name), 8, 3)
        for s in ("reference", "wq", "hybrid", "dwq"):
            M = assemble_mass(basis2d, config, strategy=s)
            assert M.asymmetry() <= 1e-12 * sp.linalg.norm(M.data)

    @pytest.mark.parametrize("name", CASES)
    def test_positive_definite_after_scaling(self, name):
        for p in (1, 2, 3):
            basis2d, config = build_space(make_case(name), 5, p)
            M = assemble_mass(basis2d, config, strategy="reference")
            A = M.toarray()
            s = 1.0 / np.sqrt(np.diag(A))
            np.linalg.cholesky(0.5 * (A + A.T) * np.outer(s, s))

    def test_line_row_sums_match_independent_integrals(self):
        # row sums of M equal the loads of f == 1 by partition of unity
        from trimquad.projection import ProjectionProblem, assemble_rhs

        basis2d, config = build_space(make_case("line"), 10, 2)
        M = assemble_mass(basis2d, config, strategy="reference")
        ones = lambda P: np.ones(np.atleast_2d(P).shape[0])
        b = assemble_rhs(ProjectionProblem(ones, basis2d, config))
        np.testing.assert_allclose(
            np.asarray(M.data.sum(axis=1)).ravel(), b, atol=1e-12
        )

    def test_dwq_eligibility_census(self):
        basis2d, config = build_space(make_case("line"), 10, 2)
        cut = np.argwhere(config.func_class == ElementClass.CUT)
        assert all(config.dwq_info(int(a), int(b)).eligible for a, b in cut)
        basis2d, config = build_space(make_case("circle"), 10, 4)
        cut = np.argwhere(config.func_class == ElementClass.CUT)
        flags = [config.dwq_info(int(a), int(b)).eligible for a, b in cut]
        assert any(flags) and not all(flags)

    def test_parallel_mode_matches_serial(self):
        basis2d, config = build_space(make_case("circle"), 8, 3)
        for s in ("hybrid", "dwq"):
            M1 = assemble_mass(basis2d, config, strategy=s, parallel=False)
            M2 = assemble_mass(basis2d, config, strategy=s, parallel=True)
            assert np.max(np.abs((M1.data - M2.data).toarray())) == 0.0


class TestFormationReport:
    def test_reference_weight_setup_is_free(self):
        basis2d, config = build_space(make_case("line"), 8, 2)
        _, rep = form_with_timings("reference", basis2d, config)
        assert rep.t_weights <= 1e-3
        assert rep.n_wq_points == 0

    def test_components_add_up(self):
        basis2d, config = build_space(make_case("line"), 8, 3)
        for s in ("reference", "wq", "hybrid", "dwq"):
            _, rep = form_with_timings(s, basis2d, config)
            assert all(t >= 0 for t in rep.components())
            assert rep.t_total >= sum(rep.components()) - 1e-9
            assert rep.t_total <= sum(rep.components()) + 0.25 * rep.t_total + 0.05

    def test_gauss_footprint_grows_with_degree(self):
        # at degree 6 on a coarse mesh every interior element serves some
        # cut function in the hybrid strategy
        counts = {}
        for p in (2, 6):
            basis2d, config = build_space(make_case("circle"), 8, p)
            _, rep = form_with_timings("hybrid", basis2d, config)
            counts[p] = rep.n_gauss_elements
            if p == 6:
                assert rep.n_gauss_elements == len(config.interior_elements)
        assert counts[6] >= counts[2]
