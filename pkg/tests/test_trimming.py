import numpy as np
import pytest

from trimquad.cases import CORNER_CONTROL_POINTS, build_space, make_case
from trimquad.splines import Basis1D, TensorBasis2D, make_uniform_basis, make_uniform_knots
from trimquad.trimming import (
    BezierTrim,
    CircleTrim,
    ElementClass,
    LineTrim,
    TrimmingConfigurationError,
    classify_elements,
    classify_point,
    cut_cell_quadrature,
    decompose_cut_element,
    intersect_edge,
)


def winding_oracle(curve, points, closure, samples=4096):
    """Even-odd parity against a densely sampled closed polygon.

    The open trimming curve is closed into the boundary of the *invalid*
    region by appending the ``closure`` vertices (a walk along the domain
    boundary); a horizontal-ray crossing count then classifies each point.
    Fully independent of the library's classification path.
    """
    poly = np.vstack([curve.sample(samples), np.atleast_2d(closure)])
    a = poly
    b = np.roll(poly, -1, axis=0)
    points = np.atleast_2d(points)
    out = np.empty(points.shape[0], dtype=bool)
    dy = b[:, 1] - a[:, 1]
    for k, (x, y) in enumerate(points):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (y - a[:, 1]) / dy
        xs = a[:, 0] + t * (b[:, 0] - a[:, 0])
        crossing = (dy != 0) & (t >= 0) & (t < 1) & (xs > x)
        inside_invalid = crossing.sum() % 2 == 1
        out[k] = not inside_invalid
    return out


class TestClassifyPoint:
    def test_line_half_plane(self):
        curve = make_case("line").curve()
        assert classify_point([curve], (0.5, 0.2))
        assert not classify_point([curve], (0.5, 0.9))

    def test_circle_radius(self):
        curve = CircleTrim((0.0, 0.0), 0.8)
        assert not classify_point([curve], (0.9, 0.0))
        assert classify_point([curve], (0.5, 0.5))

    def test_on_curve_counts_as_inside(self):
        curve = CircleTrim((0.0, 0.0), 0.8)
        assert classify_point([curve], (0.8, 0.0))

    def test_bezier_against_winding_oracle(self):
        curve = make_case("corner").curve()
        rng = np.random.default_rng(42)
        pts = rng.uniform(0.0, 1.0, size=(10_000, 2))
        # exclude the polyline's own uncertainty band around the curve
        dense = curve.sample(4096)
        d2 = np.min(
            (pts[:, None, 0] - dense[None, ::8, 0]) ** 2
            + (pts[:, None, 1] - dense[None, ::8, 1]) ** 2,
            axis=1,
        )
        keep = d2 > (5e-3) ** 2
        pts = pts[keep]
        ours = curve.is_inside(pts)
        # the invalid corner region is closed off via the (1, 1) corner
        oracle = winding_oracle(curve, pts, closure=[(1.0, 1.0)])
        assert np.array_equal(ours, oracle)


class TestIntersectEdge:
    def test_line_linear_closed_form(self):
        curve = make_case("line").curve()
        hits = intersect_edge(curve, "v", 0.25, 0.0, 1.0)
        assert len(hits) == 1
        assert abs(hits[0].coord - 0.37) <= 1e-15

    def test_circle_closed_form(self):
        curve = CircleTrim((0.0, 0.0), 0.8)
        hits = intersect_edge(curve, "h", 0.6, 0.5, 0.7)
        assert len(hits) == 1
        assert abs(hits[0].coord - np.sqrt(0.28)) <= 1e-12

    def test_no_intersection_is_empty(self):
        curve = CircleTrim((0.0, 0.0), 0.8)
        assert intersect_edge(curve, "v", 0.9, 0.0, 0.3) == []

    def test_bezier_residual_below_tolerance(self):
        curve = make_case("corner").curve()
        for level in (0.45, 0.62, 0.71):
            for hit in intersect_edge(curve, "v", level, 0.0, 1.0):
                assert abs(float(curve.evaluate(hit.t)[0]) - level) <= 1e-12

    def test_tangential_touch_is_flagged(self):
        curve = CircleTrim((0.0, 0.0), 0.8)
        hits = curve.intersect_line("v", 0.8)
        # grazing contact at the arc start is filtered from crossings
        assert all(
            h.tangential for h in intersect_edge(curve, "v", 0.8, -0.1, 0.1)
        ) or len(intersect_edge(curve, "v", 0.8, -0.1, 0.1)) == 0


class TestClassifyElements:
    def test_untrimmed_all_interior(self):
        basis = make_uniform_basis(5, 2)
        config = classify_elements(TensorBasis2D(basis, basis), [])
        assert np.all(config.element_class == ElementClass.INTERIOR)
        assert np.all(config.func_class == ElementClass.INTERIOR)
        assert config.u_disc[0].size == 0 and config.u_disc[1].size == 0

    def test_line_rows(self):
        basis2d, config = build_space(make_case("line"), 10, 1)
        cls = config.element_class
        # 0.37 lies in element row 3: below interior, above exterior
        assert np.all(cls[:, :3] == ElementClass.INTERIOR)
        assert np.all(cls[:, 3] == ElementClass.CUT)
        assert np.all(cls[:, 4:] == ElementClass.EXTERIOR)
        np.testing.assert_allclose(config.u_disc[1], [0.3])
        assert config.u_disc[0].size == 0

    def test_trichotomy_and_circle_annulus(self):
        basis2d, config = build_space(make_case("circle"), 10, 2)
        cls = config.element_class
        n_int = int(np.sum(cls == ElementClass.INTERIOR))
        n_cut = int(np.sum(cls == ElementClass.CUT))
        n_ext = int(np.sum(cls == ElementClass.EXTERIOR))
        assert n_int + n_cut + n_ext == cls.size
        assert n_cut > 0
        # brute-force dense-sampling oracle per element
        rng = np.random.default_rng(1)
        curve = config.curves[0]
        for e1 in range(10):
            for e2 in range(10):
                x0, x1, y0, y1 = config.element_bounds(e1, e2)
                pts = np.column_stack([
                    rng.uniform(x0, x1, 200), rng.uniform(y0, y1, 200)
                ])
                inside = curve.is_inside(pts)
                if inside.all():
                    # tiny invalid slivers can hide from 200 samples
                    assert cls[e1, e2] in (ElementClass.INTERIOR, ElementClass.CUT)
                elif not inside.any():
                    assert cls[e1, e2] in (ElementClass.EXTERIOR, ElementClass.CUT)
                else:
                    assert cls[e1, e2] == ElementClass.CUT

    def test_cut_annulus_is_connected(self):
        basis2d, config = build_space(make_case("circle"), 12, 1)
        cut = np.argwhere(config.element_class == ElementClass.CUT)
        # each cut element has a cut neighbour (8-connectivity)
        for e in cut:
            d = np.max(np.abs(cut - e), axis=1)
            assert np.sum(d <= 1) >= 2

    def test_function_classification_measure(self):
        # cut functions have strictly partial valid support (Monte Carlo)
        basis2d, config = build_space(make_case("circle"), 8, 2)
        rng = np.random.default_rng(3)
        b1, b2 = basis2d.dir
        cut_funcs = np.argwhere(config.func_class == ElementClass.CUT)
        sel = cut_funcs[rng.permutation(len(cut_funcs))[:50]]
        curve = config.curves[0]
        for i1, i2 in sel:
            lo1, hi1 = b1.support_interval(int(i1))
            lo2, hi2 = b2.support_interval(int(i2))
            pts = np.column_stack([
                rng.uniform(lo1, hi1, 100_000), rng.uniform(lo2, hi2, 100_000)
            ])
            frac = float(np.mean(config.is_inside(pts)))
            if frac in (0.0, 1.0):
                # a sliver thinner than the sample resolution (the circle
                # grazes some grid nodes by ~4e-4): confirm deterministically
                # that the support straddles the curve
                gx = np.linspace(lo1, hi1, 60)
                gy = np.linspace(lo2, hi2, 60)
                G = np.column_stack([np.repeat(gx, 60), np.tile(gy, 60)])
                sdg = curve.signed_distance(G)
                assert sdg.max() > -1e-12 and sdg.min() < 1e-12
            else:
                assert 0.0 < frac < 1.0

    def test_u_disc_adjacent_to_cut_elements(self):
        for name in ("line", "circle", "corner"):
            basis2d, config = build_space(make_case(name), 10, 2)
            cls = config.element_class
            for d in (0, 1):
                bp = basis2d.dir[d].breakpoints
                for u in config.u_disc[d]:
                    k = int(np.argmin(np.abs(bp - u)))
                    assert abs(bp[k] - u) <= 1e-12
                    sl_lo = cls[k - 1, :] if d == 0 else cls[:, k - 1]
                    sl_hi = cls[k, :] if d == 0 else cls[:, k]
                    assert np.any(
                        (sl_lo == ElementClass.CUT) | (sl_hi == ElementClass.CUT)
                    )

    def test_floating_curve_is_rejected(self):
        # a short arc strictly inside one element crosses no grid line
        basis = make_uniform_basis(2, 1)
        curve = CircleTrim((0.25, 0.25), 0.1, 0.0, 0.4)
        with pytest.raises(TrimmingConfigurationError):
            classify_elements(TensorBasis2D(basis, basis), [curve])

    def test_dwq_eligibility_line_case(self):
        basis2d, config = build_space(make_case("line"), 10, 3)
        cut_funcs = np.argwhere(config.func_class == ElementClass.CUT)
        assert len(cut_funcs) > 0
        for i1, i2 in cut_funcs:
            info = config.dwq_info(int(i1), int(i2))
            assert info.eligible
            assert info.u_disc[0] is None  # single discontinuity, one direction

    def test_dwq_eligibility_circle_has_fallbacks(self):
        basis2d, config = build_space(make_case("circle"), 10, 3)
        cut_funcs = np.argwhere(config.func_class == ElementClass.CUT)
        flags = [config.dwq_info(int(i1), int(i2)).eligible for i1, i2 in cut_funcs]
        assert any(flags)
        assert not all(flags)

    def test_dwq_box_is_all_interior(self):
        for name in ("line", "circle", "corner"):
            basis2d, config = build_space(make_case(name), 10, 2)
            cls = config.element_class
            for i1, i2 in np.argwhere(config.func_class == ElementClass.CUT):
                info = config.dwq_info(int(i1), int(i2))
                if info.box is None:
                    continue
                (a1, b1), (a2, b2) = info.box
                assert np.all(
                    cls[a1 : b1 + 1, a2 : b2 + 1] == ElementClass.INTERIOR
                )
                reg, cut = config.support_split(int(i1), int(i2))
                boxed = {
                    (e1, e2) for e1 in range(a1, b1 + 1) for e2 in range(a2, b2 + 1)
                }
                assert boxed | set(info.residual) == set(reg)


class TestDecomposition:
    def test_straight_cut_is_exact_and_lean(self):
        curve = make_case("line").curve()
        cells = decompose_cut_element((0.3, 0.5, 0.3, 0.4), curve, 3)
        assert 1 <= len(cells) <= 2
        area = sum(c.weights.sum() for c in cells)
        assert abs(area - 0.2 * 0.07) <= 1e-14

    def test_circle_segment_area_convergence(self):
        # decomposition error of one curved cell falls at order q+1 or better
        curve = CircleTrim((0.0, 0.0), 0.8)
        q = 2
        errs = []
        for h in (0.2, 0.1, 0.05):
            x0 = 0.5
            bounds = (x0, x0 + h, np.sqrt(0.64 - (x0 + h) ** 2), np.sqrt(0.64 - x0**2))
            cells = decompose_cut_element(bounds, curve, q)
            area = sum(c.weights.sum() for c in cells)
            # analytic circular-segment area inside the box
            x1 = x0 + h
            y0, y1 = bounds[2], bounds[3]
            seg = lambda x: 0.5 * (x * np.sqrt(0.64 - x * x) + 0.64 * np.arcsin(x / 0.8))
            exact = (seg(x1) - seg(x0)) - y0 * h
            errs.append(abs(area - exact))
        rate = np.log(errs[0] / errs[2]) / np.log(4.0)
        assert rate >= q + 1 - 0.3

    def test_corner_snapping_emits_degenerate_free_cells(self):
        # one crossing lies within the snap tolerance of the (0.4, 0.5)
        # corner and collapses onto it; no sliver cell may remain
        curve = LineTrim((0.4 + 2e-12, 0.5), (0.4, 0.45))
        cells = decompose_cut_element((0.4, 0.6, 0.3, 0.5), curve, 2)
        area = sum(c.weights.sum() for c in cells)
        assert abs(area - 0.2 * 0.2) <= 1e-12  # the cut sliver has zero area
        assert all(np.all(c.weights > 0) for c in cells)

    def test_multi_crossing_recursion(self):
        # the corner curve's wiggle crosses a vertical band three times
        curve = make_case("corner").curve()
        bounds = (0.6, 0.65, 0.4, 0.5)
        cells = decompose_cut_element(bounds, curve, 2)
        assert cells, "decomposition produced no cells"
        assert all(np.all(c.weights > 0.0) for c in cells)

    def test_jacobians_positive_everywhere(self):
        for name in ("circle", "corner"):
            basis2d, config = build_space(make_case(name), 8, 3)
            rule = config.cut_cell_rule(3)
            for pts, wts in rule.rules.values():
                assert np.all(wts > 0.0)


class TestCutCellQuadrature:
    def test_circle_quarter_area(self):
        basis2d, config = build_space(make_case("circle"), 10, 4)
        rule = config.cut_cell_rule(4)
        area = sum(w.sum() for _, w in rule.rules.values())
        area += len(config.interior_elements) * 0.01
        assert abs(area - 0.25 * np.pi * 0.64) <= 1e-8

    def test_line_area_exact(self):
        basis2d, config = build_space(make_case("line"), 10, 3)
        rule = config.cut_cell_rule(3)
        area = sum(w.sum() for _, w in rule.rules.values())
        area += len(config.interior_elements) * 0.01
        assert abs(area - 0.37) <= 1e-14

    def test_all_points_inside_valid_region(self):
        for name in ("line", "circle", "corner"):
            basis2d, config = build_space(make_case(name), 10, 3)
            rule = config.cut_cell_rule(3)
            pts = rule.all_points()
            curve = config.curves[0]
            sd = curve.signed_distance(pts)
            assert float(sd.min()) >= -1e-10

    def test_corner_area_convergence_rate(self):
        # Richardson-style: compare against the divergence-theorem area
        case = make_case("corner")
        errs = []
        for nel in (5, 10, 20):
            basis2d, config = build_space(case, nel, 2)
            rule = config.cut_cell_rule(2)
            area = sum(w.sum() for _, w in rule.rules.values())
            area += len(config.interior_elements) / nel**2
            errs.append(abs(area - case.analytic_area))
        rate = np.log(errs[0] / errs[2]) / np.log(4.0)
        assert rate >= 3.0 - 0.3  # q + 1 with q = 2

    def test_complement_completes_element_area(self):
        # flipping the orientation swaps valid and invalid: the two cut-cell
        # rules together recover every cut element's full area
        case = make_case("circle")
        basis2d, config = build_space(case, 8, 3)
        flipped = CircleTrim((0.0, 0.0), 0.8, 0.5 * np.pi, 0.0)
        rule = config.cut_cell_rule(3)
        h2 = (1 / 8) ** 2
        for (e1, e2), (pts, wts) in rule.rules.items():
            bounds = config.element_bounds(e1, e2)
            cells = decompose_cut_element(bounds, flipped, 3)
            outside = sum(c.weights.sum() for c in cells)
            assert abs(wts.sum() + outside - h2) <= 1e-9

    def test_q_out_of_range(self):
        basis2d, config = build_space(make_case("line"), 5, 2)
        with pytest.raises(ValueError):
            cut_cell_quadrature(config, 7)
        with pytest.raises(ValueError):
            cut_cell_quadrature(config, 0)
