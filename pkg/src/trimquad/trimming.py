"""Trimming curves, element/basis classification and cut-element quadrature.

A trimming curve is an oriented curve in the parameter space; the valid
region lies to the left of the curve.  Elements are classified as interior,
cut, or exterior; basis functions inherit a class from the elements of their
support.  Cut elements are integrated by decomposing their valid part into a
few mapped quadrilaterals/triangles with at most one curved edge each, then
placing tensor Gauss points through the sub-cell maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .quadrature import gauss_legendre
from .splines import TensorBasis2D

__all__ = [
    "ElementClass",
    "TrimmingCurve",
    "LineTrim",
    "CircleTrim",
    "BezierTrim",
    "Intersection",
    "intersect_edge",
    "classify_point",
    "TrimConfiguration",
    "classify_elements",
    "decompose_cut_element",
    "CutCellQuadrature",
    "cut_cell_quadrature",
    "TrimmingConfigurationError",
]

#: points closer to the curve than this are classified by the tangent side
ON_CURVE_TOL = 1e-12

#: corner snapping tolerance, relative to the element size
SNAP_REL_TOL = 1e-10

#: recursion limit for splitting cells with more than two boundary crossings
MAX_SPLIT_DEPTH = 4


class TrimmingConfigurationError(RuntimeError):
    """Raised for trimming layouts outside the supported catalog."""


class ElementClass(IntEnum):
    INTERIOR = 0
    CUT = 1
    EXTERIOR = 2


@dataclass(frozen=True)
class Intersection:
    """A curve/edge intersection: curve parameter, coordinate along the edge."""

    t: float
    coord: float
    point: tuple[float, float]
    tangential: bool = False


class TrimmingCurve:
    """Oriented curve; the valid domain lies to the left."""

    def evaluate(self, t) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t) -> np.ndarray:
        raise NotImplementedError

    def is_inside(self, points: np.ndarray) -> np.ndarray:
        """True for points in the valid (left) region; on-curve counts inside."""
        raise NotImplementedError

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the curve, positive on the valid side."""
        raise NotImplementedError

    def intersect_line(self, axis: str, level: float) -> list[tuple[float, float]]:
        """All ``(t, cross_coord)`` where the curve meets ``{axis}=level``.

        ``axis`` is ``'v'`` for a vertical line ``u1 = level`` (cross
        coordinate ``u2``) or ``'h'`` for a horizontal line.
        """
        raise NotImplementedError

    def sample(self, n: int = 257) -> np.ndarray:
        return self.evaluate(np.linspace(0.0, 1.0, n))


class LineTrim(TrimmingCurve):
    """Straight trimming segment from ``p0`` to ``p1``."""

    straight = True

    def __init__(self, p0, p1):
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        self.d = self.p1 - self.p0
        if np.hypot(*self.d) == 0.0:
            raise ValueError("degenerate line segment")

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return self.p0 + np.multiply.outer(t, self.d)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.d, t.shape + (2,)).copy()

    def signed_distance(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = points - self.p0
        return (self.d[0] * rel[:, 1] - self.d[1] * rel[:, 0]) / np.hypot(*self.d)

    def is_inside(self, points):
        return self.signed_distance(points) >= -ON_CURVE_TOL

    def intersect_line(self, axis, level):
        k = 0 if axis == "v" else 1
        if abs(self.d[k]) < 1e-15:
            return []
        t = (level - self.p0[k]) / self.d[k]
        if not (-1e-12 <= t <= 1 + 1e-12):
            return []
        t = min(max(t, 0.0), 1.0)
        return [(t, float(self.p0[1 - k] + t * self.d[1 - k]))]


class CircleTrim(TrimmingCurve):
    """Circular arc, parameterized by angle from ``theta0`` to ``theta1``.

    A counter-clockwise arc (``theta1 > theta0``) keeps the disc interior
    valid.
    """

    straight = False

    def __init__(self, center, radius, theta0=0.0, theta1=0.5 * np.pi):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.theta0 = float(theta0)
        self.theta1 = float(theta1)
        if self.radius <= 0 or self.theta0 == self.theta1:
            raise ValueError("degenerate circular arc")

    def _theta(self, t):
        return self.theta0 + np.asarray(t, dtype=float) * (self.theta1 - self.theta0)

    def evaluate(self, t):
        th = self._theta(t)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def derivative(self, t):
        th = self._theta(t)
        span = self.theta1 - self.theta0
        return self.radius * span * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def signed_distance(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dist = np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1])
        sign = 1.0 if self.theta1 > self.theta0 else -1.0
        return sign * (self.radius - dist)

    def is_inside(self, points):
        return self.signed_distance(points) >= -ON_CURVE_TOL

    def intersect_line(self, axis, level):
        k = 0 if axis == "v" else 1
        offset = level - self.center[k]
        if abs(offset) > self.radius + 1e-14:
            return []
        other = np.sqrt(max(self.radius**2 - offset**2, 0.0))
        tangential = abs(abs(offset) - self.radius) <= 1e-12
        hits = []
        for s in (other, -other):
            if axis == "v":
                th = np.arctan2(s, offset)
                cross = self.center[1] + s
            else:
                th = np.arctan2(offset, s)
                cross = self.center[0] + s
            span = self.theta1 - self.theta0
            t = (th - self.theta0) / span
            if -1e-12 <= t <= 1 + 1e-12:
                hits.append((min(max(t, 0.0), 1.0), float(cross), tangential))
        out = []
        seen = set()
        for t, c, tg in hits:
            key = round(c, 13)
            if key not in seen:
                seen.add(key)
                out.append((t, c) if not tg else (t, c, True))
        return [(h[0], h[1]) for h in out if len(h) == 2 or not h[2]]


class BezierTrim(TrimmingCurve):
    """Cubic Bezier trimming curve with endpoints on the domain boundary.

    Point classification uses ray casting: the segment from the query point
    to a known-valid anchor is intersected with the curve exactly (cubic
    roots) and the crossing parity decides the side.
    """

    straight = False

    def __init__(self, control_points, anchors=((0.05, 0.05), (0.08, 0.03), (0.03, 0.09))):
        self.ctrl = np.asarray(control_points, dtype=float)
        if self.ctrl.shape != (4, 2):
            raise ValueError("cubic Bezier needs 4 control points")
        # power-basis coefficients, highest degree first
        c0, c1, c2, c3 = self.ctrl
        self._pow = np.stack(
            [-c0 + 3 * c1 - 3 * c2 + c3, 3 * c0 - 6 * c1 + 3 * c2, -3 * c0 + 3 * c1, c0]
        )
        self.anchors = [np.asarray(a, dtype=float) for a in anchors]

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        a, b, c, d = self._pow
        tt = t[..., None]
        return a * tt**3 + b * tt**2 + c * tt + d

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        a, b, c, _ = self._pow
        tt = t[..., None]
        return 3 * a * tt**2 + 2 * b * tt + c

    def _nearest(self, point, samples=129, iters=30):
        """Nearest curve parameter via dense sampling plus Newton polish."""
        ts = np.linspace(0.0, 1.0, samples)
        pts = self.evaluate(ts)
        d2 = np.sum((pts - point) ** 2, axis=1)
        t = float(ts[np.argmin(d2)])
        a, b, c, _ = self._pow
        for _ in range(iters):
            g = self.evaluate(t) - point
            dg = self.derivative(t)
            ddg = 6 * a * t + 2 * b
            f = float(np.dot(g, dg))
            df = float(np.dot(dg, dg) + np.dot(g, ddg))
            if df <= 0:
                break
            step = f / df
            t_new = min(max(t - step, 0.0), 1.0)
            if abs(t_new - t) < 1e-15:
                t = t_new
                break
            t = t_new
        return t

    def signed_distance(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        inside = self.is_inside(points)
        for k, pt in enumerate(points):
            t = self._nearest(pt)
            dist = float(np.hypot(*(self.evaluate(t) - pt)))
            out[k] = dist if inside[k] else -dist
        return out

    def is_inside(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0], dtype=bool)
        for k, pt in enumerate(points):
            out[k] = self._classify_one(pt)
        return out

    def _classify_one(self, pt):
        for anchor in self.anchors:
            ok, inside = self._parity(pt, anchor)
            if ok:
                return inside
        # last resort: side of the tangent at the nearest curve point
        return self._tangent_side(pt)

    def _tangent_side(self, pt):
        t = self._nearest(pt)
        g = pt - self.evaluate(t)
        d = self.derivative(t)
        return d[0] * g[1] - d[1] * g[0] >= 0.0

    def _parity(self, pt, anchor):
        """Crossing parity of segment pt->anchor against the curve.

        Returns ``(trustworthy, inside)``; parity is untrustworthy when a
        crossing lands too close to the segment ends or two roots nearly
        coincide (grazing).
        """
        d = anchor - pt
        a, b, c, e = self._pow
        # f(t) = cross(d, curve(t) - pt), a cubic in t
        def cr(v):
            return d[0] * v[1] - d[1] * v[0]

        coeffs = np.array([cr(a), cr(b), cr(c), cr(e - pt)])
        roots = _real_roots(coeffs)
        if roots.size == 0:
            return True, True  # no crossing: same side as (valid) anchor
        ts = roots[(roots > -1e-12) & (roots < 1 + 1e-12)]
        if ts.size >= 2 and np.min(np.diff(np.sort(ts))) < 1e-8:
            return False, False
        crossings = 0
        dd = float(np.dot(d, d))
        for t in ts:
            s = float(np.dot(self.evaluate(min(max(t, 0.0), 1.0)) - pt, d)) / dd
            if abs(s) < 1e-9:
                # query point sits (nearly) on the curve: tangent tie-break
                return True, self._tangent_side(pt)
            if abs(s - 1.0) < 1e-9:
                return False, False  # anchor grazes the curve: retry
            if 0.0 < s < 1.0:
                crossings += 1
        return True, crossings % 2 == 0

    def intersect_line(self, axis, level):
        k = 0 if axis == "v" else 1
        coeffs = self._pow[:, k].copy()
        coeffs[3] -= level
        roots = _real_roots(coeffs)
        out = []
        dmin = 1e-9 * max(np.max(np.abs(self._pow)), 1.0)
        for t in roots:
            if not (-1e-9 <= t <= 1 + 1e-9):
                continue
            t = min(max(float(t), 0.0), 1.0)
            # Newton polish on the clamped parameter
            for _ in range(3):
                f = float(self.evaluate(t)[k] - level)
                df = float(self.derivative(t)[k])
                if abs(df) < 1e-14:
                    break
                t = min(max(t - f / df, 0.0), 1.0)
            tangential = abs(float(self.derivative(t)[k])) < dmin
            out.append((t, float(self.evaluate(t)[1 - k]), tangential))
        # merge duplicate crossings that converged to the same point
        out.sort(key=lambda h: h[1])
        merged = []
        for h in out:
            if merged and abs(h[1] - merged[-1][1]) < 1e-12:
                continue
            merged.append(h)
        return [(t, c) for t, c, tg in merged if not tg]


def _real_roots(coeffs: np.ndarray) -> np.ndarray:
    """Real roots of a polynomial given by dense coefficients (highest first)."""
    coeffs = np.asarray(coeffs, dtype=float)
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return np.empty(0)
    coeffs = coeffs / scale
    nz = np.nonzero(np.abs(coeffs) > 1e-14)[0]
    if nz.size == 0:
        return np.empty(0)
    coeffs = coeffs[nz[0] :]
    if coeffs.size <= 1:
        return np.empty(0)
    roots = np.roots(coeffs)
    return np.real(roots[np.abs(np.imag(roots)) < 1e-9])


def classify_point(curves, point) -> bool:
    """True if ``point`` lies in the valid region of all trimming curves."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    inside = np.ones(pts.shape[0], dtype=bool)
    for curve in curves:
        inside &= curve.is_inside(pts)
    return bool(inside.all()) if pts.shape[0] == 1 else inside


def intersect_edge(curve: TrimmingCurve, axis: str, level: float,
                   lo: float, hi: float) -> list[Intersection]:
    """Transversal intersections of a curve with an axis-aligned segment.

    ``axis='v'`` means the segment ``u1 = level, u2 in [lo, hi]``;
    ``axis='h'`` the transposed case.  Tangential touches are reported with
    the ``tangential`` flag set.
    """
    hits = []
    for item in curve.intersect_line(axis, level):
        t, coord = item[0], item[1]
        tangential = _is_tangential(curve, t, axis)
        if lo - 1e-12 <= coord <= hi + 1e-12:
            pt = (level, coord) if axis == "v" else (coord, level)
            hits.append(Intersection(t, float(coord), pt, tangential))
    hits.sort(key=lambda h: h.coord)
    return hits


def _is_tangential(curve, t, axis):
    d = curve.derivative(t)
    d = np.asarray(d).reshape(-1)
    k = 0 if axis == "v" else 1
    return abs(d[k]) < 1e-9 * max(np.hypot(d[0], d[1]), 1e-30)


# ---------------------------------------------------------------------------
# element and basis classification
# ---------------------------------------------------------------------------

@dataclass
class DwqInfo:
    """DWQ routing data for one cut basis function.

    ``box`` is the largest all-interior element block reachable from the
    regular side of the (at most one per direction) discontinuity knots;
    ``residual`` lists interior support elements outside the box, which fall
    back to element-wise Gauss.
    """

    eligible: bool
    u_disc: tuple[float | None, float | None]
    box: tuple[tuple[int, int], tuple[int, int]] | None
    regular_side: tuple[str | None, str | None]
    residual: list[tuple[int, int]]
    cut: list[tuple[int, int]]


class TrimConfiguration:
    """Element and basis classification for a trimmed tensor-product space."""

    def __init__(self, basis2d: TensorBasis2D, curves, element_class: np.ndarray,
                 boundary_points: dict):
        self.basis2d = basis2d
        self.curves = list(curves)
        self.element_class = element_class
        self._boundary_points = boundary_points
        self._cut_rules: dict[int, "CutCellQuadrature"] = {}
        self._dwq_cache: dict[tuple[int, int], DwqInfo] = {}

        b1, b2 = basis2d.dir
        is_int = (element_class == ElementClass.INTERIOR).astype(np.int64)
        is_cut = (element_class == ElementClass.CUT).astype(np.int64)
        is_ext = (element_class == ElementClass.EXTERIOR).astype(np.int64)
        self._cum_int = _integral_image(is_int)
        self._cum_cut = _integral_image(is_cut)
        self._cum_ext = _integral_image(is_ext)

        n1, n2 = basis2d.shape
        func_class = np.empty((n1, n2), dtype=np.int8)
        for i1 in range(n1):
            a1, b1e = b1.support_elements(i1)
            for i2 in range(n2):
                a2, b2e = b2.support_elements(i2)
                n_int = _block_sum(self._cum_int, a1, b1e, a2, b2e)
                n_cut = _block_sum(self._cum_cut, a1, b1e, a2, b2e)
                total = (b1e - a1 + 1) * (b2e - a2 + 1)
                if n_cut > 0 or (0 < n_int < total):
                    func_class[i1, i2] = ElementClass.CUT
                elif n_int == total:
                    func_class[i1, i2] = ElementClass.INTERIOR
                else:
                    func_class[i1, i2] = ElementClass.EXTERIOR
        self.func_class = func_class

        # discontinuity knots: faces separating a cut element from an
        # interior one, per parametric direction
        u1, u2 = set(), set()
        cls = element_class
        for e1 in range(cls.shape[0] - 1):
            pair = cls[e1, :], cls[e1 + 1, :]
            mask = ((pair[0] == ElementClass.CUT) & (pair[1] == ElementClass.INTERIOR)) | (
                (pair[0] == ElementClass.INTERIOR) & (pair[1] == ElementClass.CUT)
            )
            if np.any(mask):
                u1.add(float(b1.breakpoints[e1 + 1]))
        b1_, b2_ = basis2d.dir
        for e2 in range(cls.shape[1] - 1):
            pair = cls[:, e2], cls[:, e2 + 1]
            mask = ((pair[0] == ElementClass.CUT) & (pair[1] == ElementClass.INTERIOR)) | (
                (pair[0] == ElementClass.INTERIOR) & (pair[1] == ElementClass.CUT)
            )
            if np.any(mask):
                u2.add(float(b2_.breakpoints[e2 + 1]))
        self.u_disc = (np.asarray(sorted(u1)), np.asarray(sorted(u2)))

    # -- queries -------------------------------------------------------------

    @property
    def num_elements(self) -> tuple[int, int]:
        return self.element_class.shape

    def is_inside(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.ones(pts.shape[0], dtype=bool)
        for curve in self.curves:
            inside &= curve.is_inside(pts)
        return inside

    def element_bounds(self, e1: int, e2: int) -> tuple[float, float, float, float]:
        bp1 = self.basis2d.dir[0].breakpoints
        bp2 = self.basis2d.dir[1].breakpoints
        return float(bp1[e1]), float(bp1[e1 + 1]), float(bp2[e2]), float(bp2[e2 + 1])

    @property
    def cut_elements(self) -> list[tuple[int, int]]:
        e1, e2 = np.nonzero(self.element_class == ElementClass.CUT)
        return list(zip(e1.tolist(), e2.tolist()))

    @property
    def interior_elements(self) -> list[tuple[int, int]]:
        e1, e2 = np.nonzero(self.element_class == ElementClass.INTERIOR)
        return list(zip(e1.tolist(), e2.tolist()))

    def active_functions(self) -> np.ndarray:
        """Tensor indices of all non-exterior basis functions, lexicographic."""
        i1, i2 = np.nonzero(self.func_class != ElementClass.EXTERIOR)
        return np.column_stack([i1, i2])

    def support_block(self, i1: int, i2: int):
        a1, b1 = self.basis2d.dir[0].support_elements(i1)
        a2, b2 = self.basis2d.dir[1].support_elements(i2)
        return a1, b1, a2, b2

    def support_split(self, i1: int, i2: int):
        """Interior (regular) and cut support elements of a basis function."""
        a1, b1, a2, b2 = self.support_block(i1, i2)
        block = self.element_class[a1 : b1 + 1, a2 : b2 + 1]
        reg = [(a1 + r, a2 + c) for r, c in zip(*np.nonzero(block == ElementClass.INTERIOR))]
        cut = [(a1 + r, a2 + c) for r, c in zip(*np.nonzero(block == ElementClass.CUT))]
        return reg, cut

    def _block_all_interior(self, a1, b1, a2, b2) -> bool:
        total = (b1 - a1 + 1) * (b2 - a2 + 1)
        return total > 0 and _block_sum(self._cum_int, a1, b1, a2, b2) == total

    def dwq_info(self, i1: int, i2: int) -> DwqInfo:
        """Routing of one cut function through the discontinuous-rule path."""
        cached = self._dwq_cache.get((i1, i2))
        if cached is not None:
            return cached
        info = self._dwq_info(i1, i2)
        self._dwq_cache[(i1, i2)] = info
        return info

    def _dwq_info(self, i1: int, i2: int) -> DwqInfo:
        b1, b2 = self.basis2d.dir
        a1, e1, a2, e2 = self.support_block(i1, i2)
        reg, cut = self.support_split(i1, i2)
        lo1, hi1 = b1.support_interval(i1)
        lo2, hi2 = b2.support_interval(i2)
        tol = 1e-12
        cand1 = [u for u in self.u_disc[0] if lo1 + tol < u < hi1 - tol]
        cand2 = [u for u in self.u_disc[1] if lo2 + tol < u < hi2 - tol]
        if len(cand1) > 1 or len(cand2) > 1:
            return DwqInfo(False, (None, None), None, (None, None), reg, cut)

        def options(cand, basis, a, e):
            if not cand:
                return [((a, e), None, None)]
            u = float(cand[0])
            k = int(np.argmin(np.abs(basis.breakpoints - u)))
            opts = []
            if k - 1 >= a:
                opts.append(((a, k - 1), u, "left"))
            if k <= e:
                opts.append(((k, e), u, "right"))
            return opts

        best = None
        for r1, u1v, s1 in options(cand1, b1, a1, e1):
            for r2, u2v, s2 in options(cand2, b2, a2, e2):
                if not self._block_all_interior(r1[0], r1[1], r2[0], r2[1]):
                    continue
                count = (r1[1] - r1[0] + 1) * (r2[1] - r2[0] + 1)
                if best is None or count > best[0]:
                    best = (count, (r1, r2), (u1v, u2v), (s1, s2))
        if best is None:
            return DwqInfo(True, (None, None), None, (None, None), reg, cut)
        _, box, used, sides = best
        (r1, r2) = box
        residual = [
            (f1, f2)
            for (f1, f2) in reg
            if not (r1[0] <= f1 <= r1[1] and r2[0] <= f2 <= r2[1])
        ]
        return DwqInfo(True, used, box, sides, residual, cut)

    def cut_cell_rule(self, q: int, cache: bool = True) -> "CutCellQuadrature":
        if cache and q in self._cut_rules:
            return self._cut_rules[q]
        rule = cut_cell_quadrature(self, q)
        if cache:
            self._cut_rules[q] = rule
        return rule


def _integral_image(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    out[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    return out


def _block_sum(cum: np.ndarray, a1: int, b1: int, a2: int, b2: int) -> int:
    return int(cum[b1 + 1, b2 + 1] - cum[a1, b2 + 1] - cum[b1 + 1, a2] + cum[a1, a2])


def classify_elements(basis2d: TensorBasis2D, curves) -> TrimConfiguration:
    """Classify every element and basis function against the trimming curves.

    Element classes come from corner signs plus edge intersections; elements
    whose boundary carries fewer than two distinct crossing points are
    resolved by interior sampling (degenerate touches).  A curve segment
    floating inside a single element without crossing its boundary is not
    supported.
    """
    b1, b2 = basis2d.dir
    bp1, bp2 = b1.breakpoints, b2.breakpoints
    nel1, nel2 = b1.num_elements, b2.num_elements
    curves = list(curves)

    if not curves:
        element_class = np.full((nel1, nel2), ElementClass.INTERIOR, dtype=np.int8)
        return TrimConfiguration(basis2d, curves, element_class, {})

    # node classification; nodes on a curve count as inside (closure)
    gx, gy = np.meshgrid(bp1, bp2, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    node_in = np.ones(nodes.shape[0], dtype=bool)
    node_on = np.zeros(nodes.shape[0], dtype=bool)
    for curve in curves:
        sd = curve.signed_distance(nodes)
        node_on |= np.abs(sd) <= ON_CURVE_TOL
        node_in &= sd >= -ON_CURVE_TOL
    node_in = node_in.reshape(nel1 + 1, nel2 + 1)
    node_on = node_on.reshape(nel1 + 1, nel2 + 1)

    # boundary crossing points per element from grid-line sweeps
    boundary_points: dict[tuple[int, int], list[np.ndarray]] = {}

    def note(e1, e2, pt):
        if 0 <= e1 < nel1 and 0 <= e2 < nel2:
            boundary_points.setdefault((e1, e2), []).append(np.asarray(pt))

    for curve in curves:
        for i, x in enumerate(bp1):
            for hit in curve.intersect_line("v", float(x)):
                t, y = hit[0], hit[1]
                if _is_tangential(curve, t, "v"):
                    continue
                j = int(np.searchsorted(bp2, y)) - 1
                if np.any(np.abs(bp2 - y) <= ON_CURVE_TOL):
                    continue  # node touch, covered by node_on
                if 0 <= j < nel2:
                    note(i - 1, j, (x, y))
                    note(i, j, (x, y))
        for j, y in enumerate(bp2):
            for hit in curve.intersect_line("h", float(y)):
                t, x = hit[0], hit[1]
                if _is_tangential(curve, t, "h"):
                    continue
                i = int(np.searchsorted(bp1, x)) - 1
                if np.any(np.abs(bp1 - x) <= ON_CURVE_TOL):
                    continue
                if 0 <= i < nel1:
                    note(i, j - 1, (x, y))
                    note(i, j, (x, y))
    for i in range(nel1 + 1):
        for j in range(nel2 + 1):
            if node_on[i, j]:
                pt = (bp1[i], bp2[j])
                for e1 in (i - 1, i):
                    for e2 in (j - 1, j):
                        note(e1, e2, pt)

    element_class = np.empty((nel1, nel2), dtype=np.int8)
    for e1 in range(nel1):
        for e2 in range(nel2):
            corners_in = node_in[e1 : e1 + 2, e2 : e2 + 2]
            pts = boundary_points.get((e1, e2), [])
            mixed = corners_in.any() and not corners_in.all()
            if not mixed and not pts:
                element_class[e1, e2] = (
                    ElementClass.INTERIOR if corners_in.all() else ElementClass.EXTERIOR
                )
                continue
            hx = bp1[e1 + 1] - bp1[e1]
            hy = bp2[e2 + 1] - bp2[e2]
            snap = SNAP_REL_TOL * max(hx, hy)
            distinct: list[np.ndarray] = []
            for p in pts:
                if not any(np.max(np.abs(p - q)) <= snap for q in distinct):
                    distinct.append(p)
            if len(distinct) >= 2:
                element_class[e1, e2] = ElementClass.CUT
                continue
            # degenerate touch: resolve by interior sampling
            cx = bp1[e1] + hx * np.array([0.5, 0.25, 0.75, 0.25, 0.75])
            cy = bp2[e2] + hy * np.array([0.5, 0.25, 0.25, 0.75, 0.75])
            samples = np.column_stack([cx, cy])
            flags = np.ones(5, dtype=bool)
            for curve in curves:
                flags &= curve.is_inside(samples)
            if flags.all():
                element_class[e1, e2] = ElementClass.INTERIOR
            elif not flags.any():
                element_class[e1, e2] = ElementClass.EXTERIOR
            else:
                element_class[e1, e2] = ElementClass.CUT

    # a curve fully contained in one uncut element cannot be represented
    for curve in curves:
        ts = np.linspace(0.0, 1.0, 513)[1:-1]
        pts = curve.evaluate(ts)
        e1s = np.clip(np.searchsorted(bp1, pts[:, 0], side="right") - 1, 0, nel1 - 1)
        e2s = np.clip(np.searchsorted(bp2, pts[:, 1], side="right") - 1, 0, nel2 - 1)
        for k in range(pts.shape[0]):
            e1, e2 = int(e1s[k]), int(e2s[k])
            if element_class[e1, e2] == ElementClass.CUT:
                continue
            x0, x1b = bp1[e1], bp1[e1 + 1]
            y0, y1b = bp2[e2], bp2[e2 + 1]
            margin = 1e-9 * max(x1b - x0, y1b - y0)
            strictly_in = (
                x0 + margin < pts[k, 0] < x1b - margin
                and y0 + margin < pts[k, 1] < y1b - margin
            )
            if strictly_in:
                raise TrimmingConfigurationError(
                    f"curve passes through element ({e1}, {e2}) without "
                    "crossing its boundary; configuration not supported"
                )

    return TrimConfiguration(basis2d, curves, element_class, boundary_points)


# ---------------------------------------------------------------------------
# cut-element decomposition and quadrature
# ---------------------------------------------------------------------------

@dataclass
class SubCell:
    """One mapped integration cell with its generated quadrature."""

    kind: str  # 'quad' (bilinear) or 'blend' (apex + possibly curved edge)
    points: np.ndarray
    weights: np.ndarray


@dataclass
class CutCellQuadrature:
    """Parameter-space quadrature for every cut element of a configuration."""

    q: int
    rules: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]
    subcell_counts: dict[tuple[int, int], int]

    def element_rule(self, e1: int, e2: int):
        return self.rules[(e1, e2)]

    def total_points(self) -> int:
        return sum(p.shape[0] for p, _ in self.rules.values())

    def all_points(self) -> np.ndarray:
        if not self.rules:
            return np.empty((0, 2))
        return np.vstack([p for p, _ in self.rules.values()])


@lru_cache(maxsize=None)
def _gauss_lobatto_01(q: int) -> np.ndarray:
    """``q + 1`` Gauss-Lobatto nodes on [0, 1] (endpoints included)."""
    if q < 1:
        raise ValueError("Lagrange degree must be at least 1")
    if q == 1:
        x = np.array([-1.0, 1.0])
    else:
        c = np.zeros(q + 1)
        c[q] = 1.0
        interior = np.polynomial.legendre.legroots(np.polynomial.legendre.legder(c))
        x = np.concatenate([[-1.0], interior, [1.0]])
    return 0.5 * (x + 1.0)


@lru_cache(maxsize=None)
def _lagrange_data(q: int, n_gauss: int):
    """Lagrange basis values/derivatives at Gauss points, nodes at Lobatto."""
    nodes = _gauss_lobatto_01(q)
    rule = gauss_legendre(n_gauss)
    xi = 0.5 * (rule.points + 1.0)
    wx = 0.5 * rule.weights
    # basis polynomial coefficients via Vandermonde (fine for q <= 6)
    V = np.vander(nodes, q + 1, increasing=True)
    coeff = np.linalg.solve(V, np.eye(q + 1))  # column j: coefficients of L_j
    powers = np.vander(xi, q + 1, increasing=True)
    L = powers @ coeff
    dcoeff = coeff[1:, :] * np.arange(1, q + 1)[:, None]
    dL = np.vander(xi, q, increasing=True) @ dcoeff
    return xi, wx, L, dL


def _blend_cell(apex: np.ndarray, edge_nodes: np.ndarray, q: int) -> SubCell | None:
    """Cell blending a (possibly curved) edge toward an apex point.

    ``X(xi, eta) = (1 - eta) C(xi) + eta * apex`` with ``C`` the Lagrange
    interpolant of the edge nodes; the Jacobian is
    ``(1 - eta) * cross(C'(xi), apex - C(xi))`` and must stay positive.
    """
    degree = edge_nodes.shape[0] - 1
    xi, wx, L, dL = _lagrange_data(degree, q + 1)
    C = L @ edge_nodes
    dC = dL @ edge_nodes
    jac_line = dC[:, 0] * (apex[1] - C[:, 1]) - dC[:, 1] * (apex[0] - C[:, 0])
    scale = np.max(np.hypot(dC[:, 0], dC[:, 1])) * np.max(
        np.hypot(apex[0] - C[:, 0], apex[1] - C[:, 1])
    )
    if np.max(np.abs(jac_line)) <= 1e-12 * max(scale, 1e-300):
        return None  # apex on the (flat) edge: empty sliver
    if np.all(jac_line < 0.0):
        return _blend_cell(apex, edge_nodes[::-1], q)
    if np.any(jac_line <= 0.0):
        raise _OrientationError
    eta, we = xi, wx
    pts = (1.0 - eta)[None, :, None] * C[:, None, :] + eta[None, :, None] * apex
    wts = (wx[:, None] * we[None, :]) * ((1.0 - eta)[None, :] * jac_line[:, None])
    return SubCell("blend", pts.reshape(-1, 2), wts.ravel())


def _ruled_cell(chord_a: np.ndarray, chord_b: np.ndarray,
                edge_nodes: np.ndarray, q: int) -> SubCell | None:
    """Ruled cell between a straight side and a curved edge.

    ``X(xi, eta) = (1 - eta) L(xi) + eta C(xi)`` with ``L`` the segment from
    ``chord_a`` to ``chord_b`` and ``C`` the Lagrange interpolant of the edge
    nodes (endpoints matching ``L``); used when both crossing points sit on
    the same rectangle edge.
    """
    degree = edge_nodes.shape[0] - 1
    xi, wx, L, dL = _lagrange_data(degree, q + 1)
    C = L @ edge_nodes
    dC = dL @ edge_nodes
    if np.hypot(*(edge_nodes[0] - chord_a)) > np.hypot(*(edge_nodes[0] - chord_b)):
        chord_a, chord_b = chord_b, chord_a
    Ls = np.outer(1 - xi, chord_a) + np.outer(xi, chord_b)
    dLs = chord_b - chord_a
    eta = xi
    dX1 = (1 - eta)[None, :, None] * dLs[None, None, :] + eta[None, :, None] * dC[:, None, :]
    dX2 = (C - Ls)[:, None, :]
    jac = dX1[..., 0] * dX2[..., 1] - dX1[..., 1] * dX2[..., 0]
    scale = max(np.max(np.abs(dX1)) * np.max(np.abs(dX2)), 1e-300)
    if np.max(np.abs(jac)) <= 1e-12 * scale:
        return None
    if np.all(jac < 0.0):
        return _ruled_cell(chord_b, chord_a, edge_nodes[::-1], q)
    if np.any(jac <= 0.0):
        raise _OrientationError
    pts = (1 - eta)[None, :, None] * Ls[:, None, :] + eta[None, :, None] * C[:, None, :]
    wts = (wx[:, None] * wx[None, :]) * jac
    return SubCell("blend", pts.reshape(-1, 2), wts.ravel())


def _quad_cell(corners: np.ndarray, q: int) -> SubCell:
    """Bilinear quadrilateral cell; corners in counter-clockwise order."""
    rule = gauss_legendre(q + 1)
    xi = 0.5 * (rule.points + 1.0)
    w = 0.5 * rule.weights
    P00, P10, P11, P01 = corners
    a, b = xi[:, None, None], xi[None, :, None]
    X = (1 - a) * (1 - b) * P00 + a * (1 - b) * P10 + a * b * P11 + (1 - a) * b * P01
    dXa = (1 - b) * (P10 - P00) + b * (P11 - P01)
    dXb = (1 - a) * (P01 - P00) + a * (P11 - P10)
    dXa = np.broadcast_to(dXa, X.shape)
    dXb = np.broadcast_to(dXb, X.shape)
    jac = dXa[..., 0] * dXb[..., 1] - dXa[..., 1] * dXb[..., 0]
    if np.any(jac <= 0.0):
        raise _OrientationError
    wts = w[:, None] * w[None, :] * jac
    return SubCell("quad", X.reshape(-1, 2), wts.ravel())


class _OrientationError(Exception):
    """Internal: a candidate sub-cell map folded over."""


def _full_rect_cell(bounds, q: int) -> SubCell:
    x0, x1, y0, y1 = bounds
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    return _quad_cell(corners, q)


def _boundary_coord(p, bounds, tol):
    """Arc-length coordinate of a boundary point, counter-clockwise."""
    x0, x1, y0, y1 = bounds
    hx, hy = x1 - x0, y1 - y0
    if abs(p[1] - y0) <= tol:
        return p[0] - x0
    if abs(p[0] - x1) <= tol:
        return hx + (p[1] - y0)
    if abs(p[1] - y1) <= tol:
        return hx + hy + (x1 - p[0])
    if abs(p[0] - x0) <= tol:
        return 2 * hx + hy + (y1 - p[1])
    raise ValueError("point not on the rectangle boundary")


def _point_at_coord(s, bounds):
    x0, x1, y0, y1 = bounds
    hx, hy = x1 - x0, y1 - y0
    per = 2 * (hx + hy)
    s = s % per
    if s <= hx:
        return np.array([x0 + s, y0])
    s -= hx
    if s <= hy:
        return np.array([x1, y0 + s])
    s -= hy
    if s <= hx:
        return np.array([x1 - s, y1])
    s -= hx
    return np.array([x0, y1 - s])


def _chain_corners(s_from, s_to, bounds, tol):
    """Rectangle corners strictly between two boundary coordinates (CCW)."""
    x0, x1, y0, y1 = bounds
    hx, hy = x1 - x0, y1 - y0
    per = 2 * (hx + hy)
    corner_s = [0.0, hx, hx + hy, 2 * hx + hy]
    corner_p = [np.array([x0, y0]), np.array([x1, y0]), np.array([x1, y1]), np.array([x0, y1])]
    span = (s_to - s_from) % per
    out = []
    for cs, cp in sorted(zip(corner_s, corner_p), key=lambda z: (z[0] - s_from) % per):
        d = (cs - s_from) % per
        if tol < d < span - tol:
            out.append(cp)
    return out


def decompose_cut_element(bounds, curve: TrimmingCurve, q: int,
                          depth: int = 0) -> list[SubCell]:
    """Partition the valid part of a rectangle into mapped sub-cells.

    Requires exactly two distinct boundary crossing points; rectangles with
    more are split recursively into four, down to ``MAX_SPLIT_DEPTH``.
    Straight cuts produce exact straight-sided cells; curved cuts produce a
    fan around an interior point with a single curved cell whose edge
    interpolates the curve at Gauss-Lobatto parameters.
    """
    x0, x1, y0, y1 = bounds
    snap = SNAP_REL_TOL * max(x1 - x0, y1 - y0)
    hits: list[tuple[float, np.ndarray]] = []
    for axis, level, lo, hi in (
        ("v", x0, y0, y1), ("v", x1, y0, y1), ("h", y0, x0, x1), ("h", y1, x0, x1)
    ):
        for h in intersect_edge(curve, axis, level, lo, hi):
            if not h.tangential:
                hits.append((h.t, np.asarray(h.point)))
    # a curve endpoint resting on the boundary acts as a crossing point
    for t_end in (0.0, 1.0):
        p = np.asarray(curve.evaluate(t_end)).reshape(2)
        if (x0 - snap <= p[0] <= x1 + snap) and (y0 - snap <= p[1] <= y1 + snap):
            d_edge = min(abs(p[0] - x0), abs(p[0] - x1), abs(p[1] - y0), abs(p[1] - y1))
            if d_edge <= snap:
                hits.append((t_end, p))

    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    uniq: list[tuple[float, np.ndarray]] = []
    for t, p in sorted(hits, key=lambda z: z[0]):
        p = p.copy()
        for c in corners:
            if np.max(np.abs(p - c)) <= snap:
                p = c.copy()
                break
        if not any(np.max(np.abs(p - p2)) <= snap for _, p2 in uniq):
            uniq.append((t, p))

    if len(uniq) < 2:
        center = np.array([[0.5 * (x0 + x1), 0.5 * (y0 + y1)]])
        if bool(curve.is_inside(center)[0]):
            return [_full_rect_cell(bounds, q)]
        return []
    if len(uniq) == 2:
        try:
            return _decompose_two(bounds, curve, uniq, q)
        except _OrientationError:
            pass  # fall through to splitting
    if depth >= MAX_SPLIT_DEPTH:
        raise TrimmingConfigurationError(
            f"cannot decompose cell {bounds}: {len(uniq)} boundary crossings "
            f"at maximum split depth {MAX_SPLIT_DEPTH}"
        )
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    cells: list[SubCell] = []
    for sub in ((x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)):
        cells.extend(decompose_cut_element(sub, curve, q, depth + 1))
    return cells


def _decompose_two(bounds, curve, uniq, q) -> list[SubCell]:
    (ta, A), (tb, B) = uniq
    x0, x1, y0, y1 = bounds
    tol = SNAP_REL_TOL * max(x1 - x0, y1 - y0)
    per = 2 * ((x1 - x0) + (y1 - y0))
    sA = _boundary_coord(A, bounds, tol)
    sB = _boundary_coord(B, bounds, tol)

    # two candidate boundary chains between the crossing points; keep the
    # one lying in the valid region
    def chain_valid(s_from, s_to):
        span = (s_to - s_from) % per
        probes = np.array(
            [_point_at_coord(s_from + f * span, bounds) for f in (0.3, 0.5, 0.7)]
        )
        flags = curve.is_inside(probes)
        return int(np.sum(flags)) >= 2

    if chain_valid(sA, sB):
        start, t_start, end, t_end = A, ta, B, tb
    elif chain_valid(sB, sA):
        start, t_start, end, t_end = B, tb, A, ta
    else:
        raise _OrientationError
    s_from = _boundary_coord(start, bounds, tol)
    s_to = _boundary_coord(end, bounds, tol)
    mids = _chain_corners(s_from, s_to, bounds, tol)
    # counter-clockwise loop: straight chain start->corners->end, then the
    # curve closes the loop from end back to start
    W = [start, *mids, end]

    if getattr(curve, "straight", False):
        return _decompose_polygon(W, q)

    # curved edge, always traversed with increasing curve parameter
    glx = _gauss_lobatto_01(q)
    t_lo, t_hi = sorted((t_start, t_end))
    edge_nodes = curve.evaluate(t_lo + glx * (t_hi - t_lo))

    if not mids:
        # both crossings on one edge: ruled cell between edge and curve
        cell = _ruled_cell(np.asarray(start), np.asarray(end), edge_nodes, q)
        return [cell] if cell is not None else []

    # split along the diagonal from the last chain corner to the first
    # crossing point: a straight polygon fan plus one cone over the curve
    for poly, apex in (
        (W[:-1], W[-2]),          # fan from 'start', cone from the last corner
        (W[1:][::-1], W[1]),      # mirrored: fan from 'end', cone from the first
    ):
        try:
            cells = _decompose_polygon(list(poly), q) if len(poly) >= 3 else []
            cone = _blend_cell(np.asarray(apex), edge_nodes, q)
            if cone is not None:
                cells.append(cone)
            return cells
        except _OrientationError:
            continue
    raise _OrientationError


def _decompose_polygon(V: list[np.ndarray], q: int) -> list[SubCell]:
    """Exact cells for a convex polygon (straight trimming cut)."""
    V = [np.asarray(v, dtype=float) for v in V]
    area2 = 0.0
    for k in range(len(V)):
        a, b = V[k], V[(k + 1) % len(V)]
        area2 += a[0] * b[1] - a[1] * b[0]
    if area2 < 0:
        V = V[::-1]
    if len(V) < 3 or abs(area2) < 1e-28:
        return []
    glx = _gauss_lobatto_01(max(q, 1))
    cells = []
    k = 1
    while k + 2 < len(V):
        cells.append(_quad_cell(np.array([V[0], V[k], V[k + 1], V[k + 2]]), q))
        k += 2
    if k + 1 < len(V):
        edge = np.outer(1 - glx, V[k]) + np.outer(glx, V[k + 1])
        tri = _blend_cell(V[0], edge, q)
        if tri is not None:
            cells.append(tri)
    return cells


def cut_cell_quadrature(config: TrimConfiguration, q: int) -> CutCellQuadrature:
    """Quadrature points and weights for every cut element.

    Each cut element is decomposed against the single curve crossing it and
    receives one ``(q+1) x (q+1)`` tensor Gauss rule per sub-cell, mapped
    with weight times the absolute Jacobian determinant.
    """
    if q < 1 or q > 6:
        raise ValueError("Lagrange degree q must be within 1..6")
    rules: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    counts: dict[tuple[int, int], int] = {}
    for (e1, e2) in config.cut_elements:
        bounds = config.element_bounds(e1, e2)
        curve = _curve_for_element(config, bounds)
        try:
            cells = decompose_cut_element(bounds, curve, q)
        except TrimmingConfigurationError as err:
            raise TrimmingConfigurationError(
                f"element ({e1}, {e2}): {err}"
            ) from err
        if cells:
            pts = np.vstack([c.points for c in cells])
            wts = np.concatenate([c.weights for c in cells])
        else:
            pts, wts = np.empty((0, 2)), np.empty(0)
        rules[(e1, e2)] = (pts, wts)
        counts[(e1, e2)] = len(cells)
    return CutCellQuadrature(q, rules, counts)


def _curve_for_element(config: TrimConfiguration, bounds) -> TrimmingCurve:
    if len(config.curves) == 1:
        return config.curves[0]
    x0, x1, y0, y1 = bounds
    crossing = []
    for curve in config.curves:
        pts = curve.sample(257)
        inside = (
            (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        )
        if np.any(inside):
            crossing.append(curve)
    if len(crossing) != 1:
        raise TrimmingConfigurationError(
            f"cell {bounds} crossed by {len(crossing)} curves; exactly one supported"
        )
    return crossing[0]
