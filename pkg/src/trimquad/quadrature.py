"""Quadrature rules for spline mass-matrix formation.

Three layers live here:

* plain Gauss-Legendre rules on ``[-1, 1]``,
* weighted quadrature: one rule per test function, with the test function
  absorbed into the weights by solving a moment-fitting system, and
* discontinuous weighted quadrature: weighted rules built on a basis refined
  to ``C^-1`` at a chosen breakpoint and mapped back through the transposed
  subdivision matrix, so that the points on either side of the breakpoint
  integrate their side exactly on their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .splines import Basis1D, SubdivisionMatrix, subdivision_matrix_to

__all__ = [
    "GaussRule",
    "gauss_legendre",
    "PointLayout",
    "place_wq_points",
    "mass_matrix_1d",
    "exact_moments",
    "WeightedRuleSet",
    "DiscontinuousRuleSet",
    "compute_wq_rules",
    "build_dwq",
    "RuleConstructionError",
]

#: relative residual accepted when fitting weights to their moment system
FIT_TOL = 1e-12

#: attempts of point enrichment before rule construction gives up
MAX_RETRIES = 5


class RuleConstructionError(RuntimeError):
    """Raised when a weight row cannot satisfy its moment system."""


@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre points and weights on the reference interval [-1, 1]."""

    points: np.ndarray
    weights: np.ndarray

    def mapped(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Rule mapped to the interval ``[a, b]``."""
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return mid + half * self.points, half * self.weights


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> GaussRule:
    """``n``-point Gauss-Legendre rule, exact through degree ``2n - 1``."""
    if n < 1:
        raise ValueError(f"point count must be positive, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return GaussRule(x, w)


class PointLayout:
    """Sorted quadrature points grouped by element of a 1-D basis.

    Points are strictly interior to their elements, so none coincides with a
    knot.  ``offsets`` gives the half-open point index range of each element.
    """

    __slots__ = ("breakpoints", "points", "offsets", "element_of_point")

    def __init__(self, breakpoints: np.ndarray, per_element: list[np.ndarray]):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        counts = np.array([len(g) for g in per_element], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        self.points = (
            np.concatenate(per_element) if self.offsets[-1] else np.empty(0)
        )
        self.element_of_point = np.repeat(np.arange(counts.size), counts)
        for e, group in enumerate(per_element):
            a, b = self.breakpoints[e], self.breakpoints[e + 1]
            if len(group) and not (np.all(group > a) and np.all(group < b)):
                raise ValueError(f"points of element {e} not strictly interior")

    @property
    def num_points(self) -> int:
        return int(self.offsets[-1])

    @property
    def num_elements(self) -> int:
        return self.breakpoints.size - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def element_points(self, e: int) -> np.ndarray:
        return self.points[self.offsets[e] : self.offsets[e + 1]]

    def range_for_elements(self, e0: int, e1: int) -> tuple[int, int]:
        """Half-open point index range covering elements ``e0..e1`` inclusive."""
        return int(self.offsets[e0]), int(self.offsets[e1 + 1])

    def contains(self, other: "PointLayout", tol: float = 1e-12) -> bool:
        """Whether every point of ``other`` appears in this layout."""
        idx = np.searchsorted(self.points, other.points)
        idx = np.clip(idx, 0, self.num_points - 1)
        near = np.abs(self.points[idx] - other.points) <= tol
        idx2 = np.clip(idx - 1, 0, self.num_points - 1)
        near |= np.abs(self.points[idx2] - other.points) <= tol
        return bool(np.all(near))


def _uniform_interior(a: float, b: float, count: int) -> np.ndarray:
    """``count`` uniformly spaced points strictly inside ``(a, b)``."""
    k = np.arange(1, count + 1)
    return a + (b - a) * k / (count + 1)


def _required_counts(basis: Basis1D) -> np.ndarray:
    """Minimal per-element point counts for solvable moment systems.

    For every test function the number of points inside its support must
    reach the number of overlapping trial functions; the count is spread
    evenly over the support elements.
    """
    req = np.zeros(basis.num_elements, dtype=int)
    for i in range(basis.n):
        e0, e1 = basis.support_elements(i)
        j0, j1 = basis.overlapping(i)
        need = math.ceil((j1 - j0 + 1) / (e1 - e0 + 1))
        req[e0 : e1 + 1] = np.maximum(req[e0 : e1 + 1], need)
    return req


def _layout_from_counts(basis: Basis1D, counts: np.ndarray) -> PointLayout:
    bp = basis.breakpoints
    groups = [
        _uniform_interior(bp[e], bp[e + 1], int(counts[e]))
        for e in range(basis.num_elements)
    ]
    return PointLayout(bp, groups)


def place_wq_points(basis: Basis1D) -> PointLayout:
    """Uniform interior point layout satisfying the per-test counting rule."""
    return _layout_from_counts(basis, _required_counts(basis))


def mass_matrix_1d(basis: Basis1D, trial_basis: Basis1D | None = None) -> np.ndarray:
    """Exact 1-D mass matrix ``M[i, j] = ∫ B_i B_j du``.

    Uses ``max(p_test, p_trial) + 1`` Gauss points per element, exact for the
    piecewise-polynomial integrand; no quadrature error enters.
    """
    trial_basis = trial_basis or basis
    rule = gauss_legendre(max(basis.p, trial_basis.p) + 1)
    bp = basis.breakpoints
    nel = basis.num_elements
    g = rule.points.size
    mid = 0.5 * (bp[:-1] + bp[1:])
    half = 0.5 * np.diff(bp)
    x = (mid[:, None] + half[:, None] * rule.points[None, :]).ravel()
    w = (half[:, None] * rule.weights[None, :]).ravel()
    fi, vi = basis.eval_nonzero_batch(x)
    fj, vj = trial_basis.eval_nonzero_batch(x)
    vi = vi.reshape(nel, g, -1)
    vj = vj.reshape(nel, g, -1)
    blocks = np.einsum("egk,egl,eg->ekl", vi, vj, w.reshape(nel, g))
    M = np.zeros((basis.n, trial_basis.n))
    i0 = fi.reshape(nel, g)[:, 0]
    j0 = fj.reshape(nel, g)[:, 0]
    pi, pj = basis.p + 1, trial_basis.p + 1
    shape = (nel, pi, pj)
    rows = np.broadcast_to(i0[:, None, None] + np.arange(pi)[None, :, None], shape)
    cols = np.broadcast_to(j0[:, None, None] + np.arange(pj)[None, None, :], shape)
    np.add.at(M, (rows.ravel(), cols.ravel()), blocks.ravel())
    return M


def exact_moments(basis: Basis1D, i: int) -> tuple[int, np.ndarray]:
    """Moments ``b_j = ∫ B_i B_j du`` for the trials overlapping test ``i``.

    Returns ``(first_trial_index, moments)``.
    """
    j0, j1 = basis.overlapping(i)
    M = mass_matrix_1d(basis)
    return j0, M[i, j0 : j1 + 1].copy()


class WeightedRuleSet:
    """Per-test-function quadrature rules sharing one point layout.

    ``rows[i]`` holds ``(k0, w)``: the weights of test function ``i`` over
    the contiguous point range ``k0 : k0 + len(w)`` of the layout; weights
    outside the support of ``B_i`` are identically zero.
    """

    def __init__(self, basis: Basis1D, layout: PointLayout,
                 rows: list[tuple[int, np.ndarray]], direction: int | None = None):
        self.basis = basis
        self.layout = layout
        self.rows = rows
        self.direction = direction

    def row(self, i: int) -> tuple[int, np.ndarray]:
        return self.rows[i]

    def row_full(self, i: int) -> np.ndarray:
        """Weight row as a dense vector over the whole layout."""
        k0, w = self.rows[i]
        full = np.zeros(self.layout.num_points)
        full[k0 : k0 + w.size] = w
        return full

    def total_points(self) -> int:
        return self.layout.num_points

    def apply(self, i: int, values_at_points: np.ndarray) -> float:
        """Apply rule ``i`` to function values sampled on the full layout."""
        k0, w = self.rows[i]
        return float(np.dot(w, values_at_points[k0 : k0 + w.size]))


class DiscontinuousRuleSet(WeightedRuleSet):
    """Weighted rules aware of one internal ``C^-1`` breakpoint.

    Points on either side of ``u_disc`` integrate the moments truncated to
    their side exactly, so contributions beyond the breakpoint can be zeroed
    without polluting the other side.  The layout nests the base layout.
    """

    def __init__(self, basis, layout, rows, u_disc: float,
                 subdivision: SubdivisionMatrix, refined_basis: Basis1D,
                 base_layout: PointLayout, direction: int | None = None,
                 regular_side: str | None = None):
        super().__init__(basis, layout, rows, direction)
        self.u_disc = float(u_disc)
        self.subdivision = subdivision
        self.refined_basis = refined_basis
        self.base_layout = base_layout
        self.regular_side = regular_side

    def side_points(self, side: str) -> np.ndarray:
        """Indices of layout points strictly on one side of ``u_disc``."""
        if side == "left":
            return np.nonzero(self.layout.points < self.u_disc)[0]
        if side == "right":
            return np.nonzero(self.layout.points > self.u_disc)[0]
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def _qr_basic_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Basic least-squares solution via QR with column pivoting.

    For the (typically underdetermined) moment systems this activates a
    well-conditioned subset of the quadrature points and leaves the rest at
    weight zero, mirroring what a pivoted-QR backslash solve produces.
    """
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    w = np.zeros(A.shape[1])
    if rank:
        z = scipy.linalg.solve_triangular(R[:rank, :rank], (Q.T @ b)[:rank])
        w[piv[:rank]] = z
    return w


def _solve_rows(basis: Basis1D, layout: PointLayout,
                which: list[int] | None = None) -> tuple[list, list[int]]:
    """Moment fit of the selected weight rows on a fixed layout.

    Returns a row list indexed by test function (``None`` where skipped)
    plus the indices of test functions whose residual exceeds the tolerance.
    """
    colloc = basis.collocation(layout.points)
    moments = mass_matrix_1d(basis)
    rows: list[tuple[int, np.ndarray] | None] = [None] * basis.n
    failing: list[int] = []
    for i in range(basis.n) if which is None else which:
        e0, e1 = basis.support_elements(i)
        k0, k1 = layout.range_for_elements(e0, e1)
        j0, j1 = basis.overlapping(i)
        A = colloc[k0:k1, j0 : j1 + 1].T
        b = moments[i, j0 : j1 + 1]
        w = _qr_basic_solve(A, b)
        resid = np.max(np.abs(A @ w - b))
        if resid > FIT_TOL * max(np.max(np.abs(b)), 1e-300):
            failing.append(i)
        rows[i] = (k0, w)
    return rows, failing


def _least_covered_element(basis: Basis1D, layout: PointLayout, i: int) -> int:
    e0, e1 = basis.support_elements(i)
    counts = layout.counts()[e0 : e1 + 1]
    return int(e0 + np.argmin(counts))


def compute_wq_rules(basis: Basis1D, layout: PointLayout | None = None,
                     direction: int | None = None) -> WeightedRuleSet:
    """Weighted quadrature rules for every test function of ``basis``.

    Weights solve the moment system ``sum_k B_j(x_k) w_{k,i} = ∫ B_i B_j du``
    by pivoted-QR least squares; the infinity-norm residual of each system
    must stay below ``FIT_TOL`` relative to the largest moment.
    On failure one extra point is added to the least-covered support element
    (uniformly re-spread) and the fit is retried a few times.
    """
    if layout is None:
        layout = place_wq_points(basis)
    counts = layout.counts().copy()
    for attempt in range(MAX_RETRIES + 1):
        rows, failing = _solve_rows(basis, layout)
        if not failing:
            return WeightedRuleSet(basis, layout, rows, direction)
        if attempt == MAX_RETRIES:
            break
        for i in failing:
            counts[_least_covered_element(basis, layout, i)] += 1
        layout = _layout_from_counts(basis, counts)
    raise RuleConstructionError(
        f"moment fit residual above {FIT_TOL:g} for test functions {failing} "
        f"after {MAX_RETRIES} enrichment retries"
    )


def _split_largest_gap(points_sorted: list[float], a: float, b: float) -> float:
    """Midpoint of the largest gap between fenceposts ``a``/``b`` and points."""
    fence = [a, *points_sorted, b]
    gaps = np.diff(fence)
    g = int(np.argmax(gaps))
    return 0.5 * (fence[g] + fence[g + 1])


def _augment_nested(basis: Basis1D, layout: PointLayout,
                    extra_needed: np.ndarray) -> PointLayout:
    """Add nested points element-wise, always splitting the largest gap.

    Existing points are kept, so the refined layout contains the original
    one; new points maximize the distance to their neighbors.
    """
    bp = layout.breakpoints
    groups = []
    for e in range(layout.num_elements):
        pts = sorted(layout.element_points(e).tolist())
        for _ in range(int(extra_needed[e])):
            pts.append(_split_largest_gap(pts, bp[e], bp[e + 1]))
            pts.sort()
        groups.append(np.asarray(pts))
    return PointLayout(bp, groups)


def build_dwq(basis: Basis1D, layout: PointLayout, u_disc: float,
              direction: int | None = None,
              regular_side: str | None = None,
              only_rows: list[int] | None = None) -> DiscontinuousRuleSet:
    """Discontinuous weighted quadrature rules with a ``C^-1`` split at ``u_disc``.

    Construction: (1) insert ``u_disc`` until its multiplicity reaches
    ``p + 1``, recording the composite subdivision matrix ``S``; (2) augment
    the layout with nested points until the refined basis satisfies the
    solvability counts; (3) fit weight rows for the refined basis; (4) map
    them back to the original test functions through ``S.T``.

    ``only_rows`` restricts the construction to the given original test
    functions (the assembly needs rules only for the cut functions using
    this discontinuity); other rows are left empty.
    """
    kv = basis.kv
    bp = kv.breakpoints
    if not np.any(np.abs(bp - u_disc) <= 1e-12):
        raise ValueError(f"{u_disc} is not a breakpoint of the basis")
    u_disc = float(bp[np.argmin(np.abs(bp - u_disc))])

    p = basis.p
    missing = p + 1 - kv.multiplicity_of(u_disc)
    target = kv
    for _ in range(missing):
        target = target.insert(u_disc)
    S = subdivision_matrix_to(basis, target)
    refined = S.target

    # nested augmentation to the refined counting rule
    need = _required_counts(refined)
    extra = np.maximum(need - layout.counts(), 0)
    aug = _augment_nested(refined, layout, extra) if np.any(extra) else layout
    # per-test totals can still fall short; top up the thinnest element
    for i in range(refined.n):
        e0, e1 = refined.support_elements(i)
        j0, j1 = refined.overlapping(i)
        while aug.offsets[e1 + 1] - aug.offsets[e0] < (j1 - j0 + 1):
            bump = np.zeros(aug.num_elements, dtype=int)
            bump[_least_covered_element(refined, aug, i)] = 1
            aug = _augment_nested(refined, aug, bump)

    # the fine rows needed are those feeding the requested original rows
    Scsc = S.matrix.tocsc()
    wanted = range(basis.n) if only_rows is None else sorted(set(only_rows))
    fine_needed: list[int] | None = None
    if only_rows is not None:
        seen: set[int] = set()
        for j in wanted:
            sl = slice(Scsc.indptr[j], Scsc.indptr[j + 1])
            seen.update(int(i) for i in Scsc.indices[sl])
        fine_needed = sorted(seen)

    for attempt in range(MAX_RETRIES + 1):
        fine_rows, failing = _solve_rows(refined, aug, which=fine_needed)
        if not failing:
            break
        if attempt == MAX_RETRIES:
            raise RuleConstructionError(
                f"discontinuous rule fit failed for refined test functions "
                f"{failing} at u_disc={u_disc}"
            )
        bump = np.zeros(aug.num_elements, dtype=int)
        for i in failing:
            bump[_least_covered_element(refined, aug, i)] += 1
        aug = _augment_nested(refined, aug, bump)

    # w = S^T w~ : combine refined rows into rows for the original functions
    rows: list[tuple[int, np.ndarray] | None] = [None] * basis.n
    for j in wanted:
        e0, e1 = basis.support_elements(j)
        k0, k1 = aug.range_for_elements(e0, e1)
        w = np.zeros(k1 - k0)
        sl = slice(Scsc.indptr[j], Scsc.indptr[j + 1])
        for i, s_ij in zip(Scsc.indices[sl], Scsc.data[sl]):
            fk0, fw = fine_rows[i]
            w[fk0 - k0 : fk0 - k0 + fw.size] += s_ij * fw
        rows[j] = (k0, w)

    return DiscontinuousRuleSet(
        basis, aug, rows, u_disc, S, refined, layout,
        direction=direction, regular_side=regular_side,
    )
