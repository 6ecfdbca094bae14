"""Mass-matrix formation strategies for trimmed tensor-product splines.

Four interchangeable strategies assemble ``M[ij] = ∫_valid B_i B_j c``:

* ``reference``: element-wise tensor Gauss, the accuracy baseline.
* ``wq``: naive weighted quadrature; cut test functions keep their standard
  rules and the coefficient is zeroed at points outside the regular support.
  This is deliberately inexact: the zeroing introduces jumps inside the
  quadrature domain, which weighted rules cannot absorb.
* ``hybrid``: weighted quadrature for interior test functions, element-wise
  Gauss for the regular support of cut ones.
* ``dwq``: like ``hybrid``, but cut functions with at most one discontinuity
  knot per direction use discontinuous weighted rules, so the bulk of their
  regular support is sum-factorized as well.

All strategies share one sparsity pattern (the support-overlap graph of the
retained functions) and one cut-element quadrature, and every matrix is
symmetrized by averaging with its transpose.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .quadrature import (
    DiscontinuousRuleSet,
    WeightedRuleSet,
    build_dwq,
    compute_wq_rules,
    gauss_legendre,
    place_wq_points,
)
from .splines import Basis1D, TensorBasis2D
from .trimming import ElementClass, TrimConfiguration

__all__ = [
    "CoefficientField",
    "SparseMatrix",
    "FormationReport",
    "STRATEGIES",
    "assemble_mass",
    "form_with_timings",
    "sum_factor_row",
    "sum_factor_op_count",
]

STRATEGIES = ("reference", "wq", "hybrid", "dwq")


class CoefficientField:
    """Scalar coefficient ``c(u1, u2)`` with cached grids at point layouts."""

    def __init__(self, fn=None):
        self._fn = fn
        self._grids: dict[tuple[int, int], np.ndarray] = {}

    @property
    def identity(self) -> bool:
        return self._fn is None

    def at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self._fn is None:
            return np.ones(points.shape[0])
        return np.asarray(self._fn(points), dtype=float).reshape(points.shape[0])

    def grid(self, pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
        """Values on the tensor grid ``pts1 x pts2`` (cached per layout pair)."""
        key = (id(pts1), id(pts2))
        cached = self._grids.get(key)
        if cached is not None:
            return cached
        if self._fn is None:
            out = np.ones((pts1.size, pts2.size))
        else:
            P = np.column_stack(
                [np.repeat(pts1, pts2.size), np.tile(pts2, pts1.size)]
            )
            out = self.at(P).reshape(pts1.size, pts2.size)
        self._grids[key] = out
        return out


class SparseMatrix:
    """Row-compressed symmetric mass matrix over the retained functions.

    Rows and columns are indexed by the lexicographically sorted tensor
    indices of the non-exterior basis functions.
    """

    def __init__(self, data: sp.csr_matrix, active: np.ndarray, basis2d: TensorBasis2D):
        self.data = data
        self.active = active
        self.basis2d = basis2d
        self.symmetric = True

    @property
    def shape(self):
        return self.data.shape

    def index_of(self) -> np.ndarray:
        """Dense lookup ``(n1, n2) -> compact index`` (-1 for dropped)."""
        n1, n2 = self.basis2d.shape
        out = np.full((n1, n2), -1, dtype=np.int64)
        out[self.active[:, 0], self.active[:, 1]] = np.arange(self.active.shape[0])
        return out

    def frobenius(self) -> float:
        return float(sp.linalg.norm(self.data))

    def asymmetry(self) -> float:
        d = self.data - self.data.T
        return float(sp.linalg.norm(d))

    def toarray(self) -> np.ndarray:
        return self.data.toarray()


@dataclass
class FormationReport:
    """Wall-clock breakdown of one formation run (seconds)."""

    strategy: str
    t_weights: float = 0.0
    t_interior: float = 0.0
    t_cut_regular: float = 0.0
    t_cut_elements: float = 0.0
    t_total: float = 0.0
    n_wq_points: int = 0
    n_gauss_elements: int = 0
    n_cutcell_points: int = 0

    def components(self) -> tuple[float, float, float, float]:
        return (self.t_weights, self.t_interior, self.t_cut_regular, self.t_cut_elements)


# ---------------------------------------------------------------------------
# shared pattern and scatter machinery
# ---------------------------------------------------------------------------

class _Pattern:
    """Fixed CSR pattern from the support-overlap graph of active functions."""

    def __init__(self, basis2d: TensorBasis2D, config: TrimConfiguration):
        b1, b2 = basis2d.dir
        active = config.active_functions()
        n1, n2 = basis2d.shape
        col_of = np.full((n1, n2), -1, dtype=np.int64)
        col_of[active[:, 0], active[:, 1]] = np.arange(active.shape[0])
        indptr = [0]
        indices: list[np.ndarray] = []
        for i1, i2 in active:
            j1lo, j1hi = b1.overlapping(int(i1))
            j2lo, j2hi = b2.overlapping(int(i2))
            cols = col_of[j1lo : j1hi + 1, j2lo : j2hi + 1].ravel()
            cols = np.sort(cols[cols >= 0])
            indices.append(cols)
            indptr.append(indptr[-1] + cols.size)
        self.active = active
        self.col_of = col_of
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
        K = active.shape[0]
        # sorted global keys enable vectorized scattering
        rows = np.repeat(np.arange(K), np.diff(self.indptr))
        self._keys = rows * K + self.indices
        self.size = K

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (values, self.indices.copy(), self.indptr.copy()), shape=(self.size, self.size)
        )

    def scatter(self, values: np.ndarray, rows, cols, vals):
        keys = np.asarray(rows, dtype=np.int64) * self.size + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        if np.any(pos >= self._keys.size) or np.any(self._keys[pos] != keys):
            raise RuntimeError("entry outside the precomputed sparsity pattern")
        np.add.at(values, pos, vals)


def _pattern_for(basis2d: TensorBasis2D, config: TrimConfiguration) -> _Pattern:
    cache = getattr(config, "_assembly_cache", None)
    if cache is None:
        cache = {}
        config._assembly_cache = cache
    pat = cache.get("pattern")
    if pat is None:
        pat = _Pattern(basis2d, config)
        cache["pattern"] = pat
    return pat


class _ElementGaussData:
    """Per-direction basis values at element-wise Gauss points."""

    def __init__(self, basis: Basis1D, n_points: int):
        rule = gauss_legendre(n_points)
        bp = basis.breakpoints
        nel = basis.num_elements
        mid = 0.5 * (bp[:-1] + bp[1:])
        half = 0.5 * np.diff(bp)
        self.points = mid[:, None] + half[:, None] * rule.points[None, :]
        self.weights = half[:, None] * rule.weights[None, :]
        first, vals = basis.eval_nonzero_batch(self.points.ravel())
        self.values = vals.reshape(nel, n_points, basis.p + 1)
        self.first = first.reshape(nel, n_points)[:, 0]


# ---------------------------------------------------------------------------
# sum factorization
# ---------------------------------------------------------------------------

def sum_factor_row(i1: int, i2: int, rules1: WeightedRuleSet, rules2: WeightedRuleSet,
                   colloc1: np.ndarray, colloc2: np.ndarray, grid: np.ndarray,
                   mask: np.ndarray | None = None,
                   point_box: tuple[int, int, int, int] | None = None):
    """One mass-matrix row by two nested uni-variate contractions.

    The inner stage contracts direction-2 points against the direction-2
    weight row, the outer stage direction-1; cost is
    ``O(n_trials * n_points^2)`` per row, independent of the element count
    inside the support.  Returns ``(j1_offset, j2_offset, block)``.

    ``mask`` multiplies the coefficient grid restricted to the support;
    ``point_box`` additionally restricts the contraction to a contiguous
    point range ``(k1_lo, k1_hi, k2_lo, k2_hi)`` (half-open).
    """
    b1, b2 = rules1.basis, rules2.basis
    k1, w1 = rules1.row(i1)
    k2, w2 = rules2.row(i2)
    s1, e1 = k1, k1 + w1.size
    s2, e2 = k2, k2 + w2.size
    if point_box is not None:
        s1, e1 = max(s1, point_box[0]), min(e1, point_box[1])
        s2, e2 = max(s2, point_box[2]), min(e2, point_box[3])
    j1lo, j1hi = b1.overlapping(i1)
    j2lo, j2hi = b2.overlapping(i2)
    if s1 >= e1 or s2 >= e2:
        return j1lo, j2lo, np.zeros((j1hi - j1lo + 1, j2hi - j2lo + 1))
    B1 = colloc1[s1:e1, j1lo : j1hi + 1] * w1[s1 - k1 : e1 - k1, None]
    B2 = colloc2[s2:e2, j2lo : j2hi + 1] * w2[s2 - k2 : e2 - k2, None]
    G = grid[s1:e1, s2:e2]
    if mask is not None:
        G = G * mask
    inner = B2.T @ G.T  # (trials2, points1)
    block = B1.T @ inner.T  # (trials1, trials2)
    return j1lo, j2lo, block


def sum_factor_op_count(i1: int, i2: int, rules1: WeightedRuleSet,
                        rules2: WeightedRuleSet) -> int:
    """Multiply-add count of :func:`sum_factor_row` for one test function."""
    b1, b2 = rules1.basis, rules2.basis
    _, w1 = rules1.row(i1)
    _, w2 = rules2.row(i2)
    n1, n2 = w1.size, w2.size
    j1lo, j1hi = b1.overlapping(i1)
    j2lo, j2hi = b2.overlapping(i2)
    t1, t2 = j1hi - j1lo + 1, j2hi - j2lo + 1
    return t2 * n1 * n2 + t1 * t2 * n1


# ---------------------------------------------------------------------------
# assembly driver
# ---------------------------------------------------------------------------

class _Run:
    """Mutable state of one assembly run."""

    def __init__(self, basis2d: TensorBasis2D, config: TrimConfiguration,
                 coeff: CoefficientField, parallel: bool = False):
        self.basis2d = basis2d
        self.config = config
        self.coeff = coeff
        self.parallel = parallel
        self.pattern = _pattern_for(basis2d, config)
        self.values = np.zeros(self.pattern.indices.size)
        b1, b2 = basis2d.dir
        self.gauss1 = _ElementGaussData(b1, b1.p + 1)
        self.gauss2 = _ElementGaussData(b2, b2.p + 1)
        self._block_cache: dict[tuple[int, int], np.ndarray] = {}
        self._colloc_cache: dict[int, np.ndarray] = {}
        self._deferred: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self.report = FormationReport(strategy="")

    def defer(self, rows, cols, vals):
        """Queue scatter triples; flushed in bulk at phase boundaries."""
        self._deferred.append((
            np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=float),
        ))

    def flush(self):
        if not self._deferred:
            return
        rows = np.concatenate([t[0] for t in self._deferred])
        cols = np.concatenate([t[1] for t in self._deferred])
        vals = np.concatenate([t[2] for t in self._deferred])
        self._deferred.clear()
        self.pattern.scatter(self.values, rows, cols, vals)

    # -- element-wise Gauss blocks -------------------------------------------

    def element_block(self, e1: int, e2: int) -> np.ndarray:
        """Local Gauss mass block of a full element, cached per run."""
        blk = self._block_cache.get((e1, e2))
        if blk is not None:
            return blk
        g1, g2 = self.gauss1, self.gauss2
        V1, V2 = g1.values[e1], g2.values[e2]
        if self.coeff.identity:
            cw = np.outer(g1.weights[e1], g2.weights[e2])
        else:
            P = np.column_stack([
                np.repeat(g1.points[e1], g2.points[e2].size),
                np.tile(g2.points[e2], g1.points[e1].size),
            ])
            cw = (self.coeff.at(P).reshape(V1.shape[0], V2.shape[0])
                  * np.outer(g1.weights[e1], g2.weights[e2]))
        B2d = (V1[:, None, :, None] * V2[None, :, None, :]).reshape(
            V1.shape[0] * V2.shape[0], -1
        )
        blk = B2d.T @ (cw.reshape(-1)[:, None] * B2d)
        self._block_cache[(e1, e2)] = blk
        self.report.n_gauss_elements += 1
        return blk

    def scatter_block(self, e1: int, e2: int, blk: np.ndarray,
                      row_mask: np.ndarray | None = None,
                      row_select: int | None = None):
        """Scatter a local element block; rows may be filtered."""
        b1, b2 = self.basis2d.dir
        a1, _ = b1.functions_on_element(e1)
        a2, _ = b2.functions_on_element(e2)
        p1, p2 = b1.p, b2.p
        f1 = np.arange(a1, a1 + p1 + 1)
        f2 = np.arange(a2, a2 + p2 + 1)
        comp = self.pattern.col_of[f1[:, None], f2[None, :]].ravel()
        rows_comp = comp
        if row_select is not None:
            keep_rows = comp == row_select
        elif row_mask is not None:
            keep_rows = row_mask
        else:
            keep_rows = comp >= 0
        cols_ok = comp >= 0
        sub = blk[np.ix_(keep_rows.nonzero()[0], cols_ok.nonzero()[0])]
        r = np.repeat(rows_comp[keep_rows], cols_ok.sum())
        c = np.tile(comp[cols_ok], int(keep_rows.sum()))
        self.defer(r, c, sub.ravel())

    def scatter_row_block(self, i1: int, i2: int, j1lo: int, j2lo: int, blk: np.ndarray):
        row = self.pattern.col_of[i1, i2]
        f1 = np.arange(j1lo, j1lo + blk.shape[0])
        f2 = np.arange(j2lo, j2lo + blk.shape[1])
        comp = self.pattern.col_of[f1[:, None], f2[None, :]].ravel()
        ok = comp >= 0
        self.defer(np.full(int(ok.sum()), row, dtype=np.int64), comp[ok],
                   blk.ravel()[ok])

    # -- cut-element contributions (shared by every strategy) ----------------

    def add_cut_blocks(self, cut_rule):
        b1, b2 = self.basis2d.dir
        for (e1, e2), (pts, wts) in cut_rule.rules.items():
            if pts.shape[0] == 0:
                continue
            f1, V1 = b1.eval_nonzero_batch(pts[:, 0])
            f2, V2 = b2.eval_nonzero_batch(pts[:, 1])
            cw = self.coeff.at(pts) * wts
            self.report.n_cutcell_points += pts.shape[0]
            # points of one element share the span per direction except for
            # rounding at sub-cell borders; group defensively
            keys = f1 * (b2.n + 1) + f2
            for key in np.unique(keys):
                sel = keys == key
                a1, a2 = int(f1[sel][0]), int(f2[sel][0])
                B2d = (V1[sel][:, :, None] * V2[sel][:, None, :]).reshape(
                    int(sel.sum()), -1
                )
                blk = B2d.T @ (cw[sel][:, None] * B2d)
                self._scatter_cut_block(a1, a2, b1.p, b2.p, blk)

    def _scatter_cut_block(self, a1, a2, p1, p2, blk):
        f1 = np.arange(a1, a1 + p1 + 1)
        f2 = np.arange(a2, a2 + p2 + 1)
        comp = self.pattern.col_of[f1[:, None], f2[None, :]].ravel()
        ok = comp >= 0
        sub = blk[np.ix_(ok.nonzero()[0], ok.nonzero()[0])]
        r = np.repeat(comp[ok], int(ok.sum()))
        c = np.tile(comp[ok], int(ok.sum()))
        self.defer(r, c, sub.ravel())

    def finish(self) -> SparseMatrix:
        M = self.pattern.matrix(self.values)
        M = 0.5 * (M + M.T)
        M.sort_indices()
        return SparseMatrix(M.tocsr(), self.pattern.active, self.basis2d)


# -- batched interior rows ----------------------------------------------------

def _interior_rows_batched(run: _Run, rows_ix: np.ndarray,
                           rules1: WeightedRuleSet, rules2: WeightedRuleSet,
                           colloc1, colloc2, grid):
    """Sum-factorize many test rows at once, grouped by identical shapes."""
    b1, b2 = run.basis2d.dir
    if rows_ix.size == 0:
        return
    meta = []
    for i1, i2 in rows_ix:
        k1, w1 = rules1.row(int(i1))
        k2, w2 = rules2.row(int(i2))
        j1lo, j1hi = b1.overlapping(int(i1))
        j2lo, j2hi = b2.overlapping(int(i2))
        meta.append((w1.size, w2.size, j1hi - j1lo + 1, j2hi - j2lo + 1,
                     int(i1), int(i2), k1, k2, j1lo, j2lo))
    groups: dict[tuple, list] = {}
    for m in meta:
        groups.setdefault(m[:4], []).append(m)
    for (n1, n2, t1, t2), items in groups.items():
        R = len(items)
        k1s = np.array([m[6] for m in items])
        k2s = np.array([m[7] for m in items])
        j1s = np.array([m[8] for m in items])
        j2s = np.array([m[9] for m in items])
        W1 = np.stack([rules1.row(m[4])[1] for m in items])
        W2 = np.stack([rules2.row(m[5])[1] for m in items])
        k1idx = k1s[:, None] + np.arange(n1)[None, :]
        k2idx = k2s[:, None] + np.arange(n2)[None, :]
        j1idx = j1s[:, None] + np.arange(t1)[None, :]
        j2idx = j2s[:, None] + np.arange(t2)[None, :]
        B1 = colloc1[k1idx[:, :, None], j1idx[:, None, :]] * W1[:, :, None]
        B2 = colloc2[k2idx[:, :, None], j2idx[:, None, :]] * W2[:, :, None]
        G = grid[k1idx[:, :, None], k2idx[:, None, :]]
        inner = np.matmul(B2.transpose(0, 2, 1), G.transpose(0, 2, 1))
        blocks = np.matmul(B1.transpose(0, 2, 1), inner.transpose(0, 2, 1))
        rows = run.pattern.col_of[np.array([m[4] for m in items]),
                                  np.array([m[5] for m in items])]
        comp = run.pattern.col_of[j1idx[:, :, None], j2idx[:, None, :]].reshape(R, -1)
        ok = comp >= 0
        r = np.repeat(rows, t1 * t2)[ok.ravel()]
        run.defer(r, comp[ok], blocks.reshape(R, -1)[ok])


# -- strategy drivers ---------------------------------------------------------

def _build_rules(run: _Run, need_dwq: bool):
    """Standard weighted rules per direction, plus any discontinuous sets."""
    b1, b2 = run.basis2d.dir
    rules1 = compute_wq_rules(b1, place_wq_points(b1), direction=0)
    rules2 = compute_wq_rules(b2, place_wq_points(b2), direction=1)
    dwq: dict[tuple[int, float], DiscontinuousRuleSet] = {}
    if need_dwq:
        needed: dict[tuple[int, float], set[int]] = {}
        fclass = run.config.func_class
        for i1, i2 in run.pattern.active:
            if fclass[i1, i2] != ElementClass.CUT:
                continue
            info = run.config.dwq_info(int(i1), int(i2))
            if info.eligible and info.box is not None:
                for d, u in enumerate(info.u_disc):
                    if u is not None:
                        needed.setdefault((d, float(u)), set()).add((i1, i2)[d])

        def build(key):
            d, u = key
            basis = (b1, b2)[d]
            base = (rules1, rules2)[d].layout
            return key, build_dwq(basis, base, u, direction=d,
                                  only_rows=sorted(needed[key]))

        keys = sorted(needed)
        if run.parallel and len(keys) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor() as pool:
                for key, rule in pool.map(build, keys):
                    dwq[key] = rule
        else:
            for key in keys:
                dwq[key] = build(key)[1]
    return rules1, rules2, dwq


def assemble_mass(basis2d: TensorBasis2D, config: TrimConfiguration,
                  coeff: CoefficientField | None = None, strategy: str = "reference",
                  parallel: bool = False,
                  report: FormationReport | None = None) -> SparseMatrix:
    """Assemble the mass matrix with the chosen formation strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    coeff = coeff or CoefficientField()
    run = _Run(basis2d, config, coeff, parallel)
    if report is not None:
        run.report = report
    run.report.strategy = strategy
    b1, b2 = basis2d.dir
    q = max(b1.p, b2.p)
    cut_rule = config.cut_cell_rule(q)

    t0 = time.perf_counter()
    if strategy == "reference":
        rules1 = rules2 = None
        dwq = {}
    else:
        rules1, rules2, dwq = _build_rules(run, need_dwq=(strategy == "dwq"))
        run.report.n_wq_points = rules1.total_points() + rules2.total_points()
    t1 = time.perf_counter()
    run.report.t_weights = t1 - t0

    fclass = config.func_class
    active = run.pattern.active
    is_cut = fclass[active[:, 0], active[:, 1]] == ElementClass.CUT

    if strategy == "reference":
        for (e1, e2) in config.interior_elements:
            run.scatter_block(e1, e2, run.element_block(e1, e2))
        run.flush()
        t2 = time.perf_counter()
        run.report.t_interior = t2 - t1
        run.report.t_cut_regular = 0.0
        t3 = t2
    else:
        colloc1 = b1.collocation(rules1.layout.points)
        colloc2 = b2.collocation(rules2.layout.points)
        grid = coeff.grid(rules1.layout.points, rules2.layout.points)
        _interior_rows_batched(run, active[~is_cut], rules1, rules2,
                               colloc1, colloc2, grid)
        run.flush()
        t2 = time.perf_counter()
        run.report.t_interior = t2 - t1
        _cut_regular_rows(run, active[is_cut], strategy, rules1, rules2,
                          colloc1, colloc2, grid, dwq)
        run.flush()
        t3 = time.perf_counter()
        run.report.t_cut_regular = t3 - t2

    run.add_cut_blocks(cut_rule)
    run.flush()
    t4 = time.perf_counter()
    run.report.t_cut_elements = t4 - t3
    run.report.t_total = t4 - t0
    return run.finish()


def _cut_regular_rows(run: _Run, cut_rows: np.ndarray, strategy: str,
                      rules1, rules2, colloc1, colloc2, grid, dwq):
    """Regular-support contributions of cut test functions."""
    if cut_rows.size == 0:
        return
    config = run.config
    b1, b2 = run.basis2d.dir

    if strategy == "wq":
        el_of_1 = rules1.layout.element_of_point
        el_of_2 = rules2.layout.element_of_point
        interior = config.element_class == ElementClass.INTERIOR
        for i1, i2 in cut_rows:
            k1, w1 = rules1.row(int(i1))
            k2, w2 = rules2.row(int(i2))
            mask = interior[
                el_of_1[k1 : k1 + w1.size][:, None],
                el_of_2[k2 : k2 + w2.size][None, :],
            ]
            j1lo, j2lo, blk = sum_factor_row(
                int(i1), int(i2), rules1, rules2, colloc1, colloc2, grid, mask=mask
            )
            run.scatter_row_block(int(i1), int(i2), j1lo, j2lo, blk)
        return

    if strategy == "hybrid":
        _gauss_rows_by_element(run, cut_rows)
        return

    # dwq: sum-factorized box for eligible functions, Gauss fallback else
    fallback_rows = []
    for i1, i2 in cut_rows:
        info = config.dwq_info(int(i1), int(i2))
        if not info.eligible or info.box is None:
            # ineligible, or no all-interior box: whole regular support by Gauss
            fallback_rows.append((int(i1), int(i2)))
            continue
        d1 = dwq.get((0, float(info.u_disc[0]))) if info.u_disc[0] is not None else None
        d2 = dwq.get((1, float(info.u_disc[1]))) if info.u_disc[1] is not None else None
        r1 = d1 if d1 is not None else rules1
        r2 = d2 if d2 is not None else rules2
        c1 = _colloc_for(run, b1, r1, colloc1, rules1)
        c2 = _colloc_for(run, b2, r2, colloc2, rules2)
        g = run.coeff.grid(r1.layout.points, r2.layout.points)
        (a1, b1e), (a2, b2e) = info.box
        box = (
            int(r1.layout.offsets[a1]), int(r1.layout.offsets[b1e + 1]),
            int(r2.layout.offsets[a2]), int(r2.layout.offsets[b2e + 1]),
        )
        j1lo, j2lo, blk = sum_factor_row(
            int(i1), int(i2), r1, r2, c1, c2, g, point_box=box
        )
        run.scatter_row_block(int(i1), int(i2), j1lo, j2lo, blk)
        for (e1, e2) in info.residual:
            blk = run.element_block(e1, e2)
            _scatter_single_row_of_block(run, int(i1), int(i2), e1, e2, blk)
    if fallback_rows:
        _gauss_rows_by_element(run, np.asarray(fallback_rows))


def _colloc_for(run: _Run, basis, rules, std_colloc, std_rules):
    """Collocation matrix on a rule set's layout, cached per run."""
    if rules is std_rules:
        return std_colloc
    key = id(rules.layout)
    if key not in run._colloc_cache:
        run._colloc_cache[key] = basis.collocation(rules.layout.points)
    return run._colloc_cache[key]


def _gauss_rows_by_element(run: _Run, rows: np.ndarray):
    """Element-wise Gauss over the regular support, restricted to given rows."""
    if rows.size == 0:
        return
    config = run.config
    b1, b2 = run.basis2d.dir
    marks = np.zeros(run.pattern.size, dtype=bool)
    ix = run.pattern.col_of[rows[:, 0], rows[:, 1]]
    marks[ix] = True
    p1, p2 = b1.p, b2.p
    for (e1, e2) in config.interior_elements:
        a1, _ = b1.functions_on_element(e1)
        a2, _ = b2.functions_on_element(e2)
        f1 = np.arange(a1, a1 + p1 + 1)
        f2 = np.arange(a2, a2 + p2 + 1)
        comp = run.pattern.col_of[f1[:, None], f2[None, :]].ravel()
        row_mask = (comp >= 0) & marks[np.clip(comp, 0, None)]
        if not np.any(row_mask):
            continue
        blk = run.element_block(e1, e2)
        run.scatter_block(e1, e2, blk, row_mask=row_mask)


def _scatter_single_row_of_block(run: _Run, i1: int, i2: int, e1: int, e2: int,
                                 blk: np.ndarray):
    run.scatter_block(e1, e2, blk, row_select=int(run.pattern.col_of[i1, i2]))


def form_with_timings(strategy: str, basis2d: TensorBasis2D, config: TrimConfiguration,
                      coeff: CoefficientField | None = None,
                      parallel: bool = False) -> tuple[SparseMatrix, FormationReport]:
    """Assemble with monotonic-clock instrumentation of the four components.

    Cut-cell point generation and the sparsity pattern are shared geometry
    preprocessing and are excluded from the timings; quadrature-weight setup
    and all integration work are timed.
    """
    q = max(basis2d.degrees)
    config.cut_cell_rule(q)  # warm the shared geometry outside the clock
    _pattern_for(basis2d, config)
    report = FormationReport(strategy=strategy)
    M = assemble_mass(basis2d, config, coeff, strategy, parallel, report=report)
    return M, report
