"""Uni-variate and tensor-product B-spline spaces.

Open (clamped) knot vectors only: the first and last knot are repeated
``degree + 1`` times, so boundary basis functions are interpolatory.
Evaluation returns only the ``degree + 1`` values that are non-zero on the
span of the query point, together with the index of the first one; dense
vectors are never formed on the hot paths.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp

__all__ = [
    "KnotVector",
    "Basis1D",
    "TensorBasis2D",
    "SubdivisionMatrix",
    "insert_knot",
    "subdivision_matrix_to",
    "make_uniform_basis",
    "make_uniform_knots",
]

#: absolute tolerance used when deciding whether two knot values coincide
KNOT_TOL = 1e-12


class KnotVector:
    """An open knot vector together with a polynomial degree.

    Parameters
    ----------
    knots : array_like
        Non-decreasing sequence of parametric coordinates.  The first and
        last value must each appear exactly ``degree + 1`` times and no
        interior value may appear more than ``degree + 1`` times.
    degree : int
        Polynomial degree of the B-splines defined on this knot vector.
    """

    __slots__ = ("knots", "degree", "_breakpoints", "_multiplicities", "_element_spans")

    def __init__(self, knots, degree: int):
        knots = np.ascontiguousarray(knots, dtype=float)
        degree = int(degree)
        if degree < 0:
            raise ValueError(f"degree must be non-negative, got {degree}")
        if knots.ndim != 1 or knots.size < 2 * (degree + 1):
            raise ValueError("knot vector too short for the requested degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        self.knots = knots
        self.degree = degree
        bp, counts = _unique_with_tol(knots)
        if counts[0] != degree + 1 or counts[-1] != degree + 1:
            raise ValueError(
                "open knot vector required: boundary knots must have "
                f"multiplicity exactly {degree + 1}"
            )
        if counts.size > 2 and np.any(counts[1:-1] > degree + 1):
            raise ValueError(f"interior knot multiplicity exceeds {degree + 1}")
        self._breakpoints = bp
        self._multiplicities = counts
        # span index of each non-empty interval [bp[e], bp[e+1])
        self._element_spans = np.cumsum(counts)[:-1] - 1
        self.knots.setflags(write=False)

    # -- basic queries ------------------------------------------------------

    @property
    def breakpoints(self) -> np.ndarray:
        """Unique knot values (element boundaries)."""
        return self._breakpoints

    @property
    def multiplicities(self) -> np.ndarray:
        """Multiplicity of each unique knot value."""
        return self._multiplicities

    @property
    def num_elements(self) -> int:
        return self._breakpoints.size - 1

    @property
    def num_functions(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def element_spans(self) -> np.ndarray:
        """Knot-span index of each element, in element order."""
        return self._element_spans

    def multiplicity_of(self, u: float) -> int:
        """Multiplicity of the value ``u`` in this knot vector (0 if absent)."""
        return int(np.sum(np.abs(self.knots - u) <= KNOT_TOL))

    def find_span(self, u: float) -> int:
        """Index of the knot span containing ``u``.

        Returns the span ``l`` with ``knots[l] <= u < knots[l+1]``; the right
        domain end is mapped to the last non-empty span so evaluation is
        total on the closed domain.
        """
        return int(self.find_spans(np.asarray([u]))[0])

    def find_spans(self, u: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`find_span` for an array of coordinates."""
        u = np.asarray(u, dtype=float)
        lo, hi = self.domain
        if np.any(u < lo) or np.any(u > hi):
            bad = u[(u < lo) | (u > hi)][0]
            raise ValueError(f"coordinate {bad} outside domain [{lo}, {hi}]")
        spans = np.searchsorted(self.knots, u, side="right") - 1
        return np.clip(spans, self.degree, self.num_functions - 1)

    def element_of(self, u: np.ndarray) -> np.ndarray:
        """Element index containing each coordinate (right end inclusive)."""
        e = np.searchsorted(self.breakpoints, np.asarray(u, dtype=float), side="right") - 1
        return np.clip(e, 0, self.num_elements - 1)

    def insert(self, ubar: float) -> "KnotVector":
        """Knot vector with one extra knot at ``ubar`` (validated elsewhere)."""
        idx = int(np.searchsorted(self.knots, ubar, side="right"))
        return KnotVector(np.insert(self.knots, idx, ubar), self.degree)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"degree": self.degree, "knots": self.knots.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "KnotVector":
        data = json.loads(text)
        return cls(data["knots"], data["degree"])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and self.knots.size == other.knots.size
            and bool(np.all(np.abs(self.knots - other.knots) <= KNOT_TOL))
        )

    def __repr__(self) -> str:
        return f"KnotVector(degree={self.degree}, n={self.num_functions})"


def _unique_with_tol(values: np.ndarray, tol: float = KNOT_TOL):
    """Unique values with counts, merging entries closer than ``tol``."""
    uniq = [values[0]]
    counts = [1]
    for v in values[1:]:
        if v - uniq[-1] <= tol:
            counts[-1] += 1
        else:
            uniq.append(v)
            counts.append(1)
    return np.asarray(uniq), np.asarray(counts, dtype=int)


class Basis1D:
    """B-spline basis over a :class:`KnotVector`.

    The basis functions are normalized to a partition of unity.  Function
    ``i`` is supported on ``[knots[i], knots[i + degree + 1]]``.
    """

    __slots__ = ("kv", "_el_first", "_el_last")

    def __init__(self, kv: KnotVector):
        self.kv = kv
        # element index range [first, last] of each function's support
        spans = kv.element_spans
        p = kv.degree
        n = kv.num_functions
        first = np.empty(n, dtype=int)
        last = np.empty(n, dtype=int)
        for i in range(n):
            els = np.nonzero((spans >= i) & (spans <= i + p))[0]
            first[i], last[i] = els[0], els[-1]
        self._el_first = first
        self._el_last = last

    @property
    def p(self) -> int:
        return self.kv.degree

    @property
    def n(self) -> int:
        return self.kv.num_functions

    @property
    def breakpoints(self) -> np.ndarray:
        return self.kv.breakpoints

    @property
    def num_elements(self) -> int:
        return self.kv.num_elements

    @property
    def domain(self) -> tuple[float, float]:
        return self.kv.domain

    # -- support bookkeeping -------------------------------------------------

    def support_elements(self, i: int) -> tuple[int, int]:
        """Inclusive element index range covered by ``supp(B_i)``."""
        return int(self._el_first[i]), int(self._el_last[i])

    def support_interval(self, i: int) -> tuple[float, float]:
        kn = self.kv.knots
        return float(kn[i]), float(kn[i + self.p + 1])

    def functions_on_element(self, e: int) -> tuple[int, int]:
        """Inclusive function index range non-zero on element ``e``."""
        span = int(self.kv.element_spans[e])
        return span - self.p, span

    def overlapping(self, i: int) -> tuple[int, int]:
        """Inclusive index range of trial functions overlapping ``supp(B_i)``."""
        e0, e1 = self.support_elements(i)
        j0, _ = self.functions_on_element(e0)
        _, j1 = self.functions_on_element(e1)
        return j0, j1

    # -- evaluation ----------------------------------------------------------

    def eval_nonzero(self, u: float) -> tuple[int, np.ndarray]:
        """Values of the ``p + 1`` B-splines non-zero at ``u``.

        Returns ``(first_index, values)`` where ``values[k]`` is
        ``B_{first_index + k}(u)``.
        """
        first, vals = self.eval_nonzero_batch(np.asarray([u]))
        return int(first[0]), vals[0]

    def eval_nonzero_batch(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized Cox-de Boor recursion at many coordinates.

        Returns ``(first, values)`` with ``first`` of shape ``(N,)`` and
        ``values`` of shape ``(N, p + 1)``.
        """
        u = np.asarray(u, dtype=float)
        spans = self.kv.find_spans(u)
        p = self.p
        kn = self.kv.knots
        N = u.size
        vals = np.ones((N, p + 1))
        left = np.empty((N, p))
        right = np.empty((N, p))
        for j in range(1, p + 1):
            left[:, j - 1] = u - kn[spans + 1 - j]
            right[:, j - 1] = kn[spans + j] - u
            saved = np.zeros(N)
            for r in range(j):
                denom = right[:, r] + left[:, j - r - 1]
                temp = vals[:, r] / denom
                vals[:, r] = saved + right[:, r] * temp
                saved = left[:, j - r - 1] * temp
            vals[:, j] = saved
        return spans - p, vals

    def eval_single(self, i: int, u: float) -> float:
        """Value of one basis function; zero off its support."""
        a, b = self.support_interval(i)
        if u < a or u > b:
            return 0.0
        first, vals = self.eval_nonzero(u)
        k = i - first
        if 0 <= k <= self.p:
            return float(vals[k])
        return 0.0

    def collocation(self, points: np.ndarray) -> np.ndarray:
        """Dense matrix ``C[k, j] = B_j(points[k])``."""
        points = np.asarray(points, dtype=float)
        first, vals = self.eval_nonzero_batch(points)
        C = np.zeros((points.size, self.n))
        rows = np.repeat(np.arange(points.size), self.p + 1)
        cols = (first[:, None] + np.arange(self.p + 1)[None, :]).ravel()
        C[rows, cols] = vals.ravel()
        return C

    def spline_value(self, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Evaluate the spline with the given coefficients at ``u``."""
        u = np.asarray(u, dtype=float)
        first, vals = self.eval_nonzero_batch(u)
        idx = first[:, None] + np.arange(self.p + 1)[None, :]
        return np.einsum("kj,kj->k", np.asarray(coeffs)[idx], vals)

    def __repr__(self) -> str:
        return f"Basis1D(p={self.p}, n={self.n}, elements={self.num_elements})"


class TensorBasis2D:
    """Tensor product of two uni-variate bases.

    ``B_(i1,i2)(u1, u2) = B_i1(u1) * B_i2(u2)``.
    """

    __slots__ = ("dir",)

    def __init__(self, basis1: Basis1D, basis2: Basis1D):
        self.dir = (basis1, basis2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.dir[0].n, self.dir[1].n

    @property
    def degrees(self) -> tuple[int, int]:
        return self.dir[0].p, self.dir[1].p

    @property
    def num_elements(self) -> tuple[int, int]:
        return self.dir[0].num_elements, self.dir[1].num_elements

    def value(self, index: tuple[int, int], u1: float, u2: float) -> float:
        return self.dir[0].eval_single(index[0], u1) * self.dir[1].eval_single(index[1], u2)

    def __repr__(self) -> str:
        return f"TensorBasis2D(p={self.degrees}, n={self.shape})"


class SubdivisionMatrix:
    """Sparse map from coarse spline coefficients to fine ones.

    If ``S`` maps coefficients, the bases satisfy
    ``B_j^coarse(u) = sum_i S[i, j] * B_i^fine(u)``, so quadrature weight
    rows transform through ``S.T``.
    """

    __slots__ = ("matrix", "source", "target")

    def __init__(self, matrix: sp.spmatrix, source: Basis1D, target: Basis1D):
        self.matrix = matrix.tocsr()
        self.source = source
        self.target = target

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Fine coefficients representing the same spline."""
        return self.matrix @ np.asarray(coeffs)

    def bandwidth(self) -> int:
        coo = self.matrix.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))

    def __matmul__(self, other: "SubdivisionMatrix") -> "SubdivisionMatrix":
        return SubdivisionMatrix(self.matrix @ other.matrix, other.source, self.target)

    def __repr__(self) -> str:
        return f"SubdivisionMatrix({self.shape[0]}x{self.shape[1]})"


def insert_knot(basis: Basis1D, ubar: float) -> tuple[Basis1D, SubdivisionMatrix]:
    """Insert one knot at ``ubar`` and return the refined basis with its map.

    The single-insertion subdivision matrix has rows
    ``S[k, k] = alpha_k`` and ``S[k, k-1] = 1 - alpha_k`` where with span
    ``l`` of ``ubar``::

        alpha_k = 1                                   for k <= l - p
        alpha_k = (ubar - u_k) / (u_{k+p} - u_k)      for l - p + 1 <= k <= l
        alpha_k = 0                                   for k >= l + 1
    """
    kv = basis.kv
    p = kv.degree
    lo, hi = kv.domain
    if not (lo <= ubar <= hi):
        raise ValueError(f"insertion point {ubar} outside domain [{lo}, {hi}]")
    if kv.multiplicity_of(ubar) >= p + 1:
        raise ValueError(f"multiplicity of {ubar} would exceed {p + 1}")
    span = kv.find_span(ubar)
    n = kv.num_functions
    kn = kv.knots

    alpha = np.zeros(n + 1)
    alpha[: span - p + 1] = 1.0
    for k in range(max(span - p + 1, 0), span + 1):
        alpha[k] = (ubar - kn[k]) / (kn[k + p] - kn[k])

    # S[k, k] = alpha_k (alpha_n = 0, so row n only carries the subdiagonal)
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    data = np.concatenate([alpha[:n], 1.0 - alpha[1:]])
    S = sp.coo_matrix((data, (rows, cols)), shape=(n + 1, n)).tocsr()
    S.eliminate_zeros()
    refined = Basis1D(kv.insert(ubar))
    return refined, SubdivisionMatrix(S, basis, refined)


def subdivision_matrix_to(basis: Basis1D, target_knots) -> SubdivisionMatrix:
    """Composite subdivision matrix onto a nested, finer knot vector.

    ``target_knots`` may be a :class:`KnotVector` or a plain knot sequence of
    the same degree; it must contain the source knots as a multiset.
    """
    if isinstance(target_knots, KnotVector):
        target = target_knots
    else:
        target = KnotVector(target_knots, basis.p)
    if target.degree != basis.p:
        raise ValueError("target knot vector must have the same degree")

    missing = _multiset_difference(target.knots, basis.kv.knots)
    if _multiset_difference(basis.kv.knots, target.knots).size:
        raise ValueError("target knot vector is not a refinement of the source")

    current = basis
    S = sp.identity(basis.n, format="csr")
    for ubar in missing:
        current, step = insert_knot(current, float(ubar))
        S = step.matrix @ S
    return SubdivisionMatrix(S, basis, current)


def _multiset_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Values of ``a`` not matched by ``b`` (multiset semantics, knot tol)."""
    out = []
    b_left = list(b)
    for v in a:
        for k, w in enumerate(b_left):
            if abs(v - w) <= KNOT_TOL:
                del b_left[k]
                break
        else:
            out.append(v)
    return np.asarray(out)


def make_uniform_knots(num_elements: int, degree: int, a: float = 0.0, b: float = 1.0) -> KnotVector:
    """Open knot vector with ``num_elements`` equal elements on ``[a, b]``."""
    if num_elements < 1:
        raise ValueError("need at least one element")
    interior = np.linspace(a, b, num_elements + 1)[1:-1]
    knots = np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])
    return KnotVector(knots, degree)


def make_uniform_basis(num_elements: int, degree: int, a: float = 0.0, b: float = 1.0) -> Basis1D:
    return Basis1D(make_uniform_knots(num_elements, degree, a, b))
