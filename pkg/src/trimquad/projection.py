"""L2-projection onto trimmed spline spaces and error measurement.

The projection solves ``M x = b`` with the mass matrix from any formation
strategy and ``b_i = ∫_valid f B_i c``.  Right-hand side and error integrals
use element-wise Gauss one and two orders above the mass quadrature so their
consumption error stays below the projection error, with the shared
cut-element rule on cut elements.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import CoefficientField, SparseMatrix, assemble_mass
from .quadrature import gauss_legendre
from .splines import TensorBasis2D
from .trimming import TrimConfiguration

__all__ = [
    "ProjectionProblem",
    "ConvergenceRecord",
    "ConditioningError",
    "default_target",
    "assemble_rhs",
    "solve_spd",
    "l2_error",
    "project",
    "run_convergence_study",
    "CONDITION_GUARD",
]

#: condition-estimate guard; runs beyond it abort with the offending supports
CONDITION_GUARD = 1e12

#: systems up to this size are solved by dense Cholesky, larger ones by PCG
DIRECT_LIMIT = 6000


class ConditioningError(RuntimeError):
    """Raised when the scaled mass matrix exceeds the condition guard."""


def default_target(points: np.ndarray) -> np.ndarray:
    """The fitted benchmark function ``sin(2 u1) cos(3 u2)``."""
    points = np.atleast_2d(points)
    return np.sin(2.0 * points[:, 0]) * np.cos(3.0 * points[:, 1])


@dataclass
class ProjectionProblem:
    """One projection task: target, space, trimming and strategy."""

    target: Callable[[np.ndarray], np.ndarray]
    basis2d: TensorBasis2D
    config: TrimConfiguration
    strategy: str = "reference"
    coeff: CoefficientField | None = None

    def field(self) -> CoefficientField:
        return self.coeff or CoefficientField()


@dataclass
class ConvergenceRecord:
    case: str
    strategy: str
    degree: int
    mesh: int
    h: float
    dofs: int
    l2_rel: float
    rate: float  # vs the previous mesh of the same (strategy, degree); nan first


def _tensor_quadrature(basis2d: TensorBasis2D, n_extra: int):
    """Per-direction element Gauss tables with ``p + n_extra`` points."""
    out = []
    for basis in basis2d.dir:
        rule = gauss_legendre(basis.p + n_extra)
        bp = basis.breakpoints
        pts, wts, vals, first = [], [], [], []
        for e in range(basis.num_elements):
            x, w = rule.mapped(bp[e], bp[e + 1])
            f, v = basis.eval_nonzero_batch(x)
            pts.append(x)
            wts.append(w)
            vals.append(v)
            first.append(int(f[0]))
        out.append((np.array(pts), np.array(wts), np.array(vals), np.array(first)))
    return out


def assemble_rhs(problem: ProjectionProblem) -> np.ndarray:
    """Load vector ``b_i = ∫_valid f B_i c`` over the retained functions.

    Full valid elements use ``(p+2)``-point tensor Gauss (the target is not a
    spline, so weighted-rule exactness does not apply); cut elements use the
    shared cut-cell rule.
    """
    basis2d, config = problem.basis2d, problem.config
    coeff = problem.field()
    b1, b2 = basis2d.dir
    (P1, W1, V1, F1), (P2, W2, V2, F2) = _tensor_quadrature(basis2d, 2)
    pat_active = config.active_functions()
    n1, n2 = basis2d.shape
    col_of = np.full((n1, n2), -1, dtype=np.int64)
    col_of[pat_active[:, 0], pat_active[:, 1]] = np.arange(pat_active.shape[0])
    b = np.zeros(pat_active.shape[0])

    def accumulate(pts, cw, Va, Vb, a1, a2):
        local = np.einsum("k,ka,kb->ab", cw, Va, Vb)
        comp = col_of[a1 : a1 + Va.shape[1], a2 : a2 + Vb.shape[1]].ravel()
        ok = comp >= 0
        np.add.at(b, comp[ok], local.ravel()[ok])

    for (e1, e2) in config.interior_elements:
        x1, x2 = P1[e1], P2[e2]
        pts = np.column_stack([np.repeat(x1, x2.size), np.tile(x2, x1.size)])
        cw = (problem.target(pts) * coeff.at(pts)
              * np.outer(W1[e1], W2[e2]).ravel())
        Va = np.repeat(V1[e1], x2.size, axis=0)
        Vb = np.tile(V2[e2], (x1.size, 1))
        accumulate(pts, cw, Va, Vb, F1[e1], F2[e2])

    cut_rule = config.cut_cell_rule(max(basis2d.degrees))
    for (e1, e2), (pts, wts) in cut_rule.rules.items():
        if pts.shape[0] == 0:
            continue
        f1, Va = b1.eval_nonzero_batch(pts[:, 0])
        f2, Vb = b2.eval_nonzero_batch(pts[:, 1])
        cw = problem.target(pts) * coeff.at(pts) * wts
        keys = f1 * (n2 + 1) + f2
        for key in np.unique(keys):
            sel = keys == key
            accumulate(pts[sel], cw[sel], Va[sel], Vb[sel],
                       int(f1[sel][0]), int(f2[sel][0]))
    return b


def solve_spd(M, b: np.ndarray, guard: float = CONDITION_GUARD,
              stats: dict | None = None) -> np.ndarray:
    """Solve the SPD mass system to relative residual 1e-13.

    The system is symmetrically Jacobi-scaled (trimmed cut functions carry
    tiny diagonal masses; scaling removes that grading), then factored by
    dense Cholesky for moderate sizes or solved by Jacobi-preconditioned
    conjugate gradients, with iterative refinement either way.  A condition
    estimate of the scaled operator above ``guard`` raises a warning.
    """
    A = M.data if isinstance(M, SparseMatrix) else sp.csr_matrix(M)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise ValueError("matrix is not positive definite (non-positive diagonal)")
    s = 1.0 / np.sqrt(d)
    As = sp.diags(s) @ A @ sp.diags(s)
    bs = s * b

    cond_est = math.nan
    if n <= DIRECT_LIMIT:
        dense = As.toarray()
        dense = 0.5 * (dense + dense.T)
        try:
            cho = scipy.linalg.cho_factor(dense, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as err:
            raise ValueError("matrix is not positive definite") from err

        solve_scaled = lambda r: scipy.linalg.cho_solve(cho, r, check_finite=False)
        op = spla.LinearOperator((n, n), matvec=solve_scaled, rmatvec=solve_scaled)
        cond_est = float(spla.onenormest(op) * spla.onenormest(As))
    else:
        pre = spla.LinearOperator((n, n), matvec=lambda r: r)

        def solve_scaled(r):
            x, info = spla.cg(As, r, rtol=1e-14, atol=0.0, maxiter=10 * n, M=pre)
            if info > 0:
                x2, _ = spla.cg(As, r - As @ x, rtol=1e-10, atol=0.0, maxiter=n)
                x = x + x2
            return x

    y = solve_scaled(bs)
    bnorm = np.linalg.norm(bs) or 1.0
    for _ in range(4):
        r = bs - As @ y
        if np.linalg.norm(r) <= 1e-14 * bnorm:
            break
        y = y + solve_scaled(r)
    x = s * y
    resid = np.linalg.norm(A @ x - b) / (np.linalg.norm(b) or 1.0)
    if stats is not None:
        stats["condition"] = cond_est
        stats["residual"] = resid
    if np.isfinite(cond_est) and cond_est > guard:
        warnings.warn(
            f"scaled mass matrix condition estimate {cond_est:.2e} exceeds "
            f"guard {guard:.0e}",
            RuntimeWarning,
            stacklevel=2,
        )
    if resid > 1e-13:
        raise RuntimeError(f"solver residual {resid:.2e} above 1e-13")
    return x


def _coeff_grid_full(M_or_active, basis2d: TensorBasis2D, x: np.ndarray) -> np.ndarray:
    active = M_or_active.active if isinstance(M_or_active, SparseMatrix) else M_or_active
    full = np.zeros(basis2d.shape)
    full[active[:, 0], active[:, 1]] = x
    return full


def l2_error(coeffs: np.ndarray, problem: ProjectionProblem,
             active: np.ndarray | None = None) -> float:
    """Relative L2 error of the projected spline against the target.

    Integrates with ``(p+3)``-point Gauss on full valid elements (one order
    above the load vector, so the measurement does not pollute the error)
    and the cut-cell rule on cut elements.
    """
    basis2d, config = problem.basis2d, problem.config
    if active is None:
        active = config.active_functions()
    C = _coeff_grid_full(active, basis2d, coeffs)
    b1, b2 = basis2d.dir
    (P1, W1, V1, F1), (P2, W2, V2, F2) = _tensor_quadrature(basis2d, 3)
    num = 0.0
    den = 0.0
    for (e1, e2) in config.interior_elements:
        x1, x2 = P1[e1], P2[e2]
        Ce = C[F1[e1] : F1[e1] + b1.p + 1, F2[e2] : F2[e2] + b2.p + 1]
        uh = V1[e1] @ Ce @ V2[e2].T
        pts = np.column_stack([np.repeat(x1, x2.size), np.tile(x2, x1.size)])
        f = problem.target(pts).reshape(x1.size, x2.size)
        w = np.outer(W1[e1], W2[e2])
        num += float(np.sum(w * (uh - f) ** 2))
        den += float(np.sum(w * f**2))
    cut_rule = config.cut_cell_rule(max(basis2d.degrees))
    for (e1, e2), (pts, wts) in cut_rule.rules.items():
        if pts.shape[0] == 0:
            continue
        f1, Va = b1.eval_nonzero_batch(pts[:, 0])
        f2, Vb = b2.eval_nonzero_batch(pts[:, 1])
        idx1 = f1[:, None] + np.arange(b1.p + 1)[None, :]
        idx2 = f2[:, None] + np.arange(b2.p + 1)[None, :]
        uh = np.einsum("ka,kb,kab->k", Va, Vb, C[idx1[:, :, None], idx2[:, None, :]])
        f = problem.target(pts)
        num += float(np.sum(wts * (uh - f) ** 2))
        den += float(np.sum(wts * f**2))
    if den <= 0.0:
        raise ValueError("target function has zero norm on the valid region")
    return math.sqrt(num / den)


def project(problem: ProjectionProblem, parallel: bool = False,
            stats: dict | None = None) -> tuple[np.ndarray, SparseMatrix, np.ndarray]:
    """Assemble, solve and return ``(x, M, b)`` for one projection problem."""
    M = assemble_mass(problem.basis2d, problem.config, problem.coeff,
                      strategy=problem.strategy, parallel=parallel)
    b = assemble_rhs(problem)
    local_stats: dict = {}
    x = solve_spd(M, b, stats=local_stats)
    if stats is not None:
        stats.update(local_stats)
    cond = local_stats.get("condition", math.nan)
    if np.isfinite(cond) and cond > CONDITION_GUARD:
        raise ConditioningError(
            f"condition estimate {cond:.2e} above guard {CONDITION_GUARD:.0e}; "
            f"offending trimmed supports: {_worst_supports(M)}"
        )
    return x, M, b


def _worst_supports(M: SparseMatrix, count: int = 5) -> list[tuple[int, int]]:
    d = M.data.diagonal()
    order = np.argsort(d)[:count]
    return [tuple(int(v) for v in M.active[k]) for k in order]


def run_convergence_study(case, strategies: Sequence[str], degrees: Sequence[int],
                          meshes: Sequence[int],
                          target: Callable[[np.ndarray], np.ndarray] | None = None,
                          parallel: bool = False) -> list[ConvergenceRecord]:
    """Projection errors over a mesh sequence for several strategies.

    The load vector is shared between strategies on each (degree, mesh);
    rates are ``log(e_prev / e_cur) / log(n_cur / n_prev)``.
    """
    from .cases import TrimCase, build_space, make_case

    if not isinstance(case, TrimCase):
        case = make_case(case)
    target = target or default_target
    records: list[ConvergenceRecord] = []
    prev_err: dict[tuple[str, int], tuple[int, float]] = {}
    for p in degrees:
        for nel in meshes:
            basis2d, config = build_space(case, nel, p)
            base = ProjectionProblem(target, basis2d, config)
            b = assemble_rhs(base)
            for strategy in strategies:
                M = assemble_mass(basis2d, config, strategy=strategy, parallel=parallel)
                stats: dict = {}
                x = solve_spd(M, b, stats=stats)
                cond = stats.get("condition", math.nan)
                if np.isfinite(cond) and cond > CONDITION_GUARD:
                    raise ConditioningError(
                        f"{case.name} p={p} n={nel} {strategy}: condition "
                        f"{cond:.2e} above guard; offending supports: "
                        f"{_worst_supports(M)}"
                    )
                err = l2_error(x, base, active=M.active)
                key = (strategy, p)
                rate = math.nan
                if key in prev_err:
                    n_prev, e_prev = prev_err[key]
                    rate = math.log(e_prev / err) / math.log(nel / n_prev)
                prev_err[key] = (nel, err)
                records.append(ConvergenceRecord(
                    case.name, strategy, p, nel, 1.0 / nel,
                    int(M.shape[0]), err, rate,
                ))
    return records
