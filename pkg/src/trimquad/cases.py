"""Canonical trimming cases used by the experiments and the test suite.

All cases live on the parametric unit square ``[0, 1]^2`` with uniform open
knot vectors.

* ``line``: horizontal cut at ``u2 = 0.37``, valid region below.
* ``circle``: quarter circle of radius 0.8 centered at the origin, valid
  region inside the disc.
* ``corner``: a fixed cubic Bezier biting off the upper-right corner, with a
  mild wiggle (two vertical tangents) so that curved decomposition and the
  hybrid fallbacks are exercised; valid region on the origin side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .quadrature import gauss_legendre
from .splines import Basis1D, TensorBasis2D, make_uniform_knots
from .trimming import (
    BezierTrim,
    CircleTrim,
    LineTrim,
    TrimConfiguration,
    TrimmingCurve,
    classify_elements,
)

__all__ = ["TrimCase", "make_case", "build_space", "CASE_NAMES", "CORNER_CONTROL_POINTS"]

CASE_NAMES = ("line", "circle", "corner")

LINE_LEVEL = 0.37
CIRCLE_RADIUS = 0.8

#: control points of the ``corner`` cubic; endpoints sit on the domain
#: boundary away from any breakpoint of the canonical mesh family
CORNER_CONTROL_POINTS = np.array(
    [[1.0, 0.23], [0.18, 0.34], [1.0, 0.66], [0.41, 1.0]]
)


@dataclass(frozen=True)
class TrimCase:
    """A named trimming fixture with an area oracle for verification."""

    name: str
    curve_factory: Callable[[], TrimmingCurve]
    analytic_area: float

    def curve(self) -> TrimmingCurve:
        return self.curve_factory()


def _line_curve() -> LineTrim:
    # oriented right-to-left so the valid (left) side is below the line
    return LineTrim((1.0, LINE_LEVEL), (0.0, LINE_LEVEL))


def _circle_curve() -> CircleTrim:
    return CircleTrim((0.0, 0.0), CIRCLE_RADIUS, 0.0, 0.5 * np.pi)


def _corner_curve() -> BezierTrim:
    return BezierTrim(CORNER_CONTROL_POINTS)


def _corner_area() -> float:
    """Valid area of the corner case via the divergence theorem.

    The invalid corner region is bounded by the curve and two boundary
    pieces; its area is the loop integral of ``x dy``, evaluated with
    high-order Gauss along the exact curve.
    """
    curve = _corner_curve()
    rule = gauss_legendre(30)
    t = 0.5 * (rule.points + 1.0)
    w = 0.5 * rule.weights
    pts = curve.evaluate(t)
    der = curve.derivative(t)
    # curve runs from (1, y0) to (x3, 1); close the invalid loop along the
    # top edge to (1, 1) and down the right edge (only x dy contributes)
    curve_part = float(np.sum(w * pts[:, 0] * der[:, 1]))
    right_edge = 1.0 * (CORNER_CONTROL_POINTS[0, 1] - 1.0)  # x=1, y from 1 to y0
    invalid = -(curve_part + right_edge)  # loop traversed clockwise
    return 1.0 - invalid


def make_case(name: str) -> TrimCase:
    if name == "line":
        return TrimCase("line", _line_curve, LINE_LEVEL * 1.0)
    if name == "circle":
        return TrimCase("circle", _circle_curve, 0.25 * np.pi * CIRCLE_RADIUS**2)
    if name == "corner":
        return TrimCase("corner", _corner_curve, _corner_area())
    raise ValueError(f"unknown case {name!r}; choose from {CASE_NAMES}")


def build_space(case: TrimCase | str, num_elements: int, degree: int,
                knots1=None, knots2=None) -> tuple[TensorBasis2D, TrimConfiguration]:
    """Tensor basis and classification for a case on an ``n x n`` mesh.

    Explicit knot vectors (JSON-style ``{"degree", "knots"}`` content) may
    override the uniform mesh per direction.
    """
    if isinstance(case, str):
        case = make_case(case)
    kv1 = knots1 if knots1 is not None else make_uniform_knots(num_elements, degree)
    kv2 = knots2 if knots2 is not None else make_uniform_knots(num_elements, degree)
    basis2d = TensorBasis2D(Basis1D(kv1), Basis1D(kv2))
    config = classify_elements(basis2d, [case.curve()])
    return basis2d, config
