"""Mass-matrix formation and L2-projection on trimmed bi-variate B-spline spaces.

Four interchangeable formation strategies are provided: element-wise Gauss
(the reference), naive weighted quadrature, hybrid Gauss, and discontinuous
weighted quadrature.
"""

from .splines import (
    Basis1D,
    KnotVector,
    SubdivisionMatrix,
    TensorBasis2D,
    insert_knot,
    make_uniform_basis,
    make_uniform_knots,
    subdivision_matrix_to,
)
from .quadrature import (
    DiscontinuousRuleSet,
    GaussRule,
    PointLayout,
    RuleConstructionError,
    WeightedRuleSet,
    build_dwq,
    compute_wq_rules,
    exact_moments,
    gauss_legendre,
    mass_matrix_1d,
    place_wq_points,
)

__version__ = "0.1.0"
