"""Natural cubic B-spline basis for the shared time effect.

The time effect is a cubic spline with free interior knots, constrained to
have zero second derivative at both boundary abscissae.  With k interior
knots the constrained basis has exactly k + 2 functions: the raw cubic
B-spline basis on the augmented knot vector has k + 4 functions and each
boundary constraint removes one degree of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space

__all__ = ["SplineState", "basis_matrix", "evaluate_f", "natural_transform"]

SPLINE_DEGREE = 3


@dataclass(frozen=True)
class SplineState:
    """Knot configuration plus coefficients of the constrained basis.

    xi holds the sorted interior knot locations, all strictly inside
    (a, b); omega has length k + 2 where k = len(xi).
    """

    a: float
    b: float
    xi: np.ndarray
    omega: np.ndarray

    @property
    def k(self) -> int:
        return len(self.xi)

    def validate(self):
        if not self.a < self.b:
            raise ValueError("boundary abscissae must satisfy a < b")
        if self.k and (self.xi[0] <= self.a or self.xi[-1] >= self.b):
            raise ValueError("interior knots must lie strictly inside (a, b)")
        if self.k and np.any(np.diff(self.xi) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        if len(self.omega) != self.k + 2:
            raise ValueError(
                f"coefficient vector has length {len(self.omega)}, expected {self.k + 2}"
            )

    def with_omega(self, omega: np.ndarray) -> "SplineState":
        return replace(self, omega=np.asarray(omega, dtype=float))

    @classmethod
    def empty(cls, a: float, b: float) -> "SplineState":
        return cls(a=a, b=b, xi=np.empty(0), omega=np.zeros(2))


def _augmented_knots(a: float, b: float, xi: tuple) -> np.ndarray:
    return np.concatenate([[a] * (SPLINE_DEGREE + 1), xi, [b] * (SPLINE_DEGREE + 1)])


@lru_cache(maxsize=512)
def _natural_transform(a: float, b: float, xi: tuple) -> np.ndarray:
    """Orthonormal map from the k+4 raw B-splines to the k+2 natural basis.

    Columns span the null space of the second-derivative-at-boundary
    constraints, so any coefficient vector yields f''(a) = f''(b) = 0.
    """
    knots = _augmented_knots(a, b, xi)
    n_raw = len(knots) - SPLINE_DEGREE - 1
    raw = BSpline(knots, np.eye(n_raw), SPLINE_DEGREE)
    constraints = raw(np.array([a, b]), nu=2)  # (2, n_raw)
    transform = null_space(constraints)
    if transform.shape != (n_raw, n_raw - 2):
        raise np.linalg.LinAlgError("degenerate knot configuration")
    return transform


def natural_transform(a: float, b: float, xi: np.ndarray) -> np.ndarray:
    return _natural_transform(float(a), float(b), tuple(float(x) for x in xi))


def _raw_design(a: float, b: float, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    knots = _augmented_knots(a, b, tuple(float(x) for x in xi))
    return BSpline.design_matrix(t, knots, SPLINE_DEGREE).toarray()


def basis_matrix(state: SplineState, t_values) -> np.ndarray:
    """Evaluate the natural basis at t_values; rows index t, columns the k+2 functions."""
    t = np.atleast_1d(np.asarray(t_values, dtype=float))
    if t.size and (t.min() < state.a or t.max() > state.b):
        raise ValueError(
            f"abscissae outside [{state.a}, {state.b}]; the basis does not extrapolate"
        )
    raw = _raw_design(state.a, state.b, state.xi, t)
    return raw @ natural_transform(state.a, state.b, state.xi)


def evaluate_f(state: SplineState, t):
    """Time-effect value(s) at t: inner product of the basis row(s) with omega."""
    values = basis_matrix(state, t) @ state.omega
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(values[0])
    return values
