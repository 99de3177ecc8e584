"""Sine spectral representation of L2(0,1) with zero Dirichlet boundary.

Fields live as coefficient vectors on the orthonormal eigenfunctions
e_k(x) = sqrt(2) sin(k pi x) of the negative Laplacian, with eigenvalues
lambda_k = (k pi)^2.  The grid side is the M interior points x_j = j/(M+1),
where the rectangle-rule quadrature makes the e_k exactly discretely
orthonormal, so grid<->coefficient transforms are plain sine-matrix
products and Parseval holds to rounding for band-limited data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .exprlang import ExprAst, compile_expr, eval_on_grid, parse_expr, to_string


@dataclass(frozen=True, eq=False)
class EigenBasis:
    n_modes: int
    grid_points: int
    eigenvalues: np.ndarray = field(repr=False)  # (N,)
    x: np.ndarray = field(repr=False)            # (M,) interior points
    synth: np.ndarray = field(repr=False)        # (N, M), e_k(x_j)

    def same_as(self, other: "EigenBasis") -> bool:
        return self is other or (
            self.n_modes == other.n_modes and self.grid_points == other.grid_points
        )

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (..., N) -> grid values (..., M)."""
        return np.asarray(coeffs) @ self.synth

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Grid values (..., M) -> coefficients (..., N) by discrete sine
        transform; exact inverse of synthesize for band-limited data."""
        return np.asarray(values) @ self.synth.T / (self.grid_points + 1)


def build_basis(n_modes: int, grid_points: int) -> EigenBasis:
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if grid_points < 2 * n_modes + 1:
        raise ValueError("grid_points must be >= 2*n_modes + 1")
    k = np.arange(1, n_modes + 1)
    x = np.arange(1, grid_points + 1) / (grid_points + 1)
    synth = math.sqrt(2.0) * np.sin(np.pi * k[:, None] * x[None, :])
    return EigenBasis(
        n_modes=n_modes,
        grid_points=grid_points,
        eigenvalues=(k * np.pi) ** 2,
        x=x,
        synth=synth,
    )


@dataclass(frozen=True, eq=False)
class Field:
    """Function on (0,1) as a coefficient vector on the sine eigenbasis."""

    basis: EigenBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (self.basis.n_modes,):
            raise ValueError(
                f"expected {self.basis.n_modes} coefficients, got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def values(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)


def zero_field(basis: EigenBasis) -> Field:
    return Field(basis, np.zeros(basis.n_modes))


def mode_field(basis: EigenBasis, k: int, amplitude: float = 1.0) -> Field:
    """The pure eigenfunction amplitude * e_k."""
    c = np.zeros(basis.n_modes)
    c[k - 1] = amplitude
    return Field(basis, c)


def _check_same_basis(a: Field, b: Field):
    if not a.basis.same_as(b.basis):
        raise ValueError("fields live on different bases")


def l2_inner(a: Field, b: Field) -> float:
    _check_same_basis(a, b)
    return float(a.coeffs @ b.coeffs)


def semigroup_factors(basis: EigenBasis, t: float) -> np.ndarray:
    """Per-mode heat multipliers exp(-lambda_k t)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return np.exp(-basis.eigenvalues * t)


def semigroup_apply(f: Field, t: float) -> Field:
    """Heat semigroup: damps mode k by exp(-lambda_k t); a contraction."""
    return Field(f.basis, f.coeffs * semigroup_factors(f.basis, t))


class NemytskiiError(ValueError):
    """Pointwise coefficient application failed; carries the grid location."""

    def __init__(self, message: str, x: Optional[float] = None):
        super().__init__(message)
        self.x = x


def grid_apply(
    basis: EigenBasis,
    expr: ExprAst,
    field_coeffs: Mapping[str, np.ndarray],
    scalars: Mapping[str, object],
) -> np.ndarray:
    """Pointwise stage of the Nemytskii map on raw arrays.

    field_coeffs values have shape (..., N); scalars are floats or arrays
    broadcastable against the leading dimensions.  Returns grid values
    (..., M).  Non-finite outputs are allowed (callers that must fail on
    them use nemytskii_apply or check themselves).
    """
    env: dict = {"x": basis.x}
    shape = (basis.grid_points,)
    for name, coeffs in field_coeffs.items():
        env[name] = basis.synthesize(coeffs)
        shape = np.broadcast_shapes(shape, env[name].shape)
    for name, value in scalars.items():
        arr = np.asarray(value, dtype=np.float64)
        env[name] = arr[..., None] if arr.ndim else arr
        shape = np.broadcast_shapes(shape, env[name].shape if arr.ndim else ())
    # constant expressions come back 0-d; present every result at grid shape
    return np.broadcast_to(eval_on_grid(expr, env), shape)


def nemytskii_apply(
    expr: ExprAst,
    fields: Mapping[str, Field],
    scalars: Optional[Mapping[str, float]] = None,
) -> Field:
    """Apply a pointwise coefficient function to fields, project back.

    Evaluates the expression on the quadrature grid with the named field
    arguments, then returns the sine-transform projection.  Domain errors
    are reported with the grid location of the first bad point.
    """
    items = list(fields.items())
    if not items:
        raise ValueError("nemytskii_apply needs at least one field argument")
    basis = items[0][1].basis
    for _, f in items[1:]:
        if not basis.same_as(f.basis):
            raise ValueError("fields live on different bases")
    values = grid_apply(
        basis,
        expr,
        {name: f.coeffs for name, f in items},
        scalars or {},
    )
    bad = ~np.isfinite(values)
    if bad.any():
        j = int(np.argmax(bad))
        raise NemytskiiError(
            f"non-finite value evaluating {to_string(expr)!r} at x = {basis.x[j]:.6g}",
            x=float(basis.x[j]),
        )
    return Field(basis, basis.analyze(values))


def project_expression(basis: EigenBasis, expr: ExprAst | str) -> Field:
    """Project a function of x (given in the expression language) onto the
    basis; used for initial data and constant forcings."""
    if isinstance(expr, str):
        expr = parse_expr(expr)
    values = np.broadcast_to(
        np.asarray(compile_expr(expr)({"x": basis.x}), dtype=np.float64),
        basis.x.shape,
    )
    if not np.isfinite(values).all():
        raise NemytskiiError(f"non-finite values projecting {to_string(expr)!r}")
    return Field(basis, basis.analyze(values))
