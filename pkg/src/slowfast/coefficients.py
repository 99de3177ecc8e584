"""Coefficient sets: the model's drift/diffusion functions plus the
user-declared constants of the standing assumptions.

Constants are declared, never estimated: the checker in hypotheses.py only
tries to falsify them by sampling.  Arity discipline restricts which
variables each coefficient may reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .exprlang import ExprAst, parse_expr, to_string, variables_of

# variables each coefficient may reference
ARITY = {
    "f": frozenset({"u", "v", "xi", "x"}),
    "g": frozenset({"u", "v", "xi", "x"}),
    "b": frozenset({"xi", "eta"}),
    "B": frozenset({"xi", "eta"}),
    "sigma1": frozenset({"u"}),
    "sigma2": frozenset({"u", "v"}),
    "sigma3": frozenset({"xi"}),
    "sigma4": frozenset({"xi", "eta"}),
}

CONSTANT_NAMES = (
    "K_f", "C_f", "K_sigma1",
    "K_g", "alpha", "K_sigma2", "C_sigma2",
    "K_b", "C_b", "beta", "K_sigma3", "C_sigma3",
    "K_B", "C_B", "K_sigma4", "C_sigma4",
)

# the reduced model has no fast field: f couples u to xi only
MODEL1_EXPRS = ("f", "b", "B", "sigma3", "sigma4")
MODEL1_CONSTANTS = (
    "K_f", "K_b", "C_b", "beta", "K_sigma3", "C_sigma3",
    "K_B", "C_B", "K_sigma4", "C_sigma4",
)
MODEL2_EXPRS = ("f", "g", "b", "B", "sigma1", "sigma2", "sigma3", "sigma4")
MODEL2_CONSTANTS = CONSTANT_NAMES


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    f: Optional[ExprAst] = None
    g: Optional[ExprAst] = None
    b: Optional[ExprAst] = None
    B: Optional[ExprAst] = None
    sigma1: Optional[ExprAst] = None
    sigma2: Optional[ExprAst] = None
    sigma3: Optional[ExprAst] = None
    sigma4: Optional[ExprAst] = None
    constants: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ARITY:
            expr = getattr(self, name)
            if expr is None:
                continue
            extra = variables_of(expr) - ARITY[name]
            if extra:
                raise CoefficientError(
                    f"{name} = {to_string(expr)!r} may not reference "
                    f"{sorted(extra)} (allowed: {sorted(ARITY[name])})"
                )
        for cname, value in self.constants.items():
            if cname not in CONSTANT_NAMES:
                raise CoefficientError(f"unknown constant {cname!r}")
            if not value >= 0:
                raise CoefficientError(f"constant {cname} must be nonnegative")

    def constant(self, name: str) -> float:
        try:
            return float(self.constants[name])
        except KeyError:
            raise CoefficientError(f"constant {name!r} not declared") from None

    def has_constant(self, name: str) -> bool:
        return name in self.constants

    def expr(self, name: str) -> ExprAst:
        e = getattr(self, name)
        if e is None:
            raise CoefficientError(f"coefficient {name!r} not defined")
        return e

    def validate_for_model(self, model: int):
        """Check the required exprs/constants exist for the given model and
        that the reduced model's f does not reference the absent fast field."""
        if model == 1:
            exprs, consts = MODEL1_EXPRS, MODEL1_CONSTANTS
        elif model == 2:
            exprs, consts = MODEL2_EXPRS, MODEL2_CONSTANTS
        else:
            raise CoefficientError(f"model must be 1 or 2, got {model}")
        missing = [n for n in exprs if getattr(self, n) is None]
        if missing:
            raise CoefficientError(f"model {model} requires coefficients {missing}")
        missing_c = [c for c in consts if c not in self.constants]
        if missing_c:
            raise CoefficientError(f"model {model} requires constants {missing_c}")
        if model == 1 and "v" in variables_of(self.f):
            raise CoefficientError("model 1 has no fast field: f may not reference v")


def coefficients_from_strings(
    exprs: Mapping[str, str], constants: Mapping[str, float]
) -> CoefficientSet:
    parsed = {}
    for name, text in exprs.items():
        if name not in ARITY:
            raise CoefficientError(f"unknown coefficient {name!r}")
        parsed[name] = parse_expr(text)
    return CoefficientSet(constants=dict(constants), **parsed)
