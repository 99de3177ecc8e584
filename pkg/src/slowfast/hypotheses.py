"""Sampling-based falsification of the standing coefficient assumptions.

Each declared inequality (Lipschitz quotients vs K_*, bounds vs C_*, the
one-sided dissipativity of g, the linear-growth condition on the slow
particle drift in xi, and the spectral-gap sign condition) is attacked with
random sample points drawn from a box.  "consistent" means no violation was
found at the given budget, not a proof; a falsified verdict always carries a
concrete witness.

The dissipativity condition is checked in one-sided form,
    (v - v') * (g(u, v, xi) - g(u, v', xi)) <= -alpha * (v - v')^2,
the reading under which two fast solutions sharing a noise path merge at
rate kappa = 2*lambda_1 + 2*alpha - K_sigma2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .basis import EigenBasis
from .coefficients import CoefficientSet
from .exprlang import compile_expr, variables_of

# multiplicative slack so exact-equality cases (e.g. tanh with K = 1) do not
# falsify on rounding noise
_REL_SLACK = 1e-9
_ABS_SLACK = 1e-12


@dataclass(frozen=True)
class Witness:
    point_a: dict
    point_b: Optional[dict]
    lhs: float
    rhs: float


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # consistent | falsified | skipped
    witness: Optional[Witness] = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "falsified"


@dataclass(frozen=True)
class HypothesisReport:
    checks: Tuple[CheckResult, ...]
    h5_margin: Optional[float]

    @property
    def falsified(self):
        return tuple(c for c in self.checks if c.status == "falsified")

    @property
    def ok(self) -> bool:
        return not self.falsified

    def lines(self):
        out = []
        for c in self.checks:
            if c.status == "falsified":
                out.append(f"{c.name}: falsified ({c.detail})")
            else:
                out.append(f"{c.name}: {c.status}" + (f" ({c.detail})" if c.detail else ""))
        return out


@dataclass(frozen=True)
class SampleBox:
    """Ranges the falsifier samples from, per variable (x is always (0,1))."""

    u: Tuple[float, float] = (-3.0, 3.0)
    v: Tuple[float, float] = (-3.0, 3.0)
    xi: Tuple[float, float] = (-3.0, 3.0)
    eta: Tuple[float, float] = (-3.0, 3.0)

    def range_of(self, name: str) -> Tuple[float, float]:
        if name == "x":
            return (0.0, 1.0)
        return getattr(self, name)


def _draw(box: SampleBox, rng, names: Sequence[str], count: int) -> dict:
    return {n: rng.uniform(*box.range_of(n), size=count) for n in names}


def _eval_env(coeffs: CoefficientSet, name: str, env: dict) -> np.ndarray:
    with np.errstate(all="ignore"):
        return np.asarray(compile_expr(coeffs.expr(name))(env), dtype=np.float64)


def _witness_at(i: int, env_a: dict, env_b: Optional[dict], lhs, rhs) -> Witness:
    pa = {k: float(v[i]) for k, v in env_a.items()}
    pb = {k: float(v[i]) for k, v in env_b.items()} if env_b is not None else None
    return Witness(pa, pb, float(np.asarray(lhs)[i]), float(np.asarray(rhs)[i]))


class _Checker:
    def __init__(self, coeffs, box, rng, budget):
        self.coeffs = coeffs
        self.box = box
        self.rng = rng
        self.budget = budget
        self.results = []

    def _envs_pair(self, name: str, move: Sequence[str], force_move: bool = False):
        """Two sample sets differing in the `move` variables; any other
        variables the expression uses (x in particular) are held equal.

        Unused move variables default to zero difference (conservative for
        Lipschitz quotients); force_move samples them anyway, which the
        dissipativity check needs to probe v-independent g."""
        used = variables_of(self.coeffs.expr(name))
        held = sorted(used - set(move))
        base = _draw(self.box, self.rng, held, self.budget)
        moved = [m for m in move if m in used or force_move]
        a = dict(base, **_draw(self.box, self.rng, moved, self.budget))
        b = dict(base, **_draw(self.box, self.rng, moved, self.budget))
        for m in move:
            a.setdefault(m, np.zeros(self.budget))
            b.setdefault(m, np.zeros(self.budget))
        return a, b

    def _env_single(self, name: str, declared: Sequence[str]):
        used = variables_of(self.coeffs.expr(name))
        names = sorted(used | set(declared))
        return _draw(self.box, self.rng, names, self.budget)

    def _emit(self, name, mask, lhs, rhs, env_a, env_b, fmt):
        if mask.any():
            w = _witness_at(int(np.argmax(mask)), env_a, env_b, lhs, rhs)
            self.results.append(CheckResult(name, "falsified", w, fmt(w)))
        else:
            self.results.append(CheckResult(name, "consistent"))

    def skip(self, name):
        self.results.append(CheckResult(name, "skipped"))

    def lipschitz(self, name: str, move: Sequence[str], K: float):
        """|c(a) - c(b)|^2 <= K * sum over `move` of |a_m - b_m|^2."""
        a, b = self._envs_pair(name, move)
        va, vb = _eval_env(self.coeffs, name, a), _eval_env(self.coeffs, name, b)
        lhs = (va - vb) ** 2
        rhs = K * sum((a[m] - b[m]) ** 2 for m in move)
        mask = lhs > rhs * (1 + _REL_SLACK) + _ABS_SLACK
        self._emit(
            f"{name}_lipschitz", mask, lhs, rhs, a, b,
            lambda w: f"|delta {name}|^2 = {w.lhs:.6g} > K*dist^2 = {w.rhs:.6g}",
        )

    def growth(self, name: str, declared: Sequence[str], K: float):
        """|c(p)|^2 <= K * (1 + sum |p_m|^2)."""
        env = self._env_single(name, declared)
        lhs = _eval_env(self.coeffs, name, env) ** 2
        rhs = K * (1 + sum(env[m] ** 2 for m in declared))
        mask = lhs > rhs * (1 + _REL_SLACK) + _ABS_SLACK
        self._emit(
            f"{name}_growth", mask, lhs, rhs, env, None,
            lambda w: f"|{name}|^2 = {w.lhs:.6g} > K*(1+|.|^2) = {w.rhs:.6g}",
        )

    def bound(self, name: str, C: float):
        env = self._env_single(name, ())
        lhs = np.abs(_eval_env(self.coeffs, name, env))
        rhs = np.full(self.budget, C)
        mask = lhs > C * (1 + _REL_SLACK) + _ABS_SLACK
        self._emit(
            f"{name}_bounded", mask, lhs, rhs, env, None,
            lambda w: f"|{name}| = {w.lhs:.6g} > C = {w.rhs:.6g}",
        )

    def dissipativity(self, alpha: float):
        a, b = self._envs_pair("g", ("v",), force_move=True)
        g1, g2 = _eval_env(self.coeffs, "g", a), _eval_env(self.coeffs, "g", b)
        dv = a["v"] - b["v"]
        lhs = dv * (g1 - g2)
        rhs = -alpha * dv**2
        mask = lhs > rhs + np.abs(rhs) * _REL_SLACK + _ABS_SLACK
        self._emit(
            "g_dissipativity", mask, lhs, rhs, a, b,
            lambda w: f"(v-v')(g-g') = {w.lhs:.6g} > -alpha(v-v')^2 = {w.rhs:.6g}",
        )

    def xi_drift(self, beta: float):
        env = self._env_single("b", ("xi", "eta"))
        vb = _eval_env(self.coeffs, "b", env)
        lhs = env["xi"] * vb
        rhs = beta * (1 + env["xi"] ** 2)
        mask = lhs > rhs * (1 + _REL_SLACK) + _ABS_SLACK
        self._emit(
            "b_xi_drift", mask, lhs, rhs, env, None,
            lambda w: f"xi*b = {w.lhs:.6g} > beta(1+xi^2) = {w.rhs:.6g}",
        )


def check_hypotheses(
    coeffs: CoefficientSet,
    basis: EigenBasis,
    sample_budget: int = 2000,
    box: SampleBox = SampleBox(),
    seed: int = 0,
    model: int = 2,
) -> HypothesisReport:
    """Falsification pass over the declared inequalities.

    Deterministic given (seed, sample_budget).  Checks whose coefficient or
    constant is absent are reported as skipped.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    ck = _Checker(coeffs, box, rng, sample_budget)

    def have(expr_name, const_name):
        return getattr(coeffs, expr_name) is not None and coeffs.has_constant(const_name)

    def lip(name, move, K_name):
        if have(name, K_name):
            ck.lipschitz(name, move, coeffs.constant(K_name))
        else:
            ck.skip(f"{name}_lipschitz")

    def grow(name, declared, K_name):
        if have(name, K_name):
            ck.growth(name, declared, coeffs.constant(K_name))
        else:
            ck.skip(f"{name}_growth")

    def bnd(name, C_name):
        if have(name, C_name):
            ck.bound(name, coeffs.constant(C_name))
        else:
            ck.skip(f"{name}_bounded")

    # H1: slow-field drift and diffusion
    f_args = ("u", "v", "xi") if model == 2 else ("u", "xi")
    lip("f", f_args, "K_f")
    grow("f", f_args, "K_f")
    bnd("f", "C_f")
    if model == 2:
        lip("sigma1", ("u",), "K_sigma1")
        grow("sigma1", ("u",), "K_sigma1")
        # H2: fast-field drift and diffusion
        lip("g", ("u", "v", "xi"), "K_g")
        grow("g", ("u", "v", "xi"), "K_g")
        if have("g", "alpha"):
            ck.dissipativity(coeffs.constant("alpha"))
        else:
            ck.skip("g_dissipativity")
        lip("sigma2", ("u", "v"), "K_sigma2")
        bnd("sigma2", "C_sigma2")
    # H3: slow particle
    lip("b", ("xi", "eta"), "K_b")
    grow("b", ("xi", "eta"), "K_b")
    bnd("b", "C_b")
    if have("b", "beta"):
        ck.xi_drift(coeffs.constant("beta"))
    else:
        ck.skip("b_xi_drift")
    lip("sigma3", ("xi",), "K_sigma3")
    bnd("sigma3", "C_sigma3")
    # H4: fast particle
    lip("B", ("xi", "eta"), "K_B")
    grow("B", ("xi", "eta"), "K_B")
    bnd("B", "C_B")
    lip("sigma4", ("xi", "eta"), "K_sigma4")
    bnd("sigma4", "C_sigma4")

    # H5: spectral-gap margin, exact arithmetic from declared constants
    margin = None
    if model == 2 and coeffs.has_constant("alpha") and coeffs.has_constant("K_sigma2"):
        lam1 = float(basis.eigenvalues[0])
        margin = 2 * lam1 + 2 * coeffs.constant("alpha") - coeffs.constant("K_sigma2")
        status = "consistent" if margin > 0 else "falsified"
        ck.results.append(
            CheckResult(
                "h5_spectral_gap", status,
                detail=f"margin 2*lambda_1 + 2*alpha - K_sigma2 = {margin:.6g}",
            )
        )
    else:
        ck.skip("h5_spectral_gap")

    return HypothesisReport(checks=tuple(ck.results), h5_margin=margin)


def h5_margin(coeffs: CoefficientSet, basis: EigenBasis) -> float:
    """2*lambda_1 + 2*alpha - K_sigma2; positive means the fast field mixes."""
    return (
        2 * float(basis.eigenvalues[0])
        + 2 * coeffs.constant("alpha")
        - coeffs.constant("K_sigma2")
    )
