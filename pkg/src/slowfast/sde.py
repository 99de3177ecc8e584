"""Euler-Maruyama stepping for the particle pair (xi, eta), the frozen fast
process, ergodic estimation of the averaged drift, and the reduced slow
equation.

Both particles are driven by the same scalar Brownian increment per step
(single channel), which is what makes path-coupled comparison of the full
and reduced slow dynamics meaningful.  The stiff 1/eps drift restricts the
explicit step to h <= rho*eps with rho at most 0.5.

All stepping kernels broadcast over a leading replica axis; the scalar
state API wraps the one-replica case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .coefficients import CoefficientSet
from .errors import BlowUpError
from .exprlang import ExprAst, compile_expr
from .noise import Channel, NoiseStream, stacked_increments

MAX_STABILITY_FACTOR = 0.5


@dataclass(frozen=True)
class MicroState:
    xi: float
    eta: float
    t: float


def _cf(expr: ExprAst):
    return compile_expr(expr)


def _require_micro_step(h: float, eps: float, rho: float):
    if not 0 < h:
        raise ValueError("step h must be positive")
    rho = min(rho, MAX_STABILITY_FACTOR)
    if h > rho * eps * (1 + 1e-12):
        raise ValueError(
            f"micro step h = {h:.3g} exceeds rho*eps = {rho * eps:.3g} "
            f"(rho = {rho}); the stiff drift needs h <= rho*eps"
        )


def micro_step_count(T: float, h: float) -> int:
    n = int(round(T / h))
    if abs(n * h - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"step {h} does not divide horizon {T}")
    return n


def step_pair_arrays(
    xi: np.ndarray,
    eta: np.ndarray,
    coeffs: CoefficientSet,
    eps: float,
    h: float,
    dw: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """One EM step of the coupled pair; xi and eta share the increment dw."""
    env = {"xi": xi, "eta": eta}
    with np.errstate(all="ignore"):
        b = _cf(coeffs.expr("b"))(env)
        s3 = _cf(coeffs.expr("sigma3"))({"xi": xi})
        Bv = _cf(coeffs.expr("B"))(env)
        s4 = _cf(coeffs.expr("sigma4"))(env)
        xi_next = xi + b * h + s3 * dw
        eta_next = eta + Bv * (h / eps) + s4 * (dw / math.sqrt(eps))
    return xi_next, eta_next


def step_coupled_sde(
    state: MicroState,
    coeffs: CoefficientSet,
    eps: float,
    h: float,
    dW: float,
    rho: float = MAX_STABILITY_FACTOR,
) -> MicroState:
    """Scalar-state EM step; raises on step-size violation and blow-up."""
    _require_micro_step(h, eps, rho)
    xi, eta = step_pair_arrays(
        np.float64(state.xi), np.float64(state.eta), coeffs, eps, h, np.float64(dW)
    )
    xi, eta = float(xi), float(eta)
    if not (math.isfinite(xi) and math.isfinite(eta)):
        raise BlowUpError(
            "particle pair left the finite range",
            state.t + h,
            {"xi": xi, "eta": eta},
        )
    return MicroState(xi=xi, eta=eta, t=state.t + h)


def simulate_micro_pair(
    coeffs: CoefficientSet,
    eps: float,
    T: float,
    h: float,
    x0: float,
    y0: float,
    streams: Sequence[NoiseStream],
    rho: float = MAX_STABILITY_FACTOR,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pair trajectories: returns (times, xi, eta, dw) with
    xi, eta of shape (R, n+1) and dw of shape (R, n).  Non-finite lanes are
    left to propagate; callers mask aborted replicas."""
    n = micro_step_count(T, h)
    _require_micro_step(h, eps, rho)
    R = len(streams)
    dw = stacked_increments(streams, 0, n)
    xi = np.empty((R, n + 1))
    eta = np.empty((R, n + 1))
    xi[:, 0] = x0
    eta[:, 0] = y0
    cur_xi = np.full(R, float(x0))
    cur_eta = np.full(R, float(y0))
    for i in range(n):
        cur_xi, cur_eta = step_pair_arrays(cur_xi, cur_eta, coeffs, eps, h, dw[:, i])
        xi[:, i + 1] = cur_xi
        eta[:, i + 1] = cur_eta
    times = np.arange(n + 1) * h
    return times, xi, eta, dw


def simulate_frozen_fast_sde(
    xi: float,
    y0: float,
    coeffs: CoefficientSet,
    T: float,
    h: float,
    streams: Union[NoiseStream, Sequence[NoiseStream]],
) -> Tuple[np.ndarray, np.ndarray]:
    """Path(s) of the fast particle with the slow position frozen:
    d eta = B(xi, eta) dt + sigma4(xi, eta) dW.  Returns (times, eta) with
    eta of shape (n+1,) for a single stream or (R, n+1) for several."""
    single = isinstance(streams, NoiseStream)
    stream_list = [streams] if single else list(streams)
    n = micro_step_count(T, h)
    dw = stacked_increments(stream_list, 0, n)
    R = len(stream_list)
    eta = np.empty((R, n + 1))
    eta[:, 0] = y0
    cur = np.full(R, float(y0))
    xi_arr = np.full(R, float(xi))
    B_fn = _cf(coeffs.expr("B"))
    s4_fn = _cf(coeffs.expr("sigma4"))
    with np.errstate(all="ignore"):
        for i in range(n):
            env = {"xi": xi_arr, "eta": cur}
            cur = cur + B_fn(env) * h + s4_fn(env) * dw[:, i]
            eta[:, i + 1] = cur
    if not np.isfinite(eta[:, -1]).all():
        bad = int(np.argmax(~np.isfinite(eta[:, -1])))
        raise BlowUpError(
            "frozen fast particle left the finite range",
            T,
            {"xi": xi, "replica": stream_list[bad].replica_id},
        )
    times = np.arange(n + 1) * h
    return times, eta[0] if single else eta


def estimate_bbar(
    xi: float,
    coeffs: CoefficientSet,
    T: float,
    burn_in: float,
    replicas: int,
    seed: int,
    h: float = 0.01,
    y0: float = 0.0,
) -> Tuple[float, float]:
    """Time-and-ensemble average of b(xi, eta) along the frozen fast process.

    Returns (value, stderr) where stderr is the spread of per-replica time
    averages; it plays the role of the empirical averaging error bound and
    decays as T grows.
    """
    if not T > burn_in >= 0:
        raise ValueError("need T > burn_in >= 0")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    streams = [
        NoiseStream(seed, channel=Channel.W, replica_id=r, base_step=h)
        for r in range(replicas)
    ]
    _, eta = simulate_frozen_fast_sde(xi, y0, coeffs, T, h, streams)
    skip = int(round(burn_in / h))
    env = {"xi": np.full_like(eta[:, skip:], float(xi)), "eta": eta[:, skip:]}
    with np.errstate(all="ignore"):
        values = np.asarray(_cf(coeffs.expr("b"))(env), dtype=np.float64)
    values = np.broadcast_to(values, eta[:, skip:].shape)
    per_replica = values.mean(axis=1)
    value = float(per_replica.mean())
    if replicas == 1:
        return value, float("nan")
    stderr = float(per_replica.std(ddof=1) / math.sqrt(replicas))
    return value, stderr


@dataclass(frozen=True)
class AveragedDrift:
    """Averaged slow-particle drift: closed form or a tabulated grid with
    linear interpolation (evaluation restricted to the grid hull)."""

    expr: Optional[ExprAst] = None
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.expr is None) == (self.grid is None):
            raise ValueError("provide exactly one of expr or grid tabulation")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=np.float64)
            if g.ndim != 1 or g.size < 2 or not np.all(np.diff(g) > 0):
                raise ValueError("tabulation grid must be 1-d, increasing, size >= 2")
            object.__setattr__(self, "grid", g)
            object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def __call__(self, xi):
        xi_arr = np.asarray(xi, dtype=np.float64)
        if self.expr is not None:
            with np.errstate(all="ignore"):
                out = _cf(self.expr)({"xi": xi_arr})
            return np.broadcast_to(np.asarray(out, dtype=np.float64), xi_arr.shape) if xi_arr.ndim else float(out)
        finite = xi_arr[np.isfinite(xi_arr)]
        if finite.size and (finite.min() < self.grid[0] or finite.max() > self.grid[-1]):
            raise ValueError(
                f"xi = {float(finite.min() if finite.min() < self.grid[0] else finite.max()):.6g} "
                f"outside tabulation hull [{self.grid[0]:.6g}, {self.grid[-1]:.6g}]"
            )
        out = np.interp(xi_arr, self.grid, self.values)
        return out if xi_arr.ndim else float(out)


def tabulate_bbar(
    xi_grid: Sequence[float],
    coeffs: CoefficientSet,
    T: float,
    burn_in: float,
    replicas: int,
    seed: int,
    h: float = 0.01,
) -> AveragedDrift:
    """Grid wrapper over estimate_bbar; node r uses its own replica block so
    nodes are independent."""
    grid = np.asarray(list(xi_grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("xi_grid must be nonempty")
    if not np.all(np.diff(grid) > 0):
        raise ValueError("xi_grid must be strictly increasing")
    values = np.empty_like(grid)
    errs = np.empty_like(grid)
    for i, x in enumerate(grid):
        # distinct seeds per node keep node estimates independent
        values[i], errs[i] = estimate_bbar(
            float(x), coeffs, T, burn_in, replicas, seed + 1_000_003 * i, h
        )
    return AveragedDrift(grid=grid, values=values, stderr=errs)


def integrate_effective_xi(
    x0: float,
    bbar: AveragedDrift,
    sigma3: ExprAst,
    T: float,
    h: float,
    streams: Union[NoiseStream, Sequence[NoiseStream]],
) -> Tuple[np.ndarray, np.ndarray]:
    """EM path of the reduced slow particle driven by the averaged drift.

    The streams must be the same channel/replica the full system consumed;
    increments at the coarse step h are exact sums of the stream's fine
    increments, so the reduced path rides the full system's Brownian path.
    """
    single = isinstance(streams, NoiseStream)
    stream_list = [streams] if single else list(streams)
    n = micro_step_count(T, h)
    factor = int(round(h / stream_list[0].base_step))
    if abs(factor * stream_list[0].base_step - h) > 1e-12 * max(1.0, h):
        raise ValueError("coarse step h must be an integer multiple of base_step")
    dw = np.stack([s.coarse_increments(0, n, factor) for s in stream_list])
    R = len(stream_list)
    xi = np.empty((R, n + 1))
    xi[:, 0] = x0
    cur = np.full(R, float(x0))
    s3_fn = _cf(sigma3)
    with np.errstate(all="ignore"):
        for i in range(n):
            cur = cur + np.asarray(bbar(cur)) * h + s3_fn({"xi": cur}) * dw[:, i]
            xi[:, i + 1] = cur
    times = np.arange(n + 1) * h
    return times, xi[0] if single else xi
