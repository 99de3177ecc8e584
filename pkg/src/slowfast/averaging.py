"""Khasminskii auxiliary processes, effective-system integration, the
delta schedule, and the gap statistics that mirror the convergence
argument.

The auxiliary fast field v_hat restarts from the recorded v at every block
boundary k*delta and evolves with the slow field frozen at u(k*delta); the
auxiliary slow field u_hat keeps the true initial datum and noise path but
reads its drift from the frozen-u / v_hat pair.  The asymmetry that u_hat's
noise coefficient rides the TRUE slow path sigma1(u(s)) is intentional and
is preserved here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .basis import Field, semigroup_factors
from .coefficients import CoefficientSet
from .errors import ConfigError
from .noise import Channel
from .sde import AveragedDrift, integrate_effective_xi, micro_step_count
from .spde import AveragedField, SupStat, exp_step, nemytskii_coeffs, moment_sup
from .systems import Model2Trajectory, replica_streams


def delta_schedule(eps: float) -> float:
    """Block length eps * sqrt(-ln eps): vanishes with eps while the ratio
    delta/eps still grows, which is what kills every error term at once."""
    if not 0 < eps < 1:
        raise ValueError("delta schedule needs 0 < eps < 1")
    return eps * math.sqrt(-math.log(eps))


def schedule_bound_shape(eps: float, gamma: float = 0.4, C: float = 1.0) -> float:
    """The combined error-bound shape under the schedule; strictly decreasing
    in eps along 10^-k ladders (checked in the suite, not assumed)."""
    d = delta_schedule(eps)
    return d**gamma + eps / d + (d ** (1 + gamma) / eps) * math.exp(C * d / eps)


@dataclass(frozen=True)
class PartitionPlan:
    """Blocking of [0, T] for the auxiliary construction."""

    delta: float
    eps: float
    T: float
    h_macro: float
    h_micro: float
    block_steps: int  # macro steps per block

    def __post_init__(self):
        if not 0 < self.delta <= self.T + 1e-12:
            raise ValueError("need 0 < delta <= T")
        steps = self.delta / self.h_macro
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("macro step must divide delta")
        if self.block_steps != int(round(steps)):
            raise ValueError("block_steps inconsistent with delta/h")


def make_plan(
    eps: float,
    T: float,
    h_macro: float,
    h_micro: float,
    delta: Optional[float] = None,
) -> PartitionPlan:
    """Round the requested (or scheduled) delta to a whole number of macro
    steps, clipped to [h_macro, T]."""
    raw = delta_schedule(eps) if delta is None else float(delta)
    block_steps = max(1, int(round(raw / h_macro)))
    n_macro = int(round(T / h_macro))
    block_steps = min(block_steps, n_macro)
    return PartitionPlan(
        delta=block_steps * h_macro, eps=eps, T=T,
        h_macro=h_macro, h_micro=h_micro, block_steps=block_steps,
    )


@dataclass(frozen=True, eq=False)
class AuxiliaryPair:
    """Auxiliary slow/fast fields on the macro grid, one lane per replica."""

    u_hat: np.ndarray  # (R, n_macro+1, N)
    v_hat: np.ndarray  # (R, n_macro+1, N)
    plan: PartitionPlan


def build_auxiliary_pair(
    traj: Model2Trajectory,
    plan: PartitionPlan,
    coeffs: Optional[CoefficientSet] = None,
) -> AuxiliaryPair:
    """Replay the recorded noise through the block-frozen dynamics.

    v_hat: restarts from v(k*delta), frozen u(k*delta), true xi(s), same W2
    increments, at the micro step.  u_hat: macro step, drift from the
    block-frozen u and v_hat, noise sigma1 along the true u path, same W1
    increments.
    """
    coeffs = coeffs or traj.coeffs
    if traj.dw1 is None or traj.dw2 is None:
        raise ValueError("trajectory carries no noise record")
    basis = traj.basis
    m = traj.substeps
    R, n_nodes, N = traj.u.shape
    n_macro = n_nodes - 1
    bs = plan.block_steps
    eps = traj.eps
    h, h_mic = traj.h_macro, traj.h_micro
    fac_micro = semigroup_factors(basis, h_mic / eps)
    fac_macro = semigroup_factors(basis, h)
    sqrt_eps = math.sqrt(eps)
    g_expr, s2_expr = coeffs.expr("g"), coeffs.expr("sigma2")
    f_expr, s1_expr = coeffs.expr("f"), coeffs.expr("sigma1")

    v_hat = np.empty_like(traj.v)
    v_hat[:, 0] = traj.v[:, 0]
    cur_v = traj.v[:, 0].copy()
    u_block = traj.u[:, 0]
    with np.errstate(all="ignore"):
        for n in range(n_macro):
            if n % bs == 0:
                # block start: restart from the recorded fast field and
                # freeze the slow field here
                cur_v = traj.v[:, n].copy()
                u_block = traj.u[:, n]
            for j in range(m):
                i = n * m + j
                fields = {"u": u_block, "v": cur_v}
                G = nemytskii_coeffs(basis, g_expr, fields, {"xi": traj.xi[:, i]})
                S2 = nemytskii_coeffs(basis, s2_expr, fields, {})
                cur_v = exp_step(
                    cur_v, G, S2, h_mic / eps, traj.dw2[:, i : i + 1] / sqrt_eps, fac_micro
                )
            v_hat[:, n + 1] = cur_v

        u_hat = np.empty_like(traj.u)
        u_hat[:, 0] = traj.u[:, 0]
        cur_u = traj.u[:, 0].copy()
        xi_macro = traj.xi_at_macro()
        for n in range(n_macro):
            k = (n // bs) * bs
            F = nemytskii_coeffs(
                basis, f_expr,
                {"u": traj.u[:, k], "v": v_hat[:, n]},
                {"xi": xi_macro[:, n]},
            )
            # noise coefficient rides the true slow path, not u_hat
            S1 = nemytskii_coeffs(basis, s1_expr, {"u": traj.u[:, n]}, {})
            cur_u = exp_step(cur_u, F, S1, h, traj.dw1[:, n : n + 1], fac_macro)
            u_hat[:, n + 1] = cur_u
    return AuxiliaryPair(u_hat=u_hat, v_hat=v_hat, plan=plan)


@dataclass(frozen=True, eq=False)
class EffectiveTrajectory:
    times_macro: np.ndarray
    u_bar: np.ndarray   # (R, n_macro+1, N)
    xi_bar: np.ndarray  # (R, n_macro+1)


def integrate_effective_system(
    model: int,
    u0: Field,
    x0: float,
    fbar: Optional[AveragedField],
    bbar: AveragedDrift,
    coeffs: CoefficientSet,
    T: float,
    h: float,
    master_seed: int,
    replica_ids: Sequence[int],
    base_step: float,
) -> EffectiveTrajectory:
    """Reduced system on the same Brownian paths as the full system.

    The streams are re-derived from (master_seed, channel, replica) at the
    full system's base step; coarse increments are the exact sums of the
    fine ones, so trajectory comparison is path-coupled.  Model 1 drives a
    noise-free field with the reduced particle; model 2 uses the averaged
    drift fbar and the sigma1 noise on W1.
    """
    basis = u0.basis
    n_macro = micro_step_count(T, h)
    R = len(replica_ids)
    xi_channel = Channel.W if model == 1 else Channel.W3
    xi_streams = replica_streams(master_seed, xi_channel, replica_ids, base_step)
    _, xi_bar = integrate_effective_xi(
        x0, bbar, coeffs.expr("sigma3"), T, h, xi_streams
    )
    xi_bar = np.atleast_2d(xi_bar)
    factors = semigroup_factors(basis, h)
    u_bar = np.empty((R, n_macro + 1, basis.n_modes))
    u_bar[:, 0] = u0.coeffs
    cur = np.tile(u0.coeffs, (R, 1))
    if model == 2:
        if fbar is None:
            raise ConfigError("model 2 effective system needs an averaged drift")
        factor = int(round(h / base_step))
        w1 = replica_streams(master_seed, Channel.W1, replica_ids, base_step)
        dw1 = np.stack([s.coarse_increments(0, n_macro, factor) for s in w1])
        s1_expr = coeffs.expr("sigma1")
    with np.errstate(all="ignore"):
        for n in range(n_macro):
            if model == 1:
                F = nemytskii_coeffs(
                    basis, coeffs.expr("f"), {"u": cur}, {"xi": xi_bar[:, n]}
                )
                cur = exp_step(cur, F, 0.0, h, 0.0, factors)
            else:
                F = fbar.field_coeffs(cur, xi_bar[:, n])
                S1 = nemytskii_coeffs(basis, s1_expr, {"u": cur}, {})
                cur = exp_step(cur, F, S1, h, dw1[:, n : n + 1], factors)
            u_bar[:, n + 1] = cur
    times = np.arange(n_macro + 1) * h
    return EffectiveTrajectory(times_macro=times, u_bar=u_bar, xi_bar=xi_bar)


@dataclass(frozen=True, eq=False)
class GapTable:
    """Per-replica squared gaps on the macro grid plus their sup statistics."""

    times: np.ndarray
    v_vhat_sq: np.ndarray      # (R, n+1)
    u_uhat_sq: np.ndarray
    uhat_ubar_sq: np.ndarray
    xi_xibar_sq: np.ndarray
    sup_v_vhat: SupStat
    sup_u_uhat: SupStat
    sup_uhat_ubar: SupStat
    sup_xi_xibar: SupStat


def gap_estimators(
    traj: Model2Trajectory,
    aux: AuxiliaryPair,
    eff: EffectiveTrajectory,
    plan: PartitionPlan,
) -> GapTable:
    """The four gap statistics of the averaging argument, path-coupled on
    identical noise.  The particle gap reuses the recorded paths, so it is
    bit-identical to what the particle engine itself would report."""
    times = traj.times_macro
    v_gap = ((traj.v - aux.v_hat) ** 2).sum(axis=2)
    u_gap = ((traj.u - aux.u_hat) ** 2).sum(axis=2)
    uu_gap = ((aux.u_hat - eff.u_bar) ** 2).sum(axis=2)
    xi_gap = (traj.xi_at_macro() - eff.xi_bar) ** 2
    return GapTable(
        times=times,
        v_vhat_sq=v_gap,
        u_uhat_sq=u_gap,
        uhat_ubar_sq=uu_gap,
        xi_xibar_sq=xi_gap,
        sup_v_vhat=moment_sup(v_gap, times),
        sup_u_uhat=moment_sup(u_gap, times),
        sup_uhat_ubar=moment_sup(uu_gap, times),
        sup_xi_xibar=moment_sup(xi_gap, times),
    )
