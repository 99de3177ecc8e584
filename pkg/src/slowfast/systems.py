"""Vectorized drivers for the full coupled systems, with noise records.

Model 1 couples the slow field u (no direct noise) to the particle pair
(xi, eta), both particles riding one Brownian channel.  Model 2 adds the
fast field v and separates the channels: W1 on u, W2 on v, W3 shared by the
particle pair.

Time grids: the field u (and the auxiliary/effective copies built from the
record) advance at the macro step h; the stiff components (v, eta, xi)
advance at the micro step h/m with m chosen so h/m <= rho*eps.  Fields are
recorded at macro nodes, particles and noise at micro resolution, which is
exactly what the auxiliary construction needs to replay.

Replica lanes that blow up turn non-finite and stay in the arrays; the
harness masks them out and counts them as aborted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .basis import EigenBasis, Field, semigroup_factors
from .coefficients import CoefficientSet
from .noise import Channel, NoiseStream, stacked_coarse_increments, stacked_increments
from .sde import micro_step_count, simulate_micro_pair
from .spde import exp_step, nemytskii_coeffs


def micro_substeps(h_macro: float, eps: float, rho: float) -> int:
    """Number of micro substeps per macro step so that h/m <= rho*eps."""
    if not (h_macro > 0 and eps > 0 and 0 < rho <= 0.5):
        raise ValueError("need h > 0, eps > 0, 0 < rho <= 0.5")
    return max(1, math.ceil(h_macro / (rho * eps) - 1e-12))


def replica_streams(master_seed, channel, replica_ids, base_step):
    return [
        NoiseStream(master_seed, channel, replica_id=r, base_step=base_step)
        for r in replica_ids
    ]


@dataclass(frozen=True, eq=False)
class Model1Trajectory:
    basis: EigenBasis
    coeffs: CoefficientSet
    eps: float
    h_macro: float
    h_micro: float
    times_macro: np.ndarray
    times_micro: np.ndarray
    u: np.ndarray    # (R, n_macro+1, N)
    xi: np.ndarray   # (R, n_micro+1)
    eta: np.ndarray  # (R, n_micro+1)
    dw: np.ndarray   # (R, n_micro), shared channel
    replica_ids: Tuple[int, ...]

    @property
    def substeps(self) -> int:
        return int(round(self.h_macro / self.h_micro))

    def xi_at_macro(self) -> np.ndarray:
        return self.xi[:, :: self.substeps]


def simulate_model1(
    coeffs: CoefficientSet,
    basis: EigenBasis,
    eps: float,
    T: float,
    h: float,
    u0: Field,
    x0: float,
    y0: float,
    master_seed: int,
    replica_ids: Sequence[int],
    rho: float = 0.1,
) -> Model1Trajectory:
    n_macro = micro_step_count(T, h)
    m = micro_substeps(h, eps, rho)
    h_mic = h / m
    streams = replica_streams(master_seed, Channel.W, replica_ids, h_mic)
    times_micro, xi, eta, dw = simulate_micro_pair(
        coeffs, eps, T, h_mic, x0, y0, streams, rho=rho
    )
    R = len(replica_ids)
    N = basis.n_modes
    factors = semigroup_factors(basis, h)
    u = np.empty((R, n_macro + 1, N))
    u[:, 0] = u0.coeffs
    cur = np.tile(u0.coeffs, (R, 1))
    xi_macro = xi[:, ::m]
    with np.errstate(all="ignore"):
        for n in range(n_macro):
            F = nemytskii_coeffs(
                basis, coeffs.expr("f"), {"u": cur}, {"xi": xi_macro[:, n]}
            )
            cur = exp_step(cur, F, 0.0, h, 0.0, factors)
            u[:, n + 1] = cur
    times_macro = np.arange(n_macro + 1) * h
    return Model1Trajectory(
        basis=basis, coeffs=coeffs, eps=eps, h_macro=h, h_micro=h_mic,
        times_macro=times_macro, times_micro=times_micro,
        u=u, xi=xi, eta=eta, dw=dw, replica_ids=tuple(replica_ids),
    )


@dataclass(frozen=True, eq=False)
class Model2Trajectory:
    basis: EigenBasis
    coeffs: CoefficientSet
    eps: float
    h_macro: float
    h_micro: float
    times_macro: np.ndarray
    times_micro: np.ndarray
    u: np.ndarray    # (R, n_macro+1, N)
    v: np.ndarray    # (R, n_macro+1, N), recorded at macro nodes
    xi: np.ndarray   # (R, n_micro+1)
    eta: np.ndarray  # (R, n_micro+1)
    dw1: np.ndarray  # (R, n_macro): macro-step sums on W1
    dw2: np.ndarray  # (R, n_micro) on W2
    dw3: np.ndarray  # (R, n_micro) on W3
    replica_ids: Tuple[int, ...]

    @property
    def substeps(self) -> int:
        return int(round(self.h_macro / self.h_micro))

    def xi_at_macro(self) -> np.ndarray:
        return self.xi[:, :: self.substeps]


def simulate_model2(
    coeffs: CoefficientSet,
    basis: EigenBasis,
    eps: float,
    T: float,
    h: float,
    u0: Field,
    v0: Field,
    x0: float,
    y0: float,
    master_seed: int,
    replica_ids: Sequence[int],
    rho: float = 0.1,
) -> Model2Trajectory:
    n_macro = micro_step_count(T, h)
    m = micro_substeps(h, eps, rho)
    h_mic = h / m
    n_micro = n_macro * m
    w1 = replica_streams(master_seed, Channel.W1, replica_ids, h_mic)
    w2 = replica_streams(master_seed, Channel.W2, replica_ids, h_mic)
    w3 = replica_streams(master_seed, Channel.W3, replica_ids, h_mic)
    times_micro, xi, eta, dw3 = simulate_micro_pair(
        coeffs, eps, T, h_mic, x0, y0, w3, rho=rho
    )
    dw1 = stacked_coarse_increments(w1, 0, n_macro, m)
    dw2 = stacked_increments(w2, 0, n_micro)

    R = len(replica_ids)
    N = basis.n_modes
    fac_macro = semigroup_factors(basis, h)
    fac_micro = semigroup_factors(basis, h_mic / eps)
    u = np.empty((R, n_macro + 1, N))
    v = np.empty((R, n_macro + 1, N))
    u[:, 0] = u0.coeffs
    v[:, 0] = v0.coeffs
    cur_u = np.tile(u0.coeffs, (R, 1))
    cur_v = np.tile(v0.coeffs, (R, 1))
    sqrt_eps = math.sqrt(eps)
    f_expr, g_expr = coeffs.expr("f"), coeffs.expr("g")
    s1_expr, s2_expr = coeffs.expr("sigma1"), coeffs.expr("sigma2")
    with np.errstate(all="ignore"):
        for n in range(n_macro):
            xi_n = xi[:, n * m]
            F = nemytskii_coeffs(
                basis, f_expr, {"u": cur_u, "v": cur_v}, {"xi": xi_n}
            )
            S1 = nemytskii_coeffs(basis, s1_expr, {"u": cur_u}, {})
            u_next = exp_step(cur_u, F, S1, h, dw1[:, n : n + 1], fac_macro)
            # fast field: m substeps with u held at the macro-step start
            for j in range(m):
                i = n * m + j
                fields = {"u": cur_u, "v": cur_v}
                G = nemytskii_coeffs(basis, g_expr, fields, {"xi": xi[:, i]})
                S2 = nemytskii_coeffs(basis, s2_expr, fields, {})
                cur_v = exp_step(
                    cur_v, G, S2, h_mic / eps, dw2[:, i : i + 1] / sqrt_eps, fac_micro
                )
            cur_u = u_next
            u[:, n + 1] = cur_u
            v[:, n + 1] = cur_v
    times_macro = np.arange(n_macro + 1) * h
    return Model2Trajectory(
        basis=basis, coeffs=coeffs, eps=eps, h_macro=h, h_micro=h_mic,
        times_macro=times_macro, times_micro=times_micro,
        u=u, v=v, xi=xi, eta=eta, dw1=dw1, dw2=dw2, dw3=dw3,
        replica_ids=tuple(replica_ids),
    )
