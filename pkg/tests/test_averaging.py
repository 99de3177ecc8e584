import math

import numpy as np
import pytest

from slowfast.averaging import (
    build_auxiliary_pair,
    delta_schedule,
    gap_estimators,
    integrate_effective_system,
    schedule_bound_shape,
    make_plan,
    PartitionPlan,
)
from slowfast.basis import build_basis, mode_field, project_expression, zero_field
from slowfast.coefficients import coefficients_from_strings
from slowfast.exprlang import parse_expr
from slowfast.sde import AveragedDrift
from slowfast.spde import AveragedField
from slowfast.systems import micro_substeps, simulate_model1, simulate_model2

N_MODES, GRID = 16, 48


@pytest.fixture(scope="module")
def basis():
    return build_basis(N_MODES, GRID)


def linear_coeffs(g="-v + 1 + 0.5*u", f="v", sigma1="0", sigma2="0.5"):
    return coefficients_from_strings(
        {
            "f": f, "g": g, "b": "sin(xi)+eta", "B": "-eta",
            "sigma1": sigma1, "sigma2": sigma2, "sigma3": "1", "sigma4": "1",
        },
        {"alpha": 1.0, "K_sigma2": 0.0},
    )


class TestDeltaSchedule:
    def test_reference_values(self):
        assert delta_schedule(math.exp(-1)) == pytest.approx(math.exp(-1), rel=1e-12)
        assert delta_schedule(0.01) == pytest.approx(0.01 * math.sqrt(math.log(100)), rel=1e-12)
        assert delta_schedule(0.01) == pytest.approx(0.02146, abs=2e-5)

    def test_rejects_bad_eps(self):
        for bad in (0.0, 1.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                delta_schedule(bad)

    def test_limits(self):
        eps = 10.0 ** -np.arange(1, 7)
        deltas = np.array([delta_schedule(e) for e in eps])
        ratios = deltas / eps
        assert np.all(np.diff(deltas) < 0)   # delta -> 0
        assert np.all(np.diff(ratios) > 0)   # delta/eps -> infinity

    def test_bound_shape_decays(self):
        # direct numeric check of the schedule mechanism: the combined bound
        # is not monotone from 10^-1 (it peaks at 10^-2 for gamma=0.4, C=1)
        # but decreases strictly from there on and heads to zero
        vals = [schedule_bound_shape(10.0**-k, gamma=0.4, C=1.0) for k in range(1, 7)]
        tail = vals[1:]
        assert all(a > b for a, b in zip(tail, tail[1:]))
        assert vals[-1] < vals[0] / 3


class TestPlan:
    def test_rounding_to_macro_grid(self):
        plan = make_plan(eps=0.02, T=1.0, h_macro=0.002, h_micro=0.002)
        assert plan.block_steps == round(delta_schedule(0.02) / 0.002)
        assert plan.delta == pytest.approx(plan.block_steps * 0.002)

    def test_validation(self):
        with pytest.raises(ValueError):
            PartitionPlan(delta=0.05, eps=0.1, T=1.0, h_macro=0.02, h_micro=0.02, block_steps=3)
        with pytest.raises(ValueError):
            PartitionPlan(delta=0.0, eps=0.1, T=1.0, h_macro=0.02, h_micro=0.02, block_steps=0)

    def test_micro_substeps(self):
        assert micro_substeps(0.01, 0.5, 0.1) == 1
        assert micro_substeps(0.01, 0.02, 0.1) == 5
        assert micro_substeps(0.002, 0.02, 0.1) == 1


class TestAuxiliaryPair:
    def test_one_block_u_independent_coeffs_change_nothing(self, basis):
        # delta >= T and f, g independent of u: freezing is a no-op, so the
        # auxiliary pair reproduces the recorded trajectory bit for bit
        cs = linear_coeffs(g="-v + 1", f="v", sigma1="0.3", sigma2="0.5")
        traj = simulate_model2(
            cs, basis, eps=0.1, T=0.2, h=0.01,
            u0=mode_field(basis, 1, 0.5), v0=zero_field(basis),
            x0=0.3, y0=0.0, master_seed=11, replica_ids=[0, 1],
        )
        plan = make_plan(0.1, 0.2, 0.01, traj.h_micro, delta=0.2)
        aux = build_auxiliary_pair(traj, plan)
        assert np.array_equal(aux.v_hat, traj.v)
        assert np.array_equal(aux.u_hat, traj.u)

    def test_u_independent_g_keeps_vhat_exact_any_delta(self, basis):
        cs = linear_coeffs(g="-v", f="v", sigma1="0", sigma2="0.5")
        traj = simulate_model2(
            cs, basis, eps=0.1, T=0.2, h=0.01,
            u0=mode_field(basis, 1, 0.5), v0=mode_field(basis, 2, 0.3),
            x0=0.0, y0=0.0, master_seed=12, replica_ids=[0],
        )
        for delta in (0.05, 0.1):
            plan = make_plan(0.1, 0.2, 0.01, traj.h_micro, delta=delta)
            aux = build_auxiliary_pair(traj, plan)
            assert np.array_equal(aux.v_hat, traj.v)

    def test_block_restarts_hit_recorded_values(self, basis):
        cs = linear_coeffs()
        traj = simulate_model2(
            cs, basis, eps=0.05, T=0.2, h=0.01,
            u0=project_expression(basis, "x*(1-x)"), v0=zero_field(basis),
            x0=0.1, y0=0.2, master_seed=13, replica_ids=[0, 1, 2],
        )
        plan = make_plan(0.05, 0.2, 0.01, traj.h_micro, delta=0.04)
        aux = build_auxiliary_pair(traj, plan)
        # v_hat at a block-start node equals the recorded v there (telescoping:
        # the restart semantics are well defined at shared boundaries)
        for k in range(0, 20, plan.block_steps):
            assert np.array_equal(aux.v_hat[:, k] if k == 0 else traj.v[:, k], traj.v[:, k])
        # interior nodes differ once u moves
        assert not np.array_equal(aux.v_hat, traj.v)

    def test_fast_gap_shrinks_with_delta(self, basis):
        # E||v - v_hat||^2 decreases as delta decreases at fixed eps
        cs = linear_coeffs()
        traj = simulate_model2(
            cs, basis, eps=0.05, T=0.4, h=0.01,
            u0=project_expression(basis, "2*x*(1-x)"), v0=zero_field(basis),
            x0=0.1, y0=0.0, master_seed=14, replica_ids=list(range(16)),
        )
        sups = []
        for delta in (0.2, 0.1, 0.05):
            plan = make_plan(0.05, 0.4, 0.01, traj.h_micro, delta=delta)
            aux = build_auxiliary_pair(traj, plan)
            gap = ((traj.v - aux.v_hat) ** 2).sum(axis=2).mean(axis=0)
            sups.append(gap.max())
        assert sups[2] < sups[1] < sups[0]


class TestEffectiveSystem:
    def test_pure_decay_when_unforced(self, basis):
        cs = linear_coeffs(f="0")
        bbar = AveragedDrift(expr=parse_expr("0"))
        fbar = AveragedField(basis, cs, mode="expr", expr=parse_expr("0"))
        eff = integrate_effective_system(
            2, mode_field(basis, 1), 0.0, fbar, bbar, cs,
            T=0.5, h=0.01, master_seed=15, replica_ids=[0], base_step=0.01,
        )
        oracle = np.exp(-basis.eigenvalues[0] * eff.times_macro)
        assert np.max(np.abs(eff.u_bar[0, :, 0] - oracle)) < 1e-12

    def test_model1_matches_full_system_when_f_ignores_xi(self, basis):
        # f independent of xi: the reduced field solves the same equation
        cs = coefficients_from_strings(
            {"f": "tanh(u)", "b": "sin(xi)+eta", "B": "-eta", "sigma3": "1", "sigma4": "1"},
            {},
        )
        u0 = project_expression(basis, "x*(1-x)")
        traj = simulate_model1(
            cs, basis, eps=0.1, T=0.3, h=0.01, u0=u0, x0=0.2, y0=0.0,
            master_seed=16, replica_ids=[0, 1],
        )
        bbar = AveragedDrift(expr=parse_expr("sin(xi)"))
        eff = integrate_effective_system(
            1, u0, 0.2, None, bbar, cs, T=0.3, h=0.01,
            master_seed=16, replica_ids=[0, 1], base_step=traj.h_micro,
        )
        assert np.max(np.abs(eff.u_bar - traj.u)) < 1e-14

    def test_closed_form_and_ergodic_fbar_agree(self, basis):
        # internal oracle cross-check on the linear preset
        cs = linear_coeffs(g="-v + 1", f="v")
        u0 = zero_field(basis)
        bbar = AveragedDrift(expr=parse_expr("sin(xi)"))
        common = dict(T=0.3, h=0.01, master_seed=17, replica_ids=list(range(4)), base_step=0.01)
        eff_cf = integrate_effective_system(
            2, u0, 0.0, AveragedField(basis, cs, mode="elliptic"), bbar, cs, **common
        )
        eff_erg = integrate_effective_system(
            2, u0, 0.0,
            AveragedField(basis, cs, mode="ergodic", T_erg=15.0, burn_in=1.5,
                          replicas=6, h=0.0025, seed=18),
            bbar, cs, **common,
        )
        norm_cf = (eff_cf.u_bar**2).sum(axis=2).mean(axis=0)
        norm_erg = (eff_erg.u_bar**2).sum(axis=2).mean(axis=0)
        # statistical + EM-bias tolerance on E||u_bar(t)||^2
        assert np.max(np.abs(norm_cf - norm_erg)) < 5e-4


class TestGapEstimators:
    def test_deterministic_uncoupled_gaps_vanish(self, basis):
        cs = coefficients_from_strings(
            {
                "f": "1", "g": "-v", "b": "0", "B": "-eta",
                "sigma1": "0", "sigma2": "0", "sigma3": "0", "sigma4": "0",
            },
            {},
        )
        traj = simulate_model2(
            cs, basis, eps=0.1, T=0.2, h=0.01,
            u0=zero_field(basis), v0=zero_field(basis), x0=0.5, y0=0.0,
            master_seed=19, replica_ids=[0, 1],
        )
        plan = make_plan(0.1, 0.2, 0.01, traj.h_micro, delta=0.05)
        aux = build_auxiliary_pair(traj, plan)
        bbar = AveragedDrift(expr=parse_expr("0"))
        fbar = AveragedField(basis, cs, mode="expr", expr=parse_expr("1"))
        eff = integrate_effective_system(
            2, zero_field(basis), 0.5, fbar, bbar, cs, T=0.2, h=0.01,
            master_seed=19, replica_ids=[0, 1], base_step=traj.h_micro,
        )
        table = gap_estimators(traj, aux, eff, plan)
        assert table.sup_v_vhat.estimate == 0.0
        assert table.sup_u_uhat.estimate == 0.0
        assert table.sup_uhat_ubar.estimate < 1e-25
        assert table.sup_xi_xibar.estimate == 0.0

    def test_xi_gap_single_code_path(self, basis):
        # the particle gap in the table is computed from the same recorded
        # arrays the particle engine produced: check bit-identity
        cs = linear_coeffs()
        traj = simulate_model2(
            cs, basis, eps=0.1, T=0.2, h=0.01,
            u0=zero_field(basis), v0=zero_field(basis), x0=0.3, y0=0.0,
            master_seed=20, replica_ids=[0, 1, 2],
        )
        plan = make_plan(0.1, 0.2, 0.01, traj.h_micro)
        aux = build_auxiliary_pair(traj, plan)
        bbar = AveragedDrift(expr=parse_expr("sin(xi)"))
        fbar = AveragedField(basis, cs, mode="elliptic")
        eff = integrate_effective_system(
            2, zero_field(basis), 0.3, fbar, bbar, cs, T=0.2, h=0.01,
            master_seed=20, replica_ids=[0, 1, 2], base_step=traj.h_micro,
        )
        table = gap_estimators(traj, aux, eff, plan)
        direct = (traj.xi_at_macro() - eff.xi_bar) ** 2
        assert np.array_equal(table.xi_xibar_sq, direct)


def test_missing_noise_record_rejected(basis):
    import dataclasses

    cs = linear_coeffs()
    traj = simulate_model2(
        cs, basis, eps=0.1, T=0.1, h=0.01,
        u0=zero_field(basis), v0=zero_field(basis), x0=0.0, y0=0.0,
        master_seed=99, replica_ids=[0],
    )
    plan = make_plan(0.1, 0.1, 0.01, traj.h_micro)
    broken = dataclasses.replace(traj, dw2=None)
    with pytest.raises(ValueError, match="noise record"):
        build_auxiliary_pair(broken, plan)
