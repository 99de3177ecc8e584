import json
import math
import pathlib

import pytest

from slowfast.errors import ConfigError
from slowfast.harness import (
    ExperimentConfig,
    MomentTable,
    TableRow,
    emit_outputs,
    estimate_cost,
    load_config,
    run_check_suite,
    run_model1_convergence,
    run_model2_convergence,
    simulate_single,
    tabulate_averages,
    wilson_interval,
)
from slowfast.presets import MODEL1_DEFAULT, MODEL2_LINEAR, PRESETS

REPO = pathlib.Path(__file__).resolve().parent.parent


def small_model1(**over):
    data = {**MODEL1_DEFAULT, "replicas": 40, "eps_ladder": [0.5, 0.02], **over}
    return ExperimentConfig.from_dict(data)


def small_model2(**over):
    data = {**MODEL2_LINEAR, "replicas": 30, **over}
    return ExperimentConfig.from_dict(data)


class TestConfig:
    def test_roundtrip_dict(self):
        cfg = ExperimentConfig.from_dict(MODEL1_DEFAULT)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_shipped_toml_matches_presets(self):
        for name, preset in PRESETS.items():
            cfg_file = load_config(str(REPO / "configs" / f"{name.replace('_', '_')}.toml"))
            assert cfg_file == ExperimentConfig.from_dict(preset), name

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_dict(dict(MODEL1_DEFAULT, bogus=1))

    def test_missing_required_rejected(self):
        data = dict(MODEL1_DEFAULT)
        del data["replicas"]
        with pytest.raises(ConfigError, match="missing required"):
            ExperimentConfig.from_dict(data)

    def test_zero_replicas_rejected(self):
        with pytest.raises(ConfigError, match="replicas"):
            small_model1(replicas=0).validate()

    def test_step_must_divide_horizon(self):
        with pytest.raises(ConfigError, match="divide"):
            small_model1(h=0.013).validate()

    def test_model1_f_may_not_use_v(self):
        bad = dict(MODEL1_DEFAULT)
        bad["coefficients"] = dict(bad["coefficients"], f="tanh(v)")
        with pytest.raises(ConfigError, match="may not reference v"):
            ExperimentConfig.from_dict(bad).validate()

    def test_u0_only_x(self):
        with pytest.raises(ConfigError, match="only x"):
            small_model1(u0="u + x").validate()

    def test_bbar_expr_required_for_closed_form(self):
        with pytest.raises(ConfigError, match="bbar_expr"):
            small_model1(bbar_expr=None).validate()

    def test_budget_gate(self):
        with pytest.raises(ConfigError, match="budget"):
            run_model1_convergence(small_model1(budget_seconds=1e-9))

    def test_estimate_cost_positive(self):
        assert estimate_cost(small_model1()) > 0


class TestWilson:
    def test_degenerate(self):
        lo, hi = wilson_interval(0, 200)
        assert lo < 1e-12 and 0 < hi < 0.03

    def test_contains_p_hat(self):
        lo, hi = wilson_interval(50, 200)
        assert lo < 0.25 < hi


class TestMomentTable:
    def test_csv_schema_and_header_only(self):
        table = MomentTable()
        text = table.to_csv()
        assert text == "epsilon,statistic,time,estimate,stderr,replicas,aborted\n"

    def test_csv_row_roundtrip_precision(self):
        table = MomentTable()
        value = 0.1 + 0.2  # not representable prettily
        table.add(0.1, "stat", "sup", value, 1e-17, 5, 0)
        line = table.to_csv().splitlines()[1]
        parts = line.split(",")
        assert float(parts[3]) == value
        assert parts[2] == "sup"

    def test_rows_sorted(self):
        table = MomentTable()
        table.add(0.5, "b", "sup", 1, 0, 1, 0)
        table.add(0.1, "a", 0.5, 1, 0, 1, 0)
        table.add(0.1, "a", 0.1, 1, 0, 1, 0)
        table.add(0.1, "a", "sup", 1, 0, 1, 0)
        lines = table.to_csv().splitlines()[1:]
        assert [l.split(",")[0] for l in lines] == ["0.1", "0.1", "0.1", "0.5"]
        assert lines[2].split(",")[2] == "sup"  # sup sorts after times


class TestRunners:
    def test_model1_small_run_passes(self):
        tables, verdict = run_model1_convergence(small_model1())
        assert verdict.status == "PASS"
        col = tables["model1_convergence"].column("p_sup_u_gap_gt_tol")
        assert len(col) == 2
        assert col[0].replicas == 40

    def test_model1_requires_model1(self):
        with pytest.raises(ConfigError, match="model = 1"):
            run_model1_convergence(small_model2())

    def test_model2_small_run_passes_and_chebyshev_identity(self):
        cfg = small_model2()
        tables, verdict = run_model2_convergence(cfg)
        assert verdict.status == "PASS"
        conv = tables["model2_convergence"]
        for eps in cfg.eps_ladder:
            sup = conv.get(eps, "sup_E_u_gap_sq")
            cheb = conv.get(eps, "chebyshev_bound")
            assert cheb.estimate == sup.estimate / cfg.delta_tol  # exact arithmetic
        gaps = tables["model2_gaps"]
        assert gaps.get(cfg.eps_ladder[0], "sup_E_v_vhat_sq").estimate > 0

    def test_threads_give_identical_tables(self):
        cfg = small_model1(replicas=60)  # several chunks
        t1, v1 = run_model1_convergence(cfg, threads=1)
        t2, v2 = run_model1_convergence(cfg, threads=2)
        assert v1 == v2
        assert t1["model1_convergence"].to_csv() == t2["model1_convergence"].to_csv()


class TestCheckSuite:
    def test_empty_request_empty_report(self):
        report = run_check_suite(small_model2(), checks=())
        assert report.entries == []
        assert report.exit_code == 0

    def test_unknown_check_rejected(self):
        with pytest.raises(ConfigError, match="unknown check"):
            run_check_suite(small_model2(), checks=("nonsense",))

    def test_model1_cannot_run_contraction(self):
        with pytest.raises(ConfigError, match="does not apply"):
            run_check_suite(small_model1(), checks=("contraction",))

    def test_hypotheses_check_passes_linear_preset(self):
        report = run_check_suite(small_model2(), checks=("hypotheses",))
        entry = report.entries[0]
        assert entry.status == "PASS"
        margin = 2 * math.pi**2 + 2.0  # K_sigma2 = 0
        assert f"{margin:.6g}" in entry.detail

    def test_contraction_check(self):
        report = run_check_suite(small_model2(), checks=("contraction",))
        entry = report.entries[0]
        assert entry.status == "PASS"
        assert "kappa_hat" in entry.detail

    def test_energy_check(self):
        report = run_check_suite(small_model2(), checks=("energy",))
        assert report.entries[0].status == "PASS"

    def test_moments_check(self):
        report = run_check_suite(small_model1(), checks=("moments",))
        assert report.entries[0].status == "PASS"


class TestEmitOutputs:
    def test_emit_and_manifest_roundtrip(self, tmp_path):
        cfg = small_model1()
        table = MomentTable([TableRow(0.1, "s", "sup", 1.0, 0.1, 4, 0)])
        written = emit_outputs({"demo": table}, str(tmp_path), cfg)
        names = {pathlib.Path(p).name for p in written}
        assert names == {"demo.csv", "manifest.json"}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert ExperimentConfig.from_dict(manifest["config"]) == cfg
        assert manifest["master_seed"] == cfg.master_seed

    def test_lf_line_endings(self, tmp_path):
        table = MomentTable([TableRow(0.1, "s", "sup", 1.0, 0.1, 4, 0)])
        emit_outputs({"demo": table}, str(tmp_path), small_model1())
        raw = (tmp_path / "demo.csv").read_bytes()
        assert b"\r" not in raw
        assert raw.decode("utf-8").endswith("\n")


class TestFrontEnds:
    def test_simulate_single_schema(self):
        text = simulate_single(small_model2(replicas=1))
        lines = text.splitlines()
        assert lines[0] == "time,xi,eta,u_norm_sq,v_norm_sq"
        assert len(lines) == 2 + round(1.0 / 0.002) - 1 or len(lines) >= 3
        first = lines[1].split(",")
        assert float(first[0]) == 0.0

    def test_simulate_model1_empty_v_column(self):
        text = simulate_single(small_model1())
        assert text.splitlines()[1].endswith(",")

    def test_tabulate_averages_bbar(self):
        cfg = small_model1(bbar_grid=[-1.0, 0.0, 1.0])
        # shrink the estimator cost
        data = cfg.to_dict()
        data["bbar_ergodic"] = {"T": 10.0, "burn_in": 1.0, "replicas": 4, "h": 0.02}
        cfg = ExperimentConfig.from_dict(data)
        out = tabulate_averages(cfg)
        lines = out["bbar"].splitlines()
        assert lines[0] == "xi,estimate,stderr"
        assert len(lines) == 4
        mid = lines[2].split(",")
        assert abs(float(mid[1])) < 4 * float(mid[2]) + 0.05  # bbar(0) ~ 0


class TestAbortAccounting:
    def test_all_replica_blowup_is_inconclusive(self):
        # cubic fast drift diverges deterministically from y0 = 2
        bad = {
            **MODEL1_DEFAULT,
            "replicas": 10,
            "eps_ladder": [0.5, 0.1],
            "coefficients": dict(MODEL1_DEFAULT["coefficients"], B="eta^3"),
            "y0": 2.0,
        }
        tables, verdict = run_model1_convergence(ExperimentConfig.from_dict(bad))
        assert verdict.status == "INCONCLUSIVE"
        row = tables["model1_convergence"].get(0.5, "p_sup_u_gap_gt_tol")
        assert row.aborted == 10
        assert row.replicas == 0


class TestTrivialGapCases:
    def test_model1_f_without_xi_gives_zero_probability(self):
        cfg = small_model1(
            coefficients=dict(MODEL1_DEFAULT["coefficients"], f="tanh(u)"),
            replicas=10,
        )
        tables, _ = run_model1_convergence(cfg)
        col = tables["model1_convergence"].column("p_sup_u_gap_gt_tol")
        assert all(row.estimate == 0.0 for row in col)

    def test_model2_v_xi_independent_f_gives_zero_gap(self):
        # with sigma1 = 0 and f = f(u), the reduced field is the full field
        cfg = small_model2(
            coefficients=dict(MODEL2_LINEAR["coefficients"], f="tanh(u)"),
            replicas=4,
            eps_ladder=[0.1, 0.05],
        )
        tables, _ = run_model2_convergence(cfg)
        col = tables["model2_convergence"].column("sup_E_u_gap_sq")
        assert all(row.estimate == 0.0 for row in col)


class TestMomentSupLiteralCases:
    def test_frozen_particle_sup_is_exactly_initial_square(self):
        # no drift, no noise: xi stays at x0 = 1, so sup E|xi|^2 = 1
        cfg = small_model1(
            coefficients={"f": "tanh(u)", "b": "0", "B": "-eta",
                          "sigma3": "0", "sigma4": "0"},
            constants={"K_f": 1.0, "K_b": 0.0, "C_b": 0.0, "beta": 0.0,
                       "K_sigma3": 0.0, "C_sigma3": 0.0, "K_B": 1.0,
                       "C_B": 3.0, "K_sigma4": 0.0, "C_sigma4": 0.0},
            replicas=3,
            eps_ladder=[0.5],
            x0=1.0,
        )
        report = run_check_suite(cfg, checks=("moments",))
        assert report.entries[0].status == "PASS"
        assert "sup E xi_sq = 1" in report.entries[0].detail

    def test_schedule_bound_shape_column_reports_analytic_reference(self):
        from slowfast.averaging import schedule_bound_shape

        cfg = small_model2(replicas=4)
        tables, _ = run_model2_convergence(cfg)
        col = tables["model2_gaps"].column("schedule_bound_shape")
        assert len(col) == 2
        for row in col:
            assert row.estimate == schedule_bound_shape(row.epsilon, gamma=cfg.gamma)
