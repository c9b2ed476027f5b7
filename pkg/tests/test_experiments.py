import json
import math

import numpy as np
import pytest

from tsattack import (
    ConfigurationError,
    batch_form,
    calibrate_action_box,
    cost_delta_quadratic,
    dominant_eigenpair,
    emit_report,
    jacobian_selftest,
    load_config,
    parse_config,
    run_constraint_experiment,
    run_cost_experiment,
    solve_unconstrained,
)
from tsattack.experiments import ScenarioStats, load_windows

BASE_CONFIG = {
    "system": {"A": 1, "B": -1, "C": 1, "Q": 1, "R": 1, "T": 12, "x0": 1},
    "deltas": [0.3, 1.0],
    "scenarios": ["cost-adv", "random"],
    "dataset": {"kind": "arima", "count": 12},
    "seed": 7,
}


def make_config(**overrides):
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw.update(overrides)
    return parse_config(raw)


class TestConfigParsing:
    def test_scalar_shorthand_system(self):
        cfg = make_config()
        assert cfg.system.n == 1
        assert cfg.system.T == 12

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            make_config(extra=1)

    def test_unknown_system_key_rejected(self):
        bad = dict(BASE_CONFIG["system"], D=2)
        with pytest.raises(ConfigurationError, match="unknown key"):
            make_config(system=bad)

    def test_deltas_must_ascend(self):
        with pytest.raises(ConfigurationError, match="ascending"):
            make_config(deltas=[1.0, 0.3])

    def test_deltas_must_be_positive(self):
        with pytest.raises(ConfigurationError, match="positive"):
            make_config(deltas=[0.0, 1.0])

    def test_scenarios_required(self):
        with pytest.raises(ConfigurationError, match="scenario"):
            make_config(scenarios=[])

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown scenario"):
            make_config(scenarios=["cost-adv", "fgsm"])

    def test_csv_dataset_needs_path_and_column(self):
        with pytest.raises(ConfigurationError, match="path"):
            make_config(dataset={"kind": "csv"})

    def test_default_normalization_by_dataset(self, tmp_path):
        cfg = make_config()
        assert cfg.normalization == "none"
        csv_cfg = make_config(dataset={"kind": "csv", "path": "x.csv",
                                       "column": "load"})
        assert csv_cfg.normalization == "zscore-global"

    def test_attack_defaults(self):
        cfg = make_config()
        assert cfg.attack.mode == "iterated"
        assert cfg.attack.steps == 20
        assert cfg.attack.step_size is None

    def test_load_config_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(BASE_CONFIG), encoding="utf-8")
        cfg = load_config(path)
        assert cfg.seed == 7

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="invalid JSON"):
            load_config(path)


class TestLoadWindows:
    def test_horizon_mismatch_rejected(self):
        cfg = make_config(dataset={"kind": "arima", "count": 3, "horizon": 5})
        with pytest.raises(ConfigurationError, match="p\\*T"):
            load_windows(cfg)

    def test_arima_defaults_to_pt(self):
        windows = load_windows(make_config())
        assert len(windows) == 12
        assert windows[0].values.size == 12


class TestCostExperiment:
    def test_closed_form_gap_per_window(self):
        # For the unconstrained controller the attacked-minus-original cost
        # must equal delta^2 * lambda_1 on every window.
        cfg = make_config()
        stats = run_cost_experiment(cfg)
        lam = dominant_eigenpair(batch_form(cfg.system).Psi).lambda1
        adv = [r for r in stats.records if r.scenario == "cost-adv"]
        assert len(adv) == 12 * len(cfg.deltas)
        for record in adv:
            expected = record.delta ** 2 * lam
            assert math.isclose(record.j_adv - record.j_orig, expected,
                                rel_tol=1e-8, abs_tol=1e-10)

    def test_random_never_beats_closed_form(self):
        stats = run_cost_experiment(make_config())
        by_key = {(r.series_id, r.delta, r.scenario): r for r in stats.records}
        for (sid, delta, scenario), record in by_key.items():
            if scenario != "random":
                continue
            adv = by_key[(sid, delta, "cost-adv")]
            assert record.j_adv <= adv.j_adv + 1e-9

    def test_aggregates_and_p_values_present(self):
        stats = run_cost_experiment(make_config())
        assert len(stats.aggregates) == 2 * len((0.3, 1.0))
        deltas = {entry["delta"] for entry in stats.p_values}
        assert deltas == {0.3, 1.0}
        for entry in stats.p_values:
            assert entry["metric"] == "j_adv"
            assert 0.0 <= entry["p_value"] <= 1.0

    def test_deterministic_given_seed(self):
        a = run_cost_experiment(make_config())
        b = run_cost_experiment(make_config())
        assert a.records == b.records

    def test_needs_cost_scenarios(self):
        cfg = make_config(scenarios=["max-action"])
        with pytest.raises(ConfigurationError, match="cost experiment"):
            run_cost_experiment(cfg)


class TestConstraintExperiment:
    def _config(self, **overrides):
        return make_config(
            scenarios=["max-action", "l1", "random"],
            action_box="auto",
            deltas=[0.5],
            dataset={"kind": "arima", "count": 8},
            attack={"mode": "iterated", "steps": 6},
            **overrides,
        )

    def test_records_and_flags(self):
        stats = run_constraint_experiment(self._config())
        assert len(stats.records) == 8 * 3
        for record in stats.records:
            assert record.scenario in ("max-action", "l1", "random")
            assert record.norm_used <= 0.5 * (1 + 1e-9)

    def test_attacks_move_their_own_metric(self):
        stats = run_constraint_experiment(self._config())
        by_key = {(r.series_id, r.scenario): r for r in stats.records}
        wins = 0
        for (sid, scenario), record in by_key.items():
            if scenario != "max-action":
                continue
            rand = by_key[(sid, "random")]
            wins += record.max_u_adv > rand.max_u_adv
        assert wins >= 6  # 8 windows; the targeted attack should dominate

    def test_requires_box(self):
        cfg = make_config(scenarios=["max-action", "random"], deltas=[0.5])
        with pytest.raises(ConfigurationError, match="action_box"):
            run_constraint_experiment(cfg)

    def test_explicit_box_accepted(self):
        cfg = make_config(
            scenarios=["max-action", "random"],
            deltas=[0.5],
            dataset={"kind": "arima", "count": 4},
            action_box={"u_min": -3.0, "u_max": 3.0},
            attack={"mode": "single-step"},
        )
        stats = run_constraint_experiment(cfg)
        assert len(stats.records) == 8

    def test_huge_budget_collapses_onto_action_bound(self):
        # With a budget far beyond the box, the max-action attack drives
        # nearly every window onto u_max exactly (windows whose actions are
        # all pinned at a bound have a zero Jacobian and stall instead).
        cfg = make_config(
            system={"A": 1, "B": -1, "C": 1, "Q": 1, "R": 1, "T": 20, "x0": 1},
            deltas=[20.0],
            scenarios=["max-action"],
            dataset={"kind": "arima", "count": 10},
            action_box={"u_min": -2.0, "u_max": 2.0},
            attack={"mode": "iterated", "steps": 10},
            seed=5,
        )
        stats = run_constraint_experiment(cfg)
        values = np.array([r.max_u_adv for r in stats.records])
        assert np.all(values <= 2.0 + 1e-9)
        assert np.sum(np.abs(values - 2.0) <= 1e-9) >= 8

    def test_random_scenario_near_zero_at_small_delta(self):
        # Undirected noise at small delta should barely move the cost.
        cfg = make_config(
            system={"A": 1, "B": -1, "C": 1, "Q": 1, "R": 1, "T": 50, "x0": 1},
            deltas=[0.3],
            scenarios=["random"],
            dataset={"kind": "arima", "count": 30},
            action_box={"u_min": -1000.0, "u_max": 1000.0},
            seed=77,
        )
        stats = run_constraint_experiment(cfg)
        entry = stats.aggregates[0]
        assert entry["n_used_j"] == 30
        assert abs(entry["mean_pct_increase_j"]) <= 2.0

    def test_zero_gradient_scenario_flagged(self):
        cfg = make_config(
            scenarios=["cost-gradient", "random"],
            deltas=[0.5],
            dataset={"kind": "arima", "count": 4},
            action_box={"u_min": -100.0, "u_max": 100.0},
            attack={"mode": "single-step"},
        )
        stats = run_constraint_experiment(cfg)
        for record in stats.records:
            if record.scenario == "cost-gradient":
                assert "zero-gradient" in record.flags
                assert record.norm_used == 0.0


class TestCalibration:
    def test_bound_scales_with_action_distribution(self):
        cfg = make_config()
        batch = batch_form(cfg.system)
        windows = load_windows(cfg)
        lo, hi = calibrate_action_box(batch, windows)
        assert lo == -hi and hi > 0
        pooled = np.concatenate([
            np.abs(solve_unconstrained(batch, w.values)) for w in windows
        ])
        assert math.isclose(hi, 1.5 * float(np.quantile(pooled, 0.95)),
                            rel_tol=1e-12)


class TestJacobianSelftest:
    def test_default_sweep_passes(self):
        report = jacobian_selftest(seed=123, instances=15)
        assert report["passed"], report
        assert report["max_abs_error"] <= 1e-5
        assert report["instances"] == 15


class TestEmitReport:
    def test_empty_stats_header_only(self, tmp_path):
        stats = ScenarioStats(records=(), aggregates=(), p_values=(),
                              series_dumps=(), config={}, seed=0, n_windows=0)
        paths = emit_report(stats, tmp_path / "out")
        content = open(paths["records"], encoding="utf-8").read()
        assert content.strip() == ("series_id,delta,scenario,j_orig,j_adv,"
                                   "max_u_orig,max_u_adv,l1_orig,l1_adv,"
                                   "norm_used,flags")

    def test_byte_identical_reruns(self, tmp_path):
        cfg = make_config()
        emit_report(run_cost_experiment(cfg), tmp_path / "a")
        emit_report(run_cost_experiment(cfg), tmp_path / "b")
        a = open(tmp_path / "a" / "records.csv", "rb").read()
        b = open(tmp_path / "b" / "records.csv", "rb").read()
        assert a == b
        sa = open(tmp_path / "a" / "summary.json", "rb").read()
        sb = open(tmp_path / "b" / "summary.json", "rb").read()
        assert sa == sb

    def test_summary_round_trips_as_json(self, tmp_path):
        stats = run_cost_experiment(make_config())
        paths = emit_report(stats, tmp_path / "out")
        with open(paths["summary"], encoding="utf-8") as handle:
            summary = json.load(handle)
        assert summary["seed"] == 7
        assert summary["config"]["seed"] == 7
        assert len(summary["aggregates"]) == 4

    def test_series_dumps_written(self, tmp_path):
        cfg = make_config(series_dump_limit=2)
        paths = emit_report(run_cost_experiment(cfg), tmp_path / "out")
        series_files = sorted((tmp_path / "out" / "series").iterdir())
        # 2 windows x 2 deltas x 2 scenarios
        assert len(series_files) == 8
        header = open(series_files[0], encoding="utf-8").readline().strip()
        assert header == "t,original,attacked"
