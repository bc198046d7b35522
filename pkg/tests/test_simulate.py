import csv
import io

import numpy as np
import pytest

from safestrata.eprocess import CombinerSpec, TestConfig, global_log_e
from safestrata.simulate import (ROW_HEADER, ConfigError, builtin_configs, coverage, load_config,
                                 mean_width_from_rows, parse_config, parse_switch_prior,
                                 power_from_rows, replicate_stream, run_simulation)

BASE = {
    "strata": {"theta_a": [0.2, 0.5], "theta_b": [0.6, 0.5], "blocks": 8},
    "methods": [{"name": "mult", "kind": "test"},
                {"name": "pb", "kind": "test", "combiner": "pseudo-bayes", "eta": 2.0},
                {"name": "strat", "kind": "cs-stratum", "crosstalk": "odds"},
                {"name": "mean", "kind": "cs-mean", "weights": [0.5, 0.5]}],
    "replications": 4,
    "seed": 10,
    "grid_step": 0.05,
}


def with_changes(**changes):
    data = {**BASE, **changes}
    return parse_config(data)


class TestConfigParsing:
    def test_bundled_configs_parse(self):
        names = builtin_configs()
        for expected in ("fig2", "fig3_left", "fig3_right", "fig4a", "fig4b", "fig4c", "fig5",
                         "fig6", "figS1a", "figS2", "figS3", "figS4", "figS5"):
            assert expected in names
        for name in names:
            cfg = load_config(name)
            assert cfg.methods and cfg.replications > 0

    def test_fig2_matches_setting(self):
        cfg = load_config("fig2")
        assert [t.theta_a for t in cfg.theta] == [0.1, 0.2, 0.8]
        assert np.allclose(cfg.risk_differences, [0.05, 0.4, -0.6])
        assert cfg.horizon == 120 and cfg.alpha == 0.05

    def test_fig4b_truncation(self):
        assert load_config("fig4b").blocks == (10, 40, 40)

    def test_defaults_and_names(self):
        cfg = parse_config({"strata": {"theta_a": [0.1], "theta_b": [0.2], "blocks": 3},
                            "methods": [{}]})
        assert cfg.methods[0].name == "test:multiply:none"
        assert cfg.prior.alpha == 0.18 and cfg.replications == 100

    @pytest.mark.parametrize("change,path", [
        ({"alpha": 1.5}, "alpha"),
        ({"replications": -1}, "replications"),
        ({"strata": {"theta_a": [0.2], "theta_b": [0.3, 0.4], "blocks": 3}}, "strata.theta_b"),
        ({"strata": {"theta_a": [0.2, "x"], "theta_b": [0.3, 0.4], "blocks": 3}},
         "strata.theta_a[1]"),
        ({"strata": {"theta_a": [0.2], "theta_b": [0.3], "blocks": [1, 2]}}, "strata.blocks"),
        ({"strata": {"theta_a": [0.2], "theta_b": [0.3]}}, "strata.blocks"),
        ({"methods": [{"kind": "bogus"}]}, "methods[0].kind"),
        ({"methods": [{"kind": "test", "crosstalk": "psychic"}]}, "methods[0].crosstalk"),
        ({"methods": [{"kind": "test", "switch_prior": "normal:1:2"}]}, "methods[0].switch_prior"),
        ({"methods": [{"kind": "cs-mean", "weights": [0.6, 0.6]}]}, "methods[0].weights"),
        ({"methods": [{"kind": "test", "colour": "red"}]}, "methods[0]"),
        ({"methods": [{"name": "a"}, {"name": "a"}]}, "methods"),
        ({"design": {"n_a": 0}}, "design.n_a"),
        ({"schedule": "zigzag"}, "schedule"),
        ({"extra": 1}, "config"),
    ])
    def test_schema_errors_name_the_field(self, change, path):
        with pytest.raises(ConfigError) as exc:
            with_changes(**change)
        assert str(exc.value).startswith(path)

    def test_toml_errors(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("alpha = = 3")
        with pytest.raises(ConfigError):
            load_config(bad)
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "missing")

    def test_switch_prior(self):
        assert parse_switch_prior("uniform:5:115") == (5, 115)
        with pytest.raises(ValueError):
            parse_switch_prior("uniform:9:3")

    def test_targets(self):
        cfg = with_changes()
        m = {x.name: x for x in cfg.methods}
        assert cfg.target(m["strat"], 0) == pytest.approx(0.4)
        assert cfg.target(m["mean"]) == pytest.approx(0.2)
        with pytest.raises(ValueError):
            cfg.target(m["mult"])


class TestRun:
    def test_zero_replications(self):
        res = run_simulation(with_changes(replications=0), workers=1)
        assert res.rows == []
        assert res.long_table() == ",".join(ROW_HEADER) + "\n"
        assert res.power() == {"mult": 0.0, "pb": 0.0}

    def test_deterministic(self):
        cfg = with_changes()
        a = run_simulation(cfg, workers=1)
        b = run_simulation(cfg, workers=1)
        assert a.long_table() == b.long_table()
        assert a.summary_table() == b.summary_table()

    def test_workers_do_not_change_output(self):
        cfg = with_changes()
        assert run_simulation(cfg, workers=1).long_table() == run_simulation(cfg, workers=2).long_table()

    def test_seed_changes_output(self):
        cfg = with_changes()
        assert run_simulation(cfg, workers=1).long_table() != \
            run_simulation(cfg, workers=1, seed=99).long_table()

    def test_replicate_streams(self):
        cfg = with_changes()
        s = replicate_stream(cfg, 3)
        assert s.seed == 13 and len(s) == 16

    def test_test_rows_stop_at_rejection(self):
        cfg = with_changes(strata={"theta_a": [0.02], "theta_b": [0.98], "blocks": 30},
                           methods=[{"name": "mult"}], replications=3)
        res = run_simulation(cfg, workers=1)
        for r in range(3):
            rows = [row for row in res.rows if row[1] == r]
            log_e = global_log_e(replicate_stream(cfg, r), TestConfig(CombinerSpec()))
            assert len(rows) <= len(log_e)
            assert [row[-1] for row in rows[:-1]] == [0] * (len(rows) - 1)
            if rows[-1][-1]:
                assert 10 ** float(rows[-1][3]) >= 20 * (1 - 1e-5)

    def test_aggregates_recompute_from_long_table(self):
        cfg = with_changes()
        res = run_simulation(cfg, workers=1)
        parsed = list(csv.reader(io.StringIO(res.long_table())))[1:]
        assert power_from_rows(parsed, cfg) == res.power()
        assert mean_width_from_rows(parsed) == res.mean_width()

    def test_summary_layout(self):
        res = run_simulation(with_changes(), workers=1)
        text = res.summary_table()
        head, tail = text.split("\n\n")
        assert head.splitlines()[0] == "method,power"
        assert tail.splitlines()[0] == "method,m,mean_width"
        labels = {line.split(",")[0] for line in tail.splitlines()[1:]}
        assert labels == {"strat:stratum1", "strat:stratum2", "mean"}

    def test_coverage(self):
        res = run_simulation(with_changes(), workers=1)
        for label in ("strat:stratum1", "strat:stratum2", "mean"):
            assert 0.0 <= coverage(res, label) <= 1.0
        assert coverage(res, "mean") == 1.0

    def test_cs_rejected_flag(self):
        res = run_simulation(with_changes(), workers=1)
        for name, rep, m, log10_e, lower, upper, rejected in res.rows:
            if lower != "" and lower != "nan":
                assert rejected == int(not (float(lower) - 1e-12 <= 0 <= float(upper) + 1e-12))

    def test_bound_rows(self):
        cfg = with_changes(methods=[{"name": "up", "kind": "cs-min-upper", "combiner": "mixture"},
                                    {"name": "lo", "kind": "cs-min-lower"}])
        res = run_simulation(cfg, workers=1)
        for name, rep, m, log10_e, lower, upper, rejected in res.rows:
            if name == "up":
                assert lower == "-1.000000"
            else:
                assert upper == "1.000000"
