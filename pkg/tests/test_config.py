import math

import pytest

from mortfrac import config as cfgmod
from mortfrac.config import ConfigError, RunConfig


class TestRoundTrip:
    def test_defaults_survive_toml(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "run.toml"
        cfgmod.save(cfg, path)
        back = cfgmod.load(path)
        assert cfgmod.dumps(back) == cfgmod.dumps(cfg)
        assert math.isnan(back.bond.coupon_rate) and back.quote.premium_spread is None

    def test_values_survive_toml(self):
        cfg = cfgmod.from_dict({"bond": {"attachment": 0.01, "exhaustion": 0.02}, "scenario": "1,3"})
        back = cfgmod.from_dict(cfgmod.to_dict(cfg))
        assert back.bond.attachment == 0.01 and back.scenario_ids() == (1, 3)


class TestOverrides:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("simulation.seed=7", {"simulation": {"seed": 7}}),
            ("bond.index_rule=annual_max", {"bond": {"index_rule": "annual_max"}}),
            ("bond.index_rule='point'", {"bond": {"index_rule": "point"}}),
            ("scenario=2", {"scenario": 2}),
            ("premiums.gamma1 = 1.5", {"premiums": {"gamma1": 1.5}}),
        ],
    )
    def test_parse_assignment(self, text, expected):
        assert cfgmod.parse_assignment(text) == expected

    @pytest.mark.parametrize("text", ["novalue", "a.b.c=1"])
    def test_bad_assignment(self, text):
        with pytest.raises(ConfigError):
            cfgmod.parse_assignment(text)

    def test_layering_keeps_other_values(self):
        base = cfgmod.from_dict({"simulation": {"seed": 5}})
        cfg = cfgmod.from_dict({"simulation": {"n_paths": 300}}, base)
        assert (cfg.simulation.seed, cfg.simulation.n_paths) == (5, 300)

    def test_integer_coercion(self):
        assert cfgmod.from_dict({"simulation": {"seed": 3.0}}).simulation.seed == 3


class TestValidation:
    @pytest.mark.parametrize(
        "data",
        [
            {"nosuch": {}},
            {"model": {"nosuch": 1}},
            {"model": {"h1": "abc"}},
            {"model": {"h1": True}},
            {"simulation": {"seed": 1.5}},
            {"bond": {"disable_prf": 1}},
            {"model": 3},
        ],
    )
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            cfgmod.from_dict(data)

    @pytest.mark.parametrize(
        "data,command",
        [
            ({"bond": {"index_rule": "median"}}, "price-mls"),
            ({"calibration": {"attachment_rule": "mean"}}, "calibrate-q"),
            ({"calibration": {"index_measure": "forward"}}, "calibrate-q"),
            ({"simulation": {"n_paths": 0}}, "simulate"),
            ({"simulation": {"steps_per_year": 12}}, "simulate"),
            ({"scenario": "7"}, "sensitivity"),
            ({"scenario": "one"}, "sensitivity"),
            ({}, "ingest"),
            ({}, "estimate"),
            ({}, "fly"),
        ],
    )
    def test_validate(self, data, command):
        with pytest.raises(ConfigError):
            cfgmod.from_dict(data).validate(command)

    def test_valid_defaults(self):
        RunConfig().validate("price-mls")
        assert RunConfig().scenario_ids() == (1, 2, 3, 4, 5, 6)

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[model\nh1 = 0.7\n")
        with pytest.raises(ConfigError):
            cfgmod.load(path)
