"""
Tests for run configuration parsing and command-line overrides.
"""

import json

import pytest

from app.services.hyperplane_measure import DiscreteAtoms, Isotropic
from app.services.run_config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    load_run_config,
    parse_run_config,
    parse_window,
)


class TestParse:
    def test_defaults(self):
        cfg = parse_run_config({})
        assert cfg.dim == 2
        assert cfg.window.volume == pytest.approx(900.0)
        assert cfg.kernel.kind == "stit"
        assert isinstance(cfg.measure.R, Isotropic)
        assert cfg.replications is None

    def test_full_record(self):
        cfg = parse_run_config({
            "schema": 1,
            "dim": 3,
            "window": {"type": "cube", "side": 2},
            "horizon": 1.5,
            "kernel": {"kernel": "erosion", "r": 0.1, "mode": "ramp", "eps": 0.05},
            "measure": {"rho": 2.0, "directions": {"type": "atoms",
                                                   "atoms": [[1, 0, 0, 1], [0, 1, 0, 1], [0, 0, 1, 1]]}},
            "replications": 4,
            "seed": 2 ** 63,
            "outputs": {"out": "run.jsonl"},
        }, default_sampler="importance")
        assert cfg.window.volume == pytest.approx(8.0)
        assert cfg.kernel.mode == "ramp"
        assert isinstance(cfg.measure.R, DiscreteAtoms)
        assert cfg.measure.sampler == "importance"
        assert cfg.outputs.out == "run.jsonl"

    def test_zero_horizon_allowed(self):
        assert parse_run_config({"horizon": 0}).horizon == 0.0

    @pytest.mark.parametrize("data, where", [
        ({"dim": 4}, "dim"),
        ({"horizon": -1}, "horizon"),
        ({"seed": -3}, "seed"),
        ({"seed": 2 ** 64}, "seed"),
        ({"replications": 0}, "replications"),
        ({"schema": 2}, "schema"),
        ({"colour": "red"}, "colour"),
        ({"method": "exact"}, "method"),
        ({"kernel": {"kernel": "voronoi"}}, "kernel"),
        ({"measure": {"rho": -1}}, "measure"),
        ({"outputs": {"pdf": "x.pdf"}}, "outputs.pdf"),
        ({"window": {"type": "sphere"}}, "window.type"),
    ])
    def test_errors_name_the_field(self, data, where):
        with pytest.raises(ConfigError) as info:
            parse_run_config(data)
        assert info.value.where == where

    def test_box_window(self):
        body = parse_window({"type": "box", "lower": [0, 0], "upper": [2, 3]}, 2)
        assert body.volume == pytest.approx(6.0)

    def test_inverted_box(self):
        with pytest.raises(ConfigError):
            parse_window({"type": "box", "lower": [1, 0], "upper": [0, 3]}, 2)

    def test_hull_window(self):
        body = parse_window({"type": "hull", "points": [[0, 0], [1, 0], [0, 1], [0.2, 0.2]]}, 2)
        assert body.volume == pytest.approx(0.5)
        assert body.vertex_count == 3


class TestLoad:
    def test_reports_line_and_column(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{\n  "dim": 2,\n  "horizon": ,\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert info.value.where.startswith("3:")
        assert str(path) in str(info.value)

    def test_field_errors_carry_the_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"horizon": -2}), encoding="utf-8")
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert str(info.value) == f"{path}:horizon: horizon must be nonnegative"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")

    def test_round_trip_through_json(self, tmp_path):
        cfg = RunConfig(dim=3, horizon=2.0, seed=11)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg.to_json()), encoding="utf-8")
        back = load_run_config(path)
        assert back.dim == 3
        assert back.horizon == 2.0
        assert back.seed == 11
        assert back.window.volume == pytest.approx(cfg.window.volume)


class TestOverrides:
    def test_none_means_not_given(self):
        cfg = RunConfig(seed=5, horizon=2.0)
        assert apply_overrides(cfg, seed=None, horizon=None).seed == 5

    def test_flags_replace_values(self):
        cfg = apply_overrides(RunConfig(), seed=9, replications=3, out="a.jsonl", svg="a.svg")
        assert (cfg.seed, cfg.replications) == (9, 3)
        assert (cfg.outputs.out, cfg.outputs.svg, cfg.outputs.csv) == ("a.jsonl", "a.svg", None)

    def test_dimension_change_resets_window(self):
        cfg = apply_overrides(RunConfig(dim=2), dim=3)
        assert cfg.window.dim == 3
        assert cfg.measure.dim == 3

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), replications=0)
